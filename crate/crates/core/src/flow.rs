//! Dense flow fields and the binary interchange format.
//!
//! File layout: 4-byte magic `PIEH`, width and height as 32-bit
//! little-endian integers, then row-major interleaved (u, v) 32-bit
//! little-endian floats. Unknown/occluded pixels are stored as `1e10`; any
//! component with magnitude above `1e9` is treated as invalid on read.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

/// Sentinel written for unknown/occluded flow components.
pub const UNKNOWN_FLOW: f32 = 1e10;

/// Components with magnitude above this are invalid.
pub const VALID_LIMIT: f32 = 1e9;

const MAGIC: &[u8; 4] = b"PIEH";

#[derive(Debug, Error)]
pub enum FlowIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes {0:?}, expected \"PIEH\"")]
    BadMagic([u8; 4]),
    #[error("non-positive dimensions {0}x{1}")]
    BadDimensions(i32, i32),
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("non-finite component {value} at pixel ({x},{y}) is not the unknown sentinel")]
    NonFiniteComponent { x: usize, y: usize, value: f32 },
}

/// Per-pixel displacement (u, v) in pixels of the source grid.
///
/// Components are stored at the interchange format's `f32` precision; a
/// pixel is valid iff both |u| and |v| are below [`VALID_LIMIT`], so
/// validity is a pure function of the stored values.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    /// All-zero (valid) field.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    /// Field with every pixel set to the unknown sentinel.
    pub fn unknown(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![UNKNOWN_FLOW; width * height],
            v: vec![UNKNOWN_FLOW; width * height],
        }
    }

    pub fn from_components(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Self {
        assert_eq!(u.len(), width * height);
        assert_eq!(v.len(), width * height);
        Self {
            width,
            height,
            u,
            v,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn u(&self, x: usize, y: usize) -> f32 {
        self.u[y * self.width + x]
    }

    #[inline]
    pub fn v(&self, x: usize, y: usize) -> f32 {
        self.v[y * self.width + x]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, u: f32, v: f32) {
        let i = y * self.width + x;
        self.u[i] = u;
        self.v[i] = v;
    }

    #[inline]
    pub fn set_unknown(&mut self, x: usize, y: usize) {
        self.set(x, y, UNKNOWN_FLOW, UNKNOWN_FLOW);
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        let (u, v) = self.get(x, y);
        u.abs() < VALID_LIMIT && v.abs() < VALID_LIMIT
    }

    pub fn valid_count(&self) -> usize {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.is_valid(x, y))
            .count()
    }

    pub fn u_plane(&self) -> &[f32] {
        &self.u
    }

    pub fn v_plane(&self) -> &[f32] {
        &self.v
    }
}

pub fn write_flow(field: &FlowField, path: &Path) -> Result<(), FlowIoError> {
    for y in 0..field.height {
        for x in 0..field.width {
            let (u, v) = field.get(x, y);
            for value in [u, v] {
                if !value.is_finite() {
                    return Err(FlowIoError::NonFiniteComponent { x, y, value });
                }
            }
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(field.width as i32).to_le_bytes())?;
    w.write_all(&(field.height as i32).to_le_bytes())?;
    for y in 0..field.height {
        for x in 0..field.width {
            let (u, v) = field.get(x, y);
            w.write_all(&u.to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_flow(path: &Path) -> Result<FlowField, FlowIoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FlowIoError::BadMagic(magic));
    }
    let mut dim = [0u8; 4];
    r.read_exact(&mut dim)?;
    let width = i32::from_le_bytes(dim);
    r.read_exact(&mut dim)?;
    let height = i32::from_le_bytes(dim);
    if width <= 0 || height <= 0 {
        return Err(FlowIoError::BadDimensions(width, height));
    }
    let (width, height) = (width as usize, height as usize);
    let expected = width * height * 8;
    let mut payload = Vec::with_capacity(expected);
    r.read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(FlowIoError::Truncated {
            expected,
            got: payload.len(),
        });
    }
    let mut field = FlowField::new(width, height);
    for i in 0..width * height {
        let u = f32::from_le_bytes(payload[i * 8..i * 8 + 4].try_into().unwrap());
        let v = f32::from_le_bytes(payload[i * 8 + 4..i * 8 + 8].try_into().unwrap());
        field.u[i] = u;
        field.v[i] = v;
    }
    Ok(field)
}
