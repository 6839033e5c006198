//! Binary portable graymap/pixmap (P5/P6) I/O.
//!
//! Loading normalizes intensities to `[0, 1]` as `value / maxval`; maxval
//! 255 and 65535 are supported, 16-bit samples are big-endian per the PNM
//! convention.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::raster::Raster;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported magic {0:?}: only binary P5/P6 are accepted")]
    UnsupportedMagic(String),
    #[error("malformed header: {0}")]
    MalformedHeader(&'static str),
    #[error("unsupported maxval {0}: only 255 and 65535 are accepted")]
    UnsupportedMaxval(u32),
    #[error("truncated pixel data: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
}

struct HeaderReader<R: Read> {
    inner: R,
}

impl<R: Read> HeaderReader<R> {
    fn new(inner: R) -> Self {
        Self { inner }
    }

    fn next_byte(&mut self) -> Result<u8, PnmError> {
        let mut buf = [0u8; 1];
        self.inner.read_exact(&mut buf)?;
        Ok(buf[0])
    }

    /// Next whitespace/comment-delimited header token.
    fn token(&mut self) -> Result<String, PnmError> {
        let mut b = self.next_byte()?;
        loop {
            if b == b'#' {
                while b != b'\n' {
                    b = self.next_byte()?;
                }
            }
            if b.is_ascii_whitespace() {
                b = self.next_byte()?;
            } else if b == b'#' {
                continue;
            } else {
                break;
            }
        }
        let mut tok = Vec::new();
        while !b.is_ascii_whitespace() {
            tok.push(b);
            match self.next_byte() {
                Ok(nb) => b = nb,
                Err(PnmError::Io(_)) => break,
                Err(e) => return Err(e),
            }
        }
        String::from_utf8(tok).map_err(|_| PnmError::MalformedHeader("non-ascii token"))
    }

    fn number(&mut self) -> Result<u32, PnmError> {
        self.token()?
            .parse()
            .map_err(|_| PnmError::MalformedHeader("expected integer"))
    }
}

/// Load a P5 (gray, 1 channel) or P6 (color, 3 channels) raster.
pub fn load_pnm(path: &Path) -> Result<Raster, PnmError> {
    let mut r = HeaderReader::new(BufReader::new(File::open(path)?));
    let magic = r.token()?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(PnmError::UnsupportedMagic(magic)),
    };
    let width = r.number()? as usize;
    let height = r.number()? as usize;
    let maxval = r.number()?;
    if width == 0 || height == 0 {
        return Err(PnmError::MalformedHeader("zero dimension"));
    }
    let bytes_per_sample = match maxval {
        255 => 1,
        65535 => 2,
        other => return Err(PnmError::UnsupportedMaxval(other)),
    };
    // The single whitespace after maxval was consumed by the tokenizer.
    let n_samples = width * height * channels;
    let expected = n_samples * bytes_per_sample;
    let mut payload = Vec::with_capacity(expected);
    r.inner.read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(PnmError::Truncated {
            expected,
            got: payload.len(),
        });
    }
    let scale = 1.0 / maxval as f64;
    let mut data = Vec::with_capacity(n_samples);
    if bytes_per_sample == 1 {
        data.extend(payload[..n_samples].iter().map(|&b| b as f64 * scale));
    } else {
        for i in 0..n_samples {
            let v = u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]]);
            data.push(v as f64 * scale);
        }
    }
    Ok(Raster::from_vec(width, height, channels, data)
        .expect("dimensions validated against payload"))
}

/// Save a 1-channel raster as 8-bit P5 or a 3-channel raster as 8-bit P6,
/// rounding `value * 255` to nearest with clamping.
pub fn save_pnm8(raster: &Raster, path: &Path) -> Result<(), PnmError> {
    let magic = match raster.channels() {
        1 => "P5",
        3 => "P6",
        _ => return Err(PnmError::MalformedHeader("only 1 or 3 channels writable")),
    };
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "{magic}\n{} {}\n255\n", raster.width(), raster.height())?;
    let bytes: Vec<u8> = raster
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("msflow-pnm-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn normalization_endpoints() {
        let p = tmp("endpoints.pgm");
        std::fs::write(&p, b"P5\n2 1\n255\n\x00\xff").unwrap();
        let r = load_pnm(&p).unwrap();
        assert_eq!(r.get(0, 0, 0), 0.0);
        assert_eq!(r.get(1, 0, 0), 1.0);
    }

    #[test]
    fn sixteen_bit_normalization() {
        // 32768 / 65535 = 0.50000762...
        let p = tmp("deep.pgm");
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&32768u16.to_be_bytes());
        std::fs::write(&p, bytes).unwrap();
        let r = load_pnm(&p).unwrap();
        assert!((r.get(0, 0, 0) - 32768.0 / 65535.0).abs() < 1e-15);
    }

    #[test]
    fn comments_in_header() {
        let p = tmp("comments.pgm");
        std::fs::write(&p, b"P5 # a comment\n# another\n2 # w\n1\n255\n\x10\x20").unwrap();
        let r = load_pnm(&p).unwrap();
        assert_eq!(r.width(), 2);
        assert!((r.get(0, 0, 0) - 16.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn color_roundtrip_8bit() {
        let mut r = Raster::new(3, 2, 3).unwrap();
        for (i, v) in r.data_mut().iter_mut().enumerate() {
            *v = (i % 256) as f64 / 255.0;
        }
        let p = tmp("color.ppm");
        save_pnm8(&r, &p).unwrap();
        let back = load_pnm(&p).unwrap();
        assert_eq!(back.channels(), 3);
        for (a, b) in r.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_ascii_and_odd_maxval() {
        let p = tmp("ascii.pgm");
        std::fs::write(&p, b"P2\n1 1\n255\n0\n").unwrap();
        assert!(matches!(load_pnm(&p), Err(PnmError::UnsupportedMagic(_))));
        let p = tmp("maxval.pgm");
        std::fs::write(&p, b"P5\n1 1\n1023\n\x00\x00").unwrap();
        assert!(matches!(load_pnm(&p), Err(PnmError::UnsupportedMaxval(1023))));
    }

    #[test]
    fn truncated_payload() {
        let p = tmp("short.pgm");
        std::fs::write(&p, b"P5\n4 4\n255\n\x00\x01").unwrap();
        assert!(matches!(load_pnm(&p), Err(PnmError::Truncated { .. })));
    }
}
