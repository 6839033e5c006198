//! Multispectral (RGB + near-infrared) dense optical flow toolkit.
//!
//! The crate is organized around three pillars:
//!
//! * a variational flow solver ([`solver`]) that fuses the visible and NIR
//!   channels through a per-pixel detail-aware weight ([`weight`]), minimized
//!   coarse-to-fine over an image pyramid ([`pyramid`]) with successive
//!   over-relaxation;
//! * a ground-truth construction pipeline ([`gt`]) that turns NIR image pairs
//!   into dense flow fields via per-pixel descriptor matching,
//!   forward-backward occlusion labeling, Lucas-Kanade subpixel refinement
//!   and block-average downsampling;
//! * an evaluation suite ([`metrics`], [`report`]) computing endpoint/angle
//!   error statistics and emitting machine-readable reports and rasters.
//!
//! [`raster`] and [`flow`] provide the shared image/flow containers and
//! bit-exact file I/O; [`synth`] generates seeded synthetic RGB-NIR pairs
//! with exact ground truth for testing and benchmarking.

pub mod entropy;
pub mod flow;
pub mod gt;
pub mod metrics;
pub mod pnm;
pub mod pyramid;
pub mod raster;
pub mod report;
pub mod solver;
pub mod synth;
pub mod weight;

pub use flow::{FlowField, UNKNOWN_FLOW, VALID_LIMIT};
pub use raster::{GradientField, MultispectralImage, Raster};
pub use solver::{ChannelMode, SolverParams};
pub use weight::WeightMap;
