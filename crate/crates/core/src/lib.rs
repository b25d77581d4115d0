//! Test-time local conversion of global aggregation operators.
//!
//! Global average pooling, instance/group normalization and channel
//! attention all summarize a feature map over its full spatial extent.
//! When a network is trained on patches and evaluated on full images, those
//! summaries come from a different distribution at test time. This crate
//! replaces each global summary with the same summary over a fixed window
//! around every pixel, computed in `O(HW)` with summed-area tables, and
//! provides the analysis tools that measure the distribution gap.
//!
//! Modules:
//! - [`tensor`]: feature maps, the `TLCT` file format, PSNR.
//! - [`integral`]: global and windowed mean/variance/max kernels.
//! - [`modules`]: SE, IN/GN, GE-theta-minus and CBAM channel attention in
//!   global and local form.
//! - [`fusion`]: overlapping tiles, average fusion, windowed transposed
//!   attention and the seam metric.
//! - [`analysis`]: pooled-statistic sampling, KS distance, histograms and
//!   window calibration.

pub mod analysis;
pub mod error;
pub mod fusion;
pub mod integral;
pub mod macs;
pub mod manifest;
pub mod modules;
pub mod reference;
pub mod restore;
pub mod rng;
pub mod tensor;

pub use error::{Result, TlcError};
pub use integral::PointwiseMap;
pub use modules::{Mode, ModuleKind};
pub use tensor::{FeatureMap, Plane, PlaneView, WindowSpec};
