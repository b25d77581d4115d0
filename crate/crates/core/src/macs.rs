//! Multiply-accumulate counts for the convertible modules.
//!
//! Counting rules: a multiply-add, a lone add and a lone multiply each
//! count as one MAC. Comparisons (max pooling) and elementwise
//! nonlinearities (sigmoid, ReLU, rsqrt) count as zero, the usual
//! convention of layer-level MAC counters.
//!
//! Overhead is reported against the module sitting inside a backbone.
//! The default backbone budget is a 62.13 GMAC restoration network that
//! hosts these modules at 512x512, scaled linearly with pixel count.

use crate::modules::{ModuleKind, Mode};

/// Backbone MACs at 512x512.
pub const REFERENCE_HOST_MACS_512: f64 = 62.13e9;

pub fn reference_host_macs(h: usize, w: usize) -> f64 {
    REFERENCE_HOST_MACS_512 * (h * w) as f64 / (512.0 * 512.0)
}

/// Shape and hyper-parameters of one module instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModuleShape {
    pub kind: ModuleKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Bottleneck width of the SE/CBAM MLP; ignored otherwise.
    pub hidden: usize,
    /// Normalization groups; ignored for attention modules.
    pub groups: usize,
}

fn interior(shape: &ModuleShape, mode: Mode) -> u64 {
    match mode {
        Mode::Global => 1,
        Mode::Local(w) => {
            let (kh, kw) = w.effective(shape.height, shape.width);
            ((shape.height - kh + 1) * (shape.width - kw + 1)) as u64
        }
    }
}

/// Cost of mean pooling one channel.
fn mean_pool(shape: &ModuleShape, mode: Mode) -> u64 {
    let hw = (shape.height * shape.width) as u64;
    match mode {
        Mode::Global => hw,
        // running row sum + add of the row above, then 3 adds and 1 scale per window
        Mode::Local(_) => 2 * hw + 4 * interior(shape, mode),
    }
}

/// MACs of one forward pass.
pub fn module_macs(shape: &ModuleShape, mode: Mode) -> u64 {
    let c = shape.channels as u64;
    let hw = (shape.height * shape.width) as u64;
    let locations = match mode {
        Mode::Global => 1,
        Mode::Local(_) => hw,
    };
    let mlp = 2 * c * shape.hidden as u64;
    let gate = c * hw;
    match shape.kind {
        ModuleKind::Se => c * mean_pool(shape, mode) + locations * mlp + gate,
        ModuleKind::GeThetaMinus => c * mean_pool(shape, mode) + gate,
        ModuleKind::CbamChannel => {
            // max pooling is comparisons only; the MLP runs on both statistics
            c * mean_pool(shape, mode) + locations * (2 * mlp + c) + gate
        }
        ModuleKind::In | ModuleKind::Gn => {
            let groups = shape.groups.max(1) as u64;
            let affine = 2 * c * hw;
            match mode {
                // sum of x and of x^2 (one multiply-add each), then one
                // variance per group
                Mode::Global => 2 * c * hw + 2 * groups + affine,
                Mode::Local(_) => {
                    let table = (shape.height as u64 + 1) * (shape.width as u64 + 1);
                    let group_size = c / groups;
                    // identity and square tables per channel (the square costs
                    // one multiply per pixel), merged within each group
                    let tables = c * (2 * hw + 3 * hw) + groups * (group_size - 1) * 2 * table;
                    let windows = groups * 2 * 4 * interior(shape, mode);
                    let variance = groups * hw;
                    tables + windows + variance + affine
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacReport {
    pub global: u64,
    pub local: u64,
    pub host: f64,
}

impl MacReport {
    pub fn new(shape: &ModuleShape, local: Mode, host: f64) -> Self {
        Self {
            global: module_macs(shape, Mode::Global),
            local: module_macs(shape, local),
            host,
        }
    }

    /// Extra MACs of the windowed module.
    pub fn extra(&self) -> i64 {
        self.local as i64 - self.global as i64
    }

    /// Extra MACs relative to backbone plus global module.
    pub fn overhead_fraction(&self) -> f64 {
        self.extra() as f64 / (self.host + self.global as f64)
    }
}
