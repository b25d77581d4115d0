//! Wiener-style denoising with global versus windowed statistics.
//!
//! The observation is `y = s + n` where the noise level varies across the
//! image. A calibration frame `d` carries noise only, with the same level
//! map. Both restorers apply
//!
//! ```text
//! x = mu + g * (y - mu),  g = s2 / (s2 + n2),  s2 = max(var_y - n2, 0)
//! ```
//!
//! and differ only in where `mu`, `var_y` and `n2 = E[d^2]` come from: the
//! whole image, or the window around each pixel. Under uniform noise the
//! two agree; when noise differs between regions only the windowed form
//! adapts its gain.
//!
//! The clean signal has two halves: horizontal stripes on the left and
//! diagonal stripes on the right, both with period 8 and identical mean and
//! variance, so any window of whole periods sees the same signal statistics
//! everywhere.

use std::f64::consts::TAU;

use crate::error::{Result, TlcError};
use crate::integral::{global_aggregate, local_aggregate, local_mean_var, PointwiseMap};
use crate::rng;
use crate::tensor::{psnr, FeatureMap, Plane, WindowSpec};

pub const STRIPE_PERIOD: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseProfile {
    Zero,
    Uniform(f64),
    /// Standard deviation for columns left and right of the midline.
    TwoRegion { left: f64, right: f64 },
}

impl NoiseProfile {
    pub fn sigma_at(&self, j: usize, width: usize) -> f64 {
        match *self {
            NoiseProfile::Zero => 0.0,
            NoiseProfile::Uniform(s) => s,
            NoiseProfile::TwoRegion { left, right } => {
                if j < width / 2 {
                    left
                } else {
                    right
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoConfig {
    pub height: usize,
    pub width: usize,
    pub window: WindowSpec,
    pub noise: NoiseProfile,
    /// Stripe amplitude around the 0.5 baseline.
    pub amplitude: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            window: WindowSpec { k_h: 32, k_w: 32, ..WindowSpec::default() },
            noise: NoiseProfile::TwoRegion { left: 0.05, right: 0.5 },
            amplitude: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoScene {
    pub clean: Plane,
    pub noisy: Plane,
    pub noise_reference: Plane,
}

pub fn clean_signal(h: usize, w: usize, amplitude: f64) -> Plane {
    let p = STRIPE_PERIOD as f64;
    Plane::from_fn(h, w, |i, j| {
        let phase = if j < w / 2 { i as f64 } else { (i + j) as f64 };
        0.5 + amplitude * (TAU * phase / p).sin()
    })
}

/// Clean signal, noisy observation and noise-only frame. The observation
/// noise is drawn first (row-major), then the reference frame.
pub fn demo_scene(cfg: &DemoConfig, seed: u64) -> DemoScene {
    let (h, w) = (cfg.height, cfg.width);
    let clean = clean_signal(h, w, cfg.amplitude);
    let mut rng = rng::seeded(seed);
    let noisy = Plane::from_fn(h, w, |i, j| {
        clean.get(i, j) + cfg.noise.sigma_at(j, w) * rng::standard_normal(&mut rng)
    });
    let noise_reference = Plane::from_fn(h, w, |_, j| cfg.noise.sigma_at(j, w) * rng::standard_normal(&mut rng));
    DemoScene {
        clean,
        noisy,
        noise_reference,
    }
}

#[inline]
fn wiener_pixel(y: f64, mean: f64, var: f64, noise: f64) -> f64 {
    let signal = (var - noise).max(0.0);
    let total = signal + noise;
    let gain = if total > 0.0 { signal / total } else { 1.0 };
    mean + gain * (y - mean)
}

pub fn wiener_global(noisy: &Plane, noise_reference: &Plane) -> Plane {
    let mean = global_aggregate(noisy.view(), PointwiseMap::Identity);
    let var = (global_aggregate(noisy.view(), PointwiseMap::Square) - mean * mean).max(0.0);
    let noise = global_aggregate(noise_reference.view(), PointwiseMap::Square);
    let data = noisy.data.iter().map(|&y| wiener_pixel(y, mean, var, noise)).collect();
    Plane {
        height: noisy.height,
        width: noisy.width,
        data,
    }
}

pub fn wiener_local(noisy: &Plane, noise_reference: &Plane, window: &WindowSpec) -> Plane {
    let (mean, var) = local_mean_var(noisy.view(), window);
    let noise = local_aggregate(noise_reference.view(), PointwiseMap::Square, window);
    let data = noisy
        .data
        .iter()
        .zip(&mean.data)
        .zip(&var.data)
        .zip(&noise.data)
        .map(|(((&y, &m), &v), &n)| wiener_pixel(y, m, v, n))
        .collect();
    Plane {
        height: noisy.height,
        width: noisy.width,
        data,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOutcome {
    pub scene: DemoScene,
    pub restored_global: Plane,
    pub restored_local: Plane,
    pub psnr_noisy: f64,
    pub psnr_global: f64,
    pub psnr_local: f64,
}

impl DemoOutcome {
    /// `psnr_local - psnr_global`; zero when both are infinite.
    pub fn gain_db(&self) -> f64 {
        if self.psnr_local == self.psnr_global {
            0.0
        } else {
            self.psnr_local - self.psnr_global
        }
    }
}

fn plane_psnr(clean: &Plane, other: &Plane) -> Result<f64> {
    let a = FeatureMap::from_planes(vec![clean.clone()])?;
    let b = FeatureMap::from_planes(vec![other.clone()])?;
    Ok(psnr(&a, &b, 1.0)?.psnr_db)
}

/// Builds the scene, restores it both ways and scores against the clean
/// signal with peak 1.
pub fn run_demo(cfg: &DemoConfig, seed: u64) -> Result<DemoOutcome> {
    if cfg.height == 0 || cfg.width == 0 {
        return Err(TlcError::InvalidArgument("demo image must be non-empty".into()));
    }
    let scene = demo_scene(cfg, seed);
    let restored_global = wiener_global(&scene.noisy, &scene.noise_reference);
    let restored_local = wiener_local(&scene.noisy, &scene.noise_reference, &cfg.window);
    Ok(DemoOutcome {
        psnr_noisy: plane_psnr(&scene.clean, &scene.noisy)?,
        psnr_global: plane_psnr(&scene.clean, &restored_global)?,
        psnr_local: plane_psnr(&scene.clean, &restored_local)?,
        scene,
        restored_global,
        restored_local,
    })
}
