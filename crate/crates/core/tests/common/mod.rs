//! Independent oracles shared by the integration tests.
//!
//! Everything here recomputes windows pixel by pixel from the raw data and
//! shares no code with the summed-area path.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tlc::fusion::TilePlan;
use tlc::modules::SeParams;
use tlc::{FeatureMap, Plane};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_plane(r: &mut ChaCha8Rng, h: usize, w: usize) -> Plane {
    Plane::from_fn(h, w, |_, _| r.random_range(-4.0..4.0))
}

pub fn random_map(r: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::from_fn(c, h, w, |_, _, _| r.random_range(-2.0..2.0)).unwrap()
}

pub fn random_se(r: &mut ChaCha8Rng, c: usize, ratio: usize) -> SeParams {
    let hidden = c / ratio;
    let reduce = (0..c * hidden).map(|_| r.random_range(-1.0..1.0)).collect();
    let expand = (0..c * hidden).map(|_| r.random_range(-1.0..1.0)).collect();
    SeParams::new(c, ratio, reduce, expand).unwrap()
}

/// Values of the window whose result lands on `(i, j)`.
pub fn window_values(x: &Plane, kh: usize, kw: usize, i: usize, j: usize) -> Vec<f64> {
    let (h, w) = (x.height, x.width);
    let (kh, kw) = (kh.min(h), kw.min(w));
    let top = (i as isize - ((kh - 1) / 2) as isize).clamp(0, (h - kh) as isize) as usize;
    let left = (j as isize - ((kw - 1) / 2) as isize).clamp(0, (w - kw) as isize) as usize;
    let mut v = Vec::with_capacity(kh * kw);
    for p in top..top + kh {
        for q in left..left + kw {
            v.push(x.data[p * w + q]);
        }
    }
    v
}

pub fn brute(x: &Plane, kh: usize, kw: usize, reduce: impl Fn(&[f64]) -> f64) -> Plane {
    Plane::from_fn(x.height, x.width, |i, j| reduce(&window_values(x, kh, kw, i, j)))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn mean_sq(v: &[f64]) -> f64 {
    v.iter().map(|t| t * t).sum::<f64>() / v.len() as f64
}

pub fn two_pass_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / v.len() as f64
}

pub fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Coverage by direct enumeration of each placement's pixels.
pub fn enumerate_coverage(plan: &TilePlan) -> Vec<u32> {
    let mut counts = vec![0u32; plan.height * plan.width];
    for &(r, c) in &plan.placements {
        for i in 0..plan.window.0 {
            for j in 0..plan.window.1 {
                counts[(r + i) * plan.width + c + j] += 1;
            }
        }
    }
    counts
}
