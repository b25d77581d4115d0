//! Overlapping-window slicing and average fusion.
//!
//! Used two ways: windowed transposed attention (each window attends only
//! within itself, overlaps are averaged) and the patch-inference baseline,
//! where a whole pipeline runs per tile. [`seam_metric`] scores the
//! discontinuities that tiling leaves at tile borders.

use rayon::prelude::*;

use crate::error::{Result, TlcError};
use crate::tensor::FeatureMap;

/// Window placements covering an `H x W` map.
///
/// Placements start at multiples of the stride; a final placement flush
/// with the far edge is added when the strided ones stop short of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub height: usize,
    pub width: usize,
    pub window: (usize, usize),
    pub stride: (usize, usize),
    /// Top-left corners, unique and sorted row-major.
    pub placements: Vec<(usize, usize)>,
}

fn axis_positions(n: usize, k: usize, s: usize) -> Vec<usize> {
    let mut pos: Vec<usize> = (0..).map(|i| i * s).take_while(|&p| p + k <= n).collect();
    if *pos.last().expect("k <= n") + k < n {
        pos.push(n - k);
    }
    pos
}

/// Plans tiles of `window` at `stride`; the window is clamped to the map
/// and the stride to the clamped window.
pub fn plan_tiles(h: usize, w: usize, window: (usize, usize), stride: (usize, usize)) -> Result<TilePlan> {
    if h == 0 || w == 0 {
        return Err(TlcError::InvalidArgument(format!("map must be non-empty, got {h}x{w}")));
    }
    if window.0 == 0 || window.1 == 0 || stride.0 == 0 || stride.1 == 0 {
        return Err(TlcError::InvalidArgument(format!(
            "window {window:?} and stride {stride:?} must be positive"
        )));
    }
    if stride.0 > window.0 || stride.1 > window.1 {
        return Err(TlcError::InvalidArgument(format!(
            "stride {stride:?} exceeds window {window:?}; tiles would leave gaps"
        )));
    }
    let kh = window.0.min(h);
    let kw = window.1.min(w);
    let sh = stride.0.min(kh);
    let sw = stride.1.min(kw);
    let rows = axis_positions(h, kh, sh);
    let cols = axis_positions(w, kw, sw);
    let placements = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    Ok(TilePlan {
        height: h,
        width: w,
        window: (kh, kw),
        stride: (sh, sw),
        placements,
    })
}

/// Half-window stride, the default for windowed attention.
pub fn default_stride(window: (usize, usize)) -> (usize, usize) {
    ((window.0 / 2).max(1), (window.1 / 2).max(1))
}

impl TilePlan {
    /// Number of placements covering each pixel, row-major.
    pub fn coverage(&self) -> Vec<u32> {
        let (kh, kw) = self.window;
        let mut counts = vec![0u32; self.height * self.width];
        for &(r, c) in &self.placements {
            for i in r..r + kh {
                for v in &mut counts[i * self.width + c..i * self.width + c + kw] {
                    *v += 1;
                }
            }
        }
        counts
    }

    /// Rows `b` such that some tile starts or ends between rows `b - 1` and `b`.
    pub fn row_boundaries(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self
            .placements
            .iter()
            .flat_map(|&(r, _)| [r, r + self.window.0])
            .filter(|&b| b > 0 && b < self.height)
            .collect();
        b.sort_unstable();
        b.dedup();
        b
    }

    pub fn col_boundaries(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self
            .placements
            .iter()
            .flat_map(|&(_, c)| [c, c + self.window.1])
            .filter(|&b| b > 0 && b < self.width)
            .collect();
        b.sort_unstable();
        b.dedup();
        b
    }
}

/// Accumulates per-window results into per-pixel sums and counts.
///
/// Windows may be added in any order; the result only changes by the
/// rounding of the per-pixel sums.
pub struct Fuser<'p> {
    plan: &'p TilePlan,
    channels: usize,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl<'p> Fuser<'p> {
    pub fn new(plan: &'p TilePlan, channels: usize) -> Self {
        Self {
            plan,
            channels,
            sums: vec![0.0; channels * plan.height * plan.width],
            counts: vec![0; plan.height * plan.width],
        }
    }

    pub fn add(&mut self, placement: usize, window: &FeatureMap) -> Result<()> {
        let (kh, kw) = self.plan.window;
        let expected = (self.channels, kh, kw);
        if window.dims() != expected {
            return Err(TlcError::OpShapeViolation {
                expected,
                found: window.dims(),
            });
        }
        let (r, c) = *self.plan.placements.get(placement).ok_or_else(|| {
            TlcError::InvalidArgument(format!("placement index {placement} out of range"))
        })?;
        let (h, w) = (self.plan.height, self.plan.width);
        for ch in 0..self.channels {
            for i in 0..kh {
                let dst = (ch * h + r + i) * w + c;
                let src = &window.channel(ch).data[i * kw..(i + 1) * kw];
                for (d, s) in self.sums[dst..dst + kw].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        for i in 0..kh {
            for n in &mut self.counts[(r + i) * w + c..(r + i) * w + c + kw] {
                *n += 1;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<FeatureMap> {
        let (h, w) = (self.plan.height, self.plan.width);
        if let Some(px) = self.counts.iter().position(|&n| n == 0) {
            return Err(TlcError::InvalidArgument(format!(
                "pixel ({}, {}) received no window",
                px / w,
                px % w
            )));
        }
        let hw = h * w;
        let data = self
            .sums
            .iter()
            .enumerate()
            .map(|(idx, s)| s / self.counts[idx % hw] as f64)
            .collect();
        FeatureMap::new(self.channels, h, w, data)
    }
}

/// Runs `op` on every window of `plan` and averages overlapping results.
///
/// Windows are transformed in parallel and then accumulated in placement
/// order, so the output does not depend on scheduling.
pub fn apply_and_fuse<F>(x: &FeatureMap, plan: &TilePlan, op: F) -> Result<FeatureMap>
where
    F: Fn(&FeatureMap) -> Result<FeatureMap> + Sync,
{
    if (x.height(), x.width()) != (plan.height, plan.width) {
        return Err(TlcError::ShapeMismatch(format!(
            "plan for {}x{} applied to {}x{}",
            plan.height,
            plan.width,
            x.height(),
            x.width()
        )));
    }
    let (kh, kw) = plan.window;
    let outputs: Vec<FeatureMap> = plan
        .placements
        .par_iter()
        .map(|&(r, c)| op(&x.crop(r, c, kh, kw)?))
        .collect::<Result<_>>()?;
    let mut fuser = Fuser::new(plan, x.channels());
    for (idx, out) in outputs.iter().enumerate() {
        fuser.add(idx, out)?;
    }
    fuser.finish()
}

/// Patch-wise inference: the full `pipeline` runs on each tile on its own
/// and overlapping tile outputs are averaged.
pub fn patch_inference_baseline<F>(x: &FeatureMap, plan: &TilePlan, pipeline: F) -> Result<FeatureMap>
where
    F: Fn(&FeatureMap) -> Result<FeatureMap> + Sync,
{
    apply_and_fuse(x, plan, pipeline)
}

/// Softmax temperature of the attention stand-in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttnParams {
    temperature: f64,
}

impl AttnParams {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(TlcError::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self { temperature })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

impl Default for AttnParams {
    fn default() -> Self {
        Self { temperature: 1.0 }
    }
}

/// Channel-to-channel attention matrix of a window (`C x C`, row-stochastic).
///
/// Tokens are channels flattened over space; queries and keys are the
/// L2-normalized channel vectors. A channel with zero norm normalizes to
/// the zero vector, so its similarities are all zero.
pub fn attention_matrix(window: &FeatureMap, p: &AttnParams) -> Vec<f64> {
    let c = window.channels();
    let normed: Vec<Vec<f64>> = window
        .planes()
        .map(|pl| {
            let norm = pl.data.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                pl.data.iter().map(|v| v / norm).collect()
            } else {
                vec![0.0; pl.data.len()]
            }
        })
        .collect();
    let mut a = vec![0.0; c * c];
    for i in 0..c {
        let row = &mut a[i * c..(i + 1) * c];
        for (j, r) in row.iter_mut().enumerate() {
            let dot: f64 = normed[i].iter().zip(&normed[j]).map(|(x, y)| x * y).sum();
            *r = dot * p.temperature;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            total += *r;
        }
        row.iter_mut().for_each(|r| *r /= total);
    }
    a
}

/// Transposed (channels-as-tokens) self-attention on one window.
pub fn transposed_attention(window: &FeatureMap, p: &AttnParams) -> Result<FeatureMap> {
    let (c, h, w) = window.dims();
    let a = attention_matrix(window, p);
    let hw = h * w;
    let mut out = vec![0.0; c * hw];
    for i in 0..c {
        let dst = &mut out[i * hw..(i + 1) * hw];
        for j in 0..c {
            let wt = a[i * c + j];
            for (d, v) in dst.iter_mut().zip(window.channel(j).data) {
                *d += wt * v;
            }
        }
    }
    FeatureMap::new(c, h, w, out)
}

/// Mean absolute step across tile borders minus the mean absolute step
/// everywhere else, clamped at zero.
///
/// Vertical and horizontal neighbor pairs are scored separately (a smooth
/// ramp may have different slopes per axis) and combined weighted by the
/// number of border pairs on each axis.
pub fn seam_metric(x: &FeatureMap, plan: &TilePlan) -> Result<f64> {
    let (c, h, w) = x.dims();
    if (h, w) != (plan.height, plan.width) {
        return Err(TlcError::ShapeMismatch(format!(
            "plan for {}x{} scored on {h}x{w}",
            plan.height, plan.width
        )));
    }
    let mut is_row_border = vec![false; h];
    for b in plan.row_boundaries() {
        is_row_border[b] = true;
    }
    let mut is_col_border = vec![false; w];
    for b in plan.col_boundaries() {
        is_col_border[b] = true;
    }

    // (border sum, border count, other sum, other count) per axis.
    let mut vertical = [0.0f64; 4];
    let mut horizontal = [0.0f64; 4];
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                if i > 0 {
                    let d = (x.get(ch, i, j) - x.get(ch, i - 1, j)).abs();
                    let slot = if is_row_border[i] { 0 } else { 2 };
                    vertical[slot] += d;
                    vertical[slot + 1] += 1.0;
                }
                if j > 0 {
                    let d = (x.get(ch, i, j) - x.get(ch, i, j - 1)).abs();
                    let slot = if is_col_border[j] { 0 } else { 2 };
                    horizontal[slot] += d;
                    horizontal[slot + 1] += 1.0;
                }
            }
        }
    }
    let axis_score = |a: [f64; 4]| {
        if a[1] == 0.0 {
            return (0.0, 0.0);
        }
        let border = a[0] / a[1];
        let other = if a[3] > 0.0 { a[2] / a[3] } else { 0.0 };
        (border - other, a[1])
    };
    let (sv, nv) = axis_score(vertical);
    let (sh, nh) = axis_score(horizontal);
    if nv + nh == 0.0 {
        return Ok(0.0);
    }
    Ok(((sv * nv + sh * nh) / (nv + nh)).max(0.0))
}
