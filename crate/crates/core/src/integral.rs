//! Global and windowed aggregation over a single channel.
//!
//! The global operator averages `f(x)` over the whole plane. The windowed
//! operator averages `f(x)` over every `K_h x K_w` window (stride 1), writes
//! each result to the window's center pixel and fills the border by
//! replicating the resulting interior map. Window sums come from a
//! summed-area table so the cost is `O(HW)` for any window size.
//!
//! Windows larger than the plane are clamped to it; a window covering the
//! whole plane therefore reproduces the global operator at every pixel.

use crate::error::{Result, TlcError};
use crate::tensor::{Plane, PlaneView, WindowSpec};

/// Pointwise function applied before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointwiseMap {
    Identity,
    Square,
}

impl PointwiseMap {
    #[inline]
    pub fn apply(self, t: f64) -> f64 {
        match self {
            PointwiseMap::Identity => t,
            PointwiseMap::Square => t * t,
        }
    }
}

/// Mean of `f(x)` over the whole plane.
pub fn global_aggregate(x: PlaneView<'_>, f: PointwiseMap) -> f64 {
    let sum: f64 = x.data.iter().map(|&v| f.apply(v)).sum();
    sum / x.data.len() as f64
}

pub fn global_max(x: PlaneView<'_>) -> f64 {
    x.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Summed-area table with a zero top row and left column.
///
/// `sum(p, q)` is the total of `f(x)` over rows `< p` and columns `< q`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralTable {
    rows: usize,
    cols: usize,
    sums: Vec<f64>,
}

impl IntegralTable {
    pub fn build(x: PlaneView<'_>, f: PointwiseMap) -> Self {
        Self::build_about(x, f, 0.0)
    }

    /// Table of `f(x) - about`. Centering on a sample value keeps window
    /// sums small, and a constant plane sums to exact zeros.
    pub fn build_about(x: PlaneView<'_>, f: PointwiseMap, about: f64) -> Self {
        let (h, w) = (x.height, x.width);
        let cols = w + 1;
        let mut sums = vec![0.0; (h + 1) * cols];
        for p in 0..h {
            let src = &x.data[p * w..(p + 1) * w];
            let (above, below) = sums.split_at_mut((p + 1) * cols);
            let prev = &above[p * cols..];
            let cur = &mut below[..cols];
            let mut running = 0.0;
            for q in 0..w {
                running += f.apply(src[q]) - about;
                cur[q + 1] = prev[q + 1] + running;
            }
        }
        Self {
            rows: h + 1,
            cols,
            sums,
        }
    }

    /// Table dimensions, `(H + 1, W + 1)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn sum(&self, p: usize, q: usize) -> f64 {
        self.sums[p * self.cols + q]
    }

    /// Sum over rows `[r0, r1)` and columns `[c0, c1)`.
    #[inline]
    pub fn rect_sum(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
        let (a, b) = (r0 * self.cols, r1 * self.cols);
        (self.sums[b + c1] - self.sums[a + c1]) - (self.sums[b + c0] - self.sums[a + c0])
    }

    /// Adds another table of the same size elementwise.
    pub fn accumulate(&mut self, other: &IntegralTable) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(TlcError::ShapeMismatch(format!(
                "integral tables {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        for (s, o) in self.sums.iter_mut().zip(&other.sums) {
            *s += o;
        }
        Ok(())
    }
}

/// Expands an `ih x iw` interior map to `h x w`, placing interior cell
/// `(t_r, t_c)` at `(t_r + off_r, t_c + off_c)` and replicating its border.
pub(crate) fn replicate_interior(
    interior: &[f64],
    (ih, iw): (usize, usize),
    (h, w): (usize, usize),
    (off_r, off_c): (usize, usize),
) -> Plane {
    let col_src: Vec<usize> = (0..w)
        .map(|j| j.saturating_sub(off_c).min(iw - 1))
        .collect();
    let mut data = Vec::with_capacity(h * w);
    for i in 0..h {
        let row = i.saturating_sub(off_r).min(ih - 1);
        let src = &interior[row * iw..(row + 1) * iw];
        data.extend(col_src.iter().map(|&c| src[c]));
    }
    Plane {
        height: h,
        width: w,
        data,
    }
}

/// Clamped window origin for each output index along one axis.
fn origins(n: usize, k: usize, off: usize) -> Vec<usize> {
    (0..n).map(|i| i.saturating_sub(off).min(n - k)).collect()
}

/// `about + window_sum / (channels * area)` for every pixel, read from a
/// table built about `about`.
///
/// `channels` is the number of per-channel tables merged into `table`.
/// Edge pixels read their clamped window directly, which equals
/// replicating the nearest interior value.
pub(crate) fn windowed_from_table(
    table: &IntegralTable,
    (h, w): (usize, usize),
    window: &WindowSpec,
    channels: usize,
    about: f64,
) -> Plane {
    let (kh, kw) = window.effective(h, w);
    let (off_r, off_c) = window.center_offset(h, w);
    let cols = origins(w, kw, off_c);
    let count = (channels * kh * kw) as f64;
    let mut data = Vec::with_capacity(h * w);
    for r in origins(h, kh, off_r) {
        data.extend(cols.iter().map(|&c| about + table.rect_sum(r, r + kh, c, c + kw) / count));
    }
    Plane {
        height: h,
        width: w,
        data,
    }
}

/// Windowed mean of `f(x)`, assigned to window centers and edge-replicated.
pub fn local_aggregate(x: PlaneView<'_>, f: PointwiseMap, window: &WindowSpec) -> Plane {
    if window.effective(x.height, x.width) == (1, 1) {
        return pointwise(x, f);
    }
    let about = f.apply(x.data[0]);
    let table = IntegralTable::build_about(x, f, about);
    windowed_from_table(&table, (x.height, x.width), window, 1, about)
}

/// `f(x)` elementwise: the windowed mean for a 1x1 window, without the
/// rounding of table differences.
fn pointwise(x: PlaneView<'_>, f: PointwiseMap) -> Plane {
    Plane {
        height: x.height,
        width: x.width,
        data: x.data.iter().map(|&v| f.apply(v)).collect(),
    }
}

/// Windowed mean and variance. Moments are taken about the first pixel,
/// `var = E[(x - a)^2] - E[x - a]^2`, clamped at zero.
pub fn local_mean_var(x: PlaneView<'_>, window: &WindowSpec) -> (Plane, Plane) {
    let (h, w) = (x.height, x.width);
    if window.effective(h, w) == (1, 1) {
        return (pointwise(x, PointwiseMap::Identity), Plane::from_fn(h, w, |_, _| 0.0));
    }
    let a = x.data[0];
    let centered: Vec<f64> = x.data.iter().map(|v| v - a).collect();
    let view = PlaneView { height: h, width: w, data: &centered };
    let first = windowed_from_table(&IntegralTable::build(view, PointwiseMap::Identity), (h, w), window, 1, 0.0);
    let second = windowed_from_table(&IntegralTable::build(view, PointwiseMap::Square), (h, w), window, 1, 0.0);
    let var = first
        .data
        .iter()
        .zip(&second.data)
        .map(|(m, q)| (q - m * m).max(0.0))
        .collect();
    let mean = first.data.iter().map(|m| a + m).collect();
    (
        Plane { height: h, width: w, data: mean },
        Plane { height: h, width: w, data: var },
    )
}

/// Sliding maximum of width `k` over `src`, writing `src.len() - k + 1` values.
///
/// Van Herk / Gil-Werman: split into blocks of `k`, take running maxima
/// forward and backward inside each block; any window spans at most two
/// blocks, so its max is `max(backward[t], forward[t + k - 1])`.
fn sliding_max(src: &[f64], k: usize, forward: &mut Vec<f64>, backward: &mut Vec<f64>, out: &mut [f64]) {
    let n = src.len();
    if k == 1 {
        out.copy_from_slice(src);
        return;
    }
    forward.clear();
    forward.resize(n, 0.0);
    backward.clear();
    backward.resize(n, 0.0);
    for (block, chunk) in src.chunks(k).enumerate() {
        let base = block * k;
        let mut run = f64::NEG_INFINITY;
        for (i, &v) in chunk.iter().enumerate() {
            run = run.max(v);
            forward[base + i] = run;
        }
        run = f64::NEG_INFINITY;
        for (i, &v) in chunk.iter().enumerate().rev() {
            run = run.max(v);
            backward[base + i] = run;
        }
    }
    for (t, o) in out.iter_mut().enumerate() {
        *o = backward[t].max(forward[t + k - 1]);
    }
}

/// Windowed maximum with the same placement and replication as
/// [`local_aggregate`]; separable horizontal then vertical pass.
pub fn local_max(x: PlaneView<'_>, window: &WindowSpec) -> Plane {
    let (h, w) = (x.height, x.width);
    let (kh, kw) = window.effective(h, w);
    let (ih, iw) = (h - kh + 1, w - kw + 1);
    let (mut fwd, mut bwd) = (Vec::new(), Vec::new());

    let mut rows = vec![0.0; h * iw];
    for i in 0..h {
        sliding_max(
            &x.data[i * w..(i + 1) * w],
            kw,
            &mut fwd,
            &mut bwd,
            &mut rows[i * iw..(i + 1) * iw],
        );
    }

    let mut interior = vec![0.0; ih * iw];
    let mut column = vec![0.0; h];
    let mut col_out = vec![0.0; ih];
    for j in 0..iw {
        for i in 0..h {
            column[i] = rows[i * iw + j];
        }
        sliding_max(&column, kh, &mut fwd, &mut bwd, &mut col_out);
        for (r, &v) in col_out.iter().enumerate() {
            interior[r * iw + j] = v;
        }
    }
    replicate_interior(&interior, (ih, iw), (h, w), window.center_offset(h, w))
}

/// Approximate windowed mean from the sub-grid `x[::r, ::r]`.
///
/// Each window's value is the mean of the grid samples inside it. With
/// `stride == 1` the result is bit-identical to [`local_aggregate`] with
/// [`PointwiseMap::Identity`].
pub fn strided_local_mean(x: PlaneView<'_>, window: &WindowSpec, stride: usize) -> Result<Plane> {
    if stride == 0 {
        return Err(TlcError::InvalidArgument("stride must be at least 1".into()));
    }
    let (h, w) = (x.height, x.width);
    let (kh, kw) = window.effective(h, w);
    if stride == 1 && (kh, kw) == (1, 1) {
        return Ok(pointwise(x, PointwiseMap::Identity));
    }
    let (gh, gw) = (h.div_ceil(stride), w.div_ceil(stride));
    let sampled: Vec<f64> = (0..gh)
        .flat_map(|gi| (0..gw).map(move |gj| (gi, gj)))
        .map(|(gi, gj)| x.get(gi * stride, gj * stride))
        .collect();
    let about = sampled[0];
    let table = IntegralTable::build_about(PlaneView::new(gh, gw, &sampled)?, PointwiseMap::Identity, about);

    // Grid indices [first, end) whose sample lies inside [t, t + k).
    let span = |t: usize, k: usize, g: usize| (t.div_ceil(stride), (t + k).div_ceil(stride).min(g));
    let (ih, iw) = (h - kh + 1, w - kw + 1);
    let row_spans: Vec<_> = (0..ih).map(|t| span(t, kh, gh)).collect();
    let col_spans: Vec<_> = (0..iw).map(|t| span(t, kw, gw)).collect();
    let empty = row_spans.iter().any(|(a, b)| a >= b) || col_spans.iter().any(|(a, b)| a >= b);
    if empty {
        return Err(TlcError::EmptyWindowSample {
            k_h: kh,
            k_w: kw,
            stride,
        });
    }

    let mut interior = Vec::with_capacity(ih * iw);
    for &(r0, r1) in &row_spans {
        for &(c0, c1) in &col_spans {
            let count = ((r1 - r0) * (c1 - c0)) as f64;
            interior.push(about + table.rect_sum(r0, r1, c0, c1) / count);
        }
    }
    Ok(replicate_interior(
        &interior,
        (ih, iw),
        (h, w),
        window.center_offset(h, w),
    ))
}
