//! Direct `O(HW * K_h * K_w)` window loops.
//!
//! These walk every window element explicitly and share no code with the
//! summed-area path in [`crate::integral`]. They back the CLI's
//! `--brute-force` mode and the complexity benchmark.

use crate::integral::PointwiseMap;
use crate::tensor::{Plane, PlaneView, WindowSpec};

/// Top-left corner of the window whose result lands on `(i, j)`.
fn window_origin(i: usize, j: usize, h: usize, w: usize, kh: usize, kw: usize) -> (usize, usize) {
    let top = i.saturating_sub((kh - 1) / 2).min(h - kh);
    let left = j.saturating_sub((kw - 1) / 2).min(w - kw);
    (top, left)
}

fn per_window(x: PlaneView<'_>, window: &WindowSpec, reduce: impl Fn(usize, usize, usize, usize) -> f64) -> Plane {
    let (h, w) = (x.height, x.width);
    let (kh, kw) = window.effective(h, w);
    // Compute each distinct window once; edge pixels reuse their clamped window.
    let (ih, iw) = (h - kh + 1, w - kw + 1);
    let mut interior = vec![0.0; ih * iw];
    for t in 0..ih {
        for l in 0..iw {
            interior[t * iw + l] = reduce(t, l, kh, kw);
        }
    }
    Plane::from_fn(h, w, |i, j| {
        let (t, l) = window_origin(i, j, h, w, kh, kw);
        interior[t * iw + l]
    })
}

pub fn brute_local_aggregate(x: PlaneView<'_>, f: PointwiseMap, window: &WindowSpec) -> Plane {
    per_window(x, window, |t, l, kh, kw| {
        let mut sum = 0.0;
        for p in t..t + kh {
            for q in l..l + kw {
                sum += f.apply(x.get(p, q));
            }
        }
        sum / (kh * kw) as f64
    })
}

/// Two-pass windowed variance alongside the mean.
pub fn brute_local_mean_var(x: PlaneView<'_>, window: &WindowSpec) -> (Plane, Plane) {
    let mean = brute_local_aggregate(x, PointwiseMap::Identity, window);
    let var = per_window(x, window, |t, l, kh, kw| {
        let n = (kh * kw) as f64;
        let mut sum = 0.0;
        for p in t..t + kh {
            for q in l..l + kw {
                sum += x.get(p, q);
            }
        }
        let m = sum / n;
        let mut ss = 0.0;
        for p in t..t + kh {
            for q in l..l + kw {
                let d = x.get(p, q) - m;
                ss += d * d;
            }
        }
        ss / n
    });
    (mean, var)
}

pub fn brute_local_max(x: PlaneView<'_>, window: &WindowSpec) -> Plane {
    per_window(x, window, |t, l, kh, kw| {
        let mut m = f64::NEG_INFINITY;
        for p in t..t + kh {
            for q in l..l + kw {
                m = m.max(x.get(p, q));
            }
        }
        m
    })
}
