//! Feature modules with a global-statistics form and a windowed form.
//!
//! Each forward function takes a [`Mode`]. `Mode::Global` pools over the
//! full spatial extent, which is how the module behaves during patch-based
//! training. `Mode::Local(window)` swaps every spatial pooling for the
//! windowed equivalent from [`crate::integral`], so each pixel is
//! conditioned on its own neighborhood. Both modes read the same parameter
//! objects and never modify them.

use rayon::prelude::*;

use crate::error::{Result, TlcError};
use crate::integral::{
    global_aggregate, global_max, local_aggregate, local_max, windowed_from_table, IntegralTable,
    PointwiseMap,
};
use crate::tensor::{FeatureMap, Plane, PlaneView, WindowSpec};

/// Spatial extent of the pooling inside a module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Global,
    Local(WindowSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleKind {
    Se,
    In,
    Gn,
    GeThetaMinus,
    CbamChannel,
}

impl ModuleKind {
    pub fn name(self) -> &'static str {
        match self {
            ModuleKind::Se => "se",
            ModuleKind::In => "in",
            ModuleKind::Gn => "gn",
            ModuleKind::GeThetaMinus => "ge",
            ModuleKind::CbamChannel => "cbam",
        }
    }
}

impl std::str::FromStr for ModuleKind {
    type Err = TlcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "se" => Ok(ModuleKind::Se),
            "in" => Ok(ModuleKind::In),
            "gn" => Ok(ModuleKind::Gn),
            "ge" | "ge-theta-minus" | "ge_theta_minus" => Ok(ModuleKind::GeThetaMinus),
            "cbam" | "cbam-channel" | "cbam_channel" => Ok(ModuleKind::CbamChannel),
            other => Err(TlcError::InvalidArgument(format!("unknown module kind {other:?}"))),
        }
    }
}

/// Bottleneck MLP shared by SE and CBAM channel attention.
///
/// `reduce` is `C x hidden` (row-major, `reduce[c * hidden + k]`) and
/// `expand` is `hidden x C`; `hidden = C / ratio`. No biases.
#[derive(Debug, Clone, PartialEq)]
pub struct SeParams {
    channels: usize,
    ratio: usize,
    reduce: Vec<f64>,
    expand: Vec<f64>,
}

impl SeParams {
    pub fn new(channels: usize, ratio: usize, reduce: Vec<f64>, expand: Vec<f64>) -> Result<Self> {
        if channels == 0 || ratio == 0 || !channels.is_multiple_of(ratio) {
            return Err(TlcError::InvalidArgument(format!(
                "reduction ratio {ratio} must divide {channels} channels"
            )));
        }
        let hidden = channels / ratio;
        if reduce.len() != channels * hidden || expand.len() != hidden * channels {
            return Err(TlcError::ShapeMismatch(format!(
                "SE weights for C={channels}, hidden={hidden}: got {} and {} values",
                reduce.len(),
                expand.len()
            )));
        }
        if reduce.iter().chain(&expand).any(|v| !v.is_finite()) {
            return Err(TlcError::InvalidArgument("SE weights must be finite".into()));
        }
        Ok(Self {
            channels,
            ratio,
            reduce,
            expand,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.ratio
    }

    pub fn reduce(&self) -> &[f64] {
        &self.reduce
    }

    pub fn expand(&self) -> &[f64] {
        &self.expand
    }

    /// `expand . relu(reduce . pooled)`, before any sigmoid.
    pub fn mlp(&self, pooled: &[f64], hidden_buf: &mut [f64], out: &mut [f64]) {
        let hidden = self.hidden();
        hidden_buf.fill(0.0);
        for (c, &p) in pooled.iter().enumerate() {
            let row = &self.reduce[c * hidden..(c + 1) * hidden];
            for (h, &wt) in hidden_buf.iter_mut().zip(row) {
                *h += p * wt;
            }
        }
        out.fill(0.0);
        for (k, &h) in hidden_buf.iter().enumerate() {
            let a = h.max(0.0);
            let row = &self.expand[k * self.channels..(k + 1) * self.channels];
            for (o, &wt) in out.iter_mut().zip(row) {
                *o += a * wt;
            }
        }
    }
}

/// Affine normalization parameters; `groups == C` is instance norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
    pub groups: usize,
}

pub const DEFAULT_NORM_EPS: f64 = 1e-5;

impl NormParams {
    pub fn new(gamma: Vec<f64>, beta: Vec<f64>, eps: f64, groups: usize) -> Result<Self> {
        let channels = gamma.len();
        if beta.len() != channels {
            return Err(TlcError::ShapeMismatch(format!(
                "gamma has {channels} entries, beta {}",
                beta.len()
            )));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(TlcError::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        if groups == 0 || channels == 0 || !channels.is_multiple_of(groups) {
            return Err(TlcError::InvalidGroupCount { groups, channels });
        }
        Ok(Self {
            gamma,
            beta,
            eps,
            groups,
        })
    }

    /// Unit scale, zero shift.
    pub fn identity(channels: usize, groups: usize) -> Result<Self> {
        Self::new(vec![1.0; channels], vec![0.0; channels], DEFAULT_NORM_EPS, groups)
    }

    pub fn instance(channels: usize) -> Result<Self> {
        Self::identity(channels, channels)
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn check_channels(x: &FeatureMap, expected: usize) -> Result<()> {
    if x.channels() != expected {
        return Err(TlcError::ShapeMismatch(format!(
            "input has {} channels, parameters expect {expected}",
            x.channels()
        )));
    }
    Ok(())
}

/// Per-channel pooled statistic: one scalar per channel or one plane per channel.
enum Pooled {
    Scalar(Vec<f64>),
    Field(Vec<Plane>),
}

fn pool_mean(x: &FeatureMap, mode: Mode) -> Pooled {
    match mode {
        Mode::Global => Pooled::Scalar(
            x.planes()
                .map(|p| global_aggregate(p, PointwiseMap::Identity))
                .collect(),
        ),
        Mode::Local(w) => Pooled::Field(
            (0..x.channels())
                .into_par_iter()
                .map(|c| local_aggregate(x.channel(c), PointwiseMap::Identity, &w))
                .collect(),
        ),
    }
}

fn pool_max(x: &FeatureMap, mode: Mode) -> Pooled {
    match mode {
        Mode::Global => Pooled::Scalar(x.planes().map(global_max).collect()),
        Mode::Local(w) => Pooled::Field(
            (0..x.channels())
                .into_par_iter()
                .map(|c| local_max(x.channel(c), &w))
                .collect(),
        ),
    }
}

/// Multiplies `x` by gates computed from the pooled statistics.
///
/// `gate_fn` maps the C pooled vectors at one location (one vector per
/// statistic) to C gates.
fn apply_gates(
    x: &FeatureMap,
    stats: &[Pooled],
    gate_fn: impl Fn(&[Vec<f64>], &mut [f64]) + Sync,
) -> Result<FeatureMap> {
    let (c, h, w) = x.dims();
    let hw = h * w;
    let global = stats.iter().all(|s| matches!(s, Pooled::Scalar(_)));
    if global {
        let vectors: Vec<Vec<f64>> = stats
            .iter()
            .map(|s| match s {
                Pooled::Scalar(v) => v.clone(),
                Pooled::Field(_) => unreachable!(),
            })
            .collect();
        let mut gates = vec![0.0; c];
        gate_fn(&vectors, &mut gates);
        let data = x
            .data()
            .chunks(hw)
            .zip(&gates)
            .flat_map(|(plane, &g)| plane.iter().map(move |v| v * g))
            .collect();
        return FeatureMap::new(c, h, w, data);
    }

    let fields: Vec<&Vec<Plane>> = stats
        .iter()
        .map(|s| match s {
            Pooled::Field(f) => f,
            Pooled::Scalar(_) => unreachable!("mixed pooling modes"),
        })
        .collect();
    // Gates are computed per row of pixels in parallel, laid out pixel-major.
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|i| {
            let mut vectors = vec![vec![0.0; c]; fields.len()];
            let mut gates = vec![0.0; c];
            let mut out = Vec::with_capacity(w * c);
            for j in 0..w {
                for (vec, field) in vectors.iter_mut().zip(&fields) {
                    for (ch, v) in vec.iter_mut().enumerate() {
                        *v = field[ch].get(i, j);
                    }
                }
                gate_fn(&vectors, &mut gates);
                out.extend_from_slice(&gates);
            }
            out
        })
        .collect();
    FeatureMap::from_fn(c, h, w, |ch, i, j| x.get(ch, i, j) * rows[i][j * c + ch])
}

/// Squeeze-and-excitation: `x * sigmoid(MLP(mean-pool(x)))`.
pub fn se_forward(x: &FeatureMap, p: &SeParams, mode: Mode) -> Result<FeatureMap> {
    check_channels(x, p.channels())?;
    let stats = [pool_mean(x, mode)];
    let hidden = p.hidden();
    apply_gates(x, &stats, |v, gates| {
        let mut hbuf = vec![0.0; hidden];
        p.mlp(&v[0], &mut hbuf, gates);
        gates.iter_mut().for_each(|g| *g = sigmoid(*g));
    })
}

/// Parameter-free gather-excite: `x * sigmoid(mean-pool(x))`.
pub fn ge_forward(x: &FeatureMap, mode: Mode) -> Result<FeatureMap> {
    let stats = [pool_mean(x, mode)];
    apply_gates(x, &stats, |v, gates| {
        for (g, &m) in gates.iter_mut().zip(&v[0]) {
            *g = sigmoid(m);
        }
    })
}

/// CBAM channel branch: `x * sigmoid(MLP(mean-pool) + MLP(max-pool))`.
pub fn cbam_channel_forward(x: &FeatureMap, p: &SeParams, mode: Mode) -> Result<FeatureMap> {
    check_channels(x, p.channels())?;
    let stats = [pool_mean(x, mode), pool_max(x, mode)];
    let (c, hidden) = (p.channels(), p.hidden());
    apply_gates(x, &stats, |v, gates| {
        let mut hbuf = vec![0.0; hidden];
        let mut from_max = vec![0.0; c];
        p.mlp(&v[0], &mut hbuf, gates);
        p.mlp(&v[1], &mut hbuf, &mut from_max);
        for (g, m) in gates.iter_mut().zip(&from_max) {
            *g = sigmoid(*g + m);
        }
    })
}

/// Group normalization; instance norm when `groups == C`.
///
/// Statistics are pooled over all channels of a group. In local mode the
/// group's per-channel summed-area tables are added before the window
/// query, so each pixel's `(mean, var)` covers `group_size * K_h * K_w`
/// values.
pub fn norm_forward(x: &FeatureMap, p: &NormParams, mode: Mode) -> Result<FeatureMap> {
    let (c, h, w) = x.dims();
    if p.channels() != c {
        return Err(TlcError::ShapeMismatch(format!(
            "input has {c} channels, norm parameters expect {}",
            p.channels()
        )));
    }
    if c % p.groups != 0 {
        return Err(TlcError::InvalidGroupCount {
            groups: p.groups,
            channels: c,
        });
    }
    let group_size = c / p.groups;
    let hw = h * w;

    let normalized: Vec<Vec<f64>> = (0..p.groups)
        .into_par_iter()
        .map(|g| {
            let members = g * group_size..(g + 1) * group_size;
            let mut out = Vec::with_capacity(group_size * hw);
            match mode {
                Mode::Global => {
                    let n = (group_size * hw) as f64;
                    let (mut s, mut ss) = (0.0, 0.0);
                    for ch in members.clone() {
                        s += x.channel(ch).data.iter().sum::<f64>();
                        ss += x.channel(ch).data.iter().map(|v| v * v).sum::<f64>();
                    }
                    let mean = s / n;
                    let var = (ss / n - mean * mean).max(0.0);
                    let inv = 1.0 / (var + p.eps).sqrt();
                    for ch in members {
                        let (gm, bt) = (p.gamma[ch], p.beta[ch]);
                        out.extend(x.channel(ch).data.iter().map(|v| gm * (v - mean) * inv + bt));
                    }
                }
                Mode::Local(window) => {
                    // moments about one sample of the group
                    let a = x.channel(members.start).data[0];
                    let mut first = members.clone().map(|ch| {
                        let centered: Vec<f64> = x.channel(ch).data.iter().map(|v| v - a).collect();
                        let view = PlaneView { height: h, width: w, data: &centered };
                        (
                            IntegralTable::build(view, PointwiseMap::Identity),
                            IntegralTable::build(view, PointwiseMap::Square),
                        )
                    });
                    let (mut sum_t, mut sq_t) = first.next().expect("non-empty group");
                    for (s, q) in first {
                        sum_t.accumulate(&s).expect("same-size tables");
                        sq_t.accumulate(&q).expect("same-size tables");
                    }
                    let mean = windowed_from_table(&sum_t, (h, w), &window, group_size, 0.0);
                    let sq = windowed_from_table(&sq_t, (h, w), &window, group_size, 0.0);
                    let inv: Vec<f64> = mean
                        .data
                        .iter()
                        .zip(&sq.data)
                        .map(|(m, s)| 1.0 / ((s - m * m).max(0.0) + p.eps).sqrt())
                        .collect();
                    for ch in members {
                        let (gm, bt) = (p.gamma[ch], p.beta[ch]);
                        out.extend(
                            x.channel(ch)
                                .data
                                .iter()
                                .zip(&mean.data)
                                .zip(&inv)
                                .map(|((v, m), s)| gm * ((v - a) - m) * s + bt),
                        );
                    }
                }
            }
            out
        })
        .collect();
    FeatureMap::new(c, h, w, normalized.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::from_fn(c, h, w, |_, _, _| rng.random_range(-2.0..2.0)).unwrap()
    }

    fn random_se(c: usize, ratio: usize, seed: u64) -> SeParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = c / ratio;
        let reduce = (0..c * hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
        let expand = (0..c * hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
        SeParams::new(c, ratio, reduce, expand).unwrap()
    }

    fn max_diff(a: &FeatureMap, b: &FeatureMap) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// Output of `global` on the window centered at (i, j), read at the crop center.
    fn crop_then_global(
        x: &FeatureMap,
        k: usize,
        (i, j): (usize, usize),
        global: impl Fn(&FeatureMap) -> FeatureMap,
    ) -> Vec<f64> {
        let off = (k - 1) / 2;
        let crop = x.crop(i - off, j - off, k, k).unwrap();
        let out = global(&crop);
        (0..x.channels()).map(|c| out.get(c, off, off)).collect()
    }

    #[test]
    fn param_validation() {
        assert!(SeParams::new(4, 3, vec![], vec![]).is_err());
        assert!(SeParams::new(4, 2, vec![0.0; 8], vec![0.0; 7]).is_err());
        assert!(matches!(
            NormParams::identity(6, 4),
            Err(TlcError::InvalidGroupCount { groups: 4, channels: 6 })
        ));
        assert!(NormParams::new(vec![1.0], vec![0.0], 0.0, 1).is_err());
        assert_eq!("CBAM".parse::<ModuleKind>().unwrap(), ModuleKind::CbamChannel);
    }

    #[test]
    fn se_constant_per_channel_local_equals_global() {
        let x = FeatureMap::from_fn(4, 9, 11, |c, _, _| c as f64 - 1.5).unwrap();
        let p = random_se(4, 2, 1);
        let g = se_forward(&x, &p, Mode::Global).unwrap();
        let l = se_forward(&x, &p, Mode::Local(WindowSpec::square(3).unwrap())).unwrap();
        assert!(max_diff(&g, &l) < 1e-12);
    }

    #[test]
    fn se_full_window_equals_global() {
        let x = random_map(4, 10, 12, 2);
        let p = random_se(4, 4, 3);
        let g = se_forward(&x, &p, Mode::Global).unwrap();
        let l = se_forward(&x, &p, Mode::Local(WindowSpec::square(12).unwrap())).unwrap();
        assert!(max_diff(&g, &l) < 1e-9);
    }

    #[test]
    fn se_interior_matches_crop() {
        let x = random_map(4, 16, 16, 4);
        let p = random_se(4, 2, 5);
        let l = se_forward(&x, &p, Mode::Local(WindowSpec::square(5).unwrap())).unwrap();
        let expect = crop_then_global(&x, 5, (8, 8), |m| se_forward(m, &p, Mode::Global).unwrap());
        for c in 0..4 {
            // compare gates, the quantity the crop oracle pins down
            let gate_local = l.get(c, 8, 8) / x.get(c, 8, 8);
            let gate_crop = expect[c] / x.get(c, 8, 8);
            assert!((gate_local - gate_crop).abs() < 1e-7);
        }
    }

    #[test]
    fn se_rejects_channel_mismatch() {
        let x = random_map(3, 4, 4, 1);
        assert!(matches!(
            se_forward(&x, &random_se(4, 2, 1), Mode::Global),
            Err(TlcError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn norm_constant_input_is_zero() {
        let x = FeatureMap::filled(2, 6, 6, 3.25).unwrap();
        let p = NormParams::instance(2).unwrap();
        for mode in [Mode::Global, Mode::Local(WindowSpec::square(3).unwrap())] {
            let y = norm_forward(&x, &p, mode).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn norm_full_window_equals_global() {
        let x = random_map(4, 9, 7, 6);
        for groups in [1, 2, 4] {
            let mut p = NormParams::identity(4, groups).unwrap();
            p.gamma = vec![0.5, 1.5, -1.0, 2.0];
            p.beta = vec![0.1, 0.0, -0.3, 1.0];
            let g = norm_forward(&x, &p, Mode::Global).unwrap();
            let l = norm_forward(&x, &p, Mode::Local(WindowSpec::square(9).unwrap())).unwrap();
            assert!(max_diff(&g, &l) < 1e-7, "groups={groups}");
        }
    }

    #[test]
    fn group_norm_interior_matches_crop() {
        let x = random_map(4, 12, 12, 7);
        let p = NormParams::identity(4, 2).unwrap();
        let l = norm_forward(&x, &p, Mode::Local(WindowSpec::square(5).unwrap())).unwrap();
        for (i, j) in [(2, 2), (6, 5), (9, 9)] {
            let expect = crop_then_global(&x, 5, (i, j), |m| norm_forward(m, &p, Mode::Global).unwrap());
            for c in 0..4 {
                assert!((l.get(c, i, j) - expect[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn global_norm_standardizes_each_group() {
        let x = random_map(6, 10, 10, 8);
        let p = NormParams::identity(6, 3).unwrap();
        let y = norm_forward(&x, &p, Mode::Global).unwrap();
        for g in 0..3 {
            let vals: Vec<f64> = (2 * g..2 * g + 2).flat_map(|c| y.channel(c).data.to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn ge_zero_input_and_direct_oracle() {
        let z = FeatureMap::filled(2, 5, 5, 0.0).unwrap();
        assert!(ge_forward(&z, Mode::Global).unwrap().data().iter().all(|&v| v == 0.0));

        let x = random_map(2, 8, 8, 9);
        let y = ge_forward(&x, Mode::Local(WindowSpec::square(3).unwrap())).unwrap();
        for c in 0..2 {
            for i in 0..8usize {
                for j in 0..8usize {
                    let t = i.saturating_sub(1).min(5);
                    let l = j.saturating_sub(1).min(5);
                    let mut s = 0.0;
                    for p in t..t + 3 {
                        for q in l..l + 3 {
                            s += x.get(c, p, q);
                        }
                    }
                    let expect = x.get(c, i, j) / (1.0 + (-s / 9.0).exp());
                    assert!((y.get(c, i, j) - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn cbam_laws() {
        let p = random_se(4, 2, 10);
        let flat = FeatureMap::from_fn(4, 7, 7, |c, _, _| 0.3 * c as f64).unwrap();
        let g = cbam_channel_forward(&flat, &p, Mode::Global).unwrap();
        let l = cbam_channel_forward(&flat, &p, Mode::Local(WindowSpec::square(3).unwrap())).unwrap();
        assert!(max_diff(&g, &l) < 1e-12);
        let x = random_map(4, 16, 16, 11);
        let g = cbam_channel_forward(&x, &p, Mode::Global).unwrap();
        let l = cbam_channel_forward(&x, &p, Mode::Local(WindowSpec::square(16).unwrap())).unwrap();
        assert!(max_diff(&g, &l) < 1e-9);
        let l = cbam_channel_forward(&x, &p, Mode::Local(WindowSpec::square(5).unwrap())).unwrap();
        let expect = crop_then_global(&x, 5, (7, 10), |m| cbam_channel_forward(m, &p, Mode::Global).unwrap());
        for c in 0..4 {
            assert!((l.get(c, 7, 10) - expect[c]).abs() < 1e-7);
        }
    }

    #[test]
    fn gates_shrink_magnitudes() {
        let x = random_map(4, 10, 10, 12);
        let p = random_se(4, 2, 13);
        let w = Mode::Local(WindowSpec::square(4).unwrap());
        for y in [
            se_forward(&x, &p, w).unwrap(),
            ge_forward(&x, w).unwrap(),
            cbam_channel_forward(&x, &p, w).unwrap(),
        ] {
            assert!(y.data().iter().zip(x.data()).all(|(o, i)| o.abs() <= i.abs()));
        }
    }
}
