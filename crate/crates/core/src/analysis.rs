//! Pooled-statistic distribution shift between patches and full maps.
//!
//! A network trained on patches only ever sees pooled means of patch-sized
//! regions. At test time the same pooling runs over a much larger image and
//! its mean concentrates, so the statistic the later layers receive comes
//! from a narrower distribution than in training. Windowed pooling with a
//! patch-sized window restores the training distribution. This module
//! samples all three populations and measures the gaps with the two-sample
//! Kolmogorov-Smirnov statistic.

use std::fmt;

use crate::error::{Result, TlcError};
use crate::integral::{global_aggregate, local_aggregate, PointwiseMap};
use crate::rng::{self, Rng};
use crate::tensor::{FeatureMap, WindowSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleLabel {
    TrainPatch,
    TestImage,
    TestImageTlc,
}

impl fmt::Display for SampleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleLabel::TrainPatch => "train_patch",
            SampleLabel::TestImage => "test_image",
            SampleLabel::TestImageTlc => "test_image_tlc",
        })
    }
}

/// Non-empty bag of finite pooled statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    label: SampleLabel,
    values: Vec<f64>,
}

impl SampleSet {
    pub fn new(label: SampleLabel, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(TlcError::InvalidArgument("sample set is empty".into()));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(TlcError::NonFiniteValue { index });
        }
        Ok(Self { label, values })
    }

    pub fn label(&self) -> SampleLabel {
        self.label
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub fn std_dev(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        let ss: f64 = self.values.iter().map(|v| (v - m) * (v - m)).sum();
        (ss / (n - 1) as f64).sqrt()
    }
}

/// Produces random feature maps of a fixed size.
pub trait MapSource: Send + Sync {
    fn dims(&self) -> (usize, usize, usize);
    fn generate(&self, rng: &mut Rng) -> FeatureMap;
}

#[derive(Debug, Clone)]
pub struct ConstantSource {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub value: f64,
}

impl MapSource for ConstantSource {
    fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    fn generate(&self, _rng: &mut Rng) -> FeatureMap {
        FeatureMap::filled(self.channels, self.height, self.width, self.value)
            .expect("positive dims")
    }
}

/// I.i.d. Gaussian pixels.
#[derive(Debug, Clone)]
pub struct WhiteNoiseSource {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub std_dev: f64,
}

impl MapSource for WhiteNoiseSource {
    fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    fn generate(&self, rng: &mut Rng) -> FeatureMap {
        FeatureMap::from_fn(self.channels, self.height, self.width, |_, _, _| {
            self.std_dev * rng::standard_normal(rng)
        })
        .expect("positive dims")
    }
}

/// Maps whose local mean and spread drift across the image.
///
/// Each channel is a random low-frequency field (a sum of separable
/// cosines with random frequency, phase and amplitude) plus Gaussian noise
/// whose standard deviation is itself modulated across the image.
#[derive(Debug, Clone)]
pub struct VaryingFieldSource {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Number of cosine components in the mean field.
    pub components: usize,
    pub field_amplitude: f64,
    pub noise_std: f64,
}

impl VaryingFieldSource {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            components: 4,
            field_amplitude: 1.0,
            noise_std: 0.5,
        }
    }
}

fn cosine_profile(rng: &mut Rng, n: usize) -> Vec<f64> {
    // 0.5 to 3 periods across the axis.
    let cycles = 0.5 + 2.5 * rng::uniform(rng);
    let phase = std::f64::consts::TAU * rng::uniform(rng);
    (0..n)
        .map(|i| (std::f64::consts::TAU * cycles * i as f64 / n as f64 + phase).cos())
        .collect()
}

impl MapSource for VaryingFieldSource {
    fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    fn generate(&self, rng: &mut Rng) -> FeatureMap {
        let (h, w) = (self.height, self.width);
        let mut data = Vec::with_capacity(self.channels * h * w);
        for _ in 0..self.channels {
            let mut field = vec![0.0; h * w];
            for _ in 0..self.components {
                let amp = self.field_amplitude * (2.0 * rng::uniform(rng) - 1.0);
                let rows = cosine_profile(rng, h);
                let cols = cosine_profile(rng, w);
                for (i, r) in rows.iter().enumerate() {
                    for (f, c) in field[i * w..(i + 1) * w].iter_mut().zip(&cols) {
                        *f += amp * r * c;
                    }
                }
            }
            let spread_rows = cosine_profile(rng, h);
            let spread_cols = cosine_profile(rng, w);
            for i in 0..h {
                for j in 0..w {
                    let spread = self.noise_std * (1.0 + 0.5 * spread_rows[i] * spread_cols[j]);
                    data.push(field[i * w + j] + spread * rng::standard_normal(rng));
                }
            }
        }
        FeatureMap::new(self.channels, h, w, data).expect("finite field")
    }
}

/// Fixed random-weight pointwise stack on top of another source:
/// `y_c = tanh(scale_c * x_c + shift_c)`.
///
/// The weights are drawn once from their own seed, independent of the
/// stream used to sample inputs.
pub struct SyntheticStack<S> {
    pub source: S,
    scale: Vec<f64>,
    shift: Vec<f64>,
}

impl<S: MapSource> SyntheticStack<S> {
    pub fn new(source: S, weight_seed: u64) -> Self {
        let channels = source.dims().0;
        let mut rng = rng::seeded(weight_seed);
        let scale = (0..channels).map(|_| 0.5 + rng::uniform(&mut rng)).collect();
        let shift = (0..channels).map(|_| 0.5 * (2.0 * rng::uniform(&mut rng) - 1.0)).collect();
        Self {
            source,
            scale,
            shift,
        }
    }
}

impl<S: MapSource> MapSource for SyntheticStack<S> {
    fn dims(&self) -> (usize, usize, usize) {
        self.source.dims()
    }

    fn generate(&self, rng: &mut Rng) -> FeatureMap {
        let x = self.source.generate(rng);
        let hw = x.height() * x.width();
        let (c, h, w) = x.dims();
        let data = x
            .into_data()
            .chunks(hw)
            .enumerate()
            .flat_map(|(ch, plane)| {
                let (a, b) = (self.scale[ch], self.shift[ch]);
                plane.iter().map(move |v| (a * v + b).tanh()).collect::<Vec<_>>()
            })
            .collect();
        FeatureMap::new(c, h, w, data).expect("bounded activations")
    }
}

/// Draws `n` pooled means of channel 0.
///
/// * `patch = Some(..)`: the mean of a uniformly placed patch of each map
///   (training population).
/// * neither: the mean of each full map (test population).
/// * `window = Some(..)`: the windowed mean at a uniformly chosen pixel of
///   each full map (converted test population).
pub fn sample_pooled_stats(
    source: &dyn MapSource,
    n: usize,
    patch: Option<(usize, usize)>,
    window: Option<WindowSpec>,
    rng: &mut Rng,
) -> Result<SampleSet> {
    if n == 0 {
        return Err(TlcError::InvalidArgument("need at least one sample".into()));
    }
    let (_, h, w) = source.dims();
    let mut values = Vec::with_capacity(n);
    let label = match (patch, window) {
        (Some(_), Some(_)) => {
            return Err(TlcError::InvalidArgument(
                "patch and window sampling are exclusive".into(),
            ))
        }
        (Some((ph, pw)), None) => {
            if ph == 0 || pw == 0 || ph > h || pw > w {
                return Err(TlcError::PatchTooLarge {
                    patch: (ph, pw),
                    map: (h, w),
                });
            }
            for _ in 0..n {
                let map = source.generate(rng);
                let top = rng::below(rng, h - ph + 1);
                let left = rng::below(rng, w - pw + 1);
                let ch = map.channel(0);
                let mut sum = 0.0;
                for i in top..top + ph {
                    sum += ch.data[i * w + left..i * w + left + pw].iter().sum::<f64>();
                }
                values.push(sum / (ph * pw) as f64);
            }
            SampleLabel::TrainPatch
        }
        (None, None) => {
            for _ in 0..n {
                let map = source.generate(rng);
                values.push(global_aggregate(map.channel(0), PointwiseMap::Identity));
            }
            SampleLabel::TestImage
        }
        (None, Some(win)) => {
            for _ in 0..n {
                let map = source.generate(rng);
                let local = local_aggregate(map.channel(0), PointwiseMap::Identity, &win);
                let i = rng::below(rng, h);
                let j = rng::below(rng, w);
                values.push(local.get(i, j));
            }
            SampleLabel::TestImageTlc
        }
    };
    SampleSet::new(label, values)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_distance(a: &SampleSet, b: &SampleSet) -> f64 {
    let (xs, ys) = (sorted(&a.values), sorted(&b.values));
    let (na, nb) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    // |i/na - j/nb| kept as the integer |i*nb - j*na| and divided once
    let mut sup = 0usize;
    while i < xs.len() && j < ys.len() {
        let t = xs[i].min(ys[j]);
        // Step past every sample equal to t so ties move both ECDFs together.
        while i < xs.len() && xs[i] <= t {
            i += 1;
        }
        while j < ys.len() && ys[j] <= t {
            j += 1;
        }
        sup = sup.max((i * nb).abs_diff(j * na));
    }
    sup as f64 / (na * nb) as f64
}

/// Equal-width histogram over `[min, max]`; returns `(left_edge, count)`.
///
/// The maximum lands in the last bin. A single distinct value puts every
/// sample in the first bin.
pub fn histogram(s: &SampleSet, bins: usize) -> Result<Vec<(f64, usize)>> {
    if bins == 0 {
        return Err(TlcError::InvalidArgument("need at least one bin".into()));
    }
    let min = s.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = s.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in &s.values {
        let idx = if width > 0.0 {
            (((v - min) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, n)| (min + k as f64 * width, n))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    /// Spatial size of this layer relative to the network input.
    pub scale: f64,
    pub has_global_op: bool,
}

/// Layers whose spatial pooling must be given a window.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGraph {
    layers: Vec<Layer>,
}

impl LayerGraph {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if let Some(bad) = layers.iter().find(|l| !(l.scale > 0.0 && l.scale.is_finite())) {
            return Err(TlcError::InvalidArgument(format!(
                "layer {} has non-positive scale {}",
                bad.name, bad.scale
            )));
        }
        if !layers.iter().any(|l| l.has_global_op) {
            return Err(TlcError::InvalidArgument(
                "no layer has a global operation to calibrate".into(),
            ));
        }
        let mut names: Vec<&str> = layers.iter().map(|l| l.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|p| p[0] == p[1]) {
            return Err(TlcError::InvalidArgument("duplicate layer names".into()));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }
}

/// Records each flagged layer's spatial size for a `calib_h x calib_w`
/// calibration input; those sizes become the layers' windows.
///
/// Sizes are rounded half-up. Layers come back in graph order.
pub fn calibrate_windows(
    g: &LayerGraph,
    calib_h: usize,
    calib_w: usize,
) -> Result<Vec<(String, (usize, usize))>> {
    if calib_h == 0 || calib_w == 0 {
        return Err(TlcError::InvalidArgument(format!(
            "calibration size must be positive, got {calib_h}x{calib_w}"
        )));
    }
    let round = |v: f64| (v + 0.5).floor() as usize;
    g.layers
        .iter()
        .filter(|l| l.has_global_op)
        .map(|l| {
            let kh = round(calib_h as f64 * l.scale);
            let kw = round(calib_w as f64 * l.scale);
            if kh < 1 || kw < 1 {
                return Err(TlcError::DegenerateScale {
                    layer: l.name.clone(),
                });
            }
            Ok((l.name.clone(), (kh, kw)))
        })
        .collect()
}

/// Parameters of the patch-versus-image shift experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftExperiment {
    pub samples: usize,
    pub channels: usize,
    pub map: (usize, usize),
    pub patch: (usize, usize),
    pub source: SourceKind,
    pub weight_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceKind {
    Constant(f64),
    WhiteNoise,
    /// [`VaryingFieldSource`] behind a [`SyntheticStack`].
    Stack,
}

impl Default for ShiftExperiment {
    fn default() -> Self {
        Self {
            samples: 500,
            channels: 2,
            map: (128, 128),
            patch: (32, 32),
            source: SourceKind::Stack,
            weight_seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShiftReport {
    pub train: SampleSet,
    pub test: SampleSet,
    pub tlc: SampleSet,
    pub ks_train_test: f64,
    pub ks_train_tlc: f64,
}

impl ShiftReport {
    /// Windowed pooling is strictly closer to the training distribution,
    /// or both gaps are already zero.
    pub fn shift_reduced(&self) -> bool {
        self.ks_train_tlc < self.ks_train_test
            || (self.ks_train_tlc == 0.0 && self.ks_train_test == 0.0)
    }
}

impl ShiftExperiment {
    fn source(&self) -> Box<dyn MapSource> {
        let (h, w) = self.map;
        match self.source {
            SourceKind::Constant(value) => Box::new(ConstantSource {
                channels: self.channels,
                height: h,
                width: w,
                value,
            }),
            SourceKind::WhiteNoise => Box::new(WhiteNoiseSource {
                channels: self.channels,
                height: h,
                width: w,
                std_dev: 1.0,
            }),
            SourceKind::Stack => Box::new(SyntheticStack::new(
                VaryingFieldSource::new(self.channels, h, w),
                self.weight_seed,
            )),
        }
    }

    /// Samples the three populations from one seeded stream, in the order
    /// train, test, windowed.
    pub fn run(&self, seed: u64) -> Result<ShiftReport> {
        let source = self.source();
        let mut rng = rng::seeded(seed);
        let window = WindowSpec::new(self.patch.0, self.patch.1)?;
        let train = sample_pooled_stats(source.as_ref(), self.samples, Some(self.patch), None, &mut rng)?;
        let test = sample_pooled_stats(source.as_ref(), self.samples, None, None, &mut rng)?;
        let tlc = sample_pooled_stats(source.as_ref(), self.samples, None, Some(window), &mut rng)?;
        Ok(ShiftReport {
            ks_train_test: ks_distance(&train, &test),
            ks_train_tlc: ks_distance(&train, &tlc),
            train,
            test,
            tlc,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[f64]) -> SampleSet {
        SampleSet::new(SampleLabel::TestImage, v.to_vec()).unwrap()
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance(&set(&[1.0, 2.0, 3.0]), &set(&[1.0, 2.0, 3.0])), 0.0);
        assert_eq!(ks_distance(&set(&[0.0, 0.5]), &set(&[1.0, 2.0, 9.0])), 1.0);
        let d = ks_distance(&set(&[1.0, 2.0, 3.0]), &set(&[2.0, 3.0, 4.0]));
        assert!((d - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ks_handles_ties_across_sets() {
        // ECDFs agree at every step point.
        assert_eq!(ks_distance(&set(&[1.0, 1.0, 2.0, 2.0]), &set(&[1.0, 2.0])), 0.0);
    }

    #[test]
    fn sample_set_validation() {
        assert!(SampleSet::new(SampleLabel::TrainPatch, vec![]).is_err());
        assert!(SampleSet::new(SampleLabel::TrainPatch, vec![f64::NAN]).is_err());
    }

    #[test]
    fn histogram_cases() {
        assert_eq!(histogram(&set(&[2.0; 5]), 4).unwrap()[0], (2.0, 5));
        let h = histogram(&set(&[0.0, 1.0]), 2).unwrap();
        assert_eq!(h, vec![(0.0, 1), (0.5, 1)]);
        assert!(histogram(&set(&[1.0]), 0).is_err());
    }

    #[test]
    fn histogram_uniform_band() {
        let mut rng = rng::seeded(42);
        let s = set(&(0..1000).map(|_| rng::uniform(&mut rng)).collect::<Vec<_>>());
        let h = histogram(&s, 10).unwrap();
        assert_eq!(h.iter().map(|b| b.1).sum::<usize>(), 1000);
        assert!(h.iter().all(|&(_, n)| (60..=140).contains(&n)), "{h:?}");
    }

    fn three_layer() -> LayerGraph {
        LayerGraph::new(vec![
            Layer { name: "enc1".into(), scale: 1.0, has_global_op: true },
            Layer { name: "enc2".into(), scale: 0.5, has_global_op: true },
            Layer { name: "enc3".into(), scale: 0.25, has_global_op: true },
        ])
        .unwrap()
    }

    #[test]
    fn calibration_examples() {
        let w = calibrate_windows(&three_layer(), 384, 384).unwrap();
        let sizes: Vec<_> = w.iter().map(|(_, k)| *k).collect();
        assert_eq!(sizes, vec![(384, 384), (192, 192), (96, 96)]);
        let w = calibrate_windows(&three_layer(), 720, 1280).unwrap();
        assert_eq!(w[2], ("enc3".to_string(), (180, 320)));
    }

    #[test]
    fn calibration_errors() {
        let g = LayerGraph::new(vec![Layer { name: "deep".into(), scale: 0.01, has_global_op: true }]).unwrap();
        assert!(matches!(calibrate_windows(&g, 10, 10), Err(TlcError::DegenerateScale { .. })));
        assert!(LayerGraph::new(vec![Layer { name: "a".into(), scale: 1.0, has_global_op: false }]).is_err());
        assert!(LayerGraph::new(vec![Layer { name: "a".into(), scale: -1.0, has_global_op: true }]).is_err());
    }

    #[test]
    fn constant_source_has_no_shift() {
        let exp = ShiftExperiment {
            samples: 20,
            map: (16, 16),
            patch: (4, 4),
            source: SourceKind::Constant(0.25),
            ..Default::default()
        };
        let r = exp.run(1).unwrap();
        assert_eq!(r.ks_train_test, 0.0);
        assert_eq!(r.ks_train_tlc, 0.0);
        assert!(r.train.values().iter().all(|&v| v == 0.25));
        assert!(r.shift_reduced());
    }

    #[test]
    fn full_size_patch_is_the_test_statistic() {
        let src = WhiteNoiseSource { channels: 1, height: 8, width: 8, std_dev: 1.0 };
        let a = sample_pooled_stats(&src, 50, Some((8, 8)), None, &mut rng::seeded(5)).unwrap();
        let b = sample_pooled_stats(&src, 50, None, None, &mut rng::seeded(5)).unwrap();
        // Same maps in the same order; the placement draws come after each map.
        assert!((a.values()[0] - b.values()[0]).abs() < 1e-12);
        assert_eq!(a.label(), SampleLabel::TrainPatch);
    }

    #[test]
    fn oversized_patch_is_rejected() {
        let src = ConstantSource { channels: 1, height: 8, width: 8, value: 0.0 };
        let err = sample_pooled_stats(&src, 3, Some((9, 2)), None, &mut rng::seeded(0)).unwrap_err();
        assert!(matches!(err, TlcError::PatchTooLarge { .. }));
    }
}
