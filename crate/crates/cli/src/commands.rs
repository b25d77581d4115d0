use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use clap::{Args, ValueEnum};
use tlc::analysis::{
    calibrate_windows, histogram, Layer, LayerGraph, SampleSet, ShiftExperiment, SourceKind,
};
use tlc::fusion::{apply_and_fuse, default_stride, plan_tiles, seam_metric, transposed_attention, AttnParams};
use tlc::integral::{local_aggregate, local_max, local_mean_var, strided_local_mean};
use tlc::macs::{reference_host_macs, MacReport, ModuleShape};
use tlc::manifest::ParamManifest;
use tlc::modules::{cbam_channel_forward, ge_forward, norm_forward, se_forward, NormParams, SeParams};
use tlc::reference::{brute_local_aggregate, brute_local_max, brute_local_mean_var};
use tlc::restore::{run_demo, DemoConfig, NoiseProfile};
use tlc::tensor::{format_real, read_tensor, write_tensor};
use tlc::{rng, FeatureMap, Mode, ModuleKind, Plane, PlaneView, PointwiseMap, WindowSpec};

use crate::config::{CommonArgs, Settings};
use crate::error::CliError;

type CliResult<T> = Result<T, CliError>;

fn write_csv(path: &Path, header: &str, rows: &[String]) -> CliResult<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn metric_rows(pairs: &[(&str, String)]) -> Vec<String> {
    pairs.iter().map(|(k, v)| format!("{k},{v}")).collect()
}

fn save(map: &FeatureMap, dir: &Path, name: &str) -> CliResult<()> {
    write_tensor(map, dir.join(name)).map_err(CliError::from)
}

fn load(settings: &Settings) -> CliResult<FeatureMap> {
    read_tensor(settings.input()?).map_err(CliError::from)
}

fn choice<T: ValueEnum>(settings: &Settings, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
    if flag.is_some() {
        return Ok(flag);
    }
    settings
        .value::<String>(None, key)?
        .map(|raw| {
            T::from_str(&raw, true).map_err(|_| CliError::usage(format!("config {key}: unknown value {raw:?}")))
        })
        .transpose()
}

// ---------------------------------------------------------------- aggregate

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stat {
    Mean,
    /// Windowed mean of squares.
    Sq,
    Var,
    Max,
    /// Windowed mean over a strided sample grid.
    Strided,
}

#[derive(Args, Debug, Clone)]
pub struct AggregateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub stat: Option<Stat>,
    /// Sampling stride for `--stat strided`.
    #[arg(long)]
    pub r: Option<usize>,
}

fn per_channel(x: &FeatureMap, f: impl Fn(PlaneView<'_>) -> CliResult<Plane>) -> CliResult<FeatureMap> {
    let planes = x.planes().map(f).collect::<CliResult<Vec<_>>>()?;
    FeatureMap::from_planes(planes).map_err(CliError::from)
}

pub fn aggregate(args: AggregateArgs) -> CliResult<()> {
    let s = Settings::load(args.common)?;
    let stat = choice(&s, args.stat, "stat")?.unwrap_or(Stat::Mean);
    let window = s.window()?;
    let brute = s.brute_force()?;
    let x = load(&s)?;
    let out = s.output()?;

    let result = match (stat, brute) {
        (Stat::Mean, false) => per_channel(&x, |p| Ok(local_aggregate(p, PointwiseMap::Identity, &window)))?,
        (Stat::Mean, true) => per_channel(&x, |p| Ok(brute_local_aggregate(p, PointwiseMap::Identity, &window)))?,
        (Stat::Sq, false) => per_channel(&x, |p| Ok(local_aggregate(p, PointwiseMap::Square, &window)))?,
        (Stat::Sq, true) => per_channel(&x, |p| Ok(brute_local_aggregate(p, PointwiseMap::Square, &window)))?,
        (Stat::Var, false) => per_channel(&x, |p| Ok(local_mean_var(p, &window).1))?,
        (Stat::Var, true) => per_channel(&x, |p| Ok(brute_local_mean_var(p, &window).1))?,
        (Stat::Max, false) => per_channel(&x, |p| Ok(local_max(p, &window)))?,
        (Stat::Max, true) => per_channel(&x, |p| Ok(brute_local_max(p, &window)))?,
        (Stat::Strided, false) => {
            let r = s
                .value(args.r, "r")?
                .ok_or_else(|| CliError::usage("--stat strided needs --r"))?;
            per_channel(&x, |p| strided_local_mean(p, &window, r).map_err(CliError::from))?
        }
        (Stat::Strided, true) => return Err(CliError::usage("--brute-force has no strided variant")),
    };
    save(&result, &out, "result.tlct")?;

    let rows: Vec<String> = result
        .planes()
        .enumerate()
        .map(|(c, p)| {
            let min = p.data.iter().copied().fold(f64::INFINITY, f64::min);
            let max = p.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = p.data.iter().sum::<f64>() / p.data.len() as f64;
            format!("{c},{min},{max},{mean}")
        })
        .collect();
    write_csv(&out.join("summary.csv"), "channel,min,max,mean", &rows)
}

// ---------------------------------------------------------------- convert

#[derive(Args, Debug, Clone)]
pub struct ConvertArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// se, in, gn, ge or cbam.
    #[arg(long)]
    pub module: Option<ModuleKind>,
    /// Parameter manifest; SE/CBAM weights are drawn from `--seed` without one.
    #[arg(long)]
    pub params: Option<std::path::PathBuf>,
    /// SE/CBAM reduction ratio for generated weights.
    #[arg(long)]
    pub ratio: Option<usize>,
    /// Normalization groups (overrides the manifest; `in` always uses C).
    #[arg(long)]
    pub groups: Option<usize>,
    /// Backbone budget in GMACs for the overhead column; defaults to the
    /// 512x512 reference scaled by pixel count.
    #[arg(long)]
    pub host_gmacs: Option<f64>,
    /// Number of interior pixels to check against a cropped global pass.
    #[arg(long)]
    pub checks: Option<usize>,
}

/// A module ready to run in either mode.
pub enum Converted {
    Se(SeParams),
    Cbam(SeParams),
    Norm(ModuleKind, NormParams),
    Ge,
}

impl Converted {
    pub fn kind(&self) -> ModuleKind {
        match self {
            Converted::Se(_) => ModuleKind::Se,
            Converted::Cbam(_) => ModuleKind::CbamChannel,
            Converted::Norm(k, _) => *k,
            Converted::Ge => ModuleKind::GeThetaMinus,
        }
    }

    pub fn forward(&self, x: &FeatureMap, mode: Mode) -> tlc::Result<FeatureMap> {
        match self {
            Converted::Se(p) => se_forward(x, p, mode),
            Converted::Cbam(p) => cbam_channel_forward(x, p, mode),
            Converted::Norm(_, p) => norm_forward(x, p, mode),
            Converted::Ge => ge_forward(x, mode),
        }
    }

    pub fn shape(&self, x: &FeatureMap) -> ModuleShape {
        let (c, h, w) = x.dims();
        let (hidden, groups) = match self {
            Converted::Se(p) | Converted::Cbam(p) => (p.hidden(), 1),
            Converted::Norm(_, p) => (0, p.groups),
            Converted::Ge => (0, 1),
        };
        ModuleShape { kind: self.kind(), channels: c, height: h, width: w, hidden, groups }
    }
}

fn random_se(channels: usize, ratio: usize, seed: u64) -> tlc::Result<SeParams> {
    if ratio == 0 || !channels.is_multiple_of(ratio) {
        return Err(tlc::TlcError::InvalidArgument(format!(
            "--ratio {ratio} must divide {channels} channels"
        )));
    }
    let mut r = rng::seeded(seed);
    let n = channels * (channels / ratio);
    let mut draw = |n: usize| (0..n).map(|_| 2.0 * rng::uniform(&mut r) - 1.0).collect::<Vec<_>>();
    let reduce = draw(n);
    let expand = draw(n);
    SeParams::new(channels, ratio, reduce, expand)
}

/// Resolves module parameters from the manifest, flags and seed.
pub fn build_module(
    kind: ModuleKind,
    channels: usize,
    manifest: &ParamManifest,
    ratio: usize,
    groups: Option<usize>,
    seed: u64,
) -> tlc::Result<Converted> {
    let se = || match &manifest.se {
        Some(p) if p.channels() == channels => Ok(p.clone()),
        Some(p) => Err(tlc::TlcError::ShapeMismatch(format!(
            "manifest SE weights are for {} channels, input has {channels}",
            p.channels()
        ))),
        None => random_se(channels, ratio, seed),
    };
    let norm = |groups: usize| match &manifest.norm {
        Some(p) => NormParams::new(p.gamma.clone(), p.beta.clone(), p.eps, groups).and_then(|n| {
            if n.channels() == channels {
                Ok(n)
            } else {
                Err(tlc::TlcError::ShapeMismatch(format!(
                    "manifest norm parameters are for {} channels, input has {channels}",
                    n.channels()
                )))
            }
        }),
        None => NormParams::identity(channels, groups),
    };
    Ok(match kind {
        ModuleKind::Se => Converted::Se(se()?),
        ModuleKind::CbamChannel => Converted::Cbam(se()?),
        ModuleKind::GeThetaMinus => Converted::Ge,
        ModuleKind::In => Converted::Norm(kind, norm(channels)?),
        ModuleKind::Gn => {
            let g = groups
                .or(manifest.norm.as_ref().map(|p| p.groups))
                .unwrap_or(1);
            Converted::Norm(kind, norm(g)?)
        }
    })
}

/// MAC accounting used by `convert`.
pub fn convert_macs(shape: &ModuleShape, window: WindowSpec, host: Option<f64>) -> MacReport {
    let host = host.unwrap_or_else(|| reference_host_macs(shape.height, shape.width));
    MacReport::new(shape, Mode::Local(window), host)
}

pub const CROP_TOLERANCE: f64 = 1e-6;

pub fn convert(args: ConvertArgs) -> CliResult<()> {
    let s = Settings::load(args.common)?;
    let kind = s
        .value(args.module, "module")?
        .ok_or_else(|| CliError::usage("--module is required"))?;
    let window = s.window()?;
    let seed = s.seed(0)?;
    let ratio = s.value(args.ratio, "ratio")?.unwrap_or(4);
    let groups = s.value(args.groups, "groups")?;
    let host = s.value(args.host_gmacs, "host-gmacs")?.map(|g| g * 1e9);
    let checks = s.value(args.checks, "checks")?.unwrap_or(5);
    let manifest = match s.value(args.params, "params")? {
        Some(p) if !p.is_file() => return Err(CliError::io(format!("manifest {} not found", p.display()))),
        Some(p) => ParamManifest::load(p)?,
        None => ParamManifest::default(),
    };
    let x = load(&s)?;
    let out = s.output()?;
    let module = build_module(kind, x.channels(), &manifest, ratio, groups, seed)?;

    let global = module.forward(&x, Mode::Global)?;
    let local = module.forward(&x, Mode::Local(window))?;
    let absdiff = FeatureMap::new(
        x.channels(),
        x.height(),
        x.width(),
        global.data().iter().zip(local.data()).map(|(a, b)| (a - b).abs()).collect(),
    )?;
    save(&global, &out, "global.tlct")?;
    save(&local, &out, "local.tlct")?;
    save(&absdiff, &out, "absdiff.tlct")?;

    // Interior pixels: the module applied to the crop around (i, j) must
    // reproduce the windowed output there.
    let (h, w) = (x.height(), x.width());
    let (kh, kw) = window.effective(h, w);
    let (off_r, off_c) = window.center_offset(h, w);
    let mut r = rng::seeded(seed ^ 0xc0ffee);
    let mut check_rows = Vec::with_capacity(checks);
    let mut worst = 0.0f64;
    for _ in 0..checks {
        let top = rng::below(&mut r, h - kh + 1);
        let left = rng::below(&mut r, w - kw + 1);
        let crop = module.forward(&x.crop(top, left, kh, kw)?, Mode::Global)?;
        let (i, j) = (top + off_r, left + off_c);
        let diff = (0..x.channels())
            .map(|c| (crop.get(c, off_r, off_c) - local.get(c, i, j)).abs())
            .fold(0.0, f64::max);
        worst = worst.max(diff);
        check_rows.push(format!("{i},{j},{diff}"));
    }
    write_csv(&out.join("crop_checks.csv"), "row,col,max_abs_diff", &check_rows)?;

    let macs = convert_macs(&module.shape(&x), window, host);
    let n = absdiff.data().len() as f64;
    let report = metric_rows(&[
        ("module", kind.name().to_string()),
        ("window_h", kh.to_string()),
        ("window_w", kw.to_string()),
        ("max_abs_diff_global_local", absdiff.data().iter().copied().fold(0.0, f64::max).to_string()),
        ("mean_abs_diff_global_local", (absdiff.data().iter().sum::<f64>() / n).to_string()),
        ("crop_check_max_abs_diff", worst.to_string()),
        ("macs_global", macs.global.to_string()),
        ("macs_local", macs.local.to_string()),
        ("macs_extra", macs.extra().to_string()),
        ("macs_host", format!("{:.0}", macs.host)),
        ("overhead_percent", (100.0 * macs.overhead_fraction()).to_string()),
    ]);
    write_csv(&out.join("report.csv"), "metric,value", &report)?;

    if worst > CROP_TOLERANCE {
        return Err(CliError::property(format!(
            "windowed output differs from the cropped global pass by {worst}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- stats

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Constant,
    Noise,
    Stack,
}

#[derive(Args, Debug, Clone)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub source: Option<Source>,
    /// Maps drawn per population.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Full map size.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub size: Option<Vec<usize>>,
    /// Training patch size, also the conversion window.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub patch: Option<Vec<usize>>,
    /// Fill value of the constant source.
    #[arg(long)]
    pub value: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
}

pub fn stats(args: StatsArgs) -> CliResult<()> {
    let s = Settings::load(args.common)?;
    let defaults = ShiftExperiment::default();
    let source = match choice(&s, args.source, "source")?.unwrap_or(Source::Stack) {
        Source::Constant => SourceKind::Constant(s.value(args.value, "value")?.unwrap_or(0.5)),
        Source::Noise => SourceKind::WhiteNoise,
        Source::Stack => SourceKind::Stack,
    };
    let exp = ShiftExperiment {
        samples: s.value(args.samples, "samples")?.unwrap_or(defaults.samples),
        channels: s.value(args.channels, "channels")?.unwrap_or(defaults.channels),
        map: s.pair(args.size.as_ref(), "size")?.unwrap_or(defaults.map),
        patch: s.pair(args.patch.as_ref(), "patch")?.unwrap_or(defaults.patch),
        source,
        weight_seed: defaults.weight_seed,
    };
    if exp.samples < 2 || exp.channels == 0 {
        return Err(CliError::usage("need at least 2 samples and 1 channel"));
    }
    let bins = s.value(args.bins, "bins")?.unwrap_or(20);
    let seed = s.seed(42)?;
    let out = s.output()?;
    let report = exp.run(seed)?;

    let sets: [&SampleSet; 3] = [&report.train, &report.test, &report.tlc];
    let mut rows = Vec::with_capacity(3 * exp.samples);
    for set in sets {
        rows.extend(set.values().iter().map(|v| format!("{},{v}", set.label())));
    }
    write_csv(&out.join("samples.csv"), "label,value", &rows)?;
    for set in sets {
        let hist = histogram(set, bins)?;
        let rows: Vec<String> = hist.iter().map(|(left, n)| format!("{left},{n}")).collect();
        write_csv(&out.join(format!("hist_{}.csv", set.label())), "bin_left,count", &rows)?;
    }
    let reduced = report.shift_reduced();
    let summary = metric_rows(&[
        ("ks_train_test", report.ks_train_test.to_string()),
        ("ks_train_tlc", report.ks_train_tlc.to_string()),
        ("std_train_patch", report.train.std_dev().to_string()),
        ("std_test_image", report.test.std_dev().to_string()),
        ("std_test_image_tlc", report.tlc.std_dev().to_string()),
        ("shift_reduced", reduced.to_string()),
    ]);
    write_csv(&out.join("ks.csv"), "metric,value", &summary)?;
    if !reduced {
        return Err(CliError::property(format!(
            "windowed pooling did not reduce the shift: KS {} vs {}",
            report.ks_train_tlc, report.ks_train_test
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- calibrate

#[derive(Args, Debug, Clone)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Calibration (training patch) size.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub size: Option<Vec<usize>>,
    /// `name=scale` for each layer holding a global operation, in order.
    #[arg(long = "layer", value_name = "NAME=SCALE")]
    pub layers: Vec<String>,
}

pub const DEFAULT_LAYERS: &str = "enc1=1,enc2=0.5,enc3=0.25";

fn parse_layers(items: &[String]) -> CliResult<LayerGraph> {
    let layers = items
        .iter()
        .flat_map(|s| s.split(','))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (name, scale) = item
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("layer {item:?} is not name=scale")))?;
            let scale: f64 = scale
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("layer {name}: bad scale {scale:?}")))?;
            Ok(Layer { name: name.trim().to_string(), scale, has_global_op: true })
        })
        .collect::<CliResult<Vec<_>>>()?;
    LayerGraph::new(layers).map_err(|e| CliError::usage(e.to_string()))
}

pub fn calibrate(args: CalibrateArgs) -> CliResult<()> {
    let s = Settings::load(args.common)?;
    let (h, w) = s.pair(args.size.as_ref(), "size")?.unwrap_or((384, 384));
    let items = if args.layers.is_empty() {
        vec![s.value::<String>(None, "layers")?.unwrap_or_else(|| DEFAULT_LAYERS.to_string())]
    } else {
        args.layers
    };
    let graph = parse_layers(&items)?;
    let out = s.output()?;
    let windows = calibrate_windows(&graph, h, w)?;
    let rows: Vec<String> = windows.iter().map(|(n, (kh, kw))| format!("{n},{kh},{kw}")).collect();
    for r in &rows {
        println!("{r}");
    }
    write_csv(&out.join("windows.csv"), "layer,k_h,k_w", &rows)
}

// ---------------------------------------------------------------- bench

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub size: Option<Vec<usize>>,
    /// Window sizes to time (square).
    #[arg(long, num_args = 1..)]
    pub ks: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub k: usize,
    pub integral_s: f64,
    pub brute_s: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Seconds per call; fast calls are repeated until 20 ms have passed so
/// each sample is well above timer resolution.
fn time_call(mut f: impl FnMut()) -> f64 {
    let start = Instant::now();
    let mut calls = 0u32;
    loop {
        f();
        calls += 1;
        let t = start.elapsed().as_secs_f64();
        if t >= 0.02 {
            return t / calls as f64;
        }
    }
}

/// Median timings of the windowed mean, summed-area versus direct.
pub fn run_bench(x: &Plane, ks: &[usize], reps: usize) -> tlc::Result<Vec<BenchRow>> {
    ks.iter()
        .map(|&k| {
            let w = WindowSpec::square(k)?;
            // untimed warm-up of caches and the allocator
            drop(local_aggregate(x.view(), PointwiseMap::Identity, &w));
            let integral = median(
                (0..reps)
                    .map(|_| time_call(|| drop(std::hint::black_box(local_aggregate(x.view(), PointwiseMap::Identity, &w)))))
                    .collect(),
            );
            let brute = median(
                (0..reps)
                    .map(|_| time_call(|| drop(std::hint::black_box(brute_local_aggregate(x.view(), PointwiseMap::Identity, &w)))))
                    .collect(),
            );
            Ok(BenchRow { k, integral_s: integral, brute_s: brute })
        })
        .collect()
}

/// (largest / smallest integral median, last / first brute median).
pub fn bench_ratios(rows: &[BenchRow]) -> (f64, f64) {
    let fast: Vec<f64> = rows.iter().map(|r| r.integral_s).collect();
    let hi = fast.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = fast.iter().copied().fold(f64::INFINITY, f64::min);
    let brute = rows.last().map_or(1.0, |l| l.brute_s) / rows.first().map_or(1.0, |f| f.brute_s);
    (hi / lo, brute)
}

pub const MAX_INTEGRAL_RATIO: f64 = 1.5;
pub const MIN_BRUTE_RATIO: f64 = 10.0;

pub fn bench(args: BenchArgs) -> CliResult<()> {
    let s = Settings::load(args.common)?;
    let (h, w) = s.pair(args.size.as_ref(), "size")?.unwrap_or((512, 512));
    let ks = match args.ks {
        Some(ks) => ks,
        None => vec![8, 32, 128],
    };
    let reps = s.value(args.reps, "reps")?.unwrap_or(5);
    if reps == 0 || ks.is_empty() || h == 0 || w == 0 {
        return Err(CliError::usage("bench needs a non-empty size, --ks and --reps >= 1"));
    }
    let seed = s.seed(42)?;
    let out = s.output()?;
    let mut r = rng::seeded(seed);
    let x = Plane::from_fn(h, w, |_, _| rng::uniform(&mut r));
    let rows = run_bench(&x, &ks, reps)?;
    let (integral_ratio, brute_ratio) = bench_ratios(&rows);
    let csv: Vec<String> = rows
        .iter()
        .map(|r| format!("{},{:.9},{:.9}", r.k, r.integral_s, r.brute_s))
        .collect();
    write_csv(&out.join("bench.csv"), "k,integral_median_s,brute_median_s", &csv)?;
    let ok = integral_ratio < MAX_INTEGRAL_RATIO && brute_ratio > MIN_BRUTE_RATIO;
    let summary = metric_rows(&[
        ("integral_ratio", format!("{integral_ratio:.4}")),
        ("brute_ratio", format!("{brute_ratio:.4}")),
        ("pass", ok.to_string()),
    ]);
    write_csv(&out.join("ratios.csv"), "metric,value", &summary)?;
    if !ok {
        return Err(CliError::property(format!(
            "timing shape not met: integral ratio {integral_ratio:.3}, brute ratio {brute_ratio:.3}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- demo

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    TwoRegion,
    Uniform,
    Zero,
}

#[derive(Args, Debug, Clone)]
pub struct DemoArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub noise: Option<Noise>,
    /// Noise std for `--noise uniform`.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub sigma_left: Option<f64>,
    #[arg(long)]
    pub sigma_right: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub size: Option<Vec<usize>>,
}

/// Window used by `demo` when `--k` is not given.
pub const DEMO_WINDOW: (usize, usize) = (32, 32);

pub fn demo(args: DemoArgs) -> CliResult<()> {
    let s = Settings::load(args.common)?;
    let base = DemoConfig::default();
    let (dl, dr) = match base.noise {
        NoiseProfile::TwoRegion { left, right } => (left, right),
        _ => (0.05, 0.5),
    };
    let noise = match choice(&s, args.noise, "noise")?.unwrap_or(Noise::TwoRegion) {
        Noise::TwoRegion => NoiseProfile::TwoRegion {
            left: s.value(args.sigma_left, "sigma-left")?.unwrap_or(dl),
            right: s.value(args.sigma_right, "sigma-right")?.unwrap_or(dr),
        },
        Noise::Uniform => NoiseProfile::Uniform(s.value(args.sigma, "sigma")?.unwrap_or(0.2)),
        Noise::Zero => NoiseProfile::Zero,
    };
    let (height, width) = s.pair(args.size.as_ref(), "size")?.unwrap_or((base.height, base.width));
    let cfg = DemoConfig { height, width, window: s.window_or(DEMO_WINDOW)?, noise, ..base };
    let seed = s.seed(42)?;
    let out = s.output()?;
    let outcome = run_demo(&cfg, seed)?;
    let one = |p: &Plane| FeatureMap::from_planes(vec![p.clone()]);
    save(&one(&outcome.scene.clean)?, &out, "clean.tlct")?;
    save(&one(&outcome.scene.noisy)?, &out, "noisy.tlct")?;
    save(&one(&outcome.scene.noise_reference)?, &out, "noise_reference.tlct")?;
    save(&one(&outcome.restored_global)?, &out, "restored_global.tlct")?;
    save(&one(&outcome.restored_local)?, &out, "restored_local.tlct")?;
    let report = metric_rows(&[
        ("psnr_noisy_db", format_real(outcome.psnr_noisy)),
        ("psnr_global_db", format_real(outcome.psnr_global)),
        ("psnr_local_db", format_real(outcome.psnr_local)),
        ("gain_db", format_real(outcome.gain_db())),
    ]);
    write_csv(&out.join("report.csv"), "metric,value", &report)
}

// ---------------------------------------------------------------- fuse

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// Channel-token attention inside each window.
    Attention,
    /// Each window replaced by its per-channel mean.
    Mean,
}

#[derive(Args, Debug, Clone)]
pub struct FuseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub transform: Option<Transform>,
    /// Attention temperature (else the manifest's, else 1).
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub params: Option<std::path::PathBuf>,
}

fn window_mean(m: &FeatureMap) -> tlc::Result<FeatureMap> {
    let n = (m.height() * m.width()) as f64;
    let means: Vec<f64> = m.planes().map(|p| p.data.iter().sum::<f64>() / n).collect();
    FeatureMap::from_fn(m.channels(), m.height(), m.width(), |c, _, _| means[c])
}

pub const IDENTITY_TOLERANCE: f64 = 1e-12;

pub fn fuse(args: FuseArgs) -> CliResult<()> {
    let s = Settings::load(args.common)?;
    let transform = choice(&s, args.transform, "transform")?.unwrap_or(Transform::Identity);
    let window = s.window()?;
    let x = load(&s)?;
    let (h, w) = (x.height(), x.width());
    let win = window.effective(h, w);
    let stride = s.stride()?.unwrap_or_else(|| default_stride(win));
    let plan = plan_tiles(h, w, (window.k_h, window.k_w), stride).map_err(|e| CliError::usage(e.to_string()))?;
    let manifest_temp = match s.value(args.params, "params")? {
        Some(p) if !p.is_file() => return Err(CliError::io(format!("manifest {} not found", p.display()))),
        Some(p) => ParamManifest::load(p)?.attn.map(|a| a.temperature()),
        None => None,
    };
    let attn = AttnParams::new(s.value(args.temperature, "temperature")?.or(manifest_temp).unwrap_or(1.0))?;
    let out = s.output()?;

    let fused = match transform {
        Transform::Identity => apply_and_fuse(&x, &plan, |m| Ok(m.clone()))?,
        Transform::Attention => apply_and_fuse(&x, &plan, |m| transposed_attention(m, &attn))?,
        Transform::Mean => apply_and_fuse(&x, &plan, window_mean)?,
    };
    save(&fused, &out, "fused.tlct")?;
    let max_diff = x.data().iter().zip(fused.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut boundaries = String::new();
    for b in plan.row_boundaries() {
        let _ = write!(boundaries, "r{b} ");
    }
    for b in plan.col_boundaries() {
        let _ = write!(boundaries, "c{b} ");
    }
    let report = metric_rows(&[
        ("placements", plan.placements.len().to_string()),
        ("window_h", plan.window.0.to_string()),
        ("window_w", plan.window.1.to_string()),
        ("stride_h", plan.stride.0.to_string()),
        ("stride_w", plan.stride.1.to_string()),
        ("boundaries", boundaries.trim_end().to_string()),
        ("seam_input", seam_metric(&x, &plan)?.to_string()),
        ("seam_fused", seam_metric(&fused, &plan)?.to_string()),
        ("max_abs_diff_vs_input", max_diff.to_string()),
    ]);
    write_csv(&out.join("seam.csv"), "metric,value", &report)?;
    if transform == Transform::Identity && max_diff > IDENTITY_TOLERANCE {
        return Err(CliError::property(format!("identity fusion changed the input by {max_diff}")));
    }
    Ok(())
}
