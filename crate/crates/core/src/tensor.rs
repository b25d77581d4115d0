//! Feature-map data model, the `TLCT` tensor file format and PSNR.
//!
//! A [`FeatureMap`] stores `C x H x W` values with channels outermost and
//! rows row-major inside each channel, so every channel is one contiguous
//! slice. Values are held as `f64` in memory and narrowed to `f32` on disk.
//!
//! File layout (little-endian):
//!
//! | bytes  | content            |
//! |--------|--------------------|
//! | 0..4   | magic `TLCT`       |
//! | 4..8   | `u32` version = 1  |
//! | 8..12  | `u32` C            |
//! | 12..16 | `u32` H            |
//! | 16..20 | `u32` W            |
//! | 20..   | `C*H*W` `f32`      |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, TlcError};

pub const MAGIC: &[u8; 4] = b"TLCT";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// A `C x H x W` grid of finite activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(TlcError::ShapeMismatch(format!(
                "dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(TlcError::ShapeMismatch(format!(
                "{channels}x{height}x{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TlcError::NonFiniteValue { index });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// Builds a map from a per-element function of `(c, i, j)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    /// Stacks equally sized planes as channels.
    pub fn from_planes(planes: Vec<Plane>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| TlcError::ShapeMismatch("no planes to stack".into()))?;
        let (h, w) = (first.height, first.width);
        if planes.iter().any(|p| p.height != h || p.width != w) {
            return Err(TlcError::ShapeMismatch("planes differ in size".into()));
        }
        let channels = planes.len();
        let mut data = Vec::with_capacity(channels * h * w);
        for p in planes {
            data.extend_from_slice(&p.data);
        }
        Self::new(channels, h, w, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn channel(&self, c: usize) -> PlaneView<'_> {
        let len = self.height * self.width;
        PlaneView {
            height: self.height,
            width: self.width,
            data: &self.data[c * len..(c + 1) * len],
        }
    }

    pub fn planes(&self) -> impl Iterator<Item = PlaneView<'_>> {
        (0..self.channels).map(move |c| self.channel(c))
    }

    /// Copies the `h x w` region whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<FeatureMap> {
        if h == 0 || w == 0 || top + h > self.height || left + w > self.width {
            return Err(TlcError::ShapeMismatch(format!(
                "crop {h}x{w} at ({top},{left}) outside {}x{}",
                self.height, self.width
            )));
        }
        FeatureMap::from_fn(self.channels, h, w, |c, i, j| {
            self.get(c, top + i, left + j)
        })
    }

    /// Applies `f` to every element, keeping the shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<FeatureMap> {
        FeatureMap::new(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// Borrowed single-channel `H x W` plane.
#[derive(Debug, Clone, Copy)]
pub struct PlaneView<'a> {
    pub height: usize,
    pub width: usize,
    pub data: &'a [f64],
}

impl<'a> PlaneView<'a> {
    pub fn new(height: usize, width: usize, data: &'a [f64]) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(TlcError::ShapeMismatch(format!(
                "plane {height}x{width} with {} values",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    pub fn to_plane(&self) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.to_vec(),
        }
    }
}

/// Owned single-channel `H x W` plane, the output of the windowed kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        PlaneView::new(height, width, &data)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn view(&self) -> PlaneView<'_> {
        PlaneView {
            height: self.height,
            width: self.width,
            data: &self.data,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }
}

/// Where the window sits relative to the pixel that receives its result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alignment {
    /// Result goes to `top_left + (K - 1) / 2` on each axis.
    #[default]
    Centered,
}

/// How pixels without a full window are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdgeMode {
    /// Replicate the boundary of the interior result map.
    #[default]
    ReplicateResult,
}

/// Local window size `K_h x K_w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub k_h: usize,
    pub k_w: usize,
    pub alignment: Alignment,
    pub edge_mode: EdgeMode,
}

impl WindowSpec {
    pub fn new(k_h: usize, k_w: usize) -> Result<Self> {
        if k_h == 0 || k_w == 0 {
            return Err(TlcError::InvalidArgument(format!(
                "window must be at least 1x1, got {k_h}x{k_w}"
            )));
        }
        Ok(Self {
            k_h,
            k_w,
            alignment: Alignment::Centered,
            edge_mode: EdgeMode::ReplicateResult,
        })
    }

    pub fn square(k: usize) -> Result<Self> {
        Self::new(k, k)
    }

    /// Window clamped to an `h x w` map.
    pub fn effective(&self, h: usize, w: usize) -> (usize, usize) {
        (self.k_h.min(h), self.k_w.min(w))
    }

    /// True when a single window covers the whole `h x w` map.
    pub fn covers(&self, h: usize, w: usize) -> bool {
        self.k_h >= h && self.k_w >= w
    }

    /// Offset from a window's top-left corner to the pixel it is assigned to.
    pub fn center_offset(&self, h: usize, w: usize) -> (usize, usize) {
        let (kh, kw) = self.effective(h, w);
        match self.alignment {
            Alignment::Centered => ((kh - 1) / 2, (kw - 1) / 2),
        }
    }
}

impl Default for WindowSpec {
    /// 384 x 384, the calibrated window for full-resolution restoration.
    fn default() -> Self {
        Self {
            k_h: 384,
            k_w: 384,
            alignment: Alignment::Centered,
            edge_mode: EdgeMode::ReplicateResult,
        }
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<FeatureMap> {
    decode_tensor(&fs::read(path)?)
}

pub fn write_tensor(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_tensor(map))?;
    file.flush()?;
    Ok(())
}

pub fn encode_tensor(map: &FeatureMap) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * map.data.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in [map.channels, map.height, map.width] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &map.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_tensor(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < HEADER_LEN {
        return Err(TlcError::MalformedHeader(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(TlcError::MalformedHeader(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(TlcError::MalformedHeader(format!(
            "unsupported version {version}"
        )));
    }
    let (c, h, w) = (word(8) as usize, word(12) as usize, word(16) as usize);
    if c == 0 || h == 0 || w == 0 {
        return Err(TlcError::MalformedHeader(format!(
            "zero dimension in {c}x{h}x{w}"
        )));
    }
    let expected = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| TlcError::MalformedHeader(format!("{c}x{h}x{w} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    let found = payload.len() / 4;
    if found < expected {
        return Err(TlcError::TruncatedPayload { expected, found });
    }
    let data = payload
        .chunks_exact(4)
        .take(expected)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    FeatureMap::new(c, h, w, data)
}

/// Mean squared error and PSNR of a candidate against a reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    /// `+inf` exactly when `mse == 0`.
    pub psnr_db: f64,
}

pub fn psnr(reference: &FeatureMap, candidate: &FeatureMap, peak: f64) -> Result<MetricReport> {
    if reference.dims() != candidate.dims() {
        return Err(TlcError::ShapeMismatch(format!(
            "psnr of {:?} against {:?}",
            reference.dims(),
            candidate.dims()
        )));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(TlcError::InvalidArgument(format!(
            "peak must be positive, got {peak}"
        )));
    }
    let sum: f64 = reference
        .data
        .iter()
        .zip(&candidate.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let mse = sum / reference.data.len() as f64;
    Ok(MetricReport {
        mse,
        psnr_db: psnr_from_mse(mse, peak),
    })
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// CSV rendering of a real value; infinities become `inf` / `-inf`.
pub fn format_real(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map_1x2x2() -> FeatureMap {
        FeatureMap::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn rejects_wrong_length_and_non_finite() {
        assert!(matches!(
            FeatureMap::new(1, 2, 2, vec![0.0; 3]),
            Err(TlcError::ShapeMismatch(_))
        ));
        assert!(matches!(
            FeatureMap::new(1, 1, 2, vec![0.0, f64::NAN]),
            Err(TlcError::NonFiniteValue { index: 1 })
        ));
        assert!(FeatureMap::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn file_round_trip_small() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tlct");
        write_tensor(&map_1x2x2(), &path).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), map_1x2x2());
    }

    #[test]
    fn single_value_file_is_24_bytes() {
        let m = FeatureMap::new(1, 1, 1, vec![0.0]).unwrap();
        let bytes = encode_tensor(&m);
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[0..4], b"TLCT");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &0f32.to_le_bytes());
    }

    #[test]
    fn bad_magic_is_malformed() {
        let mut bytes = encode_tensor(&map_1x2x2());
        bytes[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            decode_tensor(&bytes),
            Err(TlcError::MalformedHeader(_))
        ));
    }

    #[test]
    fn bad_version_is_malformed() {
        let mut bytes = encode_tensor(&map_1x2x2());
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_tensor(&bytes),
            Err(TlcError::MalformedHeader(_))
        ));
    }

    #[test]
    fn short_payload_is_truncated() {
        let bytes = encode_tensor(&map_1x2x2());
        let err = decode_tensor(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(
            err,
            TlcError::TruncatedPayload {
                expected: 4,
                found: 3
            }
        ));
    }

    #[test]
    fn nan_payload_is_rejected() {
        let mut bytes = encode_tensor(&map_1x2x2());
        bytes[24..28].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(
            decode_tensor(&bytes),
            Err(TlcError::NonFiniteValue { index: 1 })
        ));
    }

    #[test]
    fn unwritable_path_is_io_failure() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("m.tlct");
        assert!(matches!(
            write_tensor(&map_1x2x2(), path),
            Err(TlcError::Io(_))
        ));
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let m = map_1x2x2();
        let r = psnr(&m, &m, 1.0).unwrap();
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.psnr_db, f64::INFINITY);
        assert_eq!(format_real(r.psnr_db), "inf");
    }

    #[test]
    fn psnr_uniform_offset() {
        let a = FeatureMap::filled(2, 3, 3, 100.0).unwrap();
        let b = FeatureMap::filled(2, 3, 3, 110.0).unwrap();
        let r = psnr(&a, &b, 255.0).unwrap();
        assert_eq!(r.mse, 100.0);
        assert!((r.psnr_db - 28.130_803_608_679_1).abs() < 1e-9);
    }

    #[test]
    fn psnr_shape_mismatch() {
        let a = FeatureMap::filled(1, 2, 2, 0.0).unwrap();
        let b = FeatureMap::filled(1, 2, 3, 0.0).unwrap();
        assert!(matches!(psnr(&a, &b, 1.0), Err(TlcError::ShapeMismatch(_))));
    }

    #[test]
    fn window_clamps_to_map() {
        let w = WindowSpec::new(384, 5).unwrap();
        assert_eq!(w.effective(100, 100), (100, 5));
        assert_eq!(w.center_offset(100, 100), (49, 2));
        assert!(WindowSpec::new(0, 3).is_err());
        assert_eq!(WindowSpec::default().effective(1000, 1000), (384, 384));
    }

    fn arb_map() -> impl Strategy<Value = FeatureMap> {
        (1usize..4, 1usize..9, 1usize..9).prop_flat_map(|(c, h, w)| {
            proptest::collection::vec(-1e6f32..1e6f32, c * h * w).prop_map(move |v| {
                FeatureMap::new(c, h, w, v.into_iter().map(f64::from).collect()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn encode_decode_is_identity(m in arb_map()) {
            prop_assert_eq!(decode_tensor(&encode_tensor(&m)).unwrap(), m);
        }

        #[test]
        fn psnr_symmetric_and_scale_invariant(
            (a, b) in (1usize..3, 1usize..6, 1usize..6).prop_flat_map(|(c, h, w)| {
                let n = c * h * w;
                (proptest::collection::vec(-10.0f64..10.0, n), proptest::collection::vec(-10.0f64..10.0, n))
                    .prop_map(move |(x, y)| (FeatureMap::new(c, h, w, x).unwrap(), FeatureMap::new(c, h, w, y).unwrap()))
            }),
            s in 0.01f64..100.0,
        ) {
            let ab = psnr(&a, &b, 20.0).unwrap();
            let ba = psnr(&b, &a, 20.0).unwrap();
            prop_assert_eq!(ab.mse, ba.mse);
            let sa = a.map(|v| v * s).unwrap();
            let sb = b.map(|v| v * s).unwrap();
            let scaled = psnr(&sa, &sb, 20.0 * s).unwrap();
            if ab.psnr_db.is_finite() {
                prop_assert!((scaled.psnr_db - ab.psnr_db).abs() <= 1e-9 * ab.psnr_db.abs().max(1.0));
            }
        }
    }
}
