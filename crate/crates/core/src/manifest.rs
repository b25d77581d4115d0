//! Flat `key=value` files: run configs and module parameter manifests.
//!
//! One pair per line; blank lines and lines starting with `#` are skipped;
//! keys and values are trimmed. In a parameter manifest, tensor-valued
//! keys name `TLCT` files relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Result, TlcError};
use crate::fusion::AttnParams;
use crate::modules::{NormParams, SeParams, DEFAULT_NORM_EPS};
use crate::tensor::{read_tensor, write_tensor, FeatureMap};

pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            TlcError::InvalidArgument(format!("line {}: expected key=value, got {line:?}", n + 1))
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_key_values(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    parse_key_values(&fs::read_to_string(path)?)
}

pub const SE_REDUCE: &str = "se.reduce";
pub const SE_EXPAND: &str = "se.expand";
pub const NORM_GAMMA: &str = "norm.gamma";
pub const NORM_BETA: &str = "norm.beta";
pub const NORM_EPS: &str = "norm.eps";
pub const NORM_GROUPS: &str = "norm.groups";
pub const ATTN_TEMPERATURE: &str = "attn.temperature";

/// Parameters loaded from a manifest; each block is present only when its
/// keys are.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamManifest {
    pub se: Option<SeParams>,
    pub norm: Option<NormParams>,
    pub attn: Option<AttnParams>,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| TlcError::InvalidArgument(format!("{key}: cannot parse {v:?}")))
}

/// Flattened values of a tensor stored as `1 x rows x cols`.
fn matrix(map: &FeatureMap, key: &str) -> Result<(usize, usize, Vec<f64>)> {
    if map.channels() != 1 {
        return Err(TlcError::ShapeMismatch(format!(
            "{key}: expected a 1xRxC tensor, got {:?}",
            map.dims()
        )));
    }
    Ok((map.height(), map.width(), map.data().to_vec()))
}

impl ParamManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let kv = read_key_values(path)?;
        let tensor = |key: &str| -> Result<Option<FeatureMap>> {
            kv.get(key).map(|rel| read_tensor(base.join(rel))).transpose()
        };

        let se = match (tensor(SE_REDUCE)?, tensor(SE_EXPAND)?) {
            (Some(r), Some(e)) => {
                let (c, hidden, reduce) = matrix(&r, SE_REDUCE)?;
                let (eh, ec, expand) = matrix(&e, SE_EXPAND)?;
                if (eh, ec) != (hidden, c) || hidden == 0 || c % hidden != 0 {
                    return Err(TlcError::ShapeMismatch(format!(
                        "se.reduce is {c}x{hidden} but se.expand is {eh}x{ec}"
                    )));
                }
                Some(SeParams::new(c, c / hidden, reduce, expand)?)
            }
            (None, None) => None,
            _ => {
                return Err(TlcError::InvalidArgument(
                    "se.reduce and se.expand must be given together".into(),
                ))
            }
        };

        let norm = match (tensor(NORM_GAMMA)?, tensor(NORM_BETA)?) {
            (Some(g), Some(b)) => {
                let eps = kv.get(NORM_EPS).map(|v| parse_num(NORM_EPS, v)).transpose()?;
                let groups = kv
                    .get(NORM_GROUPS)
                    .map(|v| parse_num(NORM_GROUPS, v))
                    .transpose()?
                    .unwrap_or(g.data().len());
                Some(NormParams::new(
                    g.data().to_vec(),
                    b.data().to_vec(),
                    eps.unwrap_or(DEFAULT_NORM_EPS),
                    groups,
                )?)
            }
            (None, None) => None,
            _ => {
                return Err(TlcError::InvalidArgument(
                    "norm.gamma and norm.beta must be given together".into(),
                ))
            }
        };

        let attn = kv
            .get(ATTN_TEMPERATURE)
            .map(|v| parse_num(ATTN_TEMPERATURE, v).and_then(AttnParams::new))
            .transpose()?;

        Ok(Self { se, norm, attn })
    }

    /// Writes the manifest and its tensors into `dir`, returning the
    /// manifest path.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let mut lines = Vec::new();
        if let Some(se) = &self.se {
            let (c, h) = (se.channels(), se.hidden());
            write_tensor(&FeatureMap::new(1, c, h, se.reduce().to_vec())?, dir.join("se_reduce.tlct"))?;
            write_tensor(&FeatureMap::new(1, h, c, se.expand().to_vec())?, dir.join("se_expand.tlct"))?;
            lines.push(format!("{SE_REDUCE}=se_reduce.tlct"));
            lines.push(format!("{SE_EXPAND}=se_expand.tlct"));
        }
        if let Some(n) = &self.norm {
            let c = n.channels();
            write_tensor(&FeatureMap::new(1, 1, c, n.gamma.clone())?, dir.join("norm_gamma.tlct"))?;
            write_tensor(&FeatureMap::new(1, 1, c, n.beta.clone())?, dir.join("norm_beta.tlct"))?;
            lines.push(format!("{NORM_GAMMA}=norm_gamma.tlct"));
            lines.push(format!("{NORM_BETA}=norm_beta.tlct"));
            lines.push(format!("{NORM_EPS}={}", n.eps));
            lines.push(format!("{NORM_GROUPS}={}", n.groups));
        }
        if let Some(a) = &self.attn {
            lines.push(format!("{ATTN_TEMPERATURE}={}", a.temperature()));
        }
        let path = dir.join("params.txt");
        fs::write(&path, lines.join("\n") + "\n")?;
        Ok(path)
    }
}
