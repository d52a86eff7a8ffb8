//! `OBWT1` weight container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        5 bytes  "OBWT1"
//! version      u16
//! K1, K2, M    u32 x 3
//! fov_min, fov_max, step, bn_eps   f64 x 4
//! n_conv       u32, then n_conv x (in, out, kernel) u32
//! n_fc         u32, then n_fc x width u32
//! n_tensors    u32
//! per tensor:  name_len u16, name (UTF-8), rank u8, dims u32 x rank,
//!              f32 payload, row-major
//! ```
//!
//! The trainer also writes the architecture as JSON next to the container
//! (`<stem>.json`); when present it must agree with the embedded block.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::net::{ConvLayer, ConvWeights, FcWeights, GapPhaseWeights, NetArchitecture, PhaseWeights};

pub const WEIGHTS_MAGIC: &[u8; 5] = b"OBWT1";
pub const WEIGHTS_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "tensor of shape {dims:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Vec<usize>, value: f32) -> Self {
        let n = dims.iter().product();
        Self { dims, data: vec![value; n] }
    }
}

/// Validated, immutable network weights. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct WeightBundle {
    arch: NetArchitecture,
    version: u16,
    tensors: BTreeMap<String, Tensor>,
    block1: Vec<PhaseWeights>,
    block2: Vec<GapPhaseWeights>,
}

impl WeightBundle {
    /// Checks every tensor against the architecture. Missing, extra or
    /// misshapen tensors are rejected, as are non-positive running variances.
    pub fn from_tensors(arch: NetArchitecture, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        arch.validate()?;
        let specs = arch.tensor_specs();
        for (name, dims) in &specs {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::CorruptWeights(format!("missing tensor `{name}`")))?;
            if &t.dims != dims {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: dims.clone(),
                    found: t.dims.clone(),
                });
            }
            if name.ends_with("running_var") {
                if let Some(v) = t.data.iter().find(|v| !(**v > 0.0)) {
                    return Err(Error::CorruptWeights(format!(
                        "non-positive running variance {v} in `{name}`"
                    )));
                }
            }
        }
        if tensors.len() != specs.len() {
            let extra = tensors
                .keys()
                .find(|k| !specs.iter().any(|(n, _)| n == *k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::CorruptWeights(format!("unexpected tensor `{extra}`")));
        }

        let get = |name: String| -> Vec<f64> {
            tensors[&name].data.iter().map(|&v| v as f64).collect()
        };
        let convs = |prefix: &str| PhaseWeights {
            convs: arch
                .conv_spec
                .iter()
                .enumerate()
                .map(|(l, &spec)| ConvWeights {
                    spec,
                    weight: get(format!("{prefix}.conv{l}.weight")),
                    bias: get(format!("{prefix}.conv{l}.bias")),
                    prelu: get(format!("{prefix}.conv{l}.prelu")),
                })
                .collect(),
        };
        let block1 = (0..arch.k1).map(|p| convs(&format!("block1.{p}"))).collect();
        let block2 = (0..arch.k2)
            .map(|p| {
                let prefix = format!("block2.{p}");
                let mut width = arch.m();
                let head = arch
                    .fc_spec
                    .iter()
                    .enumerate()
                    .map(|(l, &w)| {
                        let f = format!("{prefix}.fc{l}");
                        let fc = FcWeights {
                            in_dim: width,
                            out_dim: w,
                            weight: get(format!("{f}.weight")),
                            bias: get(format!("{f}.bias")),
                            bn_weight: get(format!("{f}.bn.weight")),
                            bn_bias: get(format!("{f}.bn.bias")),
                            bn_mean: get(format!("{f}.bn.running_mean")),
                            bn_var: get(format!("{f}.bn.running_var")),
                        };
                        width = w;
                        fc
                    })
                    .collect();
                GapPhaseWeights {
                    refine: convs(&prefix),
                    head,
                    bn_eps: arch.bn_eps,
                    half_step: arch.grid.half_step(),
                }
            })
            .collect();
        Ok(Self {
            arch,
            version: WEIGHTS_VERSION,
            tensors,
            block1,
            block2,
        })
    }

    /// Zero convolutions and gap heads with identity batch norms: the
    /// network reduces to the initialization block with zero gaps.
    pub fn zeros(arch: NetArchitecture) -> Result<Self> {
        let tensors = arch
            .tensor_specs()
            .into_iter()
            .map(|(name, dims)| {
                let fill = if name.ends_with("running_var") || name.ends_with("bn.weight") {
                    1.0
                } else if name.ends_with("prelu") {
                    0.25
                } else {
                    0.0
                };
                (name, Tensor::filled(dims, fill))
            })
            .collect();
        Self::from_tensors(arch, tensors)
    }

    pub fn architecture(&self) -> &NetArchitecture {
        &self.arch
    }

    pub fn format_version(&self) -> u16 {
        self.version
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn block1(&self) -> &[PhaseWeights] {
        &self.block1
    }

    pub fn block2(&self) -> &[GapPhaseWeights] {
        &self.block2
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let a = &self.arch;
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        for v in [a.k1, a.k2, a.m()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in [a.grid.fov_min_deg, a.grid.fov_max_deg, a.grid.step_deg, a.bn_eps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(a.conv_spec.len() as u32).to_le_bytes());
        for c in &a.conv_spec {
            for v in [c.in_channels, c.out_channels, c.kernel_size] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
        out.extend_from_slice(&(a.fc_spec.len() as u32).to_le_bytes());
        for &w in &a.fc_spec {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        let specs = a.tensor_specs();
        out.extend_from_slice(&(specs.len() as u32).to_le_bytes());
        for (name, _) in specs {
            let t = &self.tensors[&name];
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        if r.take(5)? != WEIGHTS_MAGIC {
            return Err(Error::CorruptWeights("bad magic".into()));
        }
        let version = r.u16()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (k1, k2, m) = (r.u32()?, r.u32()?, r.u32()?);
        let (lo, hi, step, bn_eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let grid = GridSpec::new(lo, hi, step).map_err(|e| Error::CorruptWeights(e.to_string()))?;
        if grid.len() != m {
            return Err(Error::CorruptWeights(format!(
                "M = {m} disagrees with grid {grid} ({} points)",
                grid.len()
            )));
        }
        let n_conv = r.count(12)?;
        let mut conv_spec = Vec::with_capacity(n_conv);
        for _ in 0..n_conv {
            conv_spec.push(ConvLayer {
                in_channels: r.u32()?,
                out_channels: r.u32()?,
                kernel_size: r.u32()?,
            });
        }
        let n_fc = r.count(4)?;
        let fc_spec = (0..n_fc).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let arch = NetArchitecture {
            k1,
            k2,
            conv_spec,
            fc_spec,
            grid,
            bn_eps,
        };

        let n_tensors = r.count(3)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..n_tensors {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::CorruptWeights("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::CorruptWeights(format!("truncated payload for `{name}`")))?;
            let data = r
                .take(4 * n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if tensors.insert(name.clone(), Tensor { dims, data }).is_some() {
                return Err(Error::CorruptWeights(format!("duplicate tensor `{name}`")));
            }
        }
        if r.remaining() != 0 {
            return Err(Error::CorruptWeights(format!("{} trailing bytes", r.remaining())));
        }
        let mut bundle = Self::from_tensors(arch, tensors)?;
        bundle.version = version;
        Ok(bundle)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::CorruptWeights("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads an element count and rejects counts that cannot fit in the
    /// remaining bytes.
    fn count(&mut self, min_bytes_each: usize) -> Result<usize> {
        let n = self.u32()?;
        if n.saturating_mul(min_bytes_each) > self.remaining() {
            return Err(Error::CorruptWeights(format!("count {n} exceeds file size")));
        }
        Ok(n)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Reads a container and, if a JSON sidecar sits next to it, checks that
/// both describe the same architecture.
pub fn load_weights(path: &Path) -> Result<WeightBundle> {
    let bundle = WeightBundle::from_bytes(&fs::read(path)?)?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let declared: NetArchitecture = serde_json::from_str(&fs::read_to_string(&sidecar)?)?;
        if &declared != bundle.architecture() {
            return Err(Error::CorruptWeights(format!(
                "architecture in {} disagrees with the container",
                sidecar.display()
            )));
        }
    }
    Ok(bundle)
}

/// Writes the container and its JSON sidecar.
pub fn save_weights(bundle: &WeightBundle, path: &Path) -> Result<()> {
    fs::write(path, bundle.to_bytes())?;
    fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(bundle.architecture())?,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> NetArchitecture {
        let mut a = NetArchitecture::default_for(GridSpec::new(-10.0, 10.0, 2.0).unwrap());
        a.k1 = 1;
        a.k2 = 1;
        a
    }

    #[test]
    fn bytes_round_trip() {
        let b = WeightBundle::zeros(small_arch()).unwrap();
        let bytes = b.to_bytes();
        assert_eq!(&bytes[..5], b"OBWT1");
        let back = WeightBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back.architecture(), b.architecture());
        assert_eq!(back.tensors(), b.tensors());
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_and_version() {
        let bytes = WeightBundle::zeros(small_arch()).unwrap().to_bytes();
        for cut in [0, 4, 7, 40, bytes.len() / 2, bytes.len() - 1] {
            let err = WeightBundle::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("corrupt weight container"), "{cut}: {err}");
        }
        let mut v2 = bytes.clone();
        v2[5] = 2;
        assert!(matches!(
            WeightBundle::from_bytes(&v2),
            Err(Error::UnsupportedVersion(2))
        ));
        let mut extra = bytes;
        extra.push(0);
        assert!(WeightBundle::from_bytes(&extra).is_err());
    }

    #[test]
    fn shape_and_variance_checks() {
        let arch = small_arch();
        let mut t = WeightBundle::zeros(arch.clone()).unwrap().tensors().clone();
        t.insert("block1.0.conv1.bias".into(), Tensor::filled(vec![15], 0.0));
        match WeightBundle::from_tensors(arch.clone(), t) {
            Err(Error::ShapeMismatch { name, .. }) => assert_eq!(name, "block1.0.conv1.bias"),
            other => panic!("{other:?}"),
        }

        let mut t = WeightBundle::zeros(arch.clone()).unwrap().tensors().clone();
        t.get_mut("block2.0.fc2.bn.running_var").unwrap().data[3] = 0.0;
        assert!(WeightBundle::from_tensors(arch.clone(), t).is_err());

        let mut t = WeightBundle::zeros(arch.clone()).unwrap().tensors().clone();
        t.insert("block9.0.conv0.bias".into(), Tensor::filled(vec![1], 0.0));
        assert!(WeightBundle::from_tensors(arch.clone(), t).is_err());

        let mut t = WeightBundle::zeros(arch.clone()).unwrap().tensors().clone();
        t.remove("block1.0.conv0.prelu");
        assert!(WeightBundle::from_tensors(arch, t).is_err());
    }
}
