//! Inference for the unrolled network: an initialization block, `K1`
//! spectrum-refinement phases and `K2` phases that also predict gaps.
//!
//! Complex spectra enter the convolution stacks as real channels
//! `[Re x, Im x, Re f, Im f]` where `f` is the MM feature; the stack emits
//! `[Re dx, Im dx]` which is added back to `x`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DictionaryPair, GridSpec, C64};
use crate::sim::OneBitSnapshot;
use crate::solver::compute_v;
use crate::spectrum::SpectrumEstimate;
use crate::weights::WeightBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetArchitecture {
    #[serde(rename = "K1")]
    pub k1: usize,
    #[serde(rename = "K2")]
    pub k2: usize,
    /// Convolution layers of one phase; every phase uses the same layout.
    pub conv_spec: Vec<ConvLayer>,
    /// Output widths of the four gap-head layers. The input width is `M`.
    pub fc_spec: Vec<usize>,
    pub grid: GridSpec,
    pub bn_eps: f64,
}

pub const CONV_IN_CHANNELS: usize = 4;
pub const CONV_OUT_CHANNELS: usize = 2;
pub const FC_LAYERS: usize = 4;

impl NetArchitecture {
    /// `K1 = 4`, `K2 = 2`, convs 4->16->16->2 with kernel 3, head
    /// `M -> 256 -> 256 -> 128 -> M`.
    pub fn default_for(grid: GridSpec) -> Self {
        let conv = |i, o| ConvLayer {
            in_channels: i,
            out_channels: o,
            kernel_size: 3,
        };
        Self {
            k1: 4,
            k2: 2,
            conv_spec: vec![conv(4, 16), conv(16, 16), conv(16, 2)],
            fc_spec: vec![256, 256, 128, grid.len()],
            grid,
            bn_eps: 1e-5,
        }
    }

    pub fn m(&self) -> usize {
        self.grid.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let first = self
            .conv_spec
            .first()
            .ok_or_else(|| Error::Config("empty conv_spec".into()))?;
        if first.in_channels != CONV_IN_CHANNELS {
            return Err(Error::Config(format!(
                "first conv layer takes {} channels, expected {CONV_IN_CHANNELS}",
                first.in_channels
            )));
        }
        let last = self.conv_spec.last().unwrap();
        if last.out_channels != CONV_OUT_CHANNELS {
            return Err(Error::Config(format!(
                "last conv layer emits {} channels, expected {CONV_OUT_CHANNELS}",
                last.out_channels
            )));
        }
        for w in self.conv_spec.windows(2) {
            if w[0].out_channels != w[1].in_channels {
                return Err(Error::Config(format!(
                    "conv layers do not chain: {} -> {}",
                    w[0].out_channels, w[1].in_channels
                )));
            }
        }
        for c in &self.conv_spec {
            if c.kernel_size % 2 == 0 || c.out_channels == 0 {
                return Err(Error::Config(format!(
                    "conv kernel must be odd with nonzero channels, got {c:?}"
                )));
            }
        }
        if self.fc_spec.len() != FC_LAYERS || self.fc_spec.contains(&0) {
            return Err(Error::Config(format!(
                "gap head needs {FC_LAYERS} nonzero widths, got {:?}",
                self.fc_spec
            )));
        }
        let m = self.m();
        if self.fc_spec[FC_LAYERS - 1] != m {
            let prev = self.fc_spec[FC_LAYERS - 2];
            return Err(Error::ShapeMismatch {
                name: format!("block2.0.fc{}.weight", FC_LAYERS - 1),
                expected: vec![m, prev],
                found: vec![self.fc_spec[FC_LAYERS - 1], prev],
            });
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::Config(format!("bn_eps must be > 0, got {}", self.bn_eps)));
        }
        Ok(())
    }

    /// Every tensor name with its shape, in container order.
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let conv = |out: &mut Vec<(String, Vec<usize>)>, prefix: &str| {
            for (l, c) in self.conv_spec.iter().enumerate() {
                let p = format!("{prefix}.conv{l}");
                out.push((
                    format!("{p}.weight"),
                    vec![c.out_channels, c.in_channels, c.kernel_size],
                ));
                out.push((format!("{p}.bias"), vec![c.out_channels]));
                out.push((format!("{p}.prelu"), vec![c.out_channels]));
            }
        };
        for p in 0..self.k1 {
            conv(&mut out, &format!("block1.{p}"));
        }
        for p in 0..self.k2 {
            let prefix = format!("block2.{p}");
            conv(&mut out, &prefix);
            let mut width = self.m();
            for (l, &w) in self.fc_spec.iter().enumerate() {
                let f = format!("{prefix}.fc{l}");
                out.push((format!("{f}.weight"), vec![w, width]));
                for t in ["bias", "bn.weight", "bn.bias", "bn.running_mean", "bn.running_var"] {
                    out.push((format!("{f}.{t}"), vec![w]));
                }
                width = w;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvWeights {
    pub spec: ConvLayer,
    /// `[out][in][k]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    /// PReLU slope per output channel.
    pub prelu: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct FcWeights {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `[out][in]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub bn_weight: Vec<f64>,
    pub bn_bias: Vec<f64>,
    pub bn_mean: Vec<f64>,
    pub bn_var: Vec<f64>,
}

/// Convolution stack of one phase.
#[derive(Debug, Clone)]
pub struct PhaseWeights {
    pub(crate) convs: Vec<ConvWeights>,
}

/// Convolution stack plus gap head.
#[derive(Debug, Clone)]
pub struct GapPhaseWeights {
    pub(crate) refine: PhaseWeights,
    pub(crate) head: Vec<FcWeights>,
    pub(crate) bn_eps: f64,
    pub(crate) half_step: f64,
}

fn conv1d(input: &[f64], m: usize, w: &ConvWeights) -> Vec<f64> {
    let ConvLayer {
        in_channels: cin,
        out_channels: cout,
        kernel_size: k,
    } = w.spec;
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; cout * m];
    for o in 0..cout {
        let row = &mut out[o * m..(o + 1) * m];
        row.fill(w.bias[o]);
        for c in 0..cin {
            let x = &input[c * m..(c + 1) * m];
            for t in 0..k {
                let wt = w.weight[(o * cin + c) * k + t];
                if wt == 0.0 {
                    continue;
                }
                let shift = t as isize - pad;
                for (i, r) in row.iter_mut().enumerate() {
                    let j = i as isize + shift;
                    if j >= 0 && (j as usize) < m {
                        *r += wt * x[j as usize];
                    }
                }
            }
        }
        let a = w.prelu[o];
        for r in row.iter_mut() {
            if *r < 0.0 {
                *r *= a;
            }
        }
    }
    out
}

fn check_len(v: &DVector<C64>, m: usize, what: &str) -> Result<()> {
    if v.len() != m {
        return Err(Error::Dimension(format!("{what} has length {}, expected {m}", v.len())));
    }
    Ok(())
}

/// `x0 = A^H y`.
pub fn init_block(y: &OneBitSnapshot, dict: &DictionaryPair) -> Result<DVector<C64>> {
    if y.len() != dict.n() {
        return Err(Error::Dimension(format!(
            "snapshot has {} elements, dictionary expects {}",
            y.len(),
            dict.n()
        )));
    }
    Ok(dict.a.ad_mul(&y.y))
}

/// `A^H v(y, A, x)`: the MM pseudo-measurement back-projected onto the grid.
pub fn mm_feature(
    y: &OneBitSnapshot,
    dict: &DictionaryPair,
    x_hat: &DVector<C64>,
) -> Result<DVector<C64>> {
    let v = compute_v(&y.y, &dict.a, x_hat)?;
    Ok(dict.a.ad_mul(&v))
}

/// Residual convolution refinement `x + ConvStack([x, feature])`.
pub fn block1_phase(
    x_hat: &DVector<C64>,
    feature: &DVector<C64>,
    weights: &PhaseWeights,
) -> Result<DVector<C64>> {
    let m = x_hat.len();
    check_len(feature, m, "MM feature")?;
    let mut h = Vec::with_capacity(CONV_IN_CHANNELS * m);
    h.extend(x_hat.iter().map(|z| z.re));
    h.extend(x_hat.iter().map(|z| z.im));
    h.extend(feature.iter().map(|z| z.re));
    h.extend(feature.iter().map(|z| z.im));
    for layer in &weights.convs {
        h = conv1d(&h, m, layer);
    }
    Ok(DVector::from_fn(m, |i, _| x_hat[i] + C64::new(h[i], h[m + i])))
}

/// Refinement as in [`block1_phase`], then the gap head on `|x_next|`.
/// Gaps come out in degrees within `[-r/2, r/2]`.
pub fn block2_phase(
    x_hat: &DVector<C64>,
    feature: &DVector<C64>,
    weights: &GapPhaseWeights,
) -> Result<(DVector<C64>, Vec<f64>)> {
    let x_next = block1_phase(x_hat, feature, &weights.refine)?;
    let mut h: Vec<f64> = x_next.iter().map(|z| z.norm()).collect();
    for (l, fc) in weights.head.iter().enumerate() {
        if h.len() != fc.in_dim {
            return Err(Error::ShapeMismatch {
                name: format!("fc{l}.weight"),
                expected: vec![fc.out_dim, h.len()],
                found: vec![fc.out_dim, fc.in_dim],
            });
        }
        let mut next = Vec::with_capacity(fc.out_dim);
        for o in 0..fc.out_dim {
            let row = &fc.weight[o * fc.in_dim..(o + 1) * fc.in_dim];
            let z = fc.bias[o] + row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>();
            let var = fc.bn_var[o];
            if !(var > 0.0) {
                return Err(Error::CorruptWeights(format!(
                    "non-positive running variance {var} in fc{l}"
                )));
            }
            let bn = (z - fc.bn_mean[o]) / (var + weights.bn_eps).sqrt() * fc.bn_weight[o]
                + fc.bn_bias[o];
            next.push(bn.tanh());
        }
        h = next;
    }
    let beta = h.iter().map(|t| t * weights.half_step).collect();
    Ok((x_next, beta))
}

/// Full pass. Magnitudes are max-normalized `|x|`; gaps come from the last
/// gap phase (all zero when `K2 = 0`).
pub fn forward(
    y: &OneBitSnapshot,
    dict: &DictionaryPair,
    weights: &WeightBundle,
) -> Result<SpectrumEstimate> {
    let arch = weights.architecture();
    if arch.m() != dict.m() {
        return Err(Error::GridMismatch {
            weights: arch.m(),
            dictionary: dict.m(),
        });
    }
    if arch.grid != dict.grid {
        return Err(Error::Config(format!(
            "weights use grid {}, dictionary uses {}",
            arch.grid, dict.grid
        )));
    }
    let mut x = init_block(y, dict)?;
    for phase in weights.block1() {
        let f = mm_feature(y, dict, &x)?;
        x = block1_phase(&x, &f, phase)?;
    }
    let mut beta = vec![0.0; dict.m()];
    for phase in weights.block2() {
        let f = mm_feature(y, dict, &x)?;
        let (next, b) = block2_phase(&x, &f, phase)?;
        x = next;
        beta = b;
    }
    Ok(SpectrumEstimate::from_complex(&x, beta))
}

/// [`forward`] over many snapshots in parallel.
pub fn forward_batch(
    snapshots: &[OneBitSnapshot],
    dict: &DictionaryPair,
    weights: &WeightBundle,
) -> Vec<Result<SpectrumEstimate>> {
    snapshots
        .par_iter()
        .map(|s| forward(s, dict, weights))
        .collect()
}
