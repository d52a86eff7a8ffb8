use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::geometry::C64;

/// Clamp used when normalized magnitudes feed a cross-entropy loss.
pub const BCE_EPS: f64 = 1e-7;

/// Per-grid-point output of either estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    /// `|x| / max |x|`, in `[0, 1]`.
    pub magnitudes: Vec<f64>,
    /// Off-grid gaps in degrees, within half a grid interval.
    pub beta: Vec<f64>,
    /// Extracted DOAs in degrees; empty until peak extraction runs.
    pub doas: Vec<f64>,
}

impl SpectrumEstimate {
    pub fn from_complex(x: &DVector<C64>, beta: Vec<f64>) -> Self {
        Self {
            magnitudes: normalize_magnitudes(x.iter().map(|z| z.norm())),
            beta,
            doas: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }
}

/// Max-normalization shared by inference and training labels. An all-zero
/// input stays all-zero.
pub fn normalize_magnitudes<I: IntoIterator<Item = f64>>(mags: I) -> Vec<f64> {
    let mags: Vec<f64> = mags.into_iter().collect();
    let max = mags.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        mags.iter().map(|m| m / max).collect()
    } else {
        vec![0.0; mags.len()]
    }
}

/// Normalized magnitudes clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce_clamp(normalized: &[f64]) -> Vec<f64> {
    normalized
        .iter()
        .map(|v| v.clamp(BCE_EPS, 1.0 - BCE_EPS))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_magnitudes([1.0, 4.0, 2.0]), vec![0.25, 1.0, 0.5]);
        assert_eq!(normalize_magnitudes([0.0, 0.0]), vec![0.0, 0.0]);
        let c = bce_clamp(&[0.0, 1.0, 0.5]);
        assert_eq!(c, vec![BCE_EPS, 1.0 - BCE_EPS, 0.5]);
    }
}
