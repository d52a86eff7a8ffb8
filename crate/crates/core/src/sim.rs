//! Single-snapshot scene simulation and one-bit quantization.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{steering_vector, ArrayGeometry, GridSpec, C64};

/// Complex sign: `sign(re) + j sign(im)` with `sign(0) = +1`.
#[inline]
pub fn csgn_scalar(z: C64) -> C64 {
    let s = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
    C64::new(s(z.re), s(z.im))
}

pub fn csgn(z: &DVector<C64>) -> DVector<C64> {
    z.map(csgn_scalar)
}

/// Noise standard deviation for a unit-amplitude source at `snr_db`.
pub fn snr_to_sigma(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

/// Mixes a base seed with a path of indices into an independent sub-seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter()
        .fold(splitmix(seed), |acc, &i| splitmix(acc ^ splitmix(i.wrapping_add(0x632b_e59b))))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceScene {
    pub doas: Vec<f64>,
    pub coeffs: Vec<C64>,
    /// Noise standard deviation per complex sample.
    pub sigma: f64,
}

impl SourceScene {
    pub fn k(&self) -> usize {
        self.doas.len()
    }

    pub fn validate(&self, n_elements: usize) -> Result<()> {
        let k = self.doas.len();
        if k == 0 {
            return Err(Error::Scene("no sources".into()));
        }
        if k >= n_elements {
            return Err(Error::Scene(format!(
                "{k} sources on a {n_elements}-element array"
            )));
        }
        if self.coeffs.len() != k {
            return Err(Error::Scene(format!(
                "{} coefficients for {k} sources",
                self.coeffs.len()
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Scene(format!("bad noise level {}", self.sigma)));
        }
        if let Some(t) = self.doas.iter().find(|t| !(t.abs() <= 90.0)) {
            return Err(Error::Scene(format!("DOA {t} outside [-90, 90]")));
        }
        for i in 0..k {
            for j in i + 1..k {
                if self.doas[i] == self.doas[j] {
                    return Err(Error::Scene(format!("duplicate DOA {}", self.doas[i])));
                }
            }
        }
        Ok(())
    }
}

/// Quantized measurement `y` in `{+-1 +- j}^N`, plus ground truth when simulated.
#[derive(Debug, Clone, PartialEq)]
pub struct OneBitSnapshot {
    pub y: DVector<C64>,
    pub scene: Option<SourceScene>,
}

impl OneBitSnapshot {
    pub fn new(y: DVector<C64>, scene: Option<SourceScene>) -> Result<Self> {
        if let Some(z) = y.iter().find(|z| z.re.abs() != 1.0 || z.im.abs() != 1.0) {
            return Err(Error::Dimension(format!("non one-bit entry {z}")));
        }
        Ok(Self { y, scene })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn negated(&self) -> Self {
        Self {
            y: -&self.y,
            scene: self.scene.clone(),
        }
    }
}

/// Unquantized array output `sum_k a(theta_k) s_k + sigma * w`, where `w` is
/// unit-variance circular Gaussian drawn from `seed`.
pub fn simulate_unquantized(
    geom: &ArrayGeometry,
    scene: &SourceScene,
    seed: u64,
) -> Result<DVector<C64>> {
    scene.validate(geom.len())?;
    let mut z = DVector::<C64>::zeros(geom.len());
    for (&theta, &s) in scene.doas.iter().zip(&scene.coeffs) {
        z += steering_vector(geom, theta)? * s;
    }
    let mut rng = rng_from_seed(seed);
    let scale = scene.sigma * std::f64::consts::FRAC_1_SQRT_2;
    for zn in z.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *zn += C64::new(scale * re, scale * im);
    }
    Ok(z)
}

pub fn simulate_snapshot(
    geom: &ArrayGeometry,
    scene: &SourceScene,
    seed: u64,
) -> Result<OneBitSnapshot> {
    let z = simulate_unquantized(geom, scene, seed)?;
    Ok(OneBitSnapshot {
        y: csgn(&z),
        scene: Some(scene.clone()),
    })
}

/// Complex amplitude with real and imaginary parts drawn from `U(lo, hi)`.
pub fn random_coeff<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> C64 {
    C64::new(rng.random_range(lo..hi), rng.random_range(lo..hi))
}

/// On-grid magnitude label and signed off-grid gap label (degrees).
pub fn label_sample(scene: &SourceScene, grid: &GridSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = grid.len();
    let mut s_star = vec![0.0; m];
    let mut beta_star = vec![0.0; m];
    let mut taken = vec![false; m];
    for (&theta, s) in scene.doas.iter().zip(&scene.coeffs) {
        let idx = grid
            .nearest_index(theta)
            .ok_or_else(|| Error::Scene(format!("DOA {theta} outside the grid field of view")))?;
        if taken[idx] {
            return Err(Error::Scene(format!(
                "two sources map to grid point {}",
                grid.point(idx)
            )));
        }
        taken[idx] = true;
        s_star[idx] = s.norm();
        beta_star[idx] = theta - grid.point(idx);
    }
    Ok((s_star, beta_star))
}
