//! OGBRIM: sparse-Bayesian MM solver for one-bit off-grid DOA estimation.
//!
//! Each iteration majorizes the one-bit probit likelihood by a quadratic
//! around the current fit, which turns the problem into a regularized least
//! squares fit of the pseudo-measurement `v` (see [`compute_v`]):
//!
//! ```text
//! min_x,beta  1/2 ||C(beta) x - v||^2 + (lambda/alpha) sum_i (|x_i|^2 + eta)^(alpha/2)
//! ```
//!
//! `x` is refreshed by one reweighted least-squares step ([`update_x`]) and,
//! after a warm-up, the off-grid gaps by a least-squares fit on the active
//! support ([`update_beta`]).

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::parse_value;
use crate::error::{Error, Result};
use crate::geometry::{effective_dictionary, DictionaryPair, GridSpec, C64};
use crate::mills::i_prime;
use crate::sim::OneBitSnapshot;
use crate::spectrum::SpectrumEstimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Prior weight.
    pub lambda: f64,
    /// Prior exponent, `0 < alpha <= 1`.
    pub alpha: f64,
    /// Smoothing constant of the prior.
    pub eta: f64,
    pub max_iters: usize,
    /// Stop once `||x_new - x|| / ||x||` falls below this (after gap updates
    /// have started).
    pub tol: f64,
    /// Iteration index from which the gaps are re-estimated.
    pub beta_update_start: usize,
    /// Grid points with `|x_m| >= support_threshold * max |x|` form the
    /// support of the gap update.
    pub support_threshold: f64,
    pub grid: GridSpec,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 3.0,
            alpha: 1.0,
            eta: 1e-6,
            max_iters: 200,
            tol: 1e-6,
            beta_update_start: 10,
            support_threshold: 0.45,
            grid: GridSpec::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "alpha must satisfy 0<α≤1, got {}",
                self.alpha
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("tol must be >= 0, got {}", self.tol)));
        }
        if !(0.0..1.0).contains(&self.support_threshold) {
            return Err(Error::Config(format!(
                "support_threshold must lie in [0, 1), got {}",
                self.support_threshold
            )));
        }
        self.grid.validate()
    }

    /// Sets one field from its `key=value` spelling. Returns `false` for
    /// unknown keys.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lambda" => self.lambda = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "eta" => self.eta = parse_value(key, value)?,
            "max_iters" => self.max_iters = parse_value(key, value)?,
            "tol" => self.tol = parse_value(key, value)?,
            "beta_update_start" => self.beta_update_start = parse_value(key, value)?,
            "support_threshold" => self.support_threshold = parse_value(key, value)?,
            "grid" => self.grid = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        [
            ("lambda", self.lambda.to_string()),
            ("alpha", self.alpha.to_string()),
            ("eta", self.eta.to_string()),
            ("max_iters", self.max_iters.to_string()),
            ("tol", self.tol.to_string()),
            ("beta_update_start", self.beta_update_start.to_string()),
            ("support_threshold", self.support_threshold.to_string()),
            ("grid", self.grid.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Strict parse: unknown keys are rejected, missing keys keep defaults.
    pub fn from_kv(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            if !cfg.apply(k, v)? {
                return Err(Error::Parse(format!("unknown solver key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub iter: usize,
    /// Surrogate before the x-update (current `C`, `v`).
    pub cost_before: f64,
    /// Surrogate after the x-update, same `C`, `v`.
    pub cost: f64,
    pub max_abs_change: f64,
    pub rel_change: f64,
    pub beta_updated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    /// Normalized spectrum `x_hat = (sqrt 2 / sigma) x`.
    pub x_hat: DVector<C64>,
    /// Off-grid gaps in degrees.
    pub beta: Vec<f64>,
    pub iter: usize,
    pub cost_history: Vec<f64>,
    pub trajectory: Vec<TrajectoryRow>,
    /// Gap updates that fell back to the diagonal solve.
    pub beta_fallbacks: usize,
}

impl SolverState {
    pub fn write_trajectory_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "iteration,cost_before,cost,max_abs_change,rel_change,beta_updated")?;
        for r in &self.trajectory {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{}",
                r.iter, r.cost_before, r.cost, r.max_abs_change, r.rel_change, r.beta_updated as u8
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_dims(c: &DMatrix<C64>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if c.nrows() != rows || c.ncols() != cols {
        return Err(Error::Dimension(format!(
            "{what}: expected {rows}x{cols}, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    Ok(())
}

/// MM pseudo-measurement. With `d = Re(y) Re(Cx) + j Im(y) Im(Cx)` and
/// `v~ = d - I'(d)`, returns `v = Re(y) Re(v~) + j Im(y) Im(v~)`.
pub fn compute_v(y: &DVector<C64>, c: &DMatrix<C64>, x_hat: &DVector<C64>) -> Result<DVector<C64>> {
    check_dims(c, y.len(), x_hat.len(), "dictionary")?;
    let fit = c * x_hat;
    let mut v = DVector::zeros(y.len());
    for n in 0..y.len() {
        let (yn, fn_) = (y[n], fit[n]);
        let d = C64::new(yn.re * fn_.re, yn.im * fn_.im);
        let ip = i_prime(d).ok_or_else(|| Error::Solve("non-finite fit in pseudo-measurement".into()))?;
        let vt = d - ip;
        v[n] = C64::new(yn.re * vt.re, yn.im * vt.im);
    }
    Ok(v)
}

/// Diagonal of `Lambda(x) = diag((|x_i|^2 + eta)^(alpha/2 - 1))`.
pub fn reweighting(x_hat: &DVector<C64>, cfg: &SolverConfig) -> Vec<f64> {
    let p = 0.5 * cfg.alpha - 1.0;
    x_hat.iter().map(|z| (z.norm_sqr() + cfg.eta).powf(p)).collect()
}

fn solve_normal_equations(
    gram: &DMatrix<C64>,
    rhs: &DVector<C64>,
    x_prev: &DVector<C64>,
    cfg: &SolverConfig,
) -> Result<DVector<C64>> {
    let mut g = gram.clone();
    for (i, w) in reweighting(x_prev, cfg).into_iter().enumerate() {
        g[(i, i)] += C64::new(cfg.lambda * w, 0.0);
    }
    if let Some(chol) = g.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    g.lu()
        .solve(rhs)
        .ok_or_else(|| Error::Solve("regularized normal matrix is singular".into()))
}

/// `x = (C^H C + lambda Lambda(x_prev))^{-1} C^H v`.
pub fn update_x(
    c: &DMatrix<C64>,
    v: &DVector<C64>,
    x_prev: &DVector<C64>,
    cfg: &SolverConfig,
) -> Result<DVector<C64>> {
    check_dims(c, v.len(), x_prev.len(), "dictionary")?;
    solve_normal_equations(&c.ad_mul(c), &c.ad_mul(v), x_prev, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaUpdate {
    /// Gaps in degrees, zero off the support, clipped to half a grid step.
    pub beta: Vec<f64>,
    pub support: Vec<usize>,
    /// True when the support system was not positive definite and the
    /// diagonal-only solve was used.
    pub diagonal_fallback: bool,
}

/// Indices with `|x_m| >= threshold * max |x|` (and `|x_m| > 0`).
pub fn active_support(x_hat: &DVector<C64>, threshold: f64) -> Vec<usize> {
    let max = x_hat.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return Vec::new();
    }
    (0..x_hat.len())
        .filter(|&m| {
            let a = x_hat[m].norm();
            a > 0.0 && a >= threshold * max
        })
        .collect()
}

/// Least-squares gap fit on the active support:
/// `P beta = q`, `P = Re{(B^H B)^* . (x x^H)}`, `q = Re{diag(x^*) B^H (v - A x)}`.
pub fn update_beta(
    dict: &DictionaryPair,
    x_hat: &DVector<C64>,
    v: &DVector<C64>,
    cfg: &SolverConfig,
) -> Result<BetaUpdate> {
    let (n, m) = (dict.n(), dict.m());
    if x_hat.len() != m || v.len() != n {
        return Err(Error::Dimension(format!(
            "x has length {}, v has length {}, dictionary is {n}x{m}",
            x_hat.len(),
            v.len()
        )));
    }
    let mut beta = vec![0.0; m];
    let residual = v - &dict.a * x_hat;

    // Columns whose derivative vanishes (endfire) carry no gap information.
    let support: Vec<usize> = active_support(x_hat, cfg.support_threshold)
        .into_iter()
        .filter(|&i| dict.b.column(i).norm_squared() > 0.0)
        .collect();
    let s = support.len();
    if s == 0 {
        return Ok(BetaUpdate {
            beta,
            support,
            diagonal_fallback: false,
        });
    }

    let bs = dict.b.select_columns(&support);
    let btb = bs.ad_mul(&bs);
    let btr = bs.ad_mul(&residual);
    let xs: Vec<C64> = support.iter().map(|&i| x_hat[i]).collect();
    let p = DMatrix::from_fn(s, s, |i, j| (xs[i].conj() * btb[(i, j)] * xs[j]).re);
    let q = DVector::from_fn(s, |i, _| (xs[i].conj() * btr[i]).re);

    let (solution, diagonal_fallback) = match p.clone().cholesky() {
        Some(chol) => (chol.solve(&q), false),
        None => (DVector::from_fn(s, |i, _| q[i] / p[(i, i)]), true),
    };

    let half = dict.grid.half_step();
    for (k, &i) in support.iter().enumerate() {
        let deg = solution[k].to_degrees();
        beta[i] = if deg.is_finite() { deg.clamp(-half, half) } else { 0.0 };
    }
    Ok(BetaUpdate {
        beta,
        support,
        diagonal_fallback,
    })
}

/// `1/2 ||C x - v||^2 + (lambda/alpha) sum (|x_i|^2 + eta)^(alpha/2)`.
pub fn surrogate_cost(
    c: &DMatrix<C64>,
    v: &DVector<C64>,
    x_hat: &DVector<C64>,
    cfg: &SolverConfig,
) -> Result<f64> {
    check_dims(c, v.len(), x_hat.len(), "dictionary")?;
    let fit = 0.5 * (c * x_hat - v).norm_squared();
    let half_alpha = 0.5 * cfg.alpha;
    let prior: f64 = x_hat
        .iter()
        .map(|z| (z.norm_sqr() + cfg.eta).powf(half_alpha))
        .sum();
    Ok(fit + cfg.lambda / cfg.alpha * prior)
}

/// Runs OGBRIM from the matched-filter start `x = A^H y`, `beta = 0`.
pub fn solve(
    snapshot: &OneBitSnapshot,
    dict: &DictionaryPair,
    cfg: &SolverConfig,
) -> Result<(SolverState, SpectrumEstimate)> {
    cfg.validate()?;
    if cfg.grid != dict.grid {
        return Err(Error::Config(format!(
            "solver grid {} differs from dictionary grid {}",
            cfg.grid, dict.grid
        )));
    }
    let y = &snapshot.y;
    if y.len() != dict.n() {
        return Err(Error::Dimension(format!(
            "snapshot has {} elements, dictionary expects {}",
            y.len(),
            dict.n()
        )));
    }

    let mut beta = vec![0.0; dict.m()];
    let mut c = dict.a.clone();
    let mut gram = c.ad_mul(&c);
    let mut x = c.ad_mul(y);
    let mut state = SolverState {
        x_hat: x.clone(),
        beta: beta.clone(),
        iter: 0,
        cost_history: Vec::new(),
        trajectory: Vec::new(),
        beta_fallbacks: 0,
    };
    let gaps_disabled = cfg.beta_update_start >= cfg.max_iters;

    for it in 0..cfg.max_iters {
        let v = compute_v(y, &c, &x)?;
        let cost_before = surrogate_cost(&c, &v, &x, cfg)?;
        let x_new = solve_normal_equations(&gram, &c.ad_mul(&v), &x, cfg)?;
        let cost = surrogate_cost(&c, &v, &x_new, cfg)?;

        let diff = &x_new - &x;
        let max_abs_change = diff.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let norm = x.norm();
        let rel_change = if norm > 0.0 { diff.norm() / norm } else { f64::INFINITY };

        let beta_updated = it >= cfg.beta_update_start;
        if beta_updated {
            let upd = update_beta(dict, &x_new, &v, cfg)?;
            state.beta_fallbacks += upd.diagonal_fallback as usize;
            beta = upd.beta;
            c = effective_dictionary(dict, &beta)?;
            gram = c.ad_mul(&c);
        }
        x = x_new;

        state.cost_history.push(cost);
        state.trajectory.push(TrajectoryRow {
            iter: it + 1,
            cost_before,
            cost,
            max_abs_change,
            rel_change,
            beta_updated,
        });
        state.iter = it + 1;
        if rel_change < cfg.tol && (beta_updated || gaps_disabled) {
            break;
        }
    }

    state.x_hat = x;
    state.beta = beta;
    let est = SpectrumEstimate::from_complex(&state.x_hat, state.beta.clone());
    Ok((state, est))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_dictionary, ArrayGeometry};
    use crate::sim::{simulate_snapshot, SourceScene};

    #[test]
    fn v_at_zero_spectrum() {
        let d = build_dictionary(&ArrayGeometry::sla10(), &GridSpec::default()).unwrap();
        let y = DVector::from_fn(10, |i, _| {
            C64::new(if i % 2 == 0 { 1.0 } else { -1.0 }, if i % 3 == 0 { -1.0 } else { 1.0 })
        });
        let v = compute_v(&y, &d.a, &DVector::zeros(d.m())).unwrap();
        for n in 0..10 {
            let expected = y[n] * 0.797_884_560_802_865_4;
            assert!((v[n] - expected).norm() < 1e-15);
        }
    }

    #[test]
    fn identity_system_small_lambda() {
        let c = DMatrix::<C64>::identity(4, 4);
        let v = DVector::from_vec(vec![
            C64::new(1.0, -2.0),
            C64::new(0.5, 0.0),
            C64::new(-3.0, 1.0),
            C64::new(0.0, 0.25),
        ]);
        let cfg = SolverConfig {
            lambda: 1e-12,
            ..Default::default()
        };
        let x = update_x(&c, &v, &v, &cfg).unwrap();
        assert!((x - &v).norm() < 1e-9);
    }

    #[test]
    fn ridge_case() {
        // alpha = 1 with |x_prev| = 1 and tiny eta gives Lambda ~ I
        let c = DMatrix::from_fn(3, 5, |i, j| C64::new((i + 2 * j) as f64 * 0.1, (i as f64 - j as f64) * 0.2));
        let v = DVector::from_fn(3, |i, _| C64::new(1.0 + i as f64, -0.5));
        let x_prev = DVector::from_element(5, C64::new(0.6, 0.8));
        let cfg = SolverConfig {
            lambda: 0.7,
            alpha: 1.0,
            eta: 1e-300,
            ..Default::default()
        };
        let x = update_x(&c, &v, &x_prev, &cfg).unwrap();
        let mut g = c.ad_mul(&c);
        for i in 0..5 {
            g[(i, i)] += C64::new(0.7, 0.0);
        }
        let expected = g.try_inverse().unwrap() * c.ad_mul(&v);
        assert!((x - &expected).norm() / expected.norm() < 1e-12);
    }

    #[test]
    fn beta_zero_for_zero_spectrum() {
        let d = build_dictionary(&ArrayGeometry::sla18(), &GridSpec::default()).unwrap();
        let v = DVector::from_element(18, C64::new(1.0, 1.0));
        let upd = update_beta(&d, &DVector::zeros(61), &v, &SolverConfig::default()).unwrap();
        assert!(upd.beta.iter().all(|&b| b == 0.0));
        assert!(upd.support.is_empty());
    }

    #[test]
    fn beta_ignores_endfire_columns() {
        let grid = GridSpec::full_hemisphere();
        let d = build_dictionary(&ArrayGeometry::sla10(), &grid).unwrap();
        let mut x = DVector::zeros(d.m());
        x[0] = C64::new(1.0, 0.0);
        x[45] = C64::new(0.5, 0.5);
        let v = &d.a * &x;
        let cfg = SolverConfig {
            grid,
            ..Default::default()
        };
        let upd = update_beta(&d, &x, &v, &cfg).unwrap();
        assert_eq!(upd.support, vec![45]);
        assert_eq!(upd.beta[0], 0.0);
    }

    #[test]
    fn cost_at_zero() {
        let c = DMatrix::from_element(2, 3, C64::new(1.0, 0.0));
        let v = DVector::from_vec(vec![C64::new(1.0, 1.0), C64::new(-1.0, 2.0)]);
        let cfg = SolverConfig {
            lambda: 2.0,
            alpha: 0.5,
            eta: 1e-4,
            ..Default::default()
        };
        let x = DVector::zeros(3);
        let expected = 0.5 * 7.0 + 2.0 / 0.5 * 3.0 * 1e-4f64.powf(0.25);
        assert!((surrogate_cost(&c, &v, &x, &cfg).unwrap() - expected).abs() < 1e-14);
        let doubled = surrogate_cost(&c, &(v * C64::new(2.0, 0.0)), &x, &cfg).unwrap();
        assert!((doubled - 4.0 * 3.5 - 2.0 / 0.5 * 3.0 * 1e-4f64.powf(0.25)).abs() < 1e-13);
    }

    #[test]
    fn config_validation_and_kv() {
        let mut cfg = SolverConfig { alpha: 1.5, ..Default::default() };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("0<α≤1"), "{err}");
        cfg.alpha = 0.5;
        cfg.lambda = 0.25;
        let back = SolverConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
        assert!(SolverConfig::from_kv(&[("bogus".into(), "1".into())]).is_err());
        assert!(SolverConfig::from_kv(&[("eta".into(), "0".into())]).is_err());
    }

    #[test]
    fn grid_mismatch_rejected() {
        let geom = ArrayGeometry::sla10();
        let d = build_dictionary(&geom, &GridSpec::full_hemisphere()).unwrap();
        let scene = SourceScene {
            doas: vec![3.0],
            coeffs: vec![C64::new(1.0, 0.0)],
            sigma: 0.1,
        };
        let snap = simulate_snapshot(&geom, &scene, 1).unwrap();
        assert!(solve(&snap, &d, &SolverConfig::default()).is_err());
    }
}
