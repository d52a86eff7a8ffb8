//! Peak extraction, scoring and the Monte Carlo benchmark.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{build_dictionary, ArrayGeometry, DictionaryPair, GridSpec};
use crate::net;
use crate::sim::{derive_seed, random_coeff, rng_from_seed, simulate_snapshot, snr_to_sigma, SourceScene};
use crate::solver::{solve, SolverConfig};
use crate::spectrum::SpectrumEstimate;
use crate::weights::WeightBundle;

#[derive(Debug, Clone)]
pub enum Method {
    Ogbrim(SolverConfig),
    Unrolled(Arc<WeightBundle>),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ogbrim(_) => "ogbrim",
            Method::Unrolled(_) => "unrolled",
        }
    }

    pub fn estimate(
        &self,
        snapshot: &crate::sim::OneBitSnapshot,
        dict: &DictionaryPair,
    ) -> Result<SpectrumEstimate> {
        match self {
            Method::Ogbrim(cfg) => solve(snapshot, dict, cfg).map(|(_, est)| est),
            Method::Unrolled(w) => net::forward(snapshot, dict, w),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub geometry: ArrayGeometry,
    pub grid: GridSpec,
    pub true_doas: Vec<f64>,
    pub snr_grid_db: Vec<f64>,
    pub trials: usize,
    pub success_threshold_deg: f64,
    pub method: Method,
    pub seed: u64,
    pub coeff_min: f64,
    pub coeff_max: f64,
}

impl EvalConfig {
    pub fn new(method: Method, seed: u64) -> Self {
        Self {
            geometry: ArrayGeometry::sla18(),
            grid: GridSpec::default(),
            true_doas: vec![-10.28, 20.56],
            snr_grid_db: (0..=6).map(|i| 5.0 * i as f64).collect(),
            trials: 1024,
            success_threshold_deg: 0.5,
            method,
            seed,
            coeff_min: 0.5,
            coeff_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if !(self.success_threshold_deg > 0.0) {
            return Err(Error::Config(format!(
                "threshold must be > 0, got {}",
                self.success_threshold_deg
            )));
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("need at least one finite SNR".into()));
        }
        if !(0.0 <= self.coeff_min && self.coeff_min < self.coeff_max) {
            return Err(Error::Config(format!(
                "bad coefficient range [{}, {}]",
                self.coeff_min, self.coeff_max
            )));
        }
        let probe = SourceScene {
            doas: self.true_doas.clone(),
            coeffs: vec![Default::default(); self.true_doas.len()],
            sigma: 0.0,
        };
        probe.validate(self.geometry.len())?;
        if let Method::Unrolled(w) = &self.method {
            let arch = w.architecture();
            if arch.m() != self.grid.len() {
                return Err(Error::GridMismatch {
                    weights: arch.m(),
                    dictionary: self.grid.len(),
                });
            }
            if arch.grid != self.grid {
                return Err(Error::Config(format!(
                    "weights use grid {}, benchmark uses {}",
                    arch.grid, self.grid
                )));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let mut kv = vec![
            ("geometry".to_string(), self.geometry.to_string()),
            ("grid".into(), self.grid.to_string()),
            ("true_doas".into(), list(&self.true_doas)),
            ("snr_grid_db".into(), list(&self.snr_grid_db)),
            ("trials".into(), self.trials.to_string()),
            ("success_threshold_deg".into(), self.success_threshold_deg.to_string()),
            ("method".into(), self.method.name().into()),
            ("seed".into(), self.seed.to_string()),
            ("coeff_min".into(), self.coeff_min.to_string()),
            ("coeff_max".into(), self.coeff_max.to_string()),
        ];
        if let Method::Ogbrim(s) = &self.method {
            kv.extend(s.to_kv().into_iter().filter(|(k, _)| k != "grid"));
        }
        kv
    }
}

/// The `k` largest strict local maxima of the magnitudes, reported as
/// `grid point + gap` in descending magnitude order. Endpoints compare
/// against their single neighbour; ties go to the lower index. Missing
/// peaks are filled from the largest remaining bins.
pub fn extract_doas(est: &SpectrumEstimate, grid: &GridSpec, k: usize) -> Result<Vec<f64>> {
    let mags = &est.magnitudes;
    let m = mags.len();
    if k == 0 || k > m {
        return Err(Error::Config(format!("cannot extract {k} peaks from {m} bins")));
    }
    if est.beta.len() != m || grid.len() != m {
        return Err(Error::Dimension(format!(
            "spectrum has {m} magnitudes, {} gaps, grid has {} points",
            est.beta.len(),
            grid.len()
        )));
    }
    let is_peak = |i: usize| {
        (i == 0 || mags[i] > mags[i - 1]) && (i + 1 == m || mags[i] > mags[i + 1])
    };
    // descending magnitude, stable on index so ties favour the lower bin
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]));

    let mut picked: Vec<usize> = order.iter().copied().filter(|&i| is_peak(i)).take(k).collect();
    for &i in &order {
        if picked.len() == k {
            break;
        }
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    Ok(picked.into_iter().map(|i| grid.point(i) + est.beta[i]).collect())
}

/// Pairs sorted estimates with sorted truth by rank. Returns success (every
/// absolute error within `threshold`) and the per-target absolute errors in
/// ascending-truth order.
pub fn match_and_score(estimated: &[f64], truth: &[f64], threshold: f64) -> Result<(bool, Vec<f64>)> {
    if estimated.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} estimates for {} targets",
            estimated.len(),
            truth.len()
        )));
    }
    let mut e = estimated.to_vec();
    let mut t = truth.to_vec();
    e.sort_by(f64::total_cmp);
    t.sort_by(f64::total_cmp);
    let errors: Vec<f64> = e.iter().zip(&t).map(|(a, b)| (a - b).abs()).collect();
    let ok = errors.iter().all(|err| *err <= threshold);
    Ok((ok, errors))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub success: bool,
    /// Per-target absolute errors; empty when the trial errored out.
    pub errors: Vec<f64>,
}

impl TrialOutcome {
    pub fn failed() -> Self {
        Self { success: false, errors: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub snr_db: f64,
    pub detection_rate: f64,
    /// `sqrt(sum of squared errors / (N_s K))` over successful trials.
    pub rmse_deg: Option<f64>,
    pub n_success: usize,
    pub n_trials: usize,
}

/// Detection rate `N_s / N_t` and RMSE over the successful trials.
pub fn aggregate(snr_db: f64, outcomes: &[TrialOutcome], k: usize) -> EvalRow {
    let n_success = outcomes.iter().filter(|o| o.success).count();
    let sq: f64 = outcomes
        .iter()
        .filter(|o| o.success)
        .flat_map(|o| o.errors.iter().map(|e| e * e))
        .sum();
    EvalRow {
        snr_db,
        detection_rate: n_success as f64 / outcomes.len() as f64,
        rmse_deg: (n_success > 0).then(|| (sq / (n_success * k) as f64).sqrt()),
        n_success,
        n_trials: outcomes.len(),
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub method: String,
    pub config: Vec<(String, String)>,
    pub wall_time_s: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("snr_db,detection_rate,rmse_deg,n_success,n_trials\n");
        for r in &self.rows {
            let rmse = r.rmse_deg.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{rmse},{},{}", r.snr_db, r.detection_rate, r.n_success, r.n_trials)
                .unwrap();
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!("method: {}  ({:.1} s)\n", self.method, self.wall_time_s);
        writeln!(out, "{:>8}  {:>9}  {:>9}  {:>9}", "SNR(dB)", "detection", "RMSE(deg)", "successes").unwrap();
        for r in &self.rows {
            let rmse = r.rmse_deg.map_or("-".to_string(), |v| format!("{v:.4}"));
            writeln!(
                out,
                "{:>8}  {:>9.4}  {:>9}  {:>5}/{}",
                r.snr_db, r.detection_rate, rmse, r.n_success, r.n_trials
            )
            .unwrap();
        }
        out
    }
}

/// One trial: fixed DOAs, fresh coefficients and noise from
/// `(seed, snr index, trial)`.
pub fn run_trial(
    cfg: &EvalConfig,
    dict: &DictionaryPair,
    snr_index: usize,
    trial: usize,
) -> TrialOutcome {
    let attempt = || -> Result<TrialOutcome> {
        let sub = derive_seed(cfg.seed, &[snr_index as u64, trial as u64]);
        let mut rng = rng_from_seed(sub);
        let scene = SourceScene {
            doas: cfg.true_doas.clone(),
            coeffs: cfg
                .true_doas
                .iter()
                .map(|_| random_coeff(&mut rng, cfg.coeff_min, cfg.coeff_max))
                .collect(),
            sigma: snr_to_sigma(cfg.snr_grid_db[snr_index]),
        };
        let snap = simulate_snapshot(&cfg.geometry, &scene, derive_seed(sub, &[1]))?;
        let est = cfg.method.estimate(&snap, dict)?;
        let doas = extract_doas(&est, &cfg.grid, cfg.true_doas.len())?;
        let (success, errors) = match_and_score(&doas, &cfg.true_doas, cfg.success_threshold_deg)?;
        Ok(TrialOutcome { success, errors })
    };
    attempt().unwrap_or_else(|_| TrialOutcome::failed())
}

/// Runs every (SNR, trial) pair in parallel. Results do not depend on the
/// thread count.
pub fn run_monte_carlo(cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let start = Instant::now();
    let dict = build_dictionary(&cfg.geometry, &cfg.grid)?;
    let rows = (0..cfg.snr_grid_db.len())
        .map(|s| {
            let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| run_trial(cfg, &dict, s, t))
                .collect();
            aggregate(cfg.snr_grid_db[s], &outcomes, cfg.true_doas.len())
        })
        .collect();
    Ok(EvalReport {
        rows,
        method: cfg.method.name().into(),
        config: cfg.to_kv(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRow {
    pub grid_deg: f64,
    pub magnitude: f64,
    pub beta_deg: f64,
    pub corrected_deg: f64,
}

pub fn render_spectrum_csv(est: &SpectrumEstimate, grid: &GridSpec, truth: &[f64]) -> Result<String> {
    if est.magnitudes.len() != grid.len() || est.beta.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "spectrum of length {} on a {}-point grid",
            est.magnitudes.len(),
            grid.len()
        )));
    }
    let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    let mut out = format!("# truth_deg: {}\n", list(truth));
    if !est.doas.is_empty() {
        writeln!(out, "# estimated_deg: {}", list(&est.doas)).unwrap();
    }
    out.push_str("grid_deg,magnitude,beta_deg,corrected_deg\n");
    for i in 0..grid.len() {
        let g = grid.point(i);
        let b = est.beta[i];
        writeln!(out, "{g},{},{b},{}", est.magnitudes[i], g + b).unwrap();
    }
    Ok(out)
}

pub fn export_spectrum(est: &SpectrumEstimate, grid: &GridSpec, truth: &[f64], path: &Path) -> Result<()> {
    std::fs::write(path, render_spectrum_csv(est, grid, truth)?)?;
    Ok(())
}

/// Inverse of [`render_spectrum_csv`]: truth DOAs and data rows.
pub fn parse_spectrum_csv(text: &str) -> Result<(Vec<f64>, Vec<SpectrumRow>)> {
    let mut truth = Vec::new();
    let mut rows = Vec::new();
    let mut seen_header = false;
    let nums = |s: &str| -> Result<Vec<f64>> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse().map_err(|_| Error::Parse(format!("bad number `{t}`"))))
            .collect()
    };
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# truth_deg:") {
            truth = nums(rest)?;
        } else if line.starts_with('#') || line.trim().is_empty() {
            continue;
        } else if !seen_header {
            if line.trim() != "grid_deg,magnitude,beta_deg,corrected_deg" {
                return Err(Error::Parse(format!("unexpected header `{line}`")));
            }
            seen_header = true;
        } else {
            let v = nums(line)?;
            if v.len() != 4 {
                return Err(Error::Parse(format!("expected 4 columns, got `{line}`")));
            }
            rows.push(SpectrumRow {
                grid_deg: v[0],
                magnitude: v[1],
                beta_deg: v[2],
                corrected_deg: v[3],
            });
        }
    }
    if !seen_header {
        return Err(Error::Parse("missing spectrum header".into()));
    }
    Ok((truth, rows))
}
