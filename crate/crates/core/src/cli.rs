//! The `obdoa` command line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{parse_value, read_kv_file};
use crate::dataset::{generate_dataset, DatasetConfig, DatasetReader};
use crate::error::{Error, Result};
use crate::eval::{extract_doas, render_spectrum_csv, run_monte_carlo, EvalConfig, Method};
use crate::geometry::{build_dictionary, ArrayGeometry, GridSpec};
use crate::net::forward;
use crate::sim::{derive_seed, random_coeff, rng_from_seed, simulate_snapshot, snr_to_sigma, OneBitSnapshot, SourceScene};
use crate::solver::{solve, SolverConfig};
use crate::spectrum::SpectrumEstimate;
use crate::weights::load_weights;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPECTRUM_FILE: &str = "spectrum.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const REPORT_FILE: &str = "report.csv";

#[derive(Debug, Parser)]
#[command(name = "obdoa", version, about = "One-bit off-grid DOA estimation")]
pub struct Cli {
    /// Worker threads for dataset generation and benchmarks.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate labeled train/validation datasets.
    GenDataset(GenDatasetArgs),
    /// Run OGBRIM on one snapshot.
    Solve(SolveArgs),
    /// Run the unrolled network on one snapshot.
    Infer(InferArgs),
    /// Monte Carlo detection-rate / RMSE benchmark.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[arg(long, default_value = "sla18")]
    pub geometry: ArrayGeometry,
    #[arg(long, default_value = "-60:2:60", allow_hyphen_values = true)]
    pub grid: GridSpec,
    #[arg(long, default_value_t = 100_000)]
    pub count: usize,
    /// `lo:step:hi` or a comma list, in dB.
    #[arg(long, default_value = "0:5:30")]
    pub snr_set: String,
    /// Training fraction [default: 0.9].
    #[arg(long)]
    pub split: Option<f64>,
    /// Sources per scene [default: 2].
    #[arg(long)]
    pub sources: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    /// `key=value` file: num_sources, split, max_offset_deg, coeff_min,
    /// coeff_max. Explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false)]
pub struct SnapshotSource {
    /// Dataset file (`.obdoa`) holding the snapshot.
    #[arg(long, group = "source")]
    pub input: Option<PathBuf>,
    /// Simulate a scene instead of reading one.
    #[arg(long, group = "source", requires = "doas")]
    pub simulate: bool,
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    #[command(flatten)]
    pub source: SnapshotSource,
    /// Record index within `--input`.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Comma-separated DOAs in degrees (with `--simulate`).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub doas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 20.0, allow_negative_numbers = true)]
    pub snr: f64,
    /// Seed for the simulated scene.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "sla18")]
    pub geometry: ArrayGeometry,
    #[arg(long, default_value = "-60:2:60", allow_hyphen_values = true)]
    pub grid: GridSpec,
    /// Number of peaks to extract; defaults to the scene's source count.
    #[arg(long)]
    pub sources: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// `key=value` solver settings; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long)]
    pub weights: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ogbrim,
    Unrolled,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Ogbrim)]
    pub method: MethodArg,
    #[arg(long, required_if_eq("method", "unrolled"))]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 1024)]
    pub trials: usize,
    #[arg(long, default_value = "0:5:30")]
    pub snr_set: String,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value = "sla18")]
    pub geometry: ArrayGeometry,
    #[arg(long, default_value = "-60:2:60", allow_hyphen_values = true)]
    pub grid: GridSpec,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-10.28,20.56")]
    pub doas: Vec<f64>,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub git_describe: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub outputs: Vec<String>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// `lo:step:hi` (inclusive) or `a,b,c`.
pub fn parse_snr_set(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Parse(format!("bad SNR set `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    let set = match parts.as_slice() {
        [lo, step, hi] => {
            let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
            let step: f64 = step.trim().parse().map_err(|_| bad())?;
            let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
            if !(step > 0.0) || hi < lo {
                return Err(bad());
            }
            let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            (0..n).map(|i| lo + step * i as f64).collect()
        }
        [list] => list
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?,
        _ => return Err(bad()),
    };
    if set.is_empty() || set.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(set)
}

fn solver_config(args: &SolverArgs, grid: GridSpec) -> Result<SolverConfig> {
    let mut cfg = SolverConfig {
        grid,
        ..Default::default()
    };
    if let Some(path) = &args.config {
        for (k, v) in read_kv_file(path)? {
            if k == "grid" {
                return Err(Error::Config("set the grid with --grid".into()));
            }
            if !cfg.apply(&k, &v)? {
                return Err(Error::Parse(format!("unknown solver key `{k}` in {}", path.display())));
            }
        }
    }
    if let Some(l) = args.lambda {
        cfg.lambda = l;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(i) = args.max_iters {
        cfg.max_iters = i;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_snapshot(args: &SceneArgs) -> Result<(OneBitSnapshot, Vec<f64>)> {
    if let Some(path) = &args.source.input {
        let mut reader = DatasetReader::open(path)?;
        let h = *reader.header();
        if h.n != args.geometry.len() {
            return Err(Error::Dimension(format!(
                "{} holds {}-element snapshots, geometry {} has {}",
                path.display(),
                h.n,
                args.geometry,
                args.geometry.len()
            )));
        }
        if args.index >= reader.len() {
            return Err(Error::Config(format!(
                "index {} out of range ({} records)",
                args.index,
                reader.len()
            )));
        }
        let rec = reader.read(args.index)?;
        Ok((rec.snapshot(), rec.doas.clone()))
    } else {
        let doas = args
            .doas
            .clone()
            .ok_or_else(|| Error::Config("--simulate needs --doas".into()))?;
        let seed = args
            .seed
            .ok_or_else(|| Error::Config("--simulate needs --seed".into()))?;
        let mut rng = rng_from_seed(derive_seed(seed, &[0]));
        let scene = SourceScene {
            coeffs: doas.iter().map(|_| random_coeff(&mut rng, 0.5, 1.0)).collect(),
            doas: doas.clone(),
            sigma: snr_to_sigma(args.snr),
        };
        Ok((simulate_snapshot(&args.geometry, &scene, derive_seed(seed, &[1]))?, doas))
    }
}

fn scene_kv(args: &SceneArgs, truth: &[f64]) -> Vec<(String, String)> {
    let mut kv = vec![
        ("geometry".to_string(), args.geometry.to_string()),
        ("grid".into(), args.grid.to_string()),
    ];
    match &args.source.input {
        Some(p) => {
            kv.push(("input".into(), p.display().to_string()));
            kv.push(("index".into(), args.index.to_string()));
        }
        None => {
            kv.push(("snr_db".into(), args.snr.to_string()));
            kv.push((
                "doas".into(),
                truth.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            ));
        }
    }
    kv
}

fn write_spectrum(
    args: &SceneArgs,
    mut est: SpectrumEstimate,
    truth: &[f64],
) -> Result<PathBuf> {
    let k = args.sources.unwrap_or(truth.len()).max(1);
    est.doas = extract_doas(&est, &args.grid, k)?;
    let path = args.out.join(SPECTRUM_FILE);
    fs::write(&path, render_spectrum_csv(&est, &args.grid, truth)?)?;
    Ok(path)
}

struct Run {
    command: &'static str,
    argv: Vec<String>,
    started: f64,
}

impl Run {
    fn finish(
        self,
        out: &Path,
        config: Vec<(String, String)>,
        seed: Option<u64>,
        outputs: &[PathBuf],
    ) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.into(),
            argv: self.argv,
            config: config.into_iter().collect(),
            seed,
            git_describe: env!("OBDOA_GIT_DESCRIBE").into(),
            started_unix_s: self.started,
            finished_unix_s: now(),
            outputs: outputs
                .iter()
                .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
                .collect(),
        };
        fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

fn gen_dataset(args: GenDatasetArgs, run: Run) -> Result<()> {
    let mut cfg = DatasetConfig::new(args.geometry.clone(), args.count);
    cfg.grid = args.grid;
    cfg.snr_set_db = parse_snr_set(&args.snr_set)?;
    if let Some(path) = &args.config {
        for (k, v) in read_kv_file(path)? {
            match k.as_str() {
                "num_sources" => cfg.num_sources = parse_value(&k, &v)?,
                "split" => cfg.split = parse_value(&k, &v)?,
                "max_offset_deg" => cfg.max_offset_deg = parse_value(&k, &v)?,
                "coeff_min" => cfg.coeff_min = parse_value(&k, &v)?,
                "coeff_max" => cfg.coeff_max = parse_value(&k, &v)?,
                _ => return Err(Error::Parse(format!("unknown dataset key `{k}`"))),
            }
        }
    }
    if let Some(split) = args.split {
        cfg.split = split;
    }
    if let Some(k) = args.sources {
        cfg.num_sources = k;
    }
    cfg.validate()?;
    fs::create_dir_all(&args.out)?;
    let (train, val) = generate_dataset(&cfg, args.seed, &args.out)?;
    let kv = vec![
        ("geometry".to_string(), cfg.geometry.to_string()),
        ("grid".into(), cfg.grid.to_string()),
        ("count".into(), cfg.count.to_string()),
        (
            "snr_set_db".into(),
            cfg.snr_set_db.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        ),
        ("split".into(), cfg.split.to_string()),
        ("num_sources".into(), cfg.num_sources.to_string()),
        ("max_offset_deg".into(), cfg.max_offset_deg.to_string()),
        ("coeff_min".into(), cfg.coeff_min.to_string()),
        ("coeff_max".into(), cfg.coeff_max.to_string()),
    ];
    println!("wrote {} and {}", train.display(), val.display());
    run.finish(&args.out, kv, Some(args.seed), &[train, val])
}

fn solve_cmd(args: SolveArgs, run: Run) -> Result<()> {
    let cfg = solver_config(&args.solver, args.scene.grid)?;
    let (snap, truth) = load_snapshot(&args.scene)?;
    let dict = build_dictionary(&args.scene.geometry, &args.scene.grid)?;
    let (state, est) = solve(&snap, &dict, &cfg)?;
    fs::create_dir_all(&args.scene.out)?;
    let spectrum = write_spectrum(&args.scene, est, &truth)?;
    let trajectory = args.scene.out.join(TRAJECTORY_FILE);
    state.write_trajectory_csv(&trajectory)?;
    println!("{} iterations, spectrum in {}", state.iter, spectrum.display());
    let mut kv = scene_kv(&args.scene, &truth);
    kv.extend(cfg.to_kv().into_iter().filter(|(k, _)| k != "grid"));
    run.finish(&args.scene.out, kv, args.scene.seed, &[spectrum, trajectory])
}

fn infer_cmd(args: InferArgs, run: Run) -> Result<()> {
    let weights = load_weights(&args.weights)?;
    let (snap, truth) = load_snapshot(&args.scene)?;
    let dict = build_dictionary(&args.scene.geometry, &args.scene.grid)?;
    let est = forward(&snap, &dict, &weights)?;
    fs::create_dir_all(&args.scene.out)?;
    let spectrum = write_spectrum(&args.scene, est, &truth)?;
    println!("spectrum in {}", spectrum.display());
    let mut kv = scene_kv(&args.scene, &truth);
    kv.push(("weights".into(), args.weights.display().to_string()));
    run.finish(&args.scene.out, kv, args.scene.seed, &[spectrum])
}

fn benchmark_cmd(args: BenchmarkArgs, run: Run) -> Result<()> {
    let method = match args.method {
        MethodArg::Ogbrim => Method::Ogbrim(solver_config(&args.solver, args.grid)?),
        MethodArg::Unrolled => {
            let path = args
                .weights
                .as_ref()
                .ok_or_else(|| Error::Config("--method unrolled needs --weights".into()))?;
            Method::Unrolled(Arc::new(load_weights(path)?))
        }
    };
    let mut cfg = EvalConfig::new(method, args.seed);
    cfg.geometry = args.geometry.clone();
    cfg.grid = args.grid;
    cfg.true_doas = args.doas.clone();
    cfg.snr_grid_db = parse_snr_set(&args.snr_set)?;
    cfg.trials = args.trials;
    cfg.success_threshold_deg = args.threshold;
    let report = run_monte_carlo(&cfg)?;
    fs::create_dir_all(&args.out)?;
    let path = args.out.join(REPORT_FILE);
    fs::write(&path, report.to_csv())?;
    print!("{}", report.table());
    let mut kv = report.config.clone();
    if let Some(w) = &args.weights {
        kv.push(("weights".into(), w.display().to_string()));
    }
    run.finish(&args.out, kv, Some(args.seed), &[path])
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be >= 1".into()));
        }
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let mut run = Run {
        command: "",
        argv,
        started: now(),
    };
    match cli.command {
        Command::GenDataset(a) => {
            run.command = "gen-dataset";
            gen_dataset(a, run)
        }
        Command::Solve(a) => {
            run.command = "solve";
            solve_cmd(a, run)
        }
        Command::Infer(a) => {
            run.command = "infer";
            infer_cmd(a, run)
        }
        Command::Benchmark(a) => {
            run.command = "benchmark";
            benchmark_cmd(a, run)
        }
    }
}

pub fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse_from(&argv);
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn snr_sets() {
        assert_eq!(parse_snr_set("0:5:30").unwrap(), vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]);
        assert_eq!(parse_snr_set("-5,20").unwrap(), vec![-5.0, 20.0]);
        assert!(parse_snr_set("0:0:10").is_err());
        assert!(parse_snr_set("a,b").is_err());
        assert!(parse_snr_set("1:2").is_err());
    }

    #[test]
    fn flag_rules() {
        let parse = |args: &[&str]| Cli::try_parse_from(args);
        assert!(parse(&["obdoa", "gen-dataset", "--seed", "1"]).is_err());
        assert!(parse(&["obdoa", "gen-dataset", "--out", "d"]).is_err());
        assert!(parse(&["obdoa", "benchmark", "--out", "d"]).is_err());
        assert!(parse(&["obdoa", "benchmark", "--seed", "1", "--out", "d", "--method", "unrolled"]).is_err());
        assert!(parse(&["obdoa", "solve", "--out", "d"]).is_err());
        assert!(parse(&["obdoa", "solve", "--input", "f", "--simulate", "--doas=1", "--out", "d"]).is_err());
        assert!(parse(&["obdoa", "infer", "--simulate", "--doas=1,2", "--out", "d"]).is_err());
        let ok = parse(&["obdoa", "solve", "--simulate", "--doas=-10.28,20.56", "--seed", "3", "--out", "d"]);
        match ok.unwrap().command {
            Command::Solve(a) => assert_eq!(a.scene.doas, Some(vec![-10.28, 20.56])),
            other => panic!("{other:?}"),
        }
        match parse(&["obdoa", "benchmark", "--seed", "9", "--out", "d"]).unwrap().command {
            Command::Benchmark(b) => {
                assert_eq!(b.threshold, 0.5);
                assert_eq!(b.trials, 1024);
            }
            other => panic!("{other:?}"),
        }
    }
}
