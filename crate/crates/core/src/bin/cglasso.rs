//! Command-line driver: fit a single model, trace a penalty path,
//! generate synthetic censored datasets, run benchmark studies and export
//! ROC data. Artifacts embed the library version and the fully resolved
//! configuration; reruns with identical flags are byte-identical.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure. Each failure prints a one-line diagnostic to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use cglasso::em::{self, EStepMode, EmConfig};
use cglasso::error::Error;
use cglasso::io;
use cglasso::model::{CensoredDataset, CensoringBounds};
use cglasso::path::{self, Criterion, PathResult, RhoMin, Spacing};
use cglasso::sim::{self, SimSpec, Study, UncensoredMean};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(
    name = "cglasso",
    version,
    about = "Sparse Gaussian graphical models for censored data"
)]
struct Cli {
    /// worker threads for parallel sections (0 = auto)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one penalized model at a fixed penalty
    Fit(FitArgs),
    /// Trace a warm-started penalty path and select a model
    Path(PathArgs),
    /// Generate a synthetic right-censored dataset with known truth
    Simulate(SimArgs),
    /// Run a benchmark study over seeded replicates
    Benchmark(BenchArgs),
    /// Export per-penalty ROC points for a path against a known truth
    Roc(RocArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Exact,
    Meanfield,
}

impl From<ModeArg> for EStepMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => EStepMode::Exact,
            ModeArg::Meanfield => EStepMode::MeanField,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum SpacingArg {
    Linear,
    Log,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum CriterionArg {
    Bic,
    Abic,
}

/// Bounds flags shared by `fit` and `path`: a single scalar broadcasts to
/// every column, a comma-separated list sets them per column.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct BoundsArgs {
    /// lower detection limits, scalar or comma-separated (default -inf)
    #[arg(long)]
    lower: Option<String>,
    /// upper detection limits, scalar or comma-separated (default +inf)
    #[arg(long)]
    upper: Option<String>,
}

fn parse_limits(spec: &str, p: usize, what: &str) -> Result<Vec<f64>, Error> {
    let toks: Vec<&str> = spec.split(',').map(|t| t.trim()).collect();
    let parse = |t: &str| -> Result<f64, Error> {
        match t {
            "-inf" => Ok(f64::NEG_INFINITY),
            "inf" | "+inf" => Ok(f64::INFINITY),
            other => other
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad {what} value '{other}'"))),
        }
    };
    if toks.len() == 1 {
        Ok(vec![parse(toks[0])?; p])
    } else if toks.len() == p {
        toks.iter().map(|t| parse(t)).collect()
    } else {
        Err(Error::InvalidConfig(format!(
            "{what} has {} values, expected 1 or {p}",
            toks.len()
        )))
    }
}

impl BoundsArgs {
    fn resolve(&self, p: usize) -> Result<Option<CensoringBounds>, Error> {
        if self.lower.is_none() && self.upper.is_none() {
            return Ok(None);
        }
        let lower = match &self.lower {
            Some(s) => parse_limits(s, p, "--lower")?,
            None => vec![f64::NEG_INFINITY; p],
        };
        let upper = match &self.upper {
            Some(s) => parse_limits(s, p, "--upper")?,
            None => vec![f64::INFINITY; p],
        };
        Ok(Some(CensoringBounds::new(lower, upper)?))
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct FitArgs {
    /// input dataset CSV
    #[arg(long)]
    input: PathBuf,
    /// penalty on the off-diagonal precision entries
    #[arg(long)]
    rho: f64,
    /// E-step moment computation
    #[arg(long, value_enum, default_value_t = ModeArg::Meanfield)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    bounds: BoundsArgs,
    /// output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct PathArgs {
    #[arg(long)]
    input: PathBuf,
    /// number of grid points
    #[arg(long, default_value_t = 30)]
    k: usize,
    /// smallest penalty on the grid
    #[arg(long, default_value_t = 1e-3)]
    rho_min: f64,
    #[arg(long, value_enum, default_value_t = SpacingArg::Linear)]
    spacing: SpacingArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Meanfield)]
    mode: ModeArg,
    /// selection criterion; `bic` evaluates the observed likelihood
    #[arg(long, value_enum, default_value_t = CriterionArg::Abic)]
    criterion: CriterionArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    bounds: BoundsArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SimArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    n: usize,
    /// probability of an off-diagonal edge in the true precision matrix
    #[arg(long)]
    edge_prob: f64,
    /// number of right-censored variables
    #[arg(long = "H", alias = "n-censored")]
    h: usize,
    /// common right-censoring limit
    #[arg(long, default_value_t = 40.0)]
    u: f64,
    /// target right-censoring probability for censored variables
    #[arg(long, default_value_t = 0.25)]
    censor_prob: f64,
    /// uncensored means drawn uniformly on [mu-lo, mu-hi]
    #[arg(long, default_value_t = 10.0)]
    mu_lo: f64,
    #[arg(long, default_value_t = 35.0)]
    mu_hi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct BenchArgs {
    /// study id: model1, model1_h35, model2_k1, model2_k5, model3,
    /// approx_vs_exact, censor_robustness, smoke
    #[arg(long, conflicts_with = "config")]
    study: Option<String>,
    /// TOML config file: keys study, replicates, seed, gibbs_sweeps,
    /// burn_in (overrides the flags)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gibbs sweeps per row in exact mode (0 = library default)
    #[arg(long, default_value_t = 0)]
    gibbs_sweeps: usize,
    /// Gibbs burn-in per row in exact mode (0 = library default)
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct RocArgs {
    /// truth.json written by `simulate`
    #[arg(long)]
    truth: PathBuf,
    /// path.json written by `path`
    #[arg(long = "path")]
    path_file: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Declarative benchmark configuration (TOML).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct BenchConfig {
    study: String,
    #[serde(default = "default_replicates")]
    replicates: usize,
    #[serde(default)]
    seed: u64,
    /// 0 keeps the library default
    #[serde(default)]
    gibbs_sweeps: usize,
    #[serde(default)]
    burn_in: usize,
}

fn default_replicates() -> usize {
    20
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are successes, everything else is usage
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("cglasso: failed to configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Path(a) => cmd_path(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::Roc(a) => cmd_roc(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cglasso: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) => 1,
        Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_)
        | Error::InvalidData(_)
        | Error::InvalidBounds(_)
        | Error::DimensionMismatch(_)
        | Error::RowOutOfRange { .. }
        | Error::ColumnFailure(_, _) => 2,
        _ => 3,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn write_edges_tsv(path: &Path, theta: &Array2<f64>, names: &[String]) -> Result<(), Error> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "h\tk\tname_h\tname_k\ttheta")?;
    let p = theta.nrows();
    for h in 0..p {
        for k in (h + 1)..p {
            if theta[[h, k]] != 0.0 {
                writeln!(f, "{h}\t{k}\t{}\t{}\t{}", names[h], names[k], theta[[h, k]])?;
            }
        }
    }
    Ok(())
}

fn load_dataset(
    input: &Path,
    bounds: &BoundsArgs,
) -> Result<(CensoredDataset, Vec<String>), Error> {
    // probe the header for p, then resolve the bound flags against it
    let head = {
        let f = std::fs::File::open(input)?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(f);
        rdr.headers()?.len()
    };
    let b = bounds.resolve(head)?;
    let nd = io::read_dataset_file(input, b, &[])?;
    Ok((nd.dataset, nd.names))
}

#[derive(Serialize)]
struct FitArtifact<'a> {
    version: &'a str,
    config: &'a FitArgs,
    names: &'a [String],
    mu: Vec<f64>,
    #[serde(with = "cglasso::io::serde_array2")]
    theta: Array2<f64>,
    rho: f64,
    em_iterations: usize,
    converged: bool,
    q_value: f64,
    kkt_residual: f64,
    fixed_point_residual: f64,
}

fn cmd_fit(args: &FitArgs) -> Result<(), Error> {
    let (ds, names) = load_dataset(&args.input, &args.bounds)?;
    let cfg = EmConfig::default();
    let fit = em::fit_em(&ds, args.rho, None, args.mode.into(), &cfg, args.seed)?;
    if !fit.converged {
        return Err(Error::NoConvergence(fit.em_iterations));
    }
    std::fs::create_dir_all(&args.out)?;
    let artifact = FitArtifact {
        version: VERSION,
        config: args,
        names: &names,
        mu: fit.params.mu().to_vec(),
        theta: fit.params.theta().to_owned(),
        rho: fit.rho,
        em_iterations: fit.em_iterations,
        converged: fit.converged,
        q_value: fit.q_value,
        kkt_residual: fit.kkt_residual,
        fixed_point_residual: fit.fixed_point_residual,
    };
    write_json(&args.out.join("params.json"), &artifact)?;
    write_edges_tsv(&args.out.join("edges.tsv"), &fit.params.theta().to_owned(), &names)?;
    println!(
        "fit: rho={} nonzero off-diagonals={} kkt={:.3e}",
        fit.rho,
        fit.nonzero_offdiag(),
        fit.kkt_residual
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PathModel {
    rho: f64,
    mu: Vec<f64>,
    #[serde(with = "cglasso::io::serde_array2")]
    theta: Array2<f64>,
    nonzero_offdiag: usize,
    kkt_residual: f64,
}

#[derive(Serialize, Deserialize)]
struct PathArtifact {
    version: String,
    config: serde_json::Value,
    names: Vec<String>,
    rhos: Vec<f64>,
    edge_counts: Vec<usize>,
    abic: Vec<f64>,
    bic: Option<Vec<f64>>,
    selected: usize,
    models: Vec<PathModel>,
}

fn cmd_path(args: &PathArgs) -> Result<(), Error> {
    let (ds, names) = load_dataset(&args.input, &args.bounds)?;
    let cfg = EmConfig::default();
    let spacing = match args.spacing {
        SpacingArg::Linear => Spacing::Linear,
        SpacingArg::Log => Spacing::Log,
    };
    let criterion = match args.criterion {
        CriterionArg::Bic => Criterion::Exact,
        CriterionArg::Abic => Criterion::Approx,
    };
    let mut res: PathResult = path::fit_path(
        &ds,
        args.k,
        RhoMin::Absolute(args.rho_min),
        spacing,
        args.mode.into(),
        &cfg,
        args.seed,
    )?;
    if let Some(f) = &res.failure {
        return Err(Error::IllConditioned(format!("path aborted: {f}")));
    }
    if criterion == Criterion::Exact {
        res.bic = Some(path::bic_exact(&res, &ds, &cfg, args.seed)?);
    }
    let scores = match criterion {
        Criterion::Exact => res.bic.as_ref().unwrap(),
        Criterion::Approx => &res.abic,
    };
    let selected = path::select(scores)
        .ok_or_else(|| Error::IllConditioned("empty path".into()))?;
    std::fs::create_dir_all(&args.out)?;
    let artifact = PathArtifact {
        version: VERSION.to_string(),
        config: serde_json::to_value(args)?,
        names: names.clone(),
        rhos: res.rhos.clone(),
        edge_counts: res.fits.iter().map(|f| f.nonzero_offdiag()).collect(),
        abic: res.abic.clone(),
        bic: res.bic.clone(),
        selected,
        models: res
            .fits
            .iter()
            .map(|f| PathModel {
                rho: f.rho,
                mu: f.params.mu().to_vec(),
                theta: f.params.theta().to_owned(),
                nonzero_offdiag: f.nonzero_offdiag(),
                kkt_residual: f.kkt_residual,
            })
            .collect(),
    };
    write_json(&args.out.join("path.json"), &artifact)?;
    write_edges_tsv(
        &args.out.join("edges.tsv"),
        &res.fits[selected].params.theta().to_owned(),
        &names,
    )?;
    println!(
        "path: K={} selected rho={} edges={}",
        args.k, res.rhos[selected], artifact.edge_counts[selected]
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TruthArtifact {
    version: String,
    config: serde_json::Value,
    mu: Vec<f64>,
    #[serde(with = "cglasso::io::serde_array2")]
    theta: Array2<f64>,
    /// true upper-triangle edges (h < k)
    edges: Vec<(usize, usize)>,
    seed: u64,
}

fn cmd_simulate(args: &SimArgs) -> Result<(), Error> {
    let spec = SimSpec {
        p: args.p,
        n: args.n,
        edge_prob: args.edge_prob,
        n_censored_vars: args.h,
        upper: args.u,
        censor_prob: args.censor_prob,
        uncensored: UncensoredMean::Uniform {
            lo: args.mu_lo,
            hi: args.mu_hi,
        },
        seed: args.seed,
    };
    spec.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let theta = sim::gen_sparse_precision(spec.p, spec.edge_prob, em::mix_seed(spec.seed, 0x7e7a));
    let (ds, truth, _) = sim::gen_censored_sample(&spec, &theta)?;
    std::fs::create_dir_all(&args.out)?;
    let names: Vec<String> = (0..args.p).map(|j| format!("x{j}")).collect();
    io::write_dataset_file(&args.out.join("dataset.csv"), &ds, &names)?;
    let artifact = TruthArtifact {
        version: VERSION.to_string(),
        config: serde_json::to_value(args)?,
        mu: truth.mu,
        theta: truth.theta,
        edges: truth.edges,
        seed: truth.seed,
    };
    write_json(&args.out.join("truth.json"), &artifact)?;
    println!(
        "simulate: n={} p={} censored cells={}",
        ds.n(),
        ds.p(),
        ds.n_censored()
    );
    Ok(())
}

#[derive(Serialize)]
struct BenchAggregateArtifact<'a> {
    version: &'a str,
    config: &'a BenchConfig,
    study: &'a str,
    replicates: usize,
    seed: u64,
    aggregates: &'a [sim::MethodAggregate],
    failures: &'a [String],
}

fn cmd_benchmark(args: &BenchArgs) -> Result<(), Error> {
    let cfg_file: Option<BenchConfig> = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Some(
                toml::from_str(&text)
                    .map_err(|e| Error::InvalidConfig(format!("bad config file: {e}")))?,
            )
        }
        None => None,
    };
    let bc = match cfg_file {
        Some(c) => c,
        None => BenchConfig {
            study: args
                .study
                .clone()
                .ok_or_else(|| Error::InvalidConfig("need --study or --config".into()))?,
            replicates: args.replicates,
            seed: args.seed,
            gibbs_sweeps: args.gibbs_sweeps,
            burn_in: args.burn_in,
        },
    };
    let study = Study::parse(&bc.study)?;
    let mut em_cfg = EmConfig::default();
    if bc.gibbs_sweeps > 0 {
        em_cfg.trunc.gibbs_sweeps = bc.gibbs_sweeps;
    }
    if bc.burn_in > 0 {
        em_cfg.trunc.burn_in = bc.burn_in;
    }
    let start = std::time::Instant::now();
    let report = sim::run_study(&study, bc.replicates, bc.seed, &em_cfg);
    let elapsed = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(&args.out)?;

    // one CSV row per (replicate, method); array metrics ';'-joined
    {
        use std::io::Write;
        let mut f = std::fs::File::create(args.out.join("report.csv"))?;
        writeln!(
            f,
            "study,replicate,method,min_mse_mu,min_mse_theta,auc,max_dmu_sq,max_dtheta_fsq,imputation_error,max_kkt,max_fp_rel,tpr,fpr"
        )?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";")
        };
        for r in &report.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                report.study,
                r.replicate,
                r.method,
                opt(r.min_mse_mu),
                opt(r.min_mse_theta),
                opt(r.auc),
                opt(r.max_dmu_sq),
                opt(r.max_dtheta_fsq),
                opt(r.imputation_error),
                opt(r.max_kkt),
                opt(r.max_fp_rel),
                join(&r.tpr),
                join(&r.fpr),
            )?;
        }
    }
    let artifact = BenchAggregateArtifact {
        version: VERSION,
        config: &bc,
        study: &report.study,
        replicates: report.replicates,
        seed: report.seed,
        aggregates: &report.aggregates,
        failures: &report.failures,
    };
    write_json(&args.out.join("aggregate.json"), &artifact)?;
    // timing goes to stderr only, keeping artifacts thread-count invariant
    eprintln!(
        "benchmark {}: {} replicates, {} failures, {elapsed:.1}s",
        report.study,
        report.replicates,
        report.failures.len()
    );
    for a in &report.aggregates {
        println!(
            "{}: auc={} min_mse_mu={} min_mse_theta={}",
            a.method,
            a.mean_auc.map(|v| format!("{v:.4}")).unwrap_or_default(),
            a.mean_min_mse_mu
                .map(|v| format!("{v:.4}"))
                .unwrap_or_default(),
            a.mean_min_mse_theta
                .map(|v| format!("{v:.4}"))
                .unwrap_or_default(),
        );
    }
    Ok(())
}

fn cmd_roc(args: &RocArgs) -> Result<(), Error> {
    let truth: TruthArtifact =
        serde_json::from_str(&std::fs::read_to_string(&args.truth)?)?;
    let path_art: PathArtifact =
        serde_json::from_str(&std::fs::read_to_string(&args.path_file)?)?;
    let p = truth.theta.nrows();
    let tr = sim::Truth {
        mu: truth.mu,
        theta: truth.theta,
        edges: truth.edges,
        seed: truth.seed,
    };
    for m in &path_art.models {
        if m.theta.nrows() != p {
            return Err(Error::DimensionMismatch(format!(
                "truth has p={p}, path model has p={}",
                m.theta.nrows()
            )));
        }
    }
    let thetas: Vec<Array2<f64>> = path_art.models.iter().map(|m| m.theta.clone()).collect();
    let metrics = sim::metrics(&tr, None, &thetas);
    std::fs::create_dir_all(&args.out)?;
    {
        use std::io::Write;
        let mut f = std::fs::File::create(args.out.join("roc.csv"))?;
        writeln!(f, "rho,tpr,fpr")?;
        for (j, rho) in path_art.rhos.iter().enumerate() {
            writeln!(f, "{},{},{}", rho, metrics.tpr[j], metrics.fpr[j])?;
        }
    }
    println!("roc: {} points, auc={:.4}", path_art.rhos.len(), metrics.auc);
    Ok(())
}
