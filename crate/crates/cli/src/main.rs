use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use dbpi::em_model::{generate_dataset, random_unit_vector, GroundTruth};
use dbpi::experiments::{em_experiment, emit_csv, pca_experiment, ExperimentConfig, ExperimentRecord};
use dbpi::graph::{metropolis_weights, random_geometric_graph, DEFAULT_MAX_RETRIES};
use dbpi::rng::{seeded_rng, Stream};
use dbpi::verify::{run_suite, Suite, VerifyOptions};

/// Distributed Banach-Picard iteration: graphs, synthetic data, DBPI-PCA
/// and DBPI-EM experiments, and verification suites.
#[derive(Parser, Debug)]
#[command(name = "dbpi", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Random geometric graph: edge list and Metropolis weights.
    Graph(GraphArgs),
    /// Synthetic sensor dataset (`y,h1,...,hd`) with a ground-truth sidecar.
    GenData(GenDataArgs),
    /// DBPI-PCA convergence study.
    PcaRun(PcaArgs),
    /// DBPI-EM Monte Carlo study.
    EmRun(EmArgs),
    /// Runs verification suites; exit status 1 if any check fails.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct GraphArgs {
    /// Number of nodes
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Connection radius in the unit square
    #[arg(long, default_value_t = 0.18)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Edge list output (stdout when absent)
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Dense weight matrix CSV output
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 0.7)]
    p_star: f64,
    #[arg(long, default_value_t = 20.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset CSV; the ground truth goes to `<out>.truth`
    #[arg(long)]
    out: PathBuf,
}

/// Flags shared by both experiment commands. Unset flags fall back to the
/// config file, then to the built-in defaults.
#[derive(Args, Debug)]
struct CommonExperimentArgs {
    /// Flat key=value file whose keys are these flag names
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of agents [em: 100, pca: 10]
    #[arg(long)]
    n: Option<usize>,
    /// Dimension [em: 3, pca: 6]
    #[arg(long)]
    d: Option<usize>,
    /// Graph radius [em: 0.18, pca: 0.6]
    #[arg(long)]
    radius: Option<f64>,
    /// Comma-separated step sizes [em: 0.001,0.005,0.01, pca: 0.3]
    #[arg(long)]
    alpha: Option<String>,
    /// Iterations per run [em: 10000, pca: 20000]
    #[arg(long)]
    iters: Option<usize>,
    /// Recording interval [10]
    #[arg(long)]
    record_every: Option<usize>,
    /// Monte Carlo runs [em: 100, pca: 1]
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed; run r uses seed + r [0]
    #[arg(long)]
    seed: Option<u64>,
    /// End each run once its error reaches this value
    #[arg(long)]
    stop_below: Option<f64>,
    /// Output CSV (`iteration,alpha,mean_error`) plus `<out>.meta`
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PcaArgs {
    #[command(flatten)]
    common: CommonExperimentArgs,
    /// Number of principal components [2]
    #[arg(long)]
    m: Option<usize>,
    /// Points held by each agent [200]
    #[arg(long)]
    points_per_agent: Option<usize>,
    /// Sanger step [0.9 of the stability limit]
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Args, Debug)]
struct EmArgs {
    #[command(flatten)]
    common: CommonExperimentArgs,
    /// Signal probability [0.7]
    #[arg(long)]
    p_star: Option<f64>,
    /// Comma-separated SNR values in dB [10,20]
    #[arg(long)]
    snr_db: Option<String>,
    /// Stopping tolerance of the reference fixed point [1e-10]
    #[arg(long)]
    reference_tol: Option<f64>,
    /// strict | min-norm [min-norm]
    #[arg(long)]
    singular_policy: Option<String>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// graph | pca | em | all
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// EM sample count
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Graphs in the Metropolis suite
    #[arg(long, default_value_t = 50)]
    graphs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Error raised for bad user input; mapped to exit status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: dbpi::Error) -> anyhow::Error {
    match e {
        dbpi::Error::InvalidArgument(_) | dbpi::Error::Parse(_) => UsageError(e.to_string()).into(),
        other => other.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Graph(a) => graph(a),
        Command::GenData(a) => gen_data(a),
        Command::PcaRun(a) => pca_run(a),
        Command::EmRun(a) => em_run(a),
        Command::Verify(a) => verify(a),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn graph(a: GraphArgs) -> Result<bool> {
    let g = random_geometric_graph(a.n, a.radius, a.seed, DEFAULT_MAX_RETRIES).map_err(usage)?;
    let w = metropolis_weights(&g);
    match &a.edges {
        Some(p) => write(p, &g.to_edge_list())?,
        None => print!("{}", g.to_edge_list()),
    }
    if let Some(p) = &a.weights {
        write(p, &w.to_csv())?;
    }
    eprintln!("nodes={} edges={} consensus_rho={:.6}", g.n_nodes(), g.edges().len(), w.consensus_spectral_radius()?);
    Ok(true)
}

fn gen_data(a: GenDataArgs) -> Result<bool> {
    if a.d == 0 {
        return Err(UsageError("d must be positive".into()).into());
    }
    // same streams as the experiment harness: run 0 of base seed `seed`
    let mu_star = random_unit_vector(a.d, &mut seeded_rng(a.seed, Stream::Truth.id()));
    let (data, sigma2_star) = generate_dataset(a.n, &mu_star, a.p_star, a.snr_db, a.seed).map_err(usage)?;
    let truth = GroundTruth { mu_star, p_star: a.p_star, sigma2_star, seed: a.seed, snr_db: a.snr_db };
    write(&a.out, &data.to_csv())?;
    let mut side = a.out.as_os_str().to_owned();
    side.push(".truth");
    write(Path::new(&side), &truth.to_key_value())?;
    Ok(true)
}

fn apply_common(cfg: &mut ExperimentConfig, c: &CommonExperimentArgs) -> Result<()> {
    if let Some(p) = &c.config {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg.apply_key_value(&text).map_err(usage)?;
    }
    let mut set = |k: &str, v: Option<String>| -> Result<()> {
        if let Some(v) = v {
            cfg.set(k, &v).map_err(usage)?;
        }
        Ok(())
    };
    set("n", c.n.map(|v| v.to_string()))?;
    set("d", c.d.map(|v| v.to_string()))?;
    set("radius", c.radius.map(|v| v.to_string()))?;
    set("alpha", c.alpha.clone())?;
    set("iters", c.iters.map(|v| v.to_string()))?;
    set("record-every", c.record_every.map(|v| v.to_string()))?;
    set("runs", c.runs.map(|v| v.to_string()))?;
    set("seed", c.seed.map(|v| v.to_string()))?;
    set("stop-below", c.stop_below.map(|v| v.to_string()))?;
    Ok(())
}

fn summarize(rec: &ExperimentRecord, path: &Path) {
    for s in &rec.series {
        eprintln!(
            "{} alpha={} completed={} diverged={} reference_failures={} final_error={}",
            path.display(),
            s.alpha,
            s.completed_runs,
            s.diverged_runs,
            s.reference_failures,
            s.points.last().map(|p| format!("{:e}", p.1)).unwrap_or_else(|| "none".into()),
        );
    }
}

fn pca_run(a: PcaArgs) -> Result<bool> {
    let mut cfg = ExperimentConfig::pca_default();
    apply_common(&mut cfg, &a.common)?;
    for (k, v) in [
        ("m", a.m.map(|v| v.to_string())),
        ("points-per-agent", a.points_per_agent.map(|v| v.to_string())),
        ("eta", a.eta.map(|v| v.to_string())),
    ] {
        if let Some(v) = v {
            cfg.set(k, &v).map_err(usage)?;
        }
    }
    cfg.validate().map_err(usage)?;
    let rec = pca_experiment(&cfg).map_err(usage)?;
    emit_csv(&rec, &a.common.out)?;
    summarize(&rec, &a.common.out);
    Ok(true)
}

/// `trace.csv` → `trace_snr20.csv`
fn per_snr_path(out: &Path, snr: f64) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_snr{snr}.{}", ext.to_string_lossy()),
        None => format!("{stem}_snr{snr}"),
    };
    out.with_file_name(name)
}

fn em_run(a: EmArgs) -> Result<bool> {
    let mut cfg = ExperimentConfig::em_default();
    apply_common(&mut cfg, &a.common)?;
    for (k, v) in [
        ("p-star", a.p_star.map(|v| v.to_string())),
        ("snr-db", a.snr_db.clone()),
        ("reference-tol", a.reference_tol.map(|v| v.to_string())),
        ("singular-policy", a.singular_policy.clone()),
    ] {
        if let Some(v) = v {
            cfg.set(k, &v).map_err(usage)?;
        }
    }
    cfg.validate().map_err(usage)?;
    let records = em_experiment(&cfg).map_err(usage)?;
    let single = records.len() == 1;
    for rec in &records {
        let path = if single { a.common.out.clone() } else { per_snr_path(&a.common.out, rec.snr_db.unwrap_or(0.0)) };
        emit_csv(rec, &path)?;
        summarize(rec, &path);
    }
    Ok(true)
}

fn verify(a: VerifyArgs) -> Result<bool> {
    let suite: Suite = a.suite.parse().map_err(usage)?;
    let opts = VerifyOptions { d: a.d, m: a.m, n: a.n, graphs: a.graphs, seed: a.seed };
    let report = run_suite(suite, &opts).map_err(usage)?;
    print!("{report}");
    let failures = report.failures();
    println!("summary: {} checks, {} failed", report.checks.len(), failures.len());
    Ok(failures.is_empty())
}
