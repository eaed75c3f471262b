//! Monte Carlo harness: DBPI-EM error traces against the per-run fixed point
//! `θ⋆(α)`, and DBPI-PCA traces against an eigensolver reference.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::dbpi::{self, AgentStateVector, RunOptions};
use crate::em_distributed::{average_theta_with, em_error_metric, em_initial_state, em_local_family, SingularPolicy};
use crate::em_model::{centralized_em_step, generate_dataset_with, random_unit_vector, SensorDataset, ThetaParams};
use crate::error::{Error, Result};
use crate::graph::{metropolis_weights, random_geometric_graph, WeightMatrix, DEFAULT_MAX_RETRIES};
use crate::pca::{
    eta_star, generate_agent_points, random_gapped_spectrum, random_start, sanger_local_family, subspace_error, unvec, vec_of,
    EigenTarget, SangerProblem,
};
use crate::rng::{seeded_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    Em,
    Pca,
}

impl std::fmt::Display for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Problem::Em => "em",
            Problem::Pca => "pca",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub n_agents: usize,
    pub d: usize,
    /// PCA target rank.
    pub m: usize,
    pub p_star: f64,
    pub snr_db_list: Vec<f64>,
    pub radius: f64,
    pub alpha_list: Vec<f64>,
    /// PCA step; `None` picks `0.9 · 2 / max|β|` from the sample covariance.
    pub eta: Option<f64>,
    pub points_per_agent: usize,
    pub iters: usize,
    pub record_every: usize,
    pub n_monte_carlo: usize,
    pub base_seed: u64,
    pub reference_tol: f64,
    pub reference_max_iters: usize,
    /// Ends a run once its error reaches this value.
    pub stop_below: Option<f64>,
    pub singular_policy: SingularPolicy,
}

impl ExperimentConfig {
    /// Network and data setup of the EM simulation study.
    pub fn em_default() -> Self {
        ExperimentConfig {
            problem: Problem::Em,
            n_agents: 100,
            d: 3,
            m: 1,
            p_star: 0.7,
            snr_db_list: vec![10.0, 20.0],
            radius: 0.18,
            alpha_list: vec![0.001, 0.005, 0.01],
            eta: None,
            points_per_agent: 1,
            iters: 10_000,
            record_every: 10,
            n_monte_carlo: 100,
            base_seed: 0,
            reference_tol: 1e-10,
            reference_max_iters: 1_000_000,
            stop_below: None,
            singular_policy: SingularPolicy::MinNorm,
        }
    }

    pub fn pca_default() -> Self {
        ExperimentConfig {
            problem: Problem::Pca,
            n_agents: 10,
            d: 6,
            m: 2,
            p_star: 0.7,
            snr_db_list: Vec::new(),
            radius: 0.6,
            alpha_list: vec![0.3],
            eta: None,
            points_per_agent: 200,
            iters: 20_000,
            record_every: 10,
            n_monte_carlo: 1,
            base_seed: 0,
            reference_tol: 1e-10,
            reference_max_iters: 1_000_000,
            stop_below: None,
            singular_policy: SingularPolicy::Strict,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.alpha_list.is_empty() {
            return bad("alpha list must be nonempty");
        }
        if self.alpha_list.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return bad("every alpha must be positive");
        }
        if self.iters == 0 {
            return bad("iters must be at least 1");
        }
        if self.n_monte_carlo == 0 {
            return bad("the number of Monte Carlo runs must be at least 1");
        }
        if self.n_agents == 0 || self.d == 0 {
            return bad("n and d must be positive");
        }
        if !(self.radius > 0.0) {
            return bad("radius must be positive");
        }
        if !(self.reference_tol > 0.0) {
            return bad("reference tolerance must be positive");
        }
        match self.problem {
            Problem::Em => {
                if self.snr_db_list.is_empty() || self.snr_db_list.iter().any(|s| !s.is_finite()) {
                    return bad("snr list must be nonempty and finite");
                }
                if !(self.p_star > 0.0 && self.p_star < 1.0) {
                    return bad("p_star must lie in (0, 1)");
                }
            }
            Problem::Pca => {
                if self.m == 0 || self.m > self.d {
                    return bad("m must lie in 1..=d");
                }
                if self.points_per_agent == 0 {
                    return bad("points per agent must be positive");
                }
                if let Some(eta) = self.eta {
                    if !(eta > 0.0) {
                        return bad("eta must be positive");
                    }
                }
            }
        }
        Ok(())
    }

    /// Flat `key=value` form; keys match the command-line flag names.
    pub fn to_key_value(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let _ = writeln!(out, "problem={}", self.problem);
        let _ = writeln!(out, "n={}", self.n_agents);
        let _ = writeln!(out, "d={}", self.d);
        match self.problem {
            Problem::Em => {
                let _ = writeln!(out, "p-star={}", self.p_star);
                let _ = writeln!(out, "snr-db={}", list(&self.snr_db_list));
                let _ = writeln!(out, "singular-policy={}", self.singular_policy);
                let _ = writeln!(out, "reference-tol={:e}", self.reference_tol);
            }
            Problem::Pca => {
                let _ = writeln!(out, "m={}", self.m);
                let _ = writeln!(out, "points-per-agent={}", self.points_per_agent);
                if let Some(eta) = self.eta {
                    let _ = writeln!(out, "eta={eta}");
                }
            }
        }
        let _ = writeln!(out, "radius={}", self.radius);
        let _ = writeln!(out, "alpha={}", list(&self.alpha_list));
        let _ = writeln!(out, "iters={}", self.iters);
        let _ = writeln!(out, "record-every={}", self.record_every);
        let _ = writeln!(out, "runs={}", self.n_monte_carlo);
        let _ = writeln!(out, "seed={}", self.base_seed);
        if let Some(s) = self.stop_below {
            let _ = writeln!(out, "stop-below={s:e}");
        }
        out
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::Parse(format!("bad value '{v}' for '{key}'")))
        }
        fn list(key: &str, v: &str) -> Result<Vec<f64>> {
            v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s)).collect()
        }
        match key {
            "problem" => {
                let p = match value.trim() {
                    "em" => Problem::Em,
                    "pca" => Problem::Pca,
                    other => return Err(Error::Parse(format!("unknown problem '{other}'"))),
                };
                if p != self.problem {
                    return Err(Error::Parse(format!("config is for '{p}', expected '{}'", self.problem)));
                }
            }
            "n" => self.n_agents = num(key, value)?,
            "d" => self.d = num(key, value)?,
            "m" => self.m = num(key, value)?,
            "p-star" => self.p_star = num(key, value)?,
            "snr-db" => self.snr_db_list = list(key, value)?,
            "radius" => self.radius = num(key, value)?,
            "alpha" => self.alpha_list = list(key, value)?,
            "eta" => self.eta = Some(num(key, value)?),
            "points-per-agent" => self.points_per_agent = num(key, value)?,
            "iters" => self.iters = num(key, value)?,
            "record-every" => self.record_every = num(key, value)?,
            "runs" => self.n_monte_carlo = num(key, value)?,
            "seed" => self.base_seed = num(key, value)?,
            "reference-tol" => self.reference_tol = num(key, value)?,
            "stop-below" => self.stop_below = Some(num(key, value)?),
            "singular-policy" => self.singular_policy = value.trim().parse()?,
            _ => return Err(Error::Parse(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies every line of a flat `key=value` file; `#` starts a comment.
    pub fn apply_key_value(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

/// Averaged trace for one step size.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSeries {
    pub alpha: f64,
    /// `(iteration, mean error)` over the runs that reached the iteration.
    pub points: Vec<(usize, f64)>,
    pub completed_runs: usize,
    pub diverged_runs: usize,
    /// Runs whose reference point could not be computed.
    pub reference_failures: usize,
    /// Agent evaluations skipped by the error metric (singular blocks).
    pub excluded_agent_evals: usize,
}

/// Output of one experiment (one SNR value for EM).
#[derive(Debug, Clone)]
pub struct ExperimentRecord {
    pub config: ExperimentConfig,
    pub snr_db: Option<f64>,
    pub series: Vec<TraceSeries>,
    pub wall_time: Duration,
}

impl ExperimentRecord {
    pub fn series_for(&self, alpha: f64) -> Option<&TraceSeries> {
        self.series.iter().find(|s| s.alpha == alpha)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,alpha,mean_error\n");
        for s in &self.series {
            for (k, e) in &s.points {
                let _ = writeln!(out, "{k},{},{e:e}", s.alpha);
            }
        }
        out
    }

    pub fn metadata(&self) -> String {
        let mut out = self.config.to_key_value();
        if let Some(snr) = self.snr_db {
            let _ = writeln!(out, "run-snr-db={snr}");
        }
        for s in &self.series {
            let _ = writeln!(out, "alpha_{}_completed={}", s.alpha, s.completed_runs);
            let _ = writeln!(out, "alpha_{}_diverged={}", s.alpha, s.diverged_runs);
            let _ = writeln!(out, "alpha_{}_reference_failures={}", s.alpha, s.reference_failures);
            let _ = writeln!(out, "alpha_{}_excluded_agent_evals={}", s.alpha, s.excluded_agent_evals);
        }
        let _ = writeln!(out, "wall_time_s={:.3}", self.wall_time.as_secs_f64());
        out
    }
}

/// Path of the metadata sidecar that accompanies `csv`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes the trace CSV and its `key=value` sidecar.
pub fn emit_csv(record: &ExperimentRecord, path: &Path) -> Result<()> {
    std::fs::write(path, record.to_csv())?;
    std::fs::write(sidecar_path(path), record.metadata())?;
    Ok(())
}

/// Error trace of a single run for one α.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub points: Vec<(usize, f64)>,
    pub diverged: bool,
    pub reference_failed: bool,
    /// Agent evaluations skipped by the error metric.
    pub excluded: usize,
}

fn average(alpha: f64, outcomes: &[RunTrace]) -> TraceSeries {
    let mut sums: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    let (mut completed, mut diverged, mut ref_fail, mut excluded) = (0, 0, 0, 0);
    // run-index order keeps the floating-point sums reproducible
    for o in outcomes {
        excluded += o.excluded;
        if o.diverged {
            diverged += 1;
            continue;
        }
        if o.reference_failed {
            ref_fail += 1;
            continue;
        }
        completed += 1;
        for &(k, e) in &o.points {
            let entry = sums.entry(k).or_insert((0.0, 0));
            entry.0 += e;
            entry.1 += 1;
        }
    }
    TraceSeries {
        alpha,
        points: sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect(),
        completed_runs: completed,
        diverged_runs: diverged,
        reference_failures: ref_fail,
        excluded_agent_evals: excluded,
    }
}

#[cfg(feature = "parallel")]
fn map_runs<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_runs<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Graph and `μ⋆` shared by all runs; both derive from `base_seed` only.
pub fn em_fixed_artifacts(config: &ExperimentConfig) -> Result<(WeightMatrix, DVector<f64>)> {
    let g = random_geometric_graph(config.n_agents, config.radius, config.base_seed, DEFAULT_MAX_RETRIES)?;
    let mu_star = random_unit_vector(config.d, &mut seeded_rng(config.base_seed, Stream::Truth.id()));
    Ok((metropolis_weights(&g), mu_star))
}

/// Dataset of Monte Carlo run `r` at the given SNR.
pub fn em_run_dataset(config: &ExperimentConfig, mu_star: &DVector<f64>, run: usize, snr_db: f64) -> Result<SensorDataset> {
    let mut rng = seeded_rng(config.base_seed.wrapping_add(run as u64), Stream::Data.id());
    Ok(generate_dataset_with(config.n_agents, mu_star, config.p_star, snr_db, &mut rng)?.0)
}

/// `θ⋆(α)`: start from the network average of `g₁(z_n)` and iterate
/// `g₁ ∘ g₂`; returns the first iterate with `‖θ − g₁∘g₂(θ)‖ ≤ tol`.
pub fn em_reference(
    data: &SensorDataset,
    z: &AgentStateVector,
    policy: SingularPolicy,
    tol: f64,
    max_iters: usize,
) -> Result<ThetaParams> {
    let mut theta = average_theta_with(z, data.dim(), policy)?;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let next = centralized_em_step(data, &theta)?;
        residual = theta.distance(&next);
        if residual <= tol {
            return Ok(theta);
        }
        theta = next;
    }
    Err(Error::NotConverged { iters: max_iters, residual })
}

/// One DBPI-EM run on `data`, its error measured against `θ⋆(α)`.
pub fn em_run_trace(
    config: &ExperimentConfig,
    w: &WeightMatrix,
    data: &SensorDataset,
    alpha: f64,
) -> Result<RunTrace> {
    let fam = em_local_family(data).with_policy(config.singular_policy);
    let z0 = em_initial_state(data, w)?;
    let opts = RunOptions { max_iters: config.iters, record_every: config.record_every, stop_below: None };
    // pass 1 locates θ⋆(α) from the terminal state; pass 2 replays the
    // identical deterministic run and records the error against it
    let first = dbpi::run(&fam, w, z0.clone(), alpha, opts, |_| 0.0)?;
    let Some(z_final) = first.final_state else {
        return Ok(RunTrace { points: Vec::new(), diverged: true, reference_failed: false, excluded: 0 });
    };
    let reference = match em_reference(data, &z_final, config.singular_policy, config.reference_tol, config.reference_max_iters) {
        Ok(t) => t,
        Err(_) => return Ok(RunTrace { points: Vec::new(), diverged: false, reference_failed: true, excluded: 0 }),
    };
    let mut excluded = 0usize;
    let opts = RunOptions { stop_below: config.stop_below, ..opts };
    let rec = dbpi::run(&fam, w, z0, alpha, opts, |z| match em_error_metric(z, &reference) {
        Ok(m) => {
            excluded += m.excluded;
            m.value
        }
        Err(_) => f64::NAN,
    })?;
    Ok(RunTrace { points: rec.points.clone(), diverged: rec.diverged(), reference_failed: false, excluded })
}

/// DBPI-EM Monte Carlo study; one record per SNR value, in list order.
pub fn em_experiment(config: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    if config.problem != Problem::Em {
        return Err(Error::InvalidArgument("em_experiment needs an em config".into()));
    }
    config.validate()?;
    let (w, mu_star) = em_fixed_artifacts(config)?;
    let mut records = Vec::new();
    for &snr in &config.snr_db_list {
        let start = Instant::now();
        let per_run: Vec<Result<Vec<RunTrace>>> = map_runs(config.n_monte_carlo, |r| {
            let data = em_run_dataset(config, &mu_star, r, snr)?;
            config.alpha_list.iter().map(|&a| em_run_trace(config, &w, &data, a)).collect()
        });
        let per_run: Vec<Vec<RunTrace>> = per_run.into_iter().collect::<Result<_>>()?;
        let series = config
            .alpha_list
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let outcomes: Vec<RunTrace> = per_run.iter().map(|v| v[i].clone()).collect();
                average(a, &outcomes)
            })
            .collect();
        records.push(ExperimentRecord { config: config.clone(), snr_db: Some(snr), series, wall_time: start.elapsed() });
    }
    Ok(records)
}

/// Everything a single PCA run needs besides `α`.
#[derive(Debug, Clone)]
pub struct PcaInstance {
    pub problem: SangerProblem,
    pub target: EigenTarget,
    pub x0: DMatrix<f64>,
}

/// Point sets, reference and common start of PCA run `r`.
pub fn pca_instance(config: &ExperimentConfig, run: usize) -> Result<PcaInstance> {
    let seed = config.base_seed.wrapping_add(run as u64);
    let mut rng = seeded_rng(seed, Stream::Data.id());
    let spectrum = random_gapped_spectrum(config.d, config.m, &mut rng);
    let points = generate_agent_points(config.n_agents, config.points_per_agent, &spectrum, &mut rng);
    let provisional = SangerProblem::from_points(&points, 1.0, config.m)?;
    let target = EigenTarget::from_covariance(provisional.covariance(), config.m)?;
    let eta = match config.eta {
        Some(e) => e,
        None => {
            let all = EigenTarget::from_covariance(provisional.covariance(), config.d)?;
            0.9 * eta_star(&all.lambdas, config.m)?
        }
    };
    let problem = provisional.with_eta(eta)?;
    let mut init = seeded_rng(seed, Stream::Init.id());
    let x0 = random_start(config.d, config.m, &mut init);
    Ok(PcaInstance { problem, target, x0 })
}

/// `(1/N) Σ_n subspace_error(X_n, X⋆)`.
pub fn pca_error(z: &AgentStateVector, target: &EigenTarget) -> f64 {
    let (d, m) = target.x_star.shape();
    z.blocks().map(|b| subspace_error(&unvec(b, d, m), &target.x_star)).sum::<f64>() / z.n_agents() as f64
}

/// DBPI-PCA study with every agent starting from the same random `X⁰`.
pub fn pca_experiment(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    if config.problem != Problem::Pca {
        return Err(Error::InvalidArgument("pca_experiment needs a pca config".into()));
    }
    config.validate()?;
    let start = Instant::now();
    let g = random_geometric_graph(config.n_agents, config.radius, config.base_seed, DEFAULT_MAX_RETRIES)?;
    let w = metropolis_weights(&g);
    let opts = RunOptions { max_iters: config.iters, record_every: config.record_every, stop_below: config.stop_below };
    let per_run: Vec<Result<Vec<RunTrace>>> = map_runs(config.n_monte_carlo, |r| {
        let inst = pca_instance(config, r)?;
        let fam = sanger_local_family(&inst.problem);
        let z0 = AgentStateVector::consensus(&vec_of(&inst.x0), config.n_agents);
        config
            .alpha_list
            .iter()
            .map(|&a| {
                let rec = dbpi::run(&fam, &w, z0.clone(), a, opts, |z| pca_error(z, &inst.target))?;
                Ok(RunTrace { points: rec.points.clone(), diverged: rec.diverged(), reference_failed: false, excluded: 0 })
            })
            .collect()
    });
    let per_run: Vec<Vec<RunTrace>> = per_run.into_iter().collect::<Result<_>>()?;
    let series = config
        .alpha_list
        .iter()
        .enumerate()
        .map(|(i, &a)| average(a, &per_run.iter().map(|v| v[i].clone()).collect::<Vec<_>>()))
        .collect();
    Ok(ExperimentRecord { config: config.clone(), snr_db: None, series, wall_time: start.elapsed() })
}

/// Least-squares line through `(k, ln e)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `ln e = a + b k` over the points with positive finite error. `None`
/// with fewer than 3 usable points.
pub fn log_linear_fit(points: &[(usize, f64)]) -> Option<LogLinearFit> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(_, e)| *e > 0.0 && e.is_finite()).map(|&(k, e)| (k as f64, e.ln())).collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LogLinearFit { slope, intercept, r_squared })
}

/// The last `fraction` of the recorded points.
pub fn tail(points: &[(usize, f64)], fraction: f64) -> &[(usize, f64)] {
    let keep = ((points.len() as f64) * fraction).ceil() as usize;
    &points[points.len() - keep.min(points.len())..]
}
