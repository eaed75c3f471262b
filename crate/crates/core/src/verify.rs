//! Self-contained verification suites: each builds random instances from a
//! seed, runs the implementation and an independent check, and reports.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::em_distributed::em_local_family;
use crate::em_model::{
    em_step_jacobian_fd, g2, generate_dataset, log_likelihood, random_unit_vector, run_centralized, score_phi, t_prime,
    EmVariant, ThetaParams,
};
use crate::error::{Error, Result};
use crate::graph::{metropolis_weights, random_geometric_graph, DEFAULT_MAX_RETRIES};
use crate::numerics::{fd_jacobian, spectral_radius};
use crate::pca::{
    centralized_sanger, covariance_with_spectrum, eta_star, random_gapped_spectrum, random_start, verify_attractor,
    verify_fixed_point_structure, EigenTarget, SangerProblem,
};
use crate::report::{Check, Report};
use crate::rng::{seeded_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Graph,
    Pca,
    Em,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph" | "metropolis" => Ok(Suite::Graph),
            "pca" => Ok(Suite::Pca),
            "em" => Ok(Suite::Em),
            "all" => Ok(Suite::All),
            _ => Err(Error::Parse(format!("unknown suite '{s}' (graph | pca | em | all)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub d: usize,
    pub m: usize,
    /// Sample count for the EM suite.
    pub n: usize,
    /// Number of random graphs in the graph suite.
    pub graphs: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { d: 3, m: 2, n: 1000, graphs: 50, seed: 0 }
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<Report> {
    match suite {
        Suite::Graph => graph_suite(opts),
        Suite::Pca => pca_suite(opts),
        Suite::Em => em_suite(opts),
        Suite::All => {
            let mut all = Report::new("all");
            all.extend(graph_suite(opts)?);
            all.extend(pca_suite(opts)?);
            all.extend(em_suite(opts)?);
            Ok(all)
        }
    }
}

/// Metropolis weights on random connected geometric graphs of 5 to 100
/// nodes: symmetric, stochastic, nonnegative, and `ρ(W − 11ᵀ/N) < 1`.
pub fn graph_suite(opts: &VerifyOptions) -> Result<Report> {
    let mut sizes = seeded_rng(opts.seed, Stream::Truth.id());
    let (mut sym, mut rows, mut min_entry, mut rho) = (0.0f64, 0.0f64, f64::INFINITY, 0.0f64);
    for i in 0..opts.graphs {
        let n = sizes.random_range(5..=100);
        // comfortably above the connectivity threshold
        let radius = (1.5 * (n as f64).ln() / n as f64).sqrt().max(0.2);
        let g = random_geometric_graph(n, radius, opts.seed.wrapping_add(i as u64), DEFAULT_MAX_RETRIES)?;
        let w = metropolis_weights(&g);
        sym = sym.max(w.max_symmetry_error());
        rows = rows.max(w.max_row_sum_error());
        min_entry = min_entry.min(w.min_entry());
        rho = rho.max(w.consensus_spectral_radius()?);
    }
    let mut r = Report::new("metropolis");
    r.value("graphs", opts.graphs as f64);
    r.push(Check::at_most("symmetric", sym, 1e-12));
    r.push(Check::at_most("row_stochastic", rows, 1e-12));
    r.push(Check::flag("nonnegative", min_entry >= 0.0));
    r.push(Check::below("consensus_rho_below_one", rho, 1.0));
    Ok(r)
}

/// Sanger fixed-point structure, recovered eigenvalues, the closed-form
/// Jacobian spectrum and the stability boundary on one random covariance.
pub fn pca_suite(opts: &VerifyOptions) -> Result<Report> {
    let (d, m) = (opts.d, opts.m);
    if m == 0 || m > d {
        return Err(Error::InvalidArgument(format!("m = {m} must lie in 1..={d}")));
    }
    let mut rng = seeded_rng(opts.seed, Stream::Truth.id());
    let lambdas = random_gapped_spectrum(d, m, &mut rng);
    let c = covariance_with_spectrum(&lambdas, &mut rng);
    let full = EigenTarget::from_covariance(&c, d)?;
    let target = EigenTarget::from_covariance(&c, m)?;
    let star = eta_star(&full.lambdas, m)?;
    let problem = SangerProblem::from_covariance(c.clone(), 0.9 * star, m)?;

    let mut init = seeded_rng(opts.seed, Stream::Init.id());
    let x0 = random_start(d, m, &mut init);
    let mut r = Report::new("pca");
    r.value("eta_star", star);
    match centralized_sanger(&problem, &x0, 1e-10, 1_000_000) {
        Ok((x, iters)) => {
            r.value("sanger_iterations", iters as f64);
            r.push(Check::flag("centralized_converged", true));
            let structure = verify_fixed_point_structure(&problem, &x, 1e-8)?;
            for ch in structure.checks {
                r.push(ch);
            }
            let recovered = (x.transpose() * &c * &x).diagonal();
            let gap = recovered.iter().zip(&target.lambdas).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            r.push(Check::at_most("eigenvalues_match_dense_solver", gap, 1e-8));
        }
        Err(_) => r.push(Check::flag("centralized_converged", false)),
    }

    let stable = verify_attractor(&problem, &target, 0.9 * star)?;
    for ch in stable.report.checks {
        r.push(ch);
    }
    let edge = verify_attractor(&problem, &target, star)?;
    r.value("rho_at_eta_star", edge.rho);
    r.push(Check::flag("rho_reaches_one_at_eta_star", edge.rho >= 1.0 - 1e-6));
    Ok(r)
}

/// Score identities against finite differences of the log-density, and the
/// centralized EM fixed point with its local contraction certificate.
pub fn em_suite(opts: &VerifyOptions) -> Result<Report> {
    let d = opts.d;
    let mut r = Report::new("em");
    let mut rng = seeded_rng(opts.seed, Stream::Init.id());
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let h = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let theta = ThetaParams::new(
            DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)),
            0.1 + 0.8 * rng.random::<f64>(),
            0.2 + rng.random::<f64>(),
        )?;
        let y = 0.5 * theta.mu.dot(&h) + rng.sample::<f64, _>(StandardNormal);
        let g = score_phi(y, &h, &theta);
        let x = theta.to_vec();
        let fd = fd_jacobian(
            |v: &[f64]| Ok::<_, Error>(vec![log_likelihood(y, &h, &ThetaParams::from_slice(v)?)]),
            &x,
            1e-6,
        )?;
        for j in 0..d + 2 {
            let rel = (fd[(0, j)] - g[j]).abs() / g[j].abs().max(1.0);
            let slot = if j < d { 0 } else { j - d + 1 };
            worst[slot] = worst[slot].max(rel);
        }
    }
    r.push(Check::at_most("score_mu_matches_fd", worst[0], 1e-5));
    r.push(Check::at_most("score_p_matches_fd", worst[1], 1e-5));
    r.push(Check::at_most("score_sigma2_matches_fd", worst[2], 1e-5));

    let mu_star = random_unit_vector(d, &mut seeded_rng(opts.seed, Stream::Truth.id()));
    let (data, _) = generate_dataset(opts.n, &mu_star, 0.7, 20.0, opts.seed)?;
    let start = ThetaParams::initial_guess(&data)?;
    let modified = run_centralized(&data, &start, EmVariant::Modified, 1e-10, 1_000_000);
    let standard = run_centralized(&data, &start, EmVariant::Standard, 1e-10, 1_000_000);
    let (Ok(fit), Ok(std_fit)) = (modified, standard) else {
        r.push(Check::flag("centralized_converged", false));
        return Ok(r);
    };
    r.push(Check::flag("centralized_converged", true));
    r.value("iterations", fit.iters as f64);
    let rho = fit.rho.unwrap_or(f64::INFINITY);
    r.push(Check::below("rho_t_prime_below_one", rho, 1.0));
    r.push(Check::at_most("standard_matches_modified", fit.theta.distance(&std_fit.theta), 1e-8));

    let tp = t_prime(&data, &fit.theta)?;
    let fd = em_step_jacobian_fd(&data, &fit.theta)?;
    r.push(Check::at_most("t_prime_matches_fd_jacobian", (&tp - &fd).amax(), 1e-4));

    let fam = em_local_family(&data);
    let z_star = fam.layout().pack(&g2(&data, &fit.theta))?;
    let jz = fd_jacobian(|v: &[f64]| fam.averaged_map(v), &z_star, 1e-6)?;
    let rho_z = spectral_radius(&jz)?;
    r.push(Check::at_most("averaged_map_rho_matches", (rho_z - rho).abs(), 1e-4));
    Ok(r)
}
