//! Browser bindings: build a network, run DBPI-EM on it, and sweep the
//! Sanger step size against the local contraction factor.

use nalgebra::{DMatrix, DVector};
use wasm_bindgen::prelude::*;

use dbpi::experiments::{em_fixed_artifacts, em_run_dataset, em_run_trace, ExperimentConfig};
use dbpi::graph::{metropolis_weights, random_geometric_graph, DEFAULT_MAX_RETRIES};
use dbpi::pca::{eta_star, sanger_jacobian_fd, EigenTarget, SangerProblem};

#[wasm_bindgen]
pub struct Network {
    positions: Vec<f64>,
    edges: Vec<u32>,
    degrees: Vec<u32>,
    consensus_rho: f64,
}

#[wasm_bindgen]
impl Network {
    /// `[x0, y0, x1, y1, ...]` in the unit square.
    pub fn positions(&self) -> Vec<f64> {
        self.positions.clone()
    }

    /// `[a0, b0, a1, b1, ...]` node index pairs.
    pub fn edges(&self) -> Vec<u32> {
        self.edges.clone()
    }

    pub fn degrees(&self) -> Vec<u32> {
        self.degrees.clone()
    }

    /// `ρ(W − 11ᵀ/N)` for the Metropolis weights.
    #[wasm_bindgen(getter)]
    pub fn consensus_rho(&self) -> f64 {
        self.consensus_rho
    }
}

pub fn build_network(n: usize, radius: f64, seed: u64) -> Result<Network, String> {
    let g = random_geometric_graph(n, radius, seed, DEFAULT_MAX_RETRIES).map_err(|e| e.to_string())?;
    let w = metropolis_weights(&g);
    let positions = g.positions().map(|p| p.iter().flat_map(|q| [q[0], q[1]]).collect()).unwrap_or_default();
    let edges = g.edges().iter().flat_map(|&(a, b)| [a as u32, b as u32]).collect();
    let degrees = g.degrees().into_iter().map(|d| d as u32).collect();
    let consensus_rho = w.consensus_spectral_radius().map_err(|e| e.to_string())?;
    Ok(Network { positions, edges, degrees, consensus_rho })
}

#[wasm_bindgen]
pub fn network(n: usize, radius: f64, seed: u32) -> Result<Network, JsError> {
    build_network(n, radius, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct Trace {
    iterations: Vec<u32>,
    errors: Vec<f64>,
    diverged: bool,
}

#[wasm_bindgen]
impl Trace {
    pub fn iterations(&self) -> Vec<u32> {
        self.iterations.clone()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.errors.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn diverged(&self) -> bool {
        self.diverged
    }
}

/// One DBPI-EM run (run 0 of `seed`) on the network of the same seed.
pub fn run_em_trace(
    n: usize,
    radius: f64,
    snr_db: f64,
    alpha: f64,
    iters: usize,
    seed: u64,
) -> Result<Trace, String> {
    let config = ExperimentConfig {
        n_agents: n,
        radius,
        snr_db_list: vec![snr_db],
        alpha_list: vec![alpha],
        iters,
        record_every: (iters / 200).max(1),
        n_monte_carlo: 1,
        base_seed: seed,
        ..ExperimentConfig::em_default()
    };
    config.validate().map_err(|e| e.to_string())?;
    let (w, mu_star) = em_fixed_artifacts(&config).map_err(|e| e.to_string())?;
    let data = em_run_dataset(&config, &mu_star, 0, snr_db).map_err(|e| e.to_string())?;
    let t = em_run_trace(&config, &w, &data, alpha).map_err(|e| e.to_string())?;
    Ok(Trace {
        iterations: t.points.iter().map(|p| p.0 as u32).collect(),
        errors: t.points.iter().map(|p| p.1).collect(),
        diverged: t.diverged || t.reference_failed,
    })
}

#[wasm_bindgen]
pub fn em_trace(n: usize, radius: f64, snr_db: f64, alpha: f64, iters: usize, seed: u32) -> Result<Trace, JsError> {
    run_em_trace(n, radius, snr_db, alpha, iters, seed as u64).map_err(|e| JsError::new(&e))
}

/// `[η⋆, r0, ρ0, r1, ρ1, ...]`: `ρ(J_H(X⋆))` at `η = r · η⋆` for `points`
/// ratios spread over `(0, max_ratio]`, with `C = diag(λ)`.
pub fn rho_sweep(lambdas: &[f64], m: usize, points: usize, max_ratio: f64) -> Result<Vec<f64>, String> {
    if points == 0 || !(max_ratio > 0.0) {
        return Err("need at least one point and a positive ratio".into());
    }
    let c = DMatrix::from_diagonal(&DVector::from_column_slice(lambdas));
    let full = EigenTarget::from_covariance(&c, lambdas.len()).map_err(|e| e.to_string())?;
    let target = EigenTarget::from_covariance(&c, m).map_err(|e| e.to_string())?;
    let star = eta_star(&full.lambdas, m).map_err(|e| e.to_string())?;
    let mut out = vec![star];
    for i in 1..=points {
        let ratio = max_ratio * i as f64 / points as f64;
        let p = SangerProblem::from_covariance(c.clone(), ratio * star, m).map_err(|e| e.to_string())?;
        let jh = sanger_jacobian_fd(&p, &target.x_star).map_err(|e| e.to_string())?;
        let rho = dbpi::numerics::spectral_radius(&jh).map_err(|e| e.to_string())?;
        out.push(ratio);
        out.push(rho);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn sanger_rho_sweep(lambdas: Vec<f64>, m: usize, points: usize, max_ratio: f64) -> Result<Vec<f64>, JsError> {
    rho_sweep(&lambdas, m, points, max_ratio).map_err(|e| JsError::new(&e))
}
