//! Sensor model `y = z hᵀμ + w` with `z ~ Bernoulli(p)`, `w ~ N(0, σ²)`,
//! and the EM-style fixed-point maps used to estimate `θ = (μ, p, σ²)`.
//!
//! The modified EM map is `T_N = g₁ ∘ g₂`: `g₂` averages per-sample
//! sufficient statistics `(Γ, ψ, r, γ)` and `g₁` solves `μ = Γ⁻¹ψ`. The
//! standard EM map `ĝ₁ ∘ ĝ₂` differs only in the σ² update.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics;
use crate::rng::{seeded_rng, Stream};

/// Reciprocal condition number below which `Γ` is treated as singular.
pub const SINGULAR_RCOND: f64 = 1e-12;

/// `|Δ|` cap inside the responsibility exponential.
const EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParams {
    pub mu: DVector<f64>,
    pub p: f64,
    pub sigma2: f64,
}

impl ThetaParams {
    pub fn new(mu: DVector<f64>, p: f64, sigma2: f64) -> Result<Self> {
        let theta = ThetaParams { mu, p, sigma2 };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::DomainExit(format!("p = {} not in (0, 1)", self.p)));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::DomainExit(format!("sigma2 = {} not positive", self.sigma2)));
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainExit("mu has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `[μ, p, σ²]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.mu.as_slice().to_vec();
        v.push(self.p);
        v.push(self.sigma2);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() < 3 {
            return Err(Error::DimensionMismatch { expected: 3, got: v.len() });
        }
        let d = v.len() - 2;
        Self::new(DVector::from_column_slice(&v[..d]), v[d], v[d + 1])
    }

    pub fn distance(&self, other: &ThetaParams) -> f64 {
        crate::dbpi::euclidean(&self.to_vec(), &other.to_vec())
    }

    /// Least-squares μ, `p = 1/2`, `σ² = mean(y²)/2`.
    pub fn initial_guess(data: &SensorDataset) -> Result<Self> {
        let h = data.h_matrix();
        let hty = h.transpose() * DVector::from_column_slice(data.y());
        let hth = h.transpose() * &h;
        let mu = solve_checked(&hth, &hty)?;
        let a = data.y().iter().map(|y| y * y).sum::<f64>() / data.len() as f64;
        Self::new(mu, 0.5, a / 2.0)
    }
}

/// Measurements `y` and regressors `h_n`, one per agent. The hidden labels
/// are kept only for diagnostics and never reach an estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorDataset {
    y: Vec<f64>,
    h: Vec<DVector<f64>>,
    z_hidden: Option<Vec<bool>>,
}

impl SensorDataset {
    pub fn new(y: Vec<f64>, h: Vec<DVector<f64>>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one measurement".into()));
        }
        if y.len() != h.len() {
            return Err(Error::DimensionMismatch { expected: y.len(), got: h.len() });
        }
        let d = h[0].len();
        if d == 0 || h.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("regressors must share a positive dimension".into()));
        }
        if y.iter().chain(h.iter().flat_map(|r| r.iter())).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite measurement or regressor".into()));
        }
        Ok(SensorDataset { y, h, z_hidden: None })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.h[0].len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn h(&self, n: usize) -> &DVector<f64> {
        &self.h[n]
    }

    pub fn hidden_labels(&self) -> Option<&[bool]> {
        self.z_hidden.as_deref()
    }

    /// `N × d` with row `n` equal to `h_nᵀ`.
    pub fn h_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dim(), |i, j| self.h[i][j])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("y");
        for j in 1..=self.dim() {
            let _ = write!(out, ",h{j}");
        }
        out.push('\n');
        for (y, h) in self.y.iter().zip(&self.h) {
            let _ = write!(out, "{y:e}");
            for v in h.iter() {
                let _ = write!(out, ",{v:e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty dataset".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"y") || cols.len() < 2 {
            return Err(Error::Parse(format!("bad header '{header}'")));
        }
        let d = cols.len() - 1;
        let (mut y, mut h) = (Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Parse(format!("row {}: {e}", i + 1)))?;
            if vals.len() != d + 1 {
                return Err(Error::Parse(format!("row {} has {} fields, expected {}", i + 1, vals.len(), d + 1)));
            }
            y.push(vals[0]);
            h.push(DVector::from_column_slice(&vals[1..]));
        }
        Self::new(y, h)
    }
}

/// Ground truth written next to a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub mu_star: DVector<f64>,
    pub p_star: f64,
    pub sigma2_star: f64,
    pub seed: u64,
    pub snr_db: f64,
}

impl GroundTruth {
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.mu_star.iter().enumerate() {
            let _ = writeln!(out, "mu_star_{}={v:e}", i + 1);
        }
        let _ = writeln!(out, "p_star={}", self.p_star);
        let _ = writeln!(out, "sigma2_star={:e}", self.sigma2_star);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "snr_db={}", self.snr_db);
        out
    }
}

/// `σ² = ‖H‖_F² / (N · 10^{snr_db/10})`.
pub fn sigma2_from_snr(h: &[DVector<f64>], snr_db: f64) -> f64 {
    let fro2: f64 = h.iter().map(|r| r.norm_squared()).sum();
    fro2 / (h.len() as f64 * 10f64.powf(snr_db / 10.0))
}

/// Draws labels and measurements for fixed regressors. Labels are drawn
/// first, then all noise terms.
pub fn sample_measurements<R: Rng + ?Sized>(
    h: Vec<DVector<f64>>,
    mu_star: &DVector<f64>,
    p_star: f64,
    sigma2: f64,
    rng: &mut R,
) -> Result<SensorDataset> {
    if !(p_star > 0.0 && p_star < 1.0) {
        return Err(Error::InvalidArgument(format!("p_star = {p_star} not in (0, 1)")));
    }
    let z: Vec<bool> = (0..h.len()).map(|_| rng.random::<f64>() < p_star).collect();
    let sd = sigma2.sqrt();
    let y = h
        .iter()
        .zip(&z)
        .map(|(hn, &zn)| {
            let noise: f64 = rng.sample(StandardNormal);
            let signal = if zn { hn.dot(mu_star) } else { 0.0 };
            signal + sd * noise
        })
        .collect();
    let mut data = SensorDataset::new(y, h)?;
    data.z_hidden = Some(z);
    Ok(data)
}

/// Synthetic dataset with `h_n ~ N(0, I_d)` and SNR-calibrated noise, drawn
/// from `rng`. Returns the dataset and `σ⋆²`.
pub fn generate_dataset_with<R: Rng + ?Sized>(
    n: usize,
    mu_star: &DVector<f64>,
    p_star: f64,
    snr_db: f64,
    rng: &mut R,
) -> Result<(SensorDataset, f64)> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument("snr_db must be finite".into()));
    }
    if !(p_star > 0.0 && p_star < 1.0) {
        return Err(Error::InvalidArgument(format!("p_star = {p_star} not in (0, 1)")));
    }
    let d = mu_star.len();
    let h: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(d, |_, _| rng.sample(StandardNormal))).collect();
    let sigma2 = sigma2_from_snr(&h, snr_db);
    let data = sample_measurements(h, mu_star, p_star, sigma2, rng)?;
    Ok((data, sigma2))
}

/// [`generate_dataset_with`] on the data stream of `seed`.
pub fn generate_dataset(n: usize, mu_star: &DVector<f64>, p_star: f64, snr_db: f64, seed: u64) -> Result<(SensorDataset, f64)> {
    generate_dataset_with(n, mu_star, p_star, snr_db, &mut seeded_rng(seed, Stream::Data.id()))
}

/// Unit-norm direction drawn uniformly from the sphere.
pub fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Posterior probability that the measurement carries signal,
/// `p N(y|hᵀμ,σ²) / (p N(y|hᵀμ,σ²) + (1−p) N(y|0,σ²))`, evaluated as
/// `p / (p + (1−p) e^Δ)` with `Δ = ((hᵀμ)² − 2y hᵀμ) / 2σ²` clamped to
/// ±700. The result is kept inside the open interval.
pub fn responsibility(y: f64, h: &DVector<f64>, theta: &ThetaParams) -> f64 {
    responsibility_at(y, h.dot(&theta.mu), theta.p, theta.sigma2)
}

fn responsibility_at(y: f64, mean: f64, p: f64, sigma2: f64) -> f64 {
    let delta = ((mean * mean - 2.0 * y * mean) / (2.0 * sigma2)).clamp(-EXP_CLAMP, EXP_CLAMP);
    let r = p / (p + (1.0 - p) * delta.exp());
    r.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Sufficient statistics `(Γ, ψ, p, γ)`, either per sample or averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct EmSummary {
    pub gamma_mat: DMatrix<f64>,
    pub psi: DVector<f64>,
    pub p_stat: f64,
    pub gamma_scal: f64,
}

impl EmSummary {
    pub fn zeros(d: usize) -> Self {
        EmSummary { gamma_mat: DMatrix::zeros(d, d), psi: DVector::zeros(d), p_stat: 0.0, gamma_scal: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.psi.len()
    }

    pub fn add_scaled(&mut self, other: &EmSummary, w: f64) {
        self.gamma_mat += &other.gamma_mat * w;
        self.psi += &other.psi * w;
        self.p_stat += w * other.p_stat;
        self.gamma_scal += w * other.gamma_scal;
    }
}

/// `Γ = r h hᵀ`, `ψ = r y h`, `p = r`, `γ = r (y − hᵀμ)² + (1 − r) y²`.
pub fn local_stats(y: f64, h: &DVector<f64>, theta: &ThetaParams) -> EmSummary {
    let mean = h.dot(&theta.mu);
    let r = responsibility_at(y, mean, theta.p, theta.sigma2);
    let d = h.len();
    // r·(h_i h_j) keeps Γ exactly symmetric
    let gamma_mat = DMatrix::from_fn(d, d, |i, j| r * (h[i] * h[j]));
    let resid = y - mean;
    EmSummary {
        gamma_mat,
        psi: h * (r * y),
        p_stat: r,
        gamma_scal: r * resid * resid + (1.0 - r) * y * y,
    }
}

/// Average of [`local_stats`] over the dataset, summed in sample order.
pub fn g2(data: &SensorDataset, theta: &ThetaParams) -> EmSummary {
    let mut acc = EmSummary::zeros(data.dim());
    for (y, h) in data.y.iter().zip(&data.h) {
        acc.add_scaled(&local_stats(*y, h, theta), 1.0);
    }
    let inv = 1.0 / data.len() as f64;
    acc.gamma_mat *= inv;
    acc.psi *= inv;
    acc.p_stat *= inv;
    acc.gamma_scal *= inv;
    acc
}

/// Inverse of `Γ` with a 1-norm reciprocal condition check.
fn inverse_checked(gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let norm1 = |m: &DMatrix<f64>| m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let inv = gamma.clone().try_inverse().ok_or(Error::SingularStatistics(0.0))?;
    let rcond = 1.0 / (norm1(gamma) * norm1(&inv));
    if !(rcond >= SINGULAR_RCOND) {
        return Err(Error::SingularStatistics(if rcond.is_finite() { rcond } else { 0.0 }));
    }
    Ok(inv)
}

fn solve_checked(gamma: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(inverse_checked(gamma)? * rhs)
}

/// `(Γ, ψ, p, σ²) ↦ (Γ⁻¹ψ, p, σ²)`.
pub fn g1(summary: &EmSummary) -> Result<ThetaParams> {
    let mu = solve_checked(&summary.gamma_mat, &summary.psi)?;
    ThetaParams::new(mu, summary.p_stat, summary.gamma_scal)
}

/// [`g1`] with a fallback for rank-deficient `Γ`: the minimum-norm
/// least-squares `μ` from the pseudo-inverse, singular values below
/// `1e-12 · σ_max` treated as zero.
pub fn g1_min_norm(summary: &EmSummary) -> Result<ThetaParams> {
    match g1(summary) {
        Err(Error::SingularStatistics(_)) => {
            let svd = summary.gamma_mat.clone().svd(true, true);
            let smax = svd.singular_values.max();
            if !(smax > 0.0) || !smax.is_finite() {
                return Err(Error::SingularStatistics(0.0));
            }
            let mu = svd.solve(&summary.psi, SINGULAR_RCOND * smax).map_err(|_| Error::SingularStatistics(0.0))?;
            ThetaParams::new(mu, summary.p_stat, summary.gamma_scal)
        }
        other => other,
    }
}

/// One step of the modified EM iteration, `T_N = g₁ ∘ g₂`.
pub fn centralized_em_step(data: &SensorDataset, theta: &ThetaParams) -> Result<ThetaParams> {
    theta.validate()?;
    g1(&g2(data, theta))
}

/// One step of standard EM, `ĝ₁ ∘ ĝ₂`: the γ average is replaced by
/// `a = mean(y²)` and the variance update is `a − ψᵀΓ⁻¹ψ`.
pub fn standard_em_step(data: &SensorDataset, theta: &ThetaParams) -> Result<ThetaParams> {
    theta.validate()?;
    let s = g2(data, theta);
    let a = data.y.iter().map(|y| y * y).sum::<f64>() / data.len() as f64;
    let mu = solve_checked(&s.gamma_mat, &s.psi)?;
    let sigma2 = a - s.psi.dot(&mu);
    if !(sigma2 > 0.0) {
        return Err(Error::DomainExit(format!("standard EM produced sigma2 = {sigma2}")));
    }
    ThetaParams::new(mu, s.p_stat, sigma2)
}

/// `log f_{Y|H}(y | h, θ)`, the mixture log-density, via log-sum-exp.
pub fn log_likelihood(y: f64, h: &DVector<f64>, theta: &ThetaParams) -> f64 {
    let mean = h.dot(&theta.mu);
    let s2 = theta.sigma2;
    let norm = -0.5 * (2.0 * std::f64::consts::PI * s2).ln();
    let a = theta.p.ln() + norm - (y - mean).powi(2) / (2.0 * s2);
    let b = (1.0 - theta.p).ln() + norm - y * y / (2.0 * s2);
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `∇_θ φ` from the closed-form identities
/// `σ²∇_μφ = r(y − hᵀμ)h`, `p + p(1−p)∂_pφ = r`, `σ² + 2σ⁴∂_{σ²}φ = γ`.
pub fn score_phi(y: f64, h: &DVector<f64>, theta: &ThetaParams) -> DVector<f64> {
    let d = h.len();
    let mean = h.dot(&theta.mu);
    let r = responsibility_at(y, mean, theta.p, theta.sigma2);
    let s2 = theta.sigma2;
    let resid = y - mean;
    let gamma = r * resid * resid + (1.0 - r) * y * y;
    let mut g = DVector::zeros(d + 2);
    for i in 0..d {
        g[i] = r * resid * h[i] / s2;
    }
    g[d] = (r - theta.p) / (theta.p * (1.0 - theta.p));
    g[d + 1] = (gamma - s2) / (2.0 * s2 * s2);
    g
}

/// `∇²_θ φ` by central differences of [`score_phi`], symmetrized.
pub fn hessian_phi(y: f64, h: &DVector<f64>, theta: &ThetaParams) -> DMatrix<f64> {
    let x = theta.to_vec();
    let d = h.len();
    let step = numerics::default_fd_step(&x).min(1e-3 * theta.sigma2).min(1e-3 * theta.p.min(1.0 - theta.p));
    let jac = numerics::fd_jacobian(
        |v: &[f64]| {
            let t = ThetaParams { mu: DVector::from_column_slice(&v[..d]), p: v[d], sigma2: v[d + 1] };
            Ok::<_, Error>(score_phi(y, h, &t).as_slice().to_vec())
        },
        &x,
        step,
    )
    .expect("score evaluation is infallible");
    (&jac + jac.transpose()) * 0.5
}

/// `A_N(θ) = blockdiag(mean(Γ)/σ², 1/(p(1−p)), 1/(2σ⁴))`.
pub fn a_matrix(data: &SensorDataset, theta: &ThetaParams) -> Result<DMatrix<f64>> {
    theta.validate()?;
    let d = data.dim();
    let s = g2(data, theta);
    let mut a = DMatrix::zeros(d + 2, d + 2);
    a.view_mut((0, 0), (d, d)).copy_from(&(s.gamma_mat / theta.sigma2));
    a[(d, d)] = 1.0 / (theta.p * (1.0 - theta.p));
    a[(d + 1, d + 1)] = 1.0 / (2.0 * theta.sigma2 * theta.sigma2);
    Ok(a)
}

/// Mean per-sample Hessian of `φ`.
pub fn mean_hessian(data: &SensorDataset, theta: &ThetaParams) -> DMatrix<f64> {
    let k = data.dim() + 2;
    let mut acc = DMatrix::zeros(k, k);
    for (y, h) in data.y.iter().zip(&data.h) {
        acc += hessian_phi(*y, h, theta);
    }
    acc / data.len() as f64
}

/// `T_N′(θ) = I + A_N(θ)⁻¹ · mean ∇²φ`; equals the Jacobian of `T_N` at its
/// fixed points.
pub fn t_prime(data: &SensorDataset, theta: &ThetaParams) -> Result<DMatrix<f64>> {
    let a = a_matrix(data, theta)?;
    let k = a.nrows();
    let a_inv = inverse_checked(&a)?;
    Ok(DMatrix::identity(k, k) + a_inv * mean_hessian(data, theta))
}

/// Finite-difference Jacobian of `θ ↦ T_N(θ)`.
pub fn em_step_jacobian_fd(data: &SensorDataset, theta: &ThetaParams) -> Result<DMatrix<f64>> {
    let x = theta.to_vec();
    let step = numerics::default_fd_step(&x).min(1e-3 * theta.sigma2).min(1e-3 * theta.p.min(1.0 - theta.p));
    numerics::fd_jacobian(
        |v: &[f64]| Ok::<_, Error>(centralized_em_step(data, &ThetaParams::from_slice(v)?)?.to_vec()),
        &x,
        step,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmVariant {
    /// `g₁ ∘ g₂`
    Modified,
    /// `ĝ₁ ∘ ĝ₂`
    Standard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedFit {
    pub theta: ThetaParams,
    pub iters: usize,
    /// `ρ(T_N′(θ))` at the returned point, modified variant only.
    pub rho: Option<f64>,
}

/// Iterates the chosen map until `‖θ − step(θ)‖ ≤ tol`. The returned
/// `iters` is the number of updates applied before the stopping rule held.
pub fn run_centralized(
    data: &SensorDataset,
    theta0: &ThetaParams,
    variant: EmVariant,
    tol: f64,
    max_iters: usize,
) -> Result<CentralizedFit> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let step = |t: &ThetaParams| match variant {
        EmVariant::Modified => centralized_em_step(data, t),
        EmVariant::Standard => standard_em_step(data, t),
    };
    let mut theta = theta0.clone();
    let mut residual = f64::INFINITY;
    for k in 0..max_iters {
        let next = step(&theta)?;
        residual = theta.distance(&next);
        if residual <= tol {
            let rho = match variant {
                EmVariant::Modified => Some(numerics::spectral_radius(&t_prime(data, &theta)?)?),
                EmVariant::Standard => None,
            };
            return Ok(CentralizedFit { theta, iters: k, rho });
        }
        theta = next;
    }
    Err(Error::NotConverged { iters: max_iters, residual })
}
