//! Distributed PCA through the mini-batch Sanger map
//! `H(X) = X + η (C X − X U(Xᵀ C X))` and its per-agent split
//! `H_n(X) = X + η (Ĉ_n X − X U(Xᵀ Ĉ_n X))` with `Ĉ_n = (N/M) C_n`.
//!
//! Matrices are flattened column-major when they enter the iteration engine
//! or a finite-difference Jacobian.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dbpi::LocalOperatorFamily;
use crate::error::{Error, Result};
use crate::numerics::{self, Spectrum};
use crate::report::{Check, Report};

/// Largest relative gap treated as a tie when checking eigenvalue ordering.
pub const MIN_RELATIVE_GAP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SangerProblem {
    local_cov: Vec<DMatrix<f64>>,
    total_points: usize,
    eta: f64,
    rank: usize,
    cov: DMatrix<f64>,
}

impl SangerProblem {
    /// `local_cov[n] = Σ_{y ∈ Y_n} y yᵀ`, `total_points = M`.
    pub fn new(local_cov: Vec<DMatrix<f64>>, total_points: usize, eta: f64, rank: usize) -> Result<Self> {
        let d = local_cov.first().map(|c| c.nrows()).ok_or_else(|| Error::InvalidArgument("no agents".into()))?;
        if total_points == 0 {
            return Err(Error::InvalidArgument("total point count must be positive".into()));
        }
        if !(eta > 0.0) {
            return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
        }
        if rank == 0 || rank > d {
            return Err(Error::InvalidArgument(format!("rank {rank} outside 1..={d}")));
        }
        let mut cov = DMatrix::zeros(d, d);
        for c in &local_cov {
            if c.nrows() != d || c.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, got: c.nrows().max(c.ncols()) });
            }
            cov += c;
        }
        cov /= total_points as f64;
        Ok(SangerProblem { local_cov, total_points, eta, rank, cov })
    }

    /// Builds the problem from per-agent point sets (one point per row).
    pub fn from_points(points: &[DMatrix<f64>], eta: f64, rank: usize) -> Result<Self> {
        let local_cov = points.iter().map(|p| p.transpose() * p).collect();
        let total = points.iter().map(|p| p.nrows()).sum();
        Self::new(local_cov, total, eta, rank)
    }

    /// Single-agent problem with `C` given directly.
    pub fn from_covariance(c: DMatrix<f64>, eta: f64, rank: usize) -> Result<Self> {
        Self::new(vec![c], 1, eta, rank)
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        Self::new(self.local_cov.clone(), self.total_points, eta, self.rank)
    }

    /// Shifts `C` to `C + εI` by adding `(M/N) ε I` to every `C_n`; the
    /// eigenvectors are unchanged. Useful when `C` is only semidefinite.
    pub fn regularized(&self, epsilon: f64) -> Result<Self> {
        let d = self.dim();
        let shift = self.total_points as f64 / self.n_agents() as f64 * epsilon;
        let local = self.local_cov.iter().map(|c| c + DMatrix::identity(d, d) * shift).collect();
        Self::new(local, self.total_points, self.eta, self.rank)
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn n_agents(&self) -> usize {
        self.local_cov.len()
    }

    pub fn total_points(&self) -> usize {
        self.total_points
    }

    pub fn local_cov(&self) -> &[DMatrix<f64>] {
        &self.local_cov
    }

    /// `C = (1/M) Σ C_n`.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    fn check_shape(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.dim() || x.ncols() != self.rank {
            return Err(Error::DimensionMismatch { expected: self.dim() * self.rank, got: x.nrows() * x.ncols() });
        }
        Ok(())
    }
}

/// `S(X) = C X − X U(Xᵀ C X)`.
fn sanger_direction(c: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let cx = c * x;
    let gram = (x.transpose() * &cx).upper_triangle();
    cx - x * gram
}

fn sanger_step(c: &DMatrix<f64>, eta: f64, x: &DMatrix<f64>) -> DMatrix<f64> {
    x + sanger_direction(c, x) * eta
}

pub fn sanger_map(problem: &SangerProblem, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    problem.check_shape(x)?;
    Ok(sanger_step(&problem.cov, problem.eta, x))
}

/// Column-major flattening.
pub fn vec_of(x: &DMatrix<f64>) -> Vec<f64> {
    x.as_slice().to_vec()
}

pub fn unvec(v: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v)
}

/// The per-agent Sanger maps.
#[derive(Debug, Clone)]
pub struct SangerFamily {
    scaled_cov: Vec<DMatrix<f64>>,
    eta: f64,
    d: usize,
    m: usize,
}

pub fn sanger_local_family(problem: &SangerProblem) -> SangerFamily {
    let scale = problem.n_agents() as f64 / problem.total_points as f64;
    SangerFamily {
        scaled_cov: problem.local_cov.iter().map(|c| c * scale).collect(),
        eta: problem.eta,
        d: problem.dim(),
        m: problem.rank,
    }
}

impl SangerFamily {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn rank(&self) -> usize {
        self.m
    }

    /// `(N/M) C_n`.
    pub fn scaled_cov(&self, agent: usize) -> &DMatrix<f64> {
        &self.scaled_cov[agent]
    }
}

impl LocalOperatorFamily for SangerFamily {
    fn n_agents(&self) -> usize {
        self.scaled_cov.len()
    }

    fn state_dim(&self) -> usize {
        self.d * self.m
    }

    fn apply(&self, agent: usize, block: &[f64], out: &mut [f64]) -> Result<()> {
        let x = unvec(block, self.d, self.m);
        let hx = sanger_step(&self.scaled_cov[agent], self.eta, &x);
        out.copy_from_slice(hx.as_slice());
        Ok(())
    }

    fn name(&self) -> &str {
        "sanger"
    }
}

/// Banach-Picard iteration of the Sanger map until `‖H(X) − X‖_F ≤ tol`.
/// Returns the last iterate and the number of map applications that
/// preceded it.
pub fn centralized_sanger(
    problem: &SangerProblem,
    x0: &DMatrix<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(DMatrix<f64>, usize)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    problem.check_shape(x0)?;
    let mut x = x0.clone();
    let mut residual = f64::INFINITY;
    for k in 0..=max_iters {
        let hx = sanger_step(&problem.cov, problem.eta, &x);
        residual = (&hx - &x).norm();
        if !residual.is_finite() || hx.amax() > 1e100 {
            return Err(Error::Diverged(k));
        }
        if residual <= tol {
            return Ok((x, k));
        }
        x = hx;
    }
    Err(Error::NotConverged { iters: max_iters, residual })
}

/// Top-`m` eigenpairs of `C` with the full eigenvalue list.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenTarget {
    /// `d × m`, unit columns ordered by decreasing eigenvalue.
    pub x_star: DMatrix<f64>,
    /// All `d` eigenvalues, decreasing.
    pub lambdas: Vec<f64>,
}

impl EigenTarget {
    /// Dense symmetric eigendecomposition of `C`. Each column's sign is fixed
    /// so that its largest-magnitude entry is positive.
    pub fn from_covariance(c: &DMatrix<f64>, m: usize) -> Result<Self> {
        let d = c.nrows();
        if c.ncols() != d {
            return Err(Error::NotSquare { rows: d, cols: c.ncols() });
        }
        if m == 0 || m > d {
            return Err(Error::InvalidArgument(format!("rank {m} outside 1..={d}")));
        }
        let eig = c.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let lambdas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut x_star = DMatrix::zeros(d, m);
        for (col, &i) in order.iter().take(m).enumerate() {
            let mut v = eig.eigenvectors.column(i).into_owned();
            let pivot = v.iter().copied().fold(0.0f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
            if pivot < 0.0 {
                v = -v;
            }
            x_star.set_column(col, &v);
        }
        Ok(EigenTarget { x_star, lambdas })
    }

    pub fn rank(&self) -> usize {
        self.x_star.ncols()
    }

    /// True when `λ_1 > … > λ_m > λ_{m+1}` with relative gaps of at least
    /// `min_rel_gap`, and all eigenvalues are positive.
    pub fn has_strict_gaps(&self, min_rel_gap: f64) -> bool {
        strict_gaps(&self.lambdas, self.rank(), min_rel_gap)
    }
}

fn strict_gaps(lambdas: &[f64], m: usize, min_rel_gap: f64) -> bool {
    let upto = (m + 1).min(lambdas.len());
    lambdas.last().is_some_and(|&l| l > 0.0)
        && lambdas[..upto].windows(2).all(|w| w[0] - w[1] > min_rel_gap * w[0].abs())
}

/// Eigenvalues of the differential of `S(X) = C X − X U(Xᵀ C X)` at the top-m
/// eigenvector matrix, in closed form:
///
/// * `λ_{m+s} − λ_t` for `1 ≤ s ≤ d−m`, `1 ≤ t ≤ m`
/// * `λ_s − λ_t` for `1 ≤ t < s ≤ m`
/// * `−λ_t` for `1 ≤ s < t ≤ m`
/// * `−2 λ_t` for `1 ≤ t ≤ m`
pub fn analytic_jacobian_spectrum(lambdas: &[f64], m: usize) -> Result<Spectrum> {
    let d = lambdas.len();
    if m == 0 || m > d {
        return Err(Error::InvalidArgument(format!("rank {m} outside 1..={d}")));
    }
    if lambdas.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument("eigenvalues must be sorted in decreasing order".into()));
    }
    if !strict_gaps(lambdas, m, 0.0) {
        return Err(Error::InvalidArgument("top m+1 eigenvalues must be strictly decreasing and positive".into()));
    }
    let mut out = Vec::with_capacity(d * m);
    for s in m..d {
        for t in 0..m {
            out.push(lambdas[s] - lambdas[t]);
        }
    }
    for t in 0..m {
        for s in (t + 1)..m {
            out.push(lambdas[s] - lambdas[t]);
        }
    }
    for t in 0..m {
        for _s in 0..t {
            out.push(-lambdas[t]);
        }
    }
    for t in 0..m {
        out.push(-2.0 * lambdas[t]);
    }
    Ok(Spectrum::from_real(out))
}

/// `η⋆ = 2 / max|β|` over the closed-form spectrum; every `η < η⋆` makes the
/// Sanger map's Jacobian a contraction at the top-m eigenvectors.
pub fn eta_star(lambdas: &[f64], m: usize) -> Result<f64> {
    let spec = analytic_jacobian_spectrum(lambdas, m)?;
    let worst = spec.eigenvalues.iter().map(|e| e.re.abs()).fold(0.0, f64::max);
    Ok(2.0 / worst)
}

/// Checks that `x` has the structure of a Sanger fixed point: every column
/// is null or a unit eigenvector of `C`, and the columns are orthogonal.
pub fn verify_fixed_point_structure(problem: &SangerProblem, x: &DMatrix<f64>, tol: f64) -> Result<Report> {
    problem.check_shape(x)?;
    let c = problem.covariance();
    let mut report = Report::new("fixed_point_structure");

    let residual = sanger_direction(c, x).norm();
    report.push(Check::at_most("fixed_point_residual", residual, tol));

    let mut norm_err: f64 = 0.0;
    let mut eig_err: f64 = 0.0;
    for v in x.column_iter() {
        let norm = v.norm();
        let e = if norm <= tol { 0.0 } else { (norm - 1.0).abs() };
        norm_err = norm_err.max(e);
        if norm > tol {
            let cv = c * v;
            let rayleigh = v.dot(&cv);
            eig_err = eig_err.max((cv - v * rayleigh).norm());
        }
    }
    report.push(Check::at_most("column_norm_zero_or_one", norm_err, tol));
    report.push(Check::at_most("columns_are_eigenvectors", eig_err, tol));

    let gram = x.transpose() * x;
    let mut offdiag: f64 = 0.0;
    let mut diag: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            if i == j {
                let g = gram[(i, i)];
                diag = diag.max(g.abs().min((g - 1.0).abs()));
            } else {
                offdiag = offdiag.max(gram[(i, j)].abs());
            }
        }
    }
    report.push(Check::at_most("gram_offdiagonal", offdiag, tol));
    report.push(Check::at_most("gram_diagonal_zero_or_one", diag, tol));
    Ok(report)
}

/// Finite-difference Jacobian of the flattened Sanger map at `x`.
pub fn sanger_jacobian_fd(problem: &SangerProblem, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    problem.check_shape(x)?;
    let (d, m) = (problem.dim(), problem.rank);
    let v = vec_of(x);
    let h = numerics::default_fd_step(&v);
    numerics::fd_jacobian(|p: &[f64]| Ok::<_, Error>(vec_of(&sanger_step(&problem.cov, problem.eta, &unvec(p, d, m)))), &v, h)
}

/// Outcome of [`verify_attractor`].
#[derive(Debug, Clone)]
pub struct AttractorReport {
    pub report: Report,
    pub rho: f64,
    /// Spectrum of `J_S = (J_H − I)/η` from the finite-difference Jacobian.
    pub js_spectrum: Spectrum,
    pub analytic: Spectrum,
}

impl AttractorReport {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

/// Numerically certifies the attractor condition at `target.x_star`:
/// (a) `ρ(J_H) < 1`, (b) the spectrum of `J_S` is real and negative,
/// (c) it matches [`analytic_jacobian_spectrum`] within 1e-5 relative.
pub fn verify_attractor(problem: &SangerProblem, target: &EigenTarget, eta: f64) -> Result<AttractorReport> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    let p = problem.with_eta(eta)?;
    let jh = sanger_jacobian_fd(&p, &target.x_star)?;
    let rho = numerics::spectral_radius(&jh)?;
    let k = jh.nrows();
    let js = (jh - DMatrix::<f64>::identity(k, k)) / eta;
    let js_spectrum = numerics::eigenvalues_dense(&js)?;
    let analytic = analytic_jacobian_spectrum(&target.lambdas, target.rank())?;

    let scale = js_spectrum.spectral_radius().max(1.0);
    let max_re = js_spectrum.eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
    let mut report = Report::new("attractor");
    report.value("eta", eta);
    report.value("rho_jh", rho);
    report.push(Check::below("rho_jh_below_one", rho, 1.0));
    report.push(Check::at_most("js_imaginary_parts", js_spectrum.max_abs_imag(), 1e-6 * scale));
    report.push(Check::below("js_max_real_part", max_re, 0.0));
    let dist = js_spectrum.real_multiset_distance(&analytic).unwrap_or(f64::INFINITY);
    report.push(Check::at_most("js_matches_closed_form", dist, 1e-5));
    Ok(AttractorReport { report, rho, js_spectrum, analytic })
}

/// Sign-invariant distance to the target columns:
/// `sqrt(Σ_c min_± ‖x_c ∓ x⋆_c‖²)`.
pub fn subspace_error(x: &DMatrix<f64>, x_star: &DMatrix<f64>) -> f64 {
    x.column_iter()
        .zip(x_star.column_iter())
        .map(|(a, b)| (&a - &b).norm_squared().min((&a + &b).norm_squared()))
        .sum::<f64>()
        .sqrt()
}

/// Random orthogonal `d × d` matrix from the QR factorization of a Gaussian
/// matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // make the factorization unique so the draw is Haar distributed
    let signs = DVector::from_fn(d, |i, _| if r[(i, i)] < 0.0 { -1.0 } else { 1.0 });
    q * DMatrix::from_diagonal(&signs)
}

/// Random Gaussian directions as columns, each scaled to norm 1/2, so the
/// start lies inside the basin of the Sanger iteration for `η < η⋆`.
pub fn random_start<R: Rng + ?Sized>(d: usize, m: usize, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::from_fn(d, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut c in x.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= 2.0 * n;
        }
    }
    x
}

/// `Q diag(λ) Qᵀ` with a random orthogonal `Q`.
pub fn covariance_with_spectrum<R: Rng + ?Sized>(lambdas: &[f64], rng: &mut R) -> DMatrix<f64> {
    let q = random_orthogonal(lambdas.len(), rng);
    let c = &q * DMatrix::from_diagonal(&DVector::from_column_slice(lambdas)) * q.transpose();
    (&c + c.transpose()) * 0.5
}

/// Random eigenvalues in `[0.1, 1.1)`, sorted decreasing and redrawn until
/// the top `m + 1` have relative gaps of at least [`MIN_RELATIVE_GAP`].
pub fn random_gapped_spectrum<R: Rng + ?Sized>(d: usize, m: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut l: Vec<f64> = (0..d).map(|_| 0.1 + rng.random::<f64>()).collect();
        l.sort_by(|a, b| b.total_cmp(a));
        if strict_gaps(&l, m, MIN_RELATIVE_GAP) {
            return l;
        }
    }
}

/// `n_agents` point sets of `points_per_agent` rows each, drawn i.i.d. from
/// `N(0, Σ)` with `Σ = Q diag(spectrum) Qᵀ`.
pub fn generate_agent_points<R: Rng + ?Sized>(
    n_agents: usize,
    points_per_agent: usize,
    spectrum: &[f64],
    rng: &mut R,
) -> Vec<DMatrix<f64>> {
    let d = spectrum.len();
    let q = random_orthogonal(d, rng);
    let scale = DMatrix::from_diagonal(&DVector::from_iterator(d, spectrum.iter().map(|l| l.sqrt())));
    let mix = q * scale;
    (0..n_agents)
        .map(|_| {
            let g = DMatrix::from_fn(d, points_per_agent, |_, _| rng.sample::<f64, _>(StandardNormal));
            (&mix * g).transpose()
        })
        .collect()
}

/// Parses one point per line, comma separated; a non-numeric first line is
/// treated as a header.
pub fn read_points_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("line {}: {e}", i + 1))),
        }
    }
    let d = rows.first().map(Vec::len).ok_or_else(|| Error::Parse("no points".into()))?;
    if let Some(bad) = rows.iter().position(|r| r.len() != d) {
        return Err(Error::Parse(format!("point {} has {} columns, expected {d}", bad + 1, rows[bad].len())));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

pub fn write_points_csv(points: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in points.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn diag(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(values))
    }

    fn multiset_eq(a: &Spectrum, b: &[f64]) -> bool {
        let mut b = b.to_vec();
        b.sort_by(f64::total_cmp);
        a.sorted_real_parts().iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-14) && a.len() == b.len()
    }

    #[test]
    fn sanger_map_fixes_eigenvectors_and_zero() {
        let mut rng = seeded_rng(1, 0);
        let c = covariance_with_spectrum(&[3.0, 2.0, 1.0, 0.5], &mut rng);
        let p = SangerProblem::from_covariance(c.clone(), 0.1, 2).unwrap();
        let t = EigenTarget::from_covariance(&c, 2).unwrap();
        let hx = sanger_map(&p, &t.x_star).unwrap();
        assert!((hx - &t.x_star).amax() < 1e-10);
        let zero = DMatrix::zeros(4, 2);
        assert_eq!(sanger_map(&p, &zero).unwrap(), zero);
        assert!(sanger_map(&p, &DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn sanger_map_hand_evaluation() {
        // C = diag(2, 1), x = (1, 1)/√2: Cx = (2, 1)/√2, xᵀCx = 3/2,
        // Cx − x·3/2 = (1/2, −1/2)/√2
        let eta = 0.3;
        let p = SangerProblem::from_covariance(diag(&[2.0, 1.0]), eta, 1).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let x = DMatrix::from_column_slice(2, 1, &[s, s]);
        let hx = sanger_map(&p, &x).unwrap();
        let want = [s + eta * 0.5 * s, s - eta * 0.5 * s];
        assert!((hx[(0, 0)] - want[0]).abs() < 1e-15);
        assert!((hx[(1, 0)] - want[1]).abs() < 1e-15);
    }

    fn random_problem(n: usize, d: usize, m: usize, seed: u64) -> SangerProblem {
        let mut rng = seeded_rng(seed, 0);
        let pts: Vec<DMatrix<f64>> = (0..n)
            .map(|i| DMatrix::from_fn(5 + i, d, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        SangerProblem::from_points(&pts, 0.2, m).unwrap()
    }

    #[test]
    fn local_family_average_equals_global_map() {
        let p = random_problem(6, 5, 3, 9);
        let fam = sanger_local_family(&p);
        let mut rng = seeded_rng(10, 0);
        for _ in 0..5 {
            let x = DMatrix::from_fn(5, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let v = vec_of(&x);
            let mut avg = vec![0.0; v.len()];
            let mut out = vec![0.0; v.len()];
            for n in 0..fam.n_agents() {
                fam.apply(n, &v, &mut out).unwrap();
                for (a, o) in avg.iter_mut().zip(&out) {
                    *a += o / fam.n_agents() as f64;
                }
            }
            let direct = vec_of(&sanger_map(&p, &x).unwrap());
            for (a, b) in avg.iter().zip(&direct) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn single_agent_family_is_the_global_map() {
        let p = random_problem(1, 4, 2, 3);
        let fam = sanger_local_family(&p);
        let x = DMatrix::from_fn(4, 2, |i, j| (i as f64 - j as f64) * 0.3);
        let mut out = vec![0.0; 8];
        fam.apply(0, &vec_of(&x), &mut out).unwrap();
        let direct = vec_of(&sanger_map(&p, &x).unwrap());
        for (a, b) in out.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn identical_agents_have_identical_maps() {
        let block = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.2, 2.0, 0.3, 0.1]);
        let p = SangerProblem::from_points(&[block.clone(), block.clone(), block], 0.1, 2).unwrap();
        let fam = sanger_local_family(&p);
        for n in 0..3 {
            assert!((fam.scaled_cov(n) - p.covariance()).amax() < 1e-15);
        }
    }

    #[test]
    fn centralized_sanger_examples() {
        let mut rng = seeded_rng(4, 0);
        let lambdas = [4.0, 3.0, 2.0, 1.5, 1.0, 0.7, 0.4, 0.2];
        let c = covariance_with_spectrum(&lambdas, &mut rng);
        let t = EigenTarget::from_covariance(&c, 3).unwrap();
        let eta = 0.9 * eta_star(&t.lambdas, 3).unwrap();
        let p = SangerProblem::from_covariance(c.clone(), eta, 3).unwrap();

        let (x, k) = centralized_sanger(&p, &t.x_star, 1e-10, 10).unwrap();
        assert_eq!(k, 0);
        assert_eq!(x, t.x_star);

        let x0 = DMatrix::from_fn(8, 3, |_, _| rng.sample::<f64, _>(StandardNormal) / 8f64.sqrt());
        let (x, _) = centralized_sanger(&p, &x0, 1e-12, 200_000).unwrap();
        let r = verify_fixed_point_structure(&p, &x, 1e-8).unwrap();
        assert!(r.passed(), "{r}");
        assert!(subspace_error(&x, &t.x_star) < 1e-8);

        let wild = p.with_eta(50.0 * eta).unwrap();
        let big = DMatrix::from_element(8, 3, 1.0);
        assert!(matches!(centralized_sanger(&wild, &big, 1e-10, 10_000), Err(Error::Diverged(_))));
        assert!(matches!(centralized_sanger(&p, &x0, 1e-10, 0), Err(Error::NotConverged { .. })));
    }

    #[test]
    fn fixed_point_structure_examples() {
        let mut rng = seeded_rng(5, 0);
        let c = covariance_with_spectrum(&[3.0, 2.0, 1.0, 0.5], &mut rng);
        let p = SangerProblem::from_covariance(c.clone(), 0.1, 3).unwrap();
        let t = EigenTarget::from_covariance(&c, 3).unwrap();
        assert!(verify_fixed_point_structure(&p, &t.x_star, 1e-8).unwrap().passed());

        let mut zeroed = t.x_star.clone();
        zeroed.column_mut(1).fill(0.0);
        assert!(verify_fixed_point_structure(&p, &zeroed, 1e-8).unwrap().passed());

        let mut scaled = t.x_star.clone();
        scaled.column_mut(0).scale_mut(2.0);
        let r = verify_fixed_point_structure(&p, &scaled, 1e-8).unwrap();
        assert!(!r.get("column_norm_zero_or_one").unwrap().passed);
    }

    #[test]
    fn analytic_spectrum_examples() {
        let s = analytic_jacobian_spectrum(&[3.0, 2.0, 1.0], 2).unwrap();
        assert!(multiset_eq(&s, &[-2.0, -1.0, -1.0, -2.0, -6.0, -4.0]));

        let s = analytic_jacobian_spectrum(&[2.0, 1.0], 1).unwrap();
        assert!(multiset_eq(&s, &[-1.0, -4.0]));

        // m = d: no λ_{m+s} − λ_t block
        let s = analytic_jacobian_spectrum(&[3.0, 2.0, 1.0], 3).unwrap();
        assert!(multiset_eq(&s, &[-1.0, -2.0, -1.0, -2.0, -1.0, -1.0, -6.0, -4.0, -2.0]));

        assert!(analytic_jacobian_spectrum(&[1.0, 2.0, 3.0], 2).is_err());
        assert!(analytic_jacobian_spectrum(&[3.0, 2.0, 2.0], 2).is_err());
        assert!(analytic_jacobian_spectrum(&[3.0, 2.0, 1.0], 0).is_err());
    }

    #[test]
    fn attractor_check_on_three_by_two() {
        let mut rng = seeded_rng(6, 0);
        let lambdas = [3.0, 2.0, 1.0];
        let c = covariance_with_spectrum(&lambdas, &mut rng);
        let t = EigenTarget::from_covariance(&c, 2).unwrap();
        let p = SangerProblem::from_covariance(c, 0.1, 2).unwrap();
        let star = eta_star(&t.lambdas, 2).unwrap();
        assert!((star - 1.0 / 3.0).abs() < 1e-12);

        let stable = verify_attractor(&p, &t, 0.9 * star).unwrap();
        assert!(stable.passed(), "{}", stable.report);

        let edge = verify_attractor(&p, &t, star).unwrap();
        assert!(!edge.report.get("rho_jh_below_one").unwrap().passed);
        assert!(edge.rho >= 1.0 - 1e-6);

        let tiny = verify_attractor(&p, &t, 1e-6).unwrap();
        assert!(tiny.rho < 1.0 && tiny.rho > 0.99999);
    }

    #[test]
    fn regularization_keeps_eigenvectors() {
        let c = diag(&[2.0, 1.0, 0.0]);
        let p = SangerProblem::from_covariance(c, 0.1, 2).unwrap();
        let r = p.regularized(0.25).unwrap();
        assert!((r.covariance() - diag(&[2.25, 1.25, 0.25])).amax() < 1e-15);
    }

    #[test]
    fn subspace_error_is_sign_invariant() {
        let x = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let flipped = DMatrix::from_column_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert_eq!(subspace_error(&flipped, &x), 0.0);
        let off = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!((subspace_error(&off, &x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn points_csv_round_trip() {
        let pts = DMatrix::from_row_slice(2, 3, &[1.0, 2.5, -3.0, 0.125, 0.0, 7.0]);
        let text = format!("a,b,c\n{}", write_points_csv(&pts));
        assert_eq!(read_points_csv(&text).unwrap(), pts);
        assert!(read_points_csv("1,2\n3\n").is_err());
    }
}
