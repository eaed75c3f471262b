//! The distributed Banach-Picard iteration engine.
//!
//! Agents hold blocks `z_n` of a stacked state and a local map `H_n`. One
//! step of the iteration is
//!
//! ```text
//! z⁺ = (I + W)(z − ½ z⁻) + α (R(z) − R(z⁻)),   R(z)_n = H_n(z_n) − z_n
//! ```
//!
//! where `W = W̃ ⊗ I` is applied blockwise and never materialized. The
//! bootstrap step is `z¹ = W z⁰ + α R(z⁰)`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::WeightMatrix;

/// Per-agent local maps `H_n` acting on blocks of a fixed size.
pub trait LocalOperatorFamily: Sync {
    fn n_agents(&self) -> usize;

    fn state_dim(&self) -> usize;

    /// Writes `H_agent(block)` into `out`. Both slices have `state_dim` entries.
    fn apply(&self, agent: usize, block: &[f64], out: &mut [f64]) -> Result<()>;

    fn name(&self) -> &str {
        "operator"
    }
}

/// Anything that can apply `W̃ ⊗ I` blockwise. [`WeightMatrix`] is the only
/// production implementation; tests wrap it to count communication rounds.
pub trait Mixing: Sync {
    fn n(&self) -> usize;

    fn mix_into(&self, z: &[f64], dim: usize, out: &mut [f64]);
}

impl Mixing for WeightMatrix {
    fn n(&self) -> usize {
        WeightMatrix::n(self)
    }

    fn mix_into(&self, z: &[f64], dim: usize, out: &mut [f64]) {
        WeightMatrix::mix_into(self, z, dim, out)
    }
}

/// Stacked agent states; agent `n` owns `data[n*dim .. (n+1)*dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStateVector {
    data: Vec<f64>,
    state_dim: usize,
}

impl AgentStateVector {
    pub fn new(data: Vec<f64>, state_dim: usize) -> Result<Self> {
        if state_dim == 0 || data.len() % state_dim != 0 || data.is_empty() {
            return Err(Error::DimensionMismatch { expected: state_dim.max(1), got: data.len() });
        }
        Ok(AgentStateVector { data, state_dim })
    }

    pub fn zeros(n_agents: usize, state_dim: usize) -> Self {
        AgentStateVector { data: vec![0.0; n_agents * state_dim], state_dim }
    }

    /// `1 ⊗ x`: every agent holds a copy of `x`.
    pub fn consensus(x: &[f64], n_agents: usize) -> Self {
        let mut data = Vec::with_capacity(x.len() * n_agents);
        for _ in 0..n_agents {
            data.extend_from_slice(x);
        }
        AgentStateVector { data, state_dim: x.len() }
    }

    pub fn from_blocks<B: AsRef<[f64]>>(blocks: &[B]) -> Result<Self> {
        let dim = blocks.first().map(|b| b.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(dim * blocks.len());
        for b in blocks {
            let b = b.as_ref();
            if b.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: b.len() });
            }
            data.extend_from_slice(b);
        }
        Self::new(data, dim)
    }

    pub fn n_agents(&self) -> usize {
        self.data.len() / self.state_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn block(&self, n: usize) -> &[f64] {
        &self.data[n * self.state_dim..(n + 1) * self.state_dim]
    }

    pub fn block_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.state_dim..(n + 1) * self.state_dim]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.state_dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Agent-order average of the blocks.
    pub fn mean_block(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.state_dim];
        for b in self.blocks() {
            for (m, v) in mean.iter_mut().zip(b) {
                *m += v;
            }
        }
        let n = self.n_agents() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

fn check_dims<F: LocalOperatorFamily + ?Sized>(ops: &F, z: &AgentStateVector) -> Result<()> {
    if z.state_dim() != ops.state_dim() {
        return Err(Error::DimensionMismatch { expected: ops.state_dim(), got: z.state_dim() });
    }
    if z.n_agents() != ops.n_agents() {
        return Err(Error::DimensionMismatch { expected: ops.n_agents(), got: z.n_agents() });
    }
    Ok(())
}

/// `R(z)_n = H_n(z_n) − z_n`.
pub fn residual<F: LocalOperatorFamily + ?Sized>(ops: &F, z: &AgentStateVector) -> Result<AgentStateVector> {
    check_dims(ops, z)?;
    let dim = z.state_dim();
    let mut out = AgentStateVector::zeros(z.n_agents(), dim);
    let job = |(n, (dst, src)): (usize, (&mut [f64], &[f64]))| -> Result<()> {
        ops.apply(n, src, dst)?;
        for (d, s) in dst.iter_mut().zip(src) {
            *d -= s;
        }
        Ok(())
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.data
            .par_chunks_exact_mut(dim)
            .zip(z.data.par_chunks_exact(dim))
            .enumerate()
            .try_for_each(job)?;
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.data.chunks_exact_mut(dim).zip(z.data.chunks_exact(dim)).enumerate().try_for_each(job)?;
    }
    Ok(out)
}

/// Two consecutive iterates plus the residual of the older one, so each
/// step evaluates the local maps once.
#[derive(Debug, Clone, PartialEq)]
pub struct DbpiState {
    pub z_prev: AgentStateVector,
    pub z_curr: AgentStateVector,
    pub alpha: f64,
    /// Index of `z_curr`, i.e. `z_curr = z^iteration`.
    pub iteration: usize,
    r_prev: AgentStateVector,
}

impl DbpiState {
    /// Resumes from two consecutive iterates `z^{k−1}`, `z^k`.
    pub fn from_pair<F: LocalOperatorFamily + ?Sized>(
        ops: &F,
        z_prev: AgentStateVector,
        z_curr: AgentStateVector,
        alpha: f64,
        iteration: usize,
    ) -> Result<Self> {
        if z_prev.state_dim() != z_curr.state_dim() || z_prev.n_agents() != z_curr.n_agents() {
            return Err(Error::DimensionMismatch { expected: z_curr.as_slice().len(), got: z_prev.as_slice().len() });
        }
        if iteration == 0 {
            return Err(Error::InvalidArgument("a resumed state needs iteration >= 1".into()));
        }
        let r_prev = residual(ops, &z_prev)?;
        Ok(DbpiState { z_prev, z_curr, alpha, iteration, r_prev })
    }
}

/// Bootstrap: `z¹ = W z⁰ + α R(z⁰)`.
pub fn dbpi_init<F, M>(ops: &F, w: &M, z0: AgentStateVector, alpha: f64) -> Result<DbpiState>
where
    F: LocalOperatorFamily + ?Sized,
    M: Mixing + ?Sized,
{
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    check_dims(ops, &z0)?;
    if w.n() != ops.n_agents() {
        return Err(Error::DimensionMismatch { expected: ops.n_agents(), got: w.n() });
    }
    let dim = z0.state_dim();
    let r0 = residual(ops, &z0)?;
    let mut z1 = AgentStateVector::zeros(z0.n_agents(), dim);
    w.mix_into(&z0.data, dim, &mut z1.data);
    for (a, r) in z1.data.iter_mut().zip(&r0.data) {
        *a += alpha * r;
    }
    if !z1.is_finite() {
        return Err(Error::Diverged(1));
    }
    Ok(DbpiState { z_prev: z0, z_curr: z1, alpha, iteration: 1, r_prev: r0 })
}

/// One iteration; one blockwise `W` product (on `z − ½ z⁻`) and one
/// evaluation of the local maps (on `z`).
pub fn dbpi_step<F, M>(state: DbpiState, ops: &F, w: &M) -> Result<DbpiState>
where
    F: LocalOperatorFamily + ?Sized,
    M: Mixing + ?Sized,
{
    let DbpiState { z_prev, z_curr, alpha, iteration, r_prev } = state;
    let dim = z_curr.state_dim();
    let r_curr = residual(ops, &z_curr)?;

    let mut u = z_curr.data.clone();
    for (a, p) in u.iter_mut().zip(&z_prev.data) {
        *a -= 0.5 * p;
    }
    let mut next = vec![0.0; u.len()];
    w.mix_into(&u, dim, &mut next);
    for i in 0..next.len() {
        next[i] += u[i] + alpha * (r_curr.data[i] - r_prev.data[i]);
    }
    let z_next = AgentStateVector { data: next, state_dim: dim };
    if !z_next.is_finite() {
        return Err(Error::Diverged(iteration + 1));
    }
    drop(z_prev);
    Ok(DbpiState { z_prev: z_curr, z_curr: z_next, alpha, iteration: iteration + 1, r_prev: r_curr })
}

/// `(1/N) Σ_n ‖P(z_n) − P(reference)‖₂`, with `P` the identity when absent.
pub fn consensus_error(
    z: &AgentStateVector,
    reference: &[f64],
    project: Option<&dyn Fn(&[f64]) -> Vec<f64>>,
) -> Result<f64> {
    if reference.len() != z.state_dim() {
        return Err(Error::DimensionMismatch { expected: z.state_dim(), got: reference.len() });
    }
    let target = match project {
        Some(p) => p(reference),
        None => reference.to_vec(),
    };
    let mut total = 0.0;
    for b in z.blocks() {
        let dist = match project {
            Some(p) => euclidean(&p(b), &target),
            None => euclidean(b, &target),
        };
        total += dist;
    }
    Ok(total / z.n_agents() as f64)
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Index of the last iterate produced.
    pub max_iters: usize,
    pub record_every: usize,
    /// Stop once the metric falls to this value or below.
    pub stop_below: Option<f64>,
}

impl RunOptions {
    pub fn fixed(max_iters: usize, record_every: usize) -> Self {
        RunOptions { max_iters, record_every, stop_below: None }
    }
}

/// Error trace of a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub operator: String,
    pub alpha: f64,
    pub seed: Option<u64>,
    pub n_agents: usize,
    pub state_dim: usize,
    /// `(iteration, error)` pairs in increasing iteration order.
    pub points: Vec<(usize, f64)>,
    /// Iteration at which a non-finite value or a local-map failure occurred.
    pub diverged_at: Option<usize>,
    pub final_state: Option<AgentStateVector>,
}

impl RunRecord {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn last_error(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,error\n");
        for (k, e) in &self.points {
            let _ = writeln!(out, "{k},{e:e}");
        }
        out
    }

    pub fn metadata(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "alpha={}", self.alpha);
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "seed={seed}");
        }
        let _ = writeln!(out, "operator={}", self.operator);
        let _ = writeln!(out, "n_agents={}", self.n_agents);
        let _ = writeln!(out, "state_dim={}", self.state_dim);
        if let Some(k) = self.diverged_at {
            let _ = writeln!(out, "diverged_at={k}");
        }
        out
    }
}

/// Runs the iteration from `z0`, recording `metric(z^k)` at `k = 0`, every
/// `record_every` iterations and at the final iterate. Divergence ends the
/// run and is flagged rather than returned as an error.
pub fn run<F, M, E>(
    ops: &F,
    w: &M,
    z0: AgentStateVector,
    alpha: f64,
    opts: RunOptions,
    mut metric: E,
) -> Result<RunRecord>
where
    F: LocalOperatorFamily + ?Sized,
    M: Mixing + ?Sized,
    E: FnMut(&AgentStateVector) -> f64,
{
    if opts.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    let every = opts.record_every.max(1);
    let mut record = RunRecord {
        operator: ops.name().to_string(),
        alpha,
        seed: None,
        n_agents: ops.n_agents(),
        state_dim: ops.state_dim(),
        points: Vec::new(),
        diverged_at: None,
        final_state: None,
    };
    let stop = |e: f64| opts.stop_below.is_some_and(|t| e <= t);

    let e0 = metric(&z0);
    record.points.push((0, e0));
    if stop(e0) {
        record.final_state = Some(z0);
        return Ok(record);
    }
    let mut state = match dbpi_init(ops, w, z0, alpha) {
        Ok(s) => s,
        Err(Error::InvalidArgument(m)) => return Err(Error::InvalidArgument(m)),
        Err(Error::DimensionMismatch { expected, got }) => return Err(Error::DimensionMismatch { expected, got }),
        Err(_) => {
            record.diverged_at = Some(1);
            return Ok(record);
        }
    };
    loop {
        let k = state.iteration;
        let last = k == opts.max_iters;
        if k % every == 0 || last || opts.stop_below.is_some() {
            let e = metric(&state.z_curr);
            if !e.is_finite() {
                record.points.push((k, e));
                record.diverged_at = Some(k);
                break;
            }
            let stopping = stop(e);
            if k % every == 0 || last || stopping {
                record.points.push((k, e));
            }
            if stopping {
                break;
            }
        }
        if last {
            break;
        }
        state = match dbpi_step(state, ops, w) {
            Ok(s) => s,
            Err(_) => {
                record.diverged_at = Some(k + 1);
                return Ok(record);
            }
        };
    }
    record.final_state = Some(state.z_curr);
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{metropolis_weights, CommGraph};
    use nalgebra::{DMatrix, DVector};
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// `H_n(x) = A_n x + b_n`.
    struct Affine {
        maps: Vec<(DMatrix<f64>, DVector<f64>)>,
    }

    impl LocalOperatorFamily for Affine {
        fn n_agents(&self) -> usize {
            self.maps.len()
        }
        fn state_dim(&self) -> usize {
            self.maps[0].1.len()
        }
        fn apply(&self, agent: usize, block: &[f64], out: &mut [f64]) -> Result<()> {
            let (a, b) = &self.maps[agent];
            let y = a * DVector::from_column_slice(block) + b;
            out.copy_from_slice(y.as_slice());
            Ok(())
        }
    }

    fn scalar_family(coeffs: &[(f64, f64)]) -> Affine {
        Affine {
            maps: coeffs
                .iter()
                .map(|&(a, b)| (DMatrix::from_element(1, 1, a), DVector::from_element(1, b)))
                .collect(),
        }
    }

    fn identity_family(n: usize, dim: usize) -> Affine {
        Affine { maps: (0..n).map(|_| (DMatrix::identity(dim, dim), DVector::zeros(dim))).collect() }
    }

    struct Counting<'a> {
        inner: &'a WeightMatrix,
        calls: AtomicUsize,
    }

    impl Mixing for Counting<'_> {
        fn n(&self) -> usize {
            self.inner.n()
        }
        fn mix_into(&self, z: &[f64], dim: usize, out: &mut [f64]) {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.mix_into(z, dim, out)
        }
    }

    fn single() -> WeightMatrix {
        WeightMatrix::from_dense(DMatrix::from_element(1, 1, 1.0)).unwrap()
    }

    #[test]
    fn residual_examples() {
        let ops = identity_family(3, 2);
        let z = AgentStateVector::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2).unwrap();
        assert!(residual(&ops, &z).unwrap().as_slice().iter().all(|&v| v == 0.0));

        let double = Affine { maps: vec![(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))] };
        let z = AgentStateVector::new(vec![1.0, 1.0], 2).unwrap();
        assert_eq!(residual(&double, &z).unwrap().as_slice(), &[1.0, 1.0]);

        let consts = scalar_family(&[(0.0, 4.0), (0.0, -1.5)]);
        let z = AgentStateVector::zeros(2, 1);
        assert_eq!(residual(&consts, &z).unwrap().as_slice(), &[4.0, -1.5]);

        let bad = AgentStateVector::zeros(2, 3);
        assert!(matches!(residual(&consts, &bad), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn init_examples() {
        // zero residual at a consensus state
        let g = CommGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let w = metropolis_weights(&g);
        let ops = identity_family(3, 2);
        let z0 = AgentStateVector::consensus(&[0.7, -1.2], 3);
        let s = dbpi_init(&ops, &w, z0.clone(), 0.3).unwrap();
        for (a, b) in s.z_curr.as_slice().iter().zip(z0.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }

        let half = scalar_family(&[(0.5, 0.0)]);
        let s = dbpi_init(&half, &single(), AgentStateVector::new(vec![2.0], 1).unwrap(), 1.0).unwrap();
        assert_eq!(s.z_curr.as_slice(), &[1.0]);

        let w2 = WeightMatrix::from_dense(DMatrix::from_element(2, 2, 0.5)).unwrap();
        let zero = scalar_family(&[(1.0, 0.0), (1.0, 0.0)]);
        let s = dbpi_init(&zero, &w2, AgentStateVector::new(vec![0.0, 2.0], 1).unwrap(), 1.0).unwrap();
        assert_eq!(s.z_curr.as_slice(), &[1.0, 1.0]);

        assert!(dbpi_init(&zero, &w2, AgentStateVector::new(vec![0.0, 2.0], 1).unwrap(), 0.0).is_err());
        assert!(dbpi_init(&zero, &w, AgentStateVector::new(vec![0.0, 2.0], 1).unwrap(), 1.0).is_err());
    }

    #[test]
    fn stalled_pair_state_does_not_move() {
        let half = scalar_family(&[(0.5, 0.0)]);
        let z = AgentStateVector::new(vec![1.0], 1).unwrap();
        let r = residual(&half, &z).unwrap();
        let state = DbpiState { z_prev: z.clone(), z_curr: z.clone(), alpha: 1.0, iteration: 1, r_prev: r };
        let next = dbpi_step(state, &half, &single()).unwrap();
        assert_eq!(next.z_curr.as_slice(), &[1.0]);
        assert_eq!(next.iteration, 2);
    }

    #[test]
    fn consensus_fixed_point_is_stationary() {
        // H_n(x) = x/2 + b_n with mean(b) = 0.5 has fixed point x* = 1,
        // yet the individual residuals at x* are nonzero.
        let ops = scalar_family(&[(0.5, 0.1), (0.5, 0.9), (0.5, 0.5), (0.5, 0.5)]);
        let g = CommGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let w = metropolis_weights(&g);
        let z = AgentStateVector::consensus(&[1.0], 4);
        let r = residual(&ops, &z).unwrap();
        let state = DbpiState { z_prev: z.clone(), z_curr: z.clone(), alpha: 0.4, iteration: 5, r_prev: r };
        let next = dbpi_step(state, &ops, &w).unwrap();
        for v in next.z_curr.as_slice() {
            assert!((v - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn one_communication_round_per_step() {
        let g = CommGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let w = metropolis_weights(&g);
        let counting = Counting { inner: &w, calls: AtomicUsize::new(0) };
        let ops = scalar_family(&[(0.3, 1.0), (0.2, 0.0), (0.1, 2.0), (0.4, -1.0)]);
        let mut s = dbpi_init(&ops, &counting, AgentStateVector::zeros(4, 1), 0.5).unwrap();
        assert_eq!(counting.calls.load(Ordering::SeqCst), 1);
        for k in 0..25 {
            s = dbpi_step(s, &ops, &counting).unwrap();
            assert_eq!(counting.calls.load(Ordering::SeqCst), k + 2);
        }
    }

    #[test]
    fn linear_family_converges_to_average_fixed_point() {
        // x* solves x = (1/N) Σ (A_n x + b_n)
        let n = 5;
        let dim = 3;
        let mut maps = Vec::new();
        for i in 0..n {
            let mut a = DMatrix::from_fn(dim, dim, |r, c| 0.05 * ((r + 2 * c + i) % 5) as f64 - 0.08);
            a[(i % dim, i % dim)] += 0.2;
            let b = DVector::from_fn(dim, |r, _| (r as f64 + 1.0) * (i as f64 - 2.0) * 0.3 + 0.1);
            maps.push((a, b));
        }
        let ops = Affine { maps };
        let a_bar = ops.maps.iter().fold(DMatrix::zeros(dim, dim), |acc, m| acc + &m.0) / n as f64;
        let b_bar = ops.maps.iter().fold(DVector::zeros(dim), |acc, m| acc + &m.1) / n as f64;
        let x_star = (DMatrix::identity(dim, dim) - &a_bar).lu().solve(&b_bar).unwrap();

        let g = CommGraph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let w = metropolis_weights(&g);
        let rec = run(&ops, &w, AgentStateVector::zeros(n, dim), 0.5, RunOptions::fixed(3000, 100), |z| {
            consensus_error(z, x_star.as_slice(), None).unwrap()
        })
        .unwrap();
        assert!(!rec.diverged());
        assert!(rec.last_error().unwrap() < 1e-10, "{:?}", rec.last_error());
    }

    #[test]
    fn identity_family_reduces_to_pure_averaging() {
        let g = CommGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let w = metropolis_weights(&g);
        let ops = identity_family(4, 1);
        let z0 = AgentStateVector::new(vec![4.0, 0.0, -2.0, 6.0], 1).unwrap();
        let mean = z0.mean_block();

        // zero residuals: z¹ = W z⁰, z^{k+2} = (I+W)(z^{k+1} − ½ z^k)
        let mut prev = z0.as_slice().to_vec();
        let mut curr = vec![0.0; 4];
        w.mix_into(&prev, 1, &mut curr);
        let mut s = dbpi_init(&ops, &w, z0, 0.7).unwrap();
        for _ in 0..1000 {
            let u: Vec<f64> = curr.iter().zip(&prev).map(|(c, p)| c - 0.5 * p).collect();
            let mut wu = vec![0.0; 4];
            w.mix_into(&u, 1, &mut wu);
            let next: Vec<f64> = u.iter().zip(&wu).map(|(a, b)| a + b).collect();
            prev = std::mem::replace(&mut curr, next);
            s = dbpi_step(s, &ops, &w).unwrap();
            for (a, b) in s.z_curr.as_slice().iter().zip(&curr) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(consensus_error(&s.z_curr, &mean, None).unwrap() < 1e-9);
    }

    #[test]
    fn consensus_error_examples() {
        let reference = [1.0, -2.0];
        let z = AgentStateVector::consensus(&reference, 3);
        assert_eq!(consensus_error(&z, &reference, None).unwrap(), 0.0);

        let z = AgentStateVector::new(vec![2.0, -2.0, 1.0, -2.0], 2).unwrap();
        assert!((consensus_error(&z, &reference, None).unwrap() - 0.5).abs() < 1e-15);

        // projection onto the first coordinate only
        let first = |b: &[f64]| vec![b[0]];
        let z = AgentStateVector::new(vec![1.0, 50.0, 4.0, 0.0, -1.0, 3.0], 2).unwrap();
        let got = consensus_error(&z, &reference, Some(&first)).unwrap();
        assert!((got - (0.0 + 3.0 + 2.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn huge_alpha_diverges_and_is_flagged() {
        let ops = scalar_family(&[(3.0, 1.0), (3.0, 0.0)]);
        let w = WeightMatrix::from_dense(DMatrix::from_element(2, 2, 0.5)).unwrap();
        let rec = run(&ops, &w, AgentStateVector::new(vec![1.0, 2.0], 1).unwrap(), 1e6, RunOptions::fixed(5000, 10), |z| {
            z.as_slice().iter().map(|v| v.abs()).sum()
        })
        .unwrap();
        assert!(rec.diverged());
    }

    #[test]
    fn record_schedule_and_csv() {
        let ops = identity_family(2, 1);
        let w = WeightMatrix::from_dense(DMatrix::from_element(2, 2, 0.5)).unwrap();
        let rec = run(&ops, &w, AgentStateVector::new(vec![0.0, 2.0], 1).unwrap(), 1.0, RunOptions::fixed(25, 10), |z| {
            consensus_error(z, &[1.0], None).unwrap()
        })
        .unwrap();
        let ks: Vec<usize> = rec.points.iter().map(|p| p.0).collect();
        assert_eq!(ks, vec![0, 10, 20, 25]);
        let csv = rec.to_csv();
        assert!(csv.starts_with("iteration,error\n"));
        assert_eq!(csv.lines().count(), 5);
        assert!(rec.metadata().contains("n_agents=2"));
    }

    #[test]
    fn early_stop_on_threshold() {
        let ops = identity_family(2, 1);
        let w = WeightMatrix::from_dense(DMatrix::from_element(2, 2, 0.5)).unwrap();
        let opts = RunOptions { max_iters: 100, record_every: 50, stop_below: Some(1e-3) };
        let rec = run(&ops, &w, AgentStateVector::new(vec![0.0, 2.0], 1).unwrap(), 1.0, opts, |z| {
            consensus_error(z, &[1.0], None).unwrap()
        })
        .unwrap();
        assert_eq!(rec.points.last().unwrap().0, 1);
        assert!(rec.last_error().unwrap() <= 1e-3);
    }
}
