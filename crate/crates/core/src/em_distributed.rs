//! Distributed EM: the local maps `H_n = G_n ∘ g₁` acting on per-agent
//! sufficient-statistics blocks `[vec(Γ) | ψ | p | σ²]`.

use nalgebra::{DMatrix, DVector};

use crate::dbpi::{AgentStateVector, LocalOperatorFamily, Mixing};
use crate::em_model::{g1, g1_min_norm, g2, local_stats, EmSummary, SensorDataset, ThetaParams};
use crate::error::{Error, Result};
use crate::graph::WeightMatrix;

/// Codec between [`EmSummary`] and flat state blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmStateLayout {
    d: usize,
}

impl EmStateLayout {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        Ok(EmStateLayout { d })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// `d² + d + 2`
    pub fn block_len(&self) -> usize {
        self.d * self.d + self.d + 2
    }

    pub fn pack_into(&self, s: &EmSummary, out: &mut [f64]) {
        let dd = self.d * self.d;
        out[..dd].copy_from_slice(s.gamma_mat.as_slice());
        out[dd..dd + self.d].copy_from_slice(s.psi.as_slice());
        out[dd + self.d] = s.p_stat;
        out[dd + self.d + 1] = s.gamma_scal;
    }

    pub fn pack(&self, s: &EmSummary) -> Result<Vec<f64>> {
        if s.dim() != self.d || s.gamma_mat.shape() != (self.d, self.d) {
            return Err(Error::DimensionMismatch { expected: self.d, got: s.dim() });
        }
        let mut out = vec![0.0; self.block_len()];
        self.pack_into(s, &mut out);
        Ok(out)
    }

    pub fn unpack(&self, block: &[f64]) -> Result<EmSummary> {
        if block.len() != self.block_len() {
            return Err(Error::DimensionMismatch { expected: self.block_len(), got: block.len() });
        }
        let (d, dd) = (self.d, self.d * self.d);
        Ok(EmSummary {
            gamma_mat: DMatrix::from_column_slice(d, d, &block[..dd]),
            psi: DVector::from_column_slice(&block[dd..dd + d]),
            p_stat: block[dd + d],
            gamma_scal: block[dd + d + 1],
        })
    }
}

/// How a local map treats a block whose `Γ` is numerically singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SingularPolicy {
    /// The agent fails and the run is flagged divergent.
    #[default]
    Strict,
    /// Minimum-norm `μ` via the pseudo-inverse.
    MinNorm,
}

impl std::str::FromStr for SingularPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(SingularPolicy::Strict),
            "min-norm" => Ok(SingularPolicy::MinNorm),
            _ => Err(Error::Parse(format!("unknown singular policy '{s}' (strict | min-norm)"))),
        }
    }
}

impl std::fmt::Display for SingularPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SingularPolicy::Strict => "strict",
            SingularPolicy::MinNorm => "min-norm",
        })
    }
}

/// One sample per agent; `apply(n, z) = pack(local_stats(y_n, h_n, g₁(z)))`.
#[derive(Debug, Clone)]
pub struct EmFamily {
    data: SensorDataset,
    layout: EmStateLayout,
    policy: SingularPolicy,
}

pub fn em_local_family(dataset: &SensorDataset) -> EmFamily {
    EmFamily { layout: EmStateLayout { d: dataset.dim() }, data: dataset.clone(), policy: SingularPolicy::Strict }
}

impl EmFamily {
    pub fn with_policy(mut self, policy: SingularPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn policy(&self) -> SingularPolicy {
        self.policy
    }

    fn theta_of(&self, block: &[f64]) -> Result<ThetaParams> {
        let s = self.layout.unpack(block)?;
        match self.policy {
            SingularPolicy::Strict => g1(&s),
            SingularPolicy::MinNorm => g1_min_norm(&s),
        }
    }

    pub fn layout(&self) -> EmStateLayout {
        self.layout
    }

    pub fn dataset(&self) -> &SensorDataset {
        &self.data
    }

    /// `z ↦ pack(g₂(g₁(unpack(z))))`, the average of the local maps.
    pub fn averaged_map(&self, block: &[f64]) -> Result<Vec<f64>> {
        let theta = self.theta_of(block)?;
        self.layout.pack(&g2(&self.data, &theta))
    }
}

impl LocalOperatorFamily for EmFamily {
    fn n_agents(&self) -> usize {
        self.data.len()
    }

    fn state_dim(&self) -> usize {
        self.layout.block_len()
    }

    fn apply(&self, agent: usize, block: &[f64], out: &mut [f64]) -> Result<()> {
        let theta = self.theta_of(block)?;
        let s = local_stats(self.data.y()[agent], self.data.h(agent), &theta);
        self.layout.pack_into(&s, out);
        Ok(())
    }

    fn name(&self) -> &str {
        "em"
    }
}

/// Agent-local starting point `(y h / hᵀh, 1/2, y²/2)`.
pub fn local_initial_theta(y: f64, h: &DVector<f64>) -> Result<ThetaParams> {
    let hh = h.norm_squared();
    if !(hh > 0.0) {
        return Err(Error::InvalidArgument("zero regressor has no local initializer".into()));
    }
    if y == 0.0 {
        return Err(Error::DomainExit("y = 0 gives a zero initial variance".into()));
    }
    ThetaParams::new(h * (y / hh), 0.5, y * y / 2.0)
}

/// Each agent evaluates its statistics at its own local initializer, then
/// one round of mixing: `z_n⁰ = Σ_m W_nm pack(local_stats(y_m, h_m, θ_m⁰))`.
pub fn em_initial_state(dataset: &SensorDataset, w: &WeightMatrix) -> Result<AgentStateVector> {
    let n = dataset.len();
    if w.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: w.n() });
    }
    let layout = EmStateLayout::new(dataset.dim())?;
    let dim = layout.block_len();
    let mut local = vec![0.0; n * dim];
    for m in 0..n {
        let theta = local_initial_theta(dataset.y()[m], dataset.h(m))?;
        let s = local_stats(dataset.y()[m], dataset.h(m), &theta);
        layout.pack_into(&s, &mut local[m * dim..(m + 1) * dim]);
    }
    let mut mixed = vec![0.0; n * dim];
    Mixing::mix_into(w, &local, dim, &mut mixed);
    AgentStateVector::new(mixed, dim)
}

/// Value of the EM error metric plus the number of agents whose block had
/// no usable `g₁` image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub excluded: usize,
}

/// `(1/N') Σ_n ‖μ(g₁(z_n)) − μ_ref‖` over the `N'` agents whose block maps
/// through `g₁`. `NaN` when none do.
pub fn em_error_metric(z: &AgentStateVector, theta_ref: &ThetaParams) -> Result<MetricValue> {
    let layout = EmStateLayout::new(theta_ref.dim())?;
    if z.state_dim() != layout.block_len() {
        return Err(Error::DimensionMismatch { expected: layout.block_len(), got: z.state_dim() });
    }
    let (mut total, mut used) = (0.0, 0usize);
    for b in z.blocks() {
        match g1(&layout.unpack(b)?) {
            Ok(t) => {
                total += (t.mu - &theta_ref.mu).norm();
                used += 1;
            }
            Err(_) => continue,
        }
    }
    let excluded = z.n_agents() - used;
    let value = if used == 0 { f64::NAN } else { total / used as f64 };
    Ok(MetricValue { value, excluded })
}

/// `(1/N) Σ_n g₁(z_n)` as a parameter vector.
pub fn average_theta(z: &AgentStateVector, d: usize) -> Result<ThetaParams> {
    average_theta_with(z, d, SingularPolicy::Strict)
}

/// [`average_theta`] with the given treatment of singular blocks.
pub fn average_theta_with(z: &AgentStateVector, d: usize, policy: SingularPolicy) -> Result<ThetaParams> {
    let layout = EmStateLayout::new(d)?;
    if z.state_dim() != layout.block_len() {
        return Err(Error::DimensionMismatch { expected: layout.block_len(), got: z.state_dim() });
    }
    let mut acc = vec![0.0; d + 2];
    for b in z.blocks() {
        let s = layout.unpack(b)?;
        let t = match policy {
            SingularPolicy::Strict => g1(&s)?,
            SingularPolicy::MinNorm => g1_min_norm(&s)?,
        };
        for (a, v) in acc.iter_mut().zip(t.to_vec()) {
            *a += v;
        }
    }
    let n = z.n_agents() as f64;
    ThetaParams::from_slice(&acc.iter().map(|v| v / n).collect::<Vec<_>>())
}
