//! Optimizing-sparsifying updates for the opacity budget `‖a‖₀ ≤ κ`.
//!
//! The constraint is split off onto an auxiliary copy `z` of the activated
//! opacities, coupled to them through the augmented Lagrangian
//!
//! ```text
//! L(a, z, Θ, λ) = loss(a, Θ) + h(z) + δ/2 ‖a − z + λ‖² + δ/2 ‖λ‖²
//! ```
//!
//! where `h` is the indicator of κ-sparse vectors. Each outer iteration
//!
//! 1. descends on `loss + δ/2 ‖a − z + λ‖²`, i.e. adds `δ(a − z + λ)` to `∂loss/∂a`;
//! 2. sets `z ← prox_h(a + λ)`, the projection keeping the top-κ entries;
//! 3. updates the multiplier `λ ← λ + a − z`;
//!
//! and the loop stops once `‖a − z‖² ≤ ε` or the outer count exceeds `T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsifierConfig {
    /// Penalty weight δ.
    pub delta: f64,
    /// Target number of Gaussians κ.
    pub kappa: usize,
    /// Feasibility tolerance ε on `‖a − z‖²`.
    pub epsilon: f64,
    /// Outer iteration cap T.
    pub max_outer: usize,
    /// Training iterations between sparsifying steps.
    pub interval: usize,
}

impl SparsifierConfig {
    /// Defaults for budget `kappa`: δ = 1e-2, ε = 1e-4·κ, interval 50.
    pub fn for_budget(kappa: usize) -> Self {
        SparsifierConfig {
            delta: 1e-2,
            kappa,
            epsilon: 1e-4 * kappa as f64,
            max_outer: 1000,
            interval: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        if self.interval == 0 {
            return Err(Error::InvalidArgument("sparsify interval must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsifierState {
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
    pub delta: f64,
    pub kappa: usize,
    pub epsilon: f64,
    pub max_outer: usize,
    pub interval: usize,
}

/// How the sparsifying step ranks entries of `a + λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProjectionCriterion {
    /// Keep the κ largest `|a + λ|`; the exact Euclidean projection.
    Magnitude,
    /// Keep the entries with the κ highest caller-supplied importance scores.
    ExternalScore(Vec<f64>),
}

/// Algorithm start: `z ← a`, `λ ← 0`.
pub fn init_state(a: &[f64], cfg: &SparsifierConfig) -> Result<SparsifierState> {
    cfg.validate()?;
    if cfg.kappa > a.len() {
        return Err(Error::InvalidBudget {
            kappa: cfg.kappa,
            n: a.len(),
        });
    }
    Ok(SparsifierState {
        z: a.to_vec(),
        lambda: vec![0.0; a.len()],
        delta: cfg.delta,
        kappa: cfg.kappa,
        epsilon: cfg.epsilon,
        max_outer: cfg.max_outer,
        interval: cfg.interval,
    })
}

fn check_len(a: &[f64], state: &SparsifierState) -> Result<()> {
    if a.len() != state.z.len() || state.z.len() != state.lambda.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: a has {}, z has {}, lambda has {}",
            a.len(),
            state.z.len(),
            state.lambda.len()
        )));
    }
    Ok(())
}

/// Extra opacity gradient of the optimizing step, `δ(a − z + λ)`.
pub fn coupling_gradient(a: &[f64], state: &SparsifierState) -> Result<Vec<f64>> {
    check_len(a, state)?;
    Ok(a.iter()
        .zip(&state.z)
        .zip(&state.lambda)
        .map(|((&a, &z), &l)| state.delta * (a - z + l))
        .collect())
}

/// Indices of the `k` highest `scores`, ties broken toward the lower index.
/// Returned in ascending index order.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(scores.len());
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() && k > 0 {
        idx.select_nth_unstable_by(k - 1, |&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    }
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Boolean membership mask of [`top_k_indices`].
pub fn top_k_mask(scores: &[f64], k: usize) -> Vec<bool> {
    let mut mask = vec![false; scores.len()];
    for i in top_k_indices(scores, k) {
        mask[i] = true;
    }
    mask
}

/// Projects `v` onto vectors with at most `kappa` nonzeros, ranking entries by `criterion`.
pub fn project_top_k(v: &[f64], kappa: usize, criterion: &ProjectionCriterion) -> Result<Vec<f64>> {
    let keep = match criterion {
        ProjectionCriterion::Magnitude => {
            let mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
            top_k_mask(&mags, kappa)
        }
        ProjectionCriterion::ExternalScore(scores) => {
            if scores.len() != v.len() {
                return Err(Error::InvalidArgument(format!(
                    "external scores have length {}, expected {}",
                    scores.len(),
                    v.len()
                )));
            }
            top_k_mask(scores, kappa)
        }
    };
    Ok(v.iter().zip(keep).map(|(&x, k)| if k { x } else { 0.0 }).collect())
}

/// Sparsifying step: `z ← prox_h(a + λ)`.
pub fn sparsify_step(a: &[f64], state: &mut SparsifierState, criterion: &ProjectionCriterion) -> Result<()> {
    check_len(a, state)?;
    let v: Vec<f64> = a.iter().zip(&state.lambda).map(|(a, l)| a + l).collect();
    state.z = project_top_k(&v, state.kappa, criterion)?;
    Ok(())
}

/// Multiplier update: `λ ← λ + a − z`.
pub fn multiplier_update(a: &[f64], state: &mut SparsifierState) -> Result<()> {
    check_len(a, state)?;
    for ((l, &a), &z) in state.lambda.iter_mut().zip(a).zip(&state.z) {
        *l += a - z;
    }
    Ok(())
}

/// Feasibility residual `‖a − z‖²`.
pub fn residual(a: &[f64], state: &SparsifierState) -> Result<f64> {
    check_len(a, state)?;
    Ok(a.iter().zip(&state.z).map(|(a, z)| (a - z) * (a - z)).sum())
}

/// Loop exit test: `‖a − z‖² ≤ ε` or `outer_count > T`.
pub fn converged(state: &SparsifierState, a: &[f64], outer_count: usize) -> Result<bool> {
    Ok(residual(a, state)? <= state.epsilon || outer_count > state.max_outer)
}

/// Penalty part of the augmented Lagrangian, without and with the `δ/2 ‖λ‖²` term.
pub fn penalty_terms(a: &[f64], state: &SparsifierState) -> Result<(f64, f64)> {
    check_len(a, state)?;
    let coupling: f64 = a
        .iter()
        .zip(&state.z)
        .zip(&state.lambda)
        .map(|((a, z), l)| (a - z + l) * (a - z + l))
        .sum();
    let dual: f64 = state.lambda.iter().map(|l| l * l).sum();
    let base = 0.5 * state.delta * coupling;
    Ok((base, base + 0.5 * state.delta * dual))
}

impl SparsifierState {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn nonzeros(&self) -> usize {
        self.z.iter().filter(|&&v| v != 0.0).count()
    }

    /// Support of `z`: the κ entries of largest `|z|`. Equals the nonzero set
    /// whenever `z` has exactly κ nonzeros.
    pub fn support(&self) -> Vec<bool> {
        let mags: Vec<f64> = self.z.iter().map(|v| v.abs()).collect();
        top_k_mask(&mags, self.kappa)
    }

    /// Keeps entries at `kept` (ascending indices), matching a cloud compaction.
    pub fn compact(&mut self, kept: &[usize]) {
        self.z = crate::cloud::gather(&self.z, kept);
        self.lambda = crate::cloud::gather(&self.lambda, kept);
    }
}
