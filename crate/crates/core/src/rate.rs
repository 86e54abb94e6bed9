//! Entropies, the large-deviation rate functions `I`, `J`, `J'`, and the free
//! energy functionals `G` (block model) and `G^P` (reduced Potts model).
//!
//! Conventions:
//! - `0 log 0 = 0`, by branch.
//! - A matrix violating its row constraint evaluates to [`RateValue::Infeasible`]
//!   instead of a floating-point infinity.
//! - Inputs within [`FEASIBILITY_TOL`](crate::model::FEASIBILITY_TOL) of
//!   feasibility are renormalized before evaluation.
//! - The normalizing suprema are inputs. [`crate::equilibria::maximize_g`]
//!   produces `sup G`; [`sup_term_from_sup_g`] converts it for `J`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{DistributionMatrix, ModelParams, Normalization, FEASIBILITY_TOL};
use crate::scalar::Scalar;

/// A rate-function value: finite, or `+∞` for arguments outside the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum RateValue<T = f64> {
    Finite(T),
    Infeasible,
}

impl<T: Scalar> RateValue<T> {
    pub fn finite(self) -> Option<T> {
        match self {
            RateValue::Finite(v) => Some(v),
            RateValue::Infeasible => None,
        }
    }

    pub fn is_infeasible(self) -> bool {
        matches!(self, RateValue::Infeasible)
    }

    /// Panics on the infeasible sentinel.
    pub fn unwrap(self) -> T {
        self.finite().expect("rate value is infeasible")
    }
}

/// `J(ν)` or `J'(ν)` together with the supremum it was normalized by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEvaluation<T = f64> {
    pub value: RateValue<T>,
    pub sup_g: T,
    pub argument: DistributionMatrix<T>,
}

fn on_simplex<T: Scalar>(v: &[T]) -> Option<Vec<T>> {
    if v.iter().any(|x| !(x.is_finite() && *x >= T::zero())) {
        return None;
    }
    let sum: T = v.iter().copied().sum();
    if (sum - T::one()).abs() > T::lit(FEASIBILITY_TOL) {
        return None;
    }
    Some(v.iter().map(|&x| x / sum).collect())
}

/// `H(ν|ρ) = Σ_c ν_c log(q ν_c)` relative to the uniform law on `q` colours.
pub fn relative_entropy<T: Scalar>(nu: &[T]) -> RateValue<T> {
    match on_simplex(nu) {
        None => RateValue::Infeasible,
        Some(v) => {
            let q = T::count(v.len() as u64);
            let neg_entropy: T = v.iter().map(|&x| x.xlogx()).sum();
            RateValue::Finite((neg_entropy + q.ln()).max(T::zero()))
        }
    }
}

/// `I(ν) = Σ_k γ_k H(ν_k|ρ)` for a row-stochastic `ν`.
pub fn rate_i<T: Scalar>(nu: &DistributionMatrix<T>, gamma: &[T]) -> RateValue<T> {
    if nu.normalization() != Normalization::Row || gamma.len() != nu.s() {
        return RateValue::Infeasible;
    }
    let mut total = T::zero();
    for k in 0..nu.s() {
        match relative_entropy(nu.row(k)) {
            RateValue::Finite(h) => total = total + gamma[k] * h,
            RateValue::Infeasible => return RateValue::Infeasible,
        }
    }
    RateValue::Finite(total)
}

/// `⟨μ, μ⟩_A = β Σ μ_{kc}² + α Σ_{k≠k'} μ_{kc} μ_{k'c}`.
pub fn interaction_form<T: Scalar>(mu: &DistributionMatrix<T>, params: &ModelParams<T>) -> T {
    let mut total = T::zero();
    for c in 0..mu.q() {
        let mut col = T::zero();
        let mut sq = T::zero();
        for k in 0..mu.s() {
            let x = mu.get(k, c);
            col = col + x;
            sq = sq + x * x;
        }
        total = total + params.beta * sq + params.alpha * (col * col - sq);
    }
    total
}

/// `G(μ) = ½⟨μ,μ⟩_A − Σ μ_{kc} log μ_{kc}` without any feasibility check.
///
/// Defined for every non-negative matrix; used by the optimizers and for
/// finite-difference checks off the constraint set.
pub fn free_energy_unchecked<T: Scalar>(mu: &DistributionMatrix<T>, params: &ModelParams<T>) -> T {
    let entropy: T = mu.entries().iter().map(|&x| -x.xlogx()).sum();
    T::lit(0.5) * interaction_form(mu, params) + entropy
}

/// `G(μ)` for `μ ∈ C(γ)`.
pub fn free_energy_g<T: Scalar>(mu: &DistributionMatrix<T>, params: &ModelParams<T>) -> Result<T> {
    if mu.normalization() != Normalization::Block {
        return Err(invalid("G is defined on block-normalized matrices"));
    }
    if mu.s() != params.s || mu.q() != params.q {
        return Err(invalid("matrix shape does not match the model"));
    }
    mu.check(&params.gamma)?;
    Ok(free_energy_unchecked(
        &mu.renormalized(&params.gamma),
        params,
    ))
}

/// `∂G/∂μ_{kc} = βμ_{kc} + α Σ_{k'≠k} μ_{k'c} − log μ_{kc} − 1`, row-major.
///
/// Requires strictly positive entries.
pub fn gradient_g<T: Scalar>(mu: &DistributionMatrix<T>, params: &ModelParams<T>) -> Vec<T> {
    let (s, q) = (mu.s(), mu.q());
    let mut grad = Vec::with_capacity(s * q);
    let columns: Vec<T> = (0..q).map(|c| (0..s).map(|k| mu.get(k, c)).sum()).collect();
    for k in 0..s {
        for c in 0..q {
            let x = mu.get(k, c);
            grad.push(params.beta * x + params.alpha * (columns[c] - x) - x.ln() - T::one());
        }
    }
    grad
}

/// `G^P(v) = (g/2) Σ v_c² − Σ v_c log v_c`.
pub fn potts_functional<T: Scalar>(v: &[T], g: T) -> T {
    let sq: T = v.iter().map(|&x| x * x).sum();
    let entropy: T = v.iter().map(|&x| -x.xlogx()).sum();
    T::lit(0.5) * g * sq + entropy
}

/// `J'(ν) = sup G − G(ν)` on `C(γ)`, infeasible elsewhere.
pub fn rate_j_prime<T: Scalar>(
    nu: &DistributionMatrix<T>,
    params: &ModelParams<T>,
    sup_g: T,
) -> RateEvaluation<T> {
    let value = match free_energy_g(nu, params) {
        Ok(g) => RateValue::Finite(sup_g - g),
        Err(_) => RateValue::Infeasible,
    };
    RateEvaluation {
        value,
        sup_g,
        argument: nu.clone(),
    }
}

/// The normalizing constant of `J`, `sup_ν [½⟨Γν,Γν⟩_A − I(ν)]`, expressed
/// through `sup G` over `C(γ)`:
/// `sup G − log q + Σ_k γ_k log γ_k`.
pub fn sup_term_from_sup_g<T: Scalar>(sup_g: T, params: &ModelParams<T>) -> T {
    let gamma_neg_entropy: T = params.gamma.iter().map(|&g| g.xlogx()).sum();
    sup_g - T::count(params.q as u64).ln() + gamma_neg_entropy
}

/// `J(ν) = −[½⟨Γν,Γν⟩_A − I(ν)] + sup_term` for a row-stochastic `ν`.
///
/// The returned `sup_g` field is recovered from `sup_term` so that the
/// evaluation is comparable with [`rate_j_prime`].
pub fn rate_j<T: Scalar>(
    nu: &DistributionMatrix<T>,
    params: &ModelParams<T>,
    sup_term: T,
) -> RateEvaluation<T> {
    let gamma = &params.gamma;
    let sup_g = sup_term - sup_term_from_sup_g(T::zero(), params);
    let value = if nu.normalization() != Normalization::Row
        || nu.s() != params.s
        || nu.q() != params.q
    {
        RateValue::Infeasible
    } else {
        match rate_i(nu, gamma) {
            RateValue::Infeasible => RateValue::Infeasible,
            RateValue::Finite(i) => {
                let scaled = nu.renormalized(gamma).to_block(gamma);
                RateValue::Finite(sup_term - (T::lit(0.5) * interaction_form(&scaled, params) - i))
            }
        }
    };
    RateEvaluation {
        value,
        sup_g,
        argument: nu.clone(),
    }
}

/// One sample of `G` on the two-distinct-column manifold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandscapePoint {
    pub r: usize,
    pub mu_plus: Vec<f64>,
    pub g_value: f64,
}

/// Samples `G` on a tensor mesh of `μ⁺ ∈ ∏_k [γ_k/q, γ_k/r)` with `mesh`
/// points per block, for the matrix with `q−r` columns `μ⁻` and `r` columns
/// `μ⁺`.
pub fn g_landscape<T: Scalar>(
    params: &ModelParams<T>,
    r: usize,
    mesh: usize,
) -> Result<Vec<LandscapePoint>> {
    let (s, q) = (params.s, params.q);
    if r == 0 || r >= q {
        return Err(invalid(format!("r must lie in 1..{q}, got {r}")));
    }
    if mesh < 2 {
        return Err(invalid("mesh needs at least two points"));
    }
    let total = (mesh as u128).checked_pow(s as u32).unwrap_or(u128::MAX);
    if total > 1_000_000 {
        return Err(crate::Error::Capacity {
            required: total,
            cap: 1_000_000,
        });
    }
    let mut out = Vec::with_capacity(total as usize);
    let mut digits = vec![0usize; s];
    for mut idx in 0..total as usize {
        for d in digits.iter_mut().rev() {
            *d = idx % mesh;
            idx /= mesh;
        }
        let mu_plus: Vec<T> = digits
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                let lo = params.gamma[k] / T::count(q as u64);
                let hi = params.gamma[k] / T::count(r as u64);
                // Open at the upper end, where the minus column vanishes.
                lo + (hi - lo) * T::count(d as u64) / T::count(mesh as u64)
            })
            .collect();
        let mu = crate::equilibria::two_column_matrix(&mu_plus, r, params);
        out.push(LandscapePoint {
            r,
            mu_plus: mu_plus.iter().map(|x| x.as_f64()).collect(),
            g_value: free_energy_unchecked(&mu, params).as_f64(),
        });
    }
    Ok(out)
}
