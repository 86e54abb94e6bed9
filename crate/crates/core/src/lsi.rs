//! Finite-`N` checks of the log-Sobolev machinery.
//!
//! The interdependence matrix `J_ij` is the largest total-variation change of
//! the conditional law at site `i` when only site `j` changes. With `γ1` the
//! smallest conditional probability and `γ2 = 1 − ‖J‖_{2→2}`, the constants
//! are `C = 1/(γ1γ2²)`, `σ2² = σ3² = C`, `σ1² = log(1/γ1)·C/log 4`, and for
//! every observable `f`:
//!
//! ```text
//! (a)  Ent(f²)  ≤ 2σ1² ∫ |𝔡f|² dμ
//! (b)  Ent(e^f) ≤ σ2² Σ_i ∫ Cov_{μ(·|ω_{i^c})}(f, e^f) dμ
//! (c)  Ent(e^f) ≤ (σ3²/2) ∫ |𝔡f|² e^f dμ
//! ```
//!
//! Observables are tables indexed like [`ConfigurationMeasure`].

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::exact::{
    check_model, enumerate_block_compositions, ConfigurationMeasure, ExactDistribution,
    ExactOptions,
};
use crate::glauber::{tail_estimate, ChainSummary};
use crate::model::{BlockStructure, ModelParams, SpinConfig};
use crate::rng::stream_rng;
use crate::scalar::{pairwise_sum, softmax, softmax_into, total_variation, Scalar};

/// `2qβe^β`.
pub fn lsi_condition_value<T: Scalar>(q: usize, beta: T) -> T {
    T::lit(2.0) * T::count(q as u64) * beta * beta.exp()
}

/// `2qβe^β < 1`.
pub fn lsi_condition<T: Scalar>(q: usize, beta: T) -> bool {
    lsi_condition_value(q, beta) < T::one()
}

/// `N×N` matrix with zero diagonal and entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterdependenceMatrix<T = f64> {
    n: usize,
    entries: Vec<T>,
}

impl<T: Scalar> InterdependenceMatrix<T> {
    pub fn new(n: usize, entries: Vec<T>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(invalid(format!(
                "expected {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        if (0..n).any(|i| entries[i * n + i] != T::zero()) {
            return Err(invalid("interdependence matrix must have a zero diagonal"));
        }
        if entries.iter().any(|&x| !(x >= T::zero() && x <= T::one())) {
            return Err(invalid("interdependence entries must lie in [0, 1]"));
        }
        Ok(Self { n, entries })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![T::zero(); n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }
}

/// `μ_N(· | ω_{i^c})` for every configuration and site, `[index][site][colour]`.
fn conditional_table<T: Scalar>(measure: &ConfigurationMeasure<T>) -> Vec<T> {
    let n = measure.n();
    (0..measure.len())
        .into_par_iter()
        .flat_map_iter(|idx| (0..n).flat_map(move |i| measure.conditional(idx, i)))
        .collect()
}

/// `J_ij` by exhaustive enumeration of configuration pairs differing at `j`.
pub fn interdependence_matrix_exact<T: Scalar>(
    blocks: &BlockStructure,
    params: &ModelParams<T>,
    options: ExactOptions,
) -> Result<InterdependenceMatrix<T>> {
    let measure = ConfigurationMeasure::new(blocks, params, options)?;
    Ok(interdependence_from_measure(&measure))
}

/// As [`interdependence_matrix_exact`] for an already enumerated measure.
pub fn interdependence_from_measure<T: Scalar>(
    measure: &ConfigurationMeasure<T>,
) -> InterdependenceMatrix<T> {
    let (n, q) = (measure.n(), measure.q());
    let table = conditional_table(measure);
    let cond = |idx: usize, i: usize| &table[(idx * n + i) * q..(idx * n + i + 1) * q];
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        return T::zero();
                    }
                    let mut sup = T::zero();
                    for idx in 0..measure.len() {
                        // The conditional at i ignores ω_i; visit each ω_{i^c} once.
                        if measure.color_at(idx, i) != 0 {
                            continue;
                        }
                        let a = measure.color_at(idx, j);
                        for b in a + 1..q {
                            let other = measure.recolor(idx, j, b);
                            sup = sup.max(total_variation(cond(idx, i), cond(other, i)));
                        }
                    }
                    sup
                })
                .collect()
        })
        .collect();
    InterdependenceMatrix {
        n,
        entries: rows.concat(),
    }
}

/// Aggregated counts of the sites other than `i` (and `j`), split into the
/// block of `i` and everything else.
fn class_compositions(own: usize, rest: usize, q: usize) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    (
        enumerate_block_compositions(own, q),
        enumerate_block_compositions(rest, q),
    )
}

fn field_base<T: Scalar>(x: &[u32], y: &[u32], params: &ModelParams<T>, n: T, out: &mut [T]) {
    for c in 0..x.len() {
        out[c] = (params.beta * T::count(x[c] as u64) + params.alpha * T::count(y[c] as u64)) / n;
    }
}

/// Sup of the TV change at a site of block `k` when a site of block `l`
/// changes colour, over all counts of the remaining sites.
///
/// By colour symmetry of the count ranges it suffices to flip colour 1 to 2.
fn interdependence_class<T: Scalar>(
    blocks: &BlockStructure,
    params: &ModelParams<T>,
    k: usize,
    l: usize,
) -> T {
    let (n, q) = (blocks.n(), params.q);
    let nn = T::count(n as u64);
    let size = blocks.size(k);
    let (own, rest, w) = if k == l {
        (size.saturating_sub(2), n - size, params.beta)
    } else {
        (size - 1, n - size - 1, params.alpha)
    };
    if k == l && size < 2 {
        return T::zero();
    }
    let (xs, ys) = class_compositions(own, rest, q);
    let shift = w / nn;
    xs.par_iter()
        .map(|x| {
            let mut f0 = vec![T::zero(); q];
            let mut fa = vec![T::zero(); q];
            let (mut pa, mut pb) = (vec![T::zero(); q], vec![T::zero(); q]);
            let mut sup = T::zero();
            for y in &ys {
                field_base(x, y, params, nn, &mut f0);
                fa.copy_from_slice(&f0);
                fa[0] = fa[0] + shift;
                softmax_into(&fa, &mut pa);
                fa.copy_from_slice(&f0);
                fa[1] = fa[1] + shift;
                softmax_into(&fa, &mut pb);
                sup = sup.max(total_variation(&pa, &pb));
            }
            sup
        })
        .reduce(|| T::zero(), T::max)
}

/// `J` from count enumeration; entries depend only on the blocks of `i`
/// and `j`, so this scales to large `N`.
pub fn interdependence_matrix_counts<T: Scalar>(
    blocks: &BlockStructure,
    params: &ModelParams<T>,
) -> Result<InterdependenceMatrix<T>> {
    check_model(blocks, params)?;
    let s = blocks.s();
    let classes: Vec<T> = (0..s * s)
        .map(|kl| interdependence_class(blocks, params, kl / s, kl % s))
        .collect();
    let n = blocks.n();
    let site_block = blocks.site_blocks();
    let mut entries = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                entries[i * n + j] = classes[site_block[i] * s + site_block[j]];
            }
        }
    }
    Ok(InterdependenceMatrix { n, entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatrixNorms<T = f64> {
    /// Largest absolute row sum, `‖J‖_{∞→∞}`.
    pub inf_norm: T,
    /// Largest absolute column sum, `‖J‖_{1→1}`.
    pub one_norm: T,
    /// Largest singular value, `‖J‖_{2→2}`.
    pub two_norm: T,
}

/// Row/column-sum norms and the spectral norm (power iteration on `JᵗJ`,
/// relative tolerance `1e-10`).
pub fn matrix_norms<T: Scalar>(j: &InterdependenceMatrix<T>) -> MatrixNorms<T> {
    let n = j.n();
    let inf_norm = (0..n)
        .map(|i| (0..n).map(|c| j.get(i, c).abs()).sum::<T>())
        .fold(T::zero(), T::max);
    let one_norm = (0..n)
        .map(|c| (0..n).map(|i| j.get(i, c).abs()).sum::<T>())
        .fold(T::zero(), T::max);
    MatrixNorms {
        inf_norm,
        one_norm,
        two_norm: spectral_norm(j),
    }
}

fn spectral_norm<T: Scalar>(j: &InterdependenceMatrix<T>) -> T {
    let n = j.n();
    if n == 0 || j.entries().iter().all(|&x| x == T::zero()) {
        return T::zero();
    }
    let mut v: Vec<T> = (0..n)
        .map(|i| T::one() + T::lit(1e-3) * T::count((i % 7) as u64))
        .collect();
    let norm = |v: &[T]| v.iter().map(|&x| x * x).sum::<T>().sqrt();
    let mut lambda = T::zero();
    let tol = T::lit(1e-10).max(T::epsilon() * T::lit(16.0));
    for _ in 0..100_000 {
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x = *x / nv);
        let jv: Vec<T> = (0..n)
            .map(|i| (0..n).map(|c| j.get(i, c) * v[c]).sum())
            .collect();
        let w: Vec<T> = (0..n)
            .map(|c| (0..n).map(|i| j.get(i, c) * jv[i]).sum())
            .collect();
        let next = v.iter().zip(&w).map(|(&a, &b)| a * b).sum::<T>();
        v = w;
        if (next - lambda).abs() <= tol * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(T::zero()).sqrt()
}

/// Smallest conditional probability over all sites and configurations.
pub fn gamma1_exact<T: Scalar>(
    blocks: &BlockStructure,
    params: &ModelParams<T>,
    options: ExactOptions,
) -> Result<T> {
    let measure = ConfigurationMeasure::new(blocks, params, options)?;
    Ok(gamma1_from_measure(&measure))
}

pub fn gamma1_from_measure<T: Scalar>(measure: &ConfigurationMeasure<T>) -> T {
    conditional_table(measure)
        .into_iter()
        .fold(T::infinity(), T::min)
}

/// [`gamma1_exact`] by enumerating the leave-one-out counts only.
pub fn gamma1_counts<T: Scalar>(blocks: &BlockStructure, params: &ModelParams<T>) -> Result<T> {
    check_model(blocks, params)?;
    let (n, q) = (blocks.n(), params.q);
    let nn = T::count(n as u64);
    let mut best = T::infinity();
    for k in 0..blocks.s() {
        let (xs, ys) = class_compositions(blocks.size(k) - 1, n - blocks.size(k), q);
        let m = xs
            .par_iter()
            .map(|x| {
                let mut f = vec![T::zero(); q];
                let mut p = vec![T::zero(); q];
                let mut low = T::infinity();
                for y in &ys {
                    field_base(x, y, params, nn, &mut f);
                    softmax_into(&f, &mut p);
                    low = p.iter().copied().fold(low, T::min);
                }
                low
            })
            .reduce(|| T::infinity(), T::min);
        best = best.min(m);
    }
    Ok(best)
}

/// `1/(1+(q−1)e^β)`, a lower bound for `γ1`.
pub fn gamma1_floor<T: Scalar>(q: usize, beta: T) -> T {
    T::one() / (T::one() + T::count(q as u64 - 1) * beta.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LsiConstants<T = f64> {
    pub gamma1: T,
    pub gamma2: T,
    pub c: T,
    pub sigma1_sq: T,
    pub sigma2_sq: T,
    pub sigma3_sq: T,
}

/// `C = 1/(γ1γ2²)`, `σ2² = σ3² = C`, `σ1² = log(1/γ1)·C/log 4`.
pub fn lsi_constants<T: Scalar>(gamma1: T, gamma2: T) -> Result<LsiConstants<T>> {
    if !(gamma1 > T::zero() && gamma1 <= T::one()) {
        return Err(invalid(format!("gamma1 must lie in (0, 1], got {gamma1}")));
    }
    if !(gamma2 > T::zero() && gamma2 <= T::one()) {
        return Err(invalid(format!("gamma2 must lie in (0, 1], got {gamma2}")));
    }
    let c = T::one() / (gamma1 * gamma2 * gamma2);
    Ok(LsiConstants {
        gamma1,
        gamma2,
        c,
        sigma1_sq: (T::one() / gamma1).ln() * c / T::lit(4.0).ln(),
        sigma2_sq: c,
        sigma3_sq: c,
    })
}

/// Tabulates `f` over all configurations of `measure`.
pub fn observable<T: Scalar>(
    measure: &ConfigurationMeasure<T>,
    f: impl Fn(&SpinConfig) -> T + Sync,
) -> Vec<T> {
    (0..measure.len())
        .into_par_iter()
        .map(|idx| f(&measure.config(idx)))
        .collect()
}

/// `T_{k,c}(ω) = #{i ∈ S_k : ω_i = c}`.
pub fn count_observable<T: Scalar>(
    measure: &ConfigurationMeasure<T>,
    k: usize,
    c: usize,
) -> Vec<T> {
    let range = measure.blocks().range(k);
    observable(measure, |cfg| {
        T::count(
            cfg.colors()[range.clone()]
                .iter()
                .filter(|&&x| x as usize == c)
                .count() as u64,
        )
    })
}

/// Centred Gaussian field over configurations.
pub fn gaussian_observable<T: Scalar>(len: usize, amplitude: T, seed: u64, stream: u64) -> Vec<T> {
    let mut rng = stream_rng(seed, stream);
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            amplitude * T::lit(z)
        })
        .collect()
}

/// Indicators, counts, linear forms and products of two indicators.
pub fn structured_battery<T: Scalar>(measure: &ConfigurationMeasure<T>) -> Vec<(String, Vec<T>)> {
    let (n, q) = (measure.n(), measure.q());
    let mut out = vec![("constant".to_string(), vec![T::one(); measure.len()])];
    for i in 0..n {
        for c in 0..q {
            out.push((
                format!("indicator(site={},colour={})", i + 1, c + 1),
                observable(measure, |cfg| {
                    if cfg.get(i) as usize == c {
                        T::one()
                    } else {
                        T::zero()
                    }
                }),
            ));
        }
    }
    for k in 0..measure.blocks().s() {
        for c in 0..q {
            out.push((
                format!("T(block={},colour={})", k + 1, c + 1),
                count_observable(measure, k, c),
            ));
        }
    }
    let nn = T::count(n as u64);
    out.push((
        "linear(alternating)".into(),
        observable(measure, |cfg| {
            (0..n)
                .map(|i| {
                    let sign = if i % 2 == 0 { T::one() } else { -T::one() };
                    sign * T::count(i as u64 + 1) / nn * T::count(cfg.get(i) as u64)
                })
                .sum()
        }),
    ));
    out.push((
        "linear(colour-1 fraction)".into(),
        observable(measure, |cfg| {
            T::count(cfg.colors().iter().filter(|&&x| x == 0).count() as u64) / nn
        }),
    ));
    if n >= 2 {
        for (i, j) in [(0, 1), (0, n - 1)] {
            for (a, b) in [(0usize, 0usize), (0, 1)] {
                out.push((
                    format!("product(site={}:{},site={}:{})", i + 1, a + 1, j + 1, b + 1),
                    observable(measure, |cfg| {
                        if cfg.get(i) as usize == a && cfg.get(j) as usize == b {
                            T::one()
                        } else {
                            T::zero()
                        }
                    }),
                ));
            }
        }
    }
    out
}

fn diff_sq_at<T: Scalar>(f: &[T], idx: usize, measure: &ConfigurationMeasure<T>) -> T {
    let mut total = T::zero();
    for i in 0..measure.n() {
        let p = measure.conditional(idx, i);
        for (c, &pc) in p.iter().enumerate() {
            let d = f[idx] - f[measure.recolor(idx, i, c)];
            total = total + pc * d * d;
        }
    }
    total
}

/// `|𝔡f|²(ω) = Σ_i ∫ (f(ω) − f(ω_{i^c}, x))² dμ_N(x | ω_{i^c})`.
pub fn difference_operator_sq<T: Scalar>(
    f: &[T],
    config: &SpinConfig,
    measure: &ConfigurationMeasure<T>,
) -> Result<T> {
    if f.len() != measure.len() {
        return Err(invalid(
            "observable table does not match the configuration space",
        ));
    }
    if config.len() != measure.n() || config.q() != measure.q() {
        return Err(invalid("configuration does not match the measure"));
    }
    Ok(diff_sq_at(f, measure.index_of(config), measure))
}

/// `|𝔡f|²` at every configuration.
pub fn difference_operator_table<T: Scalar>(f: &[T], measure: &ConfigurationMeasure<T>) -> Vec<T> {
    (0..measure.len())
        .into_par_iter()
        .map(|idx| diff_sq_at(f, idx, measure))
        .collect()
}

/// `Ent(f) = ∫ f log f − ∫ f log ∫ f` under the probability vector `probs`.
pub fn entropy_functional<T: Scalar>(f: &[T], probs: &[T]) -> Result<T> {
    if f.len() != probs.len() {
        return Err(invalid("observable and probabilities differ in length"));
    }
    if let Some(x) = f.iter().find(|&&x| !(x >= T::zero())) {
        return Err(invalid(format!(
            "entropy needs a nonnegative observable, found {x}"
        )));
    }
    let mean = pairwise_sum(
        &f.iter()
            .zip(probs)
            .map(|(&x, &p)| x * p)
            .collect::<Vec<_>>(),
    );
    let flogf = pairwise_sum(
        &f.iter()
            .zip(probs)
            .map(|(&x, &p)| x.xlogx() * p)
            .collect::<Vec<_>>(),
    );
    Ok(flogf - mean.xlogx())
}

/// `∫ Cov_{μ(·|ω_{i^c})}(f(ω_{i^c},·), e^{f(ω_{i^c},·)}) dμ(ω)`.
pub fn covariance_term<T: Scalar>(
    f: &[T],
    site: usize,
    measure: &ConfigurationMeasure<T>,
) -> Result<T> {
    if f.len() != measure.len() {
        return Err(invalid(
            "observable table does not match the configuration space",
        ));
    }
    if site >= measure.n() {
        return Err(invalid(format!("site {site} out of range")));
    }
    let terms: Vec<T> = (0..measure.len())
        .into_par_iter()
        .map(|idx| {
            let p = measure.conditional(idx, site);
            let (mut ef, mut eexp, mut efexp) = (T::zero(), T::zero(), T::zero());
            for (c, &pc) in p.iter().enumerate() {
                let v = f[measure.recolor(idx, site, c)];
                ef = ef + pc * v;
                eexp = eexp + pc * v.exp();
                efexp = efexp + pc * v * v.exp();
            }
            measure.probability(idx) * (efexp - ef * eexp)
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Which log-Sobolev-type inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Inequality {
    /// `Ent(f²) ≤ 2σ1² ∫|𝔡f|²`.
    #[serde(rename = "ent_f_squared")]
    EntropySquare,
    /// `Ent(e^f) ≤ σ2² Σ_i ∫ Cov(f, e^f)`.
    #[serde(rename = "ent_exp_covariance")]
    ExponentialCovariance,
    /// `Ent(e^f) ≤ (σ3²/2) ∫|𝔡f|² e^f`.
    #[serde(rename = "ent_exp_difference")]
    ExponentialDifference,
}

/// Both sides of the three inequalities for one observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalitySides<T = f64> {
    pub lhs: [T; 3],
    pub rhs: [T; 3],
}

/// Evaluates the three inequalities for `f` exactly.
pub fn inequality_sides<T: Scalar>(
    f: &[T],
    measure: &ConfigurationMeasure<T>,
    constants: &LsiConstants<T>,
) -> Result<InequalitySides<T>> {
    let probs = measure.probabilities();
    let diff = difference_operator_table(f, measure);
    let f_sq: Vec<T> = f.iter().map(|&x| x * x).collect();
    let f_exp: Vec<T> = f.iter().map(|&x| x.exp()).collect();
    let ent_sq = entropy_functional(&f_sq, probs)?;
    let ent_exp = entropy_functional(&f_exp, probs)?;
    let dirichlet = measure.expect(&diff);
    let weighted: Vec<T> = diff.iter().zip(&f_exp).map(|(&d, &e)| d * e).collect();
    let dirichlet_exp = measure.expect(&weighted);
    let mut cov = T::zero();
    for i in 0..measure.n() {
        cov = cov + covariance_term(f, i, measure)?;
    }
    Ok(InequalitySides {
        lhs: [ent_sq, ent_exp, ent_exp],
        rhs: [
            T::lit(2.0) * constants.sigma1_sq * dirichlet,
            constants.sigma2_sq * cov,
            constants.sigma3_sq * T::lit(0.5) * dirichlet_exp,
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsiSuiteOptions {
    /// Number of random Gaussian observables.
    pub num_f: usize,
    pub seed: u64,
    pub amplitude: f64,
    pub cap: u128,
}

impl Default for LsiSuiteOptions {
    fn default() -> Self {
        Self {
            num_f: 100,
            seed: 0,
            amplitude: 1.0,
            cap: 1 << 20,
        }
    }
}

/// Worst case of one inequality over all tested observables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityOutcome<T = f64> {
    pub inequality: Inequality,
    /// `min (rhs − lhs)`.
    pub worst_slack: T,
    pub worst_observable: String,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LsiSuiteReport<T = f64> {
    pub n: usize,
    pub q: usize,
    pub alpha: T,
    pub beta: T,
    /// `2qβe^β`.
    pub condition_value: T,
    pub condition_holds: bool,
    pub gamma1: T,
    pub gamma1_floor: T,
    pub norms: MatrixNorms<T>,
    pub constants: LsiConstants<T>,
    pub observables_tested: usize,
    pub outcomes: Vec<InequalityOutcome<T>>,
    pub passed: bool,
}

/// Relative rounding allowance when comparing the two sides; both are sums
/// of `O(q^N)` terms.
const SIDE_ROUNDING: f64 = 1e-12;

/// Checks all three inequalities exhaustively with measured `γ1` and
/// `γ2 = 1 − ‖J‖_{2→2}`, over the structured battery plus `num_f` Gaussian
/// observables.
pub fn verify_lsi_suite<T: Scalar>(
    blocks: &BlockStructure,
    params: &ModelParams<T>,
    options: &LsiSuiteOptions,
) -> Result<LsiSuiteReport<T>> {
    let condition_value = lsi_condition_value(params.q, params.beta);
    if !lsi_condition(params.q, params.beta) {
        return Err(Error::ConditionNotMet(format!(
            "2qβe^β = {} is not below 1 (q={}, β={})",
            condition_value, params.q, params.beta
        )));
    }
    let measure = ConfigurationMeasure::new(blocks, params, ExactOptions { cap: options.cap })?;
    let j = interdependence_from_measure(&measure);
    let norms = matrix_norms(&j);
    let gamma2 = T::one() - norms.two_norm;
    if !(gamma2 > T::zero()) {
        return Err(Error::ConditionNotMet(format!(
            "‖J‖_2→2 = {} leaves no spectral margin at N={}",
            norms.two_norm,
            blocks.n()
        )));
    }
    let gamma1 = gamma1_from_measure(&measure);
    let constants = lsi_constants(gamma1, gamma2)?;

    let mut battery = structured_battery(&measure);
    let amplitude = T::lit(options.amplitude);
    for r in 0..options.num_f {
        battery.push((
            format!("gaussian#{r}"),
            gaussian_observable(measure.len(), amplitude, options.seed, r as u64),
        ));
    }
    let sides: Vec<InequalitySides<T>> = battery
        .iter()
        .map(|(_, f)| inequality_sides(f, &measure, &constants))
        .collect::<Result<_>>()?;

    let kinds = [
        Inequality::EntropySquare,
        Inequality::ExponentialCovariance,
        Inequality::ExponentialDifference,
    ];
    let rounding = T::lit(SIDE_ROUNDING);
    let outcomes: Vec<InequalityOutcome<T>> = kinds
        .iter()
        .enumerate()
        .map(|(m, &inequality)| {
            let mut worst = (T::infinity(), 0usize);
            let mut violations = 0;
            for (o, s) in sides.iter().enumerate() {
                let slack = s.rhs[m] - s.lhs[m];
                if slack < worst.0 {
                    worst = (slack, o);
                }
                if slack < -rounding * T::one().max(s.lhs[m].abs()) {
                    violations += 1;
                }
            }
            InequalityOutcome {
                inequality,
                worst_slack: worst.0,
                worst_observable: battery[worst.1].0.clone(),
                violations,
            }
        })
        .collect();
    let passed = outcomes.iter().all(|o| o.violations == 0);
    Ok(LsiSuiteReport {
        n: blocks.n(),
        q: params.q,
        alpha: params.alpha,
        beta: params.beta,
        condition_value,
        condition_holds: true,
        gamma1,
        gamma1_floor: gamma1_floor(params.q, params.beta),
        norms,
        constants,
        observables_tested: battery.len(),
        outcomes,
        passed,
    })
}

/// `2 exp(−t²/(2|S_k|σ3²))`.
pub fn concentration_bound<T: Scalar>(block_size: usize, sigma3_sq: T, t: T) -> T {
    T::lit(2.0) * (-t * t / (T::lit(2.0) * T::count(block_size as u64) * sigma3_sq)).exp()
}

/// `2 exp(−t²/(2Nγ_kσ3²))`.
pub fn asymptotic_tail_bound<T: Scalar>(n: usize, gamma_k: T, sigma3_sq: T, t: T) -> T {
    T::lit(2.0) * (-t * t / (T::lit(2.0) * T::count(n as u64) * gamma_k * sigma3_sq)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcentrationRow<T = f64> {
    pub t: T,
    pub tail: T,
    /// Binomial standard error of the empirical tail (0 for exact tails).
    pub standard_error: T,
    pub bound: T,
    pub asymptotic_bound: T,
    pub flagged: bool,
}

/// Empirical tails of `T_{k,c}` from a chain against the concentration
/// bound; a row is flagged when the tail exceeds the bound by more than
/// three standard errors.
pub fn concentration_report<T: Scalar>(
    summary: &ChainSummary<T>,
    constants: &LsiConstants<T>,
    gamma: &[T],
    k: usize,
    c: usize,
    t_grid: &[T],
) -> Result<Vec<ConcentrationRow<T>>> {
    if gamma.len() != summary.s {
        return Err(invalid("gamma length does not match the chain's blocks"));
    }
    let samples = T::count(summary.len() as u64);
    t_grid
        .iter()
        .map(|&t| {
            let tail = tail_estimate(summary, k, c, t)?;
            let standard_error = (tail * (T::one() - tail) / samples).sqrt();
            let bound = concentration_bound(summary.sizes[k], constants.sigma3_sq, t);
            Ok(ConcentrationRow {
                t,
                tail,
                standard_error,
                bound,
                asymptotic_bound: asymptotic_tail_bound(
                    summary.n(),
                    gamma[k],
                    constants.sigma3_sq,
                    t,
                ),
                flagged: tail > bound + T::lit(3.0) * standard_error,
            })
        })
        .collect()
}

/// Exact tails `μ_N(|T_{k,c} − μ_N(T_{k,c})| ≥ t)` against the bound.
pub fn exact_concentration_report<T: Scalar>(
    dist: &ExactDistribution<T>,
    constants: &LsiConstants<T>,
    k: usize,
    c: usize,
    t_grid: &[T],
) -> Result<Vec<ConcentrationRow<T>>> {
    let law = crate::exact::exact_observable_distribution(dist, k, c)?;
    let mean: T = law.iter().map(|(&b, &p)| T::count(b as u64) * p).sum();
    let blocks = dist.blocks();
    let gamma_k = dist.params().gamma[k];
    Ok(t_grid
        .iter()
        .map(|&t| {
            let tail: T = law
                .iter()
                .filter(|(&b, _)| (T::count(b as u64) - mean).abs() >= t)
                .map(|(_, &p)| p)
                .sum();
            let bound = concentration_bound(blocks.size(k), constants.sigma3_sq, t);
            ConcentrationRow {
                t,
                tail,
                standard_error: T::zero(),
                bound,
                asymptotic_bound: asymptotic_tail_bound(
                    blocks.n(),
                    gamma_k,
                    constants.sigma3_sq,
                    t,
                ),
                flagged: tail > bound * (T::one() + T::lit(SIDE_ROUNDING)),
            }
        })
        .collect())
}

/// Least-squares fit of `y ≈ L + c/N`; returns `(L, c)`.
pub fn fit_inverse_n<T: Scalar>(points: &[(usize, T)]) -> Result<(T, T)> {
    if points.len() < 2 {
        return Err(invalid("fit needs at least two sizes"));
    }
    let m = T::count(points.len() as u64);
    let xs: Vec<T> = points
        .iter()
        .map(|&(n, _)| T::one() / T::count(n as u64))
        .collect();
    let mx = xs.iter().copied().sum::<T>() / m;
    let my = points.iter().map(|p| p.1).sum::<T>() / m;
    let sxx: T = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    if sxx == T::zero() {
        return Err(invalid("fit needs at least two distinct sizes"));
    }
    let sxy: T = xs
        .iter()
        .zip(points)
        .map(|(&x, p)| (x - mx) * (p.1 - my))
        .sum();
    let c = sxy / sxx;
    Ok((my - c * mx, c))
}

/// Softmax conditional for explicit leave-one-out counts (own block `x`,
/// other blocks aggregated `y`).
pub fn conditional_from_counts<T: Scalar>(
    x: &[u32],
    y: &[u32],
    params: &ModelParams<T>,
    n: usize,
) -> Vec<T> {
    let mut f = vec![T::zero(); params.q];
    field_base(x, y, params, T::count(n as u64), &mut f);
    softmax(&f)
}
