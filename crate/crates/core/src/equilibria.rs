//! Maximizers of the free energy `G` on `C(γ)`.
//!
//! Any maximizer has strictly positive entries, rows ordered the same way
//! (for `α > 0`), and at most two distinct values per row. The search
//! therefore runs on the two-column manifold: `r` columns equal to `μ⁺` and
//! `q−r` columns equal to `μ⁻ = (γ − rμ⁺)/(q−r)`, which has dimension `s` for
//! each `r`. A mirror ascent over the full matrix runs alongside as a safety
//! net.
//!
//! For equal block proportions the maximizers are known in closed form via
//! the reduced Potts functional with coupling `g = (β+(s−1)α)/s`:
//! the uniform matrix `Q` below `ζ_q = 2(q−1)/(q−2)·log(q−1)`, the `q`
//! colour-permuted matrices `ν^i` built from the largest root `u(g)` of
//! `u = (1−e^{−gu})/(1+(q−1)e^{−gu})` above it, and all of them at `g = ζ_q`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{DistributionMatrix, ModelParams, Normalization};
use crate::rate::{free_energy_g, free_energy_unchecked, gradient_g};
use crate::rng::{stream_rng, SimRng};
use crate::scalar::Scalar;

/// `|g − ζ_q|` at or below this is reported as critical.
pub const PHASE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Subcritical,
    Critical,
    Supercritical,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Subcritical => "SUBCRITICAL",
            Phase::Critical => "CRITICAL",
            Phase::Supercritical => "SUPERCRITICAL",
        })
    }
}

/// Point of the two-column manifold: `r` large columns equal to `mu_plus`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoColumnPoint<T = f64> {
    pub r: usize,
    pub mu_plus: Vec<T>,
}

impl<T: Scalar> TwoColumnPoint<T> {
    /// `μ⁻ = (γ − rμ⁺)/(q−r)`.
    pub fn mu_minus(&self, params: &ModelParams<T>) -> Vec<T> {
        let (r, q) = (T::count(self.r as u64), T::count(params.q as u64));
        self.mu_plus
            .iter()
            .zip(&params.gamma)
            .map(|(&p, &g)| (g - r * p) / (q - r))
            .collect()
    }

    /// Increasingly ordered matrix: `q−r` minus columns, then `r` plus columns.
    pub fn to_matrix(&self, params: &ModelParams<T>) -> DistributionMatrix<T> {
        two_column_matrix(&self.mu_plus, self.r, params)
    }

    /// `μ⁺_k > γ_k/q > μ⁻_k > 0` for every block.
    pub fn is_strict(&self, params: &ModelParams<T>) -> bool {
        let q = T::count(params.q as u64);
        let minus = self.mu_minus(params);
        (0..params.s).all(|k| {
            let mid = params.gamma[k] / q;
            self.mu_plus[k] > mid && mid > minus[k] && minus[k] > T::zero()
        })
    }
}

/// See [`TwoColumnPoint::to_matrix`].
pub fn two_column_matrix<T: Scalar>(
    mu_plus: &[T],
    r: usize,
    params: &ModelParams<T>,
) -> DistributionMatrix<T> {
    let (s, q) = (params.s, params.q);
    let (rr, qq) = (T::count(r as u64), T::count(q as u64));
    let mut entries = Vec::with_capacity(s * q);
    for k in 0..s {
        let minus = (params.gamma[k] - rr * mu_plus[k]) / (qq - rr);
        entries.extend(std::iter::repeat_n(minus, q - r));
        entries.extend(std::iter::repeat_n(mu_plus[k], r));
    }
    DistributionMatrix::new(s, q, entries, Normalization::Block).expect("shape is s×q")
}

/// Residuals of the critical equations, row-major:
/// `β(μ_kc − γ_k/q) + α Σ_{k'≠k}(μ_k'c − γ_k'/q) − log(μ_kc / (∏_d μ_kd)^{1/q})`.
pub fn critical_residual<T: Scalar>(
    mu: &DistributionMatrix<T>,
    params: &ModelParams<T>,
) -> Result<Vec<T>> {
    let (s, q) = (params.s, params.q);
    if mu.s() != s || mu.q() != q {
        return Err(invalid("matrix shape does not match the model"));
    }
    if let Some(x) = mu.entries().iter().find(|&&x| !(x > T::zero())) {
        return Err(Error::Domain(format!(
            "critical equations need positive entries, found {x}"
        )));
    }
    let qq = T::count(q as u64);
    let centred: Vec<T> = (0..s)
        .flat_map(|k| (0..q).map(move |c| (k, c)))
        .map(|(k, c)| mu.get(k, c) - params.gamma[k] / qq)
        .collect();
    let col_sums: Vec<T> = (0..q)
        .map(|c| (0..s).map(|k| centred[k * q + c]).sum())
        .collect();
    let mut out = Vec::with_capacity(s * q);
    for k in 0..s {
        let mean_log: T = mu.row(k).iter().map(|x| x.ln()).sum::<T>() / qq;
        for c in 0..q {
            let own = centred[k * q + c];
            let coupling = params.beta * own + params.alpha * (col_sums[c] - own);
            out.push(coupling - (mu.get(k, c).ln() - mean_log));
        }
    }
    Ok(out)
}

fn max_abs<T: Scalar>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

/// `ζ_q = 2(q−1)/(q−2) · log(q−1)`.
pub fn critical_temperature<T: Scalar>(q: usize) -> Result<T> {
    if q < 3 {
        return Err(invalid(format!(
            "critical temperature needs q >= 3, got {q}"
        )));
    }
    let qq = T::count(q as u64);
    let one = T::one();
    Ok(T::lit(2.0) * (qq - one) / (qq - T::lit(2.0)) * (qq - one).ln())
}

/// Right-hand side of the fixed-point equation, `(1−e^{−gu})/(1+(q−1)e^{−gu})`.
pub fn potts_map<T: Scalar>(u: T, g: T, q: usize) -> T {
    let e = (-g * u).exp();
    (T::one() - e) / (T::one() + T::count(q as u64 - 1) * e)
}

const ROOT_GRID: usize = 10_000;

/// All roots of `potts_map(u) = u` in `[1e-12, 1−1e-12]`, ascending.
///
/// Sign changes are located on a uniform grid and each bracket is bisected
/// to width `1e-14`. The equation can have one to three roots, and Newton
/// started from a poor guess misses the largest one.
pub fn potts_fixed_point_roots<T: Scalar>(g: T, q: usize) -> Vec<T> {
    let f = |u: T| potts_map(u, g, q) - u;
    let lo = T::lit(1e-12);
    let hi = T::one() - T::lit(1e-12);
    let span = hi - lo;
    let mut roots = Vec::new();
    let mut prev_u = lo;
    let mut prev_f = f(lo);
    if prev_f == T::zero() {
        roots.push(prev_u);
    }
    for i in 1..ROOT_GRID {
        let u = lo + span * T::count(i as u64) / T::count(ROOT_GRID as u64 - 1);
        let fu = f(u);
        if fu == T::zero() {
            roots.push(u);
        } else if prev_f != T::zero() && (prev_f < T::zero()) != (fu < T::zero()) {
            roots.push(bisect(&f, prev_u, u, prev_f));
        }
        prev_u = u;
        prev_f = fu;
    }
    roots
}

fn bisect<T: Scalar>(f: &impl Fn(T) -> T, mut a: T, mut b: T, mut fa: T) -> T {
    let width = T::lit(1e-14);
    for _ in 0..200 {
        let mid = (a + b) * T::lit(0.5);
        if b - a <= width || mid == a || mid == b {
            break;
        }
        let fm = f(mid);
        if fm == T::zero() {
            return mid;
        }
        if (fm < T::zero()) == (fa < T::zero()) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    (a + b) * T::lit(0.5)
}

/// `u(g)`: the largest solution of the fixed-point equation, or `0` when no
/// positive solution exists.
pub fn potts_fixed_point_u<T: Scalar>(g: T, q: usize) -> T {
    if !(g > T::zero()) {
        return T::zero();
    }
    potts_fixed_point_roots(g, q)
        .last()
        .copied()
        .unwrap_or(T::zero())
}

/// `φ(t) = ((1+(q−1)t)/(sq), (1−t)/(sq), …, (1−t)/(sq))`.
pub fn phi<T: Scalar>(t: T, q: usize, s: usize) -> Result<Vec<T>> {
    if !(t >= T::zero() && t <= T::one()) {
        return Err(invalid(format!("phi needs t in [0, 1], got {t}")));
    }
    let sq = T::count((s * q) as u64);
    let mut v = vec![(T::one() - t) / sq; q];
    v[0] = (T::one() + T::count(q as u64 - 1) * t) / sq;
    Ok(v)
}

/// `Q` and `ν^1, …, ν^q` for coupling `g` and equal block proportions.
///
/// `ν^i` has every row equal to `φ(u(g))` with coordinates `1` and `i` swapped.
pub fn equilibrium_matrices<T: Scalar>(
    g: T,
    params: &ModelParams<T>,
) -> Result<(DistributionMatrix<T>, Vec<DistributionMatrix<T>>)> {
    if !params.has_uniform_blocks() {
        return Err(Error::Unsupported(
            "closed-form equilibria need equal block proportions".into(),
        ));
    }
    let (q, s) = (params.q, params.s);
    let q_mat = DistributionMatrix::uniform_columns(&params.gamma, q);
    let base = phi(potts_fixed_point_u(g, q), q, s)?;
    let nus = (0..q)
        .map(|i| {
            let mut row = base.clone();
            row.swap(0, i);
            DistributionMatrix::repeated_row(s, &row, Normalization::Block)
        })
        .collect();
    Ok((q_mat, nus))
}

fn check_w_domain<T: Scalar>(x: T, q: usize, r: usize, s: usize) -> Result<()> {
    if r == 0 || r >= q || s == 0 {
        return Err(invalid(format!(
            "w profile needs 1 <= r < q and s >= 1 (q={q}, r={r}, s={s})"
        )));
    }
    let upper = T::one() / T::count((s * r) as u64);
    if !(x > T::zero() && x < upper) {
        return Err(Error::Domain(format!(
            "w profile defined on (0, 1/(sr)), got {x}"
        )));
    }
    Ok(())
}

/// `w(x) = −((q−r) + q(1−srx)) log((1−srx)/(s(q−r))) − r(1+sqx) log x`.
///
/// Up to constants, `G` at a critical point of the two-column form with
/// equal proportions is `Σ_k w(μ⁺_k)`.
pub fn w_profile<T: Scalar>(x: T, q: usize, r: usize, s: usize) -> Result<T> {
    check_w_domain(x, q, r, s)?;
    let (qq, rr, ss) = (T::count(q as u64), T::count(r as u64), T::count(s as u64));
    let one = T::one();
    let tail = one - ss * rr * x;
    Ok(-((qq - rr) + qq * tail) * (tail / (ss * (qq - rr))).ln()
        - rr * (one + ss * qq * x) * x.ln())
}

/// `w'(x) = srq log((1−srx)/(s(q−r)x)) + r(sqx−1)/(x(1−srx))`.
pub fn w_profile_derivative<T: Scalar>(x: T, q: usize, r: usize, s: usize) -> Result<T> {
    check_w_domain(x, q, r, s)?;
    let (qq, rr, ss) = (T::count(q as u64), T::count(r as u64), T::count(s as u64));
    let tail = T::one() - ss * rr * x;
    Ok(ss * rr * qq * (tail / (ss * (qq - rr) * x)).ln()
        + rr * (ss * qq * x - T::one()) / (x * tail))
}

/// `w''(x) = r(sqx−1)(2srx−1) / (x²(srx−1)²)`.
pub fn w_profile_second_derivative<T: Scalar>(x: T, q: usize, r: usize, s: usize) -> Result<T> {
    check_w_domain(x, q, r, s)?;
    let (qq, rr, ss) = (T::count(q as u64), T::count(r as u64), T::count(s as u64));
    let one = T::one();
    let srx = ss * rr * x;
    Ok(rr * (ss * qq * x - one) * (T::lit(2.0) * srx - one) / (x * x * (srx - one) * (srx - one)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaximizeOptions {
    /// Random restarts per number `r` of large columns.
    pub starts_per_r: usize,
    /// Random restarts of the full-matrix ascent.
    pub full_matrix_starts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    /// Stop once an accepted step moves less than this (max norm).
    pub step_tol: f64,
    /// Stop once the projected gradient norm drops below this.
    pub grad_tol: f64,
    pub phase_tol: f64,
    /// Slack allowed between numerical search and the reported supremum.
    pub margin: f64,
    pub residual_tol: f64,
}

impl Default for MaximizeOptions {
    fn default() -> Self {
        Self {
            starts_per_r: 32,
            full_matrix_starts: 8,
            seed: 0,
            max_iterations: 20_000,
            step_tol: 1e-12,
            grad_tol: 1e-10,
            phase_tol: PHASE_TOL,
            margin: 1e-9,
            residual_tol: 1e-8,
        }
    }
}

/// Classification of the maximizers of `G` on `C(γ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport<T = f64> {
    pub phase: Phase,
    /// `(β+(s−1)α)/s`.
    pub g: T,
    pub zeta_q: T,
    /// Largest root of the Potts fixed-point equation at `g` (0 if none).
    pub u: T,
    pub maximizers: Vec<DistributionMatrix<T>>,
    pub sup_g: T,
    pub residual_max: T,
    /// `true` for the closed-form classification (equal proportions).
    pub certified: bool,
    /// Best value of `G` found by the numerical search.
    pub search_best: T,
    pub method: String,
}

/// Structure checks for a candidate maximizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureCertificate<T = f64> {
    pub residual_max: T,
    pub strictly_positive: bool,
    pub common_order: bool,
    pub two_valued_rows: bool,
}

impl<T: Scalar> StructureCertificate<T> {
    pub fn passes(&self, residual_tol: T) -> bool {
        self.residual_max <= residual_tol
            && self.strictly_positive
            && self.common_order
            && self.two_valued_rows
    }
}

/// Evaluates the positivity, ordering and two-value conditions (tolerance
/// `tol` on value comparisons) plus the critical-equation residual.
pub fn structure_certificate<T: Scalar>(
    mu: &DistributionMatrix<T>,
    params: &ModelParams<T>,
    tol: T,
) -> StructureCertificate<T> {
    let strictly_positive = mu.entries().iter().all(|&x| x > T::zero());
    let residual_max = if strictly_positive {
        critical_residual(mu, params)
            .map(|r| max_abs(&r))
            .unwrap_or(T::infinity())
    } else {
        T::infinity()
    };
    let (s, q) = (mu.s(), mu.q());
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| {
        let ka: Vec<T> = (0..s).map(|k| mu.get(k, a)).collect();
        let kb: Vec<T> = (0..s).map(|k| mu.get(k, b)).collect();
        let sa: T = ka.iter().copied().sum();
        let sb: T = kb.iter().copied().sum();
        sa.partial_cmp(&sb).unwrap_or(std::cmp::Ordering::Equal)
    });
    let common_order = (0..s).all(|k| {
        order
            .windows(2)
            .all(|w| mu.get(k, w[0]) <= mu.get(k, w[1]) + tol)
    });
    let two_valued_rows = (0..s).all(|k| {
        let mut row = mu.row(k).to_vec();
        row.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        row.windows(2).filter(|w| w[1] - w[0] > tol).count() <= 1
    });
    StructureCertificate {
        residual_max,
        strictly_positive,
        common_order,
        two_valued_rows,
    }
}

/// `true` when all rows coincide entrywise within `tol`.
pub fn has_identical_rows<T: Scalar>(mu: &DistributionMatrix<T>, tol: T) -> bool {
    (1..mu.s()).all(|k| {
        mu.row(k)
            .iter()
            .zip(mu.row(0))
            .all(|(&a, &b)| (a - b).abs() <= tol)
    })
}

#[derive(Debug, Clone)]
struct AscentResult<T> {
    point: Vec<T>,
    value: T,
    grad_norm: T,
    converged: bool,
}

struct Manifold<'a, T> {
    params: &'a ModelParams<T>,
    r: usize,
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<'a, T: Scalar> Manifold<'a, T> {
    fn new(params: &'a ModelParams<T>, r: usize) -> Self {
        let (qq, rr) = (T::count(params.q as u64), T::count(r as u64));
        let rel = T::lit(1e-12).max(T::epsilon() * T::lit(64.0));
        let lo = params.gamma.iter().map(|&g| g / qq).collect();
        let hi = params.gamma.iter().map(|&g| g / rr - g * rel).collect();
        Self { params, r, lo, hi }
    }

    fn clamp(&self, x: &mut [T]) {
        for (k, v) in x.iter_mut().enumerate() {
            *v = v.max(self.lo[k]).min(self.hi[k]);
        }
    }

    fn value(&self, x: &[T]) -> T {
        free_energy_unchecked(&two_column_matrix(x, self.r, self.params), self.params)
    }

    /// `∂/∂μ⁺_k = r(∂G/∂μ_{k,+} − ∂G/∂μ_{k,−})`.
    fn gradient(&self, x: &[T]) -> Vec<T> {
        let q = self.params.q;
        let grad = gradient_g(&two_column_matrix(x, self.r, self.params), self.params);
        let rr = T::count(self.r as u64);
        (0..self.params.s)
            .map(|k| rr * (grad[k * q + q - 1] - grad[k * q]))
            .collect()
    }

    fn projected_norm(&self, x: &[T], grad: &[T]) -> T {
        grad.iter()
            .enumerate()
            .map(|(k, &g)| {
                if (x[k] <= self.lo[k] && g < T::zero()) || (x[k] >= self.hi[k] && g > T::zero()) {
                    T::zero()
                } else {
                    g.abs()
                }
            })
            .fold(T::zero(), T::max)
    }

    /// Hessian on the manifold:
    /// `r[A_kl(1+ρ) − δ_kl(1/μ⁺_k + ρ/μ⁻_k)]` with `ρ = r/(q−r)`.
    fn hessian(&self, x: &[T]) -> Vec<T> {
        let s = self.params.s;
        let rr = T::count(self.r as u64);
        let rho = rr / T::count((self.params.q - self.r) as u64);
        let minus = TwoColumnPoint {
            r: self.r,
            mu_plus: x.to_vec(),
        }
        .mu_minus(self.params);
        let mut h = vec![T::zero(); s * s];
        for k in 0..s {
            for l in 0..s {
                let mut v = self.params.coupling(k, l) * (T::one() + rho);
                if k == l {
                    v = v - (T::one() / x[k] + rho / minus[k]);
                }
                h[k * s + l] = rr * v;
            }
        }
        h
    }

    fn ascend(&self, start: Vec<T>, opts: &MaximizeOptions) -> AscentResult<T> {
        let mut x = start;
        self.clamp(&mut x);
        let mut value = self.value(&x);
        let mut grad = self.gradient(&x);
        let mut step = T::lit(1e-2);
        let grad_tol = T::lit(opts.grad_tol);
        let step_tol = T::lit(opts.step_tol);
        for _ in 0..opts.max_iterations {
            if self.projected_norm(&x, &grad) < grad_tol {
                break;
            }
            let mut accepted = false;
            while step > T::lit(1e-20) {
                let mut trial: Vec<T> = x.iter().zip(&grad).map(|(&a, &g)| a + step * g).collect();
                self.clamp(&mut trial);
                let gain: T = grad
                    .iter()
                    .zip(trial.iter().zip(&x))
                    .map(|(&g, (&t, &a))| g * (t - a))
                    .sum();
                let trial_value = self.value(&trial);
                if trial_value >= value + T::lit(1e-4) * gain {
                    let moved = trial
                        .iter()
                        .zip(&x)
                        .fold(T::zero(), |m, (&t, &a)| m.max((t - a).abs()));
                    x = trial;
                    value = trial_value;
                    grad = self.gradient(&x);
                    step = (step * T::lit(2.0)).min(T::lit(10.0));
                    accepted = true;
                    if moved < step_tol {
                        step = T::zero();
                    }
                    break;
                }
                step = step * T::lit(0.5);
            }
            if !accepted || step == T::zero() {
                break;
            }
        }
        self.newton_polish(&mut x, &mut value);
        let grad = self.gradient(&x);
        let grad_norm = self.projected_norm(&x, &grad);
        let converged = grad_norm < grad_tol.max(T::lit(1e-6));
        AscentResult {
            point: x,
            value,
            grad_norm,
            converged,
        }
    }

    /// Newton steps at an interior local maximum (negative definite Hessian).
    fn newton_polish(&self, x: &mut Vec<T>, value: &mut T) {
        let s = self.params.s;
        for _ in 0..30 {
            if x.iter().zip(&self.lo).any(|(&a, &l)| a <= l) {
                return;
            }
            let grad = self.gradient(x);
            let gnorm = max_abs(&grad);
            if gnorm < T::epsilon() {
                return;
            }
            let neg_h: Vec<T> = self.hessian(x).into_iter().map(|v| -v).collect();
            let Some(dir) = cholesky_solve(&neg_h, &grad, s) else {
                return;
            };
            let trial: Vec<T> = x.iter().zip(&dir).map(|(&a, &d)| a + d).collect();
            if trial
                .iter()
                .enumerate()
                .any(|(k, &t)| t <= self.lo[k] || t >= self.hi[k])
            {
                return;
            }
            let new_grad = max_abs(&self.gradient(&trial));
            let new_value = self.value(&trial);
            if !(new_grad < gnorm) || new_value < *value - value.abs() * T::lit(1e-13) {
                return;
            }
            *x = trial;
            *value = new_value;
        }
    }
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major `n×n`).
fn cholesky_solve<T: Scalar>(a: &[T], b: &[T], n: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum = sum - l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > T::zero()) {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum = sum - l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum = sum - l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    Some(x)
}

/// Exponentiated-gradient ascent of `G` over the full matrix in `C(γ)`.
fn mirror_ascent<T: Scalar>(
    params: &ModelParams<T>,
    start: DistributionMatrix<T>,
    opts: &MaximizeOptions,
) -> (DistributionMatrix<T>, T) {
    let (s, q) = (params.s, params.q);
    let qq = T::count(q as u64);
    let mut mu = start;
    let mut value = free_energy_unchecked(&mu, params);
    let mut eta = T::lit(0.1);
    for _ in 0..opts.max_iterations {
        let grad = gradient_g(&mu, params);
        let mut centred = grad.clone();
        for k in 0..s {
            let mean: T = grad[k * q..(k + 1) * q].iter().copied().sum::<T>() / qq;
            for c in 0..q {
                centred[k * q + c] = grad[k * q + c] - mean;
            }
        }
        if max_abs(&centred) < T::lit(opts.grad_tol) {
            break;
        }
        let expected: T = (0..s * q)
            .map(|i| mu.entries()[i] * centred[i] * centred[i])
            .sum();
        let mut accepted = false;
        while eta > T::lit(1e-20) {
            let mut trial = mu.clone();
            for k in 0..s {
                let shift = (0..q)
                    .map(|c| eta * centred[k * q + c])
                    .fold(T::neg_infinity(), T::max);
                let w: Vec<T> = (0..q)
                    .map(|c| mu.get(k, c) * (eta * centred[k * q + c] - shift).exp())
                    .collect();
                let total: T = w.iter().copied().sum();
                for c in 0..q {
                    trial.set(k, c, params.gamma[k] * w[c] / total);
                }
            }
            let trial_value = free_energy_unchecked(&trial, params);
            if trial_value >= value + T::lit(1e-4) * eta * expected {
                let moved = trial.max_abs_diff(&mu);
                mu = trial;
                value = trial_value;
                eta = (eta * T::lit(2.0)).min(T::lit(100.0));
                accepted = moved >= T::lit(opts.step_tol);
                break;
            }
            eta = eta * T::lit(0.5);
        }
        if !accepted {
            break;
        }
    }
    (mu, value)
}

fn dirichlet_row<T: Scalar>(rng: &mut SimRng, q: usize) -> Vec<T> {
    let draws: Vec<f64> = (0..q).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|d| T::lit(d / total)).collect()
}

/// `μ⁺_k = γ_k · mean of the r largest entries of a uniform Dirichlet draw`.
fn random_mu_plus<T: Scalar>(rng: &mut SimRng, params: &ModelParams<T>, r: usize) -> Vec<T> {
    params
        .gamma
        .iter()
        .map(|&g| {
            let mut row = dirichlet_row::<T>(rng, params.q);
            row.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let top: T = row[..r].iter().copied().sum();
            g * top / T::count(r as u64)
        })
        .collect()
}

fn lex_subsets(q: usize, r: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, q: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for c in start..q {
            cur.push(c);
            rec(c + 1, q, r, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, q, r, &mut Vec::new(), &mut out);
    out
}

/// Every placement of the `r` large columns of a two-column point.
fn column_arrangements<T: Scalar>(
    point: &TwoColumnPoint<T>,
    params: &ModelParams<T>,
) -> Vec<DistributionMatrix<T>> {
    let minus = point.mu_minus(params);
    lex_subsets(params.q, point.r)
        .into_iter()
        .map(|plus| {
            let mut entries = Vec::with_capacity(params.s * params.q);
            for k in 0..params.s {
                for c in 0..params.q {
                    entries.push(if plus.contains(&c) {
                        point.mu_plus[k]
                    } else {
                        minus[k]
                    });
                }
            }
            DistributionMatrix::new(params.s, params.q, entries, Normalization::Block).unwrap()
        })
        .collect()
}

struct SearchOutcome<T> {
    structured: Vec<(TwoColumnPoint<T>, AscentResult<T>)>,
    full_best: Option<(DistributionMatrix<T>, T)>,
}

fn numerical_search<T: Scalar>(
    params: &ModelParams<T>,
    opts: &MaximizeOptions,
) -> Result<SearchOutcome<T>> {
    let mut rng = stream_rng(opts.seed, 0);
    let mut jobs: Vec<(usize, Vec<T>)> = Vec::new();
    for r in 1..params.q {
        for _ in 0..opts.starts_per_r {
            jobs.push((r, random_mu_plus(&mut rng, params, r)));
        }
    }
    let full_starts: Vec<DistributionMatrix<T>> = (0..opts.full_matrix_starts)
        .map(|_| {
            let entries = params
                .gamma
                .iter()
                .flat_map(|&g| {
                    dirichlet_row::<T>(&mut rng, params.q)
                        .into_iter()
                        .map(move |x| g * x)
                })
                .collect();
            DistributionMatrix::new(params.s, params.q, entries, Normalization::Block).unwrap()
        })
        .collect();

    let structured: Vec<(TwoColumnPoint<T>, AscentResult<T>)> = jobs
        .into_par_iter()
        .map(|(r, start)| {
            let res = Manifold::new(params, r).ascend(start, opts);
            (
                TwoColumnPoint {
                    r,
                    mu_plus: res.point.clone(),
                },
                res,
            )
        })
        .collect();

    for r in 1..params.q {
        let of_r: Vec<_> = structured.iter().filter(|(p, _)| p.r == r).collect();
        if !of_r.is_empty() && of_r.iter().all(|(_, res)| !res.converged) {
            let (p, best) = of_r
                .iter()
                .max_by(|a, b| a.1.value.partial_cmp(&b.1.value).unwrap())
                .map(|(p, res)| (p, res))
                .unwrap();
            return Err(Error::NonConvergence {
                message: format!(
                    "no two-column ascent with r={r} converged after {} restarts (best projected gradient {})",
                    opts.starts_per_r, best.grad_norm
                ),
                best_value: best.value.as_f64(),
                best_point: p.to_matrix(params).entries().iter().map(|x| x.as_f64()).collect(),
            });
        }
    }

    let full: Vec<(DistributionMatrix<T>, T)> = full_starts
        .into_par_iter()
        .map(|start| mirror_ascent(params, start, opts))
        .collect();
    let full_best = full
        .into_iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    Ok(SearchOutcome {
        structured,
        full_best,
    })
}

fn residual_of<T: Scalar>(mats: &[DistributionMatrix<T>], params: &ModelParams<T>) -> Result<T> {
    let mut worst = T::zero();
    for m in mats {
        worst = worst.max(max_abs(&critical_residual(m, params)?));
    }
    Ok(worst)
}

fn flatten<T: Scalar>(m: &DistributionMatrix<T>) -> Vec<f64> {
    m.entries().iter().map(|x| x.as_f64()).collect()
}

/// Finds and classifies the maximizers of `G` on `C(γ)`.
///
/// Equal proportions: closed-form classification by `g` against `ζ_q`,
/// cross-checked by the numerical search (which must not beat the reported
/// supremum by more than `margin`) and by the critical-equation residual.
/// Unequal proportions: numerical search only, reported with
/// `certified = false`.
pub fn maximize_g<T: Scalar>(
    params: &ModelParams<T>,
    opts: &MaximizeOptions,
) -> Result<EquilibriumReport<T>> {
    let q = params.q;
    let g = params.effective_coupling();
    let zeta_q = critical_temperature::<T>(q)?;
    let u = potts_fixed_point_u(g, q);
    let search = numerical_search(params, opts)?;
    let structured_best = search
        .structured
        .iter()
        .map(|(_, r)| r.value)
        .fold(T::neg_infinity(), T::max);
    let full_value = search.full_best.as_ref().map_or(T::neg_infinity(), |b| b.1);
    let search_best = structured_best.max(full_value);
    let margin = T::lit(opts.margin);
    let residual_tol = T::lit(opts.residual_tol);

    let q_mat = DistributionMatrix::uniform_columns(&params.gamma, q);
    let g_q = free_energy_g(&q_mat, params)?;

    let report = if params.has_uniform_blocks() {
        let (_, nus) = equilibrium_matrices(g, params)?;
        let g_nu = free_energy_g(&nus[0], params)?;
        let phase = if (g - zeta_q).abs() <= T::lit(opts.phase_tol) {
            Phase::Critical
        } else if g < zeta_q {
            Phase::Subcritical
        } else {
            Phase::Supercritical
        };
        let (maximizers, sup_g) = match phase {
            Phase::Subcritical => (vec![q_mat.clone()], g_q),
            Phase::Supercritical => (nus, g_nu),
            Phase::Critical => {
                let mut all = vec![q_mat.clone()];
                all.extend(nus);
                (all, g_q.max(g_nu))
            }
        };
        if search_best > sup_g + margin {
            let best = search
                .full_best
                .as_ref()
                .filter(|b| b.1 >= structured_best)
                .map(|b| flatten(&b.0));
            let best_point = best.unwrap_or_else(|| {
                let (p, _) = search
                    .structured
                    .iter()
                    .max_by(|a, b| a.1.value.partial_cmp(&b.1.value).unwrap())
                    .unwrap();
                flatten(&p.to_matrix(params))
            });
            return Err(Error::NonConvergence {
                message: format!("numerical search found G = {search_best} above the closed-form supremum {sup_g}"),
                best_value: search_best.as_f64(),
                best_point,
            });
        }
        EquilibriumReport {
            phase,
            g,
            zeta_q,
            u,
            residual_max: residual_of(&maximizers, params)?,
            maximizers,
            sup_g,
            certified: true,
            search_best,
            method: "closed form (equal block proportions), checked by two-column and full-matrix ascent".into(),
        }
    } else {
        let tol = T::lit(opts.phase_tol);
        let close = T::lit(1e-7);
        let mut candidates: Vec<(TwoColumnPoint<T>, T)> = search
            .structured
            .iter()
            .filter(|(_, res)| res.converged)
            .map(|(p, res)| (p.clone(), res.value))
            .collect();
        candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let best = candidates.first().map_or(g_q, |c| c.1).max(g_q);
        let is_q = |p: &TwoColumnPoint<T>| {
            p.mu_plus
                .iter()
                .zip(&params.gamma)
                .all(|(&x, &gk)| (x - gk / T::count(q as u64)).abs() <= close)
        };
        let mut distinct: Vec<(TwoColumnPoint<T>, T)> = Vec::new();
        for (p, v) in candidates
            .into_iter()
            .filter(|(p, v)| *v >= best - tol && !is_q(p))
        {
            let m = p.to_matrix(params);
            if !distinct
                .iter()
                .any(|(d, _)| d.r == p.r && d.to_matrix(params).max_abs_diff(&m) <= close)
            {
                distinct.push((p, v));
            }
        }
        distinct.sort_by(|a, b| a.0.r.cmp(&b.0.r).then(b.1.partial_cmp(&a.1).unwrap()));
        let q_is_max = g_q >= best - tol;
        let phase = match (q_is_max, distinct.is_empty()) {
            (true, true) => Phase::Subcritical,
            (true, false) => Phase::Critical,
            (false, _) => Phase::Supercritical,
        };
        let mut maximizers = Vec::new();
        if q_is_max {
            maximizers.push(q_mat.clone());
        }
        for (p, _) in &distinct {
            maximizers.extend(column_arrangements(p, params));
        }
        if full_value > best + margin {
            let (m, v) = search.full_best.as_ref().unwrap();
            return Err(Error::NonConvergence {
                message: "full-matrix ascent beat every two-column candidate".into(),
                best_value: v.as_f64(),
                best_point: flatten(m),
            });
        }
        EquilibriumReport {
            phase,
            g,
            zeta_q,
            u,
            residual_max: residual_of(&maximizers, params)?,
            maximizers,
            sup_g: best,
            certified: false,
            search_best,
            method: "numerical, no closed-form certificate (unequal block proportions)".into(),
        }
    };

    if !(report.residual_max <= residual_tol) {
        return Err(Error::NonConvergence {
            message: format!(
                "critical residual {} exceeds {}",
                report.residual_max, opts.residual_tol
            ),
            best_value: report.sup_g.as_f64(),
            best_point: flatten(&report.maximizers[0]),
        });
    }
    Ok(report)
}

/// Couplings `(α, β)` with `α = ratio·β` realizing the effective coupling `g`.
pub fn couplings_for_g<T: Scalar>(g: T, s: usize, ratio: T) -> (T, T) {
    let ss = T::count(s as u64);
    let beta = g * ss / (T::one() + (ss - T::one()) * ratio);
    (ratio * beta, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate::potts_functional;

    fn uniform(q: usize, s: usize, g: f64) -> ModelParams {
        let (alpha, beta) = couplings_for_g(g, s, 0.5);
        ModelParams::uniform(q, s, alpha, beta).unwrap()
    }

    #[test]
    fn critical_temperature_values() {
        assert!((critical_temperature::<f64>(3).unwrap() - 4.0 * 2f64.ln()).abs() < 1e-15);
        assert!((critical_temperature::<f64>(3).unwrap() - 2.772589).abs() < 1e-6);
        assert!((critical_temperature::<f64>(4).unwrap() - 3.295837).abs() < 1e-6);
        assert!(critical_temperature::<f64>(2).is_err());
        let zs: Vec<f64> = (3..=50).map(|q| critical_temperature(q).unwrap()).collect();
        assert!(zs.windows(2).all(|w| w[1] > w[0]));
        assert!((critical_temperature::<f32>(3).unwrap() - 2.772589).abs() < 1e-5);
    }

    #[test]
    fn fixed_point_small_coupling_is_zero() {
        for g in [1e-6, 0.1, 1.0] {
            assert_eq!(potts_fixed_point_u(g, 3), 0.0);
        }
        assert_eq!(potts_fixed_point_u(0.0, 3), 0.0);
    }

    #[test]
    fn fixed_point_at_critical_coupling() {
        let zeta = critical_temperature::<f64>(3).unwrap();
        let u = potts_fixed_point_u(zeta, 3);
        assert!((u - 0.5).abs() < 1e-6);
        assert!((potts_map(u, zeta, 3) - u).abs() <= 1e-12);
        // Degenerate maxima of the reduced functional at criticality.
        let v_nu: Vec<f64> = phi(u, 3, 1).unwrap();
        let gap = potts_functional(&v_nu, zeta) - potts_functional(&[1.0 / 3.0; 3], zeta);
        assert!(gap.abs() < 1e-8);
    }

    #[test]
    fn fixed_point_above_critical() {
        let u: f64 = potts_fixed_point_u(3.0, 3);
        assert!(u > 0.5);
        assert!((potts_map(u, 3.0, 3) - u).abs() <= 1e-12);
        // Below the critical coupling the nontrivial roots are metastable.
        let roots = potts_fixed_point_roots(2.76, 3);
        assert_eq!(roots.len(), 2);
        assert!(potts_fixed_point_roots(2.7, 3).is_empty());
    }

    #[test]
    fn phi_examples() {
        let v: Vec<f64> = phi(0.0, 3, 2).unwrap();
        assert!(v.iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15));
        let v: Vec<f64> = phi(1.0, 3, 2).unwrap();
        assert_eq!(v, vec![0.5, 0.0, 0.0]);
        for t in [0.1, 0.37, 0.9] {
            let v: Vec<f64> = phi(t, 4, 3).unwrap();
            assert!((v.iter().sum::<f64>() - 1.0 / 3.0).abs() < 1e-15);
            assert!(v.iter().all(|&x| x <= v[0]));
        }
        assert!(phi(1.5_f64, 3, 2).is_err());
        assert!(phi(-0.1_f64, 3, 2).is_err());
    }

    #[test]
    fn equilibrium_matrices_examples() {
        let params = uniform(3, 2, 2.0);
        let (q_mat, nus) = equilibrium_matrices(2.0, &params).unwrap();
        for nu in &nus {
            assert!(nu.max_abs_diff(&q_mat) < 1e-15);
        }
        let params = uniform(3, 2, 3.0);
        let (_, nus) = equilibrium_matrices(3.0, &params).unwrap();
        let values: Vec<f64> = nus
            .iter()
            .map(|n| free_energy_g(n, &params).unwrap())
            .collect();
        for nu in &nus {
            assert!(nu.is_feasible(&params.gamma));
        }
        assert!((values[0] - values[1]).abs() < 1e-12 && (values[0] - values[2]).abs() < 1e-12);
        let skewed = ModelParams::new(3, 2, 0.5, 1.0, vec![0.3, 0.7]).unwrap();
        assert!(matches!(
            equilibrium_matrices(3.0, &skewed),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn residual_vanishes_at_uniform() {
        let params = uniform(4, 3, 2.0);
        let q_mat = DistributionMatrix::uniform_columns(&params.gamma, 4);
        assert!(max_abs(&critical_residual(&q_mat, &params).unwrap()) < 1e-15);
        let mut zero = q_mat.clone();
        zero.set(0, 0, 0.0);
        assert!(matches!(
            critical_residual(&zero, &params),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn residual_rows_agree_for_identical_rows() {
        let params = uniform(3, 3, 2.0);
        let row = [0.2 / 3.0, 0.5 / 3.0, 0.3 / 3.0];
        let mu = DistributionMatrix::repeated_row(3, &row, Normalization::Block);
        let res = critical_residual(&mu, &params).unwrap();
        for k in 1..3 {
            for c in 0..3 {
                assert!((res[k * 3 + c] - res[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn w_profile_critical_point_and_blow_up() {
        for (q, r, s) in [(3, 1, 2), (5, 2, 3), (4, 3, 1)] {
            let x0 = 1.0 / (s * q) as f64;
            assert!(w_profile_derivative(x0, q, r, s).unwrap().abs() < 1e-12);
            let edge = 1.0 / (s * r) as f64;
            let near = w_profile(edge * (1.0 - 1e-9), q, r, s).unwrap();
            let far = w_profile(edge * (1.0 - 1e-3), q, r, s).unwrap();
            assert!(near > far && near > 10.0);
        }
        assert!(matches!(w_profile(0.6_f64, 3, 1, 2), Err(Error::Domain(_))));
        assert!(w_profile(0.1_f64, 3, 3, 2).is_err());
    }

    #[test]
    fn w_profile_inflections_by_finite_differences() {
        // q > 2r: inflection at 1/(sq) and a sign change of w'' at 1/(2sr).
        let (q, r, s) = (5, 1, 2);
        let h = 1e-4;
        let second = |x: f64| {
            (w_profile(x + h, q, r, s).unwrap() - 2.0 * w_profile(x, q, r, s).unwrap()
                + w_profile(x - h, q, r, s).unwrap())
                / (h * h)
        };
        let x0 = 1.0 / (s * q) as f64;
        assert!(second(x0).abs() < 1e-3);
        assert!(w_profile_second_derivative(x0, q, r, s).unwrap().abs() < 1e-12);
        let x1 = 1.0 / (2 * s * r) as f64;
        assert!(second(x1 - 0.01) * second(x1 + 0.01) < 0.0);
        for x in [0.05, 0.15, 0.2, 0.3, 0.4] {
            let analytic = w_profile_second_derivative(x, q, r, s).unwrap();
            assert!((second(x) - analytic).abs() < 1e-4 * analytic.abs().max(1.0));
        }
    }

    #[test]
    fn cholesky_solves_small_system() {
        let a = [4.0, 1.0, 1.0, 3.0];
        let x: Vec<f64> = cholesky_solve(&a, &[1.0, 2.0], 2).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-15);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-15);
        assert!(cholesky_solve(&[-1.0], &[1.0], 1).is_none());
    }

    #[test]
    fn manifold_gradient_matches_finite_differences() {
        let params: ModelParams = ModelParams::new(4, 2, 0.8, 2.5, vec![0.35, 0.65]).unwrap();
        let m = Manifold::new(&params, 2);
        let x = vec![0.12, 0.25];
        let grad = m.gradient(&x);
        let hess = m.hessian(&x);
        let h = 1e-6;
        for k in 0..2 {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (m.value(&up) - m.value(&dn)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-7);
            let gu = m.gradient(&up);
            let gd = m.gradient(&dn);
            for l in 0..2 {
                let fd2 = (gu[l] - gd[l]) / (2.0 * h);
                assert!((fd2 - hess[l * 2 + k]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn subcritical_report() {
        let report = maximize_g(&uniform(3, 2, 2.5), &MaximizeOptions::default()).unwrap();
        assert_eq!(report.phase, Phase::Subcritical);
        assert_eq!(report.maximizers.len(), 1);
        assert!(report.certified);
        assert!(report.residual_max <= 1e-8);
    }

    #[test]
    fn nonuniform_search_is_flagged() {
        let params = ModelParams::new(3, 2, 1.5, 4.0, vec![0.4, 0.6]).unwrap();
        let report = maximize_g(
            &params,
            &MaximizeOptions {
                starts_per_r: 8,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!report.certified);
        assert_eq!(report.phase, Phase::Supercritical);
        assert_eq!(report.maximizers.len(), 3);
        for m in &report.maximizers {
            assert!(structure_certificate(m, &params, 1e-9).passes(1e-8));
        }
    }

    #[test]
    fn couplings_realize_g() {
        let (a, b): (f64, f64) = couplings_for_g(2.5, 2, 0.5);
        let p: ModelParams = ModelParams::uniform(3, 2, a, b).unwrap();
        assert!((p.effective_coupling() - 2.5).abs() < 1e-15);
    }
}
