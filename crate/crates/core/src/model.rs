//! Model constants, configurations and the sufficient statistic.
//!
//! Sites are split into `s` contiguous blocks. Two sites in the same block
//! interact with strength `beta`, sites in different blocks with `alpha`, and
//! the energy of a configuration is
//!
//! ```text
//! H(ω) = −(β/2N) #{ordered intra-block pairs (i, j) with ω_i = ω_j}
//!        −(α/2N) #{ordered inter-block pairs (i, j) with ω_i = ω_j}
//! ```
//!
//! where the intra-block count includes the diagonal `i = j`. That diagonal
//! contributes the constant `β/2` and must stay in: it is what makes the energy
//! equal to the quadratic form `−(1/2N) tr(BᵗAB)` of the count matrix `B`.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Row sums of a [`DistributionMatrix`] must match their target within this.
pub const FEASIBILITY_TOL: f64 = 1e-10;

/// Tolerance on `Σ γ_k = 1` and on the uniform-block test.
pub const PROPORTION_TOL: f64 = 1e-12;

/// Model constants `(q, s, α, β, γ)`.
///
/// Couplings must satisfy `0 ≤ α ≤ β`. The structure results for maximizers
/// (common ordering of rows in particular) need the strict regime `0 < α < β`;
/// see [`ModelParams::is_strict_regime`]. The degenerate cases `α = β` and
/// `α = β = 0` are admitted because they are the natural oracles
/// (Curie–Weiss Potts, product measure).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T = f64> {
    pub q: usize,
    pub s: usize,
    pub alpha: T,
    pub beta: T,
    pub gamma: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(q: usize, s: usize, alpha: T, beta: T, gamma: Vec<T>) -> Result<Self> {
        if q < 3 {
            return Err(invalid(format!("q must be at least 3, got {q}")));
        }
        if q > u8::MAX as usize {
            return Err(invalid(format!("q must be at most {}, got {q}", u8::MAX)));
        }
        if s < 1 {
            return Err(invalid("s must be at least 1"));
        }
        if !(alpha.is_finite() && beta.is_finite()) {
            return Err(invalid("couplings must be finite"));
        }
        if alpha < T::zero() || beta < T::zero() {
            return Err(invalid(format!(
                "couplings must be non-negative, got alpha={alpha}, beta={beta}"
            )));
        }
        if alpha > beta {
            return Err(invalid(format!(
                "need alpha <= beta, got alpha={alpha}, beta={beta}"
            )));
        }
        if gamma.len() != s {
            return Err(invalid(format!(
                "gamma has {} entries, expected s={s}",
                gamma.len()
            )));
        }
        let upper = if s == 1 {
            T::one()
        } else {
            T::one() - T::epsilon()
        };
        if gamma.iter().any(|&g| !(g > T::zero() && g <= upper)) {
            return Err(invalid("each gamma_k must lie in (0, 1)"));
        }
        let total: T = gamma.iter().copied().sum();
        if (total - T::one()).abs().as_f64()
            > PROPORTION_TOL.max(4.0 * T::epsilon().as_f64() * s as f64)
        {
            return Err(invalid(format!("gamma must sum to 1, sums to {total}")));
        }
        Ok(Self {
            q,
            s,
            alpha,
            beta,
            gamma,
        })
    }

    /// Parameters with equal proportions `γ_k = 1/s`.
    pub fn uniform(q: usize, s: usize, alpha: T, beta: T) -> Result<Self> {
        let g = T::one() / T::count(s as u64);
        Self::new(q, s, alpha, beta, vec![g; s])
    }

    /// Parameters whose proportions are the finite-N block fractions `|S_k|/N`.
    pub fn from_blocks(q: usize, alpha: T, beta: T, blocks: &BlockStructure) -> Result<Self> {
        Self::new(q, blocks.s(), alpha, beta, blocks.proportions())
    }

    /// Entry `A_{k,k'}` of the block interaction matrix.
    #[inline]
    pub fn coupling(&self, k: usize, other: usize) -> T {
        if k == other {
            self.beta
        } else {
            self.alpha
        }
    }

    /// `g = (β + (s−1)α)/s`, the coupling of the reduced Potts problem.
    pub fn effective_coupling(&self) -> T {
        (self.beta + T::count(self.s as u64 - 1) * self.alpha) / T::count(self.s as u64)
    }

    pub fn has_uniform_blocks(&self) -> bool {
        let target = T::one() / T::count(self.s as u64);
        let tol = PROPORTION_TOL.max(8.0 * T::epsilon().as_f64());
        self.gamma
            .iter()
            .all(|&g| (g - target).abs().as_f64() <= tol)
    }

    /// `0 < α < β`, the regime in which every structure lemma applies.
    pub fn is_strict_regime(&self) -> bool {
        self.alpha > T::zero() && self.alpha < self.beta
    }

    pub fn with_couplings(&self, alpha: T, beta: T) -> Result<Self> {
        Self::new(self.q, self.s, alpha, beta, self.gamma.clone())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            q: self.q,
            s: self.s,
            alpha: U::lit(self.alpha.as_f64()),
            beta: U::lit(self.beta.as_f64()),
            gamma: self.gamma.iter().map(|g| U::lit(g.as_f64())).collect(),
        }
    }
}

/// Concrete block sizes `|S_k|` in the canonical contiguous layout: the first
/// `|S_1|` sites form block 0, the next `|S_2|` block 1, and so on.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(invalid("at least one block is required"));
        }
        if sizes.contains(&0) {
            return Err(invalid("block sizes must be positive"));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for &n in &sizes {
            offsets.push(offsets.last().unwrap() + n);
        }
        Ok(Self { sizes, offsets })
    }

    /// `s` blocks of `per_block` sites each.
    pub fn uniform(s: usize, per_block: usize) -> Result<Self> {
        Self::new(vec![per_block; s])
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size(&self, k: usize) -> usize {
        self.sizes[k]
    }

    pub fn s(&self) -> usize {
        self.sizes.len()
    }

    /// Total number of sites `N`.
    pub fn n(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Block containing `site` (0-based), via the prefix sums.
    #[inline]
    pub fn block_of(&self, site: usize) -> usize {
        debug_assert!(site < self.n());
        self.offsets.partition_point(|&o| o <= site) - 1
    }

    /// Site range of block `k`.
    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    /// Block fractions `|S_k| / N`.
    pub fn proportions<T: Scalar>(&self) -> Vec<T> {
        let n = T::count(self.n() as u64);
        self.sizes.iter().map(|&m| T::count(m as u64) / n).collect()
    }

    /// Per-site block labels; convenient for hot loops over many configurations.
    pub fn site_blocks(&self) -> Vec<usize> {
        (0..self.s())
            .flat_map(|k| std::iter::repeat_n(k, self.sizes[k]))
            .collect()
    }
}

/// A colouring `ω` of the sites. Colours are stored 0-based; the 1-based
/// external form is produced by [`SpinConfig::to_one_based`] and serde.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfig {
    q: usize,
    colors: Vec<u8>,
}

impl SpinConfig {
    /// Builds a configuration from 0-based colours.
    pub fn new(colors: Vec<u8>, q: usize) -> Result<Self> {
        if let Some(&c) = colors.iter().find(|&&c| c as usize >= q) {
            return Err(invalid(format!(
                "colour {c} out of range for q={q} (0-based)"
            )));
        }
        Ok(Self { q, colors })
    }

    /// Builds a configuration from 1-based colours `1..=q`.
    pub fn from_one_based(colors: &[usize], q: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(colors.len());
        for &c in colors {
            if c == 0 || c > q {
                return Err(invalid(format!("colour {c} out of range 1..={q}")));
            }
            out.push((c - 1) as u8);
        }
        Ok(Self { q, colors: out })
    }

    /// Every site carries colour `color` (0-based).
    pub fn constant(n: usize, color: u8, q: usize) -> Result<Self> {
        Self::new(vec![color; n], q)
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.colors.iter().map(|&c| c as usize + 1).collect()
    }

    pub fn colors(&self) -> &[u8] {
        &self.colors
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn get(&self, site: usize) -> u8 {
        self.colors[site]
    }

    pub fn set(&mut self, site: usize, color: u8) {
        debug_assert!((color as usize) < self.q);
        self.colors[site] = color;
    }

    fn check_against(&self, blocks: &BlockStructure) -> Result<()> {
        if self.colors.len() != blocks.n() {
            return Err(invalid(format!(
                "configuration has {} sites, block structure has N={}",
                self.colors.len(),
                blocks.n()
            )));
        }
        Ok(())
    }
}

impl Serialize for SpinConfig {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_one_based().serialize(serializer)
    }
}

/// The `s × q` matrix `b_{k,c} = #{i ∈ S_k : ω_i = c}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CountMatrix {
    s: usize,
    q: usize,
    counts: Vec<u32>,
}

impl CountMatrix {
    /// Wraps row-major counts; checks only the shape.
    pub fn from_counts(s: usize, q: usize, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != s * q {
            return Err(invalid(format!(
                "expected {} counts, got {}",
                s * q,
                counts.len()
            )));
        }
        Ok(Self { s, q, counts })
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let s = rows.len();
        let q = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != q) {
            return Err(invalid("ragged count rows"));
        }
        Self::from_counts(s, q, rows.concat())
    }

    pub fn zeros(s: usize, q: usize) -> Self {
        Self {
            s,
            q,
            counts: vec![0; s * q],
        }
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn get(&self, k: usize, c: usize) -> u32 {
        self.counts[k * self.q + c]
    }

    pub fn row(&self, k: usize) -> &[u32] {
        &self.counts[k * self.q..(k + 1) * self.q]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }

    #[inline]
    pub(crate) fn add(&mut self, k: usize, c: usize, delta: i64) {
        let slot = &mut self.counts[k * self.q + c];
        *slot = (*slot as i64 + delta) as u32;
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.s)
            .map(|k| self.row(k).iter().map(|&b| b as u64).sum())
            .collect()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        (0..self.q)
            .map(|c| (0..self.s).map(|k| self.get(k, c) as u64).sum())
            .collect()
    }

    /// `true` when row `k` sums to `|S_k|` for every block.
    pub fn matches(&self, blocks: &BlockStructure) -> bool {
        self.s == blocks.s()
            && self
                .row_sums()
                .iter()
                .zip(blocks.sizes())
                .all(|(&r, &n)| r == n as u64)
    }

    /// Row-normalized magnetization matrix `M_N` (`m_{k,c} = b_{k,c}/|S_k|`).
    pub fn magnetization<T: Scalar>(&self, blocks: &BlockStructure) -> DistributionMatrix<T> {
        let entries = (0..self.s)
            .flat_map(|k| {
                let n = T::count(blocks.size(k) as u64);
                self.row(k).iter().map(move |&b| T::count(b as u64) / n)
            })
            .collect();
        DistributionMatrix {
            s: self.s,
            q: self.q,
            entries,
            normalization: Normalization::Row,
        }
    }

    /// `M'_N` with entries `b_{k,c}/N`, an element of `C(|S_k|/N)`.
    pub fn scaled_magnetization<T: Scalar>(
        &self,
        blocks: &BlockStructure,
    ) -> DistributionMatrix<T> {
        let n = T::count(blocks.n() as u64);
        let entries = self
            .counts
            .iter()
            .map(|&b| T::count(b as u64) / n)
            .collect();
        DistributionMatrix {
            s: self.s,
            q: self.q,
            entries,
            normalization: Normalization::Block,
        }
    }
}

/// Which row constraint a [`DistributionMatrix`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Each row is a probability vector (domain of `I` and `J`).
    Row,
    /// Row `k` sums to `γ_k` (the set `C(γ)`, domain of `J'` and `G`).
    Block,
}

/// An `s × q` real matrix with a row-sum tag.
///
/// Construction only checks the shape, so infeasible matrices can be
/// represented and handed to the rate functions, which map them to the
/// infeasible sentinel. Use [`DistributionMatrix::check`] to validate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionMatrix<T = f64> {
    s: usize,
    q: usize,
    entries: Vec<T>,
    normalization: Normalization,
}

impl<T: Scalar> DistributionMatrix<T> {
    pub fn new(s: usize, q: usize, entries: Vec<T>, normalization: Normalization) -> Result<Self> {
        if entries.len() != s * q {
            return Err(invalid(format!(
                "expected {} entries, got {}",
                s * q,
                entries.len()
            )));
        }
        Ok(Self {
            s,
            q,
            entries,
            normalization,
        })
    }

    pub fn from_rows(rows: &[Vec<T>], normalization: Normalization) -> Result<Self> {
        let s = rows.len();
        let q = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != q) {
            return Err(invalid("ragged matrix rows"));
        }
        Self::new(s, q, rows.concat(), normalization)
    }

    /// The matrix with every row equal to `row`.
    pub fn repeated_row(s: usize, row: &[T], normalization: Normalization) -> Self {
        let entries = (0..s).flat_map(|_| row.iter().copied()).collect();
        Self {
            s,
            q: row.len(),
            entries,
            normalization,
        }
    }

    /// The block-normalized matrix with columns all equal to `γ/q`.
    pub fn uniform_columns(gamma: &[T], q: usize) -> Self {
        let qq = T::count(q as u64);
        let entries = gamma
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g / qq, q))
            .collect();
        Self {
            s: gamma.len(),
            q,
            entries,
            normalization: Normalization::Block,
        }
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    #[inline]
    pub fn get(&self, k: usize, c: usize) -> T {
        self.entries[k * self.q + c]
    }

    #[inline]
    pub fn set(&mut self, k: usize, c: usize, value: T) {
        self.entries[k * self.q + c] = value;
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.entries[k * self.q..(k + 1) * self.q]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<T> {
        self.entries
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        (0..self.s).map(|k| self.row(k).to_vec()).collect()
    }

    /// Target sum of row `k` under this matrix's normalization.
    pub fn row_target(&self, k: usize, gamma: &[T]) -> T {
        match self.normalization {
            Normalization::Row => T::one(),
            Normalization::Block => gamma[k],
        }
    }

    /// Validates non-negativity and the row constraint (within
    /// [`FEASIBILITY_TOL`]).
    pub fn check(&self, gamma: &[T]) -> Result<()> {
        if gamma.len() != self.s {
            return Err(invalid(format!(
                "gamma has {} entries, matrix has {} rows",
                gamma.len(),
                self.s
            )));
        }
        if let Some(x) = self
            .entries
            .iter()
            .find(|x| !(x.is_finite() && **x >= T::zero()))
        {
            return Err(invalid(format!(
                "entries must be finite and non-negative, found {x}"
            )));
        }
        let tol = T::lit(FEASIBILITY_TOL);
        for k in 0..self.s {
            let sum: T = self.row(k).iter().copied().sum();
            let target = self.row_target(k, gamma);
            if (sum - target).abs() > tol {
                return Err(invalid(format!("row {k} sums to {sum}, expected {target}")));
            }
        }
        Ok(())
    }

    pub fn is_feasible(&self, gamma: &[T]) -> bool {
        self.check(gamma).is_ok()
    }

    /// Rescales every row to hit its target sum exactly.
    pub fn renormalized(&self, gamma: &[T]) -> Self {
        let mut out = self.clone();
        for k in 0..self.s {
            let sum: T = self.row(k).iter().copied().sum();
            let factor = self.row_target(k, gamma) / sum;
            for c in 0..self.q {
                out.entries[k * self.q + c] = self.get(k, c) * factor;
            }
        }
        out
    }

    /// `Γν`: scales row `k` by `γ_k`, turning a row-stochastic matrix into an
    /// element of `C(γ)`.
    pub fn to_block(&self, gamma: &[T]) -> Self {
        let mut out = self.clone();
        for k in 0..self.s {
            for c in 0..self.q {
                out.entries[k * self.q + c] = self.get(k, c) * gamma[k];
            }
        }
        out.normalization = Normalization::Block;
        out
    }

    /// Inverse of [`DistributionMatrix::to_block`].
    pub fn to_row(&self, gamma: &[T]) -> Self {
        let mut out = self.clone();
        for k in 0..self.s {
            for c in 0..self.q {
                out.entries[k * self.q + c] = self.get(k, c) / gamma[k];
            }
        }
        out.normalization = Normalization::Row;
        out
    }

    /// Same matrix with column `c` moved to position `perm[c]` in every row.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        for k in 0..self.s {
            for c in 0..self.q {
                out.entries[k * self.q + perm[c]] = self.get(k, c);
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> DistributionMatrix<U> {
        DistributionMatrix {
            s: self.s,
            q: self.q,
            entries: self.entries.iter().map(|x| U::lit(x.as_f64())).collect(),
            normalization: self.normalization,
        }
    }
}

/// Counts colours per block.
pub fn count_matrix(config: &SpinConfig, blocks: &BlockStructure) -> Result<CountMatrix> {
    config.check_against(blocks)?;
    let mut counts = CountMatrix::zeros(blocks.s(), config.q());
    for k in 0..blocks.s() {
        for site in blocks.range(k) {
            counts.counts[k * config.q() + config.get(site) as usize] += 1;
        }
    }
    Ok(counts)
}

/// Energy by explicit enumeration of ordered site pairs (diagonal included).
///
/// `O(N²)`; serves as the reference for [`hamiltonian_quadratic`].
pub fn hamiltonian_direct<T: Scalar>(
    config: &SpinConfig,
    blocks: &BlockStructure,
    params: &ModelParams<T>,
) -> Result<T> {
    config.check_against(blocks)?;
    let site_block = blocks.site_blocks();
    let colors = config.colors();
    let (mut intra, mut inter) = (0u64, 0u64);
    for i in 0..colors.len() {
        for j in 0..colors.len() {
            if colors[i] == colors[j] {
                if site_block[i] == site_block[j] {
                    intra += 1;
                } else {
                    inter += 1;
                }
            }
        }
    }
    let two_n = T::count(2 * blocks.n() as u64);
    Ok(-(params.beta * T::count(intra) + params.alpha * T::count(inter)) / two_n)
}

/// Energy as the quadratic form `−(1/2N) tr(BᵗAB)` of the count matrix.
pub fn hamiltonian_quadratic<T: Scalar>(
    counts: &CountMatrix,
    params: &ModelParams<T>,
    blocks: &BlockStructure,
) -> Result<T> {
    if counts.s() != blocks.s() || counts.s() != params.s || counts.q() != params.q {
        return Err(invalid("count matrix shape does not match the model"));
    }
    let (diag, off) = quadratic_parts(counts);
    let two_n = T::count(2 * blocks.n() as u64);
    Ok(-(params.beta * T::count(diag) + params.alpha * T::count(off)) / two_n)
}

/// `(Σ_{k,c} b_{k,c}², Σ_{k≠k',c} b_{k,c} b_{k',c})` in exact integer arithmetic.
pub(crate) fn quadratic_parts(counts: &CountMatrix) -> (u64, u64) {
    let mut diag = 0u64;
    let mut off = 0u64;
    for c in 0..counts.q() {
        let mut col = 0u64;
        let mut sq = 0u64;
        for k in 0..counts.s() {
            let b = counts.get(k, c) as u64;
            col += b;
            sq += b * b;
        }
        diag += sq;
        off += col * col - sq;
    }
    (diag, off)
}

/// JSON form of a model instance:
/// `{"q":3,"s":2,"alpha":0.5,"beta":1.2,"gamma":[0.5,0.5],"sizes":[50,50]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub q: usize,
    pub s: usize,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    pub sizes: Vec<usize>,
}

impl ModelDocument {
    pub fn new(params: &ModelParams<f64>, blocks: &BlockStructure) -> Self {
        Self {
            q: params.q,
            s: params.s,
            alpha: params.alpha,
            beta: params.beta,
            gamma: Some(params.gamma.clone()),
            sizes: blocks.sizes().to_vec(),
        }
    }

    /// Validates the document. Missing `gamma` defaults to the block fractions.
    pub fn into_parts(&self) -> Result<(ModelParams<f64>, BlockStructure)> {
        if self.sizes.len() != self.s {
            return Err(invalid(format!(
                "s={} but {} block sizes given",
                self.s,
                self.sizes.len()
            )));
        }
        let blocks = BlockStructure::new(self.sizes.clone())?;
        let gamma = self.gamma.clone().unwrap_or_else(|| blocks.proportions());
        let params = ModelParams::new(self.q, self.s, self.alpha, self.beta, gamma)?;
        Ok((params, blocks))
    }
}
