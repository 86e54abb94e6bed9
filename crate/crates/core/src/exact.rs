//! Exact Gibbs computations for small systems.
//!
//! The energy depends on a configuration only through its count matrix, so
//! the law of `B` is obtained by enumerating per-block compositions and
//! weighting each count matrix by its multiplicity
//! `∏_k multinomial(|S_k|; b_k)` times `exp(−H(B))`. This is exact and
//! scales as `∏_k C(|S_k|+q−1, q−1)` rather than `q^N`.
//!
//! [`ConfigurationMeasure`] is the brute-force `q^N` counterpart. It is slow but
//! shares no code path with the composition route beyond
//! [`hamiltonian_direct`], and every conditional or local quantity in the
//! crate is checked against it.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{
    hamiltonian_direct, quadratic_parts, BlockStructure, CountMatrix, ModelDocument, ModelParams,
    SpinConfig,
};
use crate::scalar::{log_sum_exp, softmax, Scalar};

/// Default cap on the number of enumerated states.
pub const DEFAULT_SUPPORT_CAP: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactOptions {
    pub cap: u128,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_SUPPORT_CAP,
        }
    }
}

/// `C(n, k)` in `u128`, saturating on overflow.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Number of vectors `(b_1, …, b_q) ≥ 0` with `Σ b_c = n`.
pub fn composition_count(n: usize, q: usize) -> u128 {
    if q == 0 {
        return u128::from(n == 0);
    }
    binomial((n + q - 1) as u64, (q - 1) as u64)
}

/// All compositions of `n` into `q` non-negative parts, in colexicographic
/// order (last coordinate varies slowest).
///
/// ```
/// let parts = blockpotts::exact::enumerate_block_compositions(2, 2);
/// assert_eq!(parts, vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
/// ```
pub fn enumerate_block_compositions(n: usize, q: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::with_capacity(composition_count(n, q).min(1 << 24) as usize);
    if q == 0 {
        if n == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    let mut current = vec![0u32; q];
    fill_colex(n, q, &mut current, &mut out);
    out
}

fn fill_colex(n: usize, width: usize, current: &mut [u32], out: &mut Vec<Vec<u32>>) {
    if width == 1 {
        current[0] = n as u32;
        out.push(current.to_vec());
        return;
    }
    for last in 0..=n {
        current[width - 1] = last as u32;
        fill_colex(n - last, width - 1, current, out);
    }
}

/// Position of `parts` in the colex order of [`enumerate_block_compositions`].
pub fn composition_rank(parts: &[u32]) -> usize {
    let mut remaining: usize = parts.iter().map(|&b| b as usize).sum();
    let mut rank = 0usize;
    for width in (2..=parts.len()).rev() {
        let last = parts[width - 1] as usize;
        for v in 0..last {
            rank += composition_count(remaining - v, width - 1) as usize;
        }
        remaining -= last;
    }
    rank
}

/// `ln k!` for `k = 0..=n`, by cumulative summation of `ln k`.
pub(crate) fn log_factorials<T: Scalar>(n: usize) -> Vec<T> {
    let mut table = Vec::with_capacity(n + 1);
    table.push(T::zero());
    let mut acc = 0.0f64;
    for k in 1..=n {
        acc += (k as f64).ln();
        table.push(T::lit(acc));
    }
    table
}

fn log_multinomial<T: Scalar>(parts: &[u32], lnfact: &[T]) -> T {
    let n: usize = parts.iter().map(|&b| b as usize).sum();
    parts
        .iter()
        .fold(lnfact[n], |acc, &b| acc - lnfact[b as usize])
}

pub(crate) fn check_model<T: Scalar>(
    blocks: &BlockStructure,
    params: &ModelParams<T>,
) -> Result<()> {
    if blocks.s() != params.s {
        return Err(invalid(format!(
            "params have s={}, block structure has {}",
            params.s,
            blocks.s()
        )));
    }
    Ok(())
}

/// Required support size for [`exact_distribution`], saturating.
pub fn support_size(blocks: &BlockStructure, q: usize) -> u128 {
    blocks
        .sizes()
        .iter()
        .map(|&n| composition_count(n, q))
        .fold(1u128, |acc, c| acc.saturating_mul(c))
}

/// Exact law of the count matrix under the Gibbs measure.
#[derive(Debug, Clone)]
pub struct ExactDistribution<T = f64> {
    blocks: BlockStructure,
    params: ModelParams<T>,
    support: Vec<u32>,
    log_weights: Vec<T>,
    log_z: T,
    probabilities: Vec<T>,
}

impl<T: Scalar> ExactDistribution<T> {
    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    /// `log Z_N`.
    pub fn log_z(&self) -> T {
        self.log_z
    }

    pub fn log_weights(&self) -> &[T] {
        &self.log_weights
    }

    pub fn probabilities(&self) -> &[T] {
        &self.probabilities
    }

    /// Row-major counts of support element `i`.
    pub fn counts(&self, i: usize) -> &[u32] {
        let width = self.params.s * self.params.q;
        &self.support[i * width..(i + 1) * width]
    }

    pub fn count_matrix(&self, i: usize) -> CountMatrix {
        CountMatrix::from_counts(self.params.s, self.params.q, self.counts(i).to_vec()).unwrap()
    }

    /// Index of `counts` in the support (blocks nested outermost-first, each
    /// block in colex order).
    pub fn index_of(&self, counts: &CountMatrix) -> Option<usize> {
        if !counts.matches(&self.blocks) || counts.q() != self.params.q {
            return None;
        }
        let q = self.params.q;
        let mut index = 0usize;
        for k in 0..self.params.s {
            let radix = composition_count(self.blocks.size(k), q) as usize;
            index = index * radix + composition_rank(counts.row(k));
        }
        Some(index)
    }

    /// `μ_N(B = counts)`; zero for matrices outside the support.
    pub fn probability_of(&self, counts: &CountMatrix) -> T {
        self.index_of(counts)
            .map_or(T::zero(), |i| self.probabilities[i])
    }

    /// Law as a map keyed by count matrix.
    pub fn to_map(&self) -> BTreeMap<CountMatrix, T> {
        (0..self.len())
            .map(|i| (self.count_matrix(i), self.probabilities[i]))
            .collect()
    }

    /// Writes one CSV row per support element:
    /// `b_1_1,…,b_s_q,log_weight,probability`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let (s, q) = (self.params.s, self.params.q);
        let mut header: Vec<String> = Vec::with_capacity(s * q + 2);
        for k in 1..=s {
            for c in 1..=q {
                header.push(format!("b_{k}_{c}"));
            }
        }
        header.push("log_weight".into());
        header.push("probability".into());
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            for b in self.counts(i) {
                write!(out, "{b},")?;
            }
            writeln!(
                out,
                "{},{}",
                self.log_weights[i].as_f64(),
                self.probabilities[i].as_f64()
            )?;
        }
        Ok(())
    }

    /// Metadata accompanying the CSV export.
    pub fn header(&self) -> ExactHeader {
        let params = self.params.cast::<f64>();
        ExactHeader {
            model: ModelDocument::new(&params, &self.blocks),
            log_z: self.log_z.as_f64(),
            support_size: self.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactHeader {
    pub model: ModelDocument,
    pub log_z: f64,
    pub support_size: usize,
}

/// Exact law of `B` under `μ_N`, by composition enumeration.
pub fn exact_distribution<T: Scalar>(
    blocks: &BlockStructure,
    params: &ModelParams<T>,
    options: ExactOptions,
) -> Result<ExactDistribution<T>> {
    check_model(blocks, params)?;
    let q = params.q;
    let required = support_size(blocks, q);
    if required > options.cap {
        return Err(Error::Capacity {
            required,
            cap: options.cap,
        });
    }

    let max_size = blocks.sizes().iter().copied().max().unwrap_or(0);
    let lnfact = log_factorials::<T>(max_size);
    let per_block: Vec<Vec<Vec<u32>>> = blocks
        .sizes()
        .iter()
        .map(|&n| enumerate_block_compositions(n, q))
        .collect();
    let log_mult: Vec<Vec<T>> = per_block
        .iter()
        .map(|comps| comps.iter().map(|b| log_multinomial(b, &lnfact)).collect())
        .collect();
    let inner: usize = per_block[1..].iter().map(Vec::len).product();
    let two_n = T::count(2 * blocks.n() as u64);
    let s = params.s;

    // Each outer composition fills a contiguous chunk; collect preserves order.
    let chunks: Vec<(Vec<u32>, Vec<T>)> = (0..per_block[0].len())
        .into_par_iter()
        .map(|outer| {
            let mut support = Vec::with_capacity(inner * s * q);
            let mut weights = Vec::with_capacity(inner);
            let mut digits = vec![0usize; s];
            digits[0] = outer;
            let mut counts = CountMatrix::zeros(s, q);
            for mut rest in 0..inner {
                for k in (1..s).rev() {
                    let radix = per_block[k].len();
                    digits[k] = rest % radix;
                    rest /= radix;
                }
                let mut lw = T::zero();
                for k in 0..s {
                    let comp = &per_block[k][digits[k]];
                    for (c, &b) in comp.iter().enumerate() {
                        let slot = counts.get(k, c) as i64;
                        counts.add(k, c, b as i64 - slot);
                    }
                    lw = lw + log_mult[k][digits[k]];
                }
                let (diag, off) = quadratic_parts(&counts);
                lw = lw + (params.beta * T::count(diag) + params.alpha * T::count(off)) / two_n;
                support.extend_from_slice(counts.as_slice());
                weights.push(lw);
            }
            (support, weights)
        })
        .collect();

    let mut support = Vec::with_capacity(required as usize * s * q);
    let mut log_weights = Vec::with_capacity(required as usize);
    for (sup, w) in chunks {
        support.extend(sup);
        log_weights.extend(w);
    }
    let log_z = log_sum_exp(&log_weights);
    let probabilities = log_weights.iter().map(|&lw| (lw - log_z).exp()).collect();
    Ok(ExactDistribution {
        blocks: blocks.clone(),
        params: params.clone(),
        support,
        log_weights,
        log_z,
        probabilities,
    })
}

/// Conditional law of the colour at `site` (0-based) given the rest, from the
/// energies of the `q` completions.
pub fn exact_conditional<T: Scalar>(
    config: &SpinConfig,
    site: usize,
    blocks: &BlockStructure,
    params: &ModelParams<T>,
) -> Result<Vec<T>> {
    check_model(blocks, params)?;
    if site >= blocks.n() {
        return Err(invalid(format!(
            "site {site} out of range for N={}",
            blocks.n()
        )));
    }
    let mut probe = config.clone();
    let mut neg_energy = Vec::with_capacity(params.q);
    for c in 0..params.q {
        probe.set(site, c as u8);
        neg_energy.push(-hamiltonian_direct(&probe, blocks, params)?);
    }
    Ok(softmax(&neg_energy))
}

/// Marginal law of `b_{k,c}` (the block colour count `T_{k,c}`).
pub fn exact_observable_distribution<T: Scalar>(
    dist: &ExactDistribution<T>,
    k: usize,
    c: usize,
) -> Result<BTreeMap<u32, T>> {
    let (s, q) = (dist.params.s, dist.params.q);
    if k >= s || c >= q {
        return Err(invalid(format!(
            "block {k} / colour {c} out of range (s={s}, q={q})"
        )));
    }
    let mut law = BTreeMap::new();
    for i in 0..dist.len() {
        let entry = law.entry(dist.counts(i)[k * q + c]).or_insert(T::zero());
        *entry = *entry + dist.probabilities[i];
    }
    Ok(law)
}

/// Total variation distance between two laws on count matrices.
pub fn count_law_distance<T: Scalar>(
    a: &BTreeMap<CountMatrix, T>,
    b: &BTreeMap<CountMatrix, T>,
) -> T {
    let mut l1 = T::zero();
    for (key, &pa) in a {
        l1 = l1 + (pa - b.get(key).copied().unwrap_or(T::zero())).abs();
    }
    for (key, &pb) in b {
        if !a.contains_key(key) {
            l1 = l1 + pb;
        }
    }
    l1 * T::lit(0.5)
}

/// The Gibbs measure on all `q^N` configurations.
///
/// Configuration `ω` has index `Σ_i ω_i q^i` (site 0 is the least significant
/// digit).
#[derive(Debug, Clone)]
pub struct ConfigurationMeasure<T = f64> {
    blocks: BlockStructure,
    params: ModelParams<T>,
    strides: Vec<usize>,
    log_weights: Vec<T>,
    log_z: T,
    probabilities: Vec<T>,
}

/// `q^n`, or `None` on overflow.
pub fn configuration_count(n: usize, q: usize) -> Option<u128> {
    (q as u128).checked_pow(n as u32)
}

impl<T: Scalar> ConfigurationMeasure<T> {
    pub fn new(
        blocks: &BlockStructure,
        params: &ModelParams<T>,
        options: ExactOptions,
    ) -> Result<Self> {
        check_model(blocks, params)?;
        let (n, q) = (blocks.n(), params.q);
        let required = configuration_count(n, q).unwrap_or(u128::MAX);
        if required > options.cap {
            return Err(Error::Capacity {
                required,
                cap: options.cap,
            });
        }
        let strides: Vec<usize> = (0..n).map(|i| q.pow(i as u32)).collect();
        let total = required as usize;
        let log_weights: Vec<T> = (0..total)
            .into_par_iter()
            .map(|index| {
                let cfg = decode(index, n, q);
                -hamiltonian_direct(&cfg, blocks, params).expect("shape checked")
            })
            .collect();
        let log_z = log_sum_exp(&log_weights);
        let probabilities = log_weights.iter().map(|&lw| (lw - log_z).exp()).collect();
        Ok(Self {
            blocks: blocks.clone(),
            params: params.clone(),
            strides,
            log_weights,
            log_z,
            probabilities,
        })
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.blocks.n()
    }

    pub fn q(&self) -> usize {
        self.params.q
    }

    pub fn log_z(&self) -> T {
        self.log_z
    }

    pub fn probabilities(&self) -> &[T] {
        &self.probabilities
    }

    pub fn probability(&self, index: usize) -> T {
        self.probabilities[index]
    }

    pub fn config(&self, index: usize) -> SpinConfig {
        decode(index, self.n(), self.q())
    }

    pub fn index_of(&self, config: &SpinConfig) -> usize {
        config
            .colors()
            .iter()
            .zip(&self.strides)
            .map(|(&c, &w)| c as usize * w)
            .sum()
    }

    /// Colour of `site` in configuration `index`.
    #[inline]
    pub fn color_at(&self, index: usize, site: usize) -> usize {
        (index / self.strides[site]) % self.q()
    }

    /// Index of the configuration with `site` recoloured to `color`.
    #[inline]
    pub fn recolor(&self, index: usize, site: usize, color: usize) -> usize {
        let current = self.color_at(index, site);
        index + color * self.strides[site] - current * self.strides[site]
    }

    /// `μ_N(· | ω_{i^c})` as the ratio of joint probabilities.
    pub fn conditional(&self, index: usize, site: usize) -> Vec<T> {
        let lw: Vec<T> = (0..self.q())
            .map(|c| self.log_weights[self.recolor(index, site, c)])
            .collect();
        softmax(&lw)
    }

    /// Push-forward onto count matrices.
    pub fn count_law(&self) -> BTreeMap<CountMatrix, T> {
        let mut law = BTreeMap::new();
        for index in 0..self.len() {
            let b = crate::model::count_matrix(&self.config(index), &self.blocks)
                .expect("shape checked");
            let entry = law.entry(b).or_insert(T::zero());
            *entry = *entry + self.probabilities[index];
        }
        law
    }

    /// Expectation of a table-valued observable.
    pub fn expect(&self, values: &[T]) -> T {
        crate::scalar::pairwise_sum(
            &values
                .iter()
                .zip(&self.probabilities)
                .map(|(&f, &p)| f * p)
                .collect::<Vec<_>>(),
        )
    }
}

fn decode(mut index: usize, n: usize, q: usize) -> SpinConfig {
    let mut colors = Vec::with_capacity(n);
    for _ in 0..n {
        colors.push((index % q) as u8);
        index /= q;
    }
    SpinConfig::new(colors, q).expect("digits are below q")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compositions_small_cases() {
        assert_eq!(enumerate_block_compositions(0, 3), vec![vec![0, 0, 0]]);
        assert_eq!(
            enumerate_block_compositions(2, 2),
            vec![vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        assert_eq!(
            enumerate_block_compositions(2, 3),
            vec![
                vec![2, 0, 0],
                vec![1, 1, 0],
                vec![0, 2, 0],
                vec![1, 0, 1],
                vec![0, 1, 1],
                vec![0, 0, 2]
            ]
        );
    }

    #[test]
    fn composition_counts_match_stars_and_bars() {
        assert_eq!(enumerate_block_compositions(10, 3).len(), 66);
        for n in 0..8 {
            for q in 1..5 {
                let all = enumerate_block_compositions(n, q);
                assert_eq!(all.len() as u128, composition_count(n, q));
                let unique: std::collections::BTreeSet<_> = all.iter().collect();
                assert_eq!(unique.len(), all.len());
                for (i, b) in all.iter().enumerate() {
                    assert_eq!(b.iter().sum::<u32>() as usize, n);
                    assert_eq!(composition_rank(b), i);
                }
            }
        }
    }

    #[test]
    fn two_site_partition_function() {
        let blocks = BlockStructure::new(vec![2]).unwrap();
        let params = ModelParams::new(3, 1, 0.0, 1.0, vec![1.0]).unwrap();
        let dist = exact_distribution(&blocks, &params, ExactOptions::default()).unwrap();
        let expected = (3.0 * 1f64.exp() + 6.0 * 0.5f64.exp()).ln();
        assert!((dist.log_z() - expected).abs() < 1e-14);
        assert!((dist.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn capacity_error_names_required_size() {
        let blocks = BlockStructure::new(vec![30, 30]).unwrap();
        let params = ModelParams::uniform(3, 2, 0.5, 1.0).unwrap();
        let err = exact_distribution(&blocks, &params, ExactOptions { cap: 1000 }).unwrap_err();
        assert_eq!(
            err,
            Error::Capacity {
                required: 496 * 496,
                cap: 1000
            }
        );
        let err = ConfigurationMeasure::new(&blocks, &params, ExactOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }

    #[test]
    fn single_site_conditional_is_uniform() {
        let blocks = BlockStructure::new(vec![1]).unwrap();
        let params = ModelParams::new(3, 1, 0.0, 2.0, vec![1.0]).unwrap();
        let cfg = SpinConfig::new(vec![1], 3).unwrap();
        let p = exact_conditional(&cfg, 0, &blocks, &params).unwrap();
        for x in p {
            assert!((x - 1.0_f64 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn conditional_ratio_by_pair_counting() {
        // ω = (1, 1, ·): completing with colour 1 adds 4 equal ordered pairs.
        let blocks = BlockStructure::new(vec![3]).unwrap();
        let params = ModelParams::new(3, 1, 0.0, 1.0, vec![1.0]).unwrap();
        let cfg = SpinConfig::new(vec![0, 0, 2], 3).unwrap();
        let p = exact_conditional(&cfg, 2, &blocks, &params).unwrap();
        assert!((p[0] / p[1] - (2.0f64 / 3.0).exp()).abs() < 1e-13);
        assert!(exact_conditional(&cfg, 3, &blocks, &params).is_err());
    }

    #[test]
    fn zero_coupling_observable_is_binomial() {
        let blocks = BlockStructure::new(vec![4, 3]).unwrap();
        let params = ModelParams::new(3, 2, 0.0, 0.0, blocks.proportions()).unwrap();
        let dist = exact_distribution(&blocks, &params, ExactOptions::default()).unwrap();
        let law = exact_observable_distribution(&dist, 0, 1).unwrap();
        let p = 1.0 / 3.0f64;
        for (&t, &prob) in &law {
            let expected =
                binomial(4, t as u64) as f64 * p.powi(t as i32) * (1.0 - p).powi(4 - t as i32);
            assert!((prob - expected).abs() < 1e-14);
        }
        assert!(law.keys().all(|&t| t <= 4));
        assert!(exact_observable_distribution(&dist, 2, 0).is_err());
    }

    #[test]
    fn support_index_round_trip() {
        let blocks = BlockStructure::new(vec![3, 2]).unwrap();
        let params = ModelParams::new(3, 2, 0.3, 0.9, blocks.proportions()).unwrap();
        let dist = exact_distribution(&blocks, &params, ExactOptions::default()).unwrap();
        assert_eq!(dist.len() as u128, support_size(&blocks, 3));
        for i in 0..dist.len() {
            assert_eq!(dist.index_of(&dist.count_matrix(i)), Some(i));
        }
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let blocks = BlockStructure::new(vec![1, 1]).unwrap();
        let params = ModelParams::uniform(3, 2, 0.5, 1.0).unwrap();
        let dist = exact_distribution(&blocks, &params, ExactOptions::default()).unwrap();
        let mut buf = Vec::new();
        dist.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "b_1_1,b_1_2,b_1_3,b_2_1,b_2_2,b_2_3,log_weight,probability"
        );
        assert_eq!(lines.len(), 10);
        assert!(lines[1].starts_with("1,0,0,1,0,0,"));
        let header = serde_json::to_value(dist.header()).unwrap();
        assert_eq!(header["support_size"], 9);
    }
}
