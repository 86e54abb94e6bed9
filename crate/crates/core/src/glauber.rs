//! Heat-bath (Glauber) dynamics.
//!
//! The conditional law of `ω_i` given the other sites depends only on the
//! leave-one-out counts `b̃_{k,c}`:
//!
//! ```text
//! μ_N(c | ω_{i^c}) ∝ exp(F_c),  F_c = (β b̃_{k(i),c} + α Σ_{k≠k(i)} b̃_{k,c}) / N
//! ```
//!
//! so a chain that maintains the count matrix and its column sums updates one
//! site in `O(q)`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::exact::check_model;
use crate::model::{
    count_matrix, BlockStructure, CountMatrix, DistributionMatrix, ModelParams, Normalization,
    SpinConfig,
};
use crate::rng::{stream_rng, SimRng};
use crate::scalar::{softmax, Scalar};

/// Steps between count audits in debug builds.
pub const AUDIT_INTERVAL: u64 = 10_000;

/// Fields `F_c` for a site of block `own` currently coloured `color`, given
/// the full counts and their column sums.
fn fields_into<T: Scalar>(
    counts: &CountMatrix,
    col_sums: &[u32],
    own: usize,
    color: usize,
    params: &ModelParams<T>,
    n: usize,
    out: &mut [T],
) {
    let inv_n = T::one() / T::count(n as u64);
    for (c, slot) in out.iter_mut().enumerate() {
        let own_count = counts.get(own, c);
        let others = T::count((col_sums[c] - own_count) as u64);
        let leave_out = T::count((own_count - (c == color) as u32) as u64);
        *slot = (params.beta * leave_out + params.alpha * others) * inv_n;
    }
}

/// Single-owner state of one chain.
#[derive(Debug, Clone)]
pub struct ChainState<T = f64> {
    blocks: BlockStructure,
    params: ModelParams<T>,
    site_block: Vec<usize>,
    config: SpinConfig,
    counts: CountMatrix,
    col_sums: Vec<u32>,
    step: u64,
    rng: SimRng,
    weights: Vec<T>,
}

impl<T: Scalar> ChainState<T> {
    pub fn new(
        blocks: &BlockStructure,
        params: &ModelParams<T>,
        config: SpinConfig,
        rng: SimRng,
    ) -> Result<Self> {
        check_model(blocks, params)?;
        if config.q() != params.q {
            return Err(invalid(format!(
                "configuration has q={}, params have q={}",
                config.q(),
                params.q
            )));
        }
        let counts = count_matrix(&config, blocks)?;
        let col_sums = counts.column_sums().into_iter().map(|c| c as u32).collect();
        Ok(Self {
            blocks: blocks.clone(),
            params: params.clone(),
            site_block: blocks.site_blocks(),
            config,
            counts,
            col_sums,
            step: 0,
            rng,
            weights: vec![T::zero(); params.q],
        })
    }

    /// Uniformly random start drawn from `rng`.
    pub fn random(
        blocks: &BlockStructure,
        params: &ModelParams<T>,
        mut rng: SimRng,
    ) -> Result<Self> {
        let colors = (0..blocks.n())
            .map(|_| rng.random_range(0..params.q) as u8)
            .collect();
        let config = SpinConfig::new(colors, params.q)?;
        Self::new(blocks, params, config, rng)
    }

    pub fn config(&self) -> &SpinConfig {
        &self.config
    }

    pub fn counts(&self) -> &CountMatrix {
        &self.counts
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.site_block.len()
    }

    /// Fields `F_c` of the conditional law at `site` (0-based).
    pub fn conditional_field(&self, site: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.params.q];
        fields_into(
            &self.counts,
            &self.col_sums,
            self.site_block[site],
            self.config.get(site) as usize,
            &self.params,
            self.n(),
            &mut out,
        );
        out
    }

    /// `μ_N(· | ω_{i^c})` at `site`.
    pub fn conditional_probabilities(&self, site: usize) -> Vec<T> {
        softmax(&self.conditional_field(site))
    }

    /// Resamples `site` from its conditional law; returns the new colour.
    pub fn heat_bath_step(&mut self, site: usize) -> u8 {
        let own = self.site_block[site];
        let old = self.config.get(site) as usize;
        let mut weights = std::mem::take(&mut self.weights);
        fields_into(
            &self.counts,
            &self.col_sums,
            own,
            old,
            &self.params,
            self.n(),
            &mut weights,
        );
        let top = weights.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for w in weights.iter_mut() {
            *w = (*w - top).exp();
            total = total + *w;
        }
        let target = T::lit(self.rng.random::<f64>()) * total;
        let mut acc = T::zero();
        let mut new = weights.len() - 1;
        for (c, &w) in weights.iter().enumerate() {
            acc = acc + w;
            if target < acc {
                new = c;
                break;
            }
        }
        self.weights = weights;
        if new != old {
            self.counts.add(own, old, -1);
            self.counts.add(own, new, 1);
            self.col_sums[old] -= 1;
            self.col_sums[new] += 1;
            self.config.set(site, new as u8);
        }
        self.step += 1;
        #[cfg(debug_assertions)]
        if self.step.is_multiple_of(AUDIT_INTERVAL) {
            assert!(
                self.audit(),
                "maintained counts diverged from the configuration at step {}",
                self.step
            );
        }
        new as u8
    }

    /// Heat-bath update at a uniformly chosen site.
    pub fn random_scan_step(&mut self) -> u8 {
        let site = self.rng.random_range(0..self.n());
        self.heat_bath_step(site)
    }

    /// `N` updates, random or systematic order.
    pub fn sweep(&mut self, scan: ScanOrder) {
        match scan {
            ScanOrder::Random => {
                for _ in 0..self.n() {
                    self.random_scan_step();
                }
            }
            ScanOrder::Systematic => {
                for site in 0..self.n() {
                    self.heat_bath_step(site);
                }
            }
        }
    }

    /// `true` when the maintained counts equal freshly recomputed ones.
    pub fn audit(&self) -> bool {
        let fresh = count_matrix(&self.config, &self.blocks).expect("shape fixed at construction");
        fresh == self.counts
            && fresh
                .column_sums()
                .iter()
                .zip(&self.col_sums)
                .all(|(&a, &b)| a == b as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanOrder {
    #[default]
    Random,
    Systematic,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum InitialState {
    #[default]
    Random,
    /// Every site coloured `c` (0-based).
    UniformColor(u8),
    Config(SpinConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOptions {
    /// Recorded sweeps (each `N` updates).
    pub sweeps: usize,
    /// One sample every `thin` recorded sweeps.
    pub thin: usize,
    /// Unrecorded sweeps before the first recorded one; default `sweeps/10`.
    pub burn_in: Option<usize>,
    pub seed: u64,
    /// Stream id of the generator, distinct per chain.
    pub stream: u64,
    pub init: InitialState,
    pub scan: ScanOrder,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            sweeps: 1000,
            thin: 1,
            burn_in: None,
            seed: 0,
            stream: 0,
            init: InitialState::Random,
            scan: ScanOrder::Random,
        }
    }
}

impl ChainOptions {
    pub fn burn_in_sweeps(&self) -> usize {
        self.burn_in.unwrap_or(self.sweeps / 10)
    }
}

/// Thinned count-matrix samples of one chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary<T = f64> {
    pub s: usize,
    pub q: usize,
    pub sizes: Vec<usize>,
    /// Samples stored back to back, `s·q` counts each.
    samples: Vec<u32>,
    pub sweep_count: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub stream: u64,
    /// Heat-bath moves are always accepted.
    pub acceptance: T,
    /// Mean of `B/N` over the samples.
    pub empirical_m_prime: DistributionMatrix<T>,
}

impl<T: Scalar> ChainSummary<T> {
    pub fn len(&self) -> usize {
        self.samples.len() / (self.s * self.q)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn sample(&self, j: usize) -> &[u32] {
        let w = self.s * self.q;
        &self.samples[j * w..(j + 1) * w]
    }

    pub fn sample_matrix(&self, j: usize) -> CountMatrix {
        CountMatrix::from_counts(self.s, self.q, self.sample(j).to_vec())
            .expect("stored with shape s×q")
    }

    /// Recorded sweep index (1-based) of sample `j`.
    pub fn sweep_of(&self, j: usize) -> usize {
        (j + 1) * self.thin
    }

    /// Values of `T_{k,c} = b_{k,c}` over the samples.
    pub fn observable(&self, k: usize, c: usize) -> impl Iterator<Item = u32> + '_ {
        let w = self.s * self.q;
        self.samples.chunks_exact(w).map(move |b| b[k * self.q + c])
    }

    /// Empirical law of the count matrix.
    pub fn count_law(&self) -> BTreeMap<CountMatrix, T> {
        let mut law = BTreeMap::new();
        let weight = T::one() / T::count(self.len() as u64);
        for j in 0..self.len() {
            let e = law.entry(self.sample_matrix(j)).or_insert(T::zero());
            *e = *e + weight;
        }
        law
    }

    /// Writes `chain,sweep,b_1_1,…,b_s_q` rows, optionally with the header.
    pub fn write_csv<W: Write>(
        &self,
        mut out: W,
        chain: usize,
        header: bool,
    ) -> std::io::Result<()> {
        if header {
            write!(out, "chain,sweep")?;
            for k in 1..=self.s {
                for c in 1..=self.q {
                    write!(out, ",b_{k}_{c}")?;
                }
            }
            writeln!(out)?;
        }
        for j in 0..self.len() {
            write!(out, "{chain},{}", self.sweep_of(j))?;
            for b in self.sample(j) {
                write!(out, ",{b}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Runs one chain: `burn_in` unrecorded sweeps, then `sweeps` sweeps with a
/// sample after every `thin`-th. Bit-reproducible for fixed options.
pub fn run_chain<T: Scalar>(
    blocks: &BlockStructure,
    params: &ModelParams<T>,
    options: &ChainOptions,
) -> Result<ChainSummary<T>> {
    if options.sweeps == 0 || options.thin == 0 {
        return Err(invalid("sweeps and thin must be at least 1"));
    }
    let rng = stream_rng(options.seed, options.stream);
    let mut state = match &options.init {
        InitialState::Random => ChainState::random(blocks, params, rng)?,
        InitialState::UniformColor(c) => {
            if *c as usize >= params.q {
                return Err(invalid(format!(
                    "initial colour {} exceeds q={}",
                    *c as usize + 1,
                    params.q
                )));
            }
            let cfg = SpinConfig::constant(blocks.n(), *c, params.q)?;
            ChainState::new(blocks, params, cfg, rng)?
        }
        InitialState::Config(cfg) => ChainState::new(blocks, params, cfg.clone(), rng)?,
    };
    let burn_in = options.burn_in_sweeps();
    for _ in 0..burn_in {
        state.sweep(options.scan);
    }
    let (s, q) = (params.s, params.q);
    let n = T::count(blocks.n() as u64);
    let recorded = options.sweeps / options.thin;
    let mut samples = Vec::with_capacity(recorded * s * q);
    let mut sum = vec![0u64; s * q];
    for sweep in 1..=options.sweeps {
        state.sweep(options.scan);
        if sweep % options.thin == 0 {
            samples.extend_from_slice(state.counts().as_slice());
            for (acc, &b) in sum.iter_mut().zip(state.counts().as_slice()) {
                *acc += b as u64;
            }
        }
    }
    let denom = T::count(recorded.max(1) as u64) * n;
    let mean = sum.iter().map(|&x| T::count(x) / denom).collect();
    Ok(ChainSummary {
        s,
        q,
        sizes: blocks.sizes().to_vec(),
        samples,
        sweep_count: options.sweeps,
        burn_in,
        thin: options.thin,
        seed: options.seed,
        stream: options.stream,
        acceptance: T::one(),
        empirical_m_prime: DistributionMatrix::new(s, q, mean, Normalization::Block)?,
    })
}

/// Independent chains with streams `0..chains`, run in parallel; results are
/// ordered by stream.
pub fn run_chains<T: Scalar>(
    blocks: &BlockStructure,
    params: &ModelParams<T>,
    options: &ChainOptions,
    chains: usize,
) -> Result<Vec<ChainSummary<T>>> {
    (0..chains as u64)
        .into_par_iter()
        .map(|stream| {
            run_chain(
                blocks,
                params,
                &ChainOptions {
                    stream,
                    ..options.clone()
                },
            )
        })
        .collect()
}

/// Fraction of samples with `|T_{k,c} − mean| ≥ t`, the mean being the
/// sample mean.
pub fn tail_estimate<T: Scalar>(summary: &ChainSummary<T>, k: usize, c: usize, t: T) -> Result<T> {
    if summary.is_empty() {
        return Err(invalid("tail estimate needs at least one sample"));
    }
    if k >= summary.s || c >= summary.q {
        return Err(invalid(format!("(k, c) = ({k}, {c}) out of range")));
    }
    let len = T::count(summary.len() as u64);
    let mean = summary
        .observable(k, c)
        .map(|b| T::count(b as u64))
        .sum::<T>()
        / len;
    let hits = summary
        .observable(k, c)
        .filter(|&b| (T::count(b as u64) - mean).abs() >= t)
        .count();
    Ok(T::count(hits as u64) / len)
}

/// Default cap on the number of states of an explicit kernel.
pub const KERNEL_STATE_CAP: u128 = 4096;

/// Random-scan heat-bath transition matrix on all `q^N` configurations,
/// indexed as in [`crate::exact::ConfigurationMeasure`].
#[derive(Debug, Clone)]
pub struct TransitionKernel<T = f64> {
    states: usize,
    entries: Vec<T>,
}

impl<T: Scalar> TransitionKernel<T> {
    pub fn states(&self) -> usize {
        self.states
    }

    pub fn get(&self, from: usize, to: usize) -> T {
        self.entries[from * self.states + to]
    }

    /// Row vector times kernel: `(πP)(ω') = Σ_ω π(ω) P(ω→ω')`.
    pub fn push_forward(&self, pi: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.states];
        for (from, &p) in pi.iter().enumerate() {
            let row = &self.entries[from * self.states..(from + 1) * self.states];
            for (o, &k) in out.iter_mut().zip(row) {
                *o = *o + p * k;
            }
        }
        out
    }

    pub fn row_sum(&self, from: usize) -> T {
        self.entries[from * self.states..(from + 1) * self.states]
            .iter()
            .copied()
            .sum()
    }
}

/// Builds `P(ω→ω') = (1/N) Σ_i 1{ω' = ω off i} μ_N(ω'_i | ω_{i^c})` from the
/// sampler's conditional fields.
pub fn transition_kernel<T: Scalar>(
    blocks: &BlockStructure,
    params: &ModelParams<T>,
    cap: u128,
) -> Result<TransitionKernel<T>> {
    check_model(blocks, params)?;
    let (n, q) = (blocks.n(), params.q);
    let required = crate::exact::configuration_count(n, q).unwrap_or(u128::MAX);
    if required > cap {
        return Err(Error::Capacity { required, cap });
    }
    let states = required as usize;
    let strides: Vec<usize> = (0..n).map(|i| q.pow(i as u32)).collect();
    let inv_n = T::one() / T::count(n as u64);
    let rows: Vec<Vec<T>> = (0..states)
        .into_par_iter()
        .map(|from| {
            let mut colors = Vec::with_capacity(n);
            let mut rest = from;
            for _ in 0..n {
                colors.push((rest % q) as u8);
                rest /= q;
            }
            let cfg = SpinConfig::new(colors, q).expect("digits below q");
            let state = ChainState::new(blocks, params, cfg, stream_rng(0, 0)).expect("checked");
            let mut row = vec![T::zero(); states];
            for site in 0..n {
                let probs = state.conditional_probabilities(site);
                let current = state.config().get(site) as usize;
                for (c, p) in probs.into_iter().enumerate() {
                    let to = from + c * strides[site] - current * strides[site];
                    row[to] = row[to] + p * inv_n;
                }
            }
            row
        })
        .collect();
    Ok(TransitionKernel {
        states,
        entries: rows.concat(),
    })
}
