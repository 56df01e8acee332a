//! Reference engines: exhaustive joint (subset, power) search, random
//! subset baselines, and a from-scratch evaluator with no incremental state.

use itertools::Itertools;
use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::channel::ChannelMatrix;
use crate::error::{Result, TasError};
use crate::exec::{map_slice, Execution};
use crate::metrics::{evaluate, link_stats, LinkStats, Measure};
use crate::power::{optimize_power, PowerSearch};
use crate::precoders::{precode_direct, PrecoderSpec};
use crate::stepwise::AlgoConfig;

pub const DEFAULT_SUBSET_BUDGET: u128 = 1_000_000;

/// Objective of `subset` (1-based, any order) at power `p`, rebuilt from
/// the channel rows.
pub fn naive_evaluate(
    channel: &ChannelMatrix,
    subset: &[usize],
    spec: PrecoderSpec,
    measure: &Measure,
    p: f64,
) -> Result<f64> {
    let stats = subset_stats(channel, subset, spec)?;
    evaluate(measure, &stats, subset.len(), p)
}

fn subset_stats(channel: &ChannelMatrix, subset: &[usize], spec: PrecoderSpec) -> Result<LinkStats> {
    if subset.is_empty() {
        return Err(TasError::invalid("subset is empty"));
    }
    if subset.iter().duplicates().next().is_some() {
        return Err(TasError::invalid("subset has repeated antennas"));
    }
    let h = channel.submatrix(subset)?;
    let state = precode_direct(&h, spec)?;
    link_stats(&h, state.a_matrix())
}

/// `Σ_{L=1}^{l_max} C(n, L)`, saturating.
pub fn subset_count(n: usize, l_max: usize) -> u128 {
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    for l in 1..=l_max.min(n) {
        binom = binom.saturating_mul((n + 1 - l) as u128) / l as u128;
        total = total.saturating_add(binom);
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetChoice {
    /// Sorted, 1-based.
    pub subset: Vec<usize>,
    /// Watts.
    pub power: f64,
    pub value: f64,
}

impl SubsetChoice {
    pub fn size(&self) -> usize {
        self.subset.len()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExhaustiveResult {
    pub best: SubsetChoice,
    pub evaluated: u128,
    /// Subsets skipped because the precoder was undefined on them.
    pub infeasible: u128,
}

/// Global optimum of the joint problem over every nonempty subset of size
/// at most `config.l_max`, with the shared power search. Ties go to the
/// lexicographically smallest subset, then the smaller power.
pub fn exhaustive_search(
    channel: &ChannelMatrix,
    config: &AlgoConfig,
    budget: u128,
) -> Result<ExhaustiveResult> {
    config.validate(channel)?;
    let n = channel.n_antennas();
    let required = subset_count(n, config.l_max);
    if required > budget {
        return Err(TasError::BudgetExceeded { required, budget });
    }
    let mut best: Option<SubsetChoice> = None;
    let mut infeasible = 0u128;
    for size in 1..=config.l_max {
        let subsets: Vec<Vec<usize>> = (1..=n).combinations(size).collect();
        let scored = map_slice(&subsets, config.execution, |s| {
            score_subset(channel, s, config.precoder, &config.measure, config.p_max, &config.search)
        });
        for (subset, res) in subsets.into_iter().zip(scored) {
            let choice = match res {
                Ok((power, value)) => SubsetChoice { subset, power, value },
                Err(TasError::RankDeficient { .. } | TasError::DegenerateChannel) => {
                    infeasible += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if best.as_ref().is_none_or(|b| better(&choice, b)) {
                best = Some(choice);
            }
        }
    }
    let best = best.ok_or(TasError::DegenerateChannel)?;
    Ok(ExhaustiveResult {
        best,
        evaluated: required,
        infeasible,
    })
}

fn better(a: &SubsetChoice, b: &SubsetChoice) -> bool {
    if a.value != b.value {
        return a.value > b.value;
    }
    (&a.subset, a.power) < (&b.subset, b.power)
}

fn score_subset(
    channel: &ChannelMatrix,
    subset: &[usize],
    spec: PrecoderSpec,
    measure: &Measure,
    p_max: f64,
    search: &PowerSearch,
) -> Result<(f64, f64)> {
    let stats = subset_stats(channel, subset, spec)?;
    let c = optimize_power(measure, &stats, subset.len(), p_max, search);
    Ok((c.power, c.value))
}

/// Uniformly random `l`-subset with power control.
#[allow(clippy::too_many_arguments)]
pub fn random_tas<R: Rng + ?Sized>(
    channel: &ChannelMatrix,
    l: usize,
    spec: PrecoderSpec,
    measure: &Measure,
    p_max: f64,
    search: &PowerSearch,
    rng: &mut R,
) -> Result<SubsetChoice> {
    let n = channel.n_antennas();
    if l == 0 || l > n {
        return Err(TasError::invalid(format!("subset size must lie in 1..={n}, got {l}")));
    }
    let mut subset: Vec<usize> = sample(rng, n, l).into_iter().map(|i| i + 1).collect();
    subset.sort_unstable();
    let (power, value) = score_subset(channel, &subset, spec, measure, p_max, search)?;
    Ok(SubsetChoice { subset, power, value })
}

/// Best subset of exactly `l` antennas: used by tests on tiny instances.
pub fn best_of_size(
    channel: &ChannelMatrix,
    l: usize,
    spec: PrecoderSpec,
    measure: &Measure,
    p_max: f64,
    search: &PowerSearch,
    exec: Execution,
) -> Result<SubsetChoice> {
    let subsets: Vec<Vec<usize>> = (1..=channel.n_antennas()).combinations(l).collect();
    let scored = map_slice(&subsets, exec, |s| score_subset(channel, s, spec, measure, p_max, search));
    let mut best: Option<SubsetChoice> = None;
    for (subset, res) in subsets.into_iter().zip(scored) {
        let (power, value) = res?;
        let c = SubsetChoice { subset, power, value };
        if best.as_ref().is_none_or(|b| better(&c, b)) {
            best = Some(c);
        }
    }
    best.ok_or_else(|| TasError::invalid("no subsets of the requested size"))
}
