//! Greedy stepwise antenna selection with per-step power control.
//!
//! Starting from the strongest antenna, each step scans every unselected
//! antenna `n` at the current power `P_ℓ`, computes the exact change
//! `Θ(ℓ, n, P_ℓ)` of the objective from the rank-one precoder update, adds
//! the maximizer and re-optimizes the power. The run stops when the best
//! gain is not positive (unless forced to reach `l_max`).
//!
//! For user `k`, with `C = HᵀA`, `t_k = |C_kk|²`, `u_k = Σ_{j≠k}|C_kj|²` and
//! `δ = HᵀD + g bᵀ`:
//!
//! ```text
//! ε_k = |δ_kk|² + 2Re{√μ C_kk δ_kk*}
//! ψ_k = Σ_{j≠k} |δ_kj|² + 2Re{√μ C_kj δ_kj*}
//! θ_k = 1 + (μ t_k + ε_k) P / (1 + (μ u_k + ψ_k) P)
//! φ_k = (1 + u_k P) / (1 + (u_k + t_k) P)
//! R_k(ℓ+1, P) = R_k(ℓ, P) + log₂(θ_k φ_k)
//! ```
//!
//! (θ and φ are written with `P` multiplied through so `P = 0` is finite.)

use serde::Serialize;

use crate::channel::ChannelMatrix;
use crate::error::{Result, TasError};
use crate::exec::{map_slice, Execution};
use crate::linalg::CVector;
use crate::metrics::{LinkStats, Measure, MeasureKind};
use crate::power::{optimize_power, PowerSearch};
use crate::precoders::{
    apply_update, direct_update, PrecoderKind, PrecoderSpec, PrecoderState, RankOneUpdate,
    DEFAULT_ZF_BOOTSTRAP_LAMBDA,
};

/// How candidate gains are computed during a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanPath {
    /// Closed-form rank-one update quantities.
    #[default]
    RankOne,
    /// Rebuild the grown precoder from scratch for every candidate.
    Naive,
}

#[derive(Debug, Clone)]
pub struct AlgoConfig {
    pub l_max: usize,
    /// Watts.
    pub p_max: f64,
    pub precoder: PrecoderSpec,
    pub measure: Measure,
    /// Keep selecting until `l_max` even when the best gain is not positive.
    pub force_full: bool,
    pub search: PowerSearch,
    pub zf_bootstrap_lambda: f64,
    pub scan: ScanPath,
    pub execution: Execution,
}

impl AlgoConfig {
    pub fn new(l_max: usize, p_max: f64, precoder: PrecoderSpec, measure: Measure) -> Self {
        Self {
            l_max,
            p_max,
            precoder,
            measure,
            force_full: false,
            search: PowerSearch::default(),
            zf_bootstrap_lambda: DEFAULT_ZF_BOOTSTRAP_LAMBDA,
            scan: ScanPath::RankOne,
            execution: Execution::Sequential,
        }
    }

    pub fn forced(mut self, force_full: bool) -> Self {
        self.force_full = force_full;
        self
    }

    pub fn with_scan(mut self, scan: ScanPath) -> Self {
        self.scan = scan;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn validate(&self, channel: &ChannelMatrix) -> Result<()> {
        let (n, k) = (channel.n_antennas(), channel.n_users());
        if self.l_max == 0 || self.l_max > n {
            return Err(TasError::invalid(format!("l_max must lie in 1..={n}, got {}", self.l_max)));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(TasError::invalid(format!("p_max must be finite and > 0, got {}", self.p_max)));
        }
        if self.measure.users() != k {
            return Err(TasError::invalid(format!(
                "measure has {} weights for {k} users",
                self.measure.users()
            )));
        }
        if self.precoder.kind() == PrecoderKind::Zf && self.l_max < k {
            return Err(TasError::RankDeficient {
                level: self.l_max,
                users: k,
            });
        }
        if self.search.grid < 2 {
            return Err(TasError::invalid("power grid needs at least 2 points"));
        }
        Ok(())
    }

    /// Zero forcing keeps growing through the bootstrap phase regardless of
    /// the gain sign.
    fn must_grow(&self, level: usize, users: usize) -> bool {
        self.precoder.kind() == PrecoderKind::Zf && level < users
    }
}

#[derive(Debug, Clone)]
pub struct SelectionState {
    /// 1-based antenna indices in selection order.
    selected: Vec<usize>,
    precoder: PrecoderState,
    stats: LinkStats,
    power: f64,
    value: f64,
}

impl SelectionState {
    pub fn level(&self) -> usize {
        self.selected.len()
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn precoder(&self) -> &PrecoderState {
        &self.precoder
    }

    pub fn stats(&self) -> &LinkStats {
        &self.stats
    }

    /// `P_ℓ` in Watts.
    pub fn power(&self) -> f64 {
        self.power
    }

    /// `M(ℓ, P_ℓ)`.
    pub fn value(&self) -> f64 {
        self.value
    }

    fn contains(&self, antenna: usize) -> bool {
        self.selected.contains(&antenna)
    }
}

/// Per-step quantities that do not depend on the candidate.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub phi: Vec<f64>,
    /// `M(ℓ, P_ℓ)`.
    pub measure_value: f64,
    /// `Q(ℓ, P_ℓ)`; energy efficiency only.
    pub q_current: Option<f64>,
}

impl StepContext {
    pub fn new(state: &SelectionState, measure: &Measure) -> Self {
        let p = state.power;
        let phi = state
            .stats
            .t
            .iter()
            .zip(&state.stats.u)
            .map(|(&t, &u)| phi(t, u, p))
            .collect();
        Self {
            phi,
            measure_value: measure.value(&state.stats, state.level(), p),
            q_current: measure.consumed(state.level(), p),
        }
    }
}

/// `φ_k(ℓ, P)`.
pub fn phi(t: f64, u: f64, p: f64) -> f64 {
    (1.0 + u * p) / (1.0 + (u + t) * p)
}

/// `θ_k(ℓ, n, P)`.
pub fn theta(mu: f64, t: f64, u: f64, epsilon: f64, psi: f64, p: f64) -> f64 {
    1.0 + (mu * t + epsilon) * p / (1.0 + (mu * u + psi) * p)
}

#[derive(Debug, Clone)]
pub struct CandidateEval {
    /// 1-based antenna index.
    pub antenna: usize,
    pub update: RankOneUpdate,
    pub epsilon: Vec<f64>,
    pub psi: Vec<f64>,
    pub theta: Vec<f64>,
    /// `Θ(ℓ, n, P_ℓ)`; `-∞` when a `θ_k φ_k` product was not positive.
    pub gain: f64,
    pub guarded: bool,
}

/// Exact objective change from adding `antenna` at the current power.
pub fn candidate_gain(
    channel: &ChannelMatrix,
    state: &SelectionState,
    ctx: &StepContext,
    antenna: usize,
    config: &AlgoConfig,
) -> Result<CandidateEval> {
    let g = channel.row(antenna)?;
    if state.contains(antenna) {
        return Err(TasError::invalid(format!("antenna {antenna} is already selected")));
    }
    let update = match config.scan {
        ScanPath::RankOne => state.precoder.grow(&g)?,
        ScanPath::Naive => direct_update(&state.precoder, &g, next_spec(&state.precoder))?,
    };
    Ok(gain_from_update(state, ctx, antenna, &g, update, &config.measure))
}

/// Rule the grown state will follow.
fn next_spec(p: &PrecoderState) -> PrecoderSpec {
    if p.in_bootstrap() && p.level() + 1 < p.users() {
        p.spec()
    } else {
        p.target()
    }
}

fn gain_from_update(
    state: &SelectionState,
    ctx: &StepContext,
    antenna: usize,
    g: &CVector,
    update: RankOneUpdate,
    measure: &Measure,
) -> CandidateEval {
    let k = state.stats.users();
    let p = state.power;
    let mu = update.mu();
    let sqrt_mu = mu.sqrt();
    let coupling = state.precoder.coupling();
    let delta = update.coupling_increment(&state.precoder, g);

    let mut epsilon = Vec::with_capacity(k);
    let mut psi = Vec::with_capacity(k);
    let mut theta_v = Vec::with_capacity(k);
    let mut log_sum = 0.0;
    let mut guarded = false;
    for i in 0..k {
        let mut e = 0.0;
        let mut s = 0.0;
        for j in 0..k {
            let d = delta[(i, j)];
            let cross = 2.0 * (coupling[(i, j)] * d.conj()).re * sqrt_mu;
            if i == j {
                e = d.norm_sqr() + cross;
            } else {
                s += d.norm_sqr() + cross;
            }
        }
        let (t, u) = (state.stats.t[i], state.stats.u[i]);
        let th = theta(mu, t, u, e, s, p);
        // θφ as a ratio of four `1 + x·P` factors, paired so that an
        // unchanged link cancels to exactly zero.
        let num = (mu * (u + t) + e + s) * p;
        let den = (mu * u + s) * p;
        if num > -1.0 && den > -1.0 && th.is_finite() {
            let ln = (num.ln_1p() - ((u + t) * p).ln_1p()) + ((u * p).ln_1p() - den.ln_1p());
            log_sum += measure.weights()[i] * ln / std::f64::consts::LN_2;
        } else {
            guarded = true;
        }
        epsilon.push(e);
        psi.push(s);
        theta_v.push(th);
    }
    let rate_gain = log_sum / k as f64;
    let gain = if guarded {
        f64::NEG_INFINITY
    } else {
        match (measure.kind(), measure.power_model(), ctx.q_current) {
            (MeasureKind::EnergyEfficiency, Some(pm), Some(q)) => {
                (rate_gain - pm.q_tx() * ctx.measure_value) / (q + pm.q_tx())
            }
            _ => rate_gain,
        }
    };
    CandidateEval {
        antenna,
        update,
        epsilon,
        psi,
        theta: theta_v,
        gain,
        guarded,
    }
}

/// Outcome of scanning all remaining candidates.
#[derive(Debug, Clone)]
pub enum Selection {
    Accept(CandidateEval),
    /// Best gain was not positive; carries the best candidate when one was
    /// feasible.
    Stop(Option<CandidateEval>),
}

/// Picks `argmax_n Θ(ℓ, n, P_ℓ)` over unselected antennas (ties: lowest
/// index) and applies the stopping rule.
pub fn select_next(
    channel: &ChannelMatrix,
    state: &SelectionState,
    ctx: &StepContext,
    config: &AlgoConfig,
) -> Result<Selection> {
    let candidates: Vec<usize> = (1..=channel.n_antennas())
        .filter(|a| !state.contains(*a))
        .collect();
    if candidates.is_empty() {
        return Err(TasError::Exhausted);
    }
    let evals = map_slice(&candidates, config.execution, |&a| {
        candidate_gain(channel, state, ctx, a, config)
    });
    let mut best: Option<CandidateEval> = None;
    for eval in evals {
        let eval = match eval {
            Ok(e) => e,
            // A candidate that makes the grown system singular is skipped.
            Err(TasError::RankDeficient { .. } | TasError::DegenerateChannel) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| eval.gain > b.gain) {
            best = Some(eval);
        }
    }
    let users = channel.n_users();
    match best {
        Some(b) if b.gain > 0.0 || config.force_full || config.must_grow(state.level(), users) => {
            Ok(Selection::Accept(b))
        }
        Some(b) => Ok(Selection::Stop(Some(b))),
        None if config.force_full || config.must_grow(state.level(), users) => Err(TasError::Exhausted),
        None => Ok(Selection::Stop(None)),
    }
}

/// First antenna (strongest row), its precoder and `P₁`.
pub fn initialize(channel: &ChannelMatrix, config: &AlgoConfig) -> Result<SelectionState> {
    config.validate(channel)?;
    let norms = channel.row_norms_sqr();
    let (best, &norm) = norms
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, &f64)>, (i, v)| match acc {
            Some((_, b)) if *v <= *b => acc,
            _ => Some((i, v)),
        })
        .expect("channel has at least one row");
    if norm == 0.0 {
        return Err(TasError::DegenerateChannel);
    }
    let antenna = best + 1;
    let h1 = channel.submatrix(&[antenna])?;
    let precoder = PrecoderState::start(&h1, config.precoder, config.zf_bootstrap_lambda)?;
    Ok(settle(vec![antenna], precoder, config))
}

fn settle(selected: Vec<usize>, precoder: PrecoderState, config: &AlgoConfig) -> SelectionState {
    let stats = LinkStats::from_coupling(precoder.coupling());
    let level = selected.len();
    let choice = optimize_power(&config.measure, &stats, level, config.p_max, &config.search);
    SelectionState {
        selected,
        precoder,
        stats,
        power: choice.power,
        value: choice.value,
    }
}

/// Adds the chosen candidate and re-optimizes the power.
pub fn apply_step(
    channel: &ChannelMatrix,
    state: &SelectionState,
    chosen: &CandidateEval,
    config: &AlgoConfig,
) -> Result<SelectionState> {
    let g = channel.row(chosen.antenna)?;
    let precoder = apply_update(&state.precoder, &g, &chosen.update)?;
    let mut selected = state.selected.clone();
    selected.push(chosen.antenna);
    Ok(settle(selected, precoder, config))
}

/// One row of the per-step trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    /// `ℓ` after this step.
    pub level: usize,
    /// 1-based antenna added at this step.
    pub antenna: usize,
    /// `Θ⋆` that admitted the antenna; absent for the initial antenna.
    pub gain: Option<f64>,
    /// `P_ℓ`, Watts.
    pub power: f64,
    /// `M(ℓ, P_ℓ)`.
    pub measure: f64,
    /// `M(ℓ, P_{ℓ-1})`: the objective right after selection, before the
    /// power is re-optimized.
    pub measure_before_power: Option<f64>,
}

/// Best rejected candidate when the run stopped on a non-positive gain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StopRecord {
    pub level: usize,
    pub antenna: Option<usize>,
    pub gain: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionResult {
    pub l_star: usize,
    /// Watts.
    pub p_star: f64,
    pub value: f64,
    /// 1-based indices in selection order.
    pub selected: Vec<usize>,
    pub trajectory: Vec<StepRecord>,
    pub stop: Option<StopRecord>,
    /// Candidates whose gain was replaced by `-∞`.
    pub guard_events: usize,
    /// Candidate evaluations performed.
    pub candidates_scanned: usize,
}

impl SelectionResult {
    pub fn selected_sorted(&self) -> Vec<usize> {
        let mut s = self.selected.clone();
        s.sort_unstable();
        s
    }

    /// Outcome the default (non-forced) algorithm reaches with `l_max`,
    /// read off a forced trajectory: the run stops at the first level whose
    /// next accepted gain is not positive. Requires `self` to come from a
    /// forced run that reached at least `l_max`.
    pub fn proposed_prefix(&self, l_max: usize, config: &AlgoConfig, users: usize) -> Result<Outcome> {
        if l_max == 0 || l_max > self.l_star {
            return Err(TasError::invalid(format!(
                "trajectory has {} levels, cannot emulate l_max = {l_max}",
                self.l_star
            )));
        }
        let mut level = 1;
        while level < l_max {
            let next = &self.trajectory[level];
            let positive = next.gain.is_some_and(|g| g > 0.0);
            if !positive && !config.must_grow(level, users) {
                break;
            }
            level += 1;
        }
        Ok(self.outcome_at(level))
    }

    /// State of the trajectory after `level` antennas.
    pub fn outcome_at(&self, level: usize) -> Outcome {
        let rec = &self.trajectory[level - 1];
        Outcome {
            l_star: level,
            p_star: rec.power,
            value: rec.measure,
            selected: self.selected[..level].to_vec(),
        }
    }
}

/// `(L⋆, P⋆, M, S)` of a finished selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub l_star: usize,
    pub p_star: f64,
    pub value: f64,
    pub selected: Vec<usize>,
}

/// Runs the full iterative selection and power control.
pub fn run(channel: &ChannelMatrix, config: &AlgoConfig) -> Result<SelectionResult> {
    let mut state = initialize(channel, config)?;
    let mut trajectory = vec![StepRecord {
        level: 1,
        antenna: state.selected[0],
        gain: None,
        power: state.power,
        measure: state.value,
        measure_before_power: None,
    }];
    let mut stop = None;
    let mut guard_events = 0;
    let mut scanned = 0;
    while state.level() < config.l_max {
        let ctx = StepContext::new(&state, &config.measure);
        scanned += channel.n_antennas() - state.level();
        let chosen = match select_next(channel, &state, &ctx, config)? {
            Selection::Accept(c) => c,
            Selection::Stop(best) => {
                stop = Some(StopRecord {
                    level: state.level(),
                    antenna: best.as_ref().map(|b| b.antenna),
                    gain: best.map_or(f64::NEG_INFINITY, |b| b.gain),
                });
                break;
            }
        };
        guard_events += usize::from(chosen.guarded);
        let before = state.power;
        state = apply_step(channel, &state, &chosen, config)?;
        trajectory.push(StepRecord {
            level: state.level(),
            antenna: chosen.antenna,
            gain: Some(chosen.gain),
            power: state.power,
            measure: state.value,
            measure_before_power: Some(config.measure.value(&state.stats, state.level(), before)),
        });
    }
    Ok(SelectionResult {
        l_star: state.level(),
        p_star: state.power,
        value: state.value,
        selected: state.selected,
        trajectory,
        stop,
        guard_events,
        candidates_scanned: scanned,
    })
}

/// Trajectory as JSON Lines, one record per step.
pub fn trajectory_jsonl(result: &SelectionResult) -> String {
    let mut out = String::new();
    for rec in &result.trajectory {
        out.push_str(&serde_json::to_string(rec).expect("trajectory serialization is infallible"));
        out.push('\n');
    }
    out
}
