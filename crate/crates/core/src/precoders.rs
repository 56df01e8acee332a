//! MRT, ZF and RZF precoders, built directly or grown one antenna at a time.
//!
//! With `H` the `ℓ×K` channel of the selected antennas and
//! `J(λ) = HᵀH* + λI`:
//!
//! * MRT: `A = β H*`, `β = tr(H*Hᵀ)^{-1/2}`
//! * RZF: `A = β H* J(λ)⁻¹`, `β = tr(J(λ)⁻² J(0))^{-1/2}`
//! * ZF:  RZF with `λ = 0`
//!
//! `J` is kept in this conjugated form throughout, so appending the row `gᵀ`
//! adds `g gᴴ` and the Sherman–Morrison step is `J⁻¹ ← J⁻¹ − r rᴴ` with
//! `r = J⁻¹g / √(1 + gᴴJ⁻¹g)`. Every grown state satisfies
//! `A_{ℓ+1} = [√μ A_ℓ + D; bᵀ]`.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TasError};
use crate::linalg::{
    append_row, frobenius_sqr, gram, hermitian_inverse, identity, inner, min_eigenvalue, trace_re,
    zeros, CMatrix, CVector,
};

/// Rank-one updates between full recomputations of `J(λ)⁻¹`.
pub const REFRESH_INTERVAL: usize = 64;

/// `J(0)` counts as singular when its smallest eigenvalue is at most this
/// fraction of its mean eigenvalue.
pub const SINGULARITY_THRESHOLD: f64 = 1e-10;

/// Default ridge used while zero forcing has fewer antennas than users.
pub const DEFAULT_ZF_BOOTSTRAP_LAMBDA: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecoderKind {
    Mrt,
    Zf,
    Rzf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PrecoderSpecRepr", into = "PrecoderSpecRepr")]
pub struct PrecoderSpec {
    kind: PrecoderKind,
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
struct PrecoderSpecRepr {
    kind: PrecoderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
}

impl TryFrom<PrecoderSpecRepr> for PrecoderSpec {
    type Error = TasError;

    fn try_from(r: PrecoderSpecRepr) -> Result<Self> {
        match (r.kind, r.lambda) {
            (PrecoderKind::Mrt, None) => Ok(Self::mrt()),
            (PrecoderKind::Zf, None | Some(0.0)) => Ok(Self::zero_forcing()),
            (PrecoderKind::Rzf, Some(l)) => Self::regularized(l),
            (PrecoderKind::Rzf, None) => Err(TasError::invalid("rzf requires lambda > 0")),
            (kind, Some(_)) => Err(TasError::invalid(format!("{kind:?} takes no lambda"))),
        }
    }
}

impl From<PrecoderSpec> for PrecoderSpecRepr {
    fn from(s: PrecoderSpec) -> Self {
        PrecoderSpecRepr {
            kind: s.kind,
            lambda: (s.kind == PrecoderKind::Rzf).then_some(s.lambda),
        }
    }
}

impl PrecoderSpec {
    pub const fn mrt() -> Self {
        Self {
            kind: PrecoderKind::Mrt,
            lambda: 0.0,
        }
    }

    pub const fn zero_forcing() -> Self {
        Self {
            kind: PrecoderKind::Zf,
            lambda: 0.0,
        }
    }

    pub fn regularized(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(TasError::invalid(format!("rzf requires finite lambda > 0, got {lambda}")));
        }
        Ok(Self {
            kind: PrecoderKind::Rzf,
            lambda,
        })
    }

    pub fn kind(&self) -> PrecoderKind {
        self.kind
    }

    /// Ridge term; zero for MRT and ZF.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PrecoderKind::Mrt => "mrt",
            PrecoderKind::Zf => "zf",
            PrecoderKind::Rzf => "rzf",
        }
    }
}

impl std::fmt::Display for PrecoderSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            PrecoderKind::Rzf => write!(f, "rzf(lambda={})", self.lambda),
            _ => f.write_str(self.name()),
        }
    }
}

/// Precoder for the currently selected antennas plus the bookkeeping that
/// makes appending one more antenna cheap.
#[derive(Debug, Clone)]
pub struct PrecoderState {
    /// Rule `a_matrix` follows at this level.
    spec: PrecoderSpec,
    /// Rule requested by the caller; differs from `spec` only during the
    /// zero-forcing bootstrap.
    target: PrecoderSpec,
    h: CMatrix,
    a: CMatrix,
    beta: f64,
    j_inv: Option<CMatrix>,
    j_zero: Option<CMatrix>,
    /// `HᵀA` (K×K); its entries are the `h_kᵀ a_j` products behind SINR.
    coupling: CMatrix,
    since_refresh: usize,
}

impl PrecoderState {
    pub fn level(&self) -> usize {
        self.h.nrows()
    }

    pub fn users(&self) -> usize {
        self.h.ncols()
    }

    pub fn spec(&self) -> PrecoderSpec {
        self.spec
    }

    pub fn target(&self) -> PrecoderSpec {
        self.target
    }

    pub fn in_bootstrap(&self) -> bool {
        self.spec != self.target
    }

    pub fn h_matrix(&self) -> &CMatrix {
        &self.h
    }

    pub fn a_matrix(&self) -> &CMatrix {
        &self.a
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn j_inv(&self) -> Option<&CMatrix> {
        self.j_inv.as_ref()
    }

    pub fn j_zero(&self) -> Option<&CMatrix> {
        self.j_zero.as_ref()
    }

    pub fn coupling(&self) -> &CMatrix {
        &self.coupling
    }

    /// `|tr(AAᴴ) − 1|`.
    pub fn normalization_error(&self) -> f64 {
        (frobenius_sqr(&self.a) - 1.0).abs()
    }

    /// Starting state for a greedy run. Zero forcing with fewer rows than
    /// users is bootstrapped with RZF(`bootstrap_lambda`); the state switches
    /// to exact ZF once it has `K` rows.
    pub fn start(h: &CMatrix, spec: PrecoderSpec, bootstrap_lambda: f64) -> Result<Self> {
        if spec.kind == PrecoderKind::Zf && h.nrows() < h.ncols() {
            let boot = PrecoderSpec::regularized(bootstrap_lambda)?;
            let mut state = precode_direct(h, boot)?;
            state.target = spec;
            Ok(state)
        } else {
            precode_direct(h, spec)
        }
    }

    /// Update quantities for appending `g`, choosing the route the state
    /// needs: rank-one normally, direct rebuild during the ZF bootstrap or
    /// when the rank-one step loses positive definiteness.
    ///
    /// Bootstrap states carry a tiny ridge on a rank-deficient `J(0)`, so
    /// `J⁻¹` is of order `1/λ_boot` and the rank-one formulas lose about
    /// nine digits there. The bootstrap lasts fewer than `K` steps.
    pub fn grow(&self, g: &CVector) -> Result<RankOneUpdate> {
        if self.in_bootstrap() {
            let spec = if self.level() + 1 >= self.users() { self.target } else { self.spec };
            return direct_update(self, g, spec);
        }
        match rank_one_update(self, g) {
            Err(TasError::NumericalDegeneracy(_)) => direct_update(self, g, self.target),
            other => other,
        }
    }

    fn rebuild(&self, h: &CMatrix, spec: PrecoderSpec) -> Result<Self> {
        let mut s = precode_direct(h, spec)?;
        s.target = self.target;
        Ok(s)
    }
}

/// How `D(ℓ,n)` is represented.
#[derive(Debug, Clone)]
enum Correction {
    /// MRT: `D = 0`.
    Zero,
    /// `D = scale · H* r rᴴ`.
    Outer { scale: f64 },
    /// Explicit matrix from a direct rebuild.
    Dense(CMatrix),
}

/// Quantities describing `A_{ℓ+1} = [√μ A_ℓ + D; bᵀ]` for one candidate row.
#[derive(Debug, Clone)]
pub struct RankOneUpdate {
    mu: f64,
    correction: Correction,
    b: CVector,
    r: Option<CVector>,
    /// `J(0) r`, reused for `HᵀD`.
    j0_r: Option<CVector>,
    delta: Option<f64>,
    rebuilt: Option<Box<PrecoderState>>,
}

impl RankOneUpdate {
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn b_vector(&self) -> &CVector {
        &self.b
    }

    pub fn r_vector(&self) -> Option<&CVector> {
        self.r.as_ref()
    }

    /// `Δ(ℓ,n;λ)`, the increment of `1/β²` (regularized precoders only).
    pub fn delta(&self) -> Option<f64> {
        self.delta
    }

    /// True when the update came from recomputing the grown precoder.
    pub fn is_direct(&self) -> bool {
        self.rebuilt.is_some()
    }

    /// Materializes `D(ℓ,n)` (ℓ×K).
    pub fn d_matrix(&self, state: &PrecoderState) -> CMatrix {
        match &self.correction {
            Correction::Zero => zeros(state.level(), state.users()),
            Correction::Outer { scale } => {
                let r = self.r.as_ref().expect("outer correction carries r");
                (state.h.map(|z| z.conj()) * r) * r.adjoint() * Complex::from(*scale)
            }
            Correction::Dense(d) => d.clone(),
        }
    }

    /// `δ = HᵀD + g bᵀ` (K×K), so that `H_{ℓ+1}ᵀA_{ℓ+1} = √μ HᵀA + δ`.
    pub fn coupling_increment(&self, state: &PrecoderState, g: &CVector) -> CMatrix {
        let mut delta = g * self.b.transpose();
        match &self.correction {
            Correction::Zero => {}
            Correction::Outer { scale } => {
                let r = self.r.as_ref().expect("outer correction carries r");
                let v = self.j0_r.as_ref().expect("outer correction carries J(0)r");
                delta += v * r.adjoint() * Complex::from(*scale);
            }
            Correction::Dense(d) => delta += state.h.transpose() * d,
        }
        delta
    }
}

/// Builds the precoder for `h` from scratch.
pub fn precode_direct(h: &CMatrix, spec: PrecoderSpec) -> Result<PrecoderState> {
    let (l, k) = h.shape();
    if l == 0 || k == 0 {
        return Err(TasError::invalid("precoder needs at least one antenna and one user"));
    }
    if frobenius_sqr(h) == 0.0 {
        return Err(TasError::DegenerateChannel);
    }
    match spec.kind {
        PrecoderKind::Mrt => Ok(mrt_direct(h, spec)),
        PrecoderKind::Zf | PrecoderKind::Rzf => regularized_direct(h, spec),
    }
}

fn mrt_direct(h: &CMatrix, spec: PrecoderSpec) -> PrecoderState {
    let beta = frobenius_sqr(h).sqrt().recip();
    let a = h.map(|z| z.conj() * beta);
    let coupling = h.transpose() * &a;
    PrecoderState {
        spec,
        target: spec,
        h: h.clone(),
        a,
        beta,
        j_inv: None,
        j_zero: None,
        coupling,
        since_refresh: 0,
    }
}

/// RZF for any `λ ≥ 0`; `λ = 0` is zero forcing.
/// RZF rule at any ridge `λ ≥ 0` through the regularized code path, so
/// `λ = 0` can be checked against ZF.
pub fn rzf_direct(h: &CMatrix, lambda: f64) -> Result<PrecoderState> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(TasError::invalid(format!("ridge must be finite and >= 0, got {lambda}")));
    }
    if h.nrows() == 0 || h.ncols() == 0 {
        return Err(TasError::invalid("precoder needs at least one antenna and one user"));
    }
    regularized_direct(h, PrecoderSpec { kind: PrecoderKind::Rzf, lambda })
}

fn regularized_direct(h: &CMatrix, spec: PrecoderSpec) -> Result<PrecoderState> {
    let (l, k) = h.shape();
    let lambda = spec.lambda;
    let j0 = gram(h);
    if lambda == 0.0 && min_eigenvalue(&j0) <= SINGULARITY_THRESHOLD * trace_re(&j0) / k as f64 {
        return Err(TasError::RankDeficient { level: l, users: k });
    }
    let j = &j0 + identity(k) * Complex::from(lambda);
    let j_inv = hermitian_inverse(&j).ok_or(TasError::RankDeficient { level: l, users: k })?;
    let h_conj = h.map(|z| z.conj());
    // H*J⁻¹ = (H*Hᵀ + λI)⁻¹H*; the ℓ×ℓ form avoids the large entries J⁻¹
    // has off the row space of H when ℓ < K.
    let unscaled = if l < k {
        let outer = &h_conj * h.transpose() + identity(l) * Complex::from(lambda);
        hermitian_inverse(&outer).ok_or(TasError::RankDeficient { level: l, users: k })? * &h_conj
    } else {
        &h_conj * &j_inv
    };
    let inv_beta_sqr = frobenius_sqr(&unscaled);
    if !(inv_beta_sqr > 0.0 && inv_beta_sqr.is_finite()) {
        return Err(TasError::DegenerateChannel);
    }
    let beta = inv_beta_sqr.sqrt().recip();
    let a = unscaled * Complex::from(beta);
    let coupling = h.transpose() * &a;
    Ok(PrecoderState {
        spec,
        target: spec,
        h: h.clone(),
        a,
        beta,
        j_inv: Some(j_inv),
        j_zero: Some(j0),
        coupling,
        since_refresh: 0,
    })
}

/// Closed-form update quantities for appending the row `gᵀ` under the
/// state's current rule.
pub fn rank_one_update(state: &PrecoderState, g: &CVector) -> Result<RankOneUpdate> {
    if g.len() != state.users() {
        return Err(TasError::invalid(format!(
            "candidate row has {} entries, expected {}",
            g.len(),
            state.users()
        )));
    }
    match state.spec.kind {
        PrecoderKind::Mrt => Ok(mrt_update(state, g)),
        PrecoderKind::Zf | PrecoderKind::Rzf => regularized_update(state, g),
    }
}

fn mrt_update(state: &PrecoderState, g: &CVector) -> RankOneUpdate {
    let beta = state.beta;
    let mu = (1.0 + beta * beta * g.norm_squared()).recip();
    let b = g.map(|z| z.conj() * (beta * mu.sqrt()));
    RankOneUpdate {
        mu,
        correction: Correction::Zero,
        b,
        r: None,
        j0_r: None,
        delta: None,
        rebuilt: None,
    }
}

fn regularized_update(state: &PrecoderState, g: &CVector) -> Result<RankOneUpdate> {
    let m = state.j_inv.as_ref().expect("regularized state keeps J(λ)⁻¹");
    let beta = state.beta;

    let mg = m * g;
    let quad = inner(g, &mg).re;
    if quad < -1e-12 {
        return Err(TasError::NumericalDegeneracy(format!("gᴴJ⁻¹g = {quad:e} < 0")));
    }
    let s = 1.0 + quad.max(0.0);
    let r = mg / Complex::from(s.sqrt());
    let r_sqr = r.norm_squared();
    let lambda = state.spec.lambda;
    // J r = g/√s and J⁻¹J(0) = I − λJ⁻¹ keep J(0) out of the formulas, which
    // matters when a small ridge makes J⁻¹ huge off the row space of H.
    let v = g / Complex::from(s.sqrt()) - &r * Complex::from(lambda);
    let r_m_r = if lambda == 0.0 { 0.0 } else { inner(&r, &(m * &r)).re };
    let delta = -r_sqr - lambda * r_sqr * r_sqr + 2.0 * lambda * r_m_r;

    let denom = 1.0 + beta * beta * delta;
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(TasError::NumericalDegeneracy(format!("1 + β²Δ = {denom:e}")));
    }
    let mu = denom.recip();

    #[cfg(debug_assertions)]
    check_delta(m, state.j_zero.as_ref().expect("regularized state keeps J(0)"), g, &r, beta, delta);

    let b = r.map(|z| z.conj() * (beta * beta * mu / s).sqrt());
    Ok(RankOneUpdate {
        mu,
        // J_{ℓ+1}⁻¹ = J⁻¹ − r rᴴ puts a minus sign on the H* r rᴴ term.
        correction: Correction::Outer {
            scale: -beta * mu.sqrt(),
        },
        b,
        r: Some(r),
        j0_r: Some(v),
        delta: Some(delta),
        rebuilt: None,
    })
}

/// Compares the closed-form `Δ` with `tr(J_{ℓ+1}⁻² J_{ℓ+1}(0)) − 1/β²`.
#[cfg(debug_assertions)]
fn check_delta(m: &CMatrix, j0: &CMatrix, g: &CVector, r: &CVector, beta: f64, delta: f64) {
    let m_next = m - r * r.adjoint();
    let j0_next = j0 + g * g.adjoint();
    let direct = trace_re(&(&m_next * &m_next * j0_next));
    let before = (beta * beta).recip();
    let scale = before.abs() + delta.abs() + direct.abs();
    debug_assert!(
        (before + delta - direct).abs() <= 1e-6 * scale,
        "Δ mismatch: 1/β² + Δ = {} but direct = {direct}",
        before + delta
    );
}

/// Update quantities obtained by recomputing the grown precoder under
/// `next_spec` (with `μ = 1`, `D = A_{ℓ+1}[..ℓ] − A_ℓ`).
pub fn direct_update(
    state: &PrecoderState,
    g: &CVector,
    next_spec: PrecoderSpec,
) -> Result<RankOneUpdate> {
    if g.len() != state.users() {
        return Err(TasError::invalid(format!(
            "candidate row has {} entries, expected {}",
            g.len(),
            state.users()
        )));
    }
    let h_next = append_row(&state.h, g.iter().copied());
    let next = state.rebuild(&h_next, next_spec)?;
    let l = state.level();
    let d = next.a.rows(0, l) - &state.a;
    let b = next.a.row(l).transpose();
    Ok(RankOneUpdate {
        mu: 1.0,
        correction: Correction::Dense(d),
        b,
        r: None,
        j0_r: None,
        delta: None,
        rebuilt: Some(Box::new(next)),
    })
}

/// Grows `state` by the row `gᵀ` using `upd` (which must come from the same
/// `state` and `g`).
pub fn apply_update(state: &PrecoderState, g: &CVector, upd: &RankOneUpdate) -> Result<PrecoderState> {
    if let Some(next) = &upd.rebuilt {
        return Ok((**next).clone());
    }
    let sqrt_mu = upd.mu.sqrt();
    let h = append_row(&state.h, g.iter().copied());
    let top = &state.a * Complex::from(sqrt_mu) + upd.d_matrix(state);
    let mut a = append_row(&top, upd.b.iter().copied());
    let mut coupling = &state.coupling * Complex::from(sqrt_mu) + upd.coupling_increment(state, g);
    // Rounding in ill-conditioned J (the ZF bootstrap) lets tr(AAᴴ) drift;
    // pull it back to 1 so errors do not accumulate along the chain.
    let fix = frobenius_sqr(&a).sqrt().recip();
    a *= Complex::from(fix);
    coupling *= Complex::from(fix);

    let (j_inv, j_zero) = match (&state.j_inv, &state.j_zero, &upd.r) {
        (Some(m), Some(j0), Some(r)) => (Some(m - r * r.adjoint()), Some(j0 + g * g.adjoint())),
        _ => (None, None),
    };
    let mut next = PrecoderState {
        spec: state.spec,
        target: state.target,
        h,
        a,
        beta: state.beta * sqrt_mu * fix,
        j_inv,
        j_zero,
        coupling,
        since_refresh: state.since_refresh + 1,
    };
    if next.since_refresh >= REFRESH_INTERVAL {
        next.refresh()?;
    }
    Ok(next)
}

impl PrecoderState {
    /// Recomputes `J(λ)⁻¹` from `J(0)`.
    fn refresh(&mut self) -> Result<()> {
        if let Some(j0) = &self.j_zero {
            let k = self.users();
            let j = j0 + identity(k) * Complex::from(self.spec.lambda);
            self.j_inv = Some(hermitian_inverse(&j).ok_or(TasError::RankDeficient {
                level: self.level(),
                users: k,
            })?);
        }
        self.since_refresh = 0;
        Ok(())
    }
}
