//! Rates, consumed power and the two objectives (weighted spectral
//! efficiency and energy efficiency).
//!
//! Transmit power `p` is in Watts on a channel normalized to unit noise
//! variance; rates are in bits/s/Hz and energy efficiency in bits/Joule
//! under a 1 Hz bandwidth convention.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TasError};
use crate::linalg::CMatrix;

/// Circuit power model: `Q = ξp + ℓ·q_tx + K·q_rx + (K+1)·q_sync`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PowerModelRepr", into = "PowerModelRepr")]
pub struct PowerModel {
    xi: f64,
    q_tx: f64,
    q_rx: f64,
    q_sync: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerModelRepr {
    xi: f64,
    q_tx: f64,
    q_rx: f64,
    q_sync: f64,
}

impl TryFrom<PowerModelRepr> for PowerModel {
    type Error = TasError;

    fn try_from(r: PowerModelRepr) -> Result<Self> {
        PowerModel::new(r.xi, r.q_tx, r.q_rx, r.q_sync)
    }
}

impl From<PowerModel> for PowerModelRepr {
    fn from(m: PowerModel) -> Self {
        PowerModelRepr {
            xi: m.xi,
            q_tx: m.q_tx,
            q_rx: m.q_rx,
            q_sync: m.q_sync,
        }
    }
}

impl PowerModel {
    /// `xi` is the inverse amplifier efficiency; the rest are Watts.
    pub fn new(xi: f64, q_tx: f64, q_rx: f64, q_sync: f64) -> Result<Self> {
        if !(xi.is_finite() && xi >= 1.0) {
            return Err(TasError::invalid(format!("xi must be finite and >= 1, got {xi}")));
        }
        for (name, v) in [("q_tx", q_tx), ("q_rx", q_rx), ("q_sync", q_sync)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TasError::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self { xi, q_tx, q_rx, q_sync })
    }

    /// Amplifier efficiency 0.4, 48 mW per RF chain, 62 mW per oscillator.
    pub fn reference() -> Self {
        Self {
            xi: 2.5,
            q_tx: 0.048,
            q_rx: 0.048,
            q_sync: 0.062,
        }
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn q_tx(&self) -> f64 {
        self.q_tx
    }

    pub fn q_rx(&self) -> f64 {
        self.q_rx
    }

    pub fn q_sync(&self) -> f64 {
        self.q_sync
    }
}

/// Total consumed power in Watts.
pub fn consumed_power(ell: usize, p: f64, model: &PowerModel, k_users: usize) -> f64 {
    model.xi * p
        + ell as f64 * model.q_tx
        + k_users as f64 * model.q_rx
        + (k_users + 1) as f64 * model.q_sync
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasureKind {
    #[serde(rename = "se")]
    SpectralEfficiency,
    #[serde(rename = "ee")]
    EnergyEfficiency,
}

/// Objective to maximize: weighted average rate, optionally per Watt.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    kind: MeasureKind,
    weights: Vec<f64>,
    power_model: Option<PowerModel>,
}

impl Measure {
    pub fn spectral_efficiency(weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights)?;
        Ok(Self {
            kind: MeasureKind::SpectralEfficiency,
            weights,
            power_model: None,
        })
    }

    pub fn energy_efficiency(weights: Vec<f64>, power_model: PowerModel) -> Result<Self> {
        check_weights(&weights)?;
        Ok(Self {
            kind: MeasureKind::EnergyEfficiency,
            weights,
            power_model: Some(power_model),
        })
    }

    /// Unit weights for `k` users.
    pub fn uniform(kind: MeasureKind, k: usize, power_model: PowerModel) -> Result<Self> {
        match kind {
            MeasureKind::SpectralEfficiency => Self::spectral_efficiency(vec![1.0; k]),
            MeasureKind::EnergyEfficiency => Self::energy_efficiency(vec![1.0; k], power_model),
        }
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn power_model(&self) -> Option<&PowerModel> {
        self.power_model.as_ref()
    }

    pub fn users(&self) -> usize {
        self.weights.len()
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            MeasureKind::SpectralEfficiency => "se",
            MeasureKind::EnergyEfficiency => "ee",
        }
    }

    /// `(1/K) Σ w_k R_k`, no validation.
    #[inline]
    pub fn weighted_rate(&self, stats: &LinkStats, p: f64) -> f64 {
        let sum: f64 = self
            .weights
            .iter()
            .zip(stats.t.iter().zip(&stats.u))
            .map(|(w, (t, u))| w * (t * p / (1.0 + u * p)).ln_1p())
            .sum();
        sum / (std::f64::consts::LN_2 * self.weights.len() as f64)
    }

    /// `Q(ℓ, p)` for energy efficiency, `None` for spectral efficiency.
    pub fn consumed(&self, ell: usize, p: f64) -> Option<f64> {
        self.power_model
            .as_ref()
            .map(|m| consumed_power(ell, p, m, self.weights.len()))
    }

    /// Objective value without argument checks; used inside searches.
    #[inline]
    pub fn value(&self, stats: &LinkStats, ell: usize, p: f64) -> f64 {
        let rate = self.weighted_rate(stats, p);
        match self.consumed(ell, p) {
            Some(q) => rate / q,
            None => rate,
        }
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(TasError::invalid("weight vector is empty"));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(TasError::invalid(format!("weights must be finite and > 0, got {w}")));
    }
    Ok(())
}

/// Per-user signal and interference coefficients `t_k`, `u_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub t: Vec<f64>,
    pub u: Vec<f64>,
}

impl LinkStats {
    /// From the `K×K` matrix `C = HᵀA`: `t_k = |C_kk|²`, `u_k = Σ_{j≠k} |C_kj|²`.
    pub fn from_coupling(c: &CMatrix) -> Self {
        let k = c.nrows();
        let mut t = Vec::with_capacity(k);
        let mut u = Vec::with_capacity(k);
        for i in 0..k {
            let total: f64 = c.row(i).iter().map(|z| z.norm_sqr()).sum();
            let own = c[(i, i)].norm_sqr();
            t.push(own);
            u.push((total - own).max(0.0));
        }
        Self { t, u }
    }

    pub fn users(&self) -> usize {
        self.t.len()
    }
}

/// `t_k = |h_kᵀa_k|²`, `u_k = Σ_{j≠k} |h_kᵀa_j|²` with `h_k`, `a_k` the
/// columns of `h` and `a`.
pub fn link_stats(h: &CMatrix, a: &CMatrix) -> Result<LinkStats> {
    if h.shape() != a.shape() {
        return Err(TasError::invalid(format!(
            "channel is {:?} but precoder is {:?}",
            h.shape(),
            a.shape()
        )));
    }
    let k = h.ncols();
    let mut t = vec![0.0; k];
    let mut u = vec![0.0; k];
    for i in 0..k {
        for j in 0..k {
            let p = h.column(i).transpose() * a.column(j);
            let v = p[(0, 0)].norm_sqr();
            if i == j {
                t[i] = v;
            } else {
                u[i] += v;
            }
        }
    }
    Ok(LinkStats { t, u })
}

fn check_power(p: f64) -> Result<()> {
    if !(p >= 0.0 && p.is_finite()) {
        return Err(TasError::invalid(format!("transmit power must be finite and >= 0, got {p}")));
    }
    Ok(())
}

/// `SINR_k = t_k p / (1 + u_k p)`.
pub fn sinr(stats: &LinkStats, p: f64) -> Result<Vec<f64>> {
    check_power(p)?;
    Ok(stats
        .t
        .iter()
        .zip(&stats.u)
        .map(|(t, u)| t * p / (1.0 + u * p))
        .collect())
}

/// `R_k = log₂(1 + SINR_k)` in bits/s/Hz.
pub fn rate(stats: &LinkStats, p: f64) -> Result<Vec<f64>> {
    Ok(sinr(stats, p)?.into_iter().map(|s| s.ln_1p() / std::f64::consts::LN_2).collect())
}

/// Objective value at `ℓ` active antennas and power `p`.
pub fn evaluate(measure: &Measure, stats: &LinkStats, ell: usize, p: f64) -> Result<f64> {
    check_power(p)?;
    if stats.users() != measure.users() || stats.u.len() != stats.t.len() {
        return Err(TasError::invalid(format!(
            "measure has {} weights but link stats cover {} users",
            measure.users(),
            stats.users()
        )));
    }
    if let Some(q) = measure.consumed(ell, p) {
        if q <= 0.0 {
            return Err(TasError::ZeroConsumedPower);
        }
    }
    Ok(measure.value(stats, ell, p))
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_rayleigh;
    use crate::precoders::{precode_direct, PrecoderSpec};
    use nalgebra::Complex;
    use proptest::prelude::*;

    fn stats(t: &[f64], u: &[f64]) -> LinkStats {
        LinkStats {
            t: t.to_vec(),
            u: u.to_vec(),
        }
    }

    #[test]
    fn single_user_has_no_interference() {
        let h = generate_rayleigh(3, 1, 1).unwrap().gains().clone();
        let a = precode_direct(&h, PrecoderSpec::mrt()).unwrap().a_matrix().clone();
        let s = link_stats(&h, &a).unwrap();
        assert_eq!(s.u, vec![0.0]);
        let hta: Complex<f64> = (0..3).map(|n| h[(n, 0)] * a[(n, 0)]).sum();
        assert!((s.t[0] - hta.norm_sqr()).abs() < 1e-12);
    }

    #[test]
    fn zf_stats_have_no_interference() {
        let h = generate_rayleigh(6, 3, 2).unwrap().gains().clone();
        let a = precode_direct(&h, PrecoderSpec::zero_forcing()).unwrap().a_matrix().clone();
        let s = link_stats(&h, &a).unwrap();
        assert!(s.u.iter().all(|&u| u <= 1e-18), "{:?}", s.u);
    }

    #[test]
    fn link_stats_match_scripted_products() {
        // Independent evaluation: explicit scalar loops over antennas.
        let h = generate_rayleigh(3, 2, 9).unwrap().gains().clone();
        let a = generate_rayleigh(3, 2, 10).unwrap().gains().clone();
        let s = link_stats(&h, &a).unwrap();
        for k in 0..2 {
            let mut t = 0.0;
            let mut u = 0.0;
            for j in 0..2 {
                let mut acc = Complex::new(0.0, 0.0);
                for n in 0..3 {
                    acc += h[(n, k)] * a[(n, j)];
                }
                if j == k {
                    t = acc.norm_sqr();
                } else {
                    u += acc.norm_sqr();
                }
            }
            assert!((s.t[k] - t).abs() < 1e-12 && (s.u[k] - u).abs() < 1e-12);
        }
        let c = h.transpose() * &a;
        let via_coupling = LinkStats::from_coupling(&c);
        for k in 0..2 {
            assert!((via_coupling.t[k] - s.t[k]).abs() < 1e-12);
            assert!((via_coupling.u[k] - s.u[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn link_stats_shape_mismatch() {
        let h = generate_rayleigh(3, 2, 1).unwrap().gains().clone();
        let a = generate_rayleigh(2, 2, 1).unwrap().gains().clone();
        assert!(matches!(link_stats(&h, &a), Err(TasError::InvalidArgument(_))));
    }

    #[test]
    fn sinr_examples() {
        assert_eq!(sinr(&stats(&[1.0], &[0.0]), 2.0).unwrap(), vec![2.0]);
        assert_eq!(sinr(&stats(&[1.0, 3.0], &[0.5, 0.0]), 0.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(sinr(&stats(&[2.0], &[1.0]), 1.0).unwrap(), vec![1.0]);
        assert!(sinr(&stats(&[1.0], &[0.0]), -1.0).is_err());
    }

    #[test]
    fn rate_examples() {
        // SINR 1 and 3
        let r = rate(&stats(&[1.0, 3.0], &[0.0, 0.0]), 1.0).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-15 && (r[1] - 2.0).abs() < 1e-15);
        assert_eq!(rate(&stats(&[4.0], &[1.0]), 0.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn consumed_power_examples() {
        let m = PowerModel::reference();
        assert!((consumed_power(0, 0.0, &m, 4) - 0.502).abs() < 1e-12);
        assert!((consumed_power(24, 1.0, &m, 4) - 4.154).abs() < 1e-12);
        for (ell, p) in [(0, 0.0), (7, 0.3), (100, 1.0)] {
            let step = consumed_power(ell + 1, p, &m, 4) - consumed_power(ell, p, &m, 4);
            assert!((step - m.q_tx()).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_examples() {
        // R = (1, 3) from SINR = (1, 7)
        let s = stats(&[1.0, 7.0], &[0.0, 0.0]);
        let se = Measure::spectral_efficiency(vec![1.0, 1.0]).unwrap();
        assert!((evaluate(&se, &s, 1, 1.0).unwrap() - 2.0).abs() < 1e-14);
        assert!(Measure::spectral_efficiency(vec![2.0, 0.0]).is_err());
        assert!(Measure::spectral_efficiency(vec![2.0, -1.0]).is_err());

        // SE = 2.077 with four users at ℓ = 24, p = 1 W, where Q = 4.154 W
        let t = 2f64.powf(2.077) - 1.0;
        let four = stats(&[t; 4], &[0.0; 4]);
        let se4 = evaluate(&Measure::spectral_efficiency(vec![1.0; 4]).unwrap(), &four, 24, 1.0).unwrap();
        assert!((se4 - 2.077).abs() < 1e-12);
        let ee = Measure::energy_efficiency(vec![1.0; 4], PowerModel::reference()).unwrap();
        let v = evaluate(&ee, &four, 24, 1.0).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "{v}");
    }

    #[test]
    fn zero_consumed_power_is_an_error() {
        let pm = PowerModel::new(1.0, 0.0, 0.0, 0.0).unwrap();
        let ee = Measure::energy_efficiency(vec![1.0], pm).unwrap();
        assert!(matches!(
            evaluate(&ee, &stats(&[1.0], &[0.0]), 1, 0.0),
            Err(TasError::ZeroConsumedPower)
        ));
    }

    #[test]
    fn ee_vanishes_at_zero_power() {
        let ee = Measure::energy_efficiency(vec![1.0, 2.0], PowerModel::reference()).unwrap();
        assert_eq!(evaluate(&ee, &stats(&[3.0, 1.0], &[0.2, 0.4]), 5, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn db_helpers() {
        assert_eq!(db_to_linear(0.0), 1.0);
        assert!((db_to_linear(10.0) - 10.0).abs() < 1e-12);
        assert!((db_to_linear(-3.0) - 0.501_187_233_627_272_2).abs() < 1e-12);
        assert!((linear_to_db(100.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn cached_and_direct_evaluation_agree() {
        let h = generate_rayleigh(7, 3, 12).unwrap().gains().clone();
        let s = precode_direct(&h, PrecoderSpec::regularized(0.7).unwrap()).unwrap();
        let cached = LinkStats::from_coupling(s.coupling());
        let direct = link_stats(&h, s.a_matrix()).unwrap();
        let m = Measure::energy_efficiency(vec![1.0, 0.5, 2.0], PowerModel::reference()).unwrap();
        for p in [0.0, 0.01, 0.4, 1.0] {
            let a = evaluate(&m, &cached, 7, p).unwrap();
            let b = evaluate(&m, &direct, 7, p).unwrap();
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn sinr_is_monotone_in_power(
            t in proptest::collection::vec(0.0f64..10.0, 1..5),
            u_scale in 0.0f64..5.0,
            grid in proptest::collection::vec(0.0f64..10.0, 2..20),
        ) {
            let u: Vec<f64> = t.iter().map(|x| x * u_scale * 0.3).collect();
            let s = stats(&t, &u);
            let mut grid = grid;
            grid.sort_by(f64::total_cmp);
            let se = Measure::spectral_efficiency(vec![1.0; t.len()]).unwrap();
            for w in grid.windows(2) {
                let (a, b) = (sinr(&s, w[0]).unwrap(), sinr(&s, w[1]).unwrap());
                for k in 0..t.len() {
                    prop_assert!(b[k] >= a[k]);
                }
                prop_assert!(se.value(&s, 1, w[1]) >= se.value(&s, 1, w[0]));
            }
        }

        #[test]
        fn spectral_efficiency_is_linear_in_weights(
            t in proptest::collection::vec(0.0f64..10.0, 3),
            u in proptest::collection::vec(0.0f64..2.0, 3),
            w1 in proptest::collection::vec(0.1f64..3.0, 3),
            w2 in proptest::collection::vec(0.1f64..3.0, 3),
            p in 0.0f64..4.0,
        ) {
            let s = stats(&t, &u);
            let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
            let m = |w: Vec<f64>| Measure::spectral_efficiency(w).unwrap().value(&s, 2, p);
            let lhs = m(sum);
            let rhs = m(w1) + m(w2);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
    }
}
