//! One-dimensional transmit-power search shared by the greedy algorithm,
//! the exhaustive oracle and the random baselines.
//!
//! The objective is not assumed unimodal in `p`: a grid (0 plus log-spaced
//! points from `p_max·10⁻⁶` to `p_max`) locates the best cell, then a
//! golden-section search refines inside the two cells around it.

use serde::{Deserialize, Serialize};

use crate::metrics::{LinkStats, Measure};

/// Lower end of the log-spaced grid relative to `p_max`.
pub const GRID_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PowerSearch {
    /// Total number of grid points, including `p = 0`.
    pub grid: usize,
    pub refine_iters: usize,
}

impl Default for PowerSearch {
    fn default() -> Self {
        Self {
            grid: 256,
            refine_iters: 40,
        }
    }
}

impl PowerSearch {
    /// Grid points in ascending order; always contains `0` and `p_max`.
    pub fn grid_points(&self, p_max: f64) -> Vec<f64> {
        let n = self.grid.max(2);
        let mut pts = Vec::with_capacity(n);
        pts.push(0.0);
        if n == 2 {
            pts.push(p_max);
            return pts;
        }
        let lo = (p_max * GRID_FLOOR).ln();
        let hi = p_max.ln();
        let steps = (n - 2) as f64;
        for i in 0..n - 1 {
            let x = if i == n - 2 {
                p_max
            } else {
                (lo + (hi - lo) * i as f64 / steps).exp()
            };
            pts.push(x);
        }
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerChoice {
    pub power: f64,
    pub value: f64,
}

/// Maximizes `objective` over `[0, p_max]`. Ties go to the smaller power.
pub fn maximize<F: Fn(f64) -> f64>(objective: F, p_max: f64, search: &PowerSearch) -> PowerChoice {
    let pts = search.grid_points(p_max);
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    let values: Vec<f64> = pts.iter().map(|&p| objective(p)).collect();
    for (i, &v) in values.iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    let mut choice = PowerChoice {
        power: pts[best],
        value: best_val,
    };
    if search.refine_iters == 0 {
        return choice;
    }
    let lo = pts[best.saturating_sub(1)];
    let hi = pts[(best + 1).min(pts.len() - 1)];
    if hi > lo {
        let (p, v) = golden_section(&objective, lo, hi, search.refine_iters);
        if v > choice.value {
            choice = PowerChoice { power: p, value: v };
        }
    }
    choice
}

/// Golden-section maximization on `[lo, hi]`; returns the best point seen.
fn golden_section<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut best = if f2 > f1 { (x2, f2) } else { (x1, f1) };
    for _ in 0..iters {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
            if f1 > best.1 {
                best = (x1, f1);
            }
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
            if f2 > best.1 {
                best = (x2, f2);
            }
        }
    }
    best
}

/// `P̂ = argmax_{0 ≤ p ≤ p_max} M(ℓ, p)` for fixed link statistics.
pub fn optimize_power(
    measure: &Measure,
    stats: &LinkStats,
    ell: usize,
    p_max: f64,
    search: &PowerSearch,
) -> PowerChoice {
    maximize(|p| measure.value(stats, ell, p), p_max, search)
}
