//! No-regret dual players: exponentiated gradient on the scaled simplex and
//! projected online gradient on the non-negative part of an ℓ2 ball.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualFlavor {
    /// `m + 1` coordinates summing to `B`; the last one absorbs unused mass.
    EgSimplex,
    /// `m` non-negative coordinates with `||lambda||_2 <= B`.
    OgdBall,
}

/// Multipliers `lambda` with budget `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    coords: Vec<f64>,
    budget: f64,
    flavor: DualFlavor,
}

impl DualVector {
    /// Builds a vector and checks the flavor's feasibility invariant.
    pub fn new(coords: Vec<f64>, budget: f64, flavor: DualFlavor) -> Result<Self> {
        if !(budget >= 0.0 && budget.is_finite()) {
            bail!(Argument, "dual budget must be finite and non-negative, got {budget}");
        }
        if coords.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            bail!(Argument, "multipliers must be finite and non-negative");
        }
        match flavor {
            DualFlavor::EgSimplex => {
                let total: f64 = coords.iter().sum();
                if coords.is_empty() || (total - budget).abs() > 1e-9 * (1.0 + budget) {
                    bail!(Argument, "simplex multipliers sum to {total}, expected {budget}");
                }
            }
            DualFlavor::OgdBall => {
                if l2(&coords) > budget + 1e-9 {
                    bail!(Argument, "multipliers lie outside the ball of radius {budget}");
                }
            }
        }
        Ok(Self { coords, budget, flavor })
    }

    /// All stored coordinates (length `m + 1` for the simplex flavor).
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// The `m` multipliers that scale constraint costs.
    pub fn multipliers(&self) -> &[f64] {
        match self.flavor {
            DualFlavor::EgSimplex => &self.coords[..self.coords.len() - 1],
            DualFlavor::OgdBall => &self.coords,
        }
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn flavor(&self) -> DualFlavor {
        self.flavor
    }

    pub fn num_constraints(&self) -> usize {
        self.multipliers().len()
    }

    /// Applies one update in place; `z` has the length of [`coords`](Self::coords).
    pub fn update_in_place(&mut self, z: &[f64], eta: f64) {
        match self.flavor {
            DualFlavor::EgSimplex => eg_step(&mut self.coords, self.budget, z, eta),
            DualFlavor::OgdBall => ogd_step(&mut self.coords, self.budget, z, eta),
        }
    }
}

fn l2(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// `lambda_1 = (B/(m+1), ..., B/(m+1))`.
pub fn eg_init(m: usize, budget: f64) -> Result<DualVector> {
    DualVector::new(vec![budget / (m + 1) as f64; m + 1], budget, DualFlavor::EgSimplex)
}

/// `lambda_1 = 0`.
pub fn ogd_init(m: usize, budget: f64) -> Result<DualVector> {
    DualVector::new(vec![0.0; m], budget, DualFlavor::OgdBall)
}

/// `lambda'[i] = B lambda[i] e^{-eta z[i]} / sum_j lambda[j] e^{-eta z[j]}`.
///
/// Callers that want the dual player to maximize `lambda^T z` pass `-z`.
pub fn eg_update(lambda: &DualVector, z: &[f64], eta: f64) -> Result<DualVector> {
    if lambda.flavor != DualFlavor::EgSimplex {
        bail!(Argument, "exponentiated gradient needs simplex multipliers");
    }
    check_step(lambda, z, eta)?;
    let mut out = lambda.clone();
    eg_step(&mut out.coords, out.budget, z, eta);
    Ok(out)
}

/// `lambda' = P(max(0, lambda + eta z))` with `P(l) = B l / max(B, ||l||_2)`.
pub fn ogd_update(lambda: &DualVector, z: &[f64], eta: f64) -> Result<DualVector> {
    if lambda.flavor != DualFlavor::OgdBall {
        bail!(Argument, "projected gradient needs ball multipliers");
    }
    check_step(lambda, z, eta)?;
    let mut out = lambda.clone();
    ogd_step(&mut out.coords, out.budget, z, eta);
    Ok(out)
}

fn check_step(lambda: &DualVector, z: &[f64], eta: f64) -> Result<()> {
    if z.len() != lambda.coords.len() {
        bail!(Argument, "loss has {} coordinates, multipliers have {}", z.len(), lambda.coords.len());
    }
    if !(eta > 0.0 && eta.is_finite()) {
        bail!(Argument, "learning rate must be positive, got {eta}");
    }
    if z.iter().any(|v| !v.is_finite()) {
        bail!(Argument, "loss must be finite");
    }
    Ok(())
}

#[inline]
fn eg_step(coords: &mut [f64], budget: f64, z: &[f64], eta: f64) {
    // Shift exponents by their max so every factor lies in (0, 1].
    let shift = z.iter().fold(f64::NEG_INFINITY, |m, zi| m.max(-eta * zi));
    let mut total = 0.0;
    for (l, zi) in coords.iter_mut().zip(z) {
        *l *= libm::exp(-eta * zi - shift);
        total += *l;
    }
    // `l / total <= 1` cannot overflow even when every surviving weight is
    // tiny; clamped away from zero so a coordinate can always recover.
    for l in coords.iter_mut() {
        *l = (budget * (*l / total)).max(f64::MIN_POSITIVE);
    }
}

#[inline]
fn ogd_step(coords: &mut [f64], budget: f64, z: &[f64], eta: f64) {
    for (l, zi) in coords.iter_mut().zip(z) {
        *l = (*l + eta * zi).max(0.0);
    }
    let norm = l2(coords);
    if norm > budget {
        let scale = budget / norm;
        coords.iter_mut().for_each(|l| *l *= scale);
    }
}

// ── Theory constants ────────────────────────────────────────────────────

/// Average-regret bound of exponentiated gradient after `T` rounds:
/// `B ln(m+1) / (eta T) + eta B G_bar^2`.
pub fn eg_regret_bound(budget: f64, eta: f64, g_bar: f64, m: usize, rounds: u64) -> f64 {
    budget * libm::log((m + 1) as f64) / (eta * rounds as f64) + eta * budget * g_bar * g_bar
}

/// Duality-gap bound with exact best responses: twice the regret bound.
pub fn duality_gap_bound(budget: f64, eta: f64, g_bar: f64, m: usize, rounds: u64) -> f64 {
    2.0 * eg_regret_bound(budget, eta, g_bar, m, rounds)
}

/// Learning rate that makes the gap bound reach `omega / 2`.
pub fn bound_eta(omega: f64, g_bar: f64, budget: f64) -> f64 {
    omega / (4.0 * g_bar * g_bar * budget)
}

/// `ceil(16 B^2 G_bar^2 ln(m+1) / omega^2)`, at least 1.
pub fn bound_rounds(budget: f64, g_bar: f64, m: usize, omega: f64) -> u64 {
    let t = 16.0 * budget * budget * g_bar * g_bar * libm::log((m + 1) as f64) / (omega * omega);
    (libm::ceil(t) as u64).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_values() {
        assert_eq!(eg_init(1, 30.0).unwrap().coords(), &[15.0, 15.0]);
        assert_eq!(eg_init(0, 1.0).unwrap().coords(), &[1.0]);
        assert_eq!(eg_init(2, 3.0).unwrap().coords(), &[1.0, 1.0, 1.0]);
        assert_eq!(eg_init(1, 30.0).unwrap().multipliers(), &[15.0]);
        assert_eq!(ogd_init(2, 5.0).unwrap().coords(), &[0.0, 0.0]);
    }

    #[test]
    fn eg_hand_example() {
        let l = DualVector::new(vec![0.5, 0.5], 1.0, DualFlavor::EgSimplex).unwrap();
        let next = eg_update(&l, &[1.0, 0.0], core::f64::consts::LN_2).unwrap();
        assert!((next.coords()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((next.coords()[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(eg_update(&l, &[0.0, 0.0], 0.3).unwrap(), l);
    }

    #[test]
    fn eg_survives_huge_exponents() {
        let l = eg_init(2, 30.0).unwrap();
        let next = eg_update(&l, &[-1e6, 3.0, 0.0], 50.0).unwrap();
        let total: f64 = next.coords().iter().sum();
        assert!((total - 30.0).abs() < 1e-9);
        assert!(next.coords().iter().all(|c| *c > 0.0));
        assert!(next.coords()[0] > 29.99);
    }

    #[test]
    fn ogd_examples() {
        let l = ogd_init(2, 10.0).unwrap();
        assert_eq!(ogd_update(&l, &[1.0, 0.0], 1.0).unwrap().coords(), &[1.0, 0.0]);
        assert_eq!(ogd_update(&l, &[0.0, 0.0], 1.0).unwrap(), l);
        let big = DualVector::new(vec![3.0, 4.0], 5.0, DualFlavor::OgdBall).unwrap();
        let mut shrunk = big.clone();
        shrunk.budget = 2.5;
        let p = ogd_update(&shrunk, &[0.0, 0.0], 1.0).unwrap();
        assert!((p.coords()[0] - 1.5).abs() < 1e-15 && (p.coords()[1] - 2.0).abs() < 1e-15);
        assert_eq!(ogd_update(&l, &[-1.0, 2.0], 1.0).unwrap().coords(), &[0.0, 2.0]);
    }

    #[test]
    fn flavors_are_checked() {
        assert!(eg_update(&ogd_init(1, 1.0).unwrap(), &[0.0], 1.0).is_err());
        assert!(ogd_update(&eg_init(1, 1.0).unwrap(), &[0.0, 0.0], 1.0).is_err());
        assert!(eg_update(&eg_init(1, 1.0).unwrap(), &[0.0], 1.0).is_err());
        assert!(eg_update(&eg_init(1, 1.0).unwrap(), &[0.0, 0.0], 0.0).is_err());
        assert!(DualVector::new(vec![1.0, 1.0], 1.0, DualFlavor::EgSimplex).is_err());
    }

    #[test]
    fn theory_constants() {
        let b = eg_regret_bound(30.0, 50.0, 1.0, 1, 1000);
        assert!((b - (30.0 * core::f64::consts::LN_2 / 50_000.0 + 1500.0)).abs() < 1e-12);
        assert!((b - 1500.000416).abs() < 1e-6);
        let (omega, g, budget) = (0.05, 20.0, 30.0);
        let eta = bound_eta(omega, g, budget);
        let t = bound_rounds(budget, g, 1, omega);
        assert!((eg_regret_bound(budget, eta, g, 1, t) - omega / 2.0).abs() < 1e-9);
        assert_eq!(bound_rounds(1.0, 1.0, 0, 0.1), 1);
    }
}
