//! Controlled equilibria of the fluid model, their cost, and the choice of
//! the average-optimal equilibrium.
//!
//! Everything here is specific to the GOOD/BAD channel with a single-packet
//! buffer: only the loaded GOOD-channel class (flat state 4) is ever
//! activated, so an equilibrium is parameterised by one scalar `s4`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Measure, ModelParams, TwoStateModel};

/// Bisection tolerance for the interior optimum.
pub const INTERIOR_ROOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `N0 >= n0_0`: never transmit, `s4* = 0`.
    Passive,
    /// `N0 <= n0_1`: always transmit, `s4* = 1`.
    Active,
    /// Optimum strictly inside `(0, 1)`.
    Interior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub regime: Regime,
    pub s4_star: f64,
    pub m_star: Measure,
    #[serde(rename = "E_star")]
    pub e_star: f64,
    pub n0_0: f64,
    pub n0_1: f64,
    pub convexity_ok: bool,
}

fn denom(s4: f64, tw: &TwoStateModel) -> f64 {
    tw.rho + tw.beta1 * s4 * (1.0 - tw.rho)
}

fn check_s4(s4: f64) -> Result<()> {
    if (0.0..=1.0).contains(&s4) {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "s4",
            detail: format!("{s4} outside [0, 1]"),
        })
    }
}

pub(crate) fn equilibrium_array(s4: f64, tw: &TwoStateModel) -> [f64; 4] {
    let (b0, b1, rho) = (tw.beta0(), tw.beta1, tw.rho);
    let d = denom(s4, tw);
    [
        b0 * b1 * (1.0 - rho) * s4 / d,
        b0 * rho / d,
        b1 * b1 * (1.0 - rho) * s4 / d,
        b1 * rho / d,
    ]
}

/// Null vector of `U(s4)` on the simplex.
pub fn equilibrium_measure(s4: f64, params: &ModelParams) -> Result<Measure> {
    check_s4(s4)?;
    let tw = params.two_state_view()?;
    Ok(Measure::from_vec_unchecked(equilibrium_array(s4, &tw).to_vec()))
}

pub(crate) fn cost_at(s4: f64, tw: &TwoStateModel) -> f64 {
    let m = equilibrium_array(s4, tw);
    tw.theta * tw.n0 * s4 / (1.0 - tw.theta * m[3]) + tw.lambda * (m[1] + m[3])
}

pub(crate) fn cost_derivative_at(s4: f64, tw: &TwoStateModel) -> f64 {
    let (b1, rho, theta) = (tw.beta1, tw.rho, tw.theta);
    let d = denom(s4, tw);
    let num = 2.0 * b1 * rho * s4 * (1.0 - rho) * (1.0 - theta * b1)
        + rho * rho * (1.0 - theta * b1)
        + s4 * s4 * b1 * b1 * (1.0 - rho) * (1.0 - rho);
    let shifted = d - theta * b1 * rho;
    theta * tw.n0 * num / (shifted * shifted) - tw.lambda * rho * b1 * (1.0 - rho) / (d * d)
}

/// Long-run cost per slot at the equilibrium sustained by constant `s4`:
/// power `theta N0 s4 / (1 - theta m4)` plus queue cost `lambda (m2 + m4)`.
pub fn equilibrium_cost(s4: f64, params: &ModelParams) -> Result<f64> {
    check_s4(s4)?;
    Ok(cost_at(s4, &params.two_state_view()?))
}

/// Closed-form `dE/ds4`.
pub fn equilibrium_cost_derivative(s4: f64, params: &ModelParams) -> Result<f64> {
    check_s4(s4)?;
    Ok(cost_derivative_at(s4, &params.two_state_view()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityBound {
    /// `f(0) = lambda (1 - rho)(1 - beta1 theta)^2 / (rho theta^2)`.
    pub f0: f64,
    /// `N0 <= f(0)`, which makes `E(s4)` convex on `[0, 1]`.
    pub holds: bool,
}

pub fn convexity_bound(params: &ModelParams) -> Result<ConvexityBound> {
    let tw = params.two_state_view()?;
    let f0 = tw.lambda * (1.0 - tw.rho) * (1.0 - tw.beta1 * tw.theta).powi(2)
        / (tw.rho * tw.theta * tw.theta);
    Ok(ConvexityBound {
        f0,
        holds: tw.n0 <= f0,
    })
}

/// Noise levels `(n0_0, n0_1)` at which `dE/ds4` vanishes at `s4 = 0` and
/// `s4 = 1` respectively.
pub fn n0_thresholds(params: &ModelParams) -> Result<(f64, f64)> {
    let tw = params.two_state_view()?;
    let (b1, rho, theta, lambda) = (tw.beta1, tw.rho, tw.theta, tw.lambda);
    let n0_0 = lambda * b1 * (1.0 - rho) * (1.0 - theta * b1) / (rho * theta);
    let a = rho + b1 - b1 * rho * (1.0 + theta);
    let b = b1 + rho - b1 * rho;
    let num = lambda * b1 * (1.0 - rho) * rho * a * a / (b * b);
    let den = theta
        * (2.0 * b1 * (1.0 - rho) * rho * (1.0 - theta * b1)
            + rho * rho * (1.0 - theta * b1)
            + b1 * b1 * (1.0 - rho) * (1.0 - rho));
    let n0_1 = num / den;
    if n0_1 >= n0_0 {
        return Err(Error::DegenerateRegime { n0_0, n0_1 });
    }
    Ok((n0_0, n0_1))
}

/// Noise level at which an equilibrium with loaded-GOOD fraction `m4` is the
/// interior optimum.
pub fn n0_from_m4(m4: f64, params: &ModelParams) -> Result<f64> {
    let tw = params.two_state_view()?;
    let (b1, rho, theta) = (tw.beta1, tw.rho, tw.theta);
    // admits rounding of the passive equilibrium, whose m4 equals beta1
    if !(m4 > 0.0 && m4 <= b1 * (1.0 + 1e-12)) {
        return Err(Error::DomainError(format!("m4 = {m4} outside (0, {b1}]")));
    }
    let den = theta * rho * (theta * m4 * (m4 - 2.0 * b1) + b1);
    if den <= 0.0 {
        return Err(Error::DomainError(format!(
            "non-positive denominator {den} at m4 = {m4}"
        )));
    }
    Ok(tw.lambda * (1.0 - rho) * m4 * m4 * (1.0 - theta * m4).powi(2) / den)
}

/// Average-optimal equilibrium: classifies the regime by comparing `N0`
/// with `(n0_0, n0_1)` and, in the interior regime, bisects `dE/ds4 = 0`.
pub fn optimal_equilibrium(params: &ModelParams) -> Result<EquilibriumReport> {
    let tw = params.two_state_view()?;
    let bound = convexity_bound(params)?;
    if !bound.holds {
        return Err(Error::ConvexityUnverified {
            n0: tw.n0,
            bound: bound.f0,
        });
    }
    let (n0_0, n0_1) = n0_thresholds(params)?;
    let (regime, s4) = if tw.n0 >= n0_0 {
        (Regime::Passive, 0.0)
    } else if tw.n0 <= n0_1 {
        (Regime::Active, 1.0)
    } else {
        // dE/ds4 < 0 at 0 and > 0 at 1, increasing in between.
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > INTERIOR_ROOT_TOL {
            let mid = 0.5 * (lo + hi);
            if cost_derivative_at(mid, &tw) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (Regime::Interior, 0.5 * (lo + hi))
    };
    Ok(EquilibriumReport {
        regime,
        s4_star: s4,
        m_star: Measure::from_vec_unchecked(equilibrium_array(s4, &tw).to_vec()),
        e_star: cost_at(s4, &tw),
        n0_0,
        n0_1,
        convexity_ok: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::drift_matrix_4state;
    use proptest::prelude::*;

    fn p(rho: f64) -> ModelParams {
        ModelParams::mtc_example(rho)
    }

    #[test]
    fn measure_examples() {
        let m = equilibrium_measure(0.0, &p(0.1)).unwrap();
        for (a, b) in m.as_slice().iter().zip([0.0, 0.6, 0.0, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
        let m = equilibrium_measure(1.0, &p(0.1)).unwrap();
        let expect = [0.216 / 0.46, 0.06 / 0.46, 0.144 / 0.46, 0.04 / 0.46];
        for (a, b) in m.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((m[0] - 0.469565).abs() < 1e-6 && (m[3] - 0.086957).abs() < 1e-6);
        let r = drift_matrix_4state(1.0, &p(0.1)).unwrap().apply(m.as_slice());
        assert!(r.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn cost_examples() {
        assert!((equilibrium_cost(0.0, &p(0.1)).unwrap() - 1.5).abs() < 1e-15);
        let e1 = equilibrium_cost(1.0, &p(0.1)).unwrap();
        let m4 = 0.04 / 0.46;
        let by_hand = 0.2 / (1.0 - 0.2 * m4) + 1.5 * (0.06 + 0.04) / 0.46;
        assert!((e1 - by_hand).abs() < 1e-14);
        assert!((e1 - 0.529627).abs() < 1e-6);
        assert!(equilibrium_cost(1.5, &p(0.1)).is_err());
    }

    #[test]
    fn convexity_bound_examples() {
        let b = convexity_bound(&p(0.1)).unwrap();
        assert!((b.f0 - 1.5 * 0.9 * 0.92f64.powi(2) / (0.1 * 0.04)).abs() < 1e-9);
        assert!((b.f0 - 285.66).abs() < 1e-9);
        assert!(b.holds);
        let extreme = ModelParams::two_state(1.0 - 1e-9, 1.0 - 1e-9, 0.1, 1.5, 1e-3, 1e9);
        let b = convexity_bound(&extreme).unwrap();
        assert!(b.f0 < 1e-3 && !b.holds);
    }

    #[test]
    fn regime_constants_examples() {
        let (n0_0, n0_1) = n0_thresholds(&p(0.1)).unwrap();
        assert!((n0_0 - 24.84).abs() < 1e-9);
        assert!((n0_1 - 1.2714).abs() < 1e-3);
        let (_, n0_1_low) = n0_thresholds(&p(0.05)).unwrap();
        assert!((n0_1_low - 0.7699).abs() < 1e-4);

        // the constants are where dE/ds4 changes sign at the endpoints
        let mut at0 = p(0.1);
        at0.n0 = n0_0;
        assert!(equilibrium_cost_derivative(0.0, &at0).unwrap().abs() < 1e-9);
        let mut at1 = p(0.1);
        at1.n0 = n0_1;
        assert!(equilibrium_cost_derivative(1.0, &at1).unwrap().abs() < 1e-9);
    }

    #[test]
    fn optimal_equilibrium_examples() {
        let r = optimal_equilibrium(&p(0.1)).unwrap();
        assert_eq!(r.regime, Regime::Active);
        assert!((r.m_star[3] - 0.086957).abs() < 1e-6);

        let r = optimal_equilibrium(&p(0.05)).unwrap();
        assert_eq!(r.regime, Regime::Interior);
        assert!(r.s4_star > 0.0 && r.s4_star < 1.0);
        assert!(equilibrium_cost_derivative(r.s4_star, &p(0.05)).unwrap().abs() < 1e-9);
        assert!((n0_from_m4(r.m_star[3], &p(0.05)).unwrap() - 1.0).abs() < 1e-8);

        let mut noisy = p(0.1);
        noisy.n0 = 100.0;
        let r = optimal_equilibrium(&noisy).unwrap();
        assert_eq!(r.regime, Regime::Passive);
        assert!((r.e_star - 1.5).abs() < 1e-15);

        let mut unproven = p(0.1);
        unproven.n0 = 300.0;
        assert!(matches!(
            optimal_equilibrium(&unproven),
            Err(Error::ConvexityUnverified { .. })
        ));
    }

    #[test]
    fn boundary_noise_levels_go_to_pure_regimes() {
        let (n0_0, n0_1) = n0_thresholds(&p(0.1)).unwrap();
        let mut at = p(0.1);
        at.n0 = n0_0;
        assert_eq!(optimal_equilibrium(&at).unwrap().regime, Regime::Passive);
        at.n0 = n0_1;
        assert_eq!(optimal_equilibrium(&at).unwrap().regime, Regime::Active);
    }

    #[test]
    fn n0_from_m4_reproduces_regime_constants() {
        for rho in [0.05, 0.1, 0.2, 0.3] {
            let params = p(rho);
            let (n0_0, n0_1) = n0_thresholds(&params).unwrap();
            let m4_active = 0.4 * rho / (rho + 0.4 * (1.0 - rho));
            assert!((n0_from_m4(m4_active, &params).unwrap() - n0_1).abs() < 1e-10);
            assert!((n0_from_m4(0.4, &params).unwrap() - n0_0).abs() < 1e-10);
        }
        assert!(matches!(n0_from_m4(0.0, &p(0.1)), Err(Error::DomainError(_))));
        assert!(matches!(n0_from_m4(0.5, &p(0.1)), Err(Error::DomainError(_))));
    }

    #[test]
    fn optimum_beats_grid() {
        for rho in [0.05, 0.1, 0.2, 0.3] {
            let params = p(rho);
            let r = optimal_equilibrium(&params).unwrap();
            for i in 0..=100 {
                let e = equilibrium_cost(i as f64 / 100.0, &params).unwrap();
                assert!(r.e_star <= e + 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn derivative_matches_central_difference(
            s4 in 0.01f64..0.99, beta1 in 0.05f64..0.95, rho in 0.02f64..0.9,
            theta in 0.05f64..0.9, n0 in 0.1f64..5.0, lambda in 0.1f64..5.0
        ) {
            let params = ModelParams::two_state(theta, beta1, rho, lambda, n0, 1e6);
            let h = 1e-6;
            let fd = (equilibrium_cost(s4 + h, &params).unwrap()
                - equilibrium_cost(s4 - h, &params).unwrap()) / (2.0 * h);
            let d = equilibrium_cost_derivative(s4, &params).unwrap();
            prop_assert!((fd - d).abs() < 1e-6 * (1.0 + d.abs()));
        }

        #[test]
        fn equilibria_are_stationary(
            s4 in 0.0f64..=1.0, beta1 in 0.01f64..0.99, rho in 0.01f64..0.99
        ) {
            let params = ModelParams::two_state(0.2, beta1, rho, 1.5, 1.0, 10.0);
            let m = equilibrium_measure(s4, &params).unwrap();
            prop_assert!((m.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-14);
            let r = drift_matrix_4state(s4, &params).unwrap().apply(m.as_slice());
            prop_assert!(r.iter().all(|x| x.abs() < 1e-12));
        }
    }
}
