//! Mean-field dynamics of the GOOD/BAD, single-buffer system.
//!
//! The continuous flow `dm/dt = U(s4(m)) m` is integrated with fixed-step RK4.
//! For threshold policies the crossing of `m4 = pi` is located by bisection
//! and integration restarts on the surface. When neither pure control keeps
//! the state on its side of the surface, the flow slides along it with the
//! Filippov control `s_eq` that keeps `dm4/dt = 0`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{drift_matrix_4state, phi};
use crate::model::{Measure, ModelParams, TwoStateModel};

pub const DEFAULT_DT: f64 = 0.01;
/// Bisection width for threshold crossings.
pub const EVENT_TOL: f64 = 1e-10;
pub const SIMPLEX_SUM_TOL: f64 = 1e-7;
pub const SIMPLEX_NEG_TOL: f64 = 1e-9;
/// Integration cap for the bias integral.
pub const BIAS_T_MAX: f64 = 1e5;
pub const BIAS_STATE_TOL: f64 = 1e-9;
pub const BIAS_COST_TOL: f64 = 1e-10;
/// `|m4 - pi|` below which the state is treated as on the switching surface.
const SURFACE_TOL: f64 = 1e-12;
/// `||dm/dt||_1` below which a trajectory is treated as stationary.
const STATIONARY_TOL: f64 = 1e-13;

/// Feedback control for the loaded GOOD-channel class.
pub trait FluidPolicy: Sync {
    /// Activation fraction in `[0, 1]` at time `t` and state `m`.
    fn control(&self, t: f64, m: &[f64; 4]) -> f64;

    /// `Some(pi)` if at time `t` the control is `1` for `m4 > pi` and `0`
    /// otherwise; enables event detection and sliding.
    fn m4_threshold(&self, _t: f64) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantControl(pub f64);

impl FluidPolicy for ConstantControl {
    fn control(&self, _t: f64, _m: &[f64; 4]) -> f64 {
        self.0
    }
}

/// Wraps a closure `(t, m) -> s4`.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(f64, &[f64; 4]) -> f64 + Sync> FluidPolicy for FnPolicy<F> {
    fn control(&self, t: f64, m: &[f64; 4]) -> f64 {
        (self.0)(t, m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidSample {
    pub t: f64,
    pub m: [f64; 4],
    /// Control applied from `t` to the next sample.
    pub s4: f64,
    pub inst_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<FluidSample>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&FluidSample> {
        self.samples.last()
    }

    /// Columns `t,m1,m2,m3,m4,s4,inst_cost`, 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,m1,m2,m3,m4,s4,inst_cost")?;
        for s in &self.samples {
            let fields = [s.t, s.m[0], s.m[1], s.m[2], s.m[3], s.s4, s.inst_cost];
            let row: Vec<String> = fields.iter().map(|&x| format_sig12(x)).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Decimal rendering with 12 significant digits.
pub fn format_sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..=15).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.11e}")
    }
}

/// Per-slot cost rate: `theta N0 s4 / (1 - theta m4) + lambda (m2 + m4)`.
///
/// For a relaxed `s4` this is the time average of chattering between the two
/// pure controls.
pub fn inst_cost(m: &[f64; 4], s4: f64, params: &ModelParams) -> Result<f64> {
    Ok(cost_rate(m, s4, &params.two_state_view()?))
}

fn cost_rate(m: &[f64; 4], s4: f64, tw: &TwoStateModel) -> f64 {
    tw.theta * tw.n0 * s4 / (1.0 - tw.theta * m[3]) + tw.lambda * (m[1] + m[3])
}

fn to_array(m: &Measure) -> Result<[f64; 4]> {
    m.as_slice()
        .try_into()
        .map_err(|_| Error::WrongDimensions(format!("expected 4 classes, got {}", m.len())))
}

/// One slot of the discrete map `m' = (I + U(s4)) m`.
pub fn discrete_step(m: &Measure, s4: f64, params: &ModelParams) -> Result<Measure> {
    to_array(m)?;
    Ok(drift_matrix_4state(s4, params)?.step(m))
}

/// `steps` slots of the discrete map under a feedback policy; returns the
/// `steps + 1` visited measures.
pub fn iterate_map(
    m0: &Measure,
    policy: &dyn FluidPolicy,
    steps: usize,
    params: &ModelParams,
) -> Result<Vec<[f64; 4]>> {
    let tw = params.two_state_view()?;
    let mut m = to_array(m0)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(m);
    for t in 0..steps {
        let s = policy.control(t as f64, &m);
        let d = phi(&m, s, &tw);
        for (mi, di) in m.iter_mut().zip(d) {
            *mi += di;
        }
        out.push(m);
    }
    Ok(out)
}

/// Exact solution of the flow with `s4 = 0` on `[0, t]`.
pub fn passive_trajectory_closed_form(m0: &Measure, t: f64, params: &ModelParams) -> Result<Measure> {
    let tw = params.two_state_view()?;
    let m = to_array(m0)?;
    if t < 0.0 {
        return Err(Error::InvalidParameter {
            name: "t",
            detail: format!("{t} is negative"),
        });
    }
    let (b0, b1) = (tw.beta0(), tw.beta1);
    let (e1, er) = ((-t).exp(), (-tw.rho * t).exp());
    let empty = m[0] + m[2];
    let m1 = (b1 * m[0] - b0 * m[2]) * e1 + b0 * empty * er;
    let m3 = (b0 * m[2] - b1 * m[0]) * e1 + b1 * empty * er;
    let m4 = b1 * (1.0 + e1 * (empty - 1.0)) + e1 * m[3] - empty * b1 * er;
    let m2 = 1.0 - m1 - m3 - m4;
    Ok(Measure::from_vec_unchecked(vec![m1, m2, m3, m4]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Fixed(f64),
    Sliding,
}

type Aug = [f64; 5];

struct Engine<'a> {
    tw: TwoStateModel,
    policy: &'a dyn FluidPolicy,
    e_ref: f64,
}

impl<'a> Engine<'a> {
    fn new(policy: &'a dyn FluidPolicy, e_ref: f64, params: &ModelParams) -> Result<Self> {
        Ok(Self {
            tw: params.two_state_view()?,
            policy,
            e_ref,
        })
    }

    fn s_eq(&self, m: &[f64; 4]) -> f64 {
        let f0 = phi(m, 0.0, &self.tw)[3];
        let f1 = phi(m, 1.0, &self.tw)[3];
        if f0 == f1 {
            0.0
        } else {
            (f0 / (f0 - f1)).clamp(0.0, 1.0)
        }
    }

    fn control(&self, m: &[f64; 4], mode: Mode) -> f64 {
        match mode {
            Mode::Fixed(s) => s,
            Mode::Sliding => self.s_eq(m),
        }
    }

    fn mode_at(&self, t: f64, m: &[f64; 4]) -> Mode {
        match self.policy.m4_threshold(t) {
            Some(pi) if (m[3] - pi).abs() <= SURFACE_TOL => {
                if phi(m, 0.0, &self.tw)[3] <= 0.0 {
                    Mode::Fixed(0.0)
                } else if phi(m, 1.0, &self.tw)[3] > 0.0 {
                    Mode::Fixed(1.0)
                } else {
                    Mode::Sliding
                }
            }
            _ => Mode::Fixed(self.policy.control(t, m)),
        }
    }

    fn deriv(&self, y: &Aug, mode: Mode) -> Aug {
        let m = [y[0], y[1], y[2], y[3]];
        let s = self.control(&m, mode);
        let d = phi(&m, s, &self.tw);
        [d[0], d[1], d[2], d[3], cost_rate(&m, s, &self.tw) - self.e_ref]
    }

    fn rk4(&self, y: &Aug, h: f64, mode: Mode) -> Aug {
        let shift = |k: &Aug, a: f64| -> Aug { std::array::from_fn(|i| y[i] + a * k[i]) };
        let k1 = self.deriv(y, mode);
        let k2 = self.deriv(&shift(&k1, 0.5 * h), mode);
        let k3 = self.deriv(&shift(&k2, 0.5 * h), mode);
        let k4 = self.deriv(&shift(&k3, h), mode);
        std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }

    /// Advances by at most `h`; stops early at a threshold crossing.
    /// Returns the elapsed time, the new state and the control used.
    fn advance(&self, t: f64, y: &Aug, h: f64) -> Result<(f64, Aug, f64)> {
        let m = [y[0], y[1], y[2], y[3]];
        let mode = self.mode_at(t, &m);
        let used = self.control(&m, mode);
        let pi = self.policy.m4_threshold(t);
        let (elapsed, mut y1, on_surface) = match (pi, mode) {
            (Some(pi), Mode::Fixed(s)) => {
                let side = if (m[3] - pi).abs() <= SURFACE_TOL {
                    if s > 0.5 {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    (m[3] - pi).signum()
                };
                let y1 = self.rk4(y, h, mode);
                if (y1[3] - pi) * side < -SURFACE_TOL {
                    let (mut lo, mut hi) = (0.0, h);
                    while hi - lo > EVENT_TOL {
                        let mid = 0.5 * (lo + hi);
                        if (self.rk4(y, mid, mode)[3] - pi) * side > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    if hi <= 10.0 * EVENT_TOL {
                        // the pure control leaves the surface only to second
                        // order: treat the step as sliding
                        (h, self.rk4(y, h, Mode::Sliding), true)
                    } else {
                        (hi, self.rk4(y, hi, mode), true)
                    }
                } else {
                    (h, y1, false)
                }
            }
            _ => (h, self.rk4(y, h, mode), mode == Mode::Sliding),
        };
        if let (Some(pi), true) = (pi, on_surface) {
            y1[1] += y1[3] - pi;
            y1[3] = pi;
        }
        check_simplex(t + elapsed, &y1)?;
        Ok((elapsed, y1, used))
    }

    fn stationary(&self, t: f64, m: &[f64; 4]) -> bool {
        let s = self.control(m, self.mode_at(t, m));
        phi(m, s, &self.tw).iter().map(|x| x.abs()).sum::<f64>() < STATIONARY_TOL
    }

    fn current_cost(&self, t: f64, m: &[f64; 4]) -> (f64, f64) {
        let s = self.control(m, self.mode_at(t, m));
        (s, cost_rate(m, s, &self.tw))
    }
}

fn check_simplex(t: f64, y: &Aug) -> Result<()> {
    let sum: f64 = y[..4].iter().sum();
    let min = y[..4].iter().copied().fold(f64::INFINITY, f64::min);
    if (sum - 1.0).abs() > SIMPLEX_SUM_TOL || min < -SIMPLEX_NEG_TOL || !sum.is_finite() {
        return Err(Error::StepTooLarge(format!(
            "at t = {t}: sum = {sum}, min = {min}"
        )));
    }
    Ok(())
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "dt",
            detail: format!("{dt} must be positive"),
        })
    }
}

fn augment(m: &[f64; 4]) -> Aug {
    [m[0], m[1], m[2], m[3], 0.0]
}

fn head(y: &Aug) -> [f64; 4] {
    [y[0], y[1], y[2], y[3]]
}

/// RK4 integration of the flow on `[0, horizon]` with nominal step `dt`.
/// Threshold crossings add extra samples at the event times.
pub fn integrate(
    m0: &Measure,
    policy: &dyn FluidPolicy,
    horizon: f64,
    dt: f64,
    params: &ModelParams,
) -> Result<Trajectory> {
    check_dt(dt)?;
    if horizon.is_nan() || horizon < 0.0 {
        return Err(Error::InvalidParameter {
            name: "horizon",
            detail: format!("{horizon} is negative"),
        });
    }
    let engine = Engine::new(policy, 0.0, params)?;
    let mut y = augment(&to_array(m0)?);
    let mut t = 0.0;
    let mut samples = Vec::with_capacity((horizon / dt).ceil() as usize + 2);
    // tolerates the rounding of accumulated step sums
    let end = horizon - 1e-9 * dt;
    while t < end {
        let h = dt.min(horizon - t);
        let m = head(&y);
        let (elapsed, y1, s) = engine.advance(t, &y, h)?;
        samples.push(FluidSample {
            t,
            m,
            s4: s,
            inst_cost: cost_rate(&m, s, &engine.tw),
        });
        t += elapsed;
        y = y1;
    }
    let m = head(&y);
    let (s, c) = engine.current_cost(t, &m);
    samples.push(FluidSample {
        t: if samples.is_empty() { 0.0 } else { horizon.max(t) },
        m,
        s4: s,
        inst_cost: c,
    });
    Ok(Trajectory { samples })
}

/// `int_0^inf (cost(t) - E*) dt` along the closed loop started at `m0`,
/// where `(m_star, e_star)` is the equilibrium the policy drives to.
///
/// Stops once `||m - m*||_1 < 1e-9` and `|cost - E*| < 1e-10`.
pub fn bias_cost(
    m0: &Measure,
    policy: &dyn FluidPolicy,
    m_star: &Measure,
    e_star: f64,
    dt: f64,
    params: &ModelParams,
) -> Result<f64> {
    check_dt(dt)?;
    let engine = Engine::new(policy, e_star, params)?;
    let target = to_array(m_star)?;
    let mut y = augment(&to_array(m0)?);
    let mut t = 0.0;
    loop {
        let m = head(&y);
        let gap: f64 = m.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum();
        let (_, c) = engine.current_cost(t, &m);
        if gap < BIAS_STATE_TOL && (c - e_star).abs() < BIAS_COST_TOL {
            return Ok(y[4]);
        }
        if t >= BIAS_T_MAX {
            return Err(Error::NonConvergent { t_max: BIAS_T_MAX });
        }
        let (elapsed, y1, _) = engine.advance(t, &y, dt)?;
        t += elapsed;
        y = y1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeCost {
    /// `int_0^T (cost(t) - e_ref) dt`.
    pub value: f64,
    /// Time after which the state was stationary, if reached before `T`.
    pub stationary_from: Option<f64>,
    pub m_end: [f64; 4],
    /// Cost rate at the final state.
    pub cost_end: f64,
}

/// `int_0^horizon (cost(t) - e_ref) dt`; once the flow is stationary the
/// remainder is added in closed form.
pub fn relative_cost(
    m0: &Measure,
    policy: &dyn FluidPolicy,
    e_ref: f64,
    horizon: f64,
    dt: f64,
    params: &ModelParams,
) -> Result<RelativeCost> {
    check_dt(dt)?;
    let engine = Engine::new(policy, e_ref, params)?;
    let mut y = augment(&to_array(m0)?);
    let mut t = 0.0;
    while t < horizon {
        let m = head(&y);
        if engine.stationary(t, &m) {
            let (_, c) = engine.current_cost(t, &m);
            return Ok(RelativeCost {
                value: y[4] + (c - e_ref) * (horizon - t),
                stationary_from: Some(t),
                m_end: m,
                cost_end: c,
            });
        }
        let (elapsed, y1, _) = engine.advance(t, &y, dt.min(horizon - t))?;
        t += elapsed;
        y = y1;
    }
    let m = head(&y);
    let (_, c) = engine.current_cost(t, &m);
    Ok(RelativeCost {
        value: y[4],
        stationary_from: None,
        m_end: m,
        cost_end: c,
    })
}
