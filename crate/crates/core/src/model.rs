//! Model parameters, per-user state indexing and the SINR/power formulas.
//!
//! Per-user states are `(channel level, queue length)` pairs. They are
//! flattened as `flat = level * (q_max + 1) + queue + 1`, so flat indices are
//! 1-based in every public interface (state 1 is `(BAD, 0)` and state 4 is
//! `(GOOD, 1)` for the two-level, single-buffer model). Slices holding
//! per-state values are stored 0-based: entry `flat - 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Assumption, Error, Result};

/// Tolerance on the total mass of a channel law.
pub const DISTRIBUTION_TOL: f64 = 1e-12;
/// Tolerance on the total mass of a measure.
pub const MEASURE_TOL: f64 = 1e-9;
/// Relative slack used when testing `SINR >= theta`; the exact-threshold
/// power is computed in floating point and can land one ulp short.
pub const SINR_REL_TOL: f64 = 1e-12;

/// Channel evolution law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelLaw {
    /// Channel level drawn independently every slot with probabilities `beta`.
    Iid(Vec<f64>),
    /// Row-stochastic matrix `b[from][to]`.
    Markov(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModel {
    Iid,
    Markov,
}

impl ChannelLaw {
    pub fn model(&self) -> ChannelModel {
        match self {
            ChannelLaw::Iid(_) => ChannelModel::Iid,
            ChannelLaw::Markov(_) => ChannelModel::Markov,
        }
    }

    /// Probability of moving to level `to` from level `from`.
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        match self {
            ChannelLaw::Iid(beta) => beta[to],
            ChannelLaw::Markov(b) => b[from][to],
        }
    }

    /// Next-level distribution given the current level.
    pub fn row(&self, from: usize) -> &[f64] {
        match self {
            ChannelLaw::Iid(beta) => beta,
            ChannelLaw::Markov(b) => &b[from],
        }
    }
}

/// Physical and statistical constants of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Channel gains `c_1 <= ... <= c_K`.
    pub gains: Vec<f64>,
    pub channel: ChannelLaw,
    /// Per-slot arrival probability.
    pub rho: f64,
    /// SINR threshold.
    pub theta: f64,
    /// Noise power.
    pub n0: f64,
    /// Queue-cost weight per packet per slot.
    pub lambda: f64,
    pub p_max: f64,
    pub q_max: usize,
}

/// Scalar view of the GOOD/BAD, single-packet-buffer, i.i.d. model on which
/// the equilibrium and threshold analysis is carried out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStateModel {
    /// Probability of the GOOD channel.
    pub beta1: f64,
    pub rho: f64,
    pub theta: f64,
    pub n0: f64,
    pub lambda: f64,
}

impl TwoStateModel {
    pub fn beta0(&self) -> f64 {
        1.0 - self.beta1
    }
}

fn check_distribution(what: &str, p: &[f64]) -> Result<()> {
    if let Some(x) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::NotADistribution {
            what: what.to_string(),
            detail: format!("entry {x} is negative or not finite"),
        });
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(Error::NotADistribution {
            what: what.to_string(),
            detail: format!("entries sum to {total}"),
        });
    }
    Ok(())
}

impl ModelParams {
    /// GOOD/BAD channel (gains 0 and 1), i.i.d. with `P(GOOD) = beta1`,
    /// single-packet buffer.
    pub fn two_state(theta: f64, beta1: f64, rho: f64, lambda: f64, n0: f64, p_max: f64) -> Self {
        ModelParams {
            gains: vec![0.0, 1.0],
            channel: ChannelLaw::Iid(vec![1.0 - beta1, beta1]),
            rho,
            theta,
            n0,
            lambda,
            p_max,
            q_max: 1,
        }
    }

    /// The ten-device MTC example: theta = 0.2, beta1 = 0.4, lambda = 1.5,
    /// N0 = 1, p_max = 10.
    pub fn mtc_example(rho: f64) -> Self {
        Self::two_state(0.2, 0.4, rho, 1.5, 1.0, 10.0)
    }

    pub fn num_levels(&self) -> usize {
        self.gains.len()
    }

    /// Number of per-user states `K (q_max + 1)`.
    pub fn num_states(&self) -> usize {
        self.gains.len() * (self.q_max + 1)
    }

    /// Returns the parameters unchanged if every modelling invariant holds.
    pub fn validate(self) -> Result<Self> {
        let k = self.gains.len();
        if k == 0 {
            return Err(Error::InvalidParameter {
                name: "gains",
                detail: "at least one channel level is required".into(),
            });
        }
        if self.gains.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidParameter {
                name: "gains",
                detail: "gains must be finite and non-negative".into(),
            });
        }
        if self.gains.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParameter {
                name: "gains",
                detail: "gains must be sorted ascending".into(),
            });
        }
        match &self.channel {
            ChannelLaw::Iid(beta) => {
                if beta.len() != k {
                    return Err(Error::WrongDimensions(format!(
                        "beta has {} entries for {k} channel levels",
                        beta.len()
                    )));
                }
                check_distribution("beta", beta)?;
            }
            ChannelLaw::Markov(b) => {
                if b.len() != k || b.iter().any(|row| row.len() != k) {
                    return Err(Error::WrongDimensions(format!(
                        "channel matrix must be {k}x{k}"
                    )));
                }
                for (i, row) in b.iter().enumerate() {
                    check_distribution(&format!("channel matrix row {i}"), row)?;
                }
            }
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter {
                name: "rho",
                detail: format!("{} is not in (0, 1)", self.rho),
            });
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                detail: format!("{} is negative", self.lambda),
            });
        }
        if !(self.n0 > 0.0 && self.n0.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "n0",
                detail: format!("{} is not positive", self.n0),
            });
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "p_max",
                detail: format!("{} is not positive", self.p_max),
            });
        }
        if self.q_max < 1 {
            return Err(Error::InvalidParameter {
                name: "q_max",
                detail: "buffer must hold at least one packet".into(),
            });
        }
        if self.theta.is_nan() || self.theta <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "theta",
                detail: format!("{} is not positive", self.theta),
            });
        }
        if self.theta >= 1.0 {
            return Err(Error::AssumptionViolation {
                assumption: Assumption::ThresholdBelowOne,
                detail: format!("theta = {}", self.theta),
            });
        }
        for &c in self.gains.iter().filter(|c| **c > 0.0) {
            let bound = self.p_max * c / (self.n0 + self.p_max * c);
            if self.theta > bound {
                return Err(Error::AssumptionViolation {
                    assumption: Assumption::PowerCapSufficient,
                    detail: format!("theta = {} exceeds {bound} for gain {c}", self.theta),
                });
            }
        }
        Ok(self)
    }

    /// Scalar view for the analysed GOOD/BAD, `q_max = 1`, i.i.d. case.
    pub fn two_state_view(&self) -> Result<TwoStateModel> {
        let beta = match &self.channel {
            ChannelLaw::Iid(beta) => beta,
            ChannelLaw::Markov(_) => {
                return Err(Error::WrongDimensions(
                    "equilibrium analysis needs an i.i.d. channel".into(),
                ))
            }
        };
        if self.gains != [0.0, 1.0] || self.q_max != 1 {
            return Err(Error::WrongDimensions(format!(
                "expected gains [0, 1] and q_max = 1, got {:?} and q_max = {}",
                self.gains, self.q_max
            )));
        }
        Ok(TwoStateModel {
            beta1: beta[1],
            rho: self.rho,
            theta: self.theta,
            n0: self.n0,
            lambda: self.lambda,
        })
    }
}

/// A per-user state together with its flat 1-based index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateIndex {
    pub channel_level: usize,
    pub queue_len: usize,
    pub flat: usize,
}

impl StateIndex {
    pub fn new(channel_level: usize, queue_len: usize, params: &ModelParams) -> Result<Self> {
        if channel_level >= params.num_levels() || queue_len > params.q_max {
            return Err(Error::OutOfRange(format!(
                "(level {channel_level}, queue {queue_len}) with K = {} and q_max = {}",
                params.num_levels(),
                params.q_max
            )));
        }
        Ok(StateIndex {
            channel_level,
            queue_len,
            flat: channel_level * (params.q_max + 1) + queue_len + 1,
        })
    }

    pub fn from_flat(flat: usize, params: &ModelParams) -> Result<Self> {
        if flat == 0 || flat > params.num_states() {
            return Err(Error::OutOfRange(format!(
                "flat index {flat} outside 1..={}",
                params.num_states()
            )));
        }
        let width = params.q_max + 1;
        Ok(StateIndex {
            channel_level: (flat - 1) / width,
            queue_len: (flat - 1) % width,
            flat,
        })
    }

    /// Queue length of the state.
    pub fn sigma(&self) -> usize {
        self.queue_len
    }

    /// Position of this state in 0-based per-state slices.
    pub fn offset(&self) -> usize {
        self.flat - 1
    }
}

/// Queue length of the state stored at 0-based offset `i`.
pub fn sigma(i: usize, params: &ModelParams) -> usize {
    i % (params.q_max + 1)
}

/// Channel gain of the state stored at 0-based offset `i`.
pub fn gain(i: usize, params: &ModelParams) -> f64 {
    params.gains[i / (params.q_max + 1)]
}

/// A point of the probability simplex over per-user states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Measure(Vec<f64>);

impl Measure {
    pub fn new(m: Vec<f64>) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::WrongDimensions("empty measure".into()));
        }
        if let Some(x) = m.iter().find(|x| !(x.is_finite() && **x >= 0.0 && **x <= 1.0)) {
            return Err(Error::NotADistribution {
                what: "measure".into(),
                detail: format!("entry {x} outside [0, 1]"),
            });
        }
        let total: f64 = m.iter().sum();
        if (total - 1.0).abs() > MEASURE_TOL {
            return Err(Error::NotADistribution {
                what: "measure".into(),
                detail: format!("entries sum to {total}"),
            });
        }
        Ok(Measure(m))
    }

    /// Wraps a vector produced by a mass-conserving map without re-checking.
    pub(crate) fn from_vec_unchecked(m: Vec<f64>) -> Self {
        Measure(m)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn l1_distance(&self, other: &Measure) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }
}

impl std::ops::Index<usize> for Measure {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Per-state activation fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlProfile(Vec<f64>);

impl ControlProfile {
    /// Checks ranges and that states with zero gain or an empty queue are
    /// never activated.
    pub fn new(s: Vec<f64>, params: &ModelParams) -> Result<Self> {
        if s.len() != params.num_states() {
            return Err(Error::WrongDimensions(format!(
                "control has {} entries, expected {}",
                s.len(),
                params.num_states()
            )));
        }
        for (i, &si) in s.iter().enumerate() {
            if !(0.0..=1.0).contains(&si) {
                return Err(Error::InvalidParameter {
                    name: "s",
                    detail: format!("s_{} = {si} outside [0, 1]", i + 1),
                });
            }
            if si != 0.0 && (gain(i, params) == 0.0 || sigma(i, params) == 0) {
                return Err(Error::InvalidParameter {
                    name: "s",
                    detail: format!("s_{} must be 0 (zero gain or empty queue)", i + 1),
                });
            }
        }
        Ok(ControlProfile(s))
    }

    pub fn zeros(params: &ModelParams) -> Self {
        ControlProfile(vec![0.0; params.num_states()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Minimal powers making the SINR of every activated class exactly
/// `theta * s_i` in the mean-field interference limit.
pub fn power_star(s: &ControlProfile, m: &Measure, params: &ModelParams) -> Vec<f64> {
    let load: f64 = s.0.iter().zip(m.as_slice()).map(|(a, b)| a * b).sum();
    let denom = 1.0 - params.theta * load;
    s.0.iter()
        .enumerate()
        .map(|(i, &si)| {
            let c = gain(i, params);
            if c > 0.0 {
                params.theta * params.n0 * si / (c * denom)
            } else {
                0.0
            }
        })
        .collect()
}

/// SINR of class `i` (0-based) when interference is averaged over the measure.
pub fn mean_field_sinr(i: usize, p: &[f64], m: &Measure, params: &ModelParams) -> f64 {
    let interference: f64 = p
        .iter()
        .zip(m.as_slice())
        .enumerate()
        .map(|(j, (pj, mj))| pj * gain(j, params) * mj)
        .sum();
    p[i] * gain(i, params) / (interference + params.n0)
}

/// SINR of user `n` among `h.len()` users with interference weights `1/N`.
pub fn finite_sinr(n: usize, h: &[f64], p: &[f64], params: &ModelParams) -> f64 {
    let big_n = h.len() as f64;
    let others: f64 = h
        .iter()
        .zip(p)
        .enumerate()
        .filter(|(k, _)| *k != n)
        .map(|(_, (hk, pk))| hk * pk)
        .sum();
    h[n] * p[n] / (others / big_n + params.n0)
}

pub fn meets_threshold(sinr: f64, theta: f64) -> bool {
    sinr >= theta * (1.0 - SINR_REL_TOL)
}

/// One packet per slot if the SINR constraint holds, zero otherwise.
pub fn rate(n: usize, h: &[f64], p: &[f64], params: &ModelParams) -> u8 {
    u8::from(meets_threshold(finite_sinr(n, h, p, params), params.theta))
}
