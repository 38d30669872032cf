use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{transmit_power, AggregatePolicy, AggregateState};
use crate::error::{Error, Result};
use crate::fluid::format_sig12;
use crate::model::{rate, ModelParams};

const CI_BATCHES: usize = 20;

/// One slot of a single user: queue update from the service outcome and a
/// Bernoulli(`rho`) arrival, then a fresh channel level.
pub fn step_user<R: Rng + ?Sized>(
    level: usize,
    queue: usize,
    success: bool,
    params: &ModelParams,
    rng: &mut R,
) -> (usize, usize) {
    let served = usize::from(success && queue > 0);
    let arrival = usize::from(rng.gen::<f64>() < params.rho);
    let next_queue = (queue - served + arrival).min(params.q_max);
    let row = params.channel.row(level);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut next_level = row.len() - 1;
    for (l, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            next_level = l;
            break;
        }
    }
    (next_level, next_queue)
}

/// Next-state counts of `samples` independent one-slot transitions from the
/// 0-based state `offset` with the given service outcome.
pub fn simulate_user_transitions(
    offset: usize,
    success: bool,
    samples: usize,
    params: &ModelParams,
    seed: u64,
) -> Result<Vec<u64>> {
    let width = params.q_max + 1;
    if offset >= params.num_states() {
        return Err(Error::OutOfRange(format!(
            "state offset {offset} of {}",
            params.num_states()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; params.num_states()];
    for _ in 0..samples {
        let (l, q) = step_user(offset / width, offset % width, success, params, &mut rng);
        counts[l * width + q] += 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Fraction of the horizon discarded before averaging.
    pub burn_in: f64,
    /// Initial class counts; defaults to empty queues with channels drawn
    /// from their stationary law.
    pub initial: Option<[usize; 4]>,
    pub record_trajectory: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            burn_in: 0.1,
            initial: None,
            record_trajectory: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub t: usize,
    pub counts: [usize; 4],
    pub action: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub mean_cost: f64,
    /// Half-width of the 95% batch-means interval.
    pub ci95: f64,
    /// Pre-transition states and actions, one per slot, plus the final state
    /// (with `action = 0`, `cost = NaN`) when recording.
    pub trajectory: Vec<SimRecord>,
}

impl SimResult {
    /// Columns `t,n1,n2,n3,n4,action,cost`.
    pub fn write_trajectory_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,n1,n2,n3,n4,action,cost")?;
        for r in &self.trajectory {
            let [a, b, c, d] = r.counts;
            writeln!(w, "{},{a},{b},{c},{d},{},{}", r.t, r.action, format_sig12(r.cost))?;
        }
        Ok(())
    }
}

fn class_of(level: usize, queue: usize) -> usize {
    2 * level + queue
}

/// Slot-by-slot simulation of `n` users; deterministic given `seed`.
pub fn simulate(
    policy: &dyn AggregatePolicy,
    params: &ModelParams,
    n: usize,
    horizon: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<SimResult> {
    let tw = params.two_state_view()?;
    if horizon == 0 || n == 0 {
        return Err(Error::InvalidParameter {
            name: "horizon",
            detail: "need at least one slot and one user".into(),
        });
    }
    if !(0.0..1.0).contains(&opts.burn_in) {
        return Err(Error::InvalidParameter {
            name: "burn_in",
            detail: format!("{} outside [0, 1)", opts.burn_in),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users: Vec<(usize, usize)> = match opts.initial {
        Some(counts) => {
            if counts.iter().sum::<usize>() != n {
                return Err(Error::WrongDimensions(format!("{counts:?} does not hold {n} users")));
            }
            (0..4)
                .flat_map(|c| std::iter::repeat_n((c / 2, c % 2), counts[c]))
                .collect()
        }
        None => (0..n)
            .map(|_| (usize::from(rng.gen::<f64>() < tw.beta1), 0))
            .collect(),
    };

    let skip = (opts.burn_in * horizon as f64).floor() as usize;
    let mut kept = Vec::with_capacity(horizon - skip);
    let mut trajectory = Vec::new();
    let mut gains = vec![0.0; n];
    let mut powers = vec![0.0; n];
    for t in 0..horizon {
        let mut counts = [0usize; 4];
        for &(l, q) in &users {
            counts[class_of(l, q)] += 1;
        }
        let state = AggregateState::new(counts);
        let k = policy.action(&state);
        if k > counts[3] {
            return Err(Error::Infeasible {
                k,
                reason: format!("only {} loaded GOOD-channel users", counts[3]),
            });
        }
        let p = if k > 0 { transmit_power(k, n, params)? } else { 0.0 };
        let cost = k as f64 * p + params.lambda * state.backlog() as f64;

        let mut assigned = 0;
        for (u, &(l, q)) in users.iter().enumerate() {
            gains[u] = params.gains[l];
            powers[u] = if assigned < k && class_of(l, q) == 3 {
                assigned += 1;
                p
            } else {
                0.0
            };
        }
        for u in 0..n {
            let (l, q) = users[u];
            let success = powers[u] > 0.0 && rate(u, &gains, &powers, params) == 1;
            users[u] = step_user(l, q, success, params, &mut rng);
        }

        if t >= skip {
            kept.push(cost);
        }
        if opts.record_trajectory {
            trajectory.push(SimRecord {
                t,
                counts,
                action: k,
                cost,
            });
        }
    }
    if opts.record_trajectory {
        let mut counts = [0usize; 4];
        for &(l, q) in &users {
            counts[class_of(l, q)] += 1;
        }
        trajectory.push(SimRecord {
            t: horizon,
            counts,
            action: 0,
            cost: f64::NAN,
        });
    }

    let mean_cost = kept.iter().sum::<f64>() / kept.len() as f64;
    Ok(SimResult {
        mean_cost,
        ci95: batch_ci95(&kept),
        trajectory,
    })
}

fn batch_ci95(x: &[f64]) -> f64 {
    let size = x.len() / CI_BATCHES;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = x
        .chunks_exact(size)
        .take(CI_BATCHES)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let b = means.len() as f64;
    let mean = means.iter().sum::<f64>() / b;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (b - 1.0);
    1.96 * (var / b).sqrt()
}
