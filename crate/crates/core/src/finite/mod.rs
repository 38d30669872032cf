//! The stochastic system with a finite number `N` of users.
//!
//! Users are exchangeable, so the controlled chain is aggregated to the
//! per-class counts `(n1, n2, n3, n4)`. The action is the number `k <= n4`
//! of loaded GOOD-channel users that transmit, all at the symmetric power that
//! meets the SINR threshold exactly. Stage costs are charged on the state at
//! the start of the slot.

mod sim;
mod vi;

pub use sim::{simulate, simulate_user_transitions, step_user, SimOptions, SimRecord, SimResult};
pub use vi::{
    evaluate_policy_exact, relative_value_iteration, FiniteMdp, PolicyEvaluation, VIResult,
    DEFAULT_VI_TOL, EVAL_TOL, MAX_EVAL_ITERATIONS, MAX_VI_ITERATIONS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::build_tables;
use crate::model::ModelParams;

/// Users per class, in flat-state order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AggregateState {
    pub counts: [usize; 4],
}

impl AggregateState {
    pub fn new(counts: [usize; 4]) -> Self {
        Self { counts }
    }

    pub fn n_users(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Users with a packet in the buffer.
    pub fn backlog(&self) -> usize {
        self.counts[1] + self.counts[3]
    }

    pub fn measure(&self) -> [f64; 4] {
        let n = self.n_users() as f64;
        self.counts.map(|c| c as f64 / n)
    }
}

/// All compositions of `N` into four classes, in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    n: usize,
    states: Vec<AggregateState>,
    /// Index by `(n1, n2, n3)`; `n4` is implied.
    lookup: Vec<usize>,
}

impl StateSpace {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "n_users",
                detail: "need at least one user".into(),
            });
        }
        let side = n + 1;
        let mut lookup = vec![usize::MAX; side * side * side];
        let mut states = Vec::new();
        for n1 in 0..=n {
            for n2 in 0..=n - n1 {
                for n3 in 0..=n - n1 - n2 {
                    lookup[(n1 * side + n2) * side + n3] = states.len();
                    states.push(AggregateState::new([n1, n2, n3, n - n1 - n2 - n3]));
                }
            }
        }
        Ok(Self { n, states, lookup })
    }

    pub fn n_users(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[AggregateState] {
        &self.states
    }

    pub fn state(&self, index: usize) -> AggregateState {
        self.states[index]
    }

    pub fn index(&self, s: &AggregateState) -> Result<usize> {
        if s.n_users() != self.n {
            return Err(Error::OutOfRange(format!(
                "{:?} does not hold {} users",
                s.counts, self.n
            )));
        }
        let side = self.n + 1;
        let [n1, n2, n3, _] = s.counts;
        Ok(self.lookup[(n1 * side + n2) * side + n3])
    }
}

/// State space for `N` users; requires the GOOD/BAD, single-buffer model.
pub fn enumerate_states(n: usize, params: &ModelParams) -> Result<StateSpace> {
    params.two_state_view()?;
    StateSpace::new(n)
}

/// Symmetric power at which each of `k` transmitters meets the threshold:
/// `theta N0 / (1 - theta (k - 1) / N)`.
pub fn transmit_power(k: usize, n: usize, params: &ModelParams) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::Infeasible {
            k,
            reason: format!("need 1 <= k <= N = {n}"),
        });
    }
    let load = params.theta * (k - 1) as f64 / n as f64;
    if load >= 1.0 {
        return Err(Error::Infeasible {
            k,
            reason: format!("interference load theta (k - 1) / N = {load} >= 1"),
        });
    }
    let p = params.theta * params.n0 / (1.0 - load);
    if p > params.p_max {
        return Err(Error::Infeasible {
            k,
            reason: format!("power {p} exceeds p_max = {}", params.p_max),
        });
    }
    Ok(p)
}

/// `k p(k) + lambda (n2 + n4)` on the pre-transition state.
pub fn stage_cost(state: &AggregateState, k: usize, params: &ModelParams) -> Result<f64> {
    check_action(state, k)?;
    let power = if k == 0 {
        0.0
    } else {
        k as f64 * transmit_power(k, state.n_users(), params)?
    };
    Ok(power + params.lambda * state.backlog() as f64)
}

fn check_action(state: &AggregateState, k: usize) -> Result<()> {
    if k > state.counts[3] {
        return Err(Error::Infeasible {
            k,
            reason: format!("only {} loaded GOOD-channel users", state.counts[3]),
        });
    }
    Ok(())
}

/// Single-user transition rows used by the aggregated chain.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct UserRows {
    /// `gamma^0` rows for the four classes.
    idle: [[f64; 4]; 4],
    /// `gamma^1` row of the loaded GOOD-channel class.
    served: [f64; 4],
}

impl UserRows {
    pub(crate) fn new(params: &ModelParams) -> Result<Self> {
        params.two_state_view()?;
        let t = build_tables(params);
        Ok(Self {
            idle: std::array::from_fn(|i| std::array::from_fn(|j| t.gamma0[(i, j)])),
            served: std::array::from_fn(|j| t.gamma1[(3, j)]),
        })
    }
}

/// Convolves one user's destination law into a partial count distribution.
/// `dist` is indexed by `(n1, n2, n3)` over `side^3` cells with `n4` implied.
fn convolve_user(dist: &[f64], placed: usize, row: &[f64; 4], side: usize) -> Vec<f64> {
    let mut next = vec![0.0; dist.len()];
    for n1 in 0..=placed {
        for n2 in 0..=placed - n1 {
            for n3 in 0..=placed - n1 - n2 {
                let mass = dist[(n1 * side + n2) * side + n3];
                if mass == 0.0 {
                    continue;
                }
                let at = |a: usize, b: usize, c: usize| (a * side + b) * side + c;
                next[at(n1 + 1, n2, n3)] += mass * row[0];
                next[at(n1, n2 + 1, n3)] += mass * row[1];
                next[at(n1, n2, n3 + 1)] += mass * row[2];
                next[at(n1, n2, n3)] += mass * row[3];
            }
        }
    }
    next
}

pub(crate) fn transition_sparse(
    space: &StateSpace,
    state: &AggregateState,
    k: usize,
    rows: &UserRows,
) -> Result<Vec<(usize, f64)>> {
    check_action(state, k)?;
    let side = space.n + 1;
    let mut dist = vec![0.0; side * side * side];
    dist[0] = 1.0;
    let mut placed = 0;
    let mut add = |dist: &mut Vec<f64>, row: &[f64; 4], count: usize| {
        for _ in 0..count {
            *dist = convolve_user(dist, placed, row, side);
            placed += 1;
        }
    };
    for class in 0..3 {
        add(&mut dist, &rows.idle[class], state.counts[class]);
    }
    add(&mut dist, &rows.idle[3], state.counts[3] - k);
    add(&mut dist, &rows.served, k);
    let mut out = Vec::new();
    for (i, s) in space.states.iter().enumerate() {
        let [n1, n2, n3, _] = s.counts;
        let mass = dist[(n1 * side + n2) * side + n3];
        if mass > 0.0 {
            out.push((i, mass));
        }
    }
    Ok(out)
}

/// Law of the next aggregate state when `k` loaded GOOD-channel users
/// transmit and everyone else stays silent.
pub fn transition_distribution(
    state: &AggregateState,
    k: usize,
    params: &ModelParams,
) -> Result<Vec<(AggregateState, f64)>> {
    let n = state.n_users();
    if k > 0 {
        transmit_power(k, n, params)?;
    }
    let space = StateSpace::new(n)?;
    let rows = UserRows::new(params)?;
    Ok(transition_sparse(&space, state, k, &rows)?
        .into_iter()
        .map(|(i, p)| (space.state(i), p))
        .collect())
}

/// Stationary feedback on aggregate counts.
pub trait AggregatePolicy: Sync {
    /// Number of loaded GOOD-channel users that transmit.
    fn action(&self, state: &AggregateState) -> usize;
}

/// Action table indexed like a [`StateSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPolicy {
    space: StateSpace,
    actions: Vec<usize>,
}

impl TabulatedPolicy {
    pub fn new(space: StateSpace, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != space.len() {
            return Err(Error::WrongDimensions(format!(
                "{} actions for {} states",
                actions.len(),
                space.len()
            )));
        }
        Ok(Self { space, actions })
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }
}

impl AggregatePolicy for TabulatedPolicy {
    fn action(&self, state: &AggregateState) -> usize {
        self.space.index(state).map_or(0, |i| self.actions[i])
    }
}

/// Wraps a closure on aggregate states.
pub struct FnAggregatePolicy<F>(pub F);

impl<F: Fn(&AggregateState) -> usize + Sync> AggregatePolicy for FnAggregatePolicy<F> {
    fn action(&self, state: &AggregateState) -> usize {
        (self.0)(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::finite_sinr;
    use std::collections::BTreeMap;

    fn p() -> ModelParams {
        ModelParams::mtc_example(0.1)
    }

    #[test]
    fn state_counts() {
        assert_eq!(enumerate_states(1, &p()).unwrap().len(), 4);
        assert_eq!(enumerate_states(2, &p()).unwrap().len(), 10);
        assert_eq!(enumerate_states(10, &p()).unwrap().len(), 286);
    }

    #[test]
    fn states_are_sorted_and_indexed() {
        let space = enumerate_states(10, &p()).unwrap();
        assert!(space.states().windows(2).all(|w| w[0] < w[1]));
        for (i, s) in space.states().iter().enumerate() {
            assert_eq!(space.index(s).unwrap(), i);
        }
        assert!(space.index(&AggregateState::new([1, 1, 1, 1])).is_err());
    }

    #[test]
    fn transmit_power_examples() {
        let params = p();
        assert!((transmit_power(1, 10, &params).unwrap() - 0.2).abs() < 1e-15);
        let p3 = transmit_power(3, 10, &params).unwrap();
        assert!((p3 - 0.2 / 0.96).abs() < 1e-15);
        let h = vec![1.0; 10];
        let mut powers = vec![0.0; 10];
        powers[..3].fill(p3);
        for n in 0..3 {
            assert!((finite_sinr(n, &h, &powers, &params) - 0.2).abs() < 1e-15);
        }
        assert!(matches!(transmit_power(0, 10, &params), Err(Error::Infeasible { .. })));
        let mut tight = params.clone();
        tight.p_max = 0.205;
        assert!(matches!(transmit_power(3, 10, &tight), Err(Error::Infeasible { k: 3, .. })));
        let mut loud = params;
        loud.theta = 0.9;
        assert!(matches!(transmit_power(3, 2, &loud), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn stage_cost_examples() {
        let params = p();
        assert_eq!(stage_cost(&AggregateState::new([10, 0, 0, 0]), 0, &params).unwrap(), 0.0);
        let c = stage_cost(&AggregateState::new([3, 2, 2, 3]), 3, &params).unwrap();
        assert!((c - (3.0 * 0.2 / 0.96 + 7.5)).abs() < 1e-14);
        assert!((c - 8.125).abs() < 1e-12);
        assert_eq!(stage_cost(&AggregateState::new([0, 4, 0, 6]), 0, &params).unwrap(), 15.0);
        assert!(stage_cost(&AggregateState::new([0, 4, 0, 6]), 7, &params).is_err());
    }

    #[test]
    fn single_user_transition_is_gamma_row() {
        let d = transition_distribution(&AggregateState::new([0, 0, 0, 1]), 1, &p()).unwrap();
        let expect = [0.54, 0.06, 0.36, 0.04];
        assert_eq!(d.len(), 4);
        for (s, mass) in d {
            let j = s.counts.iter().position(|&c| c == 1).unwrap();
            assert!((mass - expect[j]).abs() < 1e-15);
        }
    }

    fn brute_force(state: &AggregateState, k: usize, params: &ModelParams) -> BTreeMap<[usize; 4], f64> {
        let t = build_tables(params);
        let mut classes = Vec::new();
        for (c, &n) in state.counts.iter().enumerate() {
            classes.extend(std::iter::repeat_n(c, n));
        }
        // the first k class-4 users transmit
        let first4 = classes.iter().position(|&c| c == 3).unwrap_or(0);
        let n = classes.len();
        let mut out = BTreeMap::new();
        for code in 0..4usize.pow(n as u32) {
            let mut counts = [0usize; 4];
            let mut mass = 1.0;
            let mut rest = code;
            for (u, &c) in classes.iter().enumerate() {
                let dest = rest % 4;
                rest /= 4;
                counts[dest] += 1;
                let served = c == 3 && u >= first4 && u < first4 + k;
                mass *= if served { t.gamma1[(c, dest)] } else { t.gamma0[(c, dest)] };
            }
            *out.entry(counts).or_insert(0.0) += mass;
        }
        out
    }

    #[test]
    fn aggregate_law_matches_joint_enumeration() {
        let params = ModelParams::mtc_example(0.3);
        let cases = [
            ([0, 0, 0, 2], 0),
            ([0, 0, 0, 2], 1),
            ([1, 0, 0, 2], 2),
            ([1, 1, 1, 0], 0),
            ([0, 1, 0, 2], 1),
            ([0, 0, 1, 2], 2),
        ];
        for (counts, k) in cases {
            let state = AggregateState::new(counts);
            let fast: BTreeMap<[usize; 4], f64> = transition_distribution(&state, k, &params)
                .unwrap()
                .into_iter()
                .map(|(s, m)| (s.counts, m))
                .collect();
            let slow = brute_force(&state, k, &params);
            let keys: std::collections::BTreeSet<_> = fast.keys().chain(slow.keys()).collect();
            for key in keys {
                let a = fast.get(key).copied().unwrap_or(0.0);
                let b = slow.get(key).copied().unwrap_or(0.0);
                assert!((a - b).abs() < 1e-14, "{counts:?} k={k} at {key:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn aggregate_laws_sum_to_one() {
        let params = p();
        let space = enumerate_states(6, &params).unwrap();
        let rows = UserRows::new(&params).unwrap();
        for s in space.states() {
            for k in 0..=s.counts[3] {
                let d = transition_sparse(&space, s, k, &rows).unwrap();
                let total: f64 = d.iter().map(|(_, m)| m).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn per_user_marginals_match_gamma_rows() {
        // the mean next count of each class is the sum of the users' rows
        let params = ModelParams::mtc_example(0.2);
        let t = build_tables(&params);
        let state = AggregateState::new([1, 0, 1, 1]);
        for k in 0..=1 {
            let d = transition_distribution(&state, k, &params).unwrap();
            for j in 0..4 {
                let mean: f64 = d.iter().map(|(s, m)| s.counts[j] as f64 * m).sum();
                let served = if k == 1 { t.gamma1[(3, j)] } else { t.gamma0[(3, j)] };
                let expect = t.gamma0[(0, j)] + t.gamma0[(2, j)] + served;
                assert!((mean - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tabulated_policy_lookup() {
        let space = StateSpace::new(2).unwrap();
        let actions: Vec<usize> = space.states().iter().map(|s| s.counts[3]).collect();
        let pol = TabulatedPolicy::new(space.clone(), actions).unwrap();
        assert_eq!(pol.action(&AggregateState::new([0, 0, 0, 2])), 2);
        assert!(TabulatedPolicy::new(space, vec![0]).is_err());
    }
}
