use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    enumerate_states, stage_cost, transition_sparse, AggregatePolicy, AggregateState, StateSpace,
    TabulatedPolicy, UserRows,
};
use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const DEFAULT_VI_TOL: f64 = 1e-9;
pub const MAX_VI_ITERATIONS: usize = 1_000_000;
/// L1 change of the distribution at which power iteration stops.
pub const EVAL_TOL: f64 = 1e-12;
pub const MAX_EVAL_ITERATIONS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
struct Action {
    k: usize,
    cost: f64,
    next: Vec<(usize, f64)>,
}

/// The aggregated MDP with all feasible actions precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    space: StateSpace,
    params: ModelParams,
    actions: Vec<Vec<Action>>,
}

impl FiniteMdp {
    pub fn new(params: &ModelParams, n: usize) -> Result<Self> {
        let space = enumerate_states(n, params)?;
        let rows = UserRows::new(params)?;
        let actions = space
            .states()
            .par_iter()
            .map(|s| {
                let mut acts = Vec::new();
                for k in 0..=s.counts[3] {
                    match stage_cost(s, k, params) {
                        Ok(cost) => acts.push(Action {
                            k,
                            cost,
                            next: transition_sparse(&space, s, k, &rows)?,
                        }),
                        Err(Error::Infeasible { .. }) => {}
                        Err(e) => return Err(e),
                    }
                }
                Ok(acts)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            space,
            params: params.clone(),
            actions,
        })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    fn q_value(a: &Action, h: &[f64]) -> f64 {
        a.cost + a.next.iter().map(|&(j, p)| p * h[j]).sum::<f64>()
    }

    /// Relative value iteration anchored at the first state, stopped when the
    /// span of `T h - h` falls below `tol`.
    pub fn relative_value_iteration(&self, tol: f64) -> Result<VIResult> {
        if tol.is_nan() || tol <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "vi_tol",
                detail: format!("{tol} must be positive"),
            });
        }
        let n = self.space.len();
        let mut h = vec![0.0; n];
        let mut span = f64::INFINITY;
        for it in 1..=MAX_VI_ITERATIONS {
            let th: Vec<f64> = self
                .actions
                .par_iter()
                .map(|acts| {
                    acts.iter()
                        .map(|a| Self::q_value(a, &h))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let (lo, hi) = th
                .iter()
                .zip(&h)
                .map(|(a, b)| a - b)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
            span = hi - lo;
            let anchor = th[0];
            h = th.into_iter().map(|v| v - anchor).collect();
            if span < tol {
                let policy = self.greedy(&h);
                return Ok(VIResult {
                    g: 0.5 * (lo + hi),
                    h,
                    states: self.space.states().to_vec(),
                    policy,
                    iterations: it,
                    span_residual: span,
                });
            }
        }
        Err(Error::NoConvergence {
            iterations: MAX_VI_ITERATIONS,
            span,
        })
    }

    /// Minimising action per state; ties go to the smaller `k`.
    fn greedy(&self, h: &[f64]) -> Vec<usize> {
        self.actions
            .iter()
            .map(|acts| {
                let mut best = (f64::INFINITY, 0);
                for a in acts {
                    let q = Self::q_value(a, h);
                    if q < best.0 {
                        best = (q, a.k);
                    }
                }
                best.1
            })
            .collect()
    }

    fn chosen(&self, policy: &dyn AggregatePolicy) -> Result<Vec<&Action>> {
        self.space
            .states()
            .iter()
            .zip(&self.actions)
            .map(|(s, acts)| {
                let k = policy.action(s);
                acts.iter().find(|a| a.k == k).ok_or_else(|| Error::Infeasible {
                    k,
                    reason: format!("not an admissible action in state {:?}", s.counts),
                })
            })
            .collect()
    }

    /// Long-run average cost of a stationary policy from the stationary law
    /// of its induced chain.
    pub fn evaluate(&self, policy: &dyn AggregatePolicy) -> Result<PolicyEvaluation> {
        let chosen = self.chosen(policy)?;
        let n = self.space.len();
        let classes = closed_classes(&chosen, n);
        if classes != 1 {
            return Err(Error::MultichainDetected { classes });
        }
        let mut dist = vec![1.0 / n as f64; n];
        for it in 1..=MAX_EVAL_ITERATIONS {
            let mut next = vec![0.0; n];
            for (i, a) in chosen.iter().enumerate() {
                for &(j, p) in &a.next {
                    next[j] += dist[i] * p;
                }
            }
            let change: f64 = next.iter().zip(&dist).map(|(a, b)| (a - b).abs()).sum();
            dist = next;
            if change < EVAL_TOL {
                let g = dist.iter().zip(&chosen).map(|(p, a)| p * a.cost).sum();
                return Ok(PolicyEvaluation {
                    g,
                    stationary: dist,
                    iterations: it,
                });
            }
        }
        Err(Error::NoConvergence {
            iterations: MAX_EVAL_ITERATIONS,
            span: f64::NAN,
        })
    }

    pub fn tabulate(&self, policy: &dyn AggregatePolicy) -> Result<TabulatedPolicy> {
        let actions = self.chosen(policy)?.iter().map(|a| a.k).collect();
        TabulatedPolicy::new(self.space.clone(), actions)
    }
}

/// Number of strongly connected components without outgoing edges.
fn closed_classes(chosen: &[&Action], n: usize) -> usize {
    let mut graph = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (i, a) in chosen.iter().enumerate() {
        for &(j, p) in &a.next {
            if p > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut component = vec![0; n];
    for (c, members) in sccs.iter().enumerate() {
        for v in members {
            component[v.index()] = c;
        }
    }
    sccs.iter()
        .enumerate()
        .filter(|(c, members)| {
            members.iter().all(|v| {
                chosen[v.index()]
                    .next
                    .iter()
                    .all(|&(j, p)| p == 0.0 || component[j] == *c)
            })
        })
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VIResult {
    /// Optimal average cost per slot for the whole system.
    pub g: f64,
    /// Relative values, zero at the first state.
    pub h: Vec<f64>,
    pub states: Vec<AggregateState>,
    /// Greedy transmit count per state.
    pub policy: Vec<usize>,
    pub iterations: usize,
    pub span_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub g: f64,
    pub stationary: Vec<f64>,
    pub iterations: usize,
}

pub fn relative_value_iteration(params: &ModelParams, n: usize, tol: f64) -> Result<VIResult> {
    FiniteMdp::new(params, n)?.relative_value_iteration(tol)
}

pub fn evaluate_policy_exact(
    policy: &dyn AggregatePolicy,
    params: &ModelParams,
    n: usize,
) -> Result<f64> {
    Ok(FiniteMdp::new(params, n)?.evaluate(policy)?.g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite::FnAggregatePolicy;
    use crate::kernel::build_tables;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(rho: f64) -> ModelParams {
        ModelParams::mtc_example(rho)
    }

    /// Stationary law of the single-user chain when class 4 transmits iff
    /// `serve` holds, by a dense linear solve.
    fn single_user_cost(params: &ModelParams, serve: bool) -> f64 {
        let t = build_tables(params);
        let mut pmat = t.gamma0.clone();
        if serve {
            pmat.set_row(3, &t.gamma1.row(3));
        }
        // pi (P - I) = 0 with sum(pi) = 1
        let mut a = pmat.transpose() - DMatrix::identity(4, 4);
        a.set_row(3, &DMatrix::from_element(1, 4, 1.0).row(0));
        let mut b = DVector::zeros(4);
        b[3] = 1.0;
        let pi = a.lu().solve(&b).unwrap();
        let power = if serve { params.theta * params.n0 * pi[3] } else { 0.0 };
        power + params.lambda * (pi[1] + pi[3])
    }

    #[test]
    fn zero_queue_weight_never_transmits() {
        let mut params = p(0.1);
        params.lambda = 0.0;
        let r = relative_value_iteration(&params, 1, DEFAULT_VI_TOL).unwrap();
        assert!(r.g.abs() < 1e-12);
        assert!(r.policy.iter().all(|&k| k == 0));
    }

    #[test]
    fn single_user_matches_linear_solve() {
        let params = p(0.1);
        let r = relative_value_iteration(&params, 1, DEFAULT_VI_TOL).unwrap();
        let serve = r.policy[0] == 1; // state (0,0,0,1) is first
        let exact = single_user_cost(&params, serve);
        assert!((r.g - exact).abs() < 1e-8, "{} vs {exact}", r.g);
        assert!(serve);

        let mdp = FiniteMdp::new(&params, 1).unwrap();
        for serve in [false, true] {
            let pol = FnAggregatePolicy(move |s: &AggregateState| usize::from(serve) * s.counts[3]);
            let g = mdp.evaluate(&pol).unwrap().g;
            assert!((g - single_user_cost(&params, serve)).abs() < 1e-10);
        }
    }

    #[test]
    fn silent_policy_saturates_queues() {
        let g = evaluate_policy_exact(&FnAggregatePolicy(|_: &AggregateState| 0), &p(0.1), 10)
            .unwrap();
        assert!((g - 15.0).abs() < 1e-9);
    }

    #[test]
    fn greedy_policy_reproduces_vi_gain() {
        let params = p(0.2);
        let mdp = FiniteMdp::new(&params, 10).unwrap();
        assert_eq!(mdp.space().len(), 286);
        let r = mdp.relative_value_iteration(DEFAULT_VI_TOL).unwrap();
        assert!(r.span_residual < DEFAULT_VI_TOL);
        assert!(r.policy.iter().zip(&r.states).all(|(&k, s)| k <= s.counts[3]));
        let pol = TabulatedPolicy::new(mdp.space().clone(), r.policy.clone()).unwrap();
        let g = mdp.evaluate(&pol).unwrap().g;
        assert!((g - r.g).abs() < 2.0 * DEFAULT_VI_TOL);
        assert!((r.g - 6.085845830298515).abs() < 1e-8);
    }

    #[test]
    fn vi_lower_bounds_random_policies() {
        let params = p(0.1);
        let mdp = FiniteMdp::new(&params, 10).unwrap();
        let g_vi = mdp.relative_value_iteration(DEFAULT_VI_TOL).unwrap().g;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let actions: Vec<usize> =
                mdp.space().states().iter().map(|s| rng.gen_range(0..=s.counts[3])).collect();
            let pol = TabulatedPolicy::new(mdp.space().clone(), actions).unwrap();
            let g = mdp.evaluate(&pol).unwrap().g;
            assert!(g_vi <= g + 1e-9);
        }
    }

    #[test]
    fn multichain_is_detected() {
        // a frozen channel splits the single-user chain into BAD and GOOD parts
        let mut frozen = p(0.1);
        frozen.channel = crate::model::ChannelLaw::Markov(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let t = build_tables(&frozen);
        let rows = UserRows {
            idle: std::array::from_fn(|i| std::array::from_fn(|j| t.gamma0[(i, j)])),
            served: std::array::from_fn(|j| t.gamma1[(3, j)]),
        };
        let space = StateSpace::new(1).unwrap();
        let actions = space
            .states()
            .iter()
            .map(|s| {
                vec![Action {
                    k: 0,
                    cost: 0.0,
                    next: transition_sparse(&space, s, 0, &rows).unwrap(),
                }]
            })
            .collect();
        let mdp = FiniteMdp {
            space,
            params: p(0.1),
            actions,
        };
        let r = mdp.evaluate(&FnAggregatePolicy(|_: &AggregateState| 0));
        assert_eq!(r, Err(Error::MultichainDetected { classes: 2 }));
    }

    #[test]
    fn infeasible_policy_is_rejected() {
        let mdp = FiniteMdp::new(&p(0.1), 2).unwrap();
        let r = mdp.evaluate(&FnAggregatePolicy(|_: &AggregateState| 1));
        assert!(matches!(r, Err(Error::Infeasible { .. })));
    }
}
