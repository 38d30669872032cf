//! Per-class transition tables and the controlled drift matrix of the
//! mean-field system.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{sigma, ChannelModel, Measure, ModelParams, TwoStateModel};

/// Next-queue distribution for one slot given the queue length `q_prev`
/// and whether the transmission succeeded. Arrivals that find a full buffer
/// are dropped, so overflow mass stays at `q_max`.
pub fn queue_kernel(q_prev: usize, success: bool, rho: f64, q_max: usize) -> Vec<f64> {
    let mut dist = vec![0.0; q_max + 1];
    let base = if success { q_prev.saturating_sub(1) } else { q_prev };
    dist[base.min(q_max)] += 1.0 - rho;
    dist[(base + 1).min(q_max)] += rho;
    dist
}

/// Transition probabilities `gamma^a[i][j]` of a single user from state `i`
/// to state `j` after a failed (`a = 0`) or successful (`a = 1`) slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelTables {
    pub gamma0: DMatrix<f64>,
    pub gamma1: DMatrix<f64>,
    pub channel_model: ChannelModel,
}

pub fn build_tables(params: &ModelParams) -> KernelTables {
    let s = params.num_states();
    let width = params.q_max + 1;
    let mut gamma0 = DMatrix::zeros(s, s);
    let mut gamma1 = DMatrix::zeros(s, s);
    for i in 0..s {
        let level = i / width;
        let q = sigma(i, params);
        let fail = queue_kernel(q, false, params.rho, params.q_max);
        let ok = queue_kernel(q, true, params.rho, params.q_max);
        for next_level in 0..params.num_levels() {
            let pc = params.channel.transition(level, next_level);
            for r in 0..width {
                let j = next_level * width + r;
                gamma0[(i, j)] = pc * fail[r];
                gamma1[(i, j)] = pc * ok[r];
            }
        }
    }
    KernelTables {
        gamma0,
        gamma1,
        channel_model: params.channel.model(),
    }
}

/// Generator `U` of the fluid dynamics `dm/dt = U m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftMatrix(pub DMatrix<f64>);

impl DriftMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn apply(&self, m: &[f64]) -> Vec<f64> {
        (&self.0 * DVector::from_column_slice(m)).as_slice().to_vec()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.0.column_iter().map(|c| c.sum()).collect()
    }

    /// `(I + U) m`, the one-slot expected map.
    pub fn step(&self, m: &Measure) -> Measure {
        let drift = self.apply(m.as_slice());
        Measure::from_vec_unchecked(m.as_slice().iter().zip(drift).map(|(a, b)| a + b).collect())
    }
}

impl KernelTables {
    /// `U_ij = nu_ji` for `i != j` and `U_ii = -sum_{r != i} nu_ir`, with
    /// `nu_ij = g_i gamma1_ij + (1 - g_i) gamma0_ij`.
    pub fn drift_matrix(&self, g: &[f64]) -> Result<DriftMatrix> {
        let s = self.gamma0.nrows();
        if g.len() != s {
            return Err(Error::WrongDimensions(format!(
                "{} success fractions for {s} states",
                g.len()
            )));
        }
        if let Some(x) = g.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::InvalidParameter {
                name: "g",
                detail: format!("success fraction {x} outside [0, 1]"),
            });
        }
        let mut u = DMatrix::zeros(s, s);
        for i in 0..s {
            let mut out = 0.0;
            for j in 0..s {
                if i == j {
                    continue;
                }
                let nu = g[i] * self.gamma1[(i, j)] + (1.0 - g[i]) * self.gamma0[(i, j)];
                u[(j, i)] = nu;
                out += nu;
            }
            u[(i, i)] = -out;
        }
        Ok(DriftMatrix(u))
    }
}

pub fn drift_matrix(g: &[f64], params: &ModelParams) -> Result<DriftMatrix> {
    build_tables(params).drift_matrix(g)
}

/// The explicit 4x4 generator of the GOOD/BAD single-buffer model when the
/// loaded GOOD-channel class is activated with fraction `s4`.
pub fn drift_matrix_4state(s4: f64, params: &ModelParams) -> Result<DriftMatrix> {
    let tw = params.two_state_view()?;
    Ok(DriftMatrix(drift_matrix_two_state(s4, &tw)))
}

pub(crate) fn drift_matrix_two_state(s4: f64, tw: &TwoStateModel) -> DMatrix<f64> {
    let (b0, b1, rho) = (tw.beta0(), tw.beta1, tw.rho);
    #[rustfmt::skip]
    let u = DMatrix::from_row_slice(4, 4, &[
        -b1 - b0 * rho,      0.0, b0 * (1.0 - rho),     s4 * b0 * (1.0 - rho),
        b0 * rho,            -b1, b0 * rho,             s4 * b0 * rho + (1.0 - s4) * b0,
        b1 * (1.0 - rho),    0.0, -b1 * rho - b0,       s4 * b1 * (1.0 - rho),
        b1 * rho,            b1,  b1 * rho,             -s4 * b1 * (1.0 - rho) - b0,
    ]);
    u
}

/// Rates of change of the four class fractions under control `s`
/// (0 = passive, 1 = active, fractional values mix the two linearly).
pub(crate) fn phi(m: &[f64; 4], s: f64, tw: &TwoStateModel) -> [f64; 4] {
    let (b0, b1, rho) = (tw.beta0(), tw.beta1, tw.rho);
    [
        -(b1 + b0 * rho) * m[0] + b0 * (1.0 - rho) * m[2] + s * b0 * (1.0 - rho) * m[3],
        b0 * rho * m[0] - b1 * m[1] + b0 * rho * m[2] + (rho * s + (1.0 - s)) * b0 * m[3],
        b1 * (1.0 - rho) * m[0] - (b1 * rho + b0) * m[2] + s * b1 * (1.0 - rho) * m[3],
        b1 * rho * m[0] + b1 * m[1] + b1 * rho * m[2] - (b1 * s * (1.0 - rho) + b0) * m[3],
    ]
}

/// Drift `phi^a(m)` of the GOOD/BAD single-buffer model.
pub fn drift_vector(m: &Measure, active: bool, params: &ModelParams) -> Result<[f64; 4]> {
    let tw = params.two_state_view()?;
    if m.len() != 4 {
        return Err(Error::WrongDimensions(format!("measure of length {}", m.len())));
    }
    let mm = [m[0], m[1], m[2], m[3]];
    Ok(phi(&mm, if active { 1.0 } else { 0.0 }, &tw))
}
