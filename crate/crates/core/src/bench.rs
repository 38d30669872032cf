//! Mean-field threshold policy against the finite-N optimum over a sweep of
//! arrival rates.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::finite::FiniteMdp;
use crate::fluid::format_sig12;
use crate::model::ModelParams;
use crate::threshold::{make_policy, Pairing};

pub const CSV_HEADER: &str = "rho,g_mf,g_vi,rel_err_pct,abs_err_pct";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub rho: f64,
    /// Exact average cost of the threshold policy.
    pub g_mf: f64,
    /// Optimal average cost.
    pub g_vi: f64,
    /// `|g_mf - g_vi| * 100 / g_mf`.
    pub rel_err_pct: f64,
    /// `|g_mf - g_vi| * 100`.
    pub abs_err_pct: f64,
}

impl BenchRow {
    pub fn new(rho: f64, g_mf: f64, g_vi: f64) -> Self {
        let gap = (g_mf - g_vi).abs();
        Self {
            rho,
            g_mf,
            g_vi,
            rel_err_pct: gap * 100.0 / g_mf,
            abs_err_pct: gap * 100.0,
        }
    }
}

/// One row: exact evaluation of the threshold policy and relative value
/// iteration on the same `N`-user chain.
pub fn compare_point(
    params: &ModelParams,
    n_users: usize,
    pairing: Pairing,
    vi_tol: f64,
) -> Result<BenchRow> {
    let mdp = FiniteMdp::new(params, n_users)?;
    let policy = make_policy(params, pairing)?;
    let g_mf = mdp.evaluate(&policy)?.g;
    let g_vi = mdp.relative_value_iteration(vi_tol)?.g;
    Ok(BenchRow::new(params.rho, g_mf, g_vi))
}

/// Rows in the order of `rhos`; points run in parallel.
pub fn compare_sweep(
    base: &ModelParams,
    rhos: &[f64],
    n_users: usize,
    pairing: Pairing,
    vi_tol: f64,
) -> Result<Vec<BenchRow>> {
    rhos.par_iter()
        .map(|&rho| {
            let params = ModelParams { rho, ..base.clone() }.validate()?;
            compare_point(&params, n_users, pairing, vi_tol)
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[BenchRow], mut w: W) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        let fields = [r.rho, r.g_mf, r.g_vi, r.rel_err_pct, r.abs_err_pct];
        let row: Vec<String> = fields.iter().map(|&x| format_sig12(x)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite::DEFAULT_VI_TOL;

    #[test]
    fn row_arithmetic() {
        let r = BenchRow::new(0.1, 2.0, 1.5);
        assert_eq!(r.rel_err_pct, 25.0);
        assert_eq!(r.abs_err_pct, 50.0);
    }

    #[test]
    fn sweep_keeps_order_and_dominance() {
        let base = ModelParams::mtc_example(0.1);
        let rows = compare_sweep(&base, &[0.3, 0.05, 0.1], 10, Pairing::Prop3Consistent, DEFAULT_VI_TOL)
            .unwrap();
        assert_eq!(rows.iter().map(|r| r.rho).collect::<Vec<_>>(), vec![0.3, 0.05, 0.1]);
        for r in &rows {
            assert!(r.g_vi <= r.g_mf + 1e-9);
            assert!(r.rel_err_pct >= 0.0);
        }
        assert!((rows[1].g_mf - 1.838010198888446).abs() < 1e-8);
        assert!((rows[1].g_vi - 1.838010199263211).abs() < 1e-8);
        assert!((rows[2].g_mf - 3.437601062732674).abs() < 1e-8);
        assert!((rows[0].g_mf - 9.491404193461447).abs() < 1e-8);
        assert!((rows[0].g_vi - 8.188697915322479).abs() < 1e-8);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&[BenchRow::new(0.1, 2.0, 1.5)], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "rho,g_mf,g_vi,rel_err_pct,abs_err_pct\n0.100000000000,2.00000000000,1.50000000000,25.0000000000,50.0000000000\n"
        );
    }
}
