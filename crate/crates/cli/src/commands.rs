//! Subcommand bodies. Each writes one output file into the output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use powerctl::bench::{compare_sweep, write_csv, BenchRow};
use powerctl::equilibrium::optimal_equilibrium;
use powerctl::finite::FiniteMdp;
use powerctl::fluid::{integrate, ConstantControl, FluidPolicy};
use powerctl::threshold::{bias_optimality_check, make_policy, BiasCheckOptions};
use powerctl::{Measure, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Config, FluidPolicyKind};

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let path: PathBuf = out.join(name);
    let file = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(out, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

pub fn equilibrium(cfg: &Config, out: &Path) -> Result<()> {
    let report = optimal_equilibrium(&cfg.params()?)?;
    write_json(out, "equilibrium.json", &report)?;
    println!(
        "regime {:?}, s4* = {:.9}, E* = {:.9}",
        report.regime, report.s4_star, report.e_star
    );
    Ok(())
}

/// Random starts on the simplex, uniform in the Dirichlet(1,1,1,1) sense.
fn random_starts(count: usize, seed: u64) -> Result<Vec<Measure>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..4).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
            let s: f64 = v.iter().sum();
            Ok(Measure::new(v.into_iter().map(|x| x / s).collect())?)
        })
        .collect()
}

pub fn threshold(cfg: &Config, out: &Path, seed: u64) -> Result<()> {
    let params = cfg.params()?;
    let policy = make_policy(&params, cfg.pairing)?;
    let mut starts = random_starts(cfg.starts, seed)?;
    if let Some(m0) = cfg.initial_measure()? {
        starts.insert(0, m0);
    }
    let opts = BiasCheckOptions {
        grid_step: cfg.grid_step,
        horizon: cfg.check_horizon,
        dt: cfg.dt,
        ..BiasCheckOptions::default()
    };
    let check = bias_optimality_check(&params, &starts, &opts)?;
    #[derive(Serialize)]
    struct Output<'a> {
        policy: &'a powerctl::ThresholdPolicy,
        check: &'a powerctl::threshold::BiasCheckReport,
    }
    write_json(out, "threshold.json", &Output { policy: &policy, check: &check })?;
    println!(
        "pi = {:.9} ({:?}), grid check {}, pairing verdict {:?}",
        policy.pi,
        policy.regime,
        if check.pass { "PASS" } else { "FAIL" },
        check.pairing_verdict
    );
    Ok(())
}

pub fn fluid(cfg: &Config, out: &Path) -> Result<()> {
    let params = cfg.params()?;
    let m0 = match cfg.initial_measure()? {
        Some(m) => m,
        None => Measure::new(vec![0.25; 4])?,
    };
    let threshold;
    let policy: &dyn FluidPolicy = match cfg.fluid_policy {
        FluidPolicyKind::Passive => &ConstantControl(0.0),
        FluidPolicyKind::Active => &ConstantControl(1.0),
        FluidPolicyKind::Threshold => {
            threshold = make_policy(&params, cfg.pairing)?;
            &threshold
        }
    };
    let traj = integrate(&m0, policy, cfg.horizon, cfg.dt, &params)?;
    traj.write_csv(create(out, "fluid.csv")?)?;
    if let Some(last) = traj.last() {
        println!("t = {}: m = {:?}, cost = {:.9}", last.t, last.m, last.inst_cost);
    }
    Ok(())
}

pub fn vi(cfg: &Config, out: &Path) -> Result<()> {
    let params = cfg.params()?;
    let mdp = FiniteMdp::new(&params, cfg.n_users)?;
    let result = mdp.relative_value_iteration(cfg.vi_tol)?;
    let policy = make_policy(&params, cfg.pairing)?;
    let g_threshold = mdp.evaluate(&policy)?.g;
    #[derive(Serialize)]
    struct Output<'a> {
        n_users: usize,
        g_threshold_policy: f64,
        vi: &'a powerctl::finite::VIResult,
    }
    write_json(
        out,
        "vi.json",
        &Output {
            n_users: cfg.n_users,
            g_threshold_policy: g_threshold,
            vi: &result,
        },
    )?;
    println!(
        "g_vi = {:.9} after {} iterations (span {:e}); threshold policy g = {:.9}",
        result.g, result.iterations, result.span_residual, g_threshold
    );
    Ok(())
}

pub fn compare(cfg: &Config, out: &Path) -> Result<()> {
    // validates the base point too, so a bad config fails before the sweep
    let base: ModelParams = cfg.params()?;
    let rows: Vec<BenchRow> =
        compare_sweep(&base, &cfg.rho_sweep, cfg.n_users, cfg.pairing, cfg.vi_tol)?;
    write_csv(&rows, create(out, "compare.csv")?)?;
    for r in &rows {
        println!(
            "rho = {}: g_mf = {:.9}, g_vi = {:.9}, rel err = {:.4}%",
            r.rho, r.g_mf, r.g_vi, r.rel_err_pct
        );
    }
    Ok(())
}
