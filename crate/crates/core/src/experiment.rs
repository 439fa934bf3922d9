//! Configuration, command drivers and CSV output for the `fieldkalman` binary.
//!
//! Every command reads an [`ExperimentConfig`] (JSON, unknown keys rejected),
//! writes its CSV files into an output directory together with a
//! `manifest.json`, and returns a typed report. CSV numbers carry ten
//! significant digits, so re-running a command with the same configuration
//! reproduces the files byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{covariance_trajectory, posterior_via_gain, predict_covariance, update_covariance, SystemModel};
use crate::gain::{probe_lattice, verify_optimality, GainPrecomputation};
use crate::linalg::relative_frobenius;
use crate::oracle::{convergence_study, ConvergenceStudy, DEFAULT_DENSE_CAP};
use crate::pinhole::{MseTable, PinholeScenario, PinholeSimulation, TrialRun, STEADY_STATE_FROM};
use crate::riccati::{riccati_step, solve_dare, DareProblem, SteadyState};

/// Trial count above which a run is reported as slow.
pub const LARGE_TRIAL_COUNT: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadyStateOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self { tol: crate::riccati::DEFAULT_TOLERANCE, max_iter: crate::riccati::DEFAULT_MAX_ITER }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateOptions {
    pub probes_per_axis: usize,
    /// Check the optimality condition at every grid point instead of the probe lattice.
    pub full_grid: bool,
    pub optimality_tol: f64,
    pub s_route_tol: f64,
    pub riccati_route_tol: f64,
    pub riccati_route_samples: usize,
    pub posterior_tol: f64,
    /// Scales the gain by `1 + gain_perturbation` before the optimality check.
    pub gain_perturbation: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            probes_per_axis: 5,
            full_grid: false,
            optimality_tol: 1e-3,
            s_route_tol: 1e-4,
            riccati_route_tol: 1e-10,
            riccati_route_samples: 100,
            posterior_tol: 1e-6,
            gain_perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleOptions {
    pub strides: Vec<usize>,
    pub cap: usize,
    pub max_gap: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { strides: vec![10, 5, 4], cap: DEFAULT_DENSE_CAP, max_gap: 0.05 }
    }
}

/// Everything a run depends on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: PinholeScenario,
    pub steady_state: SteadyStateOptions,
    pub validate: ValidateOptions,
    pub oracle: OracleOptions,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.scenario.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Written next to every command's output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub band_retained_fraction: f64,
    /// `S[0][0]`.
    pub g1: f64,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Ten significant digits, locale-free.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.is_finite() {
        format!("{v:.9e}")
    } else {
        format!("{v}")
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Model and gain shared by all commands.
pub struct Prepared {
    pub model: SystemModel,
    pub precomp: GainPrecomputation,
}

pub fn prepare(scenario: &PinholeScenario) -> Result<Prepared> {
    let model = scenario.model()?;
    let precomp = GainPrecomputation::new(&model, scenario.policy())?;
    Ok(Prepared { model, precomp })
}

struct Run<'a> {
    command: &'static str,
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    started: f64,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    fn start(command: &'static str, cfg: &'a ExperimentConfig, out: &'a Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        Ok(Self { command, cfg, out, started: now(), outputs: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn finish(self, precomp: Option<&GainPrecomputation>) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.cfg.scenario.seed,
            config: self.cfg.clone(),
            band_retained_fraction: precomp.map_or(f64::NAN, |p| p.retained_fraction()),
            g1: precomp.map_or(f64::NAN, |p| p.s()[(0, 0)]),
            started_unix: self.started,
            finished_unix: now(),
            outputs: self.outputs,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(self.out.join("manifest.json"), text)?;
        Ok(())
    }
}

fn matrix_rows(name: &str, m: &DMatrix<f64>) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            rows.push(vec![name.to_string(), r.to_string(), c.to_string(), fmt_num(m[(r, c)])]);
        }
    }
    rows
}

fn scalar_row(name: &str, v: f64) -> Vec<String> {
    vec![name.to_string(), String::new(), String::new(), fmt_num(v)]
}

/// Result of `steady-state`.
#[derive(Debug, Clone)]
pub struct SteadyStateReport {
    pub steady: SteadyState,
    pub s: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub retained_fraction: f64,
}

impl SteadyStateReport {
    /// Leading entry of `S`; the reference scenario has `S = diag(G1, 0)`.
    pub fn g1(&self) -> f64 {
        self.s[(0, 0)]
    }
}

pub fn steady_state(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<SteadyStateReport> {
    let problem = DareProblem::new(
        prepared.model.a().clone(),
        prepared.precomp.g().clone(),
        prepared.model.q().clone(),
    )?;
    let steady = solve_dare(&problem, cfg.steady_state.tol, cfg.steady_state.max_iter)?;
    Ok(SteadyStateReport {
        steady,
        s: prepared.precomp.s().clone(),
        g: prepared.precomp.g().clone(),
        retained_fraction: prepared.precomp.retained_fraction(),
    })
}

/// Writes `steadystate.csv` (`quantity,row,col,value`).
pub fn cmd_steady_state(cfg: &ExperimentConfig, out: &Path) -> Result<SteadyStateReport> {
    let mut run = Run::start("steady-state", cfg, out)?;
    let prepared = prepare(&cfg.scenario)?;
    let report = steady_state(cfg, &prepared)?;
    let mut rows = matrix_rows("p_prior_inf", &report.steady.p_prior_inf);
    rows.extend(matrix_rows("p_post_inf", &report.steady.p_post_inf));
    rows.extend(matrix_rows("s", &report.s));
    rows.extend(matrix_rows("g", &report.g));
    rows.push(scalar_row("g1", report.g1()));
    rows.push(scalar_row("closed_loop_radius", report.steady.closed_loop_radius));
    rows.push(scalar_row("residual", report.steady.residual));
    rows.push(scalar_row("iterations", report.steady.iterations as f64));
    rows.push(scalar_row("band_retained_fraction", report.retained_fraction));
    write_csv(&run.path("steadystate.csv"), &["quantity", "row", "col", "value"], rows)?;
    run.finish(Some(&prepared.precomp))?;
    Ok(report)
}

/// Result of `simulate`.
#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub mse: MseTable,
    pub example: TrialRun,
    pub steady_emp: [f64; 2],
    pub steady_theo: [f64; 2],
}

/// Writes `trajectory.csv` (first trial) and `mse.csv`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<SimulationReport> {
    let mut run = Run::start("simulate", cfg, out)?;
    if cfg.scenario.trials >= LARGE_TRIAL_COUNT {
        eprintln!("warning: {} trials will take a long time", cfg.scenario.trials);
    }
    let sim = PinholeSimulation::new(cfg.scenario.clone())?;
    let example = sim.run_trial(sim.trial_seed(0))?;
    let mse = sim.monte_carlo_mse()?;
    let (steady_emp, steady_theo) = mse.steady_state(STEADY_STATE_FROM);

    let trajectory = example.truth.iter().zip(&example.estimates).enumerate().map(|(k, (x, e))| {
        vec![
            k.to_string(),
            fmt_num(x[0]),
            fmt_num(x[1]),
            fmt_num(e.x_hat[0]),
            fmt_num(e.x_hat[1]),
            fmt_num(e.p[(0, 0)].sqrt()),
            fmt_num(e.p[(1, 1)].sqrt()),
        ]
    });
    write_csv(
        &run.path("trajectory.csv"),
        &["step", "true_q", "true_qd", "est_q", "est_qd", "sd_q", "sd_qd"],
        trajectory,
    )?;
    let rows = mse.rows.iter().map(|r| {
        vec![
            r.step.to_string(),
            fmt_num(r.emp_mse[0]),
            fmt_num(r.emp_mse[1]),
            fmt_num(r.theo_mse[0]),
            fmt_num(r.theo_mse[1]),
            fmt_num(r.stderr[0]),
            fmt_num(r.stderr[1]),
        ]
    });
    write_csv(
        &run.path("mse.csv"),
        &["step", "emp_mse_q", "emp_mse_qd", "theo_mse_q", "theo_mse_qd", "stderr_q", "stderr_qd"],
        rows,
    )?;
    run.finish(Some(sim.precomp()))?;
    Ok(SimulationReport { mse, example, steady_emp, steady_theo })
}

/// One consistency check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub residual: f64,
    pub threshold: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.residual <= self.threshold
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub rows: Vec<CheckRow>,
    /// The prior covariance the optimality check was evaluated at.
    pub p_prior: DMatrix<f64>,
    /// False when the Riccati preconditions failed and the last step of the
    /// finite-horizon trajectory stood in for the steady state.
    pub used_steady_state: bool,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(CheckRow::passed)
    }
}

/// Random symmetric PSD 2x2-or-larger matrices for the route comparison.
fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose()
}

pub fn validate(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<ValidationReport> {
    let opts = &cfg.validate;
    let (model, pre) = (&prepared.model, &prepared.precomp);
    let n = model.state_dim();
    let problem = DareProblem::new(model.a().clone(), pre.g().clone(), model.q().clone())?;

    let (p_prior, used_steady_state) = match solve_dare(&problem, cfg.steady_state.tol, cfg.steady_state.max_iter) {
        Ok(st) => (st.p_prior_inf, true),
        Err(Error::Precondition { .. }) | Err(Error::NoConvergence { .. }) => {
            let traj = covariance_trajectory(&cfg.scenario.p0(), model.a(), model.q(), pre.s(), cfg.scenario.horizon)?;
            (traj.last().unwrap().p_prior.clone(), false)
        }
        Err(e) => return Err(e),
    };
    let p_post = update_covariance(&p_prior, pre.s())?;
    let kappa = pre.f().left_mul(&p_post)?;

    let mut rows = Vec::new();
    let probes: Vec<usize> = if opts.full_grid {
        (0..model.grid().len()).collect()
    } else {
        probe_lattice(model.grid(), opts.probes_per_axis)
    };
    let tested = kappa.scale(1.0 + opts.gain_perturbation);
    let optimality = verify_optimality(&tested, &p_prior, model.gamma(), model.kernel(), &probes)?;
    rows.push(CheckRow {
        check: "optimality_condition".into(),
        residual: optimality.relative(),
        threshold: opts.optimality_tol,
    });

    rows.push(CheckRow {
        check: "s_spatial_vs_spectral".into(),
        residual: relative_frobenius(pre.s_spectral(), pre.s()),
        threshold: opts.s_route_tol,
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.scenario.seed);
    let mut worst = 0.0f64;
    for _ in 0..opts.riccati_route_samples {
        let p = random_psd(&mut rng, n);
        let direct = riccati_step(&p, &problem);
        let composed = predict_covariance(&update_covariance(&p, problem.information())?, model.a(), model.q());
        worst = worst.max(relative_frobenius(&composed, &direct));
    }
    rows.push(CheckRow {
        check: "riccati_vs_predict_update".into(),
        residual: worst,
        threshold: opts.riccati_route_tol,
    });

    let via_gain = posterior_via_gain(&kappa, model.gamma(), &p_prior)?;
    rows.push(CheckRow {
        check: "posterior_via_gain".into(),
        residual: relative_frobenius(&via_gain, &p_post),
        threshold: opts.posterior_tol,
    });
    Ok(ValidationReport { rows, p_prior, used_steady_state })
}

/// Writes `validation.csv` (`check,residual,threshold,pass`).
pub fn cmd_validate(cfg: &ExperimentConfig, out: &Path) -> Result<ValidationReport> {
    let mut run = Run::start("validate", cfg, out)?;
    let prepared = prepare(&cfg.scenario)?;
    let report = validate(cfg, &prepared)?;
    let rows = report.rows.iter().map(|r| {
        vec![r.check.clone(), fmt_num(r.residual), fmt_num(r.threshold), r.passed().to_string()]
    });
    write_csv(&run.path("validation.csv"), &["check", "residual", "threshold", "pass"], rows)?;
    run.finish(Some(&prepared.precomp))?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub study: ConvergenceStudy,
    pub max_gap: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.study.nonincreasing() && self.study.finest().is_some_and(|l| l.covariance_gap <= self.max_gap)
    }
}

/// Compares the first update from `P0` against the discrete filter at each stride.
pub fn oracle(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<OracleReport> {
    let p_prior = predict_covariance(&cfg.scenario.p0(), prepared.model.a(), prepared.model.q());
    let study =
        convergence_study(&prepared.model, &prepared.precomp, &p_prior, &cfg.oracle.strides, cfg.oracle.cap)?;
    Ok(OracleReport { study, max_gap: cfg.oracle.max_gap })
}

/// Writes `oracle.csv`, one row per stride.
pub fn cmd_oracle(cfg: &ExperimentConfig, out: &Path) -> Result<OracleReport> {
    let mut run = Run::start("oracle", cfg, out)?;
    let prepared = prepare(&cfg.scenario)?;
    let report = oracle(cfg, &prepared)?;
    let rows = report.study.levels.iter().map(|l| {
        let mut row = vec![
            l.stride.to_string(),
            l.points.to_string(),
            fmt_num(l.spacing),
            fmt_num(l.covariance_gap),
            fmt_num(l.gain_gap_max),
            fmt_num(l.gain_gap_rel),
            l.non_comparable.to_string(),
        ];
        row.extend(l.p_discrete.transpose().iter().map(|&v| fmt_num(v)));
        row.extend(l.p_continuum.transpose().iter().map(|&v| fmt_num(v)));
        row
    });
    let mut header = vec![
        "stride",
        "points",
        "spacing",
        "covariance_gap",
        "gain_gap_max",
        "gain_gap_rel",
        "non_comparable",
    ];
    let n = prepared.model.state_dim();
    let names: Vec<String> = ["p_discrete", "p_continuum"]
        .iter()
        .flat_map(|p| (0..n * n).map(move |k| format!("{p}_{}{}", k / n, k % n)))
        .collect();
    header.extend(names.iter().map(String::as_str));
    write_csv(&run.path("oracle.csv"), &header, rows)?;
    run.finish(Some(&prepared.precomp))?;
    Ok(report)
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plots the CSV output of `fieldkalman simulate` (needs pandas and matplotlib)."""
import sys
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
traj = pd.read_csv(out / "trajectory.csv")
mse = pd.read_csv(out / "mse.csv")

fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(11, 4))
ax0.plot(traj.step, traj.true_q, label="true position")
ax0.plot(traj.step, traj.est_q, label="estimate")
ax0.fill_between(traj.step, traj.est_q - 3 * traj.sd_q, traj.est_q + 3 * traj.sd_q, alpha=0.2, label="3 sd")
ax0.set_xlabel("step")
ax0.legend()

for col, name in (("q", "position"), ("qd", "velocity")):
    ax1.plot(mse.step, mse[f"emp_mse_{col}"], label=f"empirical {name}")
    ax1.plot(mse.step, mse[f"theo_mse_{col}"], "--", label=f"theoretical {name}")
ax1.set_xlabel("step")
ax1.set_ylabel("MSE")
ax1.legend()
fig.tight_layout()
fig.savefig(out / "simulation.png", dpi=150)
"#;

/// Writes `plot_simulation.py` next to the CSVs it reads.
pub fn cmd_plot_script(out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let path = out.join("plot_simulation.py");
    fs::write(&path, PLOT_SCRIPT)?;
    Ok(path)
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Json(_) => 2,
        Error::Precondition { .. } => 3,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), text);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(ExperimentConfig::from_json(r#"{"scenario": {"etta": 1}}"#), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_json(r#"{"plot": true}"#), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_json(r#"{"scenario": {"focal": -1}}"#), Err(Error::Config(_))));
    }

    #[test]
    fn partial_override() {
        let cfg = ExperimentConfig::from_json(r#"{"scenario": {"trials": 7, "truth": "pinhole"}}"#).unwrap();
        assert_eq!(cfg.scenario.trials, 7);
        assert_eq!(cfg.scenario.eta, 0.1);
    }

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.0), "1.000000000e0");
        assert_eq!(fmt_num(-0.0123456789012), "-1.234567890e-2");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::precondition(crate::Assumption::Detectable, "x")), 3);
        assert_eq!(exit_code(&Error::Singular("x")), 1);
    }
}
