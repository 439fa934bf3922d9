//! A camera moving along its optical axis in front of a patterned wall.
//!
//! The wall carries the gray-scale pattern `C(p) = exp(-(eta |p|)^2) cos(xi |p|) + 1`.
//! A pinhole at distance `q` with focal length `L_f` sees `C(i q / L_f)` at image
//! point `i`. Linearizing around the nominal state `xbar = [qbar, 0]` gives the
//! measurement kernel `gamma(i) = [dC(i q / L_f)/dq at qbar, 0]`. The state is
//! `[q, qdot]` with constant-velocity dynamics.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{covariance_trajectory, predict, update_state, CovarianceStep, FilterState, SystemModel};
use crate::gain::{GainPrecomputation, RegularizationPolicy};
use crate::grid::{GridSpec, RealField};
use crate::linalg::psd_sqrt;
use crate::random_field::{FieldSample, FieldSampler, SamplingMethod, SquaredExponentialKernel};

/// First step included in the steady-state averages.
pub const STEADY_STATE_FROM: usize = 20;

/// How the truth measurements are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthModel {
    /// `z = gamma x + v`, the model the filter assumes.
    #[default]
    Linear,
    /// `z = C(i q / L_f) - C(i qbar / L_f) + gamma xbar + v`.
    Pinhole,
}

/// Choice of `P0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCovariance {
    /// `P0 = Q`.
    #[default]
    ProcessNoise,
    Diagonal([f64; 2]),
}

/// Scenario parameters; [`Default`] gives the reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PinholeScenario {
    pub eta: f64,
    pub xi: f64,
    pub focal: f64,
    pub lin_point: [f64; 2],
    pub delta_t: f64,
    pub sigma_q2: f64,
    pub sigma_qd2: f64,
    pub nu: f64,
    pub ell: f64,
    /// The image domain is `[-half_width, half_width]^2`.
    pub half_width: f64,
    pub spacing: f64,
    pub x0: [f64; 2],
    pub x_hat0: [f64; 2],
    pub p0: InitialCovariance,
    pub trials: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Multiplies `gamma`; zero removes all measurement information.
    pub gamma_scale: f64,
    pub truth: TruthModel,
    pub regularization_eps: f64,
}

impl Default for PinholeScenario {
    fn default() -> Self {
        Self {
            eta: 0.1,
            xi: 0.8,
            focal: 0.01,
            lin_point: [1.0, 0.0],
            delta_t: 1.0,
            sigma_q2: 0.01,
            sigma_qd2: 0.01,
            nu: 10.0,
            ell: 0.025,
            half_width: 0.5,
            spacing: 0.005,
            x0: [1.0, 0.0],
            x_hat0: [1.0, 0.0],
            p0: InitialCovariance::ProcessNoise,
            trials: 2000,
            horizon: 50,
            seed: 0,
            gamma_scale: 1.0,
            truth: TruthModel::Linear,
            regularization_eps: 1e-12,
        }
    }
}

impl PinholeScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.focal > 0.0) {
            return bad("focal must be positive");
        }
        if !(self.eta >= 0.0) || !(self.xi >= 0.0) {
            return bad("eta and xi must be non-negative");
        }
        if !(self.sigma_q2 >= 0.0) || !(self.sigma_qd2 >= 0.0) {
            return bad("process noise variances must be non-negative");
        }
        if !(self.nu > 0.0) || !(self.ell > 0.0) {
            return bad("nu and ell must be positive");
        }
        if !(self.half_width > 0.0) || !(self.spacing > 0.0) || self.spacing > 2.0 * self.half_width {
            return bad("half_width and spacing must be positive with spacing <= 2 half_width");
        }
        if !self.gamma_scale.is_finite() || !self.delta_t.is_finite() {
            return bad("gamma_scale and delta_t must be finite");
        }
        if let InitialCovariance::Diagonal(d) = self.p0 {
            if d.iter().any(|v| !(*v >= 0.0)) {
                return bad("p0 diagonal must be non-negative");
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::centered_cube(2, self.half_width, self.spacing)
    }

    pub fn a(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, self.delta_t, 0.0, 1.0])
    }

    pub fn q(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![self.sigma_q2, self.sigma_qd2]))
    }

    pub fn p0(&self) -> DMatrix<f64> {
        match self.p0 {
            InitialCovariance::ProcessNoise => self.q(),
            InitialCovariance::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_row_slice(&d)),
        }
    }

    pub fn kernel(&self) -> Result<SquaredExponentialKernel> {
        SquaredExponentialKernel::new(self.nu, self.ell, 2, 1)
    }

    pub fn policy(&self) -> RegularizationPolicy {
        RegularizationPolicy::BandMask { eps_rel: self.regularization_eps }
    }

    pub fn model(&self) -> Result<SystemModel> {
        self.validate()?;
        let gamma = measurement_gamma(self)?;
        SystemModel::new(self.a(), self.q(), gamma, Arc::new(self.kernel()?))
    }
}

/// `C(p) = exp(-(eta |p|)^2) cos(xi |p|) + 1`.
pub fn wall_intensity(p: &[f64], scenario: &PinholeScenario) -> f64 {
    let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    (-(scenario.eta * r).powi(2)).exp() * (scenario.xi * r).cos() + 1.0
}

/// Pixel intensity `C(i q / L_f)` for a camera at distance `q`.
pub fn image_intensity(i: &[f64], q: f64, scenario: &PinholeScenario) -> f64 {
    let scaled: Vec<f64> = i.iter().map(|v| v * q / scenario.focal).collect();
    wall_intensity(&scaled, scenario)
}

/// First entry of `gamma` at image radius `r`.
fn gamma_entry(r: f64, scenario: &PinholeScenario) -> f64 {
    let q = scenario.lin_point[0];
    let a = scenario.eta * r / scenario.focal;
    let b = scenario.xi * r / scenario.focal;
    -(-(a * q).powi(2)).exp() * (2.0 * a * a * q * (b * q).cos() + b * (b * q).sin())
}

/// `gamma(i)` as a 1x2 field on the scenario grid, times `gamma_scale`.
pub fn measurement_gamma(scenario: &PinholeScenario) -> Result<RealField> {
    let grid = scenario.grid()?;
    Ok(RealField::from_fn(grid, 1, 2, |p, out| {
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        out[0] = scenario.gamma_scale * gamma_entry(r, scenario);
        out[1] = 0.0;
    }))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for `(seed, index)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix(splitmix(seed) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

const TRUTH_STREAM: u64 = 0x0074_7275_7468;
const FIELD_STREAM: u64 = 0x0066_6965_6c64;

/// `x_0, ..., x_horizon` with `x_{k+1} = A x_k + w_k`, `w_k ~ N(0, Q)`.
pub fn simulate_truth(scenario: &PinholeScenario, seed: u64) -> Vec<DVector<f64>> {
    let a = scenario.a();
    let root = psd_sqrt(&scenario.q(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TRUTH_STREAM));
    let mut x = DVector::from_row_slice(&scenario.x0);
    let mut out = Vec::with_capacity(scenario.horizon + 1);
    out.push(x.clone());
    for _ in 0..scenario.horizon {
        let xi = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
        x = &a * &x + &root * xi;
        out.push(x.clone());
    }
    out
}

/// Per-step Monte-Carlo statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MseRow {
    pub step: usize,
    pub emp_mse: [f64; 2],
    pub theo_mse: [f64; 2],
    pub stderr: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct MseTable {
    pub rows: Vec<MseRow>,
    pub trials: usize,
}

impl MseTable {
    /// Mean empirical and theoretical MSE over steps `from..=horizon`.
    pub fn steady_state(&self, from: usize) -> ([f64; 2], [f64; 2]) {
        let window: Vec<&MseRow> = self.rows.iter().filter(|r| r.step >= from).collect();
        let n = window.len().max(1) as f64;
        let mut emp = [0.0; 2];
        let mut theo = [0.0; 2];
        for row in &window {
            for c in 0..2 {
                emp[c] += row.emp_mse[c] / n;
                theo[c] += row.theo_mse[c] / n;
            }
        }
        (emp, theo)
    }
}

/// One truth/filter run.
#[derive(Debug, Clone)]
pub struct TrialRun {
    pub truth: Vec<DVector<f64>>,
    pub estimates: Vec<FilterState>,
}

/// Sums of `e^2` and `e^4` per step and component.
#[derive(Debug, Clone)]
struct Moments {
    sum2: Vec<[f64; 2]>,
    sum4: Vec<[f64; 2]>,
}

impl Moments {
    fn merge(mut self, other: &Moments) -> Moments {
        for (k, (s2, s4)) in other.sum2.iter().zip(&other.sum4).enumerate() {
            for c in 0..2 {
                self.sum2[k][c] += s2[c];
                self.sum4[k][c] += s4[c];
            }
        }
        self
    }
}

/// Pairwise sum in index order, independent of how the items were produced.
fn tree_reduce(mut items: Vec<Moments>) -> Option<Moments> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => a.merge(&b),
                None => a,
            });
        }
        items = next;
    }
    items.pop()
}

/// Scenario with everything needed to simulate: model, gain and noise sampler.
#[derive(Debug)]
pub struct PinholeSimulation {
    scenario: PinholeScenario,
    model: SystemModel,
    precomp: GainPrecomputation,
    sampler: FieldSampler,
    covariances: Vec<CovarianceStep>,
}

impl PinholeSimulation {
    pub fn new(scenario: PinholeScenario) -> Result<Self> {
        let model = scenario.model()?;
        let precomp = GainPrecomputation::new(&model, scenario.policy())?;
        Self::with_parts(scenario, model, precomp)
    }

    /// Reuses an existing gain precomputation for `scenario`'s model.
    pub fn with_parts(scenario: PinholeScenario, model: SystemModel, precomp: GainPrecomputation) -> Result<Self> {
        let sampler = FieldSampler::new(model.kernel(), model.grid(), SamplingMethod::Auto)?;
        let covariances = covariance_trajectory(&scenario.p0(), model.a(), model.q(), precomp.s(), scenario.horizon)?;
        Ok(Self { scenario, model, precomp, sampler, covariances })
    }

    pub fn scenario(&self) -> &PinholeScenario {
        &self.scenario
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn precomp(&self) -> &GainPrecomputation {
        &self.precomp
    }

    /// Covariance pairs for steps `0..=horizon`.
    pub fn covariances(&self) -> &[CovarianceStep] {
        &self.covariances
    }

    /// Noise fields for steps `2j` and `2j + 1` come from the two halves of one
    /// complex draw; they are independent, so every step still gets its own field.
    fn noise_pair(&self, seed: u64, block: usize) -> (FieldSample, FieldSample) {
        self.sampler.sample_pair(derive_seed(derive_seed(seed, FIELD_STREAM), block as u64))
    }

    fn measurement_from_noise(&self, x: &DVector<f64>, mut v: FieldSample) -> FieldSample {
        let gamma = self.model.gamma();
        let grid = self.model.grid().clone();
        let mut point = vec![0.0; 2];
        let xbar = self.scenario.lin_point;
        for p in 0..grid.len() {
            let g = gamma.at(p);
            let signal = match self.scenario.truth {
                TruthModel::Linear => g[0] * x[0] + g[1] * x[1],
                TruthModel::Pinhole => {
                    grid.point_into(p, &mut point);
                    let s = self.scenario.gamma_scale;
                    s * (image_intensity(&point, x[0], &self.scenario) - image_intensity(&point, xbar[0], &self.scenario))
                        + g[0] * xbar[0]
                        + g[1] * xbar[1]
                }
            };
            v.at_mut(p)[0] += signal;
        }
        v
    }

    /// `z_k = gamma x_k + v_k` with `v_k` determined by `(seed, k)`.
    pub fn generate_measurement(&self, x: &DVector<f64>, seed: u64, k: usize) -> FieldSample {
        let (even, odd) = self.noise_pair(seed, k / 2);
        self.measurement_from_noise(x, if k.is_multiple_of(2) { even } else { odd })
    }

    /// Truth and filter estimates for one trial.
    pub fn run_trial(&self, seed: u64) -> Result<TrialRun> {
        let truth = simulate_truth(&self.scenario, seed);
        let init = FilterState::initial(DVector::from_row_slice(&self.scenario.x_hat0), self.scenario.p0())?;
        let mut estimates = Vec::with_capacity(truth.len());
        estimates.push(init);
        let mut pair: Option<(usize, FieldSample, FieldSample)> = None;
        for (k, x) in truth.iter().enumerate().skip(1) {
            let block = k / 2;
            if pair.as_ref().map(|(b, _, _)| *b) != Some(block) {
                let (e, o) = self.noise_pair(seed, block);
                pair = Some((block, e, o));
            }
            let (_, even, odd) = pair.as_ref().unwrap();
            let noise = if k % 2 == 0 { even.clone() } else { odd.clone() };
            let z = self.measurement_from_noise(x, noise);
            let prediction = predict(estimates.last().unwrap(), &self.model);
            let p_post = &self.covariances[k].p_post;
            estimates.push(update_state(&prediction, p_post, &z, &self.model, &self.precomp)?);
        }
        Ok(TrialRun { truth, estimates })
    }

    /// Seed of trial `t` under the scenario's base seed.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(self.scenario.seed, trial as u64)
    }

    fn trial_moments(&self, trial: usize) -> Result<Moments> {
        let run = self.run_trial(self.trial_seed(trial))?;
        let mut sum2 = Vec::with_capacity(run.truth.len());
        let mut sum4 = Vec::with_capacity(run.truth.len());
        for (x, est) in run.truth.iter().zip(&run.estimates) {
            let e = [x[0] - est.x_hat[0], x[1] - est.x_hat[1]];
            sum2.push([e[0] * e[0], e[1] * e[1]]);
            sum4.push([e[0].powi(4), e[1].powi(4)]);
        }
        Ok(Moments { sum2, sum4 })
    }

    /// Empirical per-step MSE over `trials` independent runs with standard errors,
    /// next to the theoretical `diag(P_k)`.
    pub fn monte_carlo_mse(&self) -> Result<MseTable> {
        let trials = self.scenario.trials;
        if trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let per_trial: Vec<Moments> =
            (0..trials).into_par_iter().map(|t| self.trial_moments(t)).collect::<Result<_>>()?;
        let total = tree_reduce(per_trial).expect("at least one trial");
        let n = trials as f64;
        let rows = (0..=self.scenario.horizon)
            .map(|k| {
                let p = &self.covariances[k].p_post;
                let mut emp = [0.0; 2];
                let mut stderr = [0.0; 2];
                for c in 0..2 {
                    let mean = total.sum2[k][c] / n;
                    emp[c] = mean;
                    stderr[c] = if trials > 1 {
                        let var = (total.sum4[k][c] - n * mean * mean).max(0.0) / (n - 1.0);
                        (var / n).sqrt()
                    } else {
                        0.0
                    };
                }
                MseRow { step: k, emp_mse: emp, theo_mse: [p[(0, 0)], p[(1, 1)]], stderr }
            })
            .collect();
        Ok(MseTable { rows, trials })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wall_values() {
        let s = PinholeScenario::default();
        assert_eq!(wall_intensity(&[0.0, 0.0], &s), 2.0);
        assert!((wall_intensity(&[1e3, 0.0], &s) - 1.0).abs() < 1e-12);
        let r = PI / (2.0 * 0.8);
        assert!((wall_intensity(&[r, 0.0], &s) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_structure() {
        let s = PinholeScenario { spacing: 0.05, ..Default::default() };
        let gamma = measurement_gamma(&s).unwrap();
        let origin = gamma.grid().nearest(&[0.0, 0.0]);
        assert_eq!(gamma.at(origin), &[0.0, 0.0]);
        assert!(gamma.component(0, 1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gamma_is_the_linearization() {
        let s = PinholeScenario { spacing: 0.05, ..Default::default() };
        let gamma = measurement_gamma(&s).unwrap();
        let h = 1e-5;
        let q = s.lin_point[0];
        for p in (0..gamma.grid().len()).step_by(7) {
            let i = gamma.grid().point(p);
            let fd = (image_intensity(&i, q + h, &s) - image_intensity(&i, q - h, &s)) / (2.0 * h);
            assert!((fd - gamma.at(p)[0]).abs() < 1e-6 * fd.abs().max(1.0), "{fd} {}", gamma.at(p)[0]);
        }
    }

    #[test]
    fn quiet_truth_stays_put() {
        let s = PinholeScenario { sigma_q2: 0.0, sigma_qd2: 0.0, horizon: 10, ..Default::default() };
        for x in simulate_truth(&s, 4) {
            assert_eq!(x, DVector::from_vec(vec![1.0, 0.0]));
        }
    }

    #[test]
    fn truth_is_reproducible_and_has_right_spread() {
        let s = PinholeScenario { horizon: 10_000, ..Default::default() };
        let a = simulate_truth(&s, 11);
        assert_eq!(a, simulate_truth(&s, 11));
        assert_ne!(a, simulate_truth(&s, 12));
        let inc: Vec<f64> = a.windows(2).map(|w| w[1][1] - w[0][1]).collect();
        let mean = inc.iter().sum::<f64>() / inc.len() as f64;
        let var = inc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (inc.len() - 1) as f64;
        assert!((var / 0.01 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|k| derive_seed(7, k)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    #[test]
    fn invalid_scenarios_rejected() {
        assert!(PinholeScenario { focal: 0.0, ..Default::default() }.validate().is_err());
        assert!(PinholeScenario { eta: -1.0, ..Default::default() }.validate().is_err());
        assert!(PinholeScenario { ell: f64::NAN, ..Default::default() }.validate().is_err());
    }

    fn small() -> PinholeScenario {
        PinholeScenario { spacing: 0.02, ell: 0.08, nu: 1.0, trials: 40, horizon: 6, ..Default::default() }
    }

    #[test]
    fn measurements_never_share_noise() {
        let sim = PinholeSimulation::new(small()).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let z: Vec<FieldSample> = (1..5).map(|k| sim.generate_measurement(&x, 9, k)).collect();
        for a in 0..z.len() {
            for b in a + 1..z.len() {
                assert_ne!(z[a].data(), z[b].data());
            }
        }
        assert_eq!(sim.generate_measurement(&x, 9, 3).data(), z[2].data());
    }

    #[test]
    fn silent_noise_gives_exact_linear_measurement() {
        let sim = PinholeSimulation::new(PinholeScenario { nu: 1e-30, ..small() }).unwrap();
        let x = DVector::from_vec(vec![1.2, 0.1]);
        let z = sim.generate_measurement(&x, 1, 1);
        for p in 0..z.grid().len() {
            let g = sim.model().gamma().at(p);
            assert!((z.at(p)[0] - (g[0] * x[0] + g[1] * x[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn pinhole_truth_matches_linear_at_nominal_state() {
        let lin = PinholeSimulation::new(small()).unwrap();
        let pin = PinholeSimulation::new(PinholeScenario { truth: TruthModel::Pinhole, ..small() }).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let (a, b) = (lin.generate_measurement(&x, 3, 2), pin.generate_measurement(&x, 3, 2));
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_table_shape_and_start() {
        let sim = PinholeSimulation::new(small()).unwrap();
        let table = sim.monte_carlo_mse().unwrap();
        assert_eq!(table.rows.len(), 7);
        assert_eq!(table.rows[0].emp_mse, [0.0, 0.0]);
        assert!(table.rows.iter().all(|r| r.stderr[0] >= 0.0));
        for (row, cov) in table.rows.iter().zip(sim.covariances()) {
            assert_eq!(row.theo_mse, [cov.p_post[(0, 0)], cov.p_post[(1, 1)]]);
        }
    }

    #[test]
    fn parallel_runs_are_bit_identical() {
        let sim = PinholeSimulation::new(small()).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| sim.monte_carlo_mse()).unwrap();
        let b = three.install(|| sim.monte_carlo_mse()).unwrap();
        assert_eq!(a.rows, b.rows);
    }
}
