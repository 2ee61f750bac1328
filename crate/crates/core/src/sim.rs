//! Closed-loop simulation of the mixed platoon.
//!
//! The simulated HV keeps a nominal ARX velocity state `w` on its own lags.
//! Its realized velocity is `w_k + μ_d(w_{k-1}, u_{k-1})` where `μ_d` is the
//! mean of the plant's discrepancy GP, and its position integrates the
//! realized velocity. The controller sees exact AV states, the HV position
//! and the nominal ARX history.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::hv::{ArxCoefficients, VelocityHistory};
use crate::mpc::{MpcConfig, MpcController, SolveStatus, Variant};
use crate::platoon::{av_step, PlatoonState, VehicleState};

/// Gaps shorter than `Δ` by more than this count as violations.
pub const VIOLATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub dt: f64,
    /// `(start_s, v_ref)` segments, ordered by start time.
    pub reference: Vec<(f64, f64)>,
    pub initial_gap: f64,
    pub n_av: usize,
    pub seed: u64,
    /// Draw the plant's discrepancy from the GP posterior each step instead
    /// of using its mean.
    pub sample_truth: bool,
}

impl Scenario {
    /// Cruise at 20 m/s from standstill for 30 s.
    pub fn constant() -> Self {
        Self {
            name: "constant".into(),
            duration: 30.0,
            dt: 0.1,
            reference: vec![(0.0, 20.0)],
            initial_gap: 20.0,
            n_av: 2,
            seed: 0,
            sample_truth: false,
        }
    }

    /// Reference drops from 20 to 10 m/s at t = 15 s.
    pub fn braking() -> Self {
        Self {
            name: "braking".into(),
            reference: vec![(0.0, 20.0), (15.0, 10.0)],
            ..Self::constant()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "constant" => Ok(Self::constant()),
            "braking" => Ok(Self::braking()),
            other => Err(Error::Input(format!(
                "unknown scenario `{other}` (expected constant or braking)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Input(format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Input(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_av < 2 {
            return Err(Error::Input(format!("scenario needs at least 2 AVs, has {}", self.n_av)));
        }
        if !(self.initial_gap.is_finite() && self.initial_gap > 0.0) {
            return Err(Error::Input(format!("initial gap must be positive, got {}", self.initial_gap)));
        }
        if self.reference.is_empty() {
            return Err(Error::Input("reference schedule is empty".into()));
        }
        if self.reference.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::Input("reference schedule has non-finite entries".into()));
        }
        if self.reference.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::Input("reference segments must be ordered by start time".into()));
        }
        if self.steps() == 0 {
            return Err(Error::Input("duration is shorter than one step".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize
    }

    /// Reference in force at time `t`; before the first segment the first
    /// value applies.
    pub fn v_ref(&self, t: f64) -> f64 {
        let mut v = self.reference[0].1;
        for &(start, value) in &self.reference {
            if start <= t + 1e-9 {
                v = value;
            }
        }
        v
    }
}

/// One logged sampling instant. Accelerations are the ones applied at this
/// instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub time: f64,
    pub v_ref: f64,
    pub av_position: Vec<f64>,
    pub av_velocity: Vec<f64>,
    pub av_accel: Vec<f64>,
    pub hv_position: f64,
    pub hv_velocity: f64,
    /// Controller's one-step HV position prediction.
    pub hv_mean: f64,
    pub hv_variance: f64,
    /// Rear-gap bound the controller imposed one step ahead.
    pub hv_bound: f64,
    /// Front minus rear position, leader pair first; the last entry is the
    /// last AV to HV gap.
    pub gaps: Vec<f64>,
    pub status: SolveStatus,
    pub qp_iterations: usize,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub scenario: String,
    pub variant: Variant,
    pub n_av: usize,
    pub dt: f64,
    pub rows: Vec<LogRow>,
    /// Set when the controller failed; the log stops at that step.
    pub failure: Option<String>,
}

impl SimLog {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total_cost: f64,
    pub min_av_av_gap: f64,
    pub min_av_hv_gap: f64,
    pub tracking_rmse: f64,
    pub constraint_violations: usize,
}

impl Metrics {
    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        format!(
            "total_cost = {}\nmin_av_av_gap = {}\nmin_av_hv_gap = {}\ntracking_rmse = {}\nconstraint_violations = {}\n",
            self.total_cost, self.min_av_av_gap, self.min_av_hv_gap, self.tracking_rmse, self.constraint_violations
        )
    }
}

/// Nominal ARX state and realized velocity of the simulated driver.
struct Plant<'a> {
    coeffs: ArxCoefficients,
    gp: Option<&'a GpModel>,
    rng: Option<ChaCha8Rng>,
}

impl Plant<'_> {
    fn realized(&mut self, hist: &VelocityHistory) -> Result<f64> {
        let Some(gp) = self.gp else {
            return Ok(hist.hv[0]);
        };
        let q = [hist.hv[1], hist.av[1]];
        let correction = match &mut self.rng {
            Some(rng) => {
                let (mean, var) = gp.predict(&q)?;
                let z: f64 = StandardNormal.sample(rng);
                mean + var.sqrt() * z
            }
            None => gp.predict_mean(&q)?,
        };
        Ok(hist.hv[0] + correction)
    }
}

/// Runs one closed-loop simulation. The gp variant needs `gp_controller`;
/// `gp_truth = None` makes the plant follow the ARX recursion exactly.
pub fn run(
    scenario: &Scenario,
    config: &MpcConfig,
    coeffs: &ArxCoefficients,
    gp_controller: Option<&GpModel>,
    gp_truth: Option<&GpModel>,
) -> Result<SimLog> {
    scenario.validate()?;
    if (config.dt - scenario.dt).abs() > 1e-12 || (coeffs.sample_time - scenario.dt).abs() > 1e-12 {
        return Err(Error::Input(format!(
            "sample times disagree: scenario {}, controller {}, ARX {}",
            scenario.dt, config.dt, coeffs.sample_time
        )));
    }
    if let Some(gp) = gp_truth {
        if gp.input_dim() != 2 {
            return Err(Error::Input(format!("plant GP must take 2 inputs, has {}", gp.input_dim())));
        }
    }
    let mut controller = MpcController::new(config.clone(), *coeffs, gp_controller)?;
    let mut plant = Plant {
        coeffs: *coeffs,
        gp: gp_truth,
        rng: scenario.sample_truth.then(|| ChaCha8Rng::seed_from_u64(scenario.seed)),
    };

    let dt = scenario.dt;
    let mut state = PlatoonState::at_rest(scenario.n_av, scenario.initial_gap)?;
    let mut rows = Vec::with_capacity(scenario.steps());
    let mut failure = None;
    for k in 0..scenario.steps() {
        let time = k as f64 * dt;
        // The driver starts at rest whatever the GP says about standstill.
        state.hv_velocity = if k == 0 { 0.0 } else { plant.realized(&state.history)? };
        let v_ref = scenario.v_ref(time);

        let sol = match controller.solve(&state, v_ref) {
            Ok(sol) => sol,
            Err(e) => {
                failure = Some(format!("step {k} (t = {time:.1} s): {e}"));
                break;
            }
        };
        let accel = sol.first_accelerations();
        let mut gaps = state.av_gaps();
        gaps.push(state.hv_gap());
        rows.push(LogRow {
            time,
            v_ref,
            av_position: state.avs.iter().map(|a| a.position).collect(),
            av_velocity: state.avs.iter().map(|a| a.velocity).collect(),
            av_accel: accel.clone(),
            hv_position: state.hv_position_mean,
            hv_velocity: state.hv_velocity,
            hv_mean: sol.predicted.hv_mean[1],
            hv_variance: sol.predicted.hv_variance[1],
            hv_bound: sol.predicted.hv_bound[1],
            gaps,
            status: sol.status,
            qp_iterations: sol.qp_iterations,
            slack: sol.slack,
        });

        state.avs = state
            .avs
            .iter()
            .zip(&accel)
            .map(|(av, a)| av_step(*av, *a, dt))
            .collect::<Vec<VehicleState>>();
        state.hv_position_mean += dt * state.hv_velocity;
        let w_next = plant.coeffs.step(&state.history);
        state.history.push(w_next, state.last_av().velocity);
    }

    Ok(SimLog {
        scenario: scenario.name.clone(),
        variant: config.variant,
        n_av: scenario.n_av,
        dt,
        rows,
        failure,
    })
}

/// Closed-loop cost, gaps and tracking error of a log. State terms run over
/// every row, input terms over all rows but the last. Violations count
/// (row, pair) gaps below `Δ` by more than [`VIOLATION_TOLERANCE`].
pub fn compute_metrics(log: &SimLog, config: &MpcConfig) -> Metrics {
    let delta = config.policy.delta();
    let n_rows = log.rows.len();
    let mut cost = 0.0;
    let mut sq_err = 0.0;
    let mut min_av = f64::INFINITY;
    let mut min_hv = f64::INFINITY;
    let mut violations = 0;
    for (k, row) in log.rows.iter().enumerate() {
        let e = row.av_velocity[0] - row.v_ref;
        sq_err += e * e;
        cost += config.q1 * e * e;
        for w in row.av_velocity.windows(2) {
            cost += config.q2 * (w[1] - w[0]).powi(2);
        }
        if k + 1 < n_rows {
            cost += config.r * row.av_accel.iter().map(|a| a * a).sum::<f64>();
        }
        let (hv_gap, av_gaps) = row.gaps.split_last().expect("gap list includes the HV gap");
        for g in av_gaps {
            min_av = min_av.min(*g);
        }
        min_hv = min_hv.min(*hv_gap);
        violations += row.gaps.iter().filter(|g| **g < delta - VIOLATION_TOLERANCE).count();
    }
    Metrics {
        total_cost: cost,
        min_av_av_gap: min_av,
        min_av_hv_gap: min_hv,
        tracking_rmse: if n_rows == 0 { 0.0 } else { (sq_err / n_rows as f64).sqrt() },
        constraint_violations: violations,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub nominal: SimLog,
    pub gp: SimLog,
    pub nominal_metrics: Metrics,
    pub gp_metrics: Metrics,
}

impl Comparison {
    /// `gp - nominal` for cost, gaps and tracking error.
    pub fn deltas(&self) -> Metrics {
        let (a, b) = (&self.nominal_metrics, &self.gp_metrics);
        Metrics {
            total_cost: b.total_cost - a.total_cost,
            min_av_av_gap: b.min_av_av_gap - a.min_av_av_gap,
            min_av_hv_gap: b.min_av_hv_gap - a.min_av_hv_gap,
            tracking_rmse: b.tracking_rmse - a.tracking_rmse,
            constraint_violations: b.constraint_violations.abs_diff(a.constraint_violations),
        }
    }
}

/// Runs both variants against the same plant, in parallel. `config.variant`
/// is ignored.
pub fn compare(
    scenario: &Scenario,
    config: &MpcConfig,
    coeffs: &ArxCoefficients,
    gp_controller: &GpModel,
    gp_truth: Option<&GpModel>,
) -> Result<Comparison> {
    let nominal_cfg = MpcConfig { variant: Variant::Nominal, ..config.clone() };
    let gp_cfg = MpcConfig { variant: Variant::Gp, ..config.clone() };
    let (nominal, gp) = std::thread::scope(|s| {
        let h = s.spawn(|| run(scenario, &nominal_cfg, coeffs, None, gp_truth));
        let gp = run(scenario, &gp_cfg, coeffs, Some(gp_controller), gp_truth);
        (h.join().expect("nominal run panicked"), gp)
    });
    let (nominal, gp) = (nominal?, gp?);
    Ok(Comparison {
        nominal_metrics: compute_metrics(&nominal, &nominal_cfg),
        gp_metrics: compute_metrics(&gp, &gp_cfg),
        nominal,
        gp,
    })
}
