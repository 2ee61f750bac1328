//! Receding-horizon controller for the AV platoon.
//!
//! Decision variables are the accelerations `a^n_i` of every AV `n` over the
//! horizon `i = 0..N`, stacked AV-major (`n·N + i`). AV velocities and
//! positions are affine in them. Inside the horizon the HV velocity follows
//! the ARX recursion driven by the last AV, and its position mean picks up
//! the GP correction; both are affine once the GP mean is linearized around
//! a reference trajectory. The GP variance is evaluated on the same
//! reference and only moves the right-hand side of the rear-gap constraint.
//! The program is solved by repeated linearization, one convex QP per pass.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chance::DistancePolicy;
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::hv::{ArxCoefficients, LAGS};
use crate::platoon::{propagate_hv_variance, PlatoonState};
use crate::qp::{solve_qp, Qp, QpSettings, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// ARX model only, fixed gap `Δ`.
    Nominal,
    /// ARX plus GP correction and variance-tightened rear gap.
    Gp,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Nominal => "nominal",
            Variant::Gp => "gp",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(Variant::Nominal),
            "gp" => Ok(Variant::Gp),
            other => Err(Error::Input(format!("unknown variant `{other}` (expected nominal or gp)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Leader velocity tracking weight.
    pub q1: f64,
    /// Weight on velocity differences between neighboring AVs.
    pub q2: f64,
    pub r: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub policy: DistancePolicy,
    pub variant: Variant,
    pub max_outer_iterations: usize,
    pub outer_tolerance: f64,
    /// Penalty per squared meter of the shared distance slack.
    pub slack_penalty: f64,
    pub qp: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.1,
            q1: 5.0,
            q2: 5.0,
            r: 10.0,
            v_min: -35.0,
            v_max: 35.0,
            a_min: -5.0,
            a_max: 5.0,
            policy: DistancePolicy::new(20.0, 0.95).expect("valid default policy"),
            variant: Variant::Gp,
            max_outer_iterations: 10,
            outer_tolerance: 1e-4,
            slack_penalty: 1e6,
            qp: QpSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Input(format!("invalid controller setting: {what}")));
        if self.horizon == 0 {
            return bad("horizon must be ≥ 1");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be positive");
        }
        for (name, w) in [("q1", self.q1), ("q2", self.q2), ("r", self.r)] {
            if !(w.is_finite() && w > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.v_min < self.v_max) {
            return bad("v_min must be below v_max");
        }
        if !(self.a_min < self.a_max) {
            return bad("a_min must be below a_max");
        }
        if self.max_outer_iterations == 0 {
            return bad("at least one linearization pass is needed");
        }
        if !(self.slack_penalty > 0.0) {
            return bad("slack penalty must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    InfeasibleRelaxed,
}

impl SolveStatus {
    pub fn name(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max-iter",
            SolveStatus::InfeasibleRelaxed => "infeasible-relaxed",
        }
    }
}

/// Predicted trajectories over the horizon, index 0 being the current state.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `[n][i]` for AV `n`, step `i = 0..=N`.
    pub av_positions: Vec<Vec<f64>>,
    pub av_velocities: Vec<Vec<f64>>,
    /// Nominal ARX HV velocity.
    pub hv_velocity: Vec<f64>,
    pub hv_mean: Vec<f64>,
    pub hv_variance: Vec<f64>,
    /// Required last-AV to HV gap at each step (`Δ` plus tightening). Entry 0
    /// is not constrained and repeats `Δ`.
    pub hv_bound: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// `[n][i]`, AV `n`, step `i = 0..N`.
    pub accelerations: Vec<Vec<f64>>,
    pub predicted: Prediction,
    /// Horizon cost (excluding the slack penalty).
    pub cost: f64,
    /// Linearization passes.
    pub iterations: usize,
    pub qp_iterations: usize,
    pub status: SolveStatus,
    pub slack: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Largest acceleration change of the last linearization pass.
    pub trajectory_change: f64,
}

impl MpcSolution {
    /// Accelerations to apply now, one per AV.
    pub fn first_accelerations(&self) -> Vec<f64> {
        self.accelerations.iter().map(|a| a[0]).collect()
    }
}

/// Index ranges of the constraint groups in a subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct RowLayout {
    pub accel: std::ops::Range<usize>,
    pub velocity: std::ops::Range<usize>,
    pub av_gap: std::ops::Range<usize>,
    pub hv_gap: std::ops::Range<usize>,
    pub slack: Option<usize>,
}

impl RowLayout {
    fn describe(&self, rows: &[usize]) -> String {
        let mut names = Vec::new();
        let groups = [
            ("acceleration bounds", &self.accel),
            ("velocity bounds", &self.velocity),
            ("AV gaps", &self.av_gap),
            ("HV gap", &self.hv_gap),
        ];
        for (name, range) in groups {
            if rows.iter().any(|r| range.contains(r)) {
                names.push(name);
            }
        }
        if names.is_empty() {
            "unknown rows".into()
        } else {
            names.join(", ")
        }
    }
}

/// A convexified step of the control problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Subproblem {
    pub qp: Qp,
    pub rows: RowLayout,
    /// Constant part of the horizon cost.
    pub cost_offset: f64,
    pub n_av: usize,
    pub horizon: usize,
}

/// `c + gᵀx` over the stacked accelerations.
#[derive(Debug, Clone, PartialEq)]
struct Affine {
    c: f64,
    g: Vec<f64>,
}

impl Affine {
    fn constant(c: f64, n: usize) -> Self {
        Self { c, g: vec![0.0; n] }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.c + self.g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    fn axpy(&mut self, k: f64, other: &Affine) {
        self.c += k * other.c;
        for (a, b) in self.g.iter_mut().zip(&other.g) {
            *a += k * b;
        }
    }

    fn sub(&self, other: &Affine) -> Affine {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }
}

/// Affine horizon predictions plus GP quantities at the reference.
struct Horizon {
    av_p: Vec<Vec<Affine>>,
    av_v: Vec<Vec<Affine>>,
    hv_w: Vec<Affine>,
    hv_mean: Vec<Affine>,
    hv_variance: Vec<f64>,
}

fn check_inputs(config: &MpcConfig, platoon: &PlatoonState, v_ref: f64, coeffs: &ArxCoefficients, gp: Option<&GpModel>) -> Result<()> {
    config.validate()?;
    platoon.validate()?;
    coeffs.validate()?;
    if !v_ref.is_finite() {
        return Err(Error::Input(format!("reference velocity must be finite, got {v_ref}")));
    }
    match (config.variant, gp) {
        (Variant::Gp, None) => Err(Error::Input("the gp variant needs a GP model".into())),
        (Variant::Nominal, Some(_)) => Err(Error::Input("the nominal variant takes no GP model".into())),
        (Variant::Gp, Some(gp)) if gp.input_dim() != 2 => Err(Error::Input(format!(
            "discrepancy GP must take 2 inputs, has {}",
            gp.input_dim()
        ))),
        _ => Ok(()),
    }
}

fn predict_horizon(
    config: &MpcConfig,
    platoon: &PlatoonState,
    coeffs: &ArxCoefficients,
    gp: Option<&GpModel>,
    reference: &[f64],
) -> Result<Horizon> {
    let na = platoon.n_av();
    let n = config.horizon;
    let nx = na * n;
    let t = config.dt;

    let mut av_v = Vec::with_capacity(na);
    let mut av_p = Vec::with_capacity(na);
    for (k, av) in platoon.avs.iter().enumerate() {
        let mut v = vec![Affine::constant(av.velocity, nx)];
        let mut p = vec![Affine::constant(av.position, nx)];
        for i in 0..n {
            let mut vn = v[i].clone();
            vn.g[k * n + i] += t;
            let mut pn = p[i].clone();
            pn.axpy(t, &v[i]);
            v.push(vn);
            p.push(pn);
        }
        av_v.push(v);
        av_p.push(p);
    }

    let hist = &platoon.history;
    let last = &av_v[na - 1];
    // Index i ≥ 0 is inside the horizon, negative indices come from history.
    let u_at = |i: isize| -> Affine {
        if i >= 0 {
            last[i as usize].clone()
        } else {
            Affine::constant(hist.av[(-i) as usize], nx)
        }
    };
    let mut hv_w = vec![Affine::constant(hist.hv[0], nx)];
    for i in 1..=n as isize {
        let mut w = Affine::constant(0.0, nx);
        for j in 1..=LAGS as isize {
            let lag = i - j;
            let w_lag = if lag >= 0 {
                hv_w[lag as usize].clone()
            } else {
                Affine::constant(hist.hv[(-lag) as usize], nx)
            };
            w.axpy(-coeffs.c[(j - 1) as usize], &w_lag);
            w.axpy(coeffs.b[(j - 1) as usize], &u_at(lag));
        }
        hv_w.push(w);
    }
    let w_at = |i: isize| -> Affine {
        if i >= 0 {
            hv_w[i as usize].clone()
        } else {
            Affine::constant(hist.hv[(-i) as usize], nx)
        }
    };

    // Horizon initialization: measured position, zero variance.
    let mut hv_mean = vec![Affine::constant(platoon.hv_position_mean, nx)];
    let mut hv_variance = vec![0.0];
    for i in 0..n {
        let mut next = hv_mean[i].clone();
        next.axpy(t, &hv_w[i]);
        let mut var_inc = 0.0;
        if let Some(gp) = gp {
            let wq = w_at(i as isize - 1);
            let uq = u_at(i as isize - 1);
            let q = [wq.eval(reference), uq.eval(reference)];
            let (mean, var) = gp.predict(&q)?;
            let jac = gp.mean_gradient(&q)?;
            let mut corr = Affine::constant(mean - jac[0] * q[0] - jac[1] * q[1], nx);
            corr.axpy(jac[0], &wq);
            corr.axpy(jac[1], &uq);
            next.axpy(t, &corr);
            var_inc = var;
        }
        hv_variance.push(propagate_hv_variance(hv_variance[i], var_inc, t));
        hv_mean.push(next);
    }

    Ok(Horizon {
        av_p,
        av_v,
        hv_w,
        hv_mean,
        hv_variance,
    })
}

/// Quadratic cost accumulator for `½xᵀPx + qᵀx + offset`.
struct CostBuilder {
    p: DMatrix<f64>,
    q: DVector<f64>,
    offset: f64,
}

impl CostBuilder {
    fn square(&mut self, weight: f64, e: &Affine) {
        let nx = e.g.len();
        for a in 0..nx {
            if e.g[a] == 0.0 {
                continue;
            }
            self.q[a] += 2.0 * weight * e.c * e.g[a];
            for b in 0..nx {
                self.p[(a, b)] += 2.0 * weight * e.g[a] * e.g[b];
            }
        }
        self.offset += weight * e.c * e.c;
    }
}

/// Builds the convex QP for one linearization pass around `reference`
/// (stacked accelerations). With `relaxed`, one extra variable is a shared
/// slack on every distance row.
pub fn build_qp_subproblem(
    config: &MpcConfig,
    platoon: &PlatoonState,
    v_ref: f64,
    coeffs: &ArxCoefficients,
    gp: Option<&GpModel>,
    reference: &[f64],
    relaxed: bool,
) -> Result<Subproblem> {
    check_inputs(config, platoon, v_ref, coeffs, gp)?;
    let na = platoon.n_av();
    let n = config.horizon;
    let nx = na * n;
    if reference.len() != nx {
        return Err(Error::Input(format!(
            "reference has {} entries, expected {nx}",
            reference.len()
        )));
    }
    let h = predict_horizon(config, platoon, coeffs, gp, reference)?;
    let nv = nx + usize::from(relaxed);

    let mut cost = CostBuilder {
        p: DMatrix::zeros(nv, nv),
        q: DVector::zeros(nv),
        offset: 0.0,
    };
    for i in 0..=n {
        let mut e = h.av_v[0][i].clone();
        e.c -= v_ref;
        cost.square(config.q1, &pad(&e, nv));
        for k in 1..na {
            cost.square(config.q2, &pad(&h.av_v[k][i].sub(&h.av_v[k - 1][i]), nv));
        }
    }
    for j in 0..nx {
        cost.p[(j, j)] += 2.0 * config.r;
    }
    if relaxed {
        cost.p[(nx, nx)] += 2.0 * config.slack_penalty;
    }

    let mut rows: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    let push = |rows: &mut Vec<(Vec<f64>, f64, f64)>, e: &Affine, lo: f64, hi: f64, slack: bool| {
        let mut g = e.g.clone();
        g.resize(nv, 0.0);
        if slack {
            g[nx] = 1.0;
        }
        rows.push((g, lo - e.c, hi - e.c));
    };

    let start = rows.len();
    for j in 0..nx {
        let mut e = Affine::constant(0.0, nx);
        e.g[j] = 1.0;
        push(&mut rows, &e, config.a_min, config.a_max, false);
    }
    let accel = start..rows.len();

    let start = rows.len();
    for k in 0..na {
        for i in 1..=n {
            push(&mut rows, &h.av_v[k][i], config.v_min, config.v_max, false);
        }
    }
    let velocity = start..rows.len();

    let delta = config.policy.delta();
    let start = rows.len();
    for k in 1..na {
        for i in 1..=n {
            let gap = h.av_p[k - 1][i].sub(&h.av_p[k][i]);
            push(&mut rows, &gap, delta, f64::INFINITY, relaxed);
        }
    }
    let av_gap = start..rows.len();

    let start = rows.len();
    for i in 1..=n {
        let gap = h.av_p[na - 1][i].sub(&h.hv_mean[i]);
        let bound = hv_bound(config, h.hv_variance[i])?;
        push(&mut rows, &gap, bound, f64::INFINITY, relaxed);
    }
    let hv_gap = start..rows.len();

    let slack = if relaxed {
        let mut g = vec![0.0; nv];
        g[nx] = 1.0;
        rows.push((g, 0.0, f64::INFINITY));
        Some(rows.len() - 1)
    } else {
        None
    };

    let m = rows.len();
    let mut a = DMatrix::zeros(m, nv);
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    for (r, (g, lo, hi)) in rows.into_iter().enumerate() {
        for (c, v) in g.into_iter().enumerate() {
            a[(r, c)] = v;
        }
        l[r] = lo;
        u[r] = hi;
    }

    Ok(Subproblem {
        qp: Qp {
            p: cost.p,
            q: cost.q,
            a,
            l,
            u,
        },
        rows: RowLayout {
            accel,
            velocity,
            av_gap,
            hv_gap,
            slack,
        },
        cost_offset: cost.offset,
        n_av: na,
        horizon: n,
    })
}

fn pad(e: &Affine, nv: usize) -> Affine {
    let mut out = e.clone();
    out.g.resize(nv, 0.0);
    out
}

fn hv_bound(config: &MpcConfig, variance: f64) -> Result<f64> {
    match config.variant {
        Variant::Nominal => Ok(config.policy.delta()),
        Variant::Gp => config.policy.tightened_min_distance(variance),
    }
}

/// Controller with warm-start memory between sampling instants.
#[derive(Debug, Clone)]
pub struct MpcController<'a> {
    config: MpcConfig,
    coeffs: ArxCoefficients,
    gp: Option<&'a GpModel>,
    previous: Option<Vec<f64>>,
}

impl<'a> MpcController<'a> {
    pub fn new(config: MpcConfig, coeffs: ArxCoefficients, gp: Option<&'a GpModel>) -> Result<Self> {
        config.validate()?;
        coeffs.validate()?;
        let gp = match config.variant {
            Variant::Gp => Some(gp.ok_or_else(|| Error::Input("the gp variant needs a GP model".into()))?),
            Variant::Nominal if gp.is_some() => {
                return Err(Error::Input("the nominal variant takes no GP model".into()))
            }
            Variant::Nominal => None,
        };
        Ok(Self {
            config,
            coeffs,
            gp,
            previous: None,
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    /// Forgets the warm start.
    pub fn reset(&mut self) {
        self.previous = None;
    }

    fn warm_start(&self, nx: usize) -> Vec<f64> {
        let n = self.config.horizon;
        match &self.previous {
            Some(prev) if prev.len() == nx => {
                // Shift each AV's sequence one step and repeat the last input.
                let mut x = vec![0.0; nx];
                for k in 0..nx / n {
                    for i in 0..n {
                        x[k * n + i] = prev[k * n + (i + 1).min(n - 1)];
                    }
                }
                x
            }
            _ => vec![0.0; nx],
        }
    }

    pub fn solve(&mut self, platoon: &PlatoonState, v_ref: f64) -> Result<MpcSolution> {
        check_inputs(&self.config, platoon, v_ref, &self.coeffs, self.gp)?;
        let nx = platoon.n_av() * self.config.horizon;
        let mut reference = self.warm_start(nx);
        let passes = match self.gp {
            Some(_) => self.config.max_outer_iterations,
            // Without the GP the program is already a QP.
            None => 1,
        };
        let mut qp_iterations = 0;
        let mut last = None;
        let mut change = 0.0;
        let mut warm_dual: Option<DVector<f64>> = None;
        for pass in 1..=passes {
            let step = self.solve_pass(platoon, v_ref, &reference, warm_dual.as_ref())?;
            qp_iterations += step.qp_iterations;
            change = step
                .x
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            reference = step.x[..nx].to_vec();
            warm_dual = step.hard_dual.clone();
            let done = change < self.config.outer_tolerance;
            last = Some((pass, step));
            if done {
                break;
            }
        }
        let (iterations, step) = last.expect("at least one pass");
        self.previous = Some(reference.clone());

        let h = predict_horizon(&self.config, platoon, &self.coeffs, self.gp, &step.linearized_at)?;
        let xs = &reference;
        let eval = |e: &Affine| e.eval(xs);
        let n = self.config.horizon;
        let predicted = Prediction {
            av_positions: h.av_p.iter().map(|p| p.iter().map(eval).collect()).collect(),
            av_velocities: h.av_v.iter().map(|v| v.iter().map(eval).collect()).collect(),
            hv_velocity: h.hv_w.iter().map(eval).collect(),
            hv_mean: h.hv_mean.iter().map(eval).collect(),
            hv_bound: std::iter::once(Ok(self.config.policy.delta()))
                .chain(h.hv_variance[1..].iter().map(|v| hv_bound(&self.config, *v)))
                .collect::<Result<_>>()?,
            hv_variance: h.hv_variance,
        };
        let accelerations = (0..platoon.n_av())
            .map(|k| xs[k * n..(k + 1) * n].to_vec())
            .collect();
        Ok(MpcSolution {
            accelerations,
            predicted,
            cost: step.cost,
            iterations,
            qp_iterations,
            status: step.status,
            slack: step.slack,
            primal_residual: step.primal_residual,
            dual_residual: step.dual_residual,
            trajectory_change: change,
        })
    }

    fn solve_pass(
        &self,
        platoon: &PlatoonState,
        v_ref: f64,
        reference: &[f64],
        warm_dual: Option<&DVector<f64>>,
    ) -> Result<PassResult> {
        let nx = reference.len();
        let hard = build_qp_subproblem(&self.config, platoon, v_ref, &self.coeffs, self.gp, reference, false)?;
        let x0 = DVector::from_column_slice(reference);
        let warm = warm_dual
            .filter(|y| y.len() == hard.qp.n_rows())
            .map(|y| (&x0, y));
        let sol = solve_qp(&hard.qp, &self.config.qp, warm)?;
        let mut qp_iterations = sol.iterations;
        if sol.status == QpStatus::Solved {
            return Ok(PassResult {
                cost: sol.objective + hard.cost_offset,
                x: sol.x.as_slice().to_vec(),
                hard_dual: Some(sol.y),
                status: SolveStatus::Optimal,
                slack: 0.0,
                primal_residual: sol.primal_residual,
                dual_residual: sol.dual_residual,
                qp_iterations,
                linearized_at: reference.to_vec(),
            });
        }

        let soft = build_qp_subproblem(&self.config, platoon, v_ref, &self.coeffs, self.gp, reference, true)?;
        let sol2 = solve_qp(&soft.qp, &self.config.qp, None)?;
        qp_iterations += sol2.iterations;
        match sol2.status {
            QpStatus::PrimalInfeasible => Err(Error::Infeasible {
                constraints: soft.rows.describe(&sol2.infeasible_rows),
            }),
            status => {
                let slack = sol2.x[nx].max(0.0);
                let x = sol2.x.as_slice()[..nx].to_vec();
                let penalty = self.config.slack_penalty * slack * slack;
                Ok(PassResult {
                    cost: sol2.objective + soft.cost_offset - penalty,
                    x,
                    hard_dual: None,
                    status: if status == QpStatus::Solved {
                        SolveStatus::InfeasibleRelaxed
                    } else {
                        SolveStatus::MaxIter
                    },
                    slack,
                    primal_residual: sol2.primal_residual,
                    dual_residual: sol2.dual_residual,
                    qp_iterations,
                    linearized_at: reference.to_vec(),
                })
            }
        }
    }
}

struct PassResult {
    x: Vec<f64>,
    hard_dual: Option<DVector<f64>>,
    cost: f64,
    status: SolveStatus,
    slack: f64,
    primal_residual: f64,
    dual_residual: f64,
    qp_iterations: usize,
    linearized_at: Vec<f64>,
}

/// One cold-started solve.
pub fn solve(
    config: &MpcConfig,
    platoon: &PlatoonState,
    v_ref: f64,
    coeffs: &ArxCoefficients,
    gp: Option<&GpModel>,
) -> Result<MpcSolution> {
    MpcController::new(config.clone(), *coeffs, gp)?.solve(platoon, v_ref)
}
