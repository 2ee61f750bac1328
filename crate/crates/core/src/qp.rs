//! Dense convex QP solver based on operator splitting (ADMM).
//!
//! Solves
//!
//! ```text
//! minimize    ½ xᵀPx + qᵀx
//! subject to  l ≤ Ax ≤ u
//! ```
//!
//! with `P` positive semidefinite. Box constraints are ordinary rows of `A`.
//! Each iteration solves one reduced KKT system with a cached Cholesky factor.
//! Once the iterates settle, the active set is guessed and the equality
//! constrained problem is solved directly ("polishing"), which delivers
//! residuals near machine precision.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Qp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl Qp {
    pub fn n_vars(&self) -> usize {
        self.q.len()
    }

    pub fn n_rows(&self) -> usize {
        self.l.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        let m = self.l.len();
        if self.p.shape() != (n, n) {
            return Err(Error::Input(format!("P is {:?}, expected {n}×{n}", self.p.shape())));
        }
        if self.a.shape() != (m, n) || self.u.len() != m {
            return Err(Error::Input(format!(
                "A is {:?} with {} lower and {} upper bounds, expected {m}×{n}",
                self.a.shape(),
                m,
                self.u.len()
            )));
        }
        if self.p.iter().chain(self.q.iter()).chain(self.a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("QP data contains non-finite entries".into()));
        }
        for i in 0..m {
            if self.l[i].is_nan() || self.u[i].is_nan() || self.l[i] > self.u[i] {
                return Err(Error::Input(format!(
                    "row {i} has bounds [{}, {}]",
                    self.l[i], self.u[i]
                )));
            }
        }
        Ok(())
    }

    /// Largest bound violation of `Ax`.
    pub fn primal_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.a * x;
        (0..self.n_rows())
            .map(|i| (self.l[i] - ax[i]).max(ax[i] - self.u[i]).max(0.0))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_infeasible: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub polish: bool,
    /// Iterations between residual checks, step-size updates and polish
    /// attempts.
    pub check_every: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-8,
            eps_rel: 0.0,
            eps_infeasible: 1e-7,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            polish: true,
            check_every: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of the rows of `A`; negative at an active lower bound,
    /// positive at an active upper bound.
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub polished: bool,
    /// Rows named by the infeasibility certificate.
    pub infeasible_rows: Vec<usize>,
}

const ROW_NORM_FLOOR: f64 = 1e-12;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_SCALE: f64 = 1e3;
const POLISH_REPAIRS: usize = 10;

const RUIZ_PASSES: usize = 15;
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;

/// Problem data after equilibration: `x = D x̄`, rows scaled by `E`, cost by
/// `c`. Multipliers map back as `y = E ȳ / c`.
struct Workspace {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    cost_scale: f64,
    active_rows: Vec<bool>,
    rho: DVector<f64>,
    rho_base: f64,
    is_eq: Vec<bool>,
    factor: Cholesky<f64, Dyn>,
    sigma: f64,
}

impl Workspace {
    fn new(qp: &Qp, settings: &QpSettings) -> Result<std::result::Result<Self, Vec<usize>>> {
        let n = qp.n_vars();
        let m = qp.n_rows();
        let mut active_rows = vec![true; m];
        let mut bad = Vec::new();
        for i in 0..m {
            if qp.a.row(i).amax() < ROW_NORM_FLOOR {
                // An empty row only constrains the constant 0.
                if qp.l[i] > 1e-9 || qp.u[i] < -1e-9 {
                    bad.push(i);
                }
                active_rows[i] = false;
            }
        }
        if !bad.is_empty() {
            return Ok(Err(bad));
        }

        // Modified Ruiz equilibration of [[P, Aᵀ], [A, 0]].
        let mut p = qp.p.clone();
        let mut a = qp.a.clone();
        for i in 0..m {
            if !active_rows[i] {
                a.row_mut(i).fill(0.0);
            }
        }
        let mut d = DVector::from_element(n, 1.0);
        let mut e = DVector::from_element(m, 1.0);
        let inv_sqrt = |norm: f64| {
            if norm < ROW_NORM_FLOOR {
                1.0
            } else {
                (1.0 / norm.sqrt()).clamp(SCALE_MIN, SCALE_MAX)
            }
        };
        for _ in 0..RUIZ_PASSES {
            let dd = DVector::from_fn(n, |j, _| inv_sqrt(p.column(j).amax().max(a.column(j).amax())));
            let ee = DVector::from_fn(m, |i, _| inv_sqrt(a.row(i).amax()));
            for j in 0..n {
                for k in 0..n {
                    p[(j, k)] *= dd[j] * dd[k];
                }
            }
            for i in 0..m {
                for j in 0..n {
                    a[(i, j)] *= ee[i] * dd[j];
                }
            }
            d.component_mul_assign(&dd);
            e.component_mul_assign(&ee);
        }
        let mut q = qp.q.component_mul(&d);
        let mean_col = (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n.max(1) as f64;
        let cost_scale = 1.0 / mean_col.max(q.amax()).clamp(SCALE_MIN, SCALE_MAX);
        p *= cost_scale;
        q *= cost_scale;

        let mut l = DVector::zeros(m);
        let mut u = DVector::zeros(m);
        for i in 0..m {
            if active_rows[i] {
                l[i] = qp.l[i] * e[i];
                u[i] = qp.u[i] * e[i];
            } else {
                l[i] = f64::NEG_INFINITY;
                u[i] = f64::INFINITY;
            }
        }
        let is_eq: Vec<bool> = (0..m).map(|i| active_rows[i] && qp.l[i] == qp.u[i]).collect();
        let rho_base = settings.rho.clamp(RHO_MIN, RHO_MAX);
        let rho = rho_vector(rho_base, &is_eq, &active_rows);
        let factor = factorize(&p, &a, &rho, settings.sigma)?;
        Ok(Ok(Self {
            p,
            q,
            a,
            l,
            u,
            d,
            e,
            cost_scale,
            active_rows,
            rho,
            rho_base,
            is_eq,
            factor,
            sigma: settings.sigma,
        }))
    }

    fn set_rho(&mut self, rho_base: f64) -> Result<()> {
        self.rho_base = rho_base.clamp(RHO_MIN, RHO_MAX);
        self.rho = rho_vector(self.rho_base, &self.is_eq, &self.active_rows);
        self.factor = factorize(&self.p, &self.a, &self.rho, self.sigma)?;
        Ok(())
    }

    fn project(&self, v: &mut DVector<f64>) {
        for i in 0..v.len() {
            v[i] = v[i].clamp(self.l[i], self.u[i]);
        }
    }

    fn unscale_x(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_mul(&self.d)
    }

    fn unscale_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.component_mul(&self.e) / self.cost_scale
    }

    fn unscale_z(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(z.len(), |i, _| if self.active_rows[i] { z[i] / self.e[i] } else { 0.0 })
    }
}

fn rho_vector(base: f64, is_eq: &[bool], active: &[bool]) -> DVector<f64> {
    DVector::from_iterator(
        is_eq.len(),
        is_eq.iter().zip(active).map(|(&eq, &act)| {
            if !act {
                RHO_MIN
            } else if eq {
                RHO_EQ_SCALE * base
            } else {
                base
            }
        }),
    )
}

fn factorize(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    rho: &DVector<f64>,
    sigma: f64,
) -> Result<Cholesky<f64, Dyn>> {
    let n = p.nrows();
    let mut k = p.clone();
    for i in 0..n {
        k[(i, i)] += sigma;
    }
    let ra = DMatrix::from_fn(a.nrows(), n, |i, j| rho[i] * a[(i, j)]);
    k += a.transpose() * ra;
    Cholesky::new(k).ok_or_else(|| Error::Numerical("ADMM system is not positive definite".into()))
}

/// Residuals of a candidate in the original (unscaled) problem.
fn residuals(qp: &Qp, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> (f64, f64, f64, f64) {
    let ax = &qp.a * x;
    let px = &qp.p * x;
    let aty = qp.a.transpose() * y;
    let prim = (&ax - z).amax();
    let dual = (&px + &qp.q + &aty).amax();
    let prim_scale = ax.amax().max(z.amax());
    let dual_scale = px.amax().max(aty.amax()).max(qp.q.amax());
    (prim, dual, prim_scale, dual_scale)
}

/// Solves `qp`, optionally warm-started from a previous primal/dual pair.
pub fn solve_qp(
    qp: &Qp,
    settings: &QpSettings,
    warm_start: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.n_vars();
    let m = qp.n_rows();
    let mut ws = match Workspace::new(qp, settings)? {
        Ok(ws) => ws,
        Err(rows) => return Ok(infeasible(qp, rows, 0)),
    };

    // Iterates live in the scaled space.
    let (mut x, mut y) = match warm_start {
        Some((x0, y0)) if x0.len() == n && y0.len() == m => (
            x0.component_div(&ws.d),
            DVector::from_fn(m, |i, _| {
                if ws.active_rows[i] {
                    y0[i] * ws.cost_scale / ws.e[i]
                } else {
                    0.0
                }
            }),
        ),
        _ => (DVector::zeros(n), DVector::zeros(m)),
    };
    let mut z = &ws.a * &x;
    ws.project(&mut z);

    let alpha = settings.alpha;
    let check_every = settings.check_every.max(1);
    let mut y_prev = y.clone();
    let mut iter = 0;
    while iter < settings.max_iter {
        iter += 1;
        y_prev.copy_from(&y);

        let rz = DVector::from_fn(m, |i, _| ws.rho[i] * z[i] - y[i]);
        let rhs = ws.sigma * &x - &ws.q + ws.a.transpose() * rz;
        let x_tilde = ws.factor.solve(&rhs);
        let z_tilde = &ws.a * &x_tilde;
        x = alpha * &x_tilde + (1.0 - alpha) * &x;
        let z_relaxed = alpha * &z_tilde + (1.0 - alpha) * &z;
        let mut z_new = DVector::from_fn(m, |i, _| z_relaxed[i] + y[i] / ws.rho[i]);
        ws.project(&mut z_new);
        for i in 0..m {
            y[i] += ws.rho[i] * (z_relaxed[i] - z_new[i]);
        }
        z = z_new;

        if iter % check_every != 0 && iter != settings.max_iter {
            continue;
        }

        let x_orig = ws.unscale_x(&x);
        let y_orig = ws.unscale_y(&y);
        let z_orig = ws.unscale_z(&z);
        let (prim, dual, ps, ds) = residuals(qp, &x_orig, &z_orig, &y_orig);
        let eps_p = settings.eps_abs + settings.eps_rel * ps;
        let eps_d = settings.eps_abs + settings.eps_rel * ds;
        if prim <= eps_p && dual <= eps_d {
            if settings.polish {
                if let Some(p) = polish(qp, &ws, &z, &y, iter, settings) {
                    return Ok(p);
                }
            }
            return Ok(finish(qp, x_orig, y_orig, iter, QpStatus::Solved, false));
        }

        if let Some(rows) = primal_infeasibility(&ws, &y, &y_prev, settings.eps_infeasible) {
            return Ok(infeasible(qp, rows, iter));
        }

        if settings.polish && prim < 1e-1 * (1.0 + ps) && dual < 1e-1 * (1.0 + ds) {
            if let Some(p) = polish(qp, &ws, &z, &y, iter, settings) {
                return Ok(p);
            }
        }

        // Balance the two residuals in the scaled space.
        let a_x = &ws.a * &x;
        let prim_s = (&a_x - &z).amax() / a_x.amax().max(z.amax()).max(1e-30);
        let px = &ws.p * &x;
        let aty = ws.a.transpose() * &y;
        let dual_s = (&px + &ws.q + &aty).amax() / px.amax().max(aty.amax()).max(ws.q.amax()).max(1e-30);
        if prim_s > 0.0 && dual_s > 0.0 {
            let new_rho = ws.rho_base * (prim_s / dual_s).sqrt();
            if new_rho > 5.0 * ws.rho_base || new_rho < 0.2 * ws.rho_base {
                ws.set_rho(new_rho)?;
            }
        }
    }

    if settings.polish {
        if let Some(p) = polish(qp, &ws, &z, &y, iter, settings) {
            return Ok(p);
        }
    }
    Ok(finish(qp, ws.unscale_x(&x), ws.unscale_y(&y), iter, QpStatus::MaxIterations, false))
}

fn finish(qp: &Qp, x: DVector<f64>, y: DVector<f64>, iterations: usize, status: QpStatus, polished: bool) -> QpSolution {
    let ax = &qp.a * &x;
    let mut z = ax.clone();
    for i in 0..z.len() {
        z[i] = z[i].clamp(qp.l[i], qp.u[i]);
    }
    let (prim, dual, _, _) = residuals(qp, &x, &z, &y);
    QpSolution {
        objective: qp.objective(&x),
        x,
        y,
        status,
        iterations,
        primal_residual: prim,
        dual_residual: dual,
        polished,
        infeasible_rows: Vec::new(),
    }
}

fn infeasible(qp: &Qp, rows: Vec<usize>, iterations: usize) -> QpSolution {
    QpSolution {
        x: DVector::from_element(qp.n_vars(), f64::NAN),
        y: DVector::from_element(qp.n_rows(), f64::NAN),
        status: QpStatus::PrimalInfeasible,
        iterations,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        objective: f64::INFINITY,
        polished: false,
        infeasible_rows: rows,
    }
}

/// Checks whether the last dual increment certifies primal infeasibility:
/// `Aᵀδy ≈ 0` and `uᵀδy₊ + lᵀδy₋ < 0`.
fn primal_infeasibility(ws: &Workspace, y: &DVector<f64>, y_prev: &DVector<f64>, eps: f64) -> Option<Vec<usize>> {
    let dy = y - y_prev;
    let norm = dy.amax();
    if norm < 1e-30 {
        return None;
    }
    if (ws.a.transpose() * &dy).amax() > eps * norm {
        return None;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        let d = dy[i];
        if d > eps * norm {
            if ws.u[i].is_infinite() {
                return None;
            }
            support += ws.u[i] * d;
        } else if d < -eps * norm {
            if ws.l[i].is_infinite() {
                return None;
            }
            support += ws.l[i] * d;
        }
    }
    if support < -eps * norm {
        let rows = (0..dy.len()).filter(|&i| dy[i].abs() > 1e-3 * norm).collect();
        Some(rows)
    } else {
        None
    }
}

/// Guesses the active set from the scaled iterates `(z̄, ȳ)` and solves the
/// resulting equality-constrained QP in the scaled space. Accepted only when
/// the unscaled point is primal and dual feasible to `eps_abs` with correctly
/// signed multipliers.
fn polish(
    qp: &Qp,
    ws: &Workspace,
    z: &DVector<f64>,
    y: &DVector<f64>,
    iterations: usize,
    settings: &QpSettings,
) -> Option<QpSolution> {
    let m = qp.n_rows();
    let scaled = Qp {
        p: ws.p.clone(),
        q: ws.q.clone(),
        a: ws.a.clone(),
        l: ws.l.clone(),
        u: ws.u.clone(),
    };
    // +1 upper active, -1 lower active, 0 inactive.
    let mut side = vec![0i8; m];
    for i in 0..m {
        if !ws.active_rows[i] {
            continue;
        }
        if ws.is_eq[i] || (ws.l[i].is_finite() && z[i] - ws.l[i] < -y[i]) {
            side[i] = -1;
        } else if ws.u[i].is_finite() && ws.u[i] - z[i] < y[i] {
            side[i] = 1;
        }
    }
    let tol = settings.eps_abs;
    // Repair the guess: activate violated rows, release rows whose
    // multiplier has the wrong sign.
    for _ in 0..=POLISH_REPAIRS {
        let (xs, ys) = solve_active_set(&scaled, &side)?;
        let x_pol = ws.unscale_x(&xs);
        let y_pol = ws.unscale_y(&ys);
        let ax = &qp.a * &x_pol;
        let mut changed = false;
        for i in 0..m {
            if !ws.active_rows[i] || ws.is_eq[i] {
                continue;
            }
            match side[i] {
                0 if ax[i] < qp.l[i] - tol => {
                    side[i] = -1;
                    changed = true;
                }
                0 if ax[i] > qp.u[i] + tol => {
                    side[i] = 1;
                    changed = true;
                }
                -1 if y_pol[i] > tol => {
                    side[i] = 0;
                    changed = true;
                }
                1 if y_pol[i] < -tol => {
                    side[i] = 0;
                    changed = true;
                }
                _ => {}
            }
        }
        if changed {
            continue;
        }
        let viol = qp.primal_violation(&x_pol);
        let dual = (&qp.p * &x_pol + &qp.q + qp.a.transpose() * &y_pol).amax();
        if viol <= tol && dual <= tol {
            let mut sol = finish(qp, x_pol, y_pol, iterations, QpStatus::Solved, true);
            sol.primal_residual = viol;
            return Some(sol);
        }
        return None;
    }
    None
}

/// Solves the KKT system with the rows in `side` held at their bounds.
/// Returns the primal point and full multiplier vector.
fn solve_active_set(qp: &Qp, side: &[i8]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = qp.n_vars();
    let act: Vec<usize> = (0..side.len()).filter(|&i| side[i] != 0).collect();
    let k = act.len();
    let dim = n + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    let mut rhs = DVector::zeros(dim);
    for j in 0..n {
        rhs[j] = -qp.q[j];
    }
    for (r, &i) in act.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = qp.a[(i, j)];
            kkt[(j, n + r)] = qp.a[(i, j)];
        }
        rhs[n + r] = if side[i] > 0 { qp.u[i] } else { qp.l[i] };
    }
    // Regularized factorization, refined against the exact system.
    let delta = 1e-9;
    let mut reg = kkt.clone();
    for j in 0..n {
        reg[(j, j)] += delta;
    }
    for r in 0..k {
        reg[(n + r, n + r)] -= delta;
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..5 {
        let res = &rhs - &kkt * &sol;
        if res.amax() < 1e-14 {
            break;
        }
        sol += lu.solve(&res)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut y = DVector::zeros(side.len());
    for (r, &i) in act.iter().enumerate() {
        y[i] = sol[n + r];
    }
    Some((x, y))
}
