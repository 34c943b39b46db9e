//! Time integration: IMEX splitting, the Picard iteration with frozen
//! coefficients, the discrete energy audit and trajectory runs.
//!
//! The stiff linear part `Lin` collects the acoustic pair linearized at
//! `(1, 0)`, the viscous term and `-(sigma / De) L`. Everything else,
//! including the nonlinear pressure correction, the stress and the
//! stretching, is explicit in the IMEX schemes.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{column_gradients, dealias_columns, Model};
use crate::error::{param, Error, Result};
use crate::linsolve::{gmres, GmresOptions};
use crate::state::{energy_report, total_energy_and_dissipation, EnergyReport, FlowState};

/// Relative slack used when checking `E(t)` for monotone decay.
pub const DEFAULT_MONOTONE_TOL: f64 = 1e-8;
/// Floor added to `|D_tot|` when normalizing the audit residual.
pub const AUDIT_FLOOR: f64 = 1e-14;
/// Consecutive ratios `>= 1` that count as non-contraction.
pub const NON_CONTRACTION_RUN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// First-order IMEX: implicit Euler on `Lin`, explicit Euler on the rest.
    Imex,
    /// Second-order IMEX: trapezoid on `Lin`, midpoint on the rest.
    Imex2,
    /// Backward Euler solved by the frozen-coefficient Picard iteration.
    Picard,
}

impl Scheme {
    pub fn order(self) -> usize {
        match self {
            Scheme::Imex | Scheme::Picard => 1,
            Scheme::Imex2 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    /// Picard stops once the successive-difference energy drops below
    /// `picard_tol` times the energy of the iterate.
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub cfl_safety: f64,
    pub audit: bool,
    pub eta: f64,
    /// Allowed increase of `E` per step, relative to `E(0)`.
    pub monotone_tol: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            dt: 1e-2,
            t_end: 1.0,
            scheme: Scheme::Imex,
            picard_tol: 1e-10,
            picard_max_iter: 50,
            cfl_safety: 0.5,
            audit: true,
            eta: 0.5,
            monotone_tol: DEFAULT_MONOTONE_TOL,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(param(format!("dt must be positive (got {})", self.dt)));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(param(format!("t_end must be >= 0 (got {})", self.t_end)));
        }
        if !(self.picard_tol > 0.0) {
            return Err(param(format!("picard_tol must be positive (got {})", self.picard_tol)));
        }
        if self.picard_max_iter < 2 {
            return Err(param(format!("picard_max_iter must be >= 2 (got {})", self.picard_max_iter)));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(param(format!("cfl_safety must lie in (0, 1] (got {})", self.cfl_safety)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(param(format!("eta must lie in (0, 1] (got {})", self.eta)));
        }
        if !(self.monotone_tol >= 0.0) {
            return Err(param(format!("monotone_tol must be >= 0 (got {})", self.monotone_tol)));
        }
        Ok(())
    }

    /// Step sizes covering `[0, t_end]`; the last one is shortened if
    /// `t_end` is not a multiple of `dt`.
    pub fn steps(&self) -> Vec<f64> {
        let ratio = self.t_end / self.dt;
        let full = (ratio + 1e-9).floor() as usize;
        let mut out = vec![self.dt; full];
        let rest = self.t_end - full as f64 * self.dt;
        if rest > 1e-9 * self.dt {
            out.push(rest);
        }
        out
    }
}

/// Apply `Lin` to a state.
pub fn stiff_apply(model: &Model, y: &FlowState) -> FlowState {
    let grid = &model.grid;
    let p = &model.params;
    let dx = grid.dim();
    let c2 = p.sound_speed_sq();
    let rho_hat = grid.forward(&y.rho);
    let u_hat: Vec<Vec<Complex64>> = y.u.iter().map(|c| grid.forward(c)).collect();
    let n = grid.len();
    let mut out_rho = vec![Complex64::new(0.0, 0.0); n];
    let mut out_u = vec![vec![Complex64::new(0.0, 0.0); n]; dx];
    for k in 0..n {
        let kv = grid.wavenumber(k);
        let k2 = grid.k2(k);
        let kdotu: Complex64 = (0..dx).map(|i| u_hat[i][k] * kv[i]).sum();
        let i = Complex64::new(0.0, 1.0);
        out_rho[k] = -i * kdotu;
        for c in 0..dx {
            out_u[c][k] = -c2 * i * kv[c] * rho_hat[k] - p.mu * k2 * u_hat[c][k]
                - (p.mu + p.xi) * kv[c] * kdotu;
        }
    }
    FlowState {
        t: y.t,
        rho: grid.inverse(&out_rho),
        u: out_u.iter().map(|h| grid.inverse(h)).collect(),
        g: &y.g * model.basis.lg() * (-p.relaxation_rate()),
    }
}

/// Solver for `(I - h Lin) y = r`.
#[derive(Debug, Clone)]
pub struct StiffSolver {
    h: f64,
    /// `(I + h (sigma / De) L)^-1`, symmetric.
    micro_inv: DMatrix<f64>,
}

impl StiffSolver {
    pub fn new(model: &Model, h: f64) -> Result<Self> {
        let n = model.basis.len();
        let a = DMatrix::identity(n, n) + model.basis.lg() * (h * model.params.relaxation_rate());
        let micro_inv = a
            .cholesky()
            .ok_or_else(|| Error::SolverDivergence("I + h L is not positive definite".into()))?
            .inverse();
        Ok(StiffSolver { h, micro_inv })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Macro block, diagonal per wavenumber after splitting `u` into its
    /// longitudinal and transverse parts.
    pub fn solve_macro(&self, model: &Model, r_rho: &[f64], r_u: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let grid = &model.grid;
        let p = &model.params;
        let dx = grid.dim();
        let h = self.h;
        let c2 = p.sound_speed_sq();
        let nu = p.longitudinal_viscosity();
        let mut rr = grid.forward(r_rho);
        let mut ru: Vec<Vec<Complex64>> = r_u.iter().map(|c| grid.forward(c)).collect();
        let i = Complex64::new(0.0, 1.0);
        for k in 0..grid.len() {
            let k2 = grid.k2(k);
            if k2 == 0.0 {
                continue;
            }
            let kn = k2.sqrt();
            let kv = grid.wavenumber(k);
            let w_r: Complex64 = (0..dx).map(|c| ru[c][k] * (kv[c] / kn)).sum();
            let w = (w_r - h * c2 * i * kn * rr[k]) / (1.0 + h * nu * k2 + h * h * c2 * k2);
            rr[k] -= h * i * kn * w;
            let damp = 1.0 / (1.0 + h * p.mu * k2);
            for c in 0..dx {
                let khat = kv[c] / kn;
                ru[c][k] = (ru[c][k] - khat * w_r) * damp + khat * w;
            }
        }
        (grid.inverse(&rr), ru.iter().map(|h| grid.inverse(h)).collect())
    }

    pub fn solve_micro(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        r * &self.micro_inv
    }

    pub fn solve(&self, model: &Model, r: &FlowState) -> FlowState {
        let (rho, u) = self.solve_macro(model, &r.rho, &r.u);
        FlowState { t: r.t, rho, u, g: self.solve_micro(&r.g) }
    }
}

/// Largest admissible explicit step:
/// `safety min(dx / max|u|, 1 / (max|grad u| N_q))`.
pub fn cfl_limit(model: &Model, s: &FlowState, safety: f64) -> f64 {
    let grid = &model.grid;
    let umax = (0..grid.len())
        .map(|x| s.u.iter().map(|c| c[x] * c[x]).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let mut gmax = 0.0f64;
    for c in &s.u {
        for row in grid.gradient(c) {
            gmax = row.iter().fold(gmax, |a, v| a.max(v.abs()));
        }
    }
    let a = if umax > 0.0 { grid.min_spacing() / umax } else { f64::INFINITY };
    let b = if gmax > 0.0 { 1.0 / (gmax * model.basis.n_q() as f64) } else { f64::INFINITY };
    safety * a.min(b)
}

fn check_cfl(model: &Model, s: &FlowState, dt: f64, safety: f64) -> Result<()> {
    let limit = cfl_limit(model, s, safety);
    if dt > limit {
        return Err(Error::Cfl { dt, limit, suggested: 0.9 * limit });
    }
    Ok(())
}

/// `rhs - Lin`.
pub fn explicit_part(model: &Model, y: &FlowState) -> Result<FlowState> {
    let mut n = model.rhs(y)?;
    n.axpy(-1.0, &stiff_apply(model, y));
    Ok(n)
}

/// One IMEX step. `solver` must have been built with `h = dt` for the
/// first-order scheme and `h = dt / 2` for the second-order one.
pub fn step_imex(model: &Model, s: &FlowState, dt: f64, order: usize, solver: &StiffSolver, cfl_safety: f64) -> Result<FlowState> {
    check_cfl(model, s, dt, cfl_safety)?;
    let expected_h = if order == 2 { dt / 2.0 } else { dt };
    if (solver.h() - expected_h).abs() > 1e-14 * expected_h {
        return Err(param(format!("stiff solver built for h = {}, step needs {expected_h}", solver.h())));
    }
    let mut out = match order {
        1 => {
            let mut r = s.clone();
            r.axpy(dt, &explicit_part(model, s)?);
            solver.solve(model, &r)
        }
        2 => {
            let n0 = explicit_part(model, s)?;
            let mut r = s.clone();
            r.axpy(0.5 * dt, &n0);
            let mut half = solver.solve(model, &r);
            half.t = s.t + 0.5 * dt;
            let nh = explicit_part(model, &half)?;
            let mut r = s.clone();
            r.axpy(0.5 * dt, &stiff_apply(model, s));
            r.axpy(dt, &nh);
            solver.solve(model, &r)
        }
        _ => return Err(param(format!("IMEX order must be 1 or 2 (got {order})"))),
    };
    out.t = s.t + dt;
    out.validate()?;
    Ok(out)
}

/// Squared `L^2` norm of `(rho, u, g)`, the norm of the contraction estimate.
pub fn low_norm_sq(model: &Model, s: &FlowState) -> f64 {
    let dv = model.grid.cell_volume();
    let a: f64 = s.rho.iter().chain(s.u.iter().flatten()).map(|v| v * v).sum();
    let b: f64 = s.g.iter().map(|v| v * v).sum();
    (a + b) * dv
}

/// Record of one Picard solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PicardTrace {
    /// Successive-difference energies `E~_k = |y_k - y_{k-1}|^2`.
    pub differences: Vec<f64>,
    /// `sqrt(E~_{k+1} / E~_k)`.
    pub ratios: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub gmres_iterations: usize,
}

fn flatten_macro(rho: &[f64], u: &[Vec<f64>]) -> Vec<f64> {
    let mut v = rho.to_vec();
    for c in u {
        v.extend_from_slice(c);
    }
    v
}

fn split_macro(v: &[f64], n: usize, dx: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let rho = v[..n].to_vec();
    let u = (0..dx).map(|c| v[(c + 1) * n..(c + 2) * n].to_vec()).collect();
    (rho, u)
}

/// Frozen-coefficient data of iterate `k`.
struct Frozen {
    u: Vec<Vec<f64>>,
    rho: Vec<f64>,
    /// `du[i][j] = d_j u_i`
    du: Vec<Vec<Vec<f64>>>,
}

impl Frozen {
    fn new(model: &Model, y: &FlowState) -> Self {
        let du = y.u.iter().map(|c| model.grid.gradient(c)).collect();
        Frozen { u: y.u.clone(), rho: y.rho.clone(), du }
    }
}

/// One linear solve of the iteration: `g` first, then `(rho, u)` forced by
/// the stress of the new `g`.
fn picard_iterate(
    model: &Model,
    start: &FlowState,
    prev: &FlowState,
    dt: f64,
    precond: &StiffSolver,
    opts: &GmresOptions,
) -> Result<(FlowState, usize)> {
    let grid = &model.grid;
    let p = &model.params;
    let dx = grid.dim();
    let npts = grid.len();
    let nb = model.basis.len();
    let fz = Frozen::new(model, prev);
    let rate = p.relaxation_rate();
    let stretch = model.stretch_matrices();

    // micro block
    let apply_g = |v: &[f64]| -> Vec<f64> {
        let g = DMatrix::from_column_slice(npts, nb, v);
        let mut nl = DMatrix::zeros(npts, nb);
        for (j, gj) in column_gradients(grid, &g).iter().enumerate() {
            for (x, mut row) in nl.row_iter_mut().enumerate() {
                row += &gj.row(x) * fz.u[j][x];
            }
        }
        for i in 0..dx {
            for j in 0..dx {
                let h = &g * &stretch.0[i][j];
                for (x, mut row) in nl.row_iter_mut().enumerate() {
                    row -= &h.row(x) * fz.du[i][j][x];
                }
            }
        }
        dealias_columns(grid, &mut nl);
        let out = &g / dt + &g * model.basis.lg() * rate + nl;
        out.as_slice().to_vec()
    };
    let mut rhs_g = DMatrix::zeros(npts, nb);
    for i in 0..dx {
        for j in 0..dx {
            let e0 = stretch.1[i][j].transpose();
            for (x, mut row) in rhs_g.row_iter_mut().enumerate() {
                row += &e0 * fz.du[i][j][x];
            }
        }
    }
    dealias_columns(grid, &mut rhs_g);
    rhs_g += &start.g / dt;
    let pre_g = |r: &[f64]| -> Vec<f64> {
        let m = DMatrix::from_column_slice(npts, nb, r);
        (precond.solve_micro(&m) * dt).as_slice().to_vec()
    };
    let sol_g = gmres(apply_g, pre_g, rhs_g.as_slice(), prev.g.as_slice().to_vec(), opts)?;
    let g_new = DMatrix::from_column_slice(npts, nb, &sol_g.x);

    // macro block
    let mu = p.mu;
    let mx = p.mu + p.xi;
    let pf: Vec<f64> = fz.rho.iter().map(|&r| p.pressure_factor(r)).collect();
    let apply_m = |v: &[f64]| -> Vec<f64> {
        let (rho, u) = split_macro(v, npts, dx);
        let grad_rho = grid.gradient(&rho);
        let div = grid.divergence(&u);
        let div_grad = grid.gradient(&div);
        let mut out = Vec::with_capacity(v.len());
        let r: Vec<f64> = (0..npts)
            .map(|x| {
                let adv: f64 = (0..dx).map(|j| fz.u[j][x] * grad_rho[j][x]).sum();
                adv + (1.0 + fz.rho[x]) * div[x]
            })
            .collect();
        out.extend(grid.dealias(&r).iter().zip(&rho).map(|(a, b)| a + b / dt));
        for i in 0..dx {
            let gu = grid.gradient(&u[i]);
            let lap = grid.laplacian(&u[i]);
            let c: Vec<f64> = (0..npts)
                .map(|x| {
                    let adv: f64 = (0..dx).map(|j| fz.u[j][x] * gu[j][x]).sum();
                    adv + pf[x] * grad_rho[i][x] - (mu * lap[x] + mx * div_grad[i][x]) / (1.0 + fz.rho[x])
                })
                .collect();
            out.extend(grid.dealias(&c).iter().zip(&u[i]).map(|(a, b)| a + b / dt));
        }
        out
    };
    let with_g = FlowState { t: start.t, rho: prev.rho.clone(), u: prev.u.clone(), g: g_new.clone() };
    let force = model.stress_divergence(&with_g)?.primary;
    let mut rhs_m = start.rho.iter().map(|v| v / dt).collect::<Vec<_>>();
    for i in 0..dx {
        let f: Vec<f64> = (0..npts).map(|x| force[i][x] / (1.0 + fz.rho[x])).collect();
        rhs_m.extend(grid.dealias(&f).iter().zip(&start.u[i]).map(|(a, b)| a + b / dt));
    }
    let pre_m = |r: &[f64]| -> Vec<f64> {
        let (rr, ru) = split_macro(r, npts, dx);
        let (a, b) = precond.solve_macro(model, &rr, &ru);
        flatten_macro(&a, &b).iter().map(|v| v * dt).collect()
    };
    let sol_m = gmres(apply_m, pre_m, &rhs_m, flatten_macro(&prev.rho, &prev.u), opts)?;
    let (rho, u) = split_macro(&sol_m.x, npts, dx);
    let next = FlowState { t: start.t + dt, rho, u, g: g_new };
    next.validate()?;
    Ok((next, sol_g.iterations + sol_m.iterations))
}

/// Backward-Euler step solved by iterating the linear problem with
/// coefficients frozen at the previous iterate, starting from `s`.
pub fn step_picard(
    model: &Model,
    s: &FlowState,
    dt: f64,
    tol: f64,
    max_iter: usize,
    precond: &StiffSolver,
) -> Result<(FlowState, PicardTrace)> {
    if (precond.h() - dt).abs() > 1e-14 * dt {
        return Err(param(format!("Picard preconditioner built for h = {}, step needs {dt}", precond.h())));
    }
    let opts = GmresOptions::default();
    let mut trace = PicardTrace::default();
    let mut prev = s.clone();
    prev.t = s.t + dt;
    let mut run = 0;
    for k in 0..max_iter {
        let (next, its) = match picard_iterate(model, s, &prev, dt, precond, &opts) {
            Ok(v) => v,
            Err(e @ (Error::Vacuum { .. } | Error::InvalidState(_) | Error::SolverDivergence(_))) => {
                return Err(Error::NonContraction {
                    ratios: trace.ratios.clone(),
                    reason: format!("iterate {} broke down: {e}", k + 1),
                });
            }
            Err(e) => return Err(e),
        };
        trace.gmres_iterations += its;
        trace.iterations += 1;
        let diff = low_norm_sq(model, &next.difference(&prev));
        if let Some(&last) = trace.differences.last() {
            let ratio = if last > 0.0 { (diff / last).sqrt() } else { 0.0 };
            trace.ratios.push(ratio);
            run = if ratio >= 1.0 { run + 1 } else { 0 };
        }
        trace.differences.push(diff);
        prev = next;
        if diff == 0.0 || diff <= tol * low_norm_sq(model, &prev) {
            trace.converged = true;
            break;
        }
        if run >= NON_CONTRACTION_RUN {
            return Err(Error::NonContraction {
                ratios: trace.ratios.clone(),
                reason: format!("{NON_CONTRACTION_RUN} consecutive ratios >= 1"),
            });
        }
    }
    Ok((prev, trace))
}

/// Audit residual on `[t_n, t_n + dt]`:
/// `r = (E(t_n + dt) - E(t_n)) / dt + D_tot(midpoint)`, with `E` the relative
/// energy plus its conserved linear part. Returns `(r, |r| / (|D_tot| + floor))`.
pub fn energy_audit(model: &Model, s0: &FlowState, s1: &FlowState, dt: f64) -> Result<(f64, f64)> {
    let p = &model.params;
    let e0 = total_energy_and_dissipation(s0, p, &model.basis, &model.grid)?;
    let e1 = total_energy_and_dissipation(s1, p, &model.basis, &model.grid)?;
    let mut mid = s0.clone();
    mid.axpy(1.0, s1);
    mid.scale(0.5);
    let dm = total_energy_and_dissipation(&mid, p, &model.basis, &model.grid)?;
    let de = (e1.relative + e1.linear) - (e0.relative + e0.linear);
    let r = de / dt + dm.dissipation;
    Ok((r, r.abs() / (dm.dissipation.abs() + AUDIT_FLOOR)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    Failed {
        step: usize,
        t: f64,
        reason: String,
        /// The step was rejected by the Picard contraction guard.
        non_contraction: bool,
    },
}

/// Everything recorded along a run.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRecord {
    pub reports: Vec<EnergyReport>,
    pub picard: Vec<PicardTrace>,
    pub termination: Termination,
    /// `max E(t) / E(0)`, 1 when `E(0) = 0`.
    pub max_energy_ratio: f64,
    /// Steps where `E` grew by more than `monotone_tol E(0)`.
    pub monotonicity_violations: usize,
    pub positivity_lost: bool,
    /// Trapezoid integral of `D(t)`.
    pub dissipation_integral: f64,
    /// `int |r| dt` over the audited steps.
    pub audit_integral: f64,
    /// Largest per-step change of the polymer or fluid mass.
    pub max_mass_drift: f64,
    /// Picard steps that stopped at the iteration cap.
    pub unconverged_steps: usize,
    #[serde(skip)]
    pub final_state: FlowState,
}

impl TrajectoryRecord {
    pub fn completed(&self) -> bool {
        self.termination == Termination::Completed
    }
}

/// Run to `t_end`, calling `observe` after every accepted step (and once for
/// the initial state with step index 0).
pub fn simulate_with(
    model: &Model,
    cfg: &StepConfig,
    initial: &FlowState,
    mut observe: impl FnMut(usize, &FlowState, &EnergyReport) -> Result<()>,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    initial.check_shape(&model.grid, &model.basis)?;
    initial.validate()?;
    let report = |s: &FlowState| energy_report(s, &model.params, &model.basis, &model.grid, cfg.eta);
    let mut s = initial.clone();
    let r0 = report(&s)?;
    observe(0, &s, &r0)?;
    let e_init = r0.e;
    let mut rec = TrajectoryRecord {
        reports: vec![r0],
        picard: Vec::new(),
        termination: Termination::Completed,
        max_energy_ratio: 1.0,
        monotonicity_violations: 0,
        positivity_lost: !(r0.min_one_plus_g >= crate::state::POSITIVITY_THRESHOLD),
        dissipation_integral: 0.0,
        audit_integral: 0.0,
        max_mass_drift: 0.0,
        unconverged_steps: 0,
        final_state: s.clone(),
    };
    let audit_possible = cfg.audit && model.params.gamma > 1.0;
    let mut solvers: Vec<StiffSolver> = Vec::new();
    for (step, &dt) in cfg.steps().iter().enumerate() {
        let h = if cfg.scheme == Scheme::Imex2 { dt / 2.0 } else { dt };
        if !solvers.iter().any(|sv| sv.h() == h) {
            solvers.push(StiffSolver::new(model, h)?);
        }
        let solver = solvers.iter().find(|sv| sv.h() == h).expect("solver cached above");
        let result = match cfg.scheme {
            Scheme::Imex => step_imex(model, &s, dt, 1, solver, cfg.cfl_safety).map(|n| (n, None)),
            Scheme::Imex2 => step_imex(model, &s, dt, 2, solver, cfg.cfl_safety).map(|n| (n, None)),
            Scheme::Picard => step_picard(model, &s, dt, cfg.picard_tol, cfg.picard_max_iter, solver)
                .map(|(n, t)| (n, Some(t))),
        };
        let (next, trace) = match result {
            Ok(v) => v,
            Err(e) => {
                log::warn!("step {} at t = {:.6} failed: {e}", step + 1, s.t);
                rec.termination = Termination::Failed {
                    step: step + 1,
                    t: s.t,
                    reason: e.to_string(),
                    non_contraction: matches!(e, Error::NonContraction { .. }),
                };
                break;
            }
        };
        if let Some(t) = trace {
            if !t.converged {
                log::warn!("Picard step {} stopped at the iteration cap", step + 1);
                rec.unconverged_steps += 1;
            }
            rec.picard.push(t);
        }
        let mut r = report(&next)?;
        if audit_possible {
            match energy_audit(model, &s, &next, dt) {
                Ok((res, norm)) => {
                    r.audit_residual = res;
                    r.audit_normalized = norm;
                    rec.audit_integral += res.abs() * dt;
                }
                Err(Error::Positivity { .. }) => {
                    r.audit_residual = f64::NAN;
                    r.audit_normalized = f64::NAN;
                }
                Err(e) => return Err(e),
            }
        } else {
            r.audit_residual = f64::NAN;
            r.audit_normalized = f64::NAN;
        }
        let prev = rec.reports.last().expect("initial report present");
        if r.e > prev.e + cfg.monotone_tol * e_init {
            rec.monotonicity_violations += 1;
        }
        if !(r.min_one_plus_g >= crate::state::POSITIVITY_THRESHOLD) {
            rec.positivity_lost = true;
        }
        rec.dissipation_integral += 0.5 * dt * (prev.d + r.d);
        let drift = (r.polymer_mass - prev.polymer_mass).abs().max((r.fluid_mass - prev.fluid_mass).abs());
        rec.max_mass_drift = rec.max_mass_drift.max(drift);
        if e_init > 0.0 {
            rec.max_energy_ratio = rec.max_energy_ratio.max(r.e / e_init);
        }
        observe(step + 1, &next, &r)?;
        rec.reports.push(r);
        s = next;
    }
    rec.final_state = s;
    Ok(rec)
}

pub fn simulate(model: &Model, cfg: &StepConfig, initial: &FlowState) -> Result<TrajectoryRecord> {
    simulate_with(model, cfg, initial, |_, _, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{modal_state, random_state, ModalSpec};
    use crate::params::ModelParams;
    use crate::potential::Potential;
    use crate::qbasis::QBasis;
    use crate::xgrid::TorusGrid;
    use std::f64::consts::PI;

    fn model(dim: usize, n: usize, n_q: usize) -> Model {
        let grid = TorusGrid::new(dim, n, 2.0 * PI).unwrap();
        let basis = QBasis::build(&Potential::hookean(1.0, 1.0, dim).unwrap(), n_q).unwrap();
        Model::new(ModelParams::default(), basis, grid).unwrap()
    }

    #[test]
    fn config_validation_and_steps() {
        StepConfig::default().validate().unwrap();
        assert!(StepConfig { picard_max_iter: 1, ..Default::default() }.validate().is_err());
        assert!(StepConfig { dt: 0.0, ..Default::default() }.validate().is_err());
        let c = StepConfig { dt: 0.3, t_end: 1.0, ..Default::default() };
        let s = c.steps();
        assert_eq!(s.len(), 4);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert_eq!(StepConfig { dt: 0.1, t_end: 1.0, ..Default::default() }.steps().len(), 10);
    }

    #[test]
    fn stiff_solver_inverts_the_stiff_operator() {
        let m = model(2, 12, 3);
        let y = random_state(&m.grid, &m.basis, 0.1, 2, false);
        let h = 0.37;
        let solver = StiffSolver::new(&m, h).unwrap();
        let mut r = y.clone();
        r.axpy(-h, &stiff_apply(&m, &y));
        let back = solver.solve(&m, &r);
        assert!(back.difference(&y).max_abs() < 1e-13);
    }

    #[test]
    fn zero_state_is_stationary_under_every_scheme() {
        let m = model(1, 16, 4);
        for scheme in [Scheme::Imex, Scheme::Imex2, Scheme::Picard] {
            let cfg = StepConfig { dt: 0.05, t_end: 0.25, scheme, ..Default::default() };
            let rec = simulate(&m, &cfg, &m.zero_state()).unwrap();
            assert!(rec.completed());
            assert!(rec.final_state.is_zero());
            for r in &rec.reports {
                assert!(r.fluctuation_fields().iter().all(|v| v.abs() < 1e-12), "{scheme:?} {r:?}");
            }
            if scheme == Scheme::Picard {
                assert!(rec.picard.iter().all(|t| t.iterations == 1 && t.differences == vec![0.0]));
            }
        }
    }

    #[test]
    fn micro_eigenmode_follows_implicit_euler() {
        let m = model(1, 16, 6);
        let mut spec = ModalSpec::new(1e-3, 1);
        spec.weights = [0.0, 0.0, 1.0];
        spec.q_mode = 4;
        let s = modal_state(&m.grid, &m.basis, &spec).unwrap();
        let dt = 0.1;
        let solver = StiffSolver::new(&m, dt).unwrap();
        let next = step_imex(&m, &s, dt, 1, &solver, 0.5).unwrap();
        let expected = &s.g / (1.0 + dt * 4.0);
        assert!((&next.g - expected).amax() < 1e-15);
        assert!((next.t - dt).abs() < 1e-15);
    }

    #[test]
    fn imex_schemes_converge_at_their_order() {
        let m = model(1, 16, 4);
        let s0 = random_state(&m.grid, &m.basis, 1e-2, 9, false);
        for (order, expected) in [(1usize, 2.0), (2, 4.0)] {
            let run = |dt: f64| {
                let h = if order == 2 { dt / 2.0 } else { dt };
                let solver = StiffSolver::new(&m, h).unwrap();
                let mut s = s0.clone();
                for _ in 0..(0.4 / dt).round() as usize {
                    s = step_imex(&m, &s, dt, order, &solver, 0.5).unwrap();
                }
                s
            };
            let (a, b, c) = (run(0.04), run(0.02), run(0.01));
            let e1 = crate::state::energy_e(&a.difference(&b), &m.basis, &m.grid).unwrap().total().sqrt();
            let e2 = crate::state::energy_e(&b.difference(&c), &m.basis, &m.grid).unwrap().total().sqrt();
            let ratio = e1 / e2;
            assert!((ratio - expected).abs() < 0.15 * expected, "order {order}: {ratio}");
        }
    }

    #[test]
    fn pure_micro_energy_does_not_grow() {
        let m = model(2, 8, 4);
        let mut s = random_state(&m.grid, &m.basis, 0.1, 4, true);
        s.rho.iter_mut().for_each(|v| *v = 0.0);
        s.u.iter_mut().flatten().for_each(|v| *v = 0.0);
        for dt in [1e-3, 0.1, 10.0] {
            let solver = StiffSolver::new(&m, dt).unwrap();
            let next = step_imex(&m, &s, dt, 1, &solver, 1.0).unwrap();
            let before: f64 = s.g.iter().map(|v| v * v).sum();
            let after: f64 = next.g.iter().map(|v| v * v).sum();
            assert!(after <= before);
        }
    }

    #[test]
    fn imex_conserves_both_masses() {
        let m = model(2, 12, 3);
        let s = random_state(&m.grid, &m.basis, 0.05, 6, false);
        let solver = StiffSolver::new(&m, 0.01).unwrap();
        let next = step_imex(&m, &s, 0.01, 1, &solver, 0.5).unwrap();
        let mass = |s: &FlowState| (m.grid.integrate(&s.rho), m.grid.integrate(&crate::state::mean_in_q(s)));
        let (a, b) = (mass(&s), mass(&next));
        assert!((a.0 - b.0).abs() < 1e-14 && (a.1 - b.1).abs() < 1e-14);
    }

    #[test]
    fn cfl_violation_is_rejected_with_a_suggestion() {
        let m = model(1, 16, 4);
        let mut spec = ModalSpec::new(0.5, 1);
        spec.weights = [0.1, 1.0, 0.0];
        let s = modal_state(&m.grid, &m.basis, &spec).unwrap();
        let solver = StiffSolver::new(&m, 1.0).unwrap();
        match step_imex(&m, &s, 1.0, 1, &solver, 0.5) {
            Err(Error::Cfl { suggested, limit, .. }) => assert!(suggested < limit && limit < 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn picard_contracts_for_small_data() {
        let m = model(1, 16, 4);
        let s = random_state(&m.grid, &m.basis, 1e-3, 3, false);
        let dt = 0.05;
        let solver = StiffSolver::new(&m, dt).unwrap();
        let (next, trace) = step_picard(&m, &s, dt, 1e-20, 30, &solver).unwrap();
        assert!(trace.converged);
        assert!(trace.ratios.iter().all(|&r| r < 1.0), "{:?}", trace.ratios);
        // the limit solves backward Euler
        let mut resid = next.difference(&s);
        resid.axpy(-dt, &m.rhs(&next).unwrap());
        assert!(resid.max_abs() < 1e-12, "{}", resid.max_abs());
    }

    #[test]
    fn picard_zero_state_is_fixed() {
        let m = model(1, 8, 3);
        let solver = StiffSolver::new(&m, 0.5).unwrap();
        let (next, trace) = step_picard(&m, &m.zero_state(), 0.5, 1e-10, 10, &solver).unwrap();
        assert!(next.is_zero());
        assert!(trace.converged);
        assert_eq!(trace.iterations, 1);
    }

    #[test]
    fn picard_reports_large_data() {
        let m = model(1, 32, 6);
        let dt = 2.0;
        let solver = StiffSolver::new(&m, dt).unwrap();
        let spec = |eps| ModalSpec { amplitude: eps, mode: vec![2], q_mode: 2, weights: [0.1, 1.0, 1.0] };
        let small = modal_state(&m.grid, &m.basis, &spec(1e-3)).unwrap();
        let (_, trace) = step_picard(&m, &small, dt, 1e-10, 50, &solver).unwrap();
        assert!(trace.converged && trace.ratios.iter().all(|&r| r < 1.0));
        let large = modal_state(&m.grid, &m.basis, &spec(2.0)).unwrap();
        let err = step_picard(&m, &large, dt, 1e-10, 50, &solver).unwrap_err();
        assert!(matches!(err, Error::NonContraction { .. }), "{err}");
    }

    #[test]
    fn audit_matches_the_viscous_decay_oracle() {
        // shear u_1 = eps exp(-mu t) sin y solves the system when the stress is absent
        let grid = TorusGrid::new(2, 8, 2.0 * PI).unwrap();
        let basis = QBasis::build(&Potential::hookean(1.0, 1.0, 2).unwrap(), 2).unwrap();
        let m = Model::new(ModelParams { mu: 0.7, ..Default::default() }, basis, grid).unwrap();
        let state = |t: f64| {
            let mut s = m.zero_state();
            s.u[0] = m.grid.sample(|x| 1e-3 * (-0.7 * t).exp() * x[1].sin());
            s
        };
        let res = |dt: f64| energy_audit(&m, &state(0.3), &state(0.3 + dt), dt).unwrap().0.abs();
        let zero = energy_audit(&m, &m.zero_state(), &m.zero_state(), 0.1).unwrap();
        assert_eq!(zero, (0.0, 0.0));
        let ratio = res(0.1) / res(0.05);
        assert!((ratio - 4.0).abs() < 0.2, "{ratio}");
    }
}
