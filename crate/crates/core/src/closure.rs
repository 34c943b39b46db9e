//! Closed second-moment (Oldroyd-B type) model for the Hookean spring.
//!
//! Multiplying the configuration equation by `q_i q_j` and integrating gives,
//! with `n = int Psi dq` and `A = grad u` (`A_ik = d_k u_i`),
//!
//! ```text
//! d_t n + div(u n) = 0
//! d_t C + div(u C) = A C + C A^T + (2 sigma n I - (2 / r) C) / De
//! ```
//!
//! since `int grad(q_i q_j) . (A q) Psi = (A C + C A^T)_ij`,
//! `int Lap(q_i q_j) Psi = 2 delta_ij n` and `int grad(q_i q_j) . q Psi = 2 C_ij`.
//! The stress is `tau = lambda / (De r) C`; its constant equilibrium part
//! `(lambda sigma / De) I` drops out of the momentum equation.
//!
//! States are stored as perturbations `m = n - 1` and `l = C - sigma r I`;
//! a kinetic state maps to them through `m = int g M` and
//! `l_ij = int q_i q_j g M`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dynamics::Model;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::potential::SpringLaw;
use crate::state::FlowState;
use crate::stepper::{stiff_apply, StiffSolver};

/// Fluid fields plus the moment perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub t: f64,
    pub rho: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    /// `n - 1`
    pub m: Vec<f64>,
    /// `C_ij - sigma r delta_ij`, full symmetric storage `[i][j][x]`.
    pub ell: Vec<Vec<Vec<f64>>>,
}

impl MomentState {
    pub fn zeros(points: usize, dim_x: usize, dim_q: usize) -> Self {
        MomentState {
            t: 0.0,
            rho: vec![0.0; points],
            u: vec![vec![0.0; points]; dim_x],
            m: vec![0.0; points],
            ell: vec![vec![vec![0.0; points]; dim_q]; dim_q],
        }
    }

    pub fn dim_q(&self) -> usize {
        self.ell.len()
    }

    /// Conformation tensor `C(x)` at one grid point.
    pub fn conformation(&self, p: &ModelParams, x: usize) -> DMatrix<f64> {
        let d = self.dim_q();
        DMatrix::from_fn(d, d, |i, j| {
            self.ell[i][j][x] + if i == j { p.sigma * p.r } else { 0.0 }
        })
    }

    pub fn axpy(&mut self, a: f64, o: &MomentState) {
        let add = |x: &mut Vec<f64>, y: &Vec<f64>| x.iter_mut().zip(y).for_each(|(p, q)| *p += a * q);
        add(&mut self.rho, &o.rho);
        add(&mut self.m, &o.m);
        for (x, y) in self.u.iter_mut().zip(&o.u) {
            add(x, y);
        }
        for (ri, oi) in self.ell.iter_mut().zip(&o.ell) {
            for (x, y) in ri.iter_mut().zip(oi) {
                add(x, y);
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.rho
            .iter()
            .chain(self.u.iter().flatten())
            .chain(&self.m)
            .chain(self.ell.iter().flatten().flatten())
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn is_symmetric(&self) -> bool {
        let d = self.dim_q();
        (0..d).all(|i| (0..d).all(|j| self.ell[i][j] == self.ell[j][i]))
    }
}

fn require_hookean(model: &Model) -> Result<()> {
    let pot = model.basis.potential();
    if !matches!(pot.law(), SpringLaw::Hookean) {
        return Err(Error::Unsupported(
            "the second-moment closure is exact only for the Hookean spring; \
             for FENE the moment hierarchy does not close"
                .into(),
        ));
    }
    let theta = model.params.sigma * model.params.r;
    if (pot.scale() - theta).abs() > 1e-12 * theta {
        return Err(Error::Unsupported(format!(
            "closure needs the Maxwellian at scale sigma r = {theta} (basis uses {})",
            pot.scale()
        )));
    }
    Ok(())
}

/// Moments `(m, l)` of a kinetic state.
pub fn moments_of(model: &Model, s: &FlowState) -> Result<MomentState> {
    require_hookean(model)?;
    let dq = model.basis.dim_q();
    let rows: Vec<Vec<nalgebra::DVector<f64>>> = (0..dq)
        .map(|i| (0..dq).map(|j| model.basis.qq(i, j).row(0).transpose()).collect())
        .collect();
    let ell = (0..dq)
        .map(|i| (0..dq).map(|j| (&s.g * &rows[i][j]).iter().copied().collect()).collect())
        .collect();
    Ok(MomentState {
        t: s.t,
        rho: s.rho.clone(),
        u: s.u.clone(),
        m: s.g.column(0).iter().copied().collect(),
        ell,
    })
}

/// Pointwise source `A C + C A^T + (2 sigma n I - (2 / r) C) / De`.
pub fn moment_source(p: &ModelParams, c: &DMatrix<f64>, n: f64, grad_u: &DMatrix<f64>) -> DMatrix<f64> {
    let d = c.nrows();
    grad_u * c + c * grad_u.transpose()
        + (DMatrix::identity(d, d) * (2.0 * p.sigma * n) - c * (2.0 / p.r)) / p.deborah
}

/// Time derivative of a [`MomentState`]; the fluid part is the same as in
/// the kinetic model with `tau = lambda / (De r) l`.
pub fn closed_moment_rhs(model: &Model, ms: &MomentState) -> Result<MomentState> {
    require_hookean(model)?;
    let p = &model.params;
    let grid = &model.grid;
    let dx = grid.dim();
    let dq = ms.dim_q();
    let npts = grid.len();
    if let Some((i, &v)) = ms.rho.iter().enumerate().find(|(_, &r)| !(1.0 + r > 0.0)) {
        return Err(Error::Vacuum { index: i, value: 1.0 + v });
    }
    let grad_rho = grid.gradient(&ms.rho);
    let du: Vec<Vec<Vec<f64>>> = ms.u.iter().map(|c| grid.gradient(c)).collect();
    let div: Vec<f64> = (0..npts).map(|x| (0..dx).map(|i| du[i][i][x]).sum()).collect();
    let kappa = p.lambda / (p.deborah * p.r);

    let drho: Vec<f64> = (0..npts)
        .map(|x| {
            let adv: f64 = (0..dx).map(|j| ms.u[j][x] * grad_rho[j][x]).sum();
            -adv - (1.0 + ms.rho[x]) * div[x]
        })
        .collect();

    let div_hat = grid.forward(&div);
    let mut out = MomentState::zeros(npts, dx, dq);
    out.t = ms.t;
    out.rho = grid.dealias(&drho);
    for i in 0..dx {
        let mut force = vec![0.0; npts];
        for j in 0..dx {
            let mut alpha = vec![0; dx];
            alpha[j] = 1;
            let d = grid.derivative_of_spectrum(&grid.forward(&ms.ell[i][j]), &alpha);
            force.iter_mut().zip(&d).for_each(|(f, v)| *f += kappa * v);
        }
        let lap = grid.laplacian(&ms.u[i]);
        let mut alpha = vec![0; dx];
        alpha[i] = 1;
        let grad_div = grid.derivative_of_spectrum(&div_hat, &alpha);
        let comp: Vec<f64> = (0..npts)
            .map(|x| {
                let adv: f64 = (0..dx).map(|j| ms.u[j][x] * du[i][j][x]).sum();
                let visc = p.mu * lap[x] + (p.mu + p.xi) * grad_div[x];
                -adv - p.pressure_factor(ms.rho[x]) * grad_rho[i][x] + (visc + force[x]) / (1.0 + ms.rho[x])
            })
            .collect();
        out.u[i] = grid.dealias(&comp);
    }

    // n and C: conservative transport plus the pointwise source
    let flux_div = |f: &[f64]| -> Vec<f64> {
        let mut acc = vec![0.0; npts];
        for j in 0..dx {
            let prod: Vec<f64> = (0..npts).map(|x| ms.u[j][x] * f[x]).collect();
            let mut alpha = vec![0; dx];
            alpha[j] = 1;
            let d = grid.derivative_of_spectrum(&grid.forward(&prod), &alpha);
            acc.iter_mut().zip(&d).for_each(|(a, v)| *a += v);
        }
        acc
    };
    let n: Vec<f64> = ms.m.iter().map(|m| 1.0 + m).collect();
    out.m = grid.dealias(&flux_div(&n).iter().map(|v| -v).collect::<Vec<_>>());
    let mut src = vec![vec![vec![0.0; npts]; dq]; dq];
    for x in 0..npts {
        let c = ms.conformation(p, x);
        let a = DMatrix::from_fn(dq, dq, |i, j| if i < dx && j < dx { du[i][j][x] } else { 0.0 });
        let s = moment_source(p, &c, n[x], &a);
        for i in 0..dq {
            for j in 0..dq {
                src[i][j][x] = s[(i, j)];
            }
        }
    }
    for i in 0..dq {
        for j in 0..dq {
            let shift = if i == j { p.sigma * p.r } else { 0.0 };
            let c: Vec<f64> = ms.ell[i][j].iter().map(|l| l + shift).collect();
            let fd = flux_div(&c);
            let v: Vec<f64> = (0..npts).map(|x| src[i][j][x] - fd[x]).collect();
            out.ell[i][j] = grid.dealias(&v);
        }
    }
    Ok(out)
}

/// Stiff part matched to the kinetic IMEX: the fluid part of `Lin` and the
/// relaxation `-(2 / (De r)) (l - sigma r m I)`.
fn moment_stiff_apply(model: &Model, ms: &MomentState) -> MomentState {
    let p = &model.params;
    let npts = ms.rho.len();
    let fluid = FlowState {
        t: ms.t,
        rho: ms.rho.clone(),
        u: ms.u.clone(),
        g: DMatrix::zeros(npts, model.basis.len()),
    };
    let lin = stiff_apply(model, &fluid);
    let dq = ms.dim_q();
    let k = 2.0 / (p.deborah * p.r);
    let mut out = MomentState::zeros(npts, ms.u.len(), dq);
    out.t = ms.t;
    out.rho = lin.rho;
    out.u = lin.u;
    for i in 0..dq {
        for j in 0..dq {
            let shift = if i == j { p.sigma * p.r } else { 0.0 };
            out.ell[i][j] = (0..npts).map(|x| -k * (ms.ell[i][j][x] - shift * ms.m[x])).collect();
        }
    }
    out
}

fn moment_stiff_solve(model: &Model, solver: &StiffSolver, r: &MomentState) -> MomentState {
    let p = &model.params;
    let (rho, u) = solver.solve_macro(model, &r.rho, &r.u);
    let dq = r.dim_q();
    let f = 1.0 / (1.0 + solver.h() * 2.0 / (p.deborah * p.r));
    let mut out = r.clone();
    out.rho = rho;
    out.u = u;
    for i in 0..dq {
        for j in 0..dq {
            let shift = if i == j { p.sigma * p.r } else { 0.0 };
            out.ell[i][j] = (0..r.m.len())
                .map(|x| shift * r.m[x] + (r.ell[i][j][x] - shift * r.m[x]) * f)
                .collect();
        }
    }
    out
}

/// IMEX step with the same splitting and order as the kinetic scheme.
pub fn step_moment_imex(model: &Model, ms: &MomentState, dt: f64, order: usize, solver: &StiffSolver) -> Result<MomentState> {
    let explicit = |y: &MomentState| -> Result<MomentState> {
        let mut n = closed_moment_rhs(model, y)?;
        n.axpy(-1.0, &moment_stiff_apply(model, y));
        Ok(n)
    };
    let mut out = match order {
        1 => {
            let mut r = ms.clone();
            r.axpy(dt, &explicit(ms)?);
            moment_stiff_solve(model, solver, &r)
        }
        2 => {
            let mut r = ms.clone();
            r.axpy(0.5 * dt, &explicit(ms)?);
            let half = moment_stiff_solve(model, solver, &r);
            let mut r = ms.clone();
            r.axpy(0.5 * dt, &moment_stiff_apply(model, ms));
            r.axpy(dt, &explicit(&half)?);
            moment_stiff_solve(model, solver, &r)
        }
        _ => return Err(Error::Parameter(format!("IMEX order must be 1 or 2 (got {order})"))),
    };
    out.t = ms.t + dt;
    Ok(out)
}

/// Deviation of the kinetic and closed stresses over a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosureReport {
    pub times: Vec<f64>,
    /// `|l_kin - l_mom|_F / |l_mom|_F` over all grid points, 0 when both vanish.
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
}

fn relative_frobenius(a: &MomentState, b: &MomentState) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (ra, rb) in a.ell.iter().zip(&b.ell) {
        for (ca, cb) in ra.iter().zip(rb) {
            for (x, y) in ca.iter().zip(cb) {
                num += (x - y) * (x - y);
                den += y * y;
            }
        }
    }
    if den == 0.0 {
        if num == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        (num / den).sqrt()
    }
}

/// Run the kinetic IMEX and the moment IMEX side by side from the same
/// initial data and compare the conformation perturbations after every step.
pub fn closure_compare(model: &Model, initial: &FlowState, dt: f64, t_end: f64, order: usize) -> Result<ClosureReport> {
    require_hookean(model)?;
    let cfg = crate::stepper::StepConfig { dt, t_end, ..Default::default() };
    cfg.validate()?;
    let mut kin = initial.clone();
    let mut mom = moments_of(model, initial)?;
    let mut report = ClosureReport { times: vec![kin.t], deviations: vec![0.0], max_deviation: 0.0 };
    let mut solvers: Vec<StiffSolver> = Vec::new();
    for h in cfg.steps() {
        let hs = if order == 2 { h / 2.0 } else { h };
        if !solvers.iter().any(|s| s.h() == hs) {
            solvers.push(StiffSolver::new(model, hs)?);
        }
        let solver = solvers.iter().find(|s| s.h() == hs).expect("cached");
        kin = crate::stepper::step_imex(model, &kin, h, order, solver, 1.0)?;
        mom = step_moment_imex(model, &mom, h, order, solver)?;
        let dev = relative_frobenius(&moments_of(model, &kin)?, &mom);
        report.times.push(kin.t);
        report.deviations.push(dev);
        report.max_deviation = report.max_deviation.max(dev);
    }
    Ok(report)
}

/// Largest difference between the moments of the kinetic right-hand side
/// and the closed right-hand side of the mapped state, relative to the size
/// of the latter.
pub fn single_time_identity(model: &Model, s: &FlowState) -> Result<f64> {
    let lhs = moments_of(model, &model.rhs(s)?)?;
    let rhs = closed_moment_rhs(model, &moments_of(model, s)?)?;
    let mut diff = lhs.clone();
    diff.axpy(-1.0, &rhs);
    let scale = rhs.max_abs();
    Ok(if scale > 0.0 { diff.max_abs() / scale } else { diff.max_abs() })
}
