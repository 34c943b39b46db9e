//! Right-hand side of the perturbation system around `(1, 0, M)`:
//!
//! ```text
//! d_t rho = -u.grad rho - (1 + rho) div u
//! d_t u_i = -u.grad u_i - a gamma (1 + rho)^(gamma - 2) / Ma^2 d_i rho
//!           + [mu Lap u_i + (mu + xi) d_i div u + sum_j d_j tau_ij] / (1 + rho)
//! d_t g   = -u.grad g - (sigma / De) L g
//!           + sum_ij d_j u_i [ (B_ij - 2 delta_ij) (1 + g) - q_j d_{q_i} g ]
//! ```
//!
//! with `tau_ij = (lambda sigma / De) int q_j d_{q_i}V g M dq` and `B_ij` the
//! multiplication by `q_j d_{q_i}V`. Velocity component `i` couples to the
//! configuration direction `q_i`, so `dim_q >= dim_x` is required.
//!
//! Every pointwise product is projected back onto the 2/3-rule modes.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{param, Error, Result};
use crate::params::ModelParams;
use crate::qbasis::QBasis;
use crate::state::{mean_in_q, FlowState};
use crate::xgrid::{multi_indices_of_order, TorusGrid};

/// Time derivative of a [`FlowState`], in the same layout.
pub type Rhs = FlowState;

/// `max |m|` below which the mean-zero identities are checked.
pub const MEAN_ZERO_GATE: f64 = 1e-10;

/// Relative disagreement between the two stress-divergence forms that
/// counts as an internal inconsistency.
pub const DUAL_FORM_TOL: f64 = 1e-8;

/// Parameters, grid, basis and the precomputed coupling matrices.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: ModelParams,
    pub basis: QBasis,
    pub grid: TorusGrid,
    /// `K_ij^T` with `K_ij = B_ij - 2 delta_ij I - Q_j D_i`.
    stretch_t: Vec<Vec<DMatrix<f64>>>,
    /// `K_ij e0`, the source generated by the equilibrium.
    stretch_e0: Vec<Vec<DVector<f64>>>,
    /// `e0^T B_ij`, the unscaled stress functional.
    stress_rows: Vec<Vec<DVector<f64>>>,
    /// `e0^T Q_j D_i`, the stress functional after integration by parts.
    dual_rows: Vec<Vec<DVector<f64>>>,
}

impl Model {
    pub fn new(params: ModelParams, basis: QBasis, grid: TorusGrid) -> Result<Self> {
        params.validate()?;
        let dx = grid.dim();
        if basis.dim_q() < dx {
            return Err(param(format!(
                "dim_q = {} must be at least dim_x = {dx}: velocity component i stretches q_i",
                basis.dim_q()
            )));
        }
        let n = basis.len();
        let mut stretch_t = vec![vec![DMatrix::zeros(0, 0); dx]; dx];
        let mut stretch_e0 = vec![vec![DVector::zeros(0); dx]; dx];
        let mut stress_rows = vec![vec![DVector::zeros(0); dx]; dx];
        let mut dual_rows = vec![vec![DVector::zeros(0); dx]; dx];
        for i in 0..dx {
            for j in 0..dx {
                let mut k = basis.b(i, j) - basis.q(j) * basis.d(i);
                if i == j {
                    k -= DMatrix::identity(n, n) * 2.0;
                }
                stretch_e0[i][j] = k.column(0).into_owned();
                stretch_t[i][j] = k.transpose();
                stress_rows[i][j] = basis.b(i, j).row(0).transpose();
                dual_rows[i][j] = (basis.q(j) * basis.d(i)).row(0).transpose();
            }
        }
        Ok(Model {
            params,
            basis,
            grid,
            stretch_t,
            stretch_e0,
            stress_rows,
            dual_rows,
        })
    }

    pub fn dim_x(&self) -> usize {
        self.grid.dim()
    }

    /// `(K_ij^T, K_ij e0)` for every velocity-gradient entry.
    pub fn stretch_matrices(&self) -> (&[Vec<DMatrix<f64>>], &[Vec<DVector<f64>>]) {
        (&self.stretch_t, &self.stretch_e0)
    }

    pub fn zero_state(&self) -> FlowState {
        FlowState::zeros(&self.grid, &self.basis)
    }

    /// `tau_ij(x)` including the `lambda sigma / De` factor.
    pub fn stress_tau(&self, s: &FlowState) -> Vec<Vec<Vec<f64>>> {
        let c = self.params.stress_coefficient();
        let dx = self.dim_x();
        (0..dx)
            .map(|i| {
                (0..dx)
                    .map(|j| (&s.g * &self.stress_rows[i][j]).iter().map(|v| c * v).collect())
                    .collect()
            })
            .collect()
    }

    /// `sum_j d_j tau_ij`, and when `max |m|` is below [`MEAN_ZERO_GATE`]
    /// also the integrated-by-parts form `c sum_j int q_j d_{q_i} d_{x_j} g M`.
    pub fn stress_divergence(&self, s: &FlowState) -> Result<StressDivergence> {
        let grid = &self.grid;
        let dx = self.dim_x();
        let tau = self.stress_tau(s);
        let primary: Vec<Vec<f64>> = (0..dx)
            .map(|i| {
                let mut acc = vec![0.0; grid.len()];
                for (j, t) in tau[i].iter().enumerate() {
                    let mut alpha = vec![0; dx];
                    alpha[j] = 1;
                    let d = grid.derivative_of_spectrum(&grid.forward(t), &alpha);
                    acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
                }
                acc
            })
            .collect();
        let m_max = mean_in_q(s).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m_max >= MEAN_ZERO_GATE {
            return Ok(StressDivergence { primary, dual: None, m_max, disagreement: None });
        }
        let c = self.params.stress_coefficient();
        let grads = column_gradients(grid, &s.g);
        let dual: Vec<Vec<f64>> = (0..dx)
            .map(|i| {
                let mut acc = vec![0.0; grid.len()];
                for (j, gj) in grads.iter().enumerate() {
                    let v = gj * &self.dual_rows[i][j];
                    acc.iter_mut().zip(v.iter()).for_each(|(a, b)| *a += c * b);
                }
                acc
            })
            .collect();
        let grad_scale = grads.iter().fold(0.0f64, |a, m| a.max(m.amax()));
        let scale = primary
            .iter()
            .flatten()
            .fold(c * grad_scale, |a, v| a.max(v.abs()));
        let diff = primary
            .iter()
            .flatten()
            .zip(dual.iter().flatten())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        let disagreement = if scale > 0.0 { diff / scale } else { diff };
        if disagreement > DUAL_FORM_TOL && scale > 1e-300 {
            return Err(Error::Consistency(format!(
                "stress divergence forms disagree by {disagreement:.3e} (relative) with max|m| = {m_max:.1e}"
            )));
        }
        Ok(StressDivergence { primary, dual: Some(dual), m_max, disagreement: Some(disagreement) })
    }

    /// Full nonlinear right-hand side.
    pub fn rhs(&self, s: &FlowState) -> Result<Rhs> {
        s.check_shape(&self.grid, &self.basis)?;
        s.validate()?;
        let p = &self.params;
        let grid = &self.grid;
        let dx = self.dim_x();
        let npts = grid.len();

        let rho_hat = grid.forward(&s.rho);
        let grad_rho: Vec<Vec<f64>> = (0..dx).map(|a| grid.derivative_of_spectrum(&rho_hat, &unit(dx, a))).collect();
        let u_hat: Vec<Vec<Complex64>> = s.u.iter().map(|c| grid.forward(c)).collect();
        // du[i][j] = d_j u_i
        let du: Vec<Vec<Vec<f64>>> = u_hat
            .iter()
            .map(|h| (0..dx).map(|j| grid.derivative_of_spectrum(h, &unit(dx, j))).collect())
            .collect();
        let div: Vec<f64> = (0..npts).map(|x| (0..dx).map(|i| du[i][i][x]).sum()).collect();

        // density
        let drho: Vec<f64> = (0..npts)
            .map(|x| {
                let adv: f64 = (0..dx).map(|j| s.u[j][x] * grad_rho[j][x]).sum();
                -adv - (1.0 + s.rho[x]) * div[x]
            })
            .collect();

        // momentum
        let div_hat = grid.forward(&div);
        let sd = self.stress_divergence(s)?;
        let mut du_dt = Vec::with_capacity(dx);
        for i in 0..dx {
            let lap = {
                let mut h = u_hat[i].clone();
                for (k, v) in h.iter_mut().enumerate() {
                    *v *= -grid.k2(k);
                }
                grid.inverse(&h)
            };
            let grad_div = grid.derivative_of_spectrum(&div_hat, &unit(dx, i));
            let comp: Vec<f64> = (0..npts)
                .map(|x| {
                    let adv: f64 = (0..dx).map(|j| s.u[j][x] * du[i][j][x]).sum();
                    let visc = p.mu * lap[x] + (p.mu + p.xi) * grad_div[x];
                    -adv - p.pressure_factor(s.rho[x]) * grad_rho[i][x] + (visc + sd.primary[i][x]) / (1.0 + s.rho[x])
                })
                .collect();
            du_dt.push(grid.dealias(&comp));
        }

        // micro
        let grads = column_gradients(grid, &s.g);
        let mut dg = &s.g * self.basis.lg() * (-p.relaxation_rate());
        for (j, gj) in grads.iter().enumerate() {
            for (x, mut row) in dg.row_iter_mut().enumerate() {
                row += &gj.row(x) * -s.u[j][x];
            }
        }
        for i in 0..dx {
            for j in 0..dx {
                let h = &s.g * &self.stretch_t[i][j];
                let e0 = self.stretch_e0[i][j].transpose();
                for (x, mut row) in dg.row_iter_mut().enumerate() {
                    let a = du[i][j][x];
                    if a != 0.0 {
                        row += &h.row(x) * a;
                        row += &e0 * a;
                    }
                }
            }
        }
        dealias_columns(grid, &mut dg);

        Ok(FlowState { t: s.t, rho: grid.dealias(&drho), u: du_dt, g: dg })
    }

    /// Linearization of [`Model::rhs`] at the equilibrium.
    pub fn rhs_linearized(&self, s: &FlowState) -> Result<Rhs> {
        s.check_shape(&self.grid, &self.basis)?;
        let p = &self.params;
        let grid = &self.grid;
        let dx = self.dim_x();
        let c2 = p.sound_speed_sq();
        let rho_hat = grid.forward(&s.rho);
        let u_hat: Vec<Vec<Complex64>> = s.u.iter().map(|c| grid.forward(c)).collect();
        let du: Vec<Vec<Vec<f64>>> = u_hat
            .iter()
            .map(|h| (0..dx).map(|j| grid.derivative_of_spectrum(h, &unit(dx, j))).collect())
            .collect();
        let div: Vec<f64> = (0..grid.len()).map(|x| (0..dx).map(|i| du[i][i][x]).sum()).collect();
        let div_hat = grid.forward(&div);
        let sd = self.stress_divergence_unchecked(s);
        let mut out = FlowState::zeros(grid, &self.basis);
        out.t = s.t;
        out.rho = div.iter().map(|v| -v).collect();
        for i in 0..dx {
            let mut h = u_hat[i].clone();
            for (k, v) in h.iter_mut().enumerate() {
                *v *= -grid.k2(k);
            }
            let lap = grid.inverse(&h);
            let grad_div = grid.derivative_of_spectrum(&div_hat, &unit(dx, i));
            let grad_rho = grid.derivative_of_spectrum(&rho_hat, &unit(dx, i));
            out.u[i] = (0..grid.len())
                .map(|x| -c2 * grad_rho[x] + p.mu * lap[x] + (p.mu + p.xi) * grad_div[x] + sd[i][x])
                .collect();
        }
        let mut dg = &s.g * self.basis.lg() * (-p.relaxation_rate());
        for i in 0..dx {
            for j in 0..dx {
                let e0 = self.stretch_e0[i][j].transpose();
                for (x, mut row) in dg.row_iter_mut().enumerate() {
                    row += &e0 * du[i][j][x];
                }
            }
        }
        out.g = dg;
        Ok(out)
    }

    fn stress_divergence_unchecked(&self, s: &FlowState) -> Vec<Vec<f64>> {
        let grid = &self.grid;
        let dx = self.dim_x();
        let tau = self.stress_tau(s);
        (0..dx)
            .map(|i| {
                let mut acc = vec![0.0; grid.len()];
                for (j, t) in tau[i].iter().enumerate() {
                    let d = grid.derivative_of_spectrum(&grid.forward(t), &unit(dx, j));
                    acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
                }
                acc
            })
            .collect()
    }

    /// Both sides of the micro-macro cancellation identity at derivative
    /// order `order`, summed over all multi-indices of that order:
    ///
    /// * `T1 = sum_i <d^alpha sum_j d_j int q_j d_{q_i}V g M dq, d^alpha u_i>`
    /// * `T2 = sum_ij <d^alpha (d_j u_i q_j d_{q_i}V), d^alpha g>_M`
    pub fn cancellation_residual(&self, s: &FlowState, order: usize) -> Result<Cancellation> {
        if order > 3 {
            return Err(param(format!("cancellation order must be <= 3 (got {order})")));
        }
        s.check_shape(&self.grid, &self.basis)?;
        let grid = &self.grid;
        let dx = self.dim_x();
        let spec_g = crate::state::column_spectrum(grid, &s.g);
        let u_hat: Vec<Vec<Complex64>> = s.u.iter().map(|c| grid.forward(c)).collect();
        let n = grid.len();
        // Fourier-side inner product: <f, h> = V / N^2 sum conj(f_k) h_k
        let scale = grid.volume() / (n as f64).powi(2);
        let alphas = multi_indices_of_order(dx, order);
        let mut t1 = 0.0;
        let mut t2 = 0.0;
        for k in 0..n {
            let kv = grid.wavenumber(k);
            // sum_alpha |(i k)^alpha|^2 = sum_alpha k^(2 alpha)
            let w: f64 = alphas
                .iter()
                .map(|a| a.iter().enumerate().map(|(ax, &e)| kv[ax].powi(2 * e as i32)).product::<f64>())
                .sum();
            if w == 0.0 {
                continue;
            }
            let gk: DVector<Complex64> = DVector::from_fn(self.basis.len(), |c, _| {
                Complex64::new(spec_g.re[(k, c)], spec_g.im[(k, c)])
            });
            for i in 0..dx {
                for j in 0..dx {
                    let ik = Complex64::new(0.0, kv[j]);
                    // tau_ij spectrum at k, unscaled
                    let row = &self.stress_rows[i][j];
                    let tau_k: Complex64 = gk.iter().zip(row.iter()).map(|(g, r)| g * *r).sum();
                    t1 += w * (ik * tau_k * u_hat[i][k].conj()).re;
                    // source d_j u_i (B_ij e0) paired with g
                    let src = ik * u_hat[i][k];
                    let proj: Complex64 = gk.iter().zip(row.iter()).map(|(g, r)| g.conj() * *r).sum();
                    t2 += w * (src * proj).re;
                }
            }
        }
        t1 *= scale;
        t2 *= scale;
        let denom = t1.abs() + t2.abs();
        let m_max = mean_in_q(s).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if denom == 0.0 {
            return Ok(Cancellation { order, t1, t2, residual: 0.0, degenerate: true, m_max });
        }
        Ok(Cancellation { order, t1, t2, residual: (t1 + t2) / denom, degenerate: false, m_max })
    }
}

/// Result of [`Model::stress_divergence`].
#[derive(Debug, Clone)]
pub struct StressDivergence {
    pub primary: Vec<Vec<f64>>,
    /// Present only when the mean-zero hypothesis holds.
    pub dual: Option<Vec<Vec<f64>>>,
    pub m_max: f64,
    pub disagreement: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cancellation {
    pub order: usize,
    pub t1: f64,
    pub t2: f64,
    /// `(T1 + T2) / (|T1| + |T2|)`, zero when both vanish.
    pub residual: f64,
    pub degenerate: bool,
    pub m_max: f64,
}

fn unit(dim: usize, axis: usize) -> Vec<usize> {
    let mut a = vec![0; dim];
    a[axis] = 1;
    a
}

/// `d_{x_j} g` for every axis, each `points x n_b`.
pub fn column_gradients(grid: &TorusGrid, g: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let dx = grid.dim();
    let cols: Vec<Vec<Vec<f64>>> = (0..g.ncols())
        .into_par_iter()
        .map(|k| {
            let hat = grid.forward(g.column(k).as_slice());
            (0..dx).map(|j| grid.derivative_of_spectrum(&hat, &unit(dx, j))).collect()
        })
        .collect();
    (0..dx)
        .map(|j| DMatrix::from_fn(g.nrows(), g.ncols(), |x, k| cols[k][j][x]))
        .collect()
}

/// Project every column onto the 2/3-rule modes.
pub fn dealias_columns(grid: &TorusGrid, g: &mut DMatrix<f64>) {
    let cols: Vec<Vec<f64>> = (0..g.ncols())
        .into_par_iter()
        .map(|k| grid.dealias(g.column(k).as_slice()))
        .collect();
    for (k, c) in cols.iter().enumerate() {
        g.column_mut(k).copy_from_slice(c);
    }
}

/// Free-function form of [`Model::rhs`].
pub fn rhs_perturbation(s: &FlowState, p: &ModelParams, basis: &QBasis, grid: &TorusGrid) -> Result<Rhs> {
    Model::new(*p, basis.clone(), grid.clone())?.rhs(s)
}

/// Free-function form of [`Model::stress_tau`].
pub fn stress_tau(s: &FlowState, p: &ModelParams, basis: &QBasis, grid: &TorusGrid) -> Result<Vec<Vec<Vec<f64>>>> {
    Ok(Model::new(*p, basis.clone(), grid.clone())?.stress_tau(s))
}

/// Free-function form of [`Model::cancellation_residual`].
pub fn cancellation_residual(s: &FlowState, basis: &QBasis, grid: &TorusGrid, order: usize) -> Result<Cancellation> {
    Model::new(ModelParams::default(), basis.clone(), grid.clone())?.cancellation_residual(s, order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{modal_state, random_state, ModalSpec};
    use crate::potential::Potential;
    use std::f64::consts::PI;

    fn model(dim: usize, n: usize, n_q: usize) -> Model {
        let grid = TorusGrid::new(dim, n, 2.0 * PI).unwrap();
        let basis = QBasis::build(&Potential::hookean(1.0, 1.0, dim).unwrap(), n_q).unwrap();
        Model::new(ModelParams::default(), basis, grid).unwrap()
    }

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let m = model(2, 8, 3);
        let r = m.rhs(&m.zero_state()).unwrap();
        assert!(r.is_zero());
    }

    #[test]
    fn rejects_too_few_configuration_dimensions() {
        let grid = TorusGrid::new(2, 8, 2.0 * PI).unwrap();
        let basis = QBasis::build(&Potential::hookean(1.0, 1.0, 1).unwrap(), 3).unwrap();
        assert!(Model::new(ModelParams::default(), basis, grid).is_err());
    }

    #[test]
    fn vacuum_is_reported() {
        let m = model(1, 8, 3);
        let mut s = m.zero_state();
        s.rho[3] = -1.0;
        assert!(matches!(m.rhs(&s), Err(Error::Vacuum { index: 3, .. })));
    }

    #[test]
    fn pure_micro_mode_relaxes_at_its_eigenvalue() {
        let m = model(1, 16, 6);
        let mut spec = ModalSpec::new(1e-2, 1);
        spec.weights = [0.0, 0.0, 1.0];
        spec.q_mode = 3;
        let s = modal_state(&m.grid, &m.basis, &spec).unwrap();
        let r = m.rhs(&s).unwrap();
        // Hookean spectrum equals the polynomial degree
        let expected = &s.g * (-3.0);
        assert!((&r.g - expected).amax() < 1e-13);
        assert!(max_abs(&r.rho) < 1e-15 && max_abs(&r.u[0]) < 1e-13);
    }

    #[test]
    fn uniform_flow_transports_density() {
        let m = model(1, 16, 3);
        let mut s = m.zero_state();
        s.rho = m.grid.sample(|x| 0.1 * (2.0 * x[0]).sin());
        s.u[0] = vec![0.5; m.grid.len()];
        let r = m.rhs(&s).unwrap();
        let exact = m.grid.sample(|x| -0.5 * 0.2 * (2.0 * x[0]).cos());
        let err = r.rho.iter().zip(&exact).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(err < 1e-13);
    }

    #[test]
    fn linearization_error_is_quadratic() {
        let m = model(2, 12, 3);
        let base = random_state(&m.grid, &m.basis, 1.0, 11, false);
        let err = |eps: f64| {
            let mut s = base.clone();
            s.scale(eps);
            let full = m.rhs(&s).unwrap();
            let lin = m.rhs_linearized(&s).unwrap();
            full.difference(&lin).max_abs()
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.1, "order {order}");
    }

    #[test]
    fn hookean_stress_is_symmetric_and_matches_quadrature() {
        let m = model(2, 8, 4);
        let s = random_state(&m.grid, &m.basis, 0.1, 3, false);
        let tau = m.stress_tau(&s);
        assert!(max_abs(&tau[0][1].iter().zip(&tau[1][0]).map(|(a, b)| a - b).collect::<Vec<_>>()) < 1e-14);
        let pot = m.basis.potential();
        let x = 5;
        let g: Vec<f64> = s.g.row(x).iter().copied().collect();
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for (q, w) in m.basis.nodes().iter().zip(m.basis.node_weights()) {
                    let phi = m.basis.eval(q);
                    let gq: f64 = phi.iter().zip(&g).map(|(a, b)| a * b).sum();
                    acc += w * q[j] * pot.dv1(q[i]) * gq;
                }
                let expected = m.params.stress_coefficient() * acc;
                assert!((tau[i][j][x] - expected).abs() < 1e-12, "{i}{j}");
            }
        }
    }

    #[test]
    fn both_stress_divergence_forms_agree_without_mean() {
        let m = model(2, 12, 4);
        let s = random_state(&m.grid, &m.basis, 0.1, 8, true);
        let sd = m.stress_divergence(&s).unwrap();
        assert!(sd.disagreement.unwrap() < 1e-12);
        let s = random_state(&m.grid, &m.basis, 0.1, 8, false);
        assert!(m.stress_divergence(&s).unwrap().dual.is_none());
    }

    #[test]
    fn total_masses_are_conserved() {
        let m = model(2, 12, 3);
        let s = random_state(&m.grid, &m.basis, 0.2, 4, false);
        let r = m.rhs(&s).unwrap();
        let m_dot: Vec<f64> = r.g.column(0).iter().copied().collect();
        assert!(m.grid.integrate(&r.rho).abs() < 1e-13);
        assert!(m.grid.integrate(&m_dot).abs() < 1e-13);
    }

    #[test]
    fn cancellation_holds_at_every_order() {
        let m = model(2, 12, 4);
        let s = random_state(&m.grid, &m.basis, 0.3, 21, true);
        for order in 0..=3 {
            let c = m.cancellation_residual(&s, order).unwrap();
            if order > 0 {
                assert!(!c.degenerate);
                assert!(c.t1.abs() > 1e-8);
            }
            assert!(c.residual.abs() < 1e-12, "{c:?}");
        }
        let z = m.cancellation_residual(&m.zero_state(), 2).unwrap();
        assert!(z.degenerate && z.residual == 0.0);
        assert!(m.cancellation_residual(&s, 4).is_err());
    }
}
