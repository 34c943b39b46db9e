//! Built-in initial-data families.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::qbasis::QBasis;
use crate::state::FlowState;
use crate::xgrid::TorusGrid;

/// Single Fourier mode in x times a single basis function in q:
///
/// * `rho = eps w_rho sin(k.x)`
/// * `u_1 = eps w_u cos(k.x)` (other components zero)
/// * `g_{q_mode} = eps w_g cos(k.x)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalSpec {
    pub amplitude: f64,
    /// Mode numbers per spatial axis.
    pub mode: Vec<i64>,
    /// Basis index carrying the micro perturbation.
    pub q_mode: usize,
    /// Weights of the `(rho, u, g)` parts.
    pub weights: [f64; 3],
}

impl ModalSpec {
    pub fn new(amplitude: f64, dim_x: usize) -> Self {
        let mut mode = vec![0; dim_x];
        mode[0] = 1;
        ModalSpec {
            amplitude,
            mode,
            q_mode: 1,
            weights: [1.0, 1.0, 1.0],
        }
    }
}

fn phase(grid: &TorusGrid, mode: &[i64], x: &[f64]) -> f64 {
    (0..grid.dim())
        .map(|a| 2.0 * PI * mode[a] as f64 * x[a] / grid.lengths()[a])
        .sum()
}

pub fn modal_state(grid: &TorusGrid, basis: &QBasis, spec: &ModalSpec) -> Result<FlowState> {
    if !(spec.amplitude >= 0.0) {
        return Err(param(format!("amplitude must be >= 0 (got {})", spec.amplitude)));
    }
    if spec.mode.len() != grid.dim() {
        return Err(param(format!(
            "mode needs {} entries, got {}",
            grid.dim(),
            spec.mode.len()
        )));
    }
    let cutoff = grid.dealias_cutoff() as i64;
    if spec.mode.iter().any(|m| m.abs() > cutoff) {
        return Err(param(format!(
            "mode {:?} is above the dealiasing cutoff {cutoff}",
            spec.mode
        )));
    }
    if spec.q_mode >= basis.len() {
        return Err(param(format!(
            "q_mode {} out of range (basis has {} functions)",
            spec.q_mode,
            basis.len()
        )));
    }
    let eps = spec.amplitude;
    let [wr, wu, wg] = spec.weights;
    let mut s = FlowState::zeros(grid, basis);
    s.rho = grid.sample(|x| eps * wr * phase(grid, &spec.mode, x).sin());
    s.u[0] = grid.sample(|x| eps * wu * phase(grid, &spec.mode, x).cos());
    let col = grid.sample(|x| eps * wg * phase(grid, &spec.mode, x).cos());
    s.g.column_mut(spec.q_mode).copy_from_slice(&col);
    Ok(s)
}

/// Smooth random state: low Fourier modes with random coefficients and
/// q-coefficients decaying like `2^-degree`, scaled so the largest entry
/// equals `amplitude`. With `mean_zero`, the constant q-mode is zero.
pub fn random_state(grid: &TorusGrid, basis: &QBasis, amplitude: f64, seed: u64, mean_zero: bool) -> FlowState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kmax = (grid.dealias_cutoff() as i64).min(3);
    let modes: Vec<Vec<i64>> = {
        let mut out = vec![vec![]];
        for _ in 0..grid.dim() {
            out = out
                .into_iter()
                .flat_map(|m: Vec<i64>| {
                    (-kmax..=kmax).map(move |k| {
                        let mut v = m.clone();
                        v.push(k);
                        v
                    })
                })
                .collect();
        }
        out
    };
    let field = |rng: &mut ChaCha8Rng, decay: f64| -> Vec<f64> {
        let coeffs: Vec<(f64, f64)> = modes
            .iter()
            .map(|m| {
                let n2: i64 = m.iter().map(|k| k * k).sum();
                let d = decay / (1.0 + n2 as f64);
                (rng.random_range(-1.0..1.0) * d, rng.random_range(-1.0..1.0) * d)
            })
            .collect();
        grid.sample(|x| {
            modes
                .iter()
                .zip(&coeffs)
                .map(|(m, (a, b))| {
                    let ph = phase(grid, m, x);
                    a * ph.cos() + b * ph.sin()
                })
                .sum()
        })
    };
    let mut s = FlowState::zeros(grid, basis);
    s.rho = field(&mut rng, 1.0);
    for c in 0..grid.dim() {
        s.u[c] = field(&mut rng, 1.0);
    }
    let start = if mean_zero { 1 } else { 0 };
    for k in start..basis.len() {
        let col = field(&mut rng, 0.5f64.powi(basis.degree(k) as i32));
        s.g.column_mut(k).copy_from_slice(&col);
    }
    let m = s.max_abs();
    if m > 0.0 {
        s.scale(amplitude / m);
    }
    s
}

/// Zero every basis coefficient of total degree above `max_degree`.
pub fn truncate_degree(s: &mut FlowState, basis: &QBasis, max_degree: usize) {
    for k in 0..basis.len() {
        if basis.degree(k) > max_degree {
            s.g.column_mut(k).fill(0.0);
        }
    }
}
