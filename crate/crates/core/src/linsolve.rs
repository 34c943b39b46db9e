//! Restarted GMRES with right preconditioning on flat vectors.

use crate::error::{check_len, Error, Result};

/// Residual accepted when restarts stop making progress.
pub const STAGNATION_ACCEPT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOptions {
    /// Stop when `|b - A x| <= rel_tol |b|`.
    pub rel_tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            rel_tol: 1e-12,
            restart: 150,
            max_iter: 1500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve `A x = b` with `A` applied through `apply` and an approximate inverse
/// `precond`, starting from `x0`.
pub fn gmres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Vec<f64>,
    opts: &GmresOptions,
) -> Result<GmresOutcome> {
    let n = b.len();
    check_len(n, x0.len())?;
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(GmresOutcome { x: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    let mut x = x0;
    let mut total = 0;
    let mut last_rel = f64::INFINITY;
    loop {
        let ax = apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm(&r);
        let rel = beta / bnorm;
        // a whole cycle without progress at a small residual is the rounding floor
        let stagnated = rel <= STAGNATION_ACCEPT && rel > 0.5 * last_rel;
        if rel <= opts.rel_tol || stagnated {
            return Ok(GmresOutcome { x, iterations: total, relative_residual: rel });
        }
        last_rel = rel;
        if total >= opts.max_iter {
            return Err(Error::SolverDivergence(format!(
                "GMRES stalled at relative residual {rel:.3e} after {total} iterations"
            )));
        }
        let m = opts.restart.min(opts.max_iter - total).max(1);
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|x| x / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut e = vec![0.0; m + 1];
        e[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let zk = precond(&v[k]);
            let mut w = apply(&zk);
            z.push(zk);
            // modified Gram-Schmidt
            for (j, vj) in v.iter().enumerate() {
                let hj = dot(&w, vj);
                h[j][k] = hj;
                w.iter_mut().zip(vj).for_each(|(a, b)| *a -= hj * b);
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let d = h[k][k].hypot(h[k + 1][k]);
            cs[k] = if d == 0.0 { 1.0 } else { h[k][k] / d };
            sn[k] = if d == 0.0 { 0.0 } else { h[k + 1][k] / d };
            h[k][k] = d;
            h[k + 1][k] = 0.0;
            e[k + 1] = -sn[k] * e[k];
            e[k] *= cs[k];
            total += 1;
            k_used = k + 1;
            if e[k + 1].abs() / bnorm <= opts.rel_tol * 0.5 || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|x| x / hn).collect());
        }
        // back substitution
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = (i + 1..k_used).map(|j| h[i][j] * y[j]).sum();
            y[i] = (e[i] - s) / h[i][i];
        }
        for (yi, zi) in y.iter().zip(&z) {
            x.iter_mut().zip(zi).for_each(|(a, b)| *a += yi * b);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::SolverDivergence("GMRES produced non-finite values".into()));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_nonsymmetric_system() {
        let n = 30;
        let a = |x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let mut s = (3.0 + i as f64 * 0.1) * x[i];
                    if i > 0 {
                        s += 0.7 * x[i - 1];
                    }
                    if i + 1 < n {
                        s -= 0.4 * x[i + 1];
                    }
                    s
                })
                .collect()
        };
        let exact: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = a(&exact);
        let out = gmres(a, |r: &[f64]| r.to_vec(), &b, vec![0.0; n], &GmresOptions { restart: 7, ..Default::default() })
            .unwrap();
        let err = out.x.iter().zip(&exact).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(err < 1e-11, "{err}");
        // exact preconditioner converges in one iteration
        let diag: Vec<f64> = (0..n).map(|i| 3.0 + i as f64 * 0.1).collect();
        let d = |x: &[f64]| -> Vec<f64> { x.iter().zip(&diag).map(|(a, b)| a * b).collect() };
        let b = d(&exact);
        let out = gmres(d, |r: &[f64]| r.iter().zip(&diag).map(|(a, b)| a / b).collect(), &b, vec![0.0; n], &GmresOptions::default()).unwrap();
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let out = gmres(|x: &[f64]| x.to_vec(), |x: &[f64]| x.to_vec(), &[0.0; 4], vec![1.0; 4], &GmresOptions::default()).unwrap();
        assert_eq!(out.x, vec![0.0; 4]);
    }
}
