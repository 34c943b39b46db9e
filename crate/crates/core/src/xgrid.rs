//! Periodic spatial grid with Fourier pseudo-spectral calculus.
//!
//! Fields are flat `Vec<f64>` of length `n^dim` in row-major order (last
//! axis fastest). Transforms are unnormalized forward, normalized inverse.
//! The Nyquist mode carries zero wavenumber for every derivative so that
//! odd derivatives of real fields stay real.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{param, Error, Result};

/// Highest derivative order supported by [`TorusGrid::derivative`].
pub const MAX_DERIVATIVE: usize = 4;

#[derive(Clone)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
    lengths: Vec<f64>,
    /// Derivative wavenumbers per flat spectral index.
    k: Vec<[f64; 3]>,
    /// Whether each spectral index survives the 2/3 rule.
    keep: Vec<bool>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TorusGrid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("lengths", &self.lengths)
            .finish()
    }
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        Self::with_lengths(dim, n, &vec![length; dim])
    }

    pub fn with_lengths(dim: usize, n: usize, lengths: &[f64]) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(param(format!("dim_x must be 1, 2 or 3 (got {dim})")));
        }
        if n < 4 || n % 2 != 0 {
            return Err(param(format!("points per dimension must be even and >= 4 (got {n})")));
        }
        if lengths.len() != dim || lengths.iter().any(|&l| !(l > 0.0)) {
            return Err(param("domain lengths must be positive, one per dimension"));
        }
        let cutoff = (n as i64 - 1) / 3;
        let total = n.pow(dim as u32);
        let mut k = Vec::with_capacity(total);
        let mut keep = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut kv = [0.0; 3];
            let mut ok = true;
            for axis in (0..dim).rev() {
                let j = (rem % n) as i64;
                rem /= n;
                let m = if j < n as i64 / 2 { j } else { j - n as i64 };
                if m.abs() > cutoff {
                    ok = false;
                }
                kv[axis] = if m == -(n as i64) / 2 {
                    0.0
                } else {
                    2.0 * PI * m as f64 / lengths[axis]
                };
            }
            k.push(kv);
            keep.push(ok);
        }
        let mut planner = FftPlanner::new();
        Ok(TorusGrid {
            dim,
            n,
            lengths: lengths.to_vec(),
            k,
            keep,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.n as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Largest mode number kept by the 2/3 rule.
    pub fn dealias_cutoff(&self) -> usize {
        (self.n - 1) / 3
    }

    /// Coordinates of grid point `flat`.
    pub fn point(&self, flat: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        let mut rem = flat;
        for axis in (0..self.dim).rev() {
            x[axis] = (rem % self.n) as f64 * self.spacing(axis);
            rem /= self.n;
        }
        x
    }

    /// Sample `f` at every grid point.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|i| f(&self.point(i)[..self.dim])).collect()
    }

    /// Derivative wavenumbers of spectral index `flat`.
    pub fn wavenumber(&self, flat: usize) -> &[f64] {
        &self.k[flat][..self.dim]
    }

    pub fn kept(&self, flat: usize) -> bool {
        self.keep[flat]
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                for chunk in data.chunks_mut(n) {
                    plan.process_with_scratch(chunk, &mut scratch);
                }
                continue;
            }
            let block = stride * n;
            for start in (0..data.len()).step_by(block) {
                for off in 0..stride {
                    let base = start + off;
                    for (j, l) in line.iter_mut().enumerate() {
                        *l = data[base + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, l) in line.iter().enumerate() {
                        data[base + j * stride] = *l;
                    }
                }
            }
        }
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, field: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        data
    }

    /// Inverse transform, keeping the real part.
    pub fn inverse(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut data = spectrum.to_vec();
        self.transform(&mut data, &self.inverse);
        let scale = 1.0 / self.len() as f64;
        data.iter().map(|c| c.re * scale).collect()
    }

    fn check(&self, field: &[f64]) -> Result<()> {
        if field.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: field.len(),
            });
        }
        Ok(())
    }

    /// Spectral multiplier `(i k)^alpha`.
    fn derivative_symbol(&self, flat: usize, alpha: &[usize]) -> Complex64 {
        let mut c = Complex64::new(1.0, 0.0);
        for (axis, &a) in alpha.iter().enumerate() {
            for _ in 0..a {
                c *= Complex64::new(0.0, self.k[flat][axis]);
            }
        }
        c
    }

    /// `d^alpha f` from a precomputed spectrum.
    pub fn derivative_of_spectrum(&self, spectrum: &[Complex64], alpha: &[usize]) -> Vec<f64> {
        let hat: Vec<Complex64> = spectrum
            .iter()
            .enumerate()
            .map(|(i, &c)| c * self.derivative_symbol(i, alpha))
            .collect();
        self.inverse(&hat)
    }

    /// Exact derivative `d^alpha f` of the trigonometric interpolant.
    pub fn derivative(&self, field: &[f64], alpha: &[usize]) -> Result<Vec<f64>> {
        self.check(field)?;
        if alpha.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: alpha.len(),
            });
        }
        let order: usize = alpha.iter().sum();
        if order > MAX_DERIVATIVE {
            return Err(param(format!(
                "derivative order {order} exceeds {MAX_DERIVATIVE}"
            )));
        }
        Ok(self.derivative_of_spectrum(&self.forward(field), alpha))
    }

    /// Gradient, one field per axis.
    pub fn gradient(&self, field: &[f64]) -> Vec<Vec<f64>> {
        let hat = self.forward(field);
        (0..self.dim)
            .map(|axis| {
                let mut alpha = vec![0; self.dim];
                alpha[axis] = 1;
                self.derivative_of_spectrum(&hat, &alpha)
            })
            .collect()
    }

    /// Divergence of a vector field with `dim` components.
    pub fn divergence(&self, u: &[Vec<f64>]) -> Vec<f64> {
        let mut hat = vec![Complex64::new(0.0, 0.0); self.len()];
        for (axis, comp) in u.iter().enumerate() {
            let c = self.forward(comp);
            for (i, h) in hat.iter_mut().enumerate() {
                *h += c[i] * Complex64::new(0.0, self.k[i][axis]);
            }
        }
        self.inverse(&hat)
    }

    /// Laplacian.
    pub fn laplacian(&self, field: &[f64]) -> Vec<f64> {
        let mut hat = self.forward(field);
        for (i, h) in hat.iter_mut().enumerate() {
            *h *= -self.k2(i);
        }
        self.inverse(&hat)
    }

    /// `|k|^2` at spectral index `flat`.
    pub fn k2(&self, flat: usize) -> f64 {
        self.k[flat][..self.dim].iter().map(|k| k * k).sum()
    }

    /// Zero the modes removed by the 2/3 rule, in place on a spectrum.
    pub fn dealias_spectrum(&self, spectrum: &mut [Complex64]) {
        for (h, &k) in spectrum.iter_mut().zip(&self.keep) {
            if !k {
                *h = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Projection of a field onto the dealiased modes.
    pub fn dealias(&self, field: &[f64]) -> Vec<f64> {
        let mut hat = self.forward(field);
        self.dealias_spectrum(&mut hat);
        self.inverse(&hat)
    }

    /// Sobolev multiplier `sum_{|alpha| <= s} prod_i k_i^(2 alpha_i)`.
    pub fn sobolev_weight(&self, flat: usize, s: usize) -> f64 {
        sobolev_symbol(&self.k[flat][..self.dim], s)
    }

    /// `|f|^2_{H^s}` from a forward spectrum.
    pub fn sobolev_norm_sq_of_spectrum(&self, spectrum: &[Complex64], s: usize) -> f64 {
        let scale = self.volume() / (self.len() as f64).powi(2);
        spectrum
            .iter()
            .enumerate()
            .map(|(i, c)| c.norm_sqr() * self.sobolev_weight(i, s))
            .sum::<f64>()
            * scale
    }

    /// `|f|^2_{H^s}`, `s <= 3`.
    pub fn sobolev_norm_sq(&self, field: &[f64], s: usize) -> f64 {
        self.sobolev_norm_sq_of_spectrum(&self.forward(field), s)
    }

    /// `|f|_{H^s}`.
    pub fn sobolev_norm(&self, field: &[f64], s: usize) -> f64 {
        self.sobolev_norm_sq(field, s).sqrt()
    }

    /// Grid quadrature `int f g dx`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.cell_volume() * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Grid quadrature `int f dx`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.cell_volume() * f.iter().sum::<f64>()
    }
}

/// `sum_{|alpha| <= s} prod_i k_i^(2 alpha_i)` for wavenumber `k`.
pub fn sobolev_symbol(k: &[f64], s: usize) -> f64 {
    // complete homogeneous symmetric polynomials h_j(k_1^2, ..., k_d^2)
    let mut h = vec![0.0; s + 1];
    h[0] = 1.0;
    for &ki in k {
        let x = ki * ki;
        for j in 1..=s {
            h[j] += x * h[j - 1];
        }
    }
    h.iter().sum()
}

/// Multi-indices of order exactly `order` in `dim` variables.
pub fn multi_indices_of_order(dim: usize, order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; dim];
    fn rec(dim: usize, pos: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == dim - 1 {
            cur[pos] = left;
            out.push(cur.clone());
            return;
        }
        for k in (0..=left).rev() {
            cur[pos] = k;
            rec(dim, pos + 1, left - k, cur, out);
        }
    }
    rec(dim, 0, order, &mut cur, &mut out);
    out
}
