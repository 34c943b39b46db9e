//! Elastic spring potentials and their Maxwellians.
//!
//! Both supported springs are separable, `U(q) = sum_i u(q_i)`, so the
//! Maxwellian factorizes and every q-space object is built from
//! one-dimensional pieces. The equilibrium density is
//! `M(q) = exp(-U(q) / (sigma r)) / Z`: the stationary measure of the drift
//! `-(1/r) grad U` with diffusion `sigma`. With `sigma = r = 1` this is the
//! usual `exp(-U) / Z`.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::quadrature::{gauss_legendre, tanh_sinh, Rule};

/// Where the configuration vector `q` lives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Support {
    AllSpace,
    Ball { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpringLaw {
    /// `U(q) = |q|^2 / 2`
    Hookean,
    /// `U(q) = -k ln(1 - |q|^2 / b0^2)`
    Fene { k: f64, b0: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    law: SpringLaw,
    dim_q: usize,
    /// Thermal scale `sigma * r`; the Maxwellian is `exp(-U / scale)`.
    scale: f64,
    /// ln of the one-dimensional normalization `int exp(-u(x)/scale) dx`.
    log_z1: f64,
}

/// Effective exponent of the FENE Maxwellian, `(1 - x^2/b0^2)^kappa`.
fn fene_kappa(k: f64, scale: f64) -> f64 {
    k / scale
}

impl Potential {
    /// Hookean spring `U = |q|^2 / 2` in `dim_q` dimensions.
    pub fn hookean(sigma: f64, r: f64, dim_q: usize) -> Result<Self> {
        if !(sigma > 0.0) || !(r > 0.0) {
            return Err(param(format!(
                "Hookean potential needs sigma > 0 and r > 0 (got sigma = {sigma}, r = {r})"
            )));
        }
        if !(1..=3).contains(&dim_q) {
            return Err(param(format!("dim_q must be 1, 2 or 3 (got {dim_q})")));
        }
        let scale = sigma * r;
        // int exp(-x^2 / (2 s)) dx = sqrt(2 pi s)
        let mut p = Potential {
            law: SpringLaw::Hookean,
            dim_q,
            scale,
            log_z1: 0.0,
        };
        p.log_z1 = p.normalization_1d().ln();
        Ok(p)
    }

    /// FENE spring in the reduced one-dimensional configuration mode.
    ///
    /// `k > 1` is required: for `k <= 1` the moment `int |U'|^2 M` diverges.
    pub fn fene(k: f64, b0: f64) -> Result<Self> {
        if !(k > 1.0) {
            return Err(param(format!(
                "FENE needs k > 1 (got k = {k}): for k <= 1 the moment int |grad U|^2 M dq \
                 is infinite and the potential violates the moment bound"
            )));
        }
        Self::fene_unchecked(k, b0)
    }

    /// FENE without the `k > 1` requirement, for diagnosing inadmissible
    /// potentials with the assumption validator. Not usable by the solver.
    pub fn fene_unchecked(k: f64, b0: f64) -> Result<Self> {
        if !(k > 0.0) || !(b0 > 0.0) {
            return Err(param(format!("FENE needs k > 0 and b0 > 0 (got k = {k}, b0 = {b0})")));
        }
        let mut p = Potential {
            law: SpringLaw::Fene { k, b0 },
            dim_q: 1,
            scale: 1.0,
            log_z1: 0.0,
        };
        p.log_z1 = p.normalization_1d().ln();
        Ok(p)
    }

    /// Same spring with the Maxwellian taken at thermal scale `sigma * r`.
    pub fn with_thermal_scale(mut self, sigma: f64, r: f64) -> Result<Self> {
        if !(sigma > 0.0) || !(r > 0.0) {
            return Err(param("sigma and r must be positive"));
        }
        self.scale = sigma * r;
        if let SpringLaw::Fene { k, .. } = self.law {
            if !(fene_kappa(k, self.scale) > 1.0) {
                return Err(param(format!(
                    "FENE effective exponent k / (sigma r) = {} must exceed 1",
                    fene_kappa(k, self.scale)
                )));
            }
        }
        self.log_z1 = self.normalization_1d().ln();
        Ok(self)
    }

    pub fn law(&self) -> SpringLaw {
        self.law
    }

    pub fn dim_q(&self) -> usize {
        self.dim_q
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_separable(&self) -> bool {
        true
    }

    pub fn support(&self) -> Support {
        match self.law {
            SpringLaw::Hookean => Support::AllSpace,
            SpringLaw::Fene { b0, .. } => Support::Ball { radius: b0 },
        }
    }

    pub fn name(&self) -> &'static str {
        match self.law {
            SpringLaw::Hookean => "hookean",
            SpringLaw::Fene { .. } => "fene",
        }
    }

    /// `1 - x^2/b0^2` for the ball, 1 elsewhere.
    pub(crate) fn shape(&self, x: f64) -> f64 {
        match self.law {
            SpringLaw::Hookean => 1.0,
            SpringLaw::Fene { b0, .. } => {
                let t = x / b0;
                (1.0 - t) * (1.0 + t)
            }
        }
    }

    // One-dimensional component u(x) and its derivatives, with the shape
    // factor s = 1 - x^2/b0^2 supplied so callers near the boundary can pass
    // an accurately computed value.

    pub(crate) fn u1_s(&self, x: f64, s: f64) -> f64 {
        match self.law {
            SpringLaw::Hookean => 0.5 * x * x,
            SpringLaw::Fene { k, .. } => -k * s.ln(),
        }
    }

    pub(crate) fn du1_s(&self, x: f64, s: f64) -> f64 {
        match self.law {
            SpringLaw::Hookean => x,
            SpringLaw::Fene { k, b0 } => 2.0 * k * x / (b0 * b0 * s),
        }
    }

    pub(crate) fn d2u1_s(&self, x: f64, s: f64) -> f64 {
        match self.law {
            SpringLaw::Hookean => 1.0,
            SpringLaw::Fene { k, b0 } => {
                let b2 = b0 * b0;
                2.0 * k * (b2 + x * x) / (b2 * b2 * s * s)
            }
        }
    }

    pub fn u1(&self, x: f64) -> f64 {
        self.u1_s(x, self.shape(x))
    }

    pub fn du1(&self, x: f64) -> f64 {
        self.du1_s(x, self.shape(x))
    }

    pub fn d2u1(&self, x: f64) -> f64 {
        self.d2u1_s(x, self.shape(x))
    }

    /// Whether `x` lies in the (open) one-dimensional support.
    pub fn contains1(&self, x: f64) -> bool {
        match self.law {
            SpringLaw::Hookean => x.is_finite(),
            SpringLaw::Fene { b0, .. } => x.abs() < b0,
        }
    }

    /// `U(q)`.
    pub fn energy(&self, q: &[f64]) -> f64 {
        q.iter().map(|&x| self.u1(x)).sum()
    }

    /// `grad U(q)` written into `out`.
    pub fn force(&self, q: &[f64], out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(q) {
            *o = self.du1(x);
        }
    }

    /// `Laplacian U(q)`.
    pub fn laplacian(&self, q: &[f64]) -> f64 {
        q.iter().map(|&x| self.d2u1(x)).sum()
    }

    /// Derivative of the log-weight `V = U / scale`, one component.
    pub(crate) fn dv1_s(&self, x: f64, s: f64) -> f64 {
        self.du1_s(x, s) / self.scale
    }

    pub fn dv1(&self, x: f64) -> f64 {
        self.dv1_s(x, self.shape(x))
    }

    pub(crate) fn d2v1_s(&self, x: f64, s: f64) -> f64 {
        self.d2u1_s(x, s) / self.scale
    }

    /// `exp(-u(x)/scale)` without normalization.
    pub(crate) fn weight1_s(&self, x: f64, s: f64) -> f64 {
        match self.law {
            SpringLaw::Hookean => (-0.5 * x * x / self.scale).exp(),
            SpringLaw::Fene { k, .. } => {
                if s <= 0.0 {
                    0.0
                } else {
                    s.powf(fene_kappa(k, self.scale))
                }
            }
        }
    }

    /// Normalization `Z = int exp(-U/scale) dq` over the full support.
    pub fn normalization(&self) -> f64 {
        (self.log_z1 * self.dim_q as f64).exp()
    }

    /// One-dimensional normalized Maxwellian marginal.
    pub fn maxwellian1(&self, x: f64) -> f64 {
        if !self.contains1(x) {
            return 0.0;
        }
        (self.weight1_s(x, self.shape(x)).ln() - self.log_z1).exp()
    }

    /// Normalized Maxwellian `M(q)`.
    pub fn maxwellian(&self, q: &[f64]) -> f64 {
        q.iter().map(|&x| self.maxwellian1(x)).product()
    }

    /// Half-width of the all-space truncation interval: beyond it
    /// `(1 + |x|)^(2 degree + 8) M(x)` is below `1e-18`.
    pub fn truncation_radius(&self, degree: usize) -> f64 {
        match self.law {
            SpringLaw::Fene { b0, .. } => b0,
            SpringLaw::Hookean => {
                let p = 2.0 * degree as f64 + 8.0;
                let mut r: f64 = 1.0;
                loop {
                    let logv = p * (1.0 + r).ln() - self.u1(r) / self.scale - self.log_z1;
                    if logv < (1e-18f64).ln() && self.maxwellian1(r) < 1e-14 {
                        return r;
                    }
                    r += 0.25;
                }
            }
        }
    }

    fn normalization_1d(&self) -> f64 {
        match self.law {
            SpringLaw::Hookean => {
                // radius where exp(-x^2/2s) < 1e-20, then a fine Gauss rule
                let r = (2.0 * self.scale * 46.0).sqrt();
                gauss_legendre(400)
                    .mapped(-r, r)
                    .integrate(|x| self.weight1_s(x, 1.0))
            }
            SpringLaw::Fene { b0, .. } => tanh_sinh(8)
                .into_iter()
                .map(|(x, w, c)| w * b0 * self.weight1_s(b0 * x, c * (2.0 - c)))
                .sum(),
        }
    }

    /// Fine discretization of the normalized one-dimensional Maxwellian,
    /// accurate for polynomial moments up to `2 * degree + 6`. The returned
    /// rule's weights include `M` and sum to one; `shapes` carries the
    /// accurately computed `1 - x^2/b0^2` at each node.
    pub fn base_rule(&self, degree: usize) -> (Rule, Vec<f64>) {
        let (nodes, raw, shapes): (Vec<f64>, Vec<f64>, Vec<f64>) = match self.law {
            SpringLaw::Hookean => {
                let r = self.truncation_radius(degree);
                let rule = gauss_legendre(400 + 8 * degree).mapped(-r, r);
                let raw = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&x, &w)| w * self.weight1_s(x, 1.0))
                    .collect();
                let n = rule.len();
                (rule.nodes, raw, vec![1.0; n])
            }
            SpringLaw::Fene { b0, .. } => {
                let mut nodes = Vec::new();
                let mut raw = Vec::new();
                let mut shapes = Vec::new();
                for (x, w, c) in tanh_sinh(7) {
                    let s = c * (2.0 - c);
                    let wt = w * b0 * self.weight1_s(b0 * x, s);
                    if wt > 0.0 {
                        nodes.push(b0 * x);
                        raw.push(wt);
                        shapes.push(s);
                    }
                }
                (nodes, raw, shapes)
            }
        };
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        (Rule { nodes, weights }, shapes)
    }
}

impl std::fmt::Display for Potential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.law {
            SpringLaw::Hookean => write!(
                f,
                "hookean (dim_q = {}, sigma*r = {})",
                self.dim_q, self.scale
            ),
            SpringLaw::Fene { k, b0 } => write!(
                f,
                "fene (k = {k}, b0 = {b0}, dim_q = 1, sigma*r = {})",
                self.scale
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hookean_has_zero_force_at_origin() {
        let p = Potential::hookean(1.0, 1.0, 3).unwrap();
        let mut f = [1.0; 3];
        p.force(&[0.0; 3], &mut f);
        assert_eq!(p.energy(&[0.0; 3]), 0.0);
        assert_eq!(f, [0.0; 3]);
    }

    #[test]
    fn hookean_maxwellian_peak_is_gaussian() {
        // M(0) = (2 pi)^{-3/2}, with Z computed by quadrature.
        let p = Potential::hookean(1.0, 1.0, 3).unwrap();
        assert_relative_eq!(p.maxwellian(&[0.0; 3]), 0.063_493_635_934_240_97, epsilon = 1e-12);
    }

    #[test]
    fn hookean_second_moment_is_one() {
        let p = Potential::hookean(1.0, 1.0, 1).unwrap();
        let (rule, _) = p.base_rule(20);
        assert_relative_eq!(rule.integrate(|x| x * x), 1.0, epsilon = 1e-12);
        assert_relative_eq!(rule.integrate(|_| 1.0), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Potential::hookean(0.0, 1.0, 3).is_err());
        assert!(Potential::hookean(1.0, -1.0, 3).is_err());
        assert!(Potential::hookean(1.0, 1.0, 4).is_err());
        let err = Potential::fene(1.0, 1.0).unwrap_err().to_string();
        assert!(err.contains("moment"), "{err}");
        assert!(Potential::fene_unchecked(0.5, 1.0).is_ok());
    }

    #[test]
    fn fene_basics() {
        let p = Potential::fene(2.0, 1.0).unwrap();
        assert_eq!(p.u1(0.0), 0.0);
        // force blows up monotonically towards the boundary
        let xs = [0.9, 0.99, 0.999, 0.9999];
        let f: Vec<f64> = xs.iter().map(|&x| p.du1(x)).collect();
        assert!(f.windows(2).all(|w| w[1] > w[0]));
        assert!(f[3] > 1e4);
        // Z = int (1 - x^2)^2 = 16/15
        assert_relative_eq!(p.normalization(), 16.0 / 15.0, epsilon = 1e-13);
        assert_eq!(p.support(), Support::Ball { radius: 1.0 });
    }

    #[test]
    fn gradients_match_finite_differences() {
        for p in [
            Potential::hookean(1.0, 1.0, 1).unwrap(),
            Potential::fene(2.5, 1.3).unwrap(),
        ] {
            for &x in &[-0.8, -0.3, 0.1, 0.5, 0.9] {
                let h = 1e-5;
                let fd = (p.u1(x + h) - p.u1(x - h)) / (2.0 * h);
                assert_relative_eq!(p.du1(x), fd, max_relative = 1e-6);
                let fd2 = (p.du1(x + h) - p.du1(x - h)) / (2.0 * h);
                assert_relative_eq!(p.d2u1(x), fd2, max_relative = 1e-5);
            }
        }
    }
}
