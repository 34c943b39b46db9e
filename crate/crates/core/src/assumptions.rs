//! Numerical validator for the structural assumptions placed on the spring
//! potential.
//!
//! All checks are stated for the log-weight `V = U / (sigma r)` of the
//! Maxwellian, which equals `U` at unit temperature and damping:
//!
//! * `|q| <= C (1 + |grad V|)`
//! * `Laplacian V <= C + delta |grad V|^2` for some `delta < 1`
//! * `int |grad V|^2 M dq < inf`, `int |q|^4 M dq < inf`
//! * for `k = 1, 2, 3`:
//!   `|grad^k (q . grad V)| <= C (1 + |q| |grad V|)`,
//!   `int |grad^k (q . grad V sqrt(M))|^2 dq < inf`,
//!   `|grad^k (Laplacian V - |grad V|^2 / 2)| <= C (1 + |grad V|^2)`.
//!
//! Pointwise bounds are probed on a sample grid and then on a refined grid
//! reaching further out (all-space) or closer to the boundary (ball); a
//! supremum that grows by more than [`GROWTH_FACTOR`] under refinement is
//! reported as unbounded. Integrals are declared finite only when their
//! relative change between two refinement levels stays below the tolerance.

use std::fmt;

use serde::Serialize;

use crate::potential::{Potential, Support};
use crate::quadrature::{gauss_legendre, tanh_sinh};

/// Growth of a sampled supremum under refinement beyond which it is
/// declared unbounded.
pub const GROWTH_FACTOR: f64 = 1.5;

/// How the validator samples the support.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec {
    /// Uniform samples per dimension (boundary clusters are added for balls).
    pub points_per_dim: usize,
    /// All-space truncation radius; `None` picks the radius where `M < 1e-14`.
    pub radius: Option<f64>,
    /// Ball: closest approach to the boundary, as a fraction of the radius.
    pub boundary_offset: f64,
    /// Candidate `delta` values for the Laplacian bound.
    pub delta_grid: Vec<f64>,
    /// Nested finite-difference steps for derivative orders 1, 2, 3, in
    /// units of the support's length scale.
    pub fd_steps: [f64; 3],
    /// Relative change tolerated between quadrature refinements.
    pub quad_tol: f64,
}

impl SampleSpec {
    pub fn default_for(p: &Potential) -> Self {
        let points_per_dim = match p.dim_q() {
            1 => 401,
            2 => 81,
            _ => 25,
        };
        SampleSpec {
            points_per_dim,
            radius: None,
            boundary_offset: 1e-4,
            delta_grid: (0..20).map(|i| i as f64 * 0.05).collect(),
            fd_steps: [1e-4, 1e-3, 1e-2],
            quad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Measured constant: a supremum or an integral value.
    pub value: f64,
    /// Sample point realizing the supremum (empty for integrals).
    pub witness: Vec<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub potential: String,
    pub sample_grid: String,
    pub fd_steps: [f64; 3],
    /// Smallest admissible `delta` on the grid and its constant `C`.
    pub delta: Option<f64>,
    pub laplacian_constant: Option<f64>,
    pub grad_moment: f64,
    pub fourth_moment: f64,
    pub checks: Vec<Check>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// `key = value` lines for machine consumption.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("potential = {}\n", self.potential));
        out.push_str(&format!("sample_grid = {}\n", self.sample_grid));
        out.push_str(&format!(
            "fd_steps = {} {} {}\n",
            self.fd_steps[0], self.fd_steps[1], self.fd_steps[2]
        ));
        out.push_str(&format!("passed = {}\n", self.passed()));
        match (self.delta, self.laplacian_constant) {
            (Some(d), Some(c)) => out.push_str(&format!("delta = {d}\nlaplacian_constant = {c}\n")),
            _ => out.push_str("delta = none\nlaplacian_constant = none\n"),
        }
        out.push_str(&format!("grad_moment = {:e}\n", self.grad_moment));
        out.push_str(&format!("fourth_moment = {:e}\n", self.fourth_moment));
        for c in &self.checks {
            let witness: Vec<String> = c.witness.iter().map(|w| format!("{w:e}")).collect();
            out.push_str(&format!(
                "check.{}.passed = {}\ncheck.{}.value = {:e}\ncheck.{}.witness = {}\n",
                c.name,
                c.passed,
                c.name,
                c.value,
                c.name,
                witness.join(" ")
            ));
        }
        out
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "potential     {}", self.potential)?;
        writeln!(f, "samples       {}", self.sample_grid)?;
        writeln!(
            f,
            "fd steps      {:e} {:e} {:e}",
            self.fd_steps[0], self.fd_steps[1], self.fd_steps[2]
        )?;
        match (self.delta, self.laplacian_constant) {
            (Some(d), Some(c)) => writeln!(f, "best (C, d)   ({c:.6}, {d:.2})")?,
            _ => writeln!(f, "best (C, d)   none with delta < 1")?,
        }
        writeln!(f)?;
        writeln!(f, "{:<28} {:>6} {:>14}  witness / note", "check", "status", "value")?;
        for c in &self.checks {
            let witness = if c.witness.is_empty() {
                String::new()
            } else {
                let w: Vec<String> = c.witness.iter().map(|x| format!("{x:.4}")).collect();
                format!("q = ({}) ", w.join(", "))
            };
            writeln!(
                f,
                "{:<28} {:>6} {:>14.6e}  {}{}",
                c.name,
                if c.passed { "pass" } else { "FAIL" },
                c.value,
                witness,
                c.note
            )?;
        }
        writeln!(f)?;
        write!(f, "overall       {}", if self.passed() { "pass" } else { "FAIL" })
    }
}

/// Length scale used to size finite-difference steps.
fn length_scale(p: &Potential) -> f64 {
    match p.support() {
        Support::AllSpace => p.scale().sqrt(),
        Support::Ball { radius } => radius,
    }
}

/// One-dimensional sample abscissae on the coarse or the refined domain.
fn samples_1d(p: &Potential, spec: &SampleSpec, refined: bool) -> Vec<f64> {
    let n = spec.points_per_dim.max(3);
    match p.support() {
        Support::AllSpace => {
            let r0 = spec
                .radius
                .unwrap_or_else(|| p.truncation_radius(0).min(50.0 * p.scale().sqrt()));
            let r = if refined { 4.0 * r0 } else { r0 };
            (0..n)
                .map(|i| -r + 2.0 * r * i as f64 / (n - 1) as f64)
                .collect()
        }
        Support::Ball { radius } => {
            let h = if refined {
                spec.boundary_offset / 10.0
            } else {
                spec.boundary_offset
            };
            let edge = radius * (1.0 - h);
            let mut xs: Vec<f64> = (0..n)
                .map(|i| -edge + 2.0 * edge * i as f64 / (n - 1) as f64)
                .collect();
            // geometric cluster towards the boundary
            let mut d = 0.1;
            while d > h {
                xs.push(radius * (1.0 - d));
                xs.push(-radius * (1.0 - d));
                d *= 0.5;
            }
            xs.sort_by(f64::total_cmp);
            xs
        }
    }
}

/// Supremum of `f` over the tensor grid built from `xs`.
fn sup_over(xs: &[f64], dim: usize, f: &dyn Fn(&[f64]) -> f64) -> (f64, Vec<f64>) {
    let n = xs.len();
    let total = n.pow(dim as u32);
    let mut q = vec![0.0; dim];
    let mut best = f64::NEG_INFINITY;
    let mut arg = vec![0.0; dim];
    for flat in 0..total {
        let mut rem = flat;
        for d in (0..dim).rev() {
            q[d] = xs[rem % n];
            rem /= n;
        }
        let v = f(&q);
        if v.is_nan() {
            continue;
        }
        if v > best {
            best = v;
            arg.copy_from_slice(&q);
        }
    }
    (best, arg)
}

fn pointwise_check(
    name: &str,
    p: &Potential,
    spec: &SampleSpec,
    f: &dyn Fn(&[f64]) -> f64,
) -> Check {
    let dim = p.dim_q();
    let (coarse, _) = sup_over(&samples_1d(p, spec, false), dim, f);
    let (fine, arg) = sup_over(&samples_1d(p, spec, true), dim, f);
    let bounded = fine.is_finite() && fine <= GROWTH_FACTOR * coarse.abs().max(1.0);
    Check {
        name: name.to_string(),
        passed: bounded,
        value: fine,
        witness: arg,
        note: if bounded {
            String::new()
        } else {
            format!("sup grows under refinement ({coarse:.3e} -> {fine:.3e})")
        },
    }
}

/// Nested central difference of a one-dimensional function.
fn nested_fd_1d(f: &dyn Fn(f64) -> f64, x: f64, order: usize, h: f64) -> f64 {
    if order == 0 {
        return f(x);
    }
    (nested_fd_1d(f, x + h, order - 1, h) - nested_fd_1d(f, x - h, order - 1, h)) / (2.0 * h)
}

/// Finite-difference step at `x`: the declared step, shrunk near a ball
/// boundary so the stencil of half-width `order * h` stays inside.
fn effective_step(p: &Potential, x: f64, order: usize, h: f64) -> f64 {
    match p.support() {
        Support::AllSpace => h,
        Support::Ball { radius } => {
            let dist = radius - x.abs();
            h.min(dist / (order as f64 + 1.0))
        }
    }
}

/// Two-level quadrature of a one-dimensional integrand over the support.
/// Returns `(value, converged)`.
fn integral_1d(p: &Potential, spec: &SampleSpec, f: &dyn Fn(f64, f64) -> f64) -> (f64, bool) {
    let values: Vec<f64> = match p.support() {
        Support::AllSpace => {
            let r = spec.radius.unwrap_or_else(|| p.truncation_radius(8));
            [200usize, 400]
                .iter()
                .map(|&n| gauss_legendre(n).mapped(-r, r).integrate(|x| f(x, 1.0)))
                .collect()
        }
        Support::Ball { radius } => [5u32, 6, 7]
            .iter()
            .map(|&lvl| {
                tanh_sinh(lvl)
                    .into_iter()
                    .map(|(x, w, c)| w * radius * f(radius * x, c * (2.0 - c)))
                    .sum()
            })
            .collect(),
    };
    let a = values[values.len() - 2];
    let b = values[values.len() - 1];
    let converged = a.is_finite()
        && b.is_finite()
        && (b - a).abs() <= spec.quad_tol * b.abs().max(1e-300) + 1e-14;
    (b, converged)
}

/// Relative tolerance for ball integrals truncated at a boundary offset:
/// a convergent integrand changes by O(offset) when the offset shrinks
/// tenfold, a divergent one by at least a logarithmic factor.
pub const TRUNCATION_TOL: f64 = 1e-2;

/// Integral of a finite-difference integrand. On a ball the domain is
/// truncated at `10 * boundary_offset` and then at `boundary_offset`, so
/// stencils never collapse onto the boundary.
fn integral_fd_1d(p: &Potential, spec: &SampleSpec, f: &dyn Fn(f64) -> f64) -> (f64, bool) {
    match p.support() {
        Support::AllSpace => integral_1d(p, spec, &|x, _| f(x)),
        Support::Ball { radius } => {
            let rule = tanh_sinh(7);
            let vals: Vec<f64> = [10.0 * spec.boundary_offset, spec.boundary_offset]
                .iter()
                .map(|&o| {
                    let e = radius * (1.0 - o);
                    rule.iter().map(|&(x, w, _)| w * e * f(e * x)).sum()
                })
                .collect();
            let conv = vals[1].is_finite()
                && (vals[1] - vals[0]).abs() <= TRUNCATION_TOL * vals[1].abs() + 1e-8;
            (vals[1], conv)
        }
    }
}

/// Validate the potential assumptions on the given sample specification.
pub fn validate_assumptions(p: &Potential, spec: &SampleSpec) -> AssumptionReport {
    let dim = p.dim_q();
    let z1 = p.normalization().powf(1.0 / dim as f64);
    let mut checks = Vec::new();

    let grad_norm = |q: &[f64]| q.iter().map(|&x| p.dv1(x).powi(2)).sum::<f64>().sqrt();
    let inside = |q: &[f64]| q.iter().all(|&x| p.contains1(x));

    checks.push(pointwise_check("q-growth", p, spec, &|q| {
        if !inside(q) {
            return f64::NAN;
        }
        let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        qn / (1.0 + grad_norm(q))
    }));

    // Laplacian bound: smallest delta on the grid with a bounded constant.
    let mut delta = None;
    let mut lap_const = None;
    let mut lap_check = None;
    for &d in &spec.delta_grid {
        if d >= 1.0 {
            continue;
        }
        let c = pointwise_check("laplacian-bound", p, spec, &|q| {
            if !inside(q) {
                return f64::NAN;
            }
            let lap: f64 = q.iter().map(|&x| p.d2v1_s(x, p.shape(x))).sum();
            let g2: f64 = q.iter().map(|&x| p.dv1(x).powi(2)).sum();
            lap - d * g2
        });
        if c.passed {
            delta = Some(d);
            lap_const = Some(c.value.max(0.0));
            lap_check = Some(Check {
                note: format!("delta = {d:.2}"),
                value: c.value.max(0.0),
                ..c
            });
            break;
        }
        lap_check = Some(Check {
            note: format!("unbounded for every delta < 1 on the grid ({})", c.note),
            ..c
        });
    }
    checks.push(lap_check.expect("delta grid must contain a value below 1"));

    // Moment bounds; separable, so reduce to one-dimensional integrals of
    // the normalized marginal.
    let (gv1, gconv) = integral_1d(p, spec, &|x, s| {
        let t = p.dv1_s(x, s) * (p.weight1_s(x, s) / z1).sqrt();
        t * t
    });
    let grad_moment = dim as f64 * gv1;
    checks.push(Check {
        name: "grad-moment".into(),
        passed: gconv,
        value: grad_moment,
        witness: vec![],
        note: if gconv {
            String::new()
        } else {
            "int |grad U|^2 M dq does not converge under refinement (diverges)".into()
        },
    });
    let (m2, c2) = integral_1d(p, spec, &|x, s| x * x * p.weight1_s(x, s) / z1);
    let (m4, c4) = integral_1d(p, spec, &|x, s| x.powi(4) * p.weight1_s(x, s) / z1);
    let d = dim as f64;
    let fourth_moment = d * m4 + d * (d - 1.0) * m2 * m2;
    checks.push(Check {
        name: "fourth-moment".into(),
        passed: c2 && c4,
        value: fourth_moment,
        witness: vec![],
        note: if c2 && c4 {
            String::new()
        } else {
            "int |q|^4 M dq does not converge".into()
        },
    });

    let ell = length_scale(p);
    for order in 1..=3usize {
        let h = spec.fd_steps[order - 1] * ell;
        // |grad^k (q . grad V)|: separable sum, diagonal derivative tensor.
        let stretch1 = |x: f64| x * p.dv1(x);
        checks.push(pointwise_check(&format!("stretch-growth-k{order}"), p, spec, &|q| {
            if !inside(q) {
                return f64::NAN;
            }
            let mut num = 0.0;
            let mut qg = 0.0;
            for &x in q {
                num += nested_fd_1d(&stretch1, x, order, effective_step(p, x, order, h)).powi(2);
                qg += p.dv1(x).powi(2);
            }
            let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            num.sqrt() / (1.0 + qn * qg.sqrt())
        }));

        let (val, conv) = weighted_stretch_integral(p, spec, order, h, z1);
        checks.push(Check {
            name: format!("weighted-stretch-k{order}"),
            passed: conv,
            value: val,
            witness: vec![],
            note: if conv {
                String::new()
            } else {
                "integral does not converge under refinement".into()
            },
        });

        let diss1 = |x: f64| {
            let s = p.shape(x);
            p.d2v1_s(x, s) - 0.5 * p.dv1_s(x, s).powi(2)
        };
        checks.push(pointwise_check(
            &format!("dissipation-growth-k{order}"),
            p,
            spec,
            &|q| {
                if !inside(q) {
                    return f64::NAN;
                }
                let mut num = 0.0;
                let mut g2 = 0.0;
                for &x in q {
                    num += nested_fd_1d(&diss1, x, order, effective_step(p, x, order, h)).powi(2);
                    g2 += p.dv1(x).powi(2);
                }
                num.sqrt() / (1.0 + g2)
            },
        ));
    }

    let sample_grid = match p.support() {
        Support::AllSpace => {
            let r0 = spec
                .radius
                .unwrap_or_else(|| p.truncation_radius(0).min(50.0 * p.scale().sqrt()));
            format!(
                "{}^{} uniform on [-{r0:.3}, {r0:.3}] refined to [-{:.3}, {:.3}]",
                spec.points_per_dim,
                dim,
                4.0 * r0,
                4.0 * r0
            )
        }
        Support::Ball { radius } => format!(
            "{} uniform + boundary cluster on (-{radius}, {radius}), offset {:e} refined to {:e}",
            spec.points_per_dim,
            spec.boundary_offset,
            spec.boundary_offset / 10.0
        ),
    };

    AssumptionReport {
        potential: p.to_string(),
        sample_grid,
        fd_steps: spec.fd_steps,
        delta,
        laplacian_constant: lap_const,
        grad_moment,
        fourth_moment,
        checks,
    }
}

/// `int |grad^k (q . grad V sqrt(M))|^2 dq` by nested finite differences.
///
/// The integrand is `sum_i a(q_i) m(q_i) prod_{j != i} m(q_j)` with
/// `a = x V'(x)` and `m = sqrt(M_1)`, so every mixed derivative is a sum of
/// products of one-dimensional derivatives and the squared integral
/// factorizes into one-dimensional integrals.
fn weighted_stretch_integral(p: &Potential, spec: &SampleSpec, order: usize, h: f64, z1: f64) -> (f64, bool) {
    let dim = p.dim_q();
    let am = |x: f64| {
        let s = p.shape(x);
        if s <= 0.0 {
            return 0.0;
        }
        x * p.dv1_s(x, s) * (p.weight1_s(x, s) / z1).sqrt()
    };
    let m = |x: f64| {
        let s = p.shape(x);
        if s <= 0.0 {
            return 0.0;
        }
        (p.weight1_s(x, s) / z1).sqrt()
    };
    // ff[o] = int (am^(o))^2, fg[o] = int am^(o) m^(o), gg[o] = int (m^(o))^2
    let tables = |o: usize| -> ([f64; 3], bool) {
        let mut out = [0.0; 3];
        let mut ok = true;
        for (slot, which) in [(0usize, 0u8), (1, 1), (2, 2)] {
            let (v, c) = integral_fd_1d(p, spec, &|x| {
                let he = effective_step(p, x, o, h);
                let fa = nested_fd_1d(&am, x, o, he);
                let fm = nested_fd_1d(&m, x, o, he);
                match which {
                    0 => fa * fa,
                    1 => fa * fm,
                    _ => fm * fm,
                }
            });
            out[slot] = v;
            ok &= c;
        }
        (out, ok)
    };
    let mut tab = Vec::with_capacity(order + 1);
    let mut converged = true;
    for o in 0..=order {
        let (t, c) = tables(o);
        tab.push(t);
        converged &= c;
    }
    // sum over multi-indices alpha with |alpha| = order, weighted by the
    // number of ordered index tuples realizing alpha
    let mut total = 0.0;
    let mut alpha = vec![0usize; dim];
    loop {
        if alpha.iter().sum::<usize>() == order {
            let mut mult = factorial(order) as f64;
            for &a in &alpha {
                mult /= factorial(a) as f64;
            }
            let mut s = 0.0;
            for i in 0..dim {
                for k in 0..dim {
                    let mut term = 1.0;
                    for j in 0..dim {
                        let t = &tab[alpha[j]];
                        term *= if i == k && j == i {
                            t[0]
                        } else if j == i || j == k {
                            t[1]
                        } else {
                            t[2]
                        };
                    }
                    s += term;
                }
            }
            total += mult * s;
        }
        let mut pos = 0;
        while pos < dim {
            alpha[pos] += 1;
            if alpha[pos] <= order {
                break;
            }
            alpha[pos] = 0;
            pos += 1;
        }
        if pos == dim {
            break;
        }
    }
    (total, converged && total.is_finite())
}

fn factorial(n: usize) -> usize {
    (1..=n).product::<usize>().max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hookean_passes_with_constant_laplacian() {
        let p = Potential::hookean(1.0, 1.0, 3).unwrap();
        let rep = validate_assumptions(&p, &SampleSpec::default_for(&p));
        assert!(rep.passed(), "{rep}");
        assert_eq!(rep.delta, Some(0.0));
        assert_relative_eq!(rep.laplacian_constant.unwrap(), 3.0, epsilon = 1e-12);
        assert_relative_eq!(rep.fourth_moment, 15.0, epsilon = 1e-10);
        assert_relative_eq!(rep.grad_moment, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn fene_below_threshold_fails_moment_bound() {
        let p = Potential::fene_unchecked(0.5, 1.0).unwrap();
        let rep = validate_assumptions(&p, &SampleSpec::default_for(&p));
        assert!(!rep.passed());
        assert!(!rep.check("grad-moment").unwrap().passed, "{rep}");
    }

    #[test]
    fn fene_k2_moment_and_derivative_integrals() {
        let p = Potential::fene(2.0, 1.0).unwrap();
        let rep = validate_assumptions(&p, &SampleSpec::default_for(&p));
        // int (4x/(1-x^2))^2 (1-x^2)^2 / Z dx = 16 (2/3) (15/16) = 10
        assert_relative_eq!(rep.grad_moment, 10.0, epsilon = 1e-9);
        for k in 1..=3 {
            let c = rep.check(&format!("weighted-stretch-k{k}")).unwrap();
            assert!(c.passed, "{rep}");
        }
        // Laplacian V - d |V'|^2 = (4 + 4x^2 - 16 d x^2) / s^2 is bounded
        // only for d > 1/2
        assert_eq!(rep.delta, Some(0.55));
        // q V' = 4x^2 / s has derivatives growing faster than 1 + |q| |V'|
        assert!(!rep.check("stretch-growth-k1").unwrap().passed);
        assert!(rep.check("dissipation-growth-k1").unwrap().passed);
    }

    #[test]
    fn report_renders_key_values() {
        let p = Potential::hookean(1.0, 1.0, 1).unwrap();
        let rep = validate_assumptions(&p, &SampleSpec::default_for(&p));
        let kv = rep.to_key_values();
        assert!(kv.contains("passed = true"));
        assert!(kv.contains("check.grad-moment.value"));
        assert!(rep.to_string().contains("overall"));
    }
}
