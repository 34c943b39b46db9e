//! One-dimensional quadrature machinery.
//!
//! The weighted basis is generated in two stages: a fine "base" rule
//! discretizes the Maxwellian measure, the discretized Stieltjes procedure
//! turns it into three-term recurrence coefficients, and Golub-Welsch turns
//! those into the Gauss rule the solver actually uses.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// A set of nodes and weights on the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Affine map of a rule on `[-1, 1]` onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> Rule {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        Rule {
            nodes: self.nodes.iter().map(|x| mid + half * x).collect(),
            weights: self.weights.iter().map(|w| w * half).collect(),
        }
    }
}

/// Gauss-Legendre rule on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n > 0, "Gauss-Legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        // Tricomi initial guess.
        let theta = std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5);
        let mut x = (1.0 - (nf - 1.0) / (8.0 * nf * nf * nf)) * theta.cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p, d)
}

/// Three-term recurrence coefficients of orthonormal polynomials:
/// `sqrt(beta[n+1]) p_{n+1} = (x - alpha[n]) p_n - sqrt(beta[n]) p_{n-1}`,
/// with `beta[0]` the total mass of the measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Recurrence {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Recurrence {
    /// Number of recurrence steps available (polynomials up to this degree).
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Values `p_0(x), ..., p_degree(x)` of the orthonormal polynomials.
    pub fn eval(&self, degree: usize, x: f64, out: &mut [f64]) {
        out[0] = 1.0 / self.beta[0].sqrt();
        if degree == 0 {
            return;
        }
        out[1] = (x - self.alpha[0]) * out[0] / self.beta[1].sqrt();
        for n in 1..degree {
            out[n + 1] = ((x - self.alpha[n]) * out[n] - self.beta[n].sqrt() * out[n - 1])
                / self.beta[n + 1].sqrt();
        }
    }

    /// Values and first derivatives of `p_0..p_degree` at `x`.
    pub fn eval_with_derivative(&self, degree: usize, x: f64, val: &mut [f64], der: &mut [f64]) {
        val[0] = 1.0 / self.beta[0].sqrt();
        der[0] = 0.0;
        if degree == 0 {
            return;
        }
        let s1 = self.beta[1].sqrt();
        val[1] = (x - self.alpha[0]) * val[0] / s1;
        der[1] = val[0] / s1;
        for n in 1..degree {
            let s = self.beta[n + 1].sqrt();
            let sb = self.beta[n].sqrt();
            val[n + 1] = ((x - self.alpha[n]) * val[n] - sb * val[n - 1]) / s;
            der[n + 1] = (val[n] + (x - self.alpha[n]) * der[n] - sb * der[n - 1]) / s;
        }
    }
}

/// Discretized Stieltjes procedure: recurrence coefficients for the
/// discrete measure `sum_j weights[j] delta(x - nodes[j])`, up to `count`
/// terms (`alpha[0..count]`, `beta[0..=count]`).
pub fn stieltjes(rule: &Rule, count: usize) -> Result<Recurrence> {
    let n = rule.len();
    if count + 1 > n {
        return Err(Error::Construction(format!(
            "discrete measure with {n} nodes cannot support {count} recurrence steps"
        )));
    }
    let mass: f64 = rule.weights.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::Construction("measure has no mass".into()));
    }
    let mut alpha = Vec::with_capacity(count);
    let mut beta = Vec::with_capacity(count + 1);
    beta.push(mass);
    let mut prev = vec![0.0; n];
    let mut cur = vec![1.0 / mass.sqrt(); n];
    for k in 0..count {
        let a: f64 = (0..n)
            .map(|j| rule.weights[j] * rule.nodes[j] * cur[j] * cur[j])
            .sum();
        alpha.push(a);
        let sb = if k == 0 { 0.0 } else { beta[k].sqrt() };
        let next: Vec<f64> = (0..n)
            .map(|j| (rule.nodes[j] - a) * cur[j] - sb * prev[j])
            .collect();
        let b: f64 = (0..n).map(|j| rule.weights[j] * next[j] * next[j]).sum();
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::Construction(format!(
                "Stieltjes breakdown at degree {}: beta = {b:e}",
                k + 1
            )));
        }
        let sbn = b.sqrt();
        beta.push(b);
        prev = cur;
        cur = next.into_iter().map(|v| v / sbn).collect();
    }
    Ok(Recurrence { alpha, beta })
}

/// Gauss rule with `n` nodes from recurrence coefficients: nodes are the
/// eigenvalues of the Jacobi matrix, weights `beta[0] * v_0^2`.
pub fn golub_welsch(rec: &Recurrence, n: usize) -> Result<Rule> {
    if n == 0 || rec.alpha.len() < n || rec.beta.len() < n {
        return Err(Error::Construction(format!(
            "Golub-Welsch needs {n} recurrence terms, have {}",
            rec.alpha.len()
        )));
    }
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jac[(i, i)] = rec.alpha[i];
        if i + 1 < n {
            let b = rec.beta[i + 1].sqrt();
            jac[(i, i + 1)] = b;
            jac[(i + 1, i)] = b;
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], rec.beta[0] * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    })
}

/// Tanh-sinh rule on `[-1, 1]` at refinement `level` (step `2^-level`).
/// Each node carries its distance to the nearer endpoint, computed without
/// cancellation, so integrands singular at `+-1` can be evaluated safely.
pub fn tanh_sinh(level: u32) -> Vec<(f64, f64, f64)> {
    use std::f64::consts::FRAC_PI_2;
    let h = 0.5f64.powi(level as i32);
    let mut out = Vec::new();
    let mut k: i64 = 0;
    loop {
        let t = k as f64 * h;
        let s = FRAC_PI_2 * t.sinh();
        let cs = s.cosh();
        let w = h * FRAC_PI_2 * t.cosh() / (cs * cs);
        // 1 - tanh(s) = 2 / (exp(2s) + 1)
        let comp = 2.0 / ((2.0 * s).exp() + 1.0);
        let x = s.tanh();
        if comp < 1e-300 || w < 1e-300 {
            break;
        }
        if k == 0 {
            out.push((0.0, w, 1.0));
        } else {
            out.push((x, w, comp));
            out.push((-x, w, comp));
        }
        k += 1;
    }
    out
}
