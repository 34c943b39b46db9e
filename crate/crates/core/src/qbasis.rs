//! Orthonormal polynomial basis of `L^2(M dq)` and its operator matrices.
//!
//! Every function of `q` is stored as a coefficient vector against the
//! basis, so weighted inner products are Euclidean dot products. Matrices
//! are Galerkin projections: `K[m][n] = <phi_m, k phi_n>_M`. For a
//! separable potential the one-dimensional matrices are lifted to the
//! total-degree multi-index set as tensor products.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::quadrature::{golub_welsch, stieltjes, Recurrence, Rule};

/// Largest tolerated deviation of the discrete Gram matrix from identity.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

/// One-dimensional Galerkin matrices of size `(n_q + 1)^2`.
#[derive(Debug, Clone)]
struct Matrices1 {
    /// `d/dx`
    d: DMatrix<f64>,
    /// multiply by `x`
    q: DMatrix<f64>,
    /// multiply by `x^2`
    q2: DMatrix<f64>,
    /// multiply by `x^4`
    q4: DMatrix<f64>,
    /// multiply by `V'(x)`
    a: DMatrix<f64>,
    /// multiply by `V'(x)^2`
    aa: DMatrix<f64>,
    /// multiply by `x V'(x)`
    b: DMatrix<f64>,
    /// multiply by `x^2 V'(x)^2`
    qqaa: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct QBasis {
    potential: Potential,
    n_q: usize,
    indices: Vec<Vec<usize>>,
    recurrence: Recurrence,
    rule1: Rule,
    m1: Matrices1,
    d: Vec<DMatrix<f64>>,
    q: Vec<DMatrix<f64>>,
    a: Vec<DMatrix<f64>>,
    /// `b[i][j]`: multiply by `q_j dV/dq_i`
    b: Vec<Vec<DMatrix<f64>>>,
    lg: DMatrix<f64>,
    /// `I + sum_i Q2_i`, the Gram form of the `<q>`-weighted norm
    weight: DMatrix<f64>,
    /// Tensor Gauss nodes (row per node) and weights.
    nodes: Vec<Vec<f64>>,
    node_weights: Vec<f64>,
    /// Basis values at the nodes, `nodes x n_b`.
    phi: DMatrix<f64>,
    /// `dphi[i]`: `d/dq_i` of the basis at the nodes.
    dphi: Vec<DMatrix<f64>>,
}

/// Total-degree multi-indices ordered by degree, then lexicographically
/// with the first coordinate varying slowest.
fn multi_indices(dim: usize, n_q: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for deg in 0..=n_q {
        let mut cur = vec![0usize; dim];
        collect_degree(dim, deg, 0, &mut cur, &mut out);
    }
    out
}

fn collect_degree(dim: usize, left: usize, pos: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if pos == dim - 1 {
        cur[pos] = left;
        out.push(cur.clone());
        return;
    }
    for k in (0..=left).rev() {
        cur[pos] = k;
        collect_degree(dim, left - k, pos + 1, cur, out);
    }
}

impl QBasis {
    /// Build the basis of total degree `n_q` for a separable potential.
    pub fn build(p: &Potential, n_q: usize) -> Result<Self> {
        if n_q < 2 {
            return Err(Error::Parameter(format!("n_q must be at least 2 (got {n_q})")));
        }
        if !p.is_separable() && p.dim_q() > 1 {
            return Err(Error::Unsupported(
                "basis construction needs a separable potential or dim_q = 1".into(),
            ));
        }
        let dim = p.dim_q();
        let (base, shapes) = p.base_rule(n_q + 2);
        let recurrence = stieltjes(&base, n_q + 2)?;
        let rule1 = golub_welsch(&recurrence, n_q + 2)?;
        let m1 = matrices_1d(p, &recurrence, &base, &shapes, n_q)?;

        let indices = multi_indices(dim, n_q);
        let n_b = indices.len();
        let lift = |axis: usize, k: &DMatrix<f64>| lift1(&indices, axis, k);

        let d: Vec<_> = (0..dim).map(|i| lift(i, &m1.d)).collect();
        let q: Vec<_> = (0..dim).map(|i| lift(i, &m1.q)).collect();
        let a: Vec<_> = (0..dim).map(|i| lift(i, &m1.a)).collect();
        let b: Vec<Vec<_>> = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| {
                        if i == j {
                            lift(i, &m1.b)
                        } else {
                            lift2(&indices, i, &m1.a, j, &m1.q)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut lg = DMatrix::zeros(n_b, n_b);
        for di in &d {
            lg += di.transpose() * di;
        }
        let mut weight = DMatrix::identity(n_b, n_b);
        for i in 0..dim {
            weight += lift(i, &m1.q2);
        }

        // tensor Gauss rule and basis tables
        let n1 = rule1.len();
        let n_nodes = n1.pow(dim as u32);
        let mut vals1 = DMatrix::zeros(n1, n_q + 1);
        let mut ders1 = DMatrix::zeros(n1, n_q + 1);
        let mut v = vec![0.0; n_q + 1];
        let mut dv = vec![0.0; n_q + 1];
        for (k, &x) in rule1.nodes.iter().enumerate() {
            recurrence.eval_with_derivative(n_q, x, &mut v, &mut dv);
            for n in 0..=n_q {
                // recurrence is normalized to mass one
                vals1[(k, n)] = v[n];
                ders1[(k, n)] = dv[n];
            }
        }
        let mut nodes = Vec::with_capacity(n_nodes);
        let mut node_weights = Vec::with_capacity(n_nodes);
        let mut phi = DMatrix::zeros(n_nodes, n_b);
        let mut dphi = vec![DMatrix::zeros(n_nodes, n_b); dim];
        let mut ks = vec![0usize; dim];
        for flat in 0..n_nodes {
            let mut rem = flat;
            for axis in (0..dim).rev() {
                ks[axis] = rem % n1;
                rem /= n1;
            }
            nodes.push(ks.iter().map(|&k| rule1.nodes[k]).collect());
            node_weights.push(ks.iter().map(|&k| rule1.weights[k]).product());
            for (col, idx) in indices.iter().enumerate() {
                let mut prod = 1.0;
                for axis in 0..dim {
                    prod *= vals1[(ks[axis], idx[axis])];
                }
                phi[(flat, col)] = prod;
                for (i, dp) in dphi.iter_mut().enumerate() {
                    let mut prod = 1.0;
                    for axis in 0..dim {
                        prod *= if axis == i {
                            ders1[(ks[axis], idx[axis])]
                        } else {
                            vals1[(ks[axis], idx[axis])]
                        };
                    }
                    dp[(flat, col)] = prod;
                }
            }
        }

        Ok(QBasis {
            potential: p.clone(),
            n_q,
            indices,
            recurrence,
            rule1,
            m1,
            d,
            q,
            a,
            b,
            lg,
            weight,
            nodes,
            node_weights,
            phi,
            dphi,
        })
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn dim_q(&self) -> usize {
        self.potential.dim_q()
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    /// Total degree of basis function `k`.
    pub fn degree(&self, k: usize) -> usize {
        self.indices[k].iter().sum()
    }

    pub fn recurrence(&self) -> &Recurrence {
        &self.recurrence
    }

    /// One-dimensional Gauss rule against the normalized marginal.
    pub fn rule_1d(&self) -> &Rule {
        &self.rule1
    }

    pub fn d(&self, i: usize) -> &DMatrix<f64> {
        &self.d[i]
    }

    pub fn q(&self, i: usize) -> &DMatrix<f64> {
        &self.q[i]
    }

    pub fn a(&self, i: usize) -> &DMatrix<f64> {
        &self.a[i]
    }

    pub fn b(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.b[i][j]
    }

    pub fn lg(&self) -> &DMatrix<f64> {
        &self.lg
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    /// Basis values at the quadrature nodes, one row per node.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn dphi(&self, i: usize) -> &DMatrix<f64> {
        &self.dphi[i]
    }

    /// Coefficient vector of the constant function 1.
    pub fn e0(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.len());
        v[0] = 1.0;
        v
    }

    /// Galerkin matrix of multiplication by `q_i q_j`.
    pub fn qq(&self, i: usize, j: usize) -> DMatrix<f64> {
        if i == j {
            lift1(&self.indices, i, &self.m1.q2)
        } else {
            lift2(&self.indices, i, &self.m1.q, j, &self.m1.q)
        }
    }

    /// Galerkin matrix of multiplication by `|dV/dq|^2`.
    pub fn grad_v_squared(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..self.dim_q() {
            out += lift1(&self.indices, i, &self.m1.aa);
        }
        out
    }

    /// Galerkin matrix of multiplication by `|q|^2 |dV/dq|^2`.
    pub fn q_grad_v_squared(&self) -> DMatrix<f64> {
        let n = self.len();
        let dim = self.dim_q();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..dim {
            for j in 0..dim {
                out += if i == j {
                    lift1(&self.indices, i, &self.m1.qqaa)
                } else {
                    lift2(&self.indices, i, &self.m1.q2, j, &self.m1.aa)
                };
            }
        }
        out
    }

    /// Galerkin matrix of multiplication by `|q|^4`.
    pub fn q_fourth(&self) -> DMatrix<f64> {
        let n = self.len();
        let dim = self.dim_q();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..dim {
            for j in 0..dim {
                out += if i == j {
                    lift1(&self.indices, i, &self.m1.q4)
                } else {
                    lift2(&self.indices, i, &self.m1.q2, j, &self.m1.q2)
                };
            }
        }
        out
    }

    /// Values of all basis functions at `q`.
    pub fn eval(&self, q: &[f64]) -> Vec<f64> {
        let dim = self.dim_q();
        let mut tables = vec![vec![0.0; self.n_q + 1]; dim];
        for (axis, t) in tables.iter_mut().enumerate() {
            self.recurrence.eval(self.n_q, q[axis], t);
        }
        self.indices
            .iter()
            .map(|idx| (0..dim).map(|a| tables[a][idx[a]]).product())
            .collect()
    }

    /// Coefficients of `f` by tensor Gauss quadrature. Exact for
    /// polynomials of degree up to `n_q + 3` in each variable.
    pub fn project(&self, f: impl Fn(&[f64]) -> f64) -> DVector<f64> {
        let vals: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.node_weights)
            .map(|(q, w)| w * f(q))
            .collect();
        self.phi.tr_mul(&DVector::from_vec(vals))
    }

    /// Gram matrix of the basis under the fine base rule.
    pub fn gram_deviation(&self) -> f64 {
        let phi = &self.phi;
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(&self.node_weights));
        let gram = phi.transpose() * w * phi;
        (gram - DMatrix::identity(self.len(), self.len())).amax()
    }

    /// `<f, g>_M`.
    pub fn weighted_inner(&self, f: &DVector<f64>, g: &DVector<f64>) -> Result<f64> {
        if f.len() != self.len() || g.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: if f.len() != self.len() { f.len() } else { g.len() },
            });
        }
        Ok(f.dot(g))
    }

    /// `L_G g`.
    pub fn apply_l(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        if g.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: g.len(),
            });
        }
        Ok(&self.lg * g)
    }

    /// Eigenvalues of `L_G` in ascending order.
    pub fn spectrum(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.lg.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Smallest eigenvalue of `L_G` on the complement of the constants.
    pub fn spectral_gap(&self) -> Result<f64> {
        let n = self.len();
        let sub = self.lg.view((1, 1), (n - 1, n - 1)).into_owned();
        let gap = SymmetricEigen::new(sub)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !(gap > 1e-12) {
            return Err(Error::Degenerate(format!(
                "spectral gap {gap:e} is below 1e-12"
            )));
        }
        Ok(gap)
    }

    /// Weighted Poincare constant `1 / lambda_1`.
    pub fn poincare_constant(&self) -> Result<f64> {
        Ok(1.0 / self.spectral_gap()?)
    }

    /// `||<q> h||^2_M` for a coefficient vector.
    pub fn weighted_norm_sq(&self, h: &DVector<f64>) -> f64 {
        h.dot(&(&self.weight * h))
    }

    /// Empirical constants of the weighted Poincare-type inequalities for
    /// random mean-zero coefficient vectors.
    pub fn weighted_poincare_check(&self, trials: usize, seed: u64) -> PoincareReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<DVector<f64>> = (0..trials)
            .map(|_| {
                let mut g = DVector::zeros(self.len());
                for k in 1..self.len() {
                    let decay = 0.5f64.powi(self.degree(k) as i32);
                    g[k] = rng.random_range(-1.0..1.0) * decay;
                }
                g
            })
            .collect();
        self.poincare_ratios(&samples)
    }

    /// The four inequality ratios, maximized over the given vectors.
    pub fn poincare_ratios(&self, samples: &[DVector<f64>]) -> PoincareReport {
        let s2 = self.potential.scale().powi(2);
        let gu2 = self.grad_v_squared() * s2;
        let qgu2 = self.q_grad_v_squared() * s2;
        let q4 = self.q_fourth();
        let mut q2 = DMatrix::zeros(self.len(), self.len());
        for i in 0..self.dim_q() {
            q2 += self.qq(i, i);
        }
        let mut report = PoincareReport {
            trials: samples.len(),
            skipped: 0,
            grad_u: 0.0,
            q: 0.0,
            q_grad_u: 0.0,
            q_squared: 0.0,
        };
        for g0 in samples {
            let mut g = g0.clone();
            g[0] = 0.0;
            let grad = g.dot(&(&self.lg * &g));
            let mut wgrad = 0.0;
            for di in &self.d {
                let h = di * &g;
                wgrad += self.weighted_norm_sq(&h);
            }
            if !(grad > 0.0) {
                report.skipped += 1;
                continue;
            }
            let ratio = |num: f64, den: f64| (num.max(0.0) / den).sqrt();
            report.grad_u = report.grad_u.max(ratio(g.dot(&(&gu2 * &g)), grad));
            report.q = report.q.max(ratio(g.dot(&(&q2 * &g)), grad));
            report.q_grad_u = report.q_grad_u.max(ratio(g.dot(&(&qgu2 * &g)), wgrad));
            report.q_squared = report.q_squared.max(ratio(g.dot(&(&q4 * &g)), wgrad));
        }
        report
    }
}

/// Largest observed ratios in the inequalities
/// `||grad U g|| <= C ||grad_q g||`, `||q g|| <= C ||grad_q g||`,
/// `||q grad U g|| <= C ||<q> grad_q g||`, `|| |q|^2 g|| <= C ||<q> grad_q g||`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoincareReport {
    pub trials: usize,
    /// Inputs with vanishing gradient norm (0/0), not counted.
    pub skipped: usize,
    pub grad_u: f64,
    pub q: f64,
    pub q_grad_u: f64,
    pub q_squared: f64,
}

/// Build the basis; see [`QBasis::build`].
pub fn build_basis(p: &Potential, n_q: usize) -> Result<QBasis> {
    QBasis::build(p, n_q)
}

fn matrices_1d(
    p: &Potential,
    rec: &Recurrence,
    base: &Rule,
    shapes: &[f64],
    n_q: usize,
) -> Result<Matrices1> {
    let n = n_q + 1;
    let mut m = Matrices1 {
        d: DMatrix::zeros(n, n),
        q: DMatrix::zeros(n, n),
        q2: DMatrix::zeros(n, n),
        q4: DMatrix::zeros(n, n),
        a: DMatrix::zeros(n, n),
        aa: DMatrix::zeros(n, n),
        b: DMatrix::zeros(n, n),
        qqaa: DMatrix::zeros(n, n),
    };
    let mut gram = DMatrix::<f64>::zeros(n, n);
    let mut v = vec![0.0; n];
    let mut dv = vec![0.0; n];
    for (k, (&x, &w)) in base.nodes.iter().zip(&base.weights).enumerate() {
        rec.eval_with_derivative(n_q, x, &mut v, &mut dv);
        let vp = p.dv1_s(x, shapes[k]);
        let x2 = x * x;
        for r in 0..n {
            let wr = w * v[r];
            for c in 0..n {
                let wv = wr * v[c];
                gram[(r, c)] += wv;
                m.d[(r, c)] += wr * dv[c];
                m.q[(r, c)] += wv * x;
                m.q2[(r, c)] += wv * x2;
                m.q4[(r, c)] += wv * x2 * x2;
                m.a[(r, c)] += wv * vp;
                m.aa[(r, c)] += wv * vp * vp;
                m.b[(r, c)] += wv * x * vp;
                m.qqaa[(r, c)] += wv * x2 * vp * vp;
            }
        }
    }
    let dev = (gram - DMatrix::identity(n, n)).amax();
    if dev > ORTHONORMALITY_TOL {
        return Err(Error::Construction(format!(
            "basis lost orthogonality (Gram deviation {dev:.2e}); lower n_q or refine the base quadrature"
        )));
    }
    Ok(m)
}

/// Lift a one-dimensional operator acting on `axis` to the multi-index set.
fn lift1(indices: &[Vec<usize>], axis: usize, k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = indices.len();
    let mut out = DMatrix::zeros(n, n);
    for (r, ir) in indices.iter().enumerate() {
        for (c, ic) in indices.iter().enumerate() {
            let same = ir
                .iter()
                .zip(ic)
                .enumerate()
                .all(|(a, (x, y))| a == axis || x == y);
            if same {
                out[(r, c)] = k[(ir[axis], ic[axis])];
            }
        }
    }
    out
}

/// Lift the product of two one-dimensional operators on distinct axes.
fn lift2(indices: &[Vec<usize>], ax1: usize, k1: &DMatrix<f64>, ax2: usize, k2: &DMatrix<f64>) -> DMatrix<f64> {
    let n = indices.len();
    let mut out = DMatrix::zeros(n, n);
    for (r, ir) in indices.iter().enumerate() {
        for (c, ic) in indices.iter().enumerate() {
            let same = ir
                .iter()
                .zip(ic)
                .enumerate()
                .all(|(a, (x, y))| a == ax1 || a == ax2 || x == y);
            if same {
                out[(r, c)] = k1[(ir[ax1], ic[ax1])] * k2[(ir[ax2], ic[ax2])];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hookean(dim: usize) -> Potential {
        Potential::hookean(1.0, 1.0, dim).unwrap()
    }

    /// Probabilists' Hermite recurrence, independent of the basis code:
    /// He_{n+1} = x He_n - n He_{n-1}, normalized by sqrt(n!).
    fn hermite_normalized(n: usize, x: f64) -> f64 {
        let (mut h0, mut h1) = (1.0, x);
        if n == 0 {
            return 1.0;
        }
        for k in 1..n {
            let h2 = x * h1 - k as f64 * h0;
            h0 = h1;
            h1 = h2;
        }
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        h1 / fact.sqrt()
    }

    #[test]
    fn multi_index_order() {
        let idx = multi_indices(2, 2);
        assert_eq!(
            idx,
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        assert_eq!(multi_indices(3, 10).len(), 286);
    }

    #[test]
    fn hookean_recurrence_is_hermite() {
        let b = QBasis::build(&hookean(1), 8).unwrap();
        let rec = b.recurrence();
        for n in 0..8 {
            assert!(rec.alpha[n].abs() < 1e-10);
        }
        for n in 1..8 {
            assert_relative_eq!(rec.beta[n], n as f64, epsilon = 1e-10);
        }
        for &x in &[-2.3, -0.4, 0.0, 1.7] {
            let vals = b.eval(&[x]);
            for n in 0..=8 {
                assert_relative_eq!(vals[n], hermite_normalized(n, x), epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn hookean_q_is_ladder() {
        let b = QBasis::build(&hookean(1), 8).unwrap();
        let q = b.q(0);
        for r in 0..9 {
            for c in 0..9 {
                let expect = if r + 1 == c {
                    (c as f64).sqrt()
                } else if c + 1 == r {
                    (r as f64).sqrt()
                } else {
                    0.0
                };
                assert!((q[(r, c)] - expect).abs() < 1e-10, "({r},{c})");
            }
        }
    }

    #[test]
    fn structural_identities() {
        for p in [hookean(1), hookean(2), hookean(3), Potential::fene(2.0, 1.0).unwrap()] {
            let b = QBasis::build(&p, 6).unwrap();
            assert!(b.gram_deviation() < 1e-10);
            let lg = b.lg();
            assert!((lg - lg.transpose()).amax() < 1e-12);
            assert!((lg * b.e0()).amax() < 1e-12);
            for i in 0..b.dim_q() {
                let q = b.q(i);
                assert!((q - q.transpose()).amax() < 1e-12);
                // integration by parts: D^T = -D + A
                let ibp = b.d(i).transpose() + b.d(i) - b.a(i);
                assert!(ibp.amax() < 1e-9, "{p}: {}", ibp.amax());
            }
        }
    }

    #[test]
    fn hookean_spectrum_counts_degree() {
        for dim in 1..=3 {
            let b = QBasis::build(&hookean(dim), 10).unwrap();
            let ev = b.spectrum();
            let mut expect: Vec<f64> = (0..b.len()).map(|k| b.degree(k) as f64).collect();
            expect.sort_by(f64::total_cmp);
            for (e, x) in ev.iter().zip(&expect) {
                assert!((e - x).abs() < 1e-6, "dim {dim}: {e} vs {x}");
            }
            assert_relative_eq!(b.poincare_constant().unwrap(), 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn hermite_modes_are_eigenvectors() {
        let b = QBasis::build(&hookean(1), 8).unwrap();
        for n in 0..=8 {
            let mut e = DVector::zeros(9);
            e[n] = 1.0;
            let le = b.apply_l(&e).unwrap();
            assert!((le - e * n as f64).amax() < 1e-10);
        }
    }

    #[test]
    fn thermal_scale_rescales_gap() {
        // sigma r = 2: M is N(0, 2), L_G eigenvalues n / 2
        let p = Potential::hookean(1.0, 2.0, 1).unwrap();
        let b = QBasis::build(&p, 8).unwrap();
        assert_relative_eq!(b.spectral_gap().unwrap(), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn fene_gap_regression() {
        let b = QBasis::build(&Potential::fene(2.0, 1.0).unwrap(), 10).unwrap();
        let gap = 1.0 / b.poincare_constant().unwrap();
        // finite-volume oracle for -(w f')' = lambda w f, w = (1 - x^2)^2
        let n = 600;
        let h = 2.0 / n as f64;
        let w = |x: f64| (1.0 - x * x).powi(2);
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            let xc = -1.0 + (i as f64 + 0.5) * h;
            let wl = w(xc - 0.5 * h) / h;
            let wr = w(xc + 0.5 * h) / h;
            let mc = (w(xc) * h).sqrt();
            a[(i, i)] = (wl + wr) / (mc * mc);
            if i + 1 < n {
                let mr = (w(xc + h) * h).sqrt();
                a[(i, i + 1)] = -wr / (mc * mr);
                a[(i + 1, i)] = -wr / (mc * mr);
            }
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!((gap - ev[1]).abs() < 1e-5 * gap);
        assert_relative_eq!(gap, 6.703698280319813, epsilon = 1e-9);
    }

    #[test]
    fn weighted_inner_matches_quadrature() {
        let b = QBasis::build(&hookean(2), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = DVector::from_fn(b.len(), |_, _| rng.random_range(-1.0..1.0));
        let direct: f64 = b
            .nodes()
            .iter()
            .zip(b.node_weights())
            .map(|(q, w)| {
                let v: f64 = b.eval(q).iter().zip(f.iter()).map(|(a, c)| a * c).sum();
                w * v * v
            })
            .sum();
        assert_relative_eq!(b.weighted_inner(&f, &f).unwrap(), direct, epsilon = 1e-9);
        assert_relative_eq!(b.weighted_inner(&b.e0(), &b.e0()).unwrap(), 1.0);
        assert!(b.weighted_inner(&f, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn projection_of_constant() {
        let b = QBasis::build(&hookean(3), 4).unwrap();
        let c = b.project(|_| 1.0);
        assert_relative_eq!(c[0], 1.0, epsilon = 1e-12);
        assert!(c.rows(1, b.len() - 1).amax() < 1e-12);
    }

    #[test]
    fn poincare_ratios() {
        let b = QBasis::build(&hookean(1), 8).unwrap();
        let zero = b.poincare_ratios(&[DVector::zeros(9)]);
        assert_eq!(zero.skipped, 1);
        let mut e1 = DVector::zeros(9);
        e1[1] = 1.0;
        let r = b.poincare_ratios(&[e1]);
        // g = q: ||q g||^2 = <q^4> = 3, ||grad g||^2 = 1
        assert_relative_eq!(r.q, 3f64.sqrt(), epsilon = 1e-10);
        assert_relative_eq!(r.grad_u, 3f64.sqrt(), epsilon = 1e-10);
        // ||<q> grad g||^2 = 1 + <q^2> = 2, ||q^2 g||^2 = <q^6> = 15
        assert_relative_eq!(r.q_squared, (15.0f64 / 2.0).sqrt(), epsilon = 1e-10);
        let rep = b.weighted_poincare_check(50, 7);
        assert_eq!(rep.trials, 50);
        assert!(rep.grad_u.is_finite() && rep.q_squared > 0.0);
    }

    #[test]
    fn poincare_ratios_stable_under_refinement() {
        let p = hookean(1);
        let coarse = QBasis::build(&p, 6).unwrap();
        let fine = QBasis::build(&p, 12).unwrap();
        let g = |b: &QBasis| b.project(|q| q[0] + 0.3 * (q[0] * q[0] - 1.0));
        let rc = coarse.poincare_ratios(&[g(&coarse)]);
        let rf = fine.poincare_ratios(&[g(&fine)]);
        for (a, b) in [(rc.grad_u, rf.grad_u), (rc.q, rf.q), (rc.q_grad_u, rf.q_grad_u), (rc.q_squared, rf.q_squared)] {
            assert!((a - b).abs() <= 0.1 * b, "{a} vs {b}");
        }
    }
}
