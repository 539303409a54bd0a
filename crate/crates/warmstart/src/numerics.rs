//! Dense linear algebra and the proximal/projection primitives the operators need.
//!
//! Everything is `f64` and dense; the problem sizes in scope stay in the low
//! thousands of variables, so sparse kernels would be complexity without payoff.
//! All functions are pure and safe to call from many workers at once;
//! [`LinearSolver`] is immutable after construction and shareable.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Zero rows are allowed so constraint-free conic data stays uniform.
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn diag(d: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Matrix {
        let r = rows.len();
        let c = rows[0].len();
        let mut m = Matrix::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            m.data[i * c..(i + 1) * c].copy_from_slice(row);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            y[i] = dot(self.row(i), x);
        }
        y
    }

    /// y = A^T x.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "matvec_t dimension mismatch");
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            if xi != 0.0 {
                for (yj, &aij) in y.iter_mut().zip(self.row(i)) {
                    *yj += aij * xi;
                }
            }
        }
        y
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// A^T A.
    pub fn gram(&self) -> Matrix {
        let mut g = Matrix::zeros(self.cols, self.cols);
        for k in 0..self.rows {
            let row = self.row(k);
            for i in 0..self.cols {
                let rki = row[i];
                if rki != 0.0 {
                    for j in 0..self.cols {
                        g.data[i * self.cols + j] += rki * row[j];
                    }
                }
            }
        }
        g
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// self += s * other (same shape).
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

// ---------------------------------------------------------------------------
// Vector helpers
// ---------------------------------------------------------------------------

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Elementwise max(v, 0).
pub fn relu(a: &[f64]) -> Vec<f64> {
    a.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

// ---------------------------------------------------------------------------
// Factorization
// ---------------------------------------------------------------------------

/// LDL^T factorization with diagonal pivots taken in order.
///
/// Handles symmetric positive definite matrices (all pivots positive) and
/// symmetric quasi-definite matrices (pivots of both signs, no row exchanges
/// needed). Anything that produces a zero pivot is rejected.
#[derive(Debug, Clone)]
pub struct LinearSolver {
    n: usize,
    /// Unit lower factor, stored dense; diagonal entries are implicit ones.
    l: Vec<f64>,
    d: Vec<f64>,
}

/// Factor a square SPD or symmetric quasi-definite matrix for repeated solves.
pub fn factorize(k: &Matrix) -> Result<LinearSolver> {
    if k.rows() != k.cols() {
        return Err(Error::Shape {
            what: "factorize",
            expected: k.rows(),
            got: k.cols(),
        });
    }
    let n = k.rows();
    let mut l = k.data.clone();
    let mut d = vec![0.0; n];
    let pivot_floor = 1e-12 * k.max_abs().max(1.0);
    for j in 0..n {
        let mut dj = l[j * n + j];
        for p in 0..j {
            let ljp = l[j * n + p];
            dj -= ljp * ljp * d[p];
        }
        if !dj.is_finite() || dj.abs() < pivot_floor {
            return Err(Error::FactorizationFailed { pivot: j });
        }
        d[j] = dj;
        for i in (j + 1)..n {
            let mut v = l[i * n + j];
            for p in 0..j {
                v -= l[i * n + p] * l[j * n + p] * d[p];
            }
            l[i * n + j] = v / dj;
        }
    }
    Ok(LinearSolver { n, l, d })
}

impl LinearSolver {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve K x = b for the factored K.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "solve dimension mismatch");
        let n = self.n;
        let mut x = b.to_vec();
        // L z = b
        for i in 0..n {
            let mut v = x[i];
            for j in 0..i {
                v -= self.l[i * n + j] * x[j];
            }
            x[i] = v;
        }
        // D y = z
        for i in 0..n {
            x[i] /= self.d[i];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let mut v = x[i];
            for j in (i + 1)..n {
                v -= self.l[j * n + i] * x[j];
            }
            x[i] = v;
        }
        x
    }
}

// ---------------------------------------------------------------------------
// Spectral estimates
// ---------------------------------------------------------------------------

/// Largest singular value by power iteration on W^T W.
///
/// The seed is explicit so downstream certificate reports are reproducible.
pub fn spectral_norm(w: &Matrix, iters: usize, seed: u64) -> f64 {
    assert!(iters >= 1, "spectral_norm needs at least one iteration");
    if w.max_abs() == 0.0 {
        return 0.0;
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..w.cols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nv = norm(&v);
    if nv == 0.0 {
        v[0] = 1.0;
    } else {
        v = scale(&v, 1.0 / nv);
    }
    for _ in 0..iters {
        let wv = w.matvec(&v);
        let g = w.matvec_t(&wv);
        let ng = norm(&g);
        if ng == 0.0 {
            // v is in the null space; restart from a fresh direction.
            v = (0..w.cols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nv = norm(&v);
            if nv == 0.0 {
                return 0.0;
            }
            v = scale(&v, 1.0 / nv);
            continue;
        }
        v = scale(&g, 1.0 / ng);
    }
    norm(&w.matvec(&v))
}

/// Extreme eigenvalues of a symmetric PSD matrix, by power iteration and a
/// shifted power iteration. Estimates only; callers that know the spectrum
/// exactly should pass it in instead.
pub fn sym_eig_extremes(p: &Matrix, iters: usize, seed: u64) -> (f64, f64) {
    assert_eq!(p.rows(), p.cols());
    let lam_max = spectral_norm(p, iters, seed);
    if lam_max == 0.0 {
        return (0.0, 0.0);
    }
    // Power iteration on (lam_max I - P) finds lam_max - lam_min.
    let n = p.rows();
    let mut shifted = p.clone();
    shifted.scale_in_place(-1.0);
    for i in 0..n {
        shifted.set(i, i, shifted.get(i, i) + lam_max);
    }
    let mu = spectral_norm(&shifted, iters, seed.wrapping_add(1));
    ((lam_max - mu).max(0.0), lam_max)
}

// ---------------------------------------------------------------------------
// Projections and prox primitives
// ---------------------------------------------------------------------------

/// Clamp v into [l, u] elementwise.
pub fn project_box(v: &[f64], l: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    if v.len() != l.len() {
        return Err(Error::Shape {
            what: "project_box lower bound",
            expected: v.len(),
            got: l.len(),
        });
    }
    if v.len() != u.len() {
        return Err(Error::Shape {
            what: "project_box upper bound",
            expected: v.len(),
            got: u.len(),
        });
    }
    Ok(v.iter()
        .zip(l.iter().zip(u))
        .map(|(&x, (&lo, &hi))| clamp(x, lo, hi))
        .collect())
}

#[inline]
pub fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

pub fn project_nonneg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

/// Shrinkage: out_i = sign(v_i) * max(|v_i| - kappa, 0).
pub fn soft_threshold(v: &[f64], kappa: f64) -> Result<Vec<f64>> {
    if kappa < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "soft_threshold kappa must be nonnegative, got {kappa}"
        )));
    }
    Ok(v.iter().map(|&x| soft_threshold_scalar(x, kappa)).collect())
}

#[inline]
pub fn soft_threshold_scalar(x: f64, kappa: f64) -> f64 {
    if x > kappa {
        x - kappa
    } else if x < -kappa {
        x + kappa
    } else {
        0.0
    }
}

/// Projection onto the second-order cone {(t, x) : ||x||_2 <= t}.
///
/// Closed form with three branches: identity inside the cone, zero inside the
/// polar cone, and the ray scaling otherwise.
pub fn project_soc(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "second-order cone needs at least one entry");
    let t = v[0];
    let x = &v[1..];
    let s = norm(x);
    if s <= t {
        return v.to_vec();
    }
    if s <= -t {
        return vec![0.0; v.len()];
    }
    let coef = (t + s) / 2.0;
    let mut out = Vec::with_capacity(v.len());
    out.push(coef);
    for &xi in x {
        out.push(coef * xi / s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn random_vec(rng: &mut ChaCha12Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    #[test]
    fn solve_identity() {
        let f = factorize(&Matrix::identity(3)).unwrap();
        let x = f.solve(&[1.0, 2.0, 3.0]);
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn solve_diagonal() {
        let f = factorize(&Matrix::diag(&[2.0, 4.0])).unwrap();
        let x = f.solve(&[2.0, 4.0]);
        assert_eq!(x, vec![1.0, 1.0]);
    }

    #[test]
    fn solve_two_by_two_closed_form() {
        // [[4,1],[1,3]] has inverse [[3,-1],[-1,4]]/11.
        let k = Matrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let f = factorize(&k).unwrap();
        let x = f.solve(&[1.0, 2.0]);
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn factorize_rejects_singular() {
        let k = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(
            factorize(&k),
            Err(Error::FactorizationFailed { .. })
        ));
        // Indefinite with a zero leading pivot is also rejected.
        let k = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(factorize(&k).is_err());
    }

    #[test]
    fn factorize_quasi_definite() {
        // [[P+I, A^T], [A, -I]] pattern: positive block then negative block.
        let k = Matrix::from_rows(&[
            vec![2.0, 0.0, 1.0],
            vec![0.0, 3.0, -1.0],
            vec![1.0, -1.0, -1.0],
        ]);
        let f = factorize(&k).unwrap();
        let b = vec![1.0, -2.0, 0.5];
        let x = f.solve(&b);
        let r = sub(&k.matvec(&x), &b);
        assert!(norm(&r) <= 1e-10 * (1.0 + norm(&b)));
    }

    #[test]
    fn solve_residual_bound_random_spd() {
        let mut rng = seeded(7);
        for trial in 0..20 {
            let n = 5 + trial % 10;
            let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let mut k = a.gram();
            for i in 0..n {
                k.set(i, i, k.get(i, i) + 1.0);
            }
            let f = factorize(&k).unwrap();
            let b = random_vec(&mut rng, n, 10.0);
            let x = f.solve(&b);
            let r = sub(&k.matvec(&x), &b);
            assert!(
                norm(&r) <= 1e-10 * (1.0 + norm(&b)),
                "residual {} too large",
                norm(&r)
            );
        }
    }

    #[test]
    fn spectral_norm_diagonal() {
        let w = Matrix::diag(&[3.0, 1.0]);
        assert!((spectral_norm(&w, 200, 0) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_zero_matrix() {
        let w = Matrix::zeros(4, 4);
        assert_eq!(spectral_norm(&w, 200, 0), 0.0);
    }

    #[test]
    fn spectral_norm_shear_golden_ratio() {
        // [[1,1],[0,1]] has largest singular value (1+sqrt(5))/2.
        let w = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
        let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
        assert!((spectral_norm(&w, 200, 1) - phi).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_accuracy_random() {
        // Relative error against a heavily-iterated reference estimate.
        let mut rng = seeded(11);
        for trial in 0..10 {
            let n = 8 + trial;
            let w = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let est = spectral_norm(&w, 200, 42);
            let reference = spectral_norm(&w, 20_000, 43);
            assert!(
                (est - reference).abs() <= 1e-6 * reference,
                "power iteration off: {est} vs {reference}"
            );
        }
    }

    #[test]
    fn spectral_norm_below_frobenius() {
        let mut rng = seeded(13);
        for _ in 0..50 {
            let w = Matrix::from_fn(6, 9, |_, _| rng.gen_range(-2.0..2.0));
            assert!(spectral_norm(&w, 300, 5) <= w.frobenius_norm() + 1e-9);
        }
    }

    #[test]
    fn sym_eig_extremes_diag() {
        let p = Matrix::diag(&[100.0, 1.0, 7.0]);
        let (lo, hi) = sym_eig_extremes(&p, 500, 3);
        assert!((hi - 100.0).abs() < 1e-6);
        assert!((lo - 1.0).abs() < 1e-6);
    }

    #[test]
    fn box_projection_examples() {
        let out = project_box(&[-1.0, 0.5, 2.0], &[0.0; 3], &[1.0; 3]).unwrap();
        assert_eq!(out, vec![0.0, 0.5, 1.0]);
        let inside = vec![0.25, 0.75];
        assert_eq!(
            project_box(&inside, &[0.0; 2], &[1.0; 2]).unwrap(),
            inside
        );
        assert_eq!(project_box(&[5.0], &[-1.0], &[1.0]).unwrap(), vec![1.0]);
        assert!(project_box(&[1.0, 2.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(
            soft_threshold(&[3.0, -0.5, 0.0], 1.0).unwrap(),
            vec![2.0, 0.0, 0.0]
        );
        let v = vec![0.3, -2.0, 11.0];
        assert_eq!(soft_threshold(&v, 0.0).unwrap(), v);
        assert_eq!(soft_threshold(&[-2.0], 2.0).unwrap(), vec![0.0]);
        assert!(soft_threshold(&v, -1.0).is_err());
    }

    #[test]
    fn soc_projection_examples() {
        assert_eq!(project_soc(&[2.0, 1.0, 0.0]), vec![2.0, 1.0, 0.0]);
        assert_eq!(project_soc(&[-2.0, 1.0, 0.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(project_soc(&[0.0, 2.0, 0.0]), vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn soc_output_in_cone() {
        let mut rng = seeded(17);
        for _ in 0..1000 {
            let v = random_vec(&mut rng, 5, 3.0);
            let p = project_soc(&v);
            assert!(norm(&p[1..]) <= p[0] + 1e-12);
        }
    }

    #[test]
    fn projections_nonexpansive() {
        let mut rng = seeded(19);
        let l = vec![-0.5; 6];
        let u = vec![1.5; 6];
        for _ in 0..1000 {
            let x = random_vec(&mut rng, 6, 4.0);
            let y = random_vec(&mut rng, 6, 4.0);
            let dxy = norm(&sub(&x, &y));
            let bx = project_box(&x, &l, &u).unwrap();
            let by = project_box(&y, &l, &u).unwrap();
            assert!(norm(&sub(&bx, &by)) <= dxy + 1e-12);
            let sx = project_soc(&x);
            let sy = project_soc(&y);
            assert!(norm(&sub(&sx, &sy)) <= dxy + 1e-12);
        }
    }
}
