//! The fixed-point operators, instantiated from problem data, behind a uniform
//! apply-one-step interface with declared operator-class constants.
//!
//! Each operator is a map T on R^p whose fixed points solve the underlying
//! convex program. One step is emitted through [`StepEmitter`], which has two
//! implementations: direct evaluation (used by [`Operator::apply`]) and tape
//! recording (in [`crate::autodiff`]). Both run the same kernels in the same
//! order, so evaluated trajectories and recorded ones agree bitwise.

use crate::error::{Error, Result};
use crate::numerics::{
    self, all_finite, factorize, norm, project_box, project_nonneg, project_soc, soft_threshold,
    sub, sym_eig_extremes, LinearSolver, Matrix,
};
use std::sync::Arc;

/// Convergence class declared by each operator instance.
///
/// Contractive operators are also linearly convergent, and both are averaged
/// maps in the cases built here, so a stronger declaration licenses the weaker
/// bounds as well.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorClass {
    Contractive(f64),
    LinearlyConvergent(f64),
    Averaged(f64),
}

impl OperatorClass {
    pub fn constant(&self) -> f64 {
        match *self {
            OperatorClass::Contractive(b)
            | OperatorClass::LinearlyConvergent(b)
            | OperatorClass::Averaged(b) => b,
        }
    }
}

/// Closed-form proximal operators admitted into splitting steps.
#[derive(Debug, Clone)]
pub enum ProxSpec {
    /// g = 0; prox is the identity.
    ZeroFn,
    /// g = lambda * ||x||_1.
    L1 { lambda: f64 },
    /// Indicator of the box [l, u].
    Box {
        l: Arc<Vec<f64>>,
        u: Arc<Vec<f64>>,
    },
    /// Indicator of the nonnegative orthant.
    Nonneg,
    /// g = (1/2) x^T P x + c^T x with P PSD; prox solves (I + P) x = v - c.
    Quadratic {
        p: Arc<Matrix>,
        neg_c: Arc<Vec<f64>>,
        solver: Arc<LinearSolver>,
    },
}

impl ProxSpec {
    pub fn quadratic(p: Arc<Matrix>, c: &[f64]) -> Result<ProxSpec> {
        let n = p.rows();
        if c.len() != n {
            return Err(Error::Shape {
                what: "quadratic prox linear term",
                expected: n,
                got: c.len(),
            });
        }
        let mut ipp = (*p).clone();
        for i in 0..n {
            ipp.set(i, i, ipp.get(i, i) + 1.0);
        }
        let solver = Arc::new(factorize(&ipp)?);
        Ok(ProxSpec::Quadratic {
            p,
            neg_c: Arc::new(numerics::scale(c, -1.0)),
            solver,
        })
    }

    fn point(v: &[f64]) -> ProxSpec {
        let p = Arc::new(v.to_vec());
        ProxSpec::Box {
            l: p.clone(),
            u: p,
        }
    }

    /// Indicator of {0}.
    pub fn zero_point(dim: usize) -> ProxSpec {
        ProxSpec::point(&vec![0.0; dim])
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        let d = match self {
            ProxSpec::Box { l, u } => {
                if l.len() != u.len() {
                    return Err(Error::Shape {
                        what: "box prox bounds",
                        expected: l.len(),
                        got: u.len(),
                    });
                }
                Some(l.len())
            }
            ProxSpec::Quadratic { p, .. } => Some(p.rows()),
            _ => None,
        };
        match d {
            Some(d) if d != dim => Err(Error::Shape {
                what: "prox dimension",
                expected: dim,
                got: d,
            }),
            _ => Ok(()),
        }
    }
}

/// Cone factors for the conic splitting operator, in the order they appear in
/// the constraint rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cone {
    Zero(usize),
    Nonneg(usize),
    Soc(usize),
}

impl Cone {
    pub fn len(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::Nonneg(n) | Cone::Soc(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Segment-wise projection layout for a product set R^a x K1 x K2 x ...
#[derive(Debug, Clone, PartialEq)]
pub enum ConeSeg {
    Free(usize),
    Nonneg(usize),
    Soc(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeLayout {
    pub segs: Vec<ConeSeg>,
}

impl ConeLayout {
    pub fn dim(&self) -> usize {
        self.segs
            .iter()
            .map(|s| match *s {
                ConeSeg::Free(n) | ConeSeg::Nonneg(n) | ConeSeg::Soc(n) => n,
            })
            .sum()
    }

    /// Project segment-wise; free segments pass through.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim(), "cone projection dimension mismatch");
        let mut out = Vec::with_capacity(v.len());
        let mut off = 0;
        for seg in &self.segs {
            match *seg {
                ConeSeg::Free(n) => {
                    out.extend_from_slice(&v[off..off + n]);
                    off += n;
                }
                ConeSeg::Nonneg(n) => {
                    out.extend(project_nonneg(&v[off..off + n]));
                    off += n;
                }
                ConeSeg::Soc(n) => {
                    out.extend(project_soc(&v[off..off + n]));
                    off += n;
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Step emission
// ---------------------------------------------------------------------------

/// One operator step expressed against an abstract value type.
///
/// The direct evaluator and the autodiff tape both implement this, so a step
/// is written once and the two paths cannot drift apart numerically.
pub trait StepEmitter {
    type V: Clone;
    fn matvec(&mut self, m: &Arc<Matrix>, x: &Self::V) -> Self::V;
    fn matvec_t(&mut self, m: &Arc<Matrix>, x: &Self::V) -> Self::V;
    fn lin_solve(&mut self, s: &Arc<LinearSolver>, b: &Self::V) -> Self::V;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn add_const(&mut self, a: &Self::V, c: &Arc<Vec<f64>>) -> Self::V;
    fn scale(&mut self, a: &Self::V, s: f64) -> Self::V;
    fn box_clip(&mut self, a: &Self::V, l: &Arc<Vec<f64>>, u: &Arc<Vec<f64>>) -> Self::V;
    fn nonneg_clip(&mut self, a: &Self::V) -> Self::V;
    fn soft_threshold(&mut self, a: &Self::V, kappa: f64) -> Self::V;
    fn cone_project(&mut self, a: &Self::V, layout: &Arc<ConeLayout>) -> Self::V;
    fn slice(&mut self, a: &Self::V, offset: usize, len: usize) -> Self::V;
    fn concat(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
}

/// Plain evaluation over `Vec<f64>`.
pub struct DirectEval;

impl StepEmitter for DirectEval {
    type V = Vec<f64>;

    fn matvec(&mut self, m: &Arc<Matrix>, x: &Vec<f64>) -> Vec<f64> {
        m.matvec(x)
    }
    fn matvec_t(&mut self, m: &Arc<Matrix>, x: &Vec<f64>) -> Vec<f64> {
        m.matvec_t(x)
    }
    fn lin_solve(&mut self, s: &Arc<LinearSolver>, b: &Vec<f64>) -> Vec<f64> {
        s.solve(b)
    }
    fn add(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        numerics::add(a, b)
    }
    fn sub(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        numerics::sub(a, b)
    }
    fn add_const(&mut self, a: &Vec<f64>, c: &Arc<Vec<f64>>) -> Vec<f64> {
        numerics::add(a, c)
    }
    fn scale(&mut self, a: &Vec<f64>, s: f64) -> Vec<f64> {
        numerics::scale(a, s)
    }
    fn box_clip(&mut self, a: &Vec<f64>, l: &Arc<Vec<f64>>, u: &Arc<Vec<f64>>) -> Vec<f64> {
        project_box(a, l, u).expect("box bounds sized at construction")
    }
    fn nonneg_clip(&mut self, a: &Vec<f64>) -> Vec<f64> {
        project_nonneg(a)
    }
    fn soft_threshold(&mut self, a: &Vec<f64>, kappa: f64) -> Vec<f64> {
        soft_threshold(a, kappa).expect("kappa checked at construction")
    }
    fn cone_project(&mut self, a: &Vec<f64>, layout: &Arc<ConeLayout>) -> Vec<f64> {
        layout.project(a)
    }
    fn slice(&mut self, a: &Vec<f64>, offset: usize, len: usize) -> Vec<f64> {
        a[offset..offset + len].to_vec()
    }
    fn concat(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        let mut v = Vec::with_capacity(a.len() + b.len());
        v.extend_from_slice(a);
        v.extend_from_slice(b);
        v
    }
}

// ---------------------------------------------------------------------------
// Operator data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct OsqpData {
    pub p: Arc<Matrix>,
    pub a: Arc<Matrix>,
    pub c: Arc<Vec<f64>>,
    pub neg_c: Arc<Vec<f64>>,
    pub l: Arc<Vec<f64>>,
    pub u: Arc<Vec<f64>>,
    pub sigma: f64,
    pub rho: f64,
    /// Factor of P + sigma I + rho A^T A, reused every step.
    pub solver: Arc<LinearSolver>,
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone)]
pub struct ScsData {
    pub p: Arc<Matrix>,
    pub a: Arc<Matrix>,
    pub c: Arc<Vec<f64>>,
    pub b: Arc<Vec<f64>>,
    pub cones: Vec<Cone>,
    /// -(c, b), added to the state before the linear solve.
    pub neg_q: Arc<Vec<f64>>,
    /// Factor of the quasi-definite [[P+I, A^T], [A, -I]], reused every step.
    pub solver: Arc<LinearSolver>,
    /// Free on the primal block, dual cones on the multiplier block.
    pub layout: Arc<ConeLayout>,
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone)]
pub enum OpKind {
    GradientDescent {
        p: Arc<Matrix>,
        c: Arc<Vec<f64>>,
        alpha: f64,
    },
    ProxGradient {
        p: Arc<Matrix>,
        c: Arc<Vec<f64>>,
        alpha: f64,
        reg: ProxSpec,
    },
    DouglasRachford {
        f: ProxSpec,
        g: ProxSpec,
    },
    Osqp(OsqpData),
    Scs(ScsData),
}

/// An instantiated fixed-point operator with cached factorizations.
///
/// Immutable after construction; `apply` is pure, so trajectories for many
/// instances can be evaluated from parallel workers.
#[derive(Debug, Clone)]
pub struct Operator {
    kind: OpKind,
    class: OperatorClass,
    dim: usize,
}

const EIG_ITERS: usize = 4000;
const EIG_SEED: u64 = 0x5eed_001;

fn gd_class(alpha: f64, lam_min: f64, lam_max: f64, prox_averaged: Option<f64>) -> OperatorClass {
    if lam_min > 1e-6 * lam_max {
        let beta = (1.0 - alpha * lam_min)
            .abs()
            .max((1.0 - alpha * lam_max).abs());
        OperatorClass::Contractive(beta.max(1e-15))
    } else {
        let grad_avg = alpha * lam_max / 2.0;
        match prox_averaged {
            // Composition of an a1-averaged and an a2-averaged map.
            Some(a2) => {
                let a1 = grad_avg;
                OperatorClass::Averaged((a1 + a2 - 2.0 * a1 * a2) / (1.0 - a1 * a2))
            }
            None => OperatorClass::Averaged(grad_avg),
        }
    }
}

impl Operator {
    /// T(z) = z - alpha (P z + c) for the quadratic objective (1/2) z'Pz + c'z.
    ///
    /// `extremes` supplies (lambda_min, lambda_max) of P when the caller knows
    /// them exactly; otherwise they are estimated by power iteration.
    pub fn gradient_descent(
        p: Arc<Matrix>,
        c: Vec<f64>,
        alpha: f64,
        extremes: Option<(f64, f64)>,
    ) -> Result<Operator> {
        let n = p.rows();
        if p.cols() != n || c.len() != n {
            return Err(Error::Shape {
                what: "gradient descent data",
                expected: n,
                got: c.len(),
            });
        }
        let (lam_min, lam_max) =
            extremes.unwrap_or_else(|| sym_eig_extremes(&p, EIG_ITERS, EIG_SEED));
        if lam_max <= 0.0 {
            return Err(Error::InvalidArgument(
                "gradient descent needs a nonzero PSD quadratic term".into(),
            ));
        }
        if alpha <= 0.0 || alpha >= 2.0 / lam_max {
            return Err(Error::InvalidArgument(format!(
                "step size {alpha} outside (0, {}): iteration would diverge",
                2.0 / lam_max
            )));
        }
        let class = gd_class(alpha, lam_min, lam_max, None);
        Ok(Operator {
            kind: OpKind::GradientDescent {
                p,
                c: Arc::new(c),
                alpha,
            },
            class,
            dim: n,
        })
    }

    /// T(z) = prox_{alpha g}(z - alpha (P z + c)).
    pub fn prox_gradient(
        p: Arc<Matrix>,
        c: Vec<f64>,
        reg: ProxSpec,
        alpha: f64,
        extremes: Option<(f64, f64)>,
    ) -> Result<Operator> {
        let n = p.rows();
        if p.cols() != n || c.len() != n {
            return Err(Error::Shape {
                what: "proximal gradient data",
                expected: n,
                got: c.len(),
            });
        }
        match reg {
            ProxSpec::L1 { .. } | ProxSpec::Box { .. } | ProxSpec::Nonneg => {}
            _ => {
                return Err(Error::Config(
                    "proximal gradient supports l1, box, and nonneg regularizers".into(),
                ))
            }
        }
        reg.check_dim(n)?;
        let (lam_min, lam_max) =
            extremes.unwrap_or_else(|| sym_eig_extremes(&p, EIG_ITERS, EIG_SEED));
        if lam_max <= 0.0 || alpha <= 0.0 || alpha >= 2.0 / lam_max {
            return Err(Error::InvalidArgument(format!(
                "step size {alpha} outside (0, 2/L) for L = {lam_max}"
            )));
        }
        let class = gd_class(alpha, lam_min, lam_max, Some(0.5));
        Ok(Operator {
            kind: OpKind::ProxGradient {
                p,
                c: Arc::new(c),
                alpha,
                reg,
            },
            class,
            dim: n,
        })
    }

    /// Douglas-Rachford splitting for min f(u) + g(u):
    /// T(z) = z + prox_f(2 prox_g(z) - z) - prox_g(z).
    ///
    /// Fixed points satisfy u* = prox_g(z*) solving the problem.
    pub fn douglas_rachford(f: ProxSpec, g: ProxSpec, dim: usize) -> Result<Operator> {
        f.check_dim(dim)?;
        g.check_dim(dim)?;
        Ok(Operator {
            kind: OpKind::DouglasRachford { f, g },
            class: OperatorClass::Averaged(0.5),
            dim,
        })
    }

    /// The QP splitting step for min (1/2) x'Px + c'x s.t. l <= Ax <= u.
    ///
    /// The state is z = (sqrt(sigma) x, sqrt(rho) v) with v = Ax + y/rho; in
    /// those coordinates the map is 1/2-averaged in the plain Euclidean norm.
    /// One step reconstructs w = clip(v), y = rho (v - w), solves
    /// (P + sigma I + rho A'A) x+ = sigma x - c + rho A'(2w - v), and sets
    /// v+ = A x+ + v - w. Fixed points map to KKT points of the QP (see
    /// [`Operator::kkt_check`]).
    pub fn osqp(
        p: Arc<Matrix>,
        a: Arc<Matrix>,
        c: Vec<f64>,
        l: Vec<f64>,
        u: Vec<f64>,
        sigma: f64,
        rho: f64,
    ) -> Result<Operator> {
        let n = p.rows();
        let m = a.rows();
        if p.cols() != n || c.len() != n {
            return Err(Error::Shape {
                what: "qp objective",
                expected: n,
                got: c.len(),
            });
        }
        if a.cols() != n {
            return Err(Error::Shape {
                what: "qp constraint matrix",
                expected: n,
                got: a.cols(),
            });
        }
        if l.len() != m || u.len() != m {
            return Err(Error::Shape {
                what: "qp bounds",
                expected: m,
                got: l.len().max(u.len()),
            });
        }
        if sigma <= 0.0 || rho <= 0.0 {
            return Err(Error::InvalidArgument(
                "sigma and rho must be positive".into(),
            ));
        }
        let mut q = a.gram();
        q.scale_in_place(rho);
        q.add_scaled(&p, 1.0);
        for i in 0..n {
            q.set(i, i, q.get(i, i) + sigma);
        }
        let solver = Arc::new(factorize(&q)?);
        Ok(Operator {
            kind: OpKind::Osqp(OsqpData {
                p,
                a,
                neg_c: Arc::new(numerics::scale(&c, -1.0)),
                c: Arc::new(c),
                l: Arc::new(l),
                u: Arc::new(u),
                sigma,
                rho,
                solver,
                n,
                m,
            }),
            class: OperatorClass::Averaged(0.5),
            dim: n + m,
        })
    }

    /// The conic splitting step for min (1/2) x'Px + c'x s.t. Ax + s = b,
    /// s in K, with K a product of zero, nonneg, and second-order cones.
    ///
    /// Douglas-Rachford on the monotone inclusion: solve (I + M) u~ = z - q
    /// with M = [[P, A'], [-A, 0]] and q = (c, b), project 2u~ - z onto
    /// R^n x K* (the multiplier block lands in the dual cones), and move
    /// z+ = z + u - u~. The solve reuses one LDL^T factorization of the
    /// symmetrized quasi-definite matrix [[P+I, A'], [A, -I]].
    pub fn scs(
        p: Arc<Matrix>,
        a: Arc<Matrix>,
        c: Vec<f64>,
        b: Vec<f64>,
        cones: Vec<Cone>,
    ) -> Result<Operator> {
        let n = p.rows();
        let m = a.rows();
        if p.cols() != n || c.len() != n {
            return Err(Error::Shape {
                what: "conic objective",
                expected: n,
                got: c.len(),
            });
        }
        if a.cols() != n && m > 0 {
            return Err(Error::Shape {
                what: "conic constraint matrix",
                expected: n,
                got: a.cols(),
            });
        }
        if b.len() != m {
            return Err(Error::Shape {
                what: "conic right-hand side",
                expected: m,
                got: b.len(),
            });
        }
        let cone_dim: usize = cones.iter().map(Cone::len).sum();
        if cone_dim != m {
            return Err(Error::Shape {
                what: "cone sizes",
                expected: m,
                got: cone_dim,
            });
        }
        for k in &cones {
            if let Cone::Soc(sz) = k {
                if *sz < 1 {
                    return Err(Error::Config("second-order cone needs dimension >= 1".into()));
                }
            }
        }
        // Symmetrized system matrix.
        let dim = n + m;
        let mut kt = Matrix::zeros(dim, dim);
        for i in 0..n {
            for j in 0..n {
                kt.set(i, j, p.get(i, j));
            }
            kt.set(i, i, kt.get(i, i) + 1.0);
        }
        for r in 0..m {
            for j in 0..n {
                let v = a.get(r, j);
                kt.set(n + r, j, v);
                kt.set(j, n + r, v);
            }
            kt.set(n + r, n + r, -1.0);
        }
        let solver = Arc::new(factorize(&kt)?);
        let mut segs = vec![ConeSeg::Free(n)];
        for k in &cones {
            segs.push(match *k {
                // Dual cones: zero -> free, nonneg and soc are self-dual.
                Cone::Zero(sz) => ConeSeg::Free(sz),
                Cone::Nonneg(sz) => ConeSeg::Nonneg(sz),
                Cone::Soc(sz) => ConeSeg::Soc(sz),
            });
        }
        let mut neg_q = numerics::scale(&c, -1.0);
        neg_q.extend(b.iter().map(|v| -v));
        Ok(Operator {
            kind: OpKind::Scs(ScsData {
                p,
                a,
                c: Arc::new(c),
                b: Arc::new(b),
                cones,
                neg_q: Arc::new(neg_q),
                solver,
                layout: Arc::new(ConeLayout { segs }),
                n,
                m,
            }),
            class: OperatorClass::Averaged(0.5),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class(&self) -> OperatorClass {
        self.class
    }

    pub fn kind(&self) -> &OpKind {
        &self.kind
    }

    /// Emit one operator step against an abstract evaluator.
    pub fn emit_step<E: StepEmitter>(&self, e: &mut E, z: &E::V) -> E::V {
        match &self.kind {
            OpKind::GradientDescent { p, c, alpha } => {
                let g = e.matvec(p, z);
                let g = e.add_const(&g, c);
                let s = e.scale(&g, *alpha);
                e.sub(z, &s)
            }
            OpKind::ProxGradient { p, c, alpha, reg } => {
                let g = e.matvec(p, z);
                let g = e.add_const(&g, c);
                let s = e.scale(&g, *alpha);
                let y = e.sub(z, &s);
                emit_prox(e, reg, &y, *alpha)
            }
            OpKind::DouglasRachford { f, g } => {
                let gz = emit_prox(e, g, z, 1.0);
                let two = e.scale(&gz, 2.0);
                let refl = e.sub(&two, z);
                let fz = emit_prox(e, f, &refl, 1.0);
                let diff = e.sub(&fz, &gz);
                e.add(z, &diff)
            }
            OpKind::Osqp(d) => {
                let ssig = d.sigma.sqrt();
                let srho = d.rho.sqrt();
                let zx = e.slice(z, 0, d.n);
                let zv = e.slice(z, d.n, d.m);
                let x = e.scale(&zx, 1.0 / ssig);
                let v = e.scale(&zv, 1.0 / srho);
                let w = e.box_clip(&v, &d.l, &d.u);
                // rhs = sigma x - c + rho A'(2w - v)
                let w2 = e.scale(&w, 2.0);
                let t = e.sub(&w2, &v);
                let at = e.matvec_t(&d.a, &t);
                let sx = e.scale(&x, d.sigma);
                let sxc = e.add_const(&sx, &d.neg_c);
                let rat = e.scale(&at, d.rho);
                let rhs = e.add(&sxc, &rat);
                let x1 = e.lin_solve(&d.solver, &rhs);
                let ax1 = e.matvec(&d.a, &x1);
                let vw = e.sub(&v, &w);
                let v1 = e.add(&ax1, &vw);
                let ox = e.scale(&x1, ssig);
                let ov = e.scale(&v1, srho);
                e.concat(&ox, &ov)
            }
            OpKind::Scs(d) => {
                let w = e.add_const(z, &d.neg_q);
                let wx = e.slice(&w, 0, d.n);
                let wy = e.slice(&w, d.n, d.m);
                let nwy = e.scale(&wy, -1.0);
                let rhs = e.concat(&wx, &nwy);
                let ut = e.lin_solve(&d.solver, &rhs);
                let two = e.scale(&ut, 2.0);
                let refl = e.sub(&two, z);
                let u = e.cone_project(&refl, &d.layout);
                let diff = e.sub(&u, &ut);
                e.add(z, &diff)
            }
        }
    }

    /// One exact operator step. Fails fast on non-finite input.
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(Error::Shape {
                what: "operator state",
                expected: self.dim,
                got: z.len(),
            });
        }
        if !all_finite(z) {
            return Err(Error::NonFinite("operator input"));
        }
        Ok(self.emit_step(&mut DirectEval, &z.to_vec()))
    }

    /// ||T(z) - z||_2.
    pub fn fp_residual(&self, z: &[f64]) -> Result<f64> {
        let tz = self.apply(z)?;
        Ok(norm(&sub(&tz, z)))
    }

    /// Iterate from `z0` until the residual drops below `tol` or `cap` steps.
    /// Returns (point, residual, steps, capped).
    pub fn iterate(&self, z0: &[f64], tol: f64, cap: usize) -> Result<(Vec<f64>, f64, usize, bool)> {
        let mut z = z0.to_vec();
        for it in 0..cap {
            let tz = self.apply(&z)?;
            let r = norm(&sub(&tz, &z));
            if r <= tol {
                return Ok((z, r, it, false));
            }
            z = tz;
        }
        let r = self.fp_residual(&z)?;
        Ok((z, r, cap, r > tol))
    }

    /// Clone a conic splitting operator with new (c, b) data, reusing the
    /// cached factorization and cone layout. Families where only the
    /// right-hand sides depend on theta instantiate through this.
    pub fn scs_replace_rhs(&self, c: Vec<f64>, b: Vec<f64>) -> Result<Operator> {
        let d = match &self.kind {
            OpKind::Scs(d) => d,
            _ => {
                return Err(Error::InvalidArgument(
                    "scs_replace_rhs on a non-conic operator".into(),
                ))
            }
        };
        if c.len() != d.n || b.len() != d.m {
            return Err(Error::Shape {
                what: "conic rhs replacement",
                expected: d.n + d.m,
                got: c.len() + b.len(),
            });
        }
        let mut neg_q = numerics::scale(&c, -1.0);
        neg_q.extend(b.iter().map(|v| -v));
        let mut data = d.clone();
        data.c = Arc::new(c);
        data.b = Arc::new(b);
        data.neg_q = Arc::new(neg_q);
        Ok(Operator {
            kind: OpKind::Scs(data),
            class: self.class,
            dim: self.dim,
        })
    }

    /// Recover (x, w, y) from a QP splitting state.
    pub fn osqp_extract(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let d = match &self.kind {
            OpKind::Osqp(d) => d,
            _ => {
                return Err(Error::InvalidArgument(
                    "osqp_extract on a non-QP-splitting operator".into(),
                ))
            }
        };
        let x = numerics::scale(&z[..d.n], 1.0 / d.sigma.sqrt());
        let v = numerics::scale(&z[d.n..], 1.0 / d.rho.sqrt());
        let w = project_box(&v, &d.l, &d.u)?;
        let y: Vec<f64> = v.iter().zip(&w).map(|(vi, wi)| d.rho * (vi - wi)).collect();
        Ok((x, w, y))
    }

    /// Recover (x, y, s) from a conic splitting state.
    pub fn scs_extract(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let d = match &self.kind {
            OpKind::Scs(d) => d,
            _ => {
                return Err(Error::InvalidArgument(
                    "scs_extract on a non-conic operator".into(),
                ))
            }
        };
        let mut e = DirectEval;
        let w = numerics::add(z, &d.neg_q);
        let mut rhs = w[..d.n].to_vec();
        rhs.extend(w[d.n..].iter().map(|v| -v));
        let ut = d.solver.solve(&rhs);
        let refl = sub(&numerics::scale(&ut, 2.0), z);
        let u = e.cone_project(&refl, &d.layout);
        let x = u[..d.n].to_vec();
        let y = u[d.n..].to_vec();
        let s = sub(&d.b, &d.a.matvec(&x));
        Ok((x, y, s))
    }

    /// Check that a state reconstructs a KKT point of the underlying problem
    /// within `tol` (residuals are scaled by the magnitude of the terms they
    /// compare). Only the QP and conic splitting operators support this.
    pub fn kkt_check(&self, z: &[f64], tol: f64) -> Result<bool> {
        match &self.kind {
            OpKind::Osqp(d) => {
                let (x, w, y) = self.osqp_extract(z)?;
                let px = d.p.matvec(&x);
                let aty = d.a.matvec_t(&y);
                let scale_stat = 1.0 + norm(&px).max(norm(&aty)).max(norm(&d.c));
                let stat: f64 = px
                    .iter()
                    .zip(d.c.iter())
                    .zip(&aty)
                    .map(|((p, c), a)| (p + c + a).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if stat > tol * scale_stat {
                    return Ok(false);
                }
                let ax = d.a.matvec(&x);
                let prim = norm(&sub(&ax, &w));
                if prim > tol * (1.0 + norm(&ax)) {
                    return Ok(false);
                }
                let ytol = tol * (1.0 + norm(&y));
                for i in 0..d.m {
                    if y[i] > ytol && (d.u[i] - w[i]).abs() > tol * (1.0 + d.u[i].abs()) {
                        return Ok(false);
                    }
                    if y[i] < -ytol && (w[i] - d.l[i]).abs() > tol * (1.0 + d.l[i].abs()) {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            OpKind::Scs(d) => {
                let (x, y, s) = self.scs_extract(z)?;
                let px = d.p.matvec(&x);
                let aty = d.a.matvec_t(&y);
                let scale_stat = 1.0 + norm(&px).max(norm(&aty)).max(norm(&d.c));
                let stat: f64 = px
                    .iter()
                    .zip(d.c.iter())
                    .zip(&aty)
                    .map(|((p, c), a)| (p + c + a).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if stat > tol * scale_stat {
                    return Ok(false);
                }
                // Primal cone membership, dual cone membership, and the gap.
                let mut off = 0;
                let mut prim_sq = 0.0;
                let mut dual_sq = 0.0;
                for k in &d.cones {
                    let seg_s = &s[off..off + k.len()];
                    let seg_y = &y[off..off + k.len()];
                    match k {
                        Cone::Zero(_) => {
                            prim_sq += numerics::dot(seg_s, seg_s);
                        }
                        Cone::Nonneg(_) => {
                            for v in seg_s {
                                prim_sq += v.min(0.0).powi(2);
                            }
                            for v in seg_y {
                                dual_sq += v.min(0.0).powi(2);
                            }
                        }
                        Cone::Soc(_) => {
                            let ps = project_soc(seg_s);
                            let py = project_soc(seg_y);
                            prim_sq += numerics::dot(
                                &sub(seg_s, &ps),
                                &sub(seg_s, &ps),
                            );
                            dual_sq += numerics::dot(
                                &sub(seg_y, &py),
                                &sub(seg_y, &py),
                            );
                        }
                    }
                    off += k.len();
                }
                if prim_sq.sqrt() > tol * (1.0 + norm(&s)) {
                    return Ok(false);
                }
                if dual_sq.sqrt() > tol * (1.0 + norm(&y)) {
                    return Ok(false);
                }
                let gap = numerics::dot(&s, &y).abs();
                Ok(gap <= tol * (1.0 + norm(&s) * norm(&y)))
            }
            _ => Err(Error::InvalidArgument(
                "kkt_check applies to the QP and conic splitting operators".into(),
            )),
        }
    }
}

fn emit_prox<E: StepEmitter>(e: &mut E, spec: &ProxSpec, v: &E::V, weight: f64) -> E::V {
    match spec {
        ProxSpec::ZeroFn => v.clone(),
        ProxSpec::L1 { lambda } => e.soft_threshold(v, weight * lambda),
        ProxSpec::Box { l, u } => e.box_clip(v, l, u),
        ProxSpec::Nonneg => e.nonneg_clip(v),
        ProxSpec::Quadratic { neg_c, solver, .. } => {
            debug_assert!(
                (weight - 1.0).abs() < 1e-15,
                "quadratic prox is cached for unit weight"
            );
            let t = e.add_const(v, neg_c);
            e.lin_solve(solver, &t)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::add;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn diag_op(d: &[f64], c: &[f64], alpha: f64) -> Operator {
        let lam_max = d.iter().cloned().fold(f64::MIN, f64::max);
        let lam_min = d.iter().cloned().fold(f64::MAX, f64::min);
        Operator::gradient_descent(
            Arc::new(Matrix::diag(d)),
            c.to_vec(),
            alpha,
            Some((lam_min, lam_max)),
        )
        .unwrap()
    }

    #[test]
    fn gd_scalar_step() {
        let op = diag_op(&[2.0], &[0.0], 0.25);
        assert_eq!(op.apply(&[1.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn gd_fixed_point_is_unconstrained_optimum() {
        let p = Matrix::from_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]);
        let c = vec![1.0, -2.0];
        // z* = -P^{-1} c
        let f = factorize(&p).unwrap();
        let zstar = numerics::scale(&f.solve(&c), -1.0);
        let op = Operator::gradient_descent(Arc::new(p), c, 0.3, None).unwrap();
        let out = op.apply(&zstar).unwrap();
        assert!(norm(&sub(&out, &zstar)) < 1e-12);
    }

    #[test]
    fn gd_contraction_factor_matches_spectrum() {
        let op = diag_op(&[100.0, 1.0], &[0.0, 0.0], 2.0 / 101.0);
        match op.class() {
            OperatorClass::Contractive(beta) => {
                assert!((beta - 99.0 / 101.0).abs() < 1e-12);
            }
            other => panic!("expected contractive class, got {other:?}"),
        }
    }

    #[test]
    fn gd_rejects_divergent_step() {
        let p = Arc::new(Matrix::diag(&[2.0]));
        assert!(Operator::gradient_descent(p.clone(), vec![0.0], 1.0, Some((2.0, 2.0))).is_err());
        assert!(Operator::gradient_descent(p, vec![0.0], -0.1, Some((2.0, 2.0))).is_err());
    }

    #[test]
    fn proxgd_one_step_hand_evaluated() {
        // Q = diag(10, 1), nonneg projection, alpha = 2/11, start on the slow axis.
        let op = Operator::prox_gradient(
            Arc::new(Matrix::diag(&[10.0, 1.0])),
            vec![0.0, 0.0],
            ProxSpec::Nonneg,
            2.0 / 11.0,
            Some((1.0, 10.0)),
        )
        .unwrap();
        let d = 0.7;
        let out = op.apply(&[0.0, d]).unwrap();
        assert!((out[0]).abs() < 1e-15);
        assert!((out[1] - (1.0 - 2.0 / 11.0) * d).abs() < 1e-15);
    }

    #[test]
    fn proxgd_zero_fixed_point() {
        let op = Operator::prox_gradient(
            Arc::new(Matrix::diag(&[10.0, 1.0])),
            vec![0.0, 0.0],
            ProxSpec::Nonneg,
            2.0 / 11.0,
            Some((1.0, 10.0)),
        )
        .unwrap();
        assert_eq!(op.apply(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn proxgd_rejects_unsupported_regularizer() {
        let err = Operator::prox_gradient(
            Arc::new(Matrix::diag(&[1.0])),
            vec![0.0],
            ProxSpec::ZeroFn,
            0.5,
            Some((1.0, 1.0)),
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn lasso_prox_gradient_fixed_point() {
        // Small lasso; iterate far, then check the soft-threshold optimality
        // equation directly.
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let m = 12;
        let n = 8;
        let a = Matrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..3.0)).collect();
        let gram = Arc::new(a.gram());
        let lam_max = numerics::spectral_norm(&gram, 2000, 1);
        let alpha = 1.0 / lam_max;
        let lambda = 0.4;
        let c = numerics::scale(&a.matvec_t(&b), -1.0);
        let op = Operator::prox_gradient(
            gram.clone(),
            c.clone(),
            ProxSpec::L1 { lambda },
            alpha,
            Some((0.0, lam_max)),
        )
        .unwrap();
        let (z, res, _, capped) = op.iterate(&vec![0.0; n], 1e-12, 200_000).unwrap();
        assert!(!capped, "lasso iteration did not converge, residual {res}");
        // z = soft(z - alpha A'(Az - b), alpha lambda)
        let grad = add(&gram.matvec(&z), &c);
        let inner = sub(&z, &numerics::scale(&grad, alpha));
        let re = soft_threshold(&inner, alpha * lambda).unwrap();
        assert!(norm(&sub(&re, &z)) < 1e-8);
        let out = op.apply(&z).unwrap();
        assert!(norm(&sub(&out, &z)) < 1e-10);
    }

    #[test]
    fn dr_point_indicators() {
        // f = g = indicator of {0}: every state is already a fixed point and
        // its solution shadow prox_g(z) is the unique feasible point 0.
        let op = Operator::douglas_rachford(
            ProxSpec::zero_point(2),
            ProxSpec::zero_point(2),
            2,
        )
        .unwrap();
        let z = vec![1.5, -3.0];
        assert_eq!(op.apply(&z).unwrap(), z);
        let mut e = DirectEval;
        let shadow = emit_prox(&mut e, &ProxSpec::zero_point(2), &z, 1.0);
        assert_eq!(shadow, vec![0.0, 0.0]);
    }

    #[test]
    fn dr_identity_proxes() {
        let op = Operator::douglas_rachford(ProxSpec::ZeroFn, ProxSpec::ZeroFn, 3).unwrap();
        let z = vec![0.4, -1.0, 2.0];
        assert_eq!(op.apply(&z).unwrap(), z);
    }

    #[test]
    fn dr_scalar_fixed_point_brute_force() {
        // f = indicator(x >= 0), g = (1/2)(x-3)^2. Scan T(z) - z over a grid;
        // the root sits where prox_g(z) = 3.
        let g = ProxSpec::quadratic(Arc::new(Matrix::diag(&[1.0])), &[-3.0]).unwrap();
        let op = Operator::douglas_rachford(ProxSpec::Nonneg, g.clone(), 1).unwrap();
        let mut best = (f64::MAX, f64::NAN);
        let mut z = -10.0;
        while z <= 10.0 {
            let r = (op.apply(&[z]).unwrap()[0] - z).abs();
            if r < best.0 {
                best = (r, z);
            }
            z += 1e-3;
        }
        let zfix = best.1;
        let mut e = DirectEval;
        let shadow = emit_prox(&mut e, &g, &vec![zfix], 1.0);
        assert!((shadow[0] - 3.0).abs() < 1e-2, "shadow {} not at 3", shadow[0]);
    }

    fn loose_box_qp() -> (Operator, Vec<f64>) {
        // Unconstrained QP embedded with a very loose box; the fixed point's
        // x block must be -P^{-1} c.
        let p = Matrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let c = vec![1.0, -2.0];
        let f = factorize(&p).unwrap();
        let xstar = numerics::scale(&f.solve(&c), -1.0);
        let a = Matrix::identity(2);
        let op = Operator::osqp(
            Arc::new(p),
            Arc::new(a),
            c,
            vec![-1e6; 2],
            vec![1e6; 2],
            1e-6,
            0.1,
        )
        .unwrap();
        (op, xstar)
    }

    #[test]
    fn osqp_unconstrained_embedding() {
        let (op, xstar) = loose_box_qp();
        let (z, _, _, capped) = op.iterate(&vec![0.0; 4], 1e-12, 500_000).unwrap();
        assert!(!capped);
        let (x, _, _) = op.osqp_extract(&z).unwrap();
        assert!(norm(&sub(&x, &xstar)) <= 1e-8);
        // Re-applying at the fixed point stays put.
        let out = op.apply(&z).unwrap();
        assert!(norm(&sub(&out, &z)) <= 1e-10);
    }

    #[test]
    fn osqp_one_var_box_qp() {
        // min (1/2) x^2 s.t. 1 <= x <= 2 has x* = 1 with multiplier y* = -1.
        let op = Operator::osqp(
            Arc::new(Matrix::diag(&[1.0])),
            Arc::new(Matrix::identity(1)),
            vec![0.0],
            vec![1.0],
            vec![2.0],
            1e-6,
            0.1,
        )
        .unwrap();
        let (z, _, _, capped) = op.iterate(&[0.0, 0.0], 1e-12, 500_000).unwrap();
        assert!(!capped);
        let (x, _, y) = op.osqp_extract(&z).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-8);
        assert!((y[0] + 1.0).abs() < 1e-6);
        assert!(op.kkt_check(&z, 1e-6).unwrap());
        // A random far-away state is not a KKT point.
        assert!(!op.kkt_check(&[3.0, 17.0], 1e-6).unwrap());
    }

    #[test]
    fn scs_unconstrained_ridge() {
        // No constraints: minimizing (1/2)||x||^2 pins the x block at zero.
        let op = Operator::scs(
            Arc::new(Matrix::identity(3)),
            Arc::new(Matrix::zeros(0, 3)),
            vec![0.0; 3],
            vec![],
            vec![],
        )
        .unwrap();
        let (z, _, _, capped) = op.iterate(&[0.3, -2.0, 1.0], 1e-12, 100_000).unwrap();
        assert!(!capped);
        let (x, _, _) = op.scs_extract(&z).unwrap();
        assert!(norm(&x) < 1e-10);
    }

    #[test]
    fn scs_equality_constrained_ls_matches_kkt() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let f = Matrix::from_fn(10, 6, |_, _| rng.gen_range(-1.0..1.0));
        let gvec: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cmat = Matrix::from_fn(2, 6, |_, _| rng.gen_range(-1.0..1.0));
        let dvec: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = f.gram();
        let c = numerics::scale(&f.matvec_t(&gvec), -1.0);
        // KKT oracle via Schur complement: (C P^{-1} C') y = -C P^{-1} c - d.
        let pf = factorize(&p).unwrap();
        let pinv_c = pf.solve(&c);
        let mut schur = Matrix::zeros(2, 2);
        for i in 0..2 {
            let ci: Vec<f64> = (0..6).map(|j| cmat.get(i, j)).collect();
            let pci = pf.solve(&ci);
            for j in 0..2 {
                let cj: Vec<f64> = (0..6).map(|k| cmat.get(j, k)).collect();
                schur.set(i, j, numerics::dot(&cj, &pci));
            }
        }
        let rhs: Vec<f64> = (0..2)
            .map(|i| {
                -numerics::dot(
                    &(0..6).map(|j| cmat.get(i, j)).collect::<Vec<f64>>(),
                    &pinv_c,
                ) - dvec[i]
            })
            .collect();
        let y_kkt = factorize(&schur).unwrap().solve(&rhs);
        let mut xrhs = numerics::scale(&c, -1.0);
        let cty = cmat.matvec_t(&y_kkt);
        xrhs = sub(&xrhs, &cty);
        let x_kkt = pf.solve(&xrhs);

        let op = Operator::scs(
            Arc::new(p),
            Arc::new(cmat),
            c,
            dvec,
            vec![Cone::Zero(2)],
        )
        .unwrap();
        let (z, _, _, capped) = op.iterate(&vec![0.0; 8], 1e-12, 500_000).unwrap();
        assert!(!capped);
        let (x, y, _) = op.scs_extract(&z).unwrap();
        assert!(norm(&sub(&x, &x_kkt)) < 1e-8);
        assert!(norm(&sub(&y, &y_kkt)) < 1e-6);
        assert!(op.kkt_check(&z, 1e-6).unwrap());
        let bad: Vec<f64> = (0..8).map(|_| rng.gen_range(1.0..4.0)).collect();
        assert!(!op.kkt_check(&bad, 1e-6).unwrap());
        // Fixed point stays fixed to tight tolerance.
        let out = op.apply(&z).unwrap();
        assert!(norm(&sub(&out, &z)) <= 1e-10);
    }

    #[test]
    fn apply_rejects_nan() {
        let op = diag_op(&[1.0], &[0.0], 0.5);
        assert!(matches!(
            op.apply(&[f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }
}
