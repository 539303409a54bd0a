//! Parametric problem families: generation, operator instantiation, and
//! dataset files.
//!
//! Each family fixes shared data (matrices, dynamics, penalties) once per
//! seed; only the parameter vector theta varies across instances. Instance
//! sampling derives one RNG per instance from (seed, stream, index), so
//! generation is order-independent and train/test streams never collide.

use crate::error::{Error, Result};
use crate::numerics::{norm, spectral_norm, Matrix};
use crate::operators::{Cone, Operator, ProxSpec};
use crate::seeds;
use crate::training::{GroundTruth, TrainSample};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    UnconstrainedQp,
    Lasso,
    RobustKalman,
    RobustLs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleProfile {
    /// Shrunk dimensions for laptop-scale runs; distributions unchanged.
    Desk,
    /// The dimensions quoted with each numerical example.
    Paper,
}

/// Per-time-step block structure of a sequential family's state, used by the
/// previous-solution warm start.
#[derive(Debug, Clone)]
pub struct BlockGroup {
    pub offset: usize,
    pub block_len: usize,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub groups: Vec<BlockGroup>,
    pub dim: usize,
}

impl BlockLayout {
    /// Shift every group forward one time index, duplicating the final block.
    pub fn shift(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.dim, "block layout dimension mismatch");
        let mut out = z.to_vec();
        for g in &self.groups {
            for t in 0..g.count.saturating_sub(1) {
                let dst = g.offset + t * g.block_len;
                let src = g.offset + (t + 1) * g.block_len;
                out.copy_within(src..src + g.block_len, dst);
            }
            if g.count > 0 {
                let last = g.offset + (g.count - 1) * g.block_len;
                let prev_last = z.len().min(last + g.block_len);
                out[last..prev_last].copy_from_slice(&z[last..prev_last]);
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Family data
// ---------------------------------------------------------------------------

const QP_DIM: usize = 20;
const QP_FAST: f64 = 100.0;
const QP_SLOW: f64 = 1.0;
/// Sampling spread multipliers: the fast block of the optimum swings four
/// orders of magnitude harder than the slow block.
const QP_PSI_FAST: f64 = 10_000.0;

const LASSO_LAMBDA: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct KalmanParams {
    pub horizon: usize,
    pub mu: f64,
    pub rho: f64,
    pub dt: f64,
    pub damping: f64,
    pub noise_std: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        KalmanParams {
            horizon: 50,
            mu: 2.0,
            rho: 2.0,
            dt: 0.5,
            damping: 0.05,
            noise_std: 0.1,
        }
    }
}

impl KalmanParams {
    pub fn dynamics(&self) -> (Matrix, Matrix, Matrix) {
        let dt = self.dt;
        let g = self.damping;
        let drift = (1.0 - (g / 2.0) * dt) * dt;
        let decay = 1.0 - g * dt;
        let a = Matrix::from_rows(&[
            vec![1.0, 0.0, drift, 0.0],
            vec![0.0, 1.0, 0.0, drift],
            vec![0.0, 0.0, decay, 0.0],
            vec![0.0, 0.0, 0.0, decay],
        ]);
        let hdt2 = 0.5 * dt * dt;
        let b = Matrix::from_rows(&[
            vec![hdt2, 0.0],
            vec![0.0, hdt2],
            vec![dt, 0.0],
            vec![0.0, dt],
        ]);
        let c = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
        ]);
        (a, b, c)
    }
}

#[derive(Debug, Clone)]
struct QpData {
    p: Arc<Matrix>,
    alpha: f64,
}

#[derive(Debug, Clone)]
struct LassoData {
    a: Arc<Matrix>,
    gram: Arc<Matrix>,
    lam_max: f64,
    alpha: f64,
    lambda: f64,
    m: usize,
    n: usize,
}

#[derive(Debug, Clone)]
struct KalmanData {
    params: KalmanParams,
    template: Operator,
    /// Offset of the observation rows inside the conic right-hand side.
    obs_offset: usize,
    b_template: Vec<f64>,
    c_template: Vec<f64>,
    layout: BlockLayout,
}

#[derive(Debug, Clone)]
struct RobustLsData {
    a_hat: Arc<Matrix>,
    template: Operator,
    b_offset: usize,
    b_template: Vec<f64>,
    c_template: Vec<f64>,
    rho: f64,
    m: usize,
}

#[derive(Debug, Clone)]
enum FamilyData {
    UnconstrainedQp(QpData),
    Lasso(LassoData),
    RobustKalman(Box<KalmanData>),
    RobustLs(Box<RobustLsData>),
}

/// A problem family with its shared data instantiated.
#[derive(Debug, Clone)]
pub struct Family {
    kind: FamilyKind,
    seed: u64,
    dims: Vec<usize>,
    data: FamilyData,
}

impl Family {
    /// The family at its standard dimensions for a scale profile.
    pub fn standard(kind: FamilyKind, scale: ScaleProfile, seed: u64) -> Result<Family> {
        match (kind, scale) {
            (FamilyKind::UnconstrainedQp, _) => Family::unconstrained_qp(seed),
            (FamilyKind::Lasso, ScaleProfile::Paper) => Family::lasso(500, 500, seed),
            (FamilyKind::Lasso, ScaleProfile::Desk) => Family::lasso(100, 100, seed),
            (FamilyKind::RobustKalman, ScaleProfile::Paper) => Family::robust_kalman(50, seed),
            (FamilyKind::RobustKalman, ScaleProfile::Desk) => Family::robust_kalman(10, seed),
            (FamilyKind::RobustLs, ScaleProfile::Paper) => Family::robust_ls(500, 800, seed),
            (FamilyKind::RobustLs, ScaleProfile::Desk) => Family::robust_ls(50, 80, seed),
        }
    }

    /// Default train/test instance counts per scale.
    pub fn standard_counts(kind: FamilyKind, scale: ScaleProfile) -> (usize, usize) {
        match (kind, scale) {
            // This stylized family trains on 100 problems at either scale.
            (FamilyKind::UnconstrainedQp, ScaleProfile::Paper) => (100, 1000),
            (FamilyKind::UnconstrainedQp, ScaleProfile::Desk) => (100, 200),
            (_, ScaleProfile::Paper) => (10_000, 1000),
            (_, ScaleProfile::Desk) => (1000, 200),
        }
    }

    /// n = 20 quadratic with a fast diagonal block of 100s and a slow block
    /// of 1s; theta is the linear term. The step size 1/L makes the fast
    /// block converge in one step while the slow block decays at 0.99 per
    /// step, which is what separates unrolled training from the decoupled
    /// k = 0 variant.
    pub fn unconstrained_qp(seed: u64) -> Result<Family> {
        let mut d = vec![QP_FAST; QP_DIM / 2];
        d.extend(vec![QP_SLOW; QP_DIM / 2]);
        Ok(Family {
            kind: FamilyKind::UnconstrainedQp,
            seed,
            dims: vec![],
            data: FamilyData::UnconstrainedQp(QpData {
                p: Arc::new(Matrix::diag(&d)),
                alpha: 1.0 / QP_FAST,
            }),
        })
    }

    /// Lasso with a shared iid standard Gaussian design matrix and l1 weight
    /// 10; theta is the right-hand side, sampled U[0, 30].
    pub fn lasso(m: usize, n: usize, seed: u64) -> Result<Family> {
        let mut rng = seeds::rng(seed, "lasso/design");
        let normal = Normal::new(0.0, 1.0).unwrap();
        let a = Matrix::from_fn(m, n, |_, _| normal.sample(&mut rng));
        let gram = Arc::new(a.gram());
        let lam_max = spectral_norm(&gram, 4000, seeds::derive(seed, "lasso/power"));
        Ok(Family {
            kind: FamilyKind::Lasso,
            seed,
            dims: vec![m, n],
            data: FamilyData::Lasso(LassoData {
                a: Arc::new(a),
                gram,
                lam_max,
                alpha: 1.0 / lam_max,
                lambda: LASSO_LAMBDA,
                m,
                n,
            }),
        })
    }

    /// Robust state estimation over a horizon; theta is the rotated
    /// observation sequence and each instance is a second-order cone program.
    pub fn robust_kalman(horizon: usize, seed: u64) -> Result<Family> {
        let params = KalmanParams {
            horizon,
            ..KalmanParams::default()
        };
        let prob = huber_socp_reformulate(&vec![0.0; 2 * horizon], &params)?;
        let template = Operator::scs(
            Arc::new(prob.p),
            Arc::new(prob.a),
            prob.c.clone(),
            prob.b.clone(),
            prob.cones,
        )?;
        let layout = kalman_block_layout(&params, template.dim());
        Ok(Family {
            kind: FamilyKind::RobustKalman,
            seed,
            dims: vec![horizon],
            data: FamilyData::RobustKalman(Box::new(KalmanData {
                obs_offset: 4 * params.horizon,
                b_template: prob.b,
                c_template: prob.c,
                params,
                template,
                layout,
            })),
        })
    }

    /// Non-negative least squares under worst-case matrix perturbations of
    /// spectral norm at most 4, as a second-order cone program; theta is the
    /// right-hand side, sampled U[1, 2].
    pub fn robust_ls(m: usize, n: usize, seed: u64) -> Result<Family> {
        let mut rng = seeds::rng(seed, "robust_ls/design");
        let a_hat = Matrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let rho = 4.0;
        let nv = n + 2; // (x, u, v)
        let mut a_scs = Matrix::zeros(n + (m + 1) + (n + 1), nv);
        let mut b = vec![0.0; a_scs.rows()];
        // x >= 0
        for i in 0..n {
            a_scs.set(i, i, -1.0);
        }
        // ||A x - b|| <= u: s = (u, b - A x)
        a_scs.set(n, n, -1.0);
        for i in 0..m {
            for j in 0..n {
                a_scs.set(n + 1 + i, j, a_hat.get(i, j));
            }
        }
        let b_offset = n + 1;
        // ||x|| <= v: s = (v, x)
        a_scs.set(n + 1 + m, n + 1, -1.0);
        for j in 0..n {
            a_scs.set(n + 1 + m + 1 + j, j, -1.0);
        }
        let mut c = vec![0.0; nv];
        c[n] = 1.0;
        c[n + 1] = rho;
        let cones = vec![Cone::Nonneg(n), Cone::Soc(m + 1), Cone::Soc(n + 1)];
        let template = Operator::scs(
            Arc::new(Matrix::zeros(nv, nv)),
            Arc::new(a_scs),
            c.clone(),
            b.clone(),
            cones,
        )?;
        b.clear();
        Ok(Family {
            kind: FamilyKind::RobustLs,
            seed,
            dims: vec![m, n],
            data: FamilyData::RobustLs(Box::new(RobustLsData {
                a_hat: Arc::new(a_hat),
                b_template: vec![0.0; template.dim() - nv],
                c_template: c,
                template,
                b_offset,
                rho,
                m,
            })),
        })
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn theta_dim(&self) -> usize {
        match &self.data {
            FamilyData::UnconstrainedQp(_) => QP_DIM,
            FamilyData::Lasso(d) => d.m,
            FamilyData::RobustKalman(d) => 2 * d.params.horizon,
            FamilyData::RobustLs(d) => d.m,
        }
    }

    pub fn state_dim(&self) -> usize {
        match &self.data {
            FamilyData::UnconstrainedQp(_) => QP_DIM,
            FamilyData::Lasso(d) => d.n,
            FamilyData::RobustKalman(d) => d.template.dim(),
            FamilyData::RobustLs(d) => d.template.dim(),
        }
    }

    /// Evaluation horizon default: long for the proximal-gradient family
    /// whose curves stay informative out to 500 steps, shorter otherwise.
    pub fn default_t_max(&self) -> usize {
        match self.kind {
            FamilyKind::Lasso => 500,
            _ => 250,
        }
    }

    /// Sequential per-time-step structure, where the family has one.
    pub fn block_layout(&self) -> Option<&BlockLayout> {
        match &self.data {
            FamilyData::RobustKalman(d) => Some(&d.layout),
            _ => None,
        }
    }

    /// Shared design matrix and perturbation radius of the robust
    /// least-squares family.
    pub fn robust_ls_design(&self) -> Option<(&Matrix, f64)> {
        match &self.data {
            FamilyData::RobustLs(d) => Some((&d.a_hat, d.rho)),
            _ => None,
        }
    }

    /// Sample instance parameters; `stream` partitions seed space (train and
    /// test streams are disjoint by construction).
    pub fn sample_thetas(&self, count: usize, stream: &str) -> Vec<Vec<f64>> {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = seeds::rng(self.seed, &format!("{stream}/{i}"));
                match &self.data {
                    FamilyData::UnconstrainedQp(_) => (0..QP_DIM)
                        .map(|j| {
                            let psi = if j < QP_DIM / 2 { QP_PSI_FAST } else { 1.0 };
                            psi * rng.gen_range(-10.0..10.0)
                        })
                        .collect(),
                    FamilyData::Lasso(d) => {
                        (0..d.m).map(|_| rng.gen_range(0.0..30.0)).collect()
                    }
                    FamilyData::RobustKalman(d) => {
                        let obs = simulate_kalman_observations(&d.params, &mut rng);
                        let phi = final_observation_angle(&obs);
                        rotate_observations(&obs, -phi)
                    }
                    FamilyData::RobustLs(d) => {
                        (0..d.m).map(|_| rng.gen_range(1.0..2.0)).collect()
                    }
                }
            })
            .collect()
    }

    /// Build the fixed-point operator for one parameter vector.
    pub fn instantiate(&self, theta: &[f64]) -> Result<Operator> {
        if theta.len() != self.theta_dim() {
            return Err(Error::Shape {
                what: "family parameter",
                expected: self.theta_dim(),
                got: theta.len(),
            });
        }
        match &self.data {
            FamilyData::UnconstrainedQp(d) => Operator::gradient_descent(
                d.p.clone(),
                theta.to_vec(),
                d.alpha,
                Some((QP_SLOW, QP_FAST)),
            ),
            FamilyData::Lasso(d) => {
                let c = crate::numerics::scale(&d.a.matvec_t(theta), -1.0);
                Operator::prox_gradient(
                    d.gram.clone(),
                    c,
                    ProxSpec::L1 { lambda: d.lambda },
                    d.alpha,
                    Some((0.0, d.lam_max)),
                )
            }
            FamilyData::RobustKalman(d) => {
                let mut b = d.b_template.clone();
                b[d.obs_offset..d.obs_offset + theta.len()].copy_from_slice(theta);
                d.template.scs_replace_rhs(d.c_template.clone(), b)
            }
            FamilyData::RobustLs(d) => {
                let mut b = d.b_template.clone();
                b[d.b_offset..d.b_offset + d.m].copy_from_slice(theta);
                d.template.scs_replace_rhs(d.c_template.clone(), b)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Robust Kalman pieces
// ---------------------------------------------------------------------------

/// Simulate one noisy trajectory from the origin and return the flat
/// observation sequence (y_0, ..., y_{T-1}).
pub fn simulate_kalman_observations(params: &KalmanParams, rng: &mut impl Rng) -> Vec<f64> {
    let (a, b, c) = params.dynamics();
    let noise = Normal::new(0.0, params.noise_std).unwrap();
    let mut x = vec![0.0; 4];
    let mut obs = Vec::with_capacity(2 * params.horizon);
    for _ in 0..params.horizon {
        let y = c.matvec(&x);
        obs.push(y[0] + noise.sample(rng));
        obs.push(y[1] + noise.sample(rng));
        let w = vec![noise.sample(rng), noise.sample(rng)];
        let ax = a.matvec(&x);
        let bw = b.matvec(&w);
        x = crate::numerics::add(&ax, &bw);
    }
    obs
}

/// Angle of the final observation in the plane.
pub fn final_observation_angle(obs: &[f64]) -> f64 {
    let n = obs.len();
    obs[n - 1].atan2(obs[n - 2])
}

/// Rotate every planar observation by `phi`.
pub fn rotate_observations(obs: &[f64], phi: f64) -> Vec<f64> {
    let (s, c) = phi.sin_cos();
    obs.chunks(2)
        .flat_map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]])
        .collect()
}

/// Conic problem data (objective, constraints, cones).
#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub p: Matrix,
    pub a: Matrix,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

/// Reformulate the robust estimation objective
/// sum_{t=1..T-1} ||w_t||^2 + mu * huber_rho(||v_t||)
/// subject to the dynamics and observation equations as a second-order cone
/// program. The Huber term enters through its epigraph: for each penalized
/// time step, scalars (r_t, q_t) with ||v_t|| <= r_t + q_t and q_t >= 0
/// contribute mu (r_t^2 + 2 rho q_t), whose minimum over the split equals
/// the Huber value of ||v_t||.
pub fn huber_socp_reformulate(observations: &[f64], params: &KalmanParams) -> Result<ConicProblem> {
    let t_len = params.horizon;
    if observations.len() != 2 * t_len {
        return Err(Error::Shape {
            what: "observation sequence",
            expected: 2 * t_len,
            got: observations.len(),
        });
    }
    if params.mu <= 0.0 || params.rho <= 0.0 {
        return Err(Error::InvalidArgument(
            "huber weights must be positive".into(),
        ));
    }
    let (amat, bmat, cmat) = params.dynamics();
    let nx = 4;
    let no = 2;
    let nu = 2;
    let pen = t_len - 1; // penalized steps t = 1..T-1

    // Variable slots.
    let off_x = 0;
    let off_w = off_x + nx * (t_len + 1);
    let off_v = off_w + nu * t_len;
    let off_r = off_v + no * t_len;
    let off_q = off_r + pen;
    let nvar = off_q + pen;

    // Constraint rows.
    let row_dyn = 0;
    let row_obs = row_dyn + nx * t_len;
    let row_q = row_obs + no * t_len;
    let row_soc = row_q + pen;
    let mrow = row_soc + (no + 1) * pen;

    let mut a = Matrix::zeros(mrow, nvar);
    let mut b = vec![0.0; mrow];

    // x_{t+1} - A x_t - B w_t = 0
    for t in 0..t_len {
        for i in 0..nx {
            let r = row_dyn + t * nx + i;
            a.set(r, off_x + (t + 1) * nx + i, 1.0);
            for j in 0..nx {
                a.set(r, off_x + t * nx + j, -amat.get(i, j));
            }
            for j in 0..nu {
                a.set(r, off_w + t * nu + j, -bmat.get(i, j));
            }
        }
    }
    // C x_t + v_t = y_t
    for t in 0..t_len {
        for i in 0..no {
            let r = row_obs + t * no + i;
            for j in 0..nx {
                a.set(r, off_x + t * nx + j, cmat.get(i, j));
            }
            a.set(r, off_v + t * no + i, 1.0);
            b[r] = observations[t * no + i];
        }
    }
    // q_t >= 0
    for t in 0..pen {
        a.set(row_q + t, off_q + t, -1.0);
    }
    // (r_t + q_t, v_t) in the second-order cone, for t = 1..T-1
    for t in 0..pen {
        let r0 = row_soc + t * (no + 1);
        a.set(r0, off_r + t, -1.0);
        a.set(r0, off_q + t, -1.0);
        for i in 0..no {
            a.set(r0 + 1 + i, off_v + (t + 1) * no + i, -1.0);
        }
    }

    let mut p = Matrix::zeros(nvar, nvar);
    for t in 1..t_len {
        for j in 0..nu {
            let idx = off_w + t * nu + j;
            p.set(idx, idx, 2.0);
        }
    }
    for t in 0..pen {
        let idx = off_r + t;
        p.set(idx, idx, 2.0 * params.mu);
    }
    let mut c = vec![0.0; nvar];
    for t in 0..pen {
        c[off_q + t] = 2.0 * params.mu * params.rho;
    }

    let mut cones = vec![Cone::Zero(nx * t_len + no * t_len), Cone::Nonneg(pen)];
    for _ in 0..pen {
        cones.push(Cone::Soc(no + 1));
    }
    Ok(ConicProblem { p, a, c, b, cones })
}

/// The Huber penalty of a planar residual: ||v||^2 inside radius rho, and
/// 2 rho ||v|| - rho^2 beyond it.
pub fn huber_norm_penalty(v: &[f64], rho: f64) -> f64 {
    let s = norm(v);
    if s <= rho {
        s * s
    } else {
        2.0 * rho * s - rho * rho
    }
}

fn kalman_block_layout(params: &KalmanParams, dim: usize) -> BlockLayout {
    let t_len = params.horizon;
    let (nx, no, nu) = (4, 2, 2);
    let pen = t_len - 1;
    let off_w = nx * (t_len + 1);
    let off_v = off_w + nu * t_len;
    let off_r = off_v + no * t_len;
    let off_q = off_r + pen;
    let nvar = off_q + pen;
    let row_obs = nx * t_len;
    let row_q = row_obs + no * t_len;
    let row_soc = row_q + pen;
    let groups = vec![
        BlockGroup { offset: 0, block_len: nx, count: t_len + 1 },
        BlockGroup { offset: off_w, block_len: nu, count: t_len },
        BlockGroup { offset: off_v, block_len: no, count: t_len },
        BlockGroup { offset: off_r, block_len: 1, count: pen },
        BlockGroup { offset: off_q, block_len: 1, count: pen },
        // Dual blocks follow the same time structure.
        BlockGroup { offset: nvar, block_len: nx, count: t_len },
        BlockGroup { offset: nvar + row_obs, block_len: no, count: t_len },
        BlockGroup { offset: nvar + row_q, block_len: 1, count: pen },
        BlockGroup { offset: nvar + row_soc, block_len: no + 1, count: pen },
    ];
    BlockLayout { groups, dim }
}

// ---------------------------------------------------------------------------
// Illustrative two-dimensional problem
// ---------------------------------------------------------------------------

/// The two-dimensional nonnegative quadratic min (1/2) z' diag(10,1) z,
/// z >= 0, solved by projected gradient steps with the worst-case optimal
/// step size 2/11. The optimum is the origin.
pub fn illustrative_operator() -> Operator {
    Operator::prox_gradient(
        Arc::new(Matrix::diag(&[10.0, 1.0])),
        vec![0.0, 0.0],
        ProxSpec::Nonneg,
        2.0 / 11.0,
        Some((1.0, 10.0)),
    )
    .expect("fixed illustrative data is valid")
}

/// Three unit-norm warm starts with distinct convergence behavior: one in the
/// negative orthant whose gradient step clips straight to the optimum, one
/// near the steep axis, one near the shallow axis.
pub fn illustrative_warm_starts() -> [Vec<f64>; 3] {
    let phi = std::f64::consts::PI / 20.0;
    [
        vec![0.0, -1.0],
        vec![phi.cos(), phi.sin()],
        vec![phi.sin(), phi.cos()],
    ]
}

/// Validate that candidate warm starts are equidistant from the optimum (the
/// origin) and return the operator.
pub fn illustrative(warm_starts: &[Vec<f64>; 3]) -> Result<Operator> {
    let r = norm(&warm_starts[0]);
    for ws in warm_starts.iter() {
        if ws.len() != 2 {
            return Err(Error::Shape {
                what: "illustrative warm start",
                expected: 2,
                got: ws.len(),
            });
        }
        if (norm(ws) - r).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "warm starts must be equidistant from the optimum".into(),
            ));
        }
    }
    Ok(illustrative_operator())
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// A generated set of instances with their operators and optional cached
/// fixed points.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub family: Arc<Family>,
    pub stream: String,
    pub thetas: Vec<Vec<f64>>,
    pub operators: Vec<Operator>,
    pub ground_truths: Option<Vec<GroundTruth>>,
}

impl Dataset {
    pub fn generate(family: &Arc<Family>, count: usize, stream: &str) -> Result<Dataset> {
        let thetas = family.sample_thetas(count, stream);
        let operators: Vec<Operator> = thetas
            .par_iter()
            .map(|t| family.instantiate(t))
            .collect::<Result<_>>()?;
        Ok(Dataset {
            family: family.clone(),
            stream: stream.to_string(),
            thetas,
            operators,
            ground_truths: None,
        })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn compute_ground_truths(&mut self, cap: usize) -> Result<()> {
        self.ground_truths = Some(crate::training::cache_ground_truths(&self.operators, cap)?);
        Ok(())
    }

    /// Samples for training or evaluation. With `need_targets`, instances
    /// whose ground-truth iteration hit the cap are excluded.
    pub fn samples(&self, need_targets: bool) -> Result<Vec<TrainSample<'_>>> {
        if need_targets && self.ground_truths.is_none() {
            return Err(Error::Missing(
                "ground truths not cached for this dataset".into(),
            ));
        }
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let target = self.ground_truths.as_ref().map(|g| &g[i]);
            if need_targets && target.map(|g| g.capped).unwrap_or(true) {
                continue;
            }
            out.push(TrainSample {
                theta: &self.thetas[i],
                op: &self.operators[i],
                target: target.map(|g| g.z.as_slice()),
            });
        }
        Ok(out)
    }

    // -- dataset files: plain-text header, then little-endian f64 rows ------

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        let kind = match self.family.kind() {
            FamilyKind::UnconstrainedQp => "unconstrained_qp",
            FamilyKind::Lasso => "lasso",
            FamilyKind::RobustKalman => "robust_kalman",
            FamilyKind::RobustLs => "robust_ls",
        };
        let dims: Vec<String> = self.family.dims().iter().map(|d| d.to_string()).collect();
        writeln!(f, "warmstart-dataset v1")?;
        writeln!(f, "family: {kind}")?;
        writeln!(f, "dims: {}", dims.join(" "))?;
        writeln!(f, "seed: {}", self.family.seed())?;
        writeln!(f, "stream: {}", self.stream)?;
        writeln!(f, "count: {}", self.len())?;
        writeln!(f, "theta_dim: {}", self.family.theta_dim())?;
        writeln!(f, "state_dim: {}", self.family.state_dim())?;
        writeln!(f, "ground_truths: {}", self.ground_truths.is_some())?;
        writeln!(f)?;
        for t in &self.thetas {
            for v in t {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        if let Some(gts) = &self.ground_truths {
            for gt in gts {
                for v in &gt.z {
                    f.write_all(&v.to_le_bytes())?;
                }
                f.write_all(&gt.residual.to_le_bytes())?;
                f.write_all(&(if gt.capped { 1.0f64 } else { 0.0f64 }).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let raw = std::fs::read(path)?;
        let split = crate::predictor::find_blank_line(&raw)
            .ok_or_else(|| Error::Parse(format!("{}: missing header terminator", path.display())))?;
        let header = std::str::from_utf8(&raw[..split])
            .map_err(|_| Error::Parse("dataset header is not utf-8".into()))?;
        let mut fields = std::collections::HashMap::new();
        for line in header.lines().skip(1) {
            if let Some((k, v)) = line.split_once(": ") {
                fields.insert(k.to_string(), v.to_string());
            } else if let Some(k) = line.strip_suffix(':') {
                fields.insert(k.to_string(), String::new());
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Parse(format!("dataset header missing {k}")))
        };
        let seed: u64 = get("seed")?
            .parse()
            .map_err(|_| Error::Parse("bad seed".into()))?;
        let count: usize = get("count")?
            .parse()
            .map_err(|_| Error::Parse("bad count".into()))?;
        let dims: Vec<usize> = get("dims")?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse("bad dims".into())))
            .collect::<Result<_>>()?;
        let family = match get("family")?.as_str() {
            "unconstrained_qp" => Family::unconstrained_qp(seed)?,
            "lasso" => Family::lasso(dims[0], dims[1], seed)?,
            "robust_kalman" => Family::robust_kalman(dims[0], seed)?,
            "robust_ls" => Family::robust_ls(dims[0], dims[1], seed)?,
            other => return Err(Error::Parse(format!("unknown family {other}"))),
        };
        let theta_dim = family.theta_dim();
        let state_dim = family.state_dim();
        let has_gt = get("ground_truths")? == "true";
        let stream = get("stream")?;

        let mut body = &raw[split..];
        let mut read_f64 = |n: usize| -> Result<Vec<f64>> {
            if body.len() < n * 8 {
                return Err(Error::Parse("dataset file truncated".into()));
            }
            let out = (0..n)
                .map(|i| f64::from_le_bytes(body[i * 8..i * 8 + 8].try_into().unwrap()))
                .collect();
            body = &body[n * 8..];
            Ok(out)
        };
        let mut thetas = Vec::with_capacity(count);
        for _ in 0..count {
            thetas.push(read_f64(theta_dim)?);
        }
        let ground_truths = if has_gt {
            let mut gts = Vec::with_capacity(count);
            for _ in 0..count {
                let z = read_f64(state_dim)?;
                let extra = read_f64(2)?;
                gts.push(GroundTruth {
                    z,
                    residual: extra[0],
                    capped: extra[1] != 0.0,
                });
            }
            Some(gts)
        } else {
            None
        };
        let family = Arc::new(family);
        let operators: Vec<Operator> = thetas
            .par_iter()
            .map(|t| family.instantiate(t))
            .collect::<Result<_>>()?;
        Ok(Dataset {
            family,
            stream,
            thetas,
            operators,
            ground_truths,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{soft_threshold, sub};
    use crate::operators::OpKind;
    use crate::training::{compute_ground_truth, GROUND_TRUTH_CAP};

    #[test]
    fn qp_theta_ranges() {
        let fam = Family::unconstrained_qp(1).unwrap();
        let thetas = fam.sample_thetas(50, "train");
        for t in &thetas {
            for (j, v) in t.iter().enumerate() {
                let cap = if j < 10 { 1e5 } else { 10.0 };
                assert!(v.abs() <= cap, "theta[{j}] = {v} out of range");
            }
        }
    }

    #[test]
    fn qp_ground_truth_closed_form() {
        let fam = Family::unconstrained_qp(2).unwrap();
        let theta = &fam.sample_thetas(1, "train")[0];
        let op = fam.instantiate(theta).unwrap();
        let gt = compute_ground_truth(&op, GROUND_TRUTH_CAP).unwrap();
        // z* = -P^{-1} theta with diagonal P.
        let mut zstar = vec![0.0; 20];
        for j in 0..20 {
            let d = if j < 10 { 100.0 } else { 1.0 };
            zstar[j] = -theta[j] / d;
        }
        assert!(norm(&sub(&gt.z, &zstar)) <= 1e-8 * (1.0 + norm(&zstar)));
    }

    #[test]
    fn generation_is_deterministic() {
        let fam = Family::unconstrained_qp(3).unwrap();
        let a = fam.sample_thetas(10, "train");
        let b = fam.sample_thetas(10, "train");
        assert_eq!(a, b);
        let c = fam.sample_thetas(10, "test");
        assert_ne!(a, c);
    }

    #[test]
    fn lasso_family_shapes_and_fixed_point() {
        let fam = Arc::new(Family::lasso(12, 9, 4).unwrap());
        let thetas = fam.sample_thetas(5, "train");
        for t in &thetas {
            assert!(t.iter().all(|v| (0.0..30.0).contains(v)));
        }
        let op = fam.instantiate(&thetas[0]).unwrap();
        let (lambda, alpha) = match op.kind() {
            OpKind::ProxGradient { reg, alpha, .. } => match reg {
                ProxSpec::L1 { lambda } => (*lambda, *alpha),
                _ => panic!("expected l1 regularizer"),
            },
            _ => panic!("expected prox gradient"),
        };
        assert_eq!(lambda, 10.0);
        let (z, _, _, capped) = op.iterate(&vec![0.0; 9], 1e-12, 500_000).unwrap();
        assert!(!capped);
        // Optimality: z = soft(z - alpha A'(Az - b), alpha lambda).
        let (gram, c) = match op.kind() {
            OpKind::ProxGradient { p, c, .. } => (p.clone(), c.clone()),
            _ => unreachable!(),
        };
        let grad = crate::numerics::add(&gram.matvec(&z), &c);
        let inner = sub(&z, &crate::numerics::scale(&grad, alpha));
        let re = soft_threshold(&inner, alpha * lambda).unwrap();
        assert!(norm(&sub(&re, &z)) <= 1e-8);
    }

    #[test]
    fn kalman_dynamics_match_displayed_matrices() {
        let p = KalmanParams::default();
        let (a, b, c) = p.dynamics();
        assert_eq!(a.get(0, 2), (1.0 - 0.025 * 0.5) * 0.5);
        assert_eq!(a.get(2, 2), 1.0 - 0.05 * 0.5);
        assert_eq!(b.get(0, 0), 0.125);
        assert_eq!(b.get(2, 0), 0.5);
        assert_eq!(c.get(0, 0), 1.0);
        assert_eq!(c.get(1, 1), 1.0);
    }

    #[test]
    fn kalman_rotation_puts_final_observation_on_axis() {
        let fam = Family::robust_kalman(6, 5).unwrap();
        for theta in fam.sample_thetas(20, "train") {
            let n = theta.len();
            assert!(theta[n - 1].abs() <= 1e-12, "final y = {}", theta[n - 1]);
        }
    }

    #[test]
    fn kalman_rotation_roundtrip() {
        let params = KalmanParams {
            horizon: 5,
            ..KalmanParams::default()
        };
        let mut rng = seeds::rng(7, "test");
        let obs = simulate_kalman_observations(&params, &mut rng);
        let phi = final_observation_angle(&obs);
        let rot = rotate_observations(&obs, -phi);
        let back = rotate_observations(&rot, phi);
        assert!(norm(&sub(&back, &obs)) <= 1e-12 * (1.0 + norm(&obs)));
    }

    #[test]
    fn huber_penalty_branches() {
        assert_eq!(huber_norm_penalty(&[0.0, 0.0], 2.0), 0.0);
        // Inside the radius the penalty is the squared norm.
        assert!((huber_norm_penalty(&[1.0, 0.0], 2.0) - 1.0).abs() < 1e-15);
        // Beyond it the growth is linear, continuous at the boundary.
        assert!((huber_norm_penalty(&[2.0, 0.0], 2.0) - 4.0).abs() < 1e-15);
        assert!((huber_norm_penalty(&[3.0, 0.0], 2.0) - 8.0).abs() < 1e-15);
    }

    #[test]
    fn kalman_instance_solves_and_passes_kkt() {
        let fam = Family::robust_kalman(4, 11).unwrap();
        let theta = &fam.sample_thetas(1, "train")[0];
        let op = fam.instantiate(theta).unwrap();
        let (z, _, _, capped) = op.iterate(&vec![0.0; op.dim()], 1e-11, 500_000).unwrap();
        assert!(!capped);
        assert!(op.kkt_check(&z, 1e-6).unwrap());
    }

    #[test]
    fn robust_ls_objective_dominates_residual_norm() {
        let fam = Family::robust_ls(6, 9, 13).unwrap();
        let theta = &fam.sample_thetas(1, "train")[0];
        assert!(theta.iter().all(|v| (1.0..2.0).contains(v)));
        let op = fam.instantiate(theta).unwrap();
        let (z, _, _, capped) = op.iterate(&vec![0.0; op.dim()], 1e-11, 500_000).unwrap();
        assert!(!capped);
        assert!(op.kkt_check(&z, 1e-6).unwrap());
        let (x, _, _) = op.scs_extract(&z).unwrap();
        let n = 9;
        let (xs, u, v) = (&x[..n], x[n], x[n + 1]);
        let (a_hat, rho) = fam.robust_ls_design().unwrap();
        let resid = sub(&a_hat.matvec(xs), theta);
        let objective = u + rho * v;
        assert!(objective >= norm(&resid) - 1e-7);
    }

    #[test]
    fn block_shift_rule() {
        let layout = BlockLayout {
            groups: vec![BlockGroup {
                offset: 0,
                block_len: 1,
                count: 3,
            }],
            dim: 3,
        };
        assert_eq!(layout.shift(&[1.0, 2.0, 3.0]), vec![2.0, 3.0, 3.0]);
        assert_eq!(layout.shift(&[5.0, 5.0, 5.0]), vec![5.0, 5.0, 5.0]);
    }

    #[test]
    fn illustrative_requires_equidistant_starts() {
        let ok = illustrative_warm_starts();
        assert!(illustrative(&ok).is_ok());
        let bad = [vec![0.0, -2.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(illustrative(&bad).is_err());
        // One projected-gradient step from the negative orthant lands on the
        // optimum, whose residual is zero.
        let op = illustrative_operator();
        let step = op.apply(&ok[0]).unwrap();
        assert_eq!(step, vec![0.0, 0.0]);
        assert_eq!(op.fp_residual(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn dataset_roundtrip() {
        let fam = Arc::new(Family::lasso(8, 6, 21).unwrap());
        let mut ds = Dataset::generate(&fam, 4, "train").unwrap();
        ds.compute_ground_truths(GROUND_TRUTH_CAP).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.ds");
        ds.save(&path).unwrap();
        let loaded = Dataset::load(&path).unwrap();
        assert_eq!(ds.thetas, loaded.thetas);
        let a = ds.ground_truths.as_ref().unwrap();
        let b = loaded.ground_truths.as_ref().unwrap();
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.z, y.z);
            assert_eq!(x.capped, y.capped);
        }
        // Operators rebuild identically: same step from the same state.
        let z = vec![0.25; 6];
        let s1 = ds.operators[0].apply(&z).unwrap();
        let s2 = loaded.operators[0].apply(&z).unwrap();
        assert_eq!(s1, s2);
    }
}
