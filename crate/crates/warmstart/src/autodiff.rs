//! Reverse-mode differentiation of the unrolled loss.
//!
//! A [`Tape`] records the computation loss(T_theta^k(h_w(theta))) as a list of
//! primitives: affine maps, cached linear solves, the clipping/thresholding
//! projections, cone projections, and the euclidean norm. The forward pass is
//! eager, runs the same kernels as direct evaluation, and saves exactly the
//! values each primitive's VJP needs, so gradients come from one backward
//! sweep without re-running anything.
//!
//! Subgradient conventions at kinks, chosen once so training is deterministic:
//! relu'(0) = 0; box and nonneg clips have derivative 0 on the clipped branch
//! including exactly at a bound; soft-threshold has derivative 0 on the closed
//! interval [-kappa, kappa]; the second-order cone projection uses the
//! exterior-branch Jacobian on the boundary ||x|| = |t|; the euclidean norm
//! has gradient 0 at the origin.

use crate::error::{Error, Result};
use crate::numerics::{self, norm, LinearSolver, Matrix};
use crate::operators::{ConeLayout, ConeSeg, Operator, StepEmitter};
use crate::predictor::ModelWeights;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// ||T(z_k) - z_k||_2
    FixedPoint,
    /// ||z_k - z*||_2
    Regression,
}

/// Distance from a primitive's input to its nearest kink below which the tape
/// is flagged; finite-difference checks resample flagged points.
const KINK_EPS: f64 = 1e-7;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Node {
    /// Value with no inputs and no gradient (theta, regression targets).
    Const,
    /// W_layer * aug(input); the layer weights are gradient leaves.
    LayerAffine { layer: usize, a: NodeId },
    Relu { a: NodeId },
    MatVec { m: Arc<Matrix>, a: NodeId },
    MatVecT { m: Arc<Matrix>, a: NodeId },
    LinSolve { s: Arc<LinearSolver>, a: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    AddConst { a: NodeId },
    Scale { a: NodeId, s: f64 },
    BoxClip { a: NodeId, l: Arc<Vec<f64>>, u: Arc<Vec<f64>> },
    NonnegClip { a: NodeId },
    SoftThreshold { a: NodeId, kappa: f64 },
    ConeProject { a: NodeId, layout: Arc<ConeLayout> },
    Slice { a: NodeId, offset: usize, len: usize },
    Concat { a: NodeId, b: NodeId },
    /// Euclidean norm; produces a length-one value.
    Norm { a: NodeId },
}

/// A recorded computation supporting one backward sweep.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    vals: Vec<Vec<f64>>,
    weights: Arc<ModelWeights>,
    output: NodeId,
    warm_start: NodeId,
    /// State node after each of the k recorded operator steps; `states[0]` is
    /// the warm start itself.
    states: Vec<NodeId>,
    near_kink: bool,
}

impl Tape {
    fn new(weights: Arc<ModelWeights>) -> Tape {
        Tape {
            nodes: Vec::new(),
            vals: Vec::new(),
            weights,
            output: 0,
            warm_start: 0,
            states: Vec::new(),
            near_kink: false,
        }
    }

    fn push(&mut self, node: Node, val: Vec<f64>) -> NodeId {
        self.nodes.push(node);
        self.vals.push(val);
        self.nodes.len() - 1
    }

    fn constant(&mut self, v: Vec<f64>) -> NodeId {
        self.push(Node::Const, v)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.vals[id]
    }

    /// The recorded loss value.
    pub fn output(&self) -> f64 {
        self.vals[self.output][0]
    }

    pub fn warm_start_value(&self) -> &[f64] {
        &self.vals[self.warm_start]
    }

    pub fn state_value(&self, step: usize) -> &[f64] {
        &self.vals[self.states[step]]
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// True when some primitive evaluated within `1e-7` of a kink; gradients
    /// at such points are valid subgradients but need not match central
    /// finite differences.
    pub fn near_kink(&self) -> bool {
        self.near_kink
    }
}

impl StepEmitter for Tape {
    type V = NodeId;

    fn matvec(&mut self, m: &Arc<Matrix>, x: &NodeId) -> NodeId {
        let v = m.matvec(&self.vals[*x]);
        self.push(Node::MatVec { m: m.clone(), a: *x }, v)
    }
    fn matvec_t(&mut self, m: &Arc<Matrix>, x: &NodeId) -> NodeId {
        let v = m.matvec_t(&self.vals[*x]);
        self.push(Node::MatVecT { m: m.clone(), a: *x }, v)
    }
    fn lin_solve(&mut self, s: &Arc<LinearSolver>, b: &NodeId) -> NodeId {
        let v = s.solve(&self.vals[*b]);
        self.push(Node::LinSolve { s: s.clone(), a: *b }, v)
    }
    fn add(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let v = numerics::add(&self.vals[*a], &self.vals[*b]);
        self.push(Node::Add { a: *a, b: *b }, v)
    }
    fn sub(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let v = numerics::sub(&self.vals[*a], &self.vals[*b]);
        self.push(Node::Sub { a: *a, b: *b }, v)
    }
    fn add_const(&mut self, a: &NodeId, c: &Arc<Vec<f64>>) -> NodeId {
        let v = numerics::add(&self.vals[*a], c);
        self.push(Node::AddConst { a: *a }, v)
    }
    fn scale(&mut self, a: &NodeId, s: f64) -> NodeId {
        let v = numerics::scale(&self.vals[*a], s);
        self.push(Node::Scale { a: *a, s }, v)
    }
    fn box_clip(&mut self, a: &NodeId, l: &Arc<Vec<f64>>, u: &Arc<Vec<f64>>) -> NodeId {
        for ((x, lo), hi) in self.vals[*a].iter().zip(l.iter()).zip(u.iter()) {
            if (x - lo).abs() < KINK_EPS || (x - hi).abs() < KINK_EPS {
                self.near_kink = true;
            }
        }
        let v = numerics::project_box(&self.vals[*a], l, u).expect("sized at construction");
        self.push(
            Node::BoxClip {
                a: *a,
                l: l.clone(),
                u: u.clone(),
            },
            v,
        )
    }
    fn nonneg_clip(&mut self, a: &NodeId) -> NodeId {
        if self.vals[*a].iter().any(|x| x.abs() < KINK_EPS) {
            self.near_kink = true;
        }
        let v = numerics::project_nonneg(&self.vals[*a]);
        self.push(Node::NonnegClip { a: *a }, v)
    }
    fn soft_threshold(&mut self, a: &NodeId, kappa: f64) -> NodeId {
        if self.vals[*a].iter().any(|x| (x.abs() - kappa).abs() < KINK_EPS) {
            self.near_kink = true;
        }
        let v = numerics::soft_threshold(&self.vals[*a], kappa).expect("kappa checked");
        self.push(Node::SoftThreshold { a: *a, kappa }, v)
    }
    fn cone_project(&mut self, a: &NodeId, layout: &Arc<ConeLayout>) -> NodeId {
        let mut off = 0;
        for seg in &layout.segs {
            match *seg {
                ConeSeg::Free(n) => off += n,
                ConeSeg::Nonneg(n) => {
                    if self.vals[*a][off..off + n]
                        .iter()
                        .any(|x| x.abs() < KINK_EPS)
                    {
                        self.near_kink = true;
                    }
                    off += n;
                }
                ConeSeg::Soc(n) => {
                    let seg_v = &self.vals[*a][off..off + n];
                    let t = seg_v[0];
                    let s = norm(&seg_v[1..]);
                    if (s - t.abs()).abs() < KINK_EPS {
                        self.near_kink = true;
                    }
                    off += n;
                }
            }
        }
        let v = layout.project(&self.vals[*a]);
        self.push(
            Node::ConeProject {
                a: *a,
                layout: layout.clone(),
            },
            v,
        )
    }
    fn slice(&mut self, a: &NodeId, offset: usize, len: usize) -> NodeId {
        let v = self.vals[*a][offset..offset + len].to_vec();
        self.push(Node::Slice { a: *a, offset, len }, v)
    }
    fn concat(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let mut v = self.vals[*a].clone();
        v.extend_from_slice(&self.vals[*b]);
        self.push(Node::Concat { a: *a, b: *b }, v)
    }
}

impl Tape {
    fn layer_affine(&mut self, layer: usize, a: NodeId) -> NodeId {
        let w = &self.weights.layers()[layer];
        let input = self.weights.layer_input(&self.vals[a]);
        let v = w.matvec(&input);
        self.push(Node::LayerAffine { layer, a }, v)
    }

    fn relu(&mut self, a: NodeId) -> NodeId {
        if self.vals[a].iter().any(|x| x.abs() < KINK_EPS) {
            self.near_kink = true;
        }
        let v = numerics::relu(&self.vals[a]);
        self.push(Node::Relu { a }, v)
    }

    fn euclidean_norm(&mut self, a: NodeId) -> NodeId {
        let r = norm(&self.vals[a]);
        if r < KINK_EPS {
            self.near_kink = true;
        }
        self.push(Node::Norm { a }, vec![r])
    }
}

/// Record loss(T^k(h_w(theta))) on a tape.
///
/// The tape output equals the un-taped forward evaluation exactly: both paths
/// run the same kernels in the same order.
pub fn record(
    weights: &Arc<ModelWeights>,
    theta: &[f64],
    op: &Operator,
    k: usize,
    loss: LossKind,
    target: Option<&[f64]>,
) -> Result<Tape> {
    if weights.input_dim() != theta.len() {
        return Err(Error::Shape {
            what: "tape parameter",
            expected: weights.input_dim(),
            got: theta.len(),
        });
    }
    if weights.output_dim() != op.dim() {
        return Err(Error::Shape {
            what: "warm start dimension",
            expected: op.dim(),
            got: weights.output_dim(),
        });
    }
    let target = match (loss, target) {
        (LossKind::Regression, None) => {
            return Err(Error::InvalidArgument(
                "regression loss needs a ground-truth target".into(),
            ))
        }
        (LossKind::Regression, Some(t)) => {
            if t.len() != op.dim() {
                return Err(Error::Shape {
                    what: "regression target",
                    expected: op.dim(),
                    got: t.len(),
                });
            }
            Some(t)
        }
        (LossKind::FixedPoint, t) => {
            // A target is accepted and ignored so callers can share plumbing.
            t
        }
    };

    let mut tape = Tape::new(weights.clone());
    let theta_id = tape.constant(theta.to_vec());

    // h_w(theta): affine layers with relu between, none on the last.
    let depth = weights.depth();
    let mut a = theta_id;
    for layer in 0..depth {
        a = tape.layer_affine(layer, a);
        if layer + 1 < depth {
            a = tape.relu(a);
        }
    }
    tape.warm_start = a;
    tape.states.push(a);

    let mut z = a;
    for _ in 0..k {
        z = op.emit_step(&mut tape, &z);
        tape.states.push(z);
    }

    let out = match loss {
        LossKind::FixedPoint => {
            let tz = op.emit_step(&mut tape, &z);
            let d = tape.sub(&tz, &z);
            tape.euclidean_norm(d)
        }
        LossKind::Regression => {
            let t = tape.constant(target.unwrap().to_vec());
            let d = tape.sub(&z, &t);
            tape.euclidean_norm(d)
        }
    };
    tape.output = out;
    if !tape.vals[out][0].is_finite() {
        return Err(Error::NonFinite("recorded loss"));
    }
    Ok(tape)
}

/// Reverse sweep: d(loss)/d(W_layer) for every layer.
pub fn backward(tape: &Tape) -> Vec<Matrix> {
    let weights = &tape.weights;
    let mut grads: Vec<Matrix> = weights
        .layers()
        .iter()
        .map(|l| Matrix::zeros(l.rows(), l.cols()))
        .collect();
    let mut adj: Vec<Option<Vec<f64>>> = vec![None; tape.nodes.len()];
    adj[tape.output] = Some(vec![1.0]);

    // Nodes are in topological order by construction.
    for id in (0..tape.nodes.len()).rev() {
        let g = match adj[id].take() {
            Some(g) => g,
            None => continue,
        };
        match &tape.nodes[id] {
            Node::Const => {}
            Node::LayerAffine { layer, a } => {
                let w = &weights.layers()[*layer];
                let input = weights.layer_input(&tape.vals[*a]);
                // dL/dW += g (x) input
                let gw = &mut grads[*layer];
                for (i, gi) in g.iter().enumerate() {
                    if *gi != 0.0 {
                        for (j, xj) in input.iter().enumerate() {
                            gw.set(i, j, gw.get(i, j) + gi * xj);
                        }
                    }
                }
                // dL/da = W^T g, dropping the bias row.
                let mut ga = w.matvec_t(&g);
                if weights.bias() {
                    ga.pop();
                }
                accumulate(&mut adj[*a], &ga);
            }
            Node::Relu { a } => {
                let masked: Vec<f64> = tape.vals[*a]
                    .iter()
                    .zip(&g)
                    .map(|(x, gi)| if *x > 0.0 { *gi } else { 0.0 })
                    .collect();
                accumulate(&mut adj[*a], &masked);
            }
            Node::MatVec { m, a } => accumulate(&mut adj[*a], &m.matvec_t(&g)),
            Node::MatVecT { m, a } => accumulate(&mut adj[*a], &m.matvec(&g)),
            // The factored matrix is symmetric (SPD or quasi-definite), so the
            // transpose solve reuses the same factorization.
            Node::LinSolve { s, a } => accumulate(&mut adj[*a], &s.solve(&g)),
            Node::Add { a, b } => {
                accumulate(&mut adj[*a], &g);
                accumulate(&mut adj[*b], &g);
            }
            Node::Sub { a, b } => {
                accumulate(&mut adj[*a], &g);
                let neg = numerics::scale(&g, -1.0);
                accumulate(&mut adj[*b], &neg);
            }
            Node::AddConst { a } => accumulate(&mut adj[*a], &g),
            Node::Scale { a, s } => accumulate(&mut adj[*a], &numerics::scale(&g, *s)),
            Node::BoxClip { a, l, u } => {
                let masked: Vec<f64> = tape.vals[*a]
                    .iter()
                    .zip(l.iter().zip(u.iter()))
                    .zip(&g)
                    .map(|((x, (lo, hi)), gi)| if *x > *lo && *x < *hi { *gi } else { 0.0 })
                    .collect();
                accumulate(&mut adj[*a], &masked);
            }
            Node::NonnegClip { a } => {
                let masked: Vec<f64> = tape.vals[*a]
                    .iter()
                    .zip(&g)
                    .map(|(x, gi)| if *x > 0.0 { *gi } else { 0.0 })
                    .collect();
                accumulate(&mut adj[*a], &masked);
            }
            Node::SoftThreshold { a, kappa } => {
                let masked: Vec<f64> = tape.vals[*a]
                    .iter()
                    .zip(&g)
                    .map(|(x, gi)| if x.abs() > *kappa { *gi } else { 0.0 })
                    .collect();
                accumulate(&mut adj[*a], &masked);
            }
            Node::ConeProject { a, layout } => {
                let ga = cone_project_vjp(&tape.vals[*a], layout, &g);
                accumulate(&mut adj[*a], &ga);
            }
            Node::Slice { a, offset, len } => {
                let mut ga = vec![0.0; tape.vals[*a].len()];
                ga[*offset..*offset + *len].copy_from_slice(&g);
                accumulate(&mut adj[*a], &ga);
            }
            Node::Concat { a, b } => {
                let la = tape.vals[*a].len();
                accumulate(&mut adj[*a], &g[..la]);
                accumulate(&mut adj[*b], &g[la..]);
            }
            Node::Norm { a } => {
                let r = tape.vals[id][0];
                if r > 0.0 {
                    let ga = numerics::scale(&tape.vals[*a], g[0] / r);
                    accumulate(&mut adj[*a], &ga);
                }
            }
        }
    }
    grads
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(v) => {
            for (a, b) in v.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}

fn cone_project_vjp(x: &[f64], layout: &ConeLayout, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut off = 0;
    for seg in &layout.segs {
        match *seg {
            ConeSeg::Free(n) => {
                out[off..off + n].copy_from_slice(&g[off..off + n]);
                off += n;
            }
            ConeSeg::Nonneg(n) => {
                for i in off..off + n {
                    if x[i] > 0.0 {
                        out[i] = g[i];
                    }
                }
                off += n;
            }
            ConeSeg::Soc(n) => {
                soc_vjp(&x[off..off + n], &g[off..off + n], &mut out[off..off + n]);
                off += n;
            }
        }
    }
    out
}

/// VJP of the second-order cone projection. Interior passes the cotangent
/// through, the polar cone zeroes it, and the boundary uses the exterior
/// Jacobian.
fn soc_vjp(v: &[f64], g: &[f64], out: &mut [f64]) {
    let t = v[0];
    let x = &v[1..];
    let s = norm(x);
    if s == 0.0 {
        if t >= 0.0 {
            out.copy_from_slice(g);
        }
        return;
    }
    if s < t {
        out.copy_from_slice(g);
        return;
    }
    if s < -t {
        return;
    }
    let gt = g[0];
    let gx = &g[1..];
    let u: Vec<f64> = x.iter().map(|xi| xi / s).collect();
    let udg = numerics::dot(&u, gx);
    out[0] = 0.5 * gt + 0.5 * udg;
    let coef = (t + s) / (2.0 * s);
    for i in 0..u.len() {
        out[1 + i] = 0.5 * gt * u[i] + 0.5 * u[i] * udg + coef * (gx[i] - u[i] * udg);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sub;
    use crate::operators::ProxSpec;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn tiny_gd(dim: usize) -> Operator {
        let d: Vec<f64> = (1..=dim).map(|i| i as f64).collect();
        Operator::gradient_descent(
            Arc::new(Matrix::diag(&d)),
            vec![-2.0; dim],
            0.2 / dim as f64,
            Some((1.0, dim as f64)),
        )
        .unwrap()
    }

    #[test]
    fn fp_loss_at_k0_is_first_step_residual() {
        let op = tiny_gd(3);
        let w = Arc::new(ModelWeights::init(&[2, 4, 3], true, 1));
        let theta = vec![0.5, -1.0];
        let tape = record(&w, &theta, &op, 0, LossKind::FixedPoint, None).unwrap();
        let h = w.forward(&theta).unwrap();
        let th = op.apply(&h).unwrap();
        assert_eq!(tape.output(), norm(&sub(&th, &h)));
    }

    #[test]
    fn reg_loss_zero_at_target() {
        let op = tiny_gd(3);
        let w = Arc::new(ModelWeights::init(&[2, 4, 3], true, 2));
        let theta = vec![1.0, 2.0];
        let h = w.forward(&theta).unwrap();
        let tape = record(&w, &theta, &op, 0, LossKind::Regression, Some(&h)).unwrap();
        assert_eq!(tape.output(), 0.0);
        // Gradient of a constant-zero output is all zeros.
        let grads = backward(&tape);
        for g in grads {
            assert_eq!(g.max_abs(), 0.0);
        }
    }

    #[test]
    fn regression_without_target_is_an_error() {
        let op = tiny_gd(2);
        let w = Arc::new(ModelWeights::init(&[2, 2], true, 3));
        assert!(record(&w, &[1.0, 1.0], &op, 1, LossKind::Regression, None).is_err());
    }

    #[test]
    fn hand_unrolled_two_steps() {
        // GD on P = diag(2), alpha = 0.25, c = (-2), zero warm start:
        // z1 = 0 - 0.25(0 - 2) = 0.5, z2 = 0.5 - 0.25(1 - 2) = 0.75,
        // loss_fp(z2) = |z3 - z2| with z3 = 0.75 - 0.25(1.5 - 2) = 0.875.
        let op = Operator::gradient_descent(
            Arc::new(Matrix::diag(&[2.0])),
            vec![-2.0],
            0.25,
            Some((2.0, 2.0)),
        )
        .unwrap();
        let w = Arc::new(ModelWeights::zeros(&[1, 1], true));
        let tape = record(&w, &[3.0], &op, 2, LossKind::FixedPoint, None).unwrap();
        assert!((tape.state_value(1)[0] - 0.5).abs() < 1e-15);
        assert!((tape.state_value(2)[0] - 0.75).abs() < 1e-15);
        assert!((tape.output() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn dead_weight_gets_zero_gradient() {
        // Second input coordinate is zero, so its weight column is inactive.
        let op = tiny_gd(1);
        let w1 = Matrix::from_rows(&[vec![1.0, 5.0, 0.0]]);
        let w = Arc::new(ModelWeights::from_layers(vec![w1], true).unwrap());
        let tape = record(&w, &[1.0, 0.0], &op, 1, LossKind::FixedPoint, None).unwrap();
        let grads = backward(&tape);
        assert_eq!(grads[0].get(0, 1), 0.0);
        assert_ne!(grads[0].get(0, 0), 0.0);
    }

    #[test]
    fn scalar_linear_regression_chain_rule() {
        // L(w) = |w theta - z*|, so dL/dw = sign(w theta - z*) theta.
        let op = tiny_gd(1);
        let w1 = Matrix::from_rows(&[vec![2.0, 0.0]]);
        let w = Arc::new(ModelWeights::from_layers(vec![w1], true).unwrap());
        let theta = [1.5];
        let target = [1.0];
        let tape = record(&w, &theta, &op, 0, LossKind::Regression, Some(&target)).unwrap();
        let grads = backward(&tape);
        let pred = 2.0 * theta[0];
        let expect = (pred - target[0]).signum() * theta[0];
        assert!((grads[0].get(0, 0) - expect).abs() < 1e-12);
    }

    fn finite_diff_check(
        op: &Operator,
        sizes: &[usize],
        k: usize,
        loss: LossKind,
        seed: u64,
    ) -> f64 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        'outer: for attempt in 0..50 {
            let w = Arc::new(ModelWeights::init(sizes, true, seed * 1000 + attempt));
            let theta: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target: Vec<f64> = (0..op.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tape = record(&w, &theta, op, k, loss, Some(&target)).unwrap();
            if tape.near_kink() {
                continue;
            }
            let grads = backward(&tape);
            let h = 1e-6;
            for layer in 0..w.depth() {
                let m = &w.layers()[layer];
                for i in 0..m.rows() {
                    for j in 0..m.cols() {
                        let mut wp = (*w).clone();
                        wp.layers_mut()[layer].set(i, j, m.get(i, j) + h);
                        let tp = record(&Arc::new(wp), &theta, op, k, loss, Some(&target)).unwrap();
                        let mut wm = (*w).clone();
                        wm.layers_mut()[layer].set(i, j, m.get(i, j) - h);
                        let tm = record(&Arc::new(wm), &theta, op, k, loss, Some(&target)).unwrap();
                        if tp.near_kink() || tm.near_kink() {
                            continue 'outer;
                        }
                        let fd = (tp.output() - tm.output()) / (2.0 * h);
                        let ad = grads[layer].get(i, j);
                        let err = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0);
                        worst = worst.max(err);
                    }
                }
            }
            return worst;
        }
        panic!("could not find a kink-free configuration");
    }

    #[test]
    fn gradcheck_two_layer_unrolled_lasso() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let m = 6;
        let n = 4;
        let a = Matrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        let gram = Arc::new(a.gram());
        let lam_max = crate::numerics::spectral_norm(&gram, 2000, 3);
        let c = numerics::scale(&a.matvec_t(&b), -1.0);
        let op = Operator::prox_gradient(
            gram,
            c,
            ProxSpec::L1 { lambda: 0.2 },
            1.0 / lam_max,
            Some((0.0, lam_max)),
        )
        .unwrap();
        let worst = finite_diff_check(&op, &[3, 5, 4], 5, LossKind::FixedPoint, 11);
        assert!(worst <= 1e-6, "gradient error {worst}");
    }

    #[test]
    fn forward_determinism() {
        let op = tiny_gd(3);
        let w = Arc::new(ModelWeights::init(&[2, 4, 3], true, 8));
        let theta = vec![0.1, 0.9];
        let t1 = record(&w, &theta, &op, 4, LossKind::FixedPoint, None).unwrap();
        let t2 = record(&w, &theta, &op, 4, LossKind::FixedPoint, None).unwrap();
        assert_eq!(t1.output().to_bits(), t2.output().to_bits());
        let g1 = backward(&t1);
        let g2 = backward(&t2);
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn tape_forward_matches_direct_apply_bitwise() {
        let op = tiny_gd(3);
        let w = Arc::new(ModelWeights::init(&[2, 4, 3], true, 15));
        let theta = vec![0.3, -0.4];
        let tape = record(&w, &theta, &op, 3, LossKind::FixedPoint, None).unwrap();
        let mut z = w.forward(&theta).unwrap();
        for step in 1..=3 {
            z = op.apply(&z).unwrap();
            for (a, b) in tape.state_value(step).iter().zip(&z) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
