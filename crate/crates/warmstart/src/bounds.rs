//! Generalization certificates: the PAC-Bayes bound on the risk after t
//! steps, the operator-class tail constants C_gamma(t), the network constant
//! c, the D and beta estimates, and the train-vs-test step ratio bounds.
//!
//! Marginal quantities are estimated by sampled maxima over perturbations and
//! are always lower estimates of the true suprema; reports label them as such.

use crate::error::{Error, Result};
use crate::numerics::{add, norm, scale, spectral_norm, sub};
use crate::operators::{Operator, OperatorClass};
use crate::predictor::ModelWeights;
use crate::training::TrainSample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

/// Power-iteration budget for weight spectral norms: fixed so certificate
/// reports are reproducible.
const NORM_ITERS: usize = 400;
const NORM_SEED: u64 = 0x0b0d;

/// Per-layer (spectral, Frobenius) norms, bias columns included.
pub fn weight_norms(weights: &ModelWeights) -> (Vec<f64>, Vec<f64>) {
    let spectral: Vec<f64> = weights
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| spectral_norm(l, NORM_ITERS, NORM_SEED + i as u64))
        .collect();
    let frobenius: Vec<f64> = weights.layers().iter().map(|l| l.frobenius_norm()).collect();
    (spectral, frobenius)
}

/// The network constant
/// c = B^2 L^2 hbar log(L hbar) prod_j ||W_j||_2^2 sum_i ||W_i||_F^2/||W_i||_2^2.
pub fn compute_c(weights: &ModelWeights, b: f64) -> Result<f64> {
    let (spectral, frobenius) = weight_norms(weights);
    compute_c_from_norms(&spectral, &frobenius, b, weights.max_width())
}

pub fn compute_c_from_norms(
    spectral: &[f64],
    frobenius: &[f64],
    b: f64,
    max_width: usize,
) -> Result<f64> {
    if spectral.iter().any(|&s| s <= 0.0) {
        return Err(Error::InvalidArgument(
            "degenerate network: a layer has zero spectral norm".into(),
        ));
    }
    let l = spectral.len() as f64;
    let hbar = max_width as f64;
    let prod: f64 = spectral.iter().map(|s| s * s).product();
    let sum: f64 = spectral
        .iter()
        .zip(frobenius)
        .map(|(s, f)| (f * f) / (s * s))
        .sum();
    Ok(b * b * l * l * hbar * (l * hbar).ln() * prod * sum)
}

/// Worst-case residual bound after t steps for a warm start within distance
/// `d` of the fixed-point set, under perturbations of radius `gamma_half`:
/// contractive and linearly convergent operators give 2 beta^t (d + gamma/2),
/// averaged ones give sqrt(alpha / ((1 - alpha)(t + 1))) (d + gamma).
pub fn c_gamma(t: usize, gamma_half: f64, class: OperatorClass, d: f64) -> f64 {
    match class {
        OperatorClass::Contractive(beta) | OperatorClass::LinearlyConvergent(beta) => {
            2.0 * beta.powi(t as i32) * (d + gamma_half)
        }
        OperatorClass::Averaged(alpha) => {
            (alpha / ((1.0 - alpha) * (t as f64 + 1.0))).sqrt() * (d + 2.0 * gamma_half)
        }
    }
}

/// Bound on residual(t) / loss(k) when testing at t steps a model trained at
/// k steps.
pub fn ratio_bound(
    class: OperatorClass,
    t: usize,
    k: usize,
    loss: crate::autodiff::LossKind,
) -> Result<f64> {
    if t < k {
        return Err(Error::InvalidArgument(format!(
            "ratio bound needs t >= k, got t = {t}, k = {k}"
        )));
    }
    use crate::autodiff::LossKind::*;
    let steps = (t - k) as i32;
    Ok(match (class, loss) {
        (OperatorClass::Contractive(beta), FixedPoint) => beta.powi(steps),
        (OperatorClass::Contractive(beta), Regression) => 2.0 * beta.powi(steps),
        (OperatorClass::LinearlyConvergent(_), FixedPoint) => 1.0,
        (OperatorClass::LinearlyConvergent(beta), Regression) => 2.0 * beta.powi(steps),
        (OperatorClass::Averaged(_), FixedPoint) => 1.0,
        (OperatorClass::Averaged(alpha), Regression) => {
            (alpha / ((1.0 - alpha) * (steps as f64 + 1.0))).sqrt()
        }
    })
}

/// Largest warm-start-to-fixed-point distance over the samples. Exact when
/// the fixed-point sets are singletons, an upper proxy otherwise, and in
/// either case measured for the realized predictor only.
pub fn estimate_d(weights: &ModelWeights, samples: &[TrainSample]) -> Result<f64> {
    let mut d: f64 = 0.0;
    for s in samples {
        let target = s
            .target
            .ok_or_else(|| Error::Missing("estimate_d needs cached ground truths".into()))?;
        let h = weights.forward(s.theta)?;
        d = d.max(norm(&sub(&h, target)));
    }
    Ok(d)
}

/// Empirical max over train and test of the parameter norm.
pub fn empirical_b(thetas: &[&[Vec<f64>]]) -> f64 {
    thetas
        .iter()
        .flat_map(|set| set.iter())
        .fold(0.0, |acc: f64, t| acc.max(norm(t)))
}

/// Empirical contraction factor: the largest ||Tx - Ty|| / ||x - y|| over
/// random pairs. A lower estimate of the true factor, never a certificate.
pub fn estimate_beta(op: &Operator, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..samples {
        let x: Vec<f64> = (0..op.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..op.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dxy = norm(&sub(&x, &y));
        if dxy == 0.0 {
            continue;
        }
        let ratio = norm(&sub(&op.apply(&x)?, &op.apply(&y)?)) / dxy;
        best = best.max(ratio);
    }
    Ok(best)
}

/// KL divergence of the Gaussian weight perturbation used by the certificate:
/// ||w||^2 / (2 sigma^2) with
/// sigma = gamma / (21 L B zeta^{L-1} sqrt(hbar log(4 hbar L))),
/// zeta = (prod_j ||W_j||_2)^{1/L}, evaluated at the realized zeta.
pub fn gaussian_kl(weights: &ModelWeights, gamma: f64, b: f64) -> Result<f64> {
    let (spectral, _) = weight_norms(weights);
    if spectral.iter().any(|&s| s <= 0.0) {
        return Err(Error::InvalidArgument(
            "degenerate network: a layer has zero spectral norm".into(),
        ));
    }
    let l = weights.depth() as f64;
    let hbar = weights.max_width() as f64;
    let zeta = spectral.iter().product::<f64>().powf(1.0 / l);
    let sigma =
        gamma / (21.0 * l * b * zeta.powf(l - 1.0) * (hbar * (4.0 * hbar * l).ln()).sqrt());
    Ok(weights.sq_norm() / (2.0 * sigma * sigma))
}

/// Inputs to the generalization bound for one (model, family, t) triple.
#[derive(Debug, Clone)]
pub struct BoundInputs {
    /// Parameter norm bound, taken as the empirical max over train and test.
    pub b: f64,
    /// Warm-start-to-fixed-point distance bound for the realized predictor.
    pub d: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Training-set size.
    pub n: usize,
    /// Evaluation steps.
    pub t: usize,
    pub class: OperatorClass,
    pub spectral: Vec<f64>,
    pub frobenius: Vec<f64>,
    pub max_width: usize,
}

/// Every certificate quantity for one evaluation horizon.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub t: usize,
    pub gamma: f64,
    pub delta: f64,
    pub n: usize,
    /// Sampled lower estimate of the marginal empirical risk at gamma.
    pub empirical_marginal_risk: f64,
    pub c_gamma_half: f64,
    /// The network constant; absent for degenerate (zero-layer-norm) models.
    pub c_const: Option<f64>,
    pub kl: f64,
    /// True when the spectral product clears gamma / (2B).
    pub main_case: bool,
    /// Explicit certificate: marginal risk + 4 C_{gamma/2}(t)
    /// sqrt((KL + log(6N/delta)) / (N-1)).
    pub lemma_rhs: f64,
    /// Asymptotic main-case form, reported for reference only.
    pub theorem_main_rhs: f64,
    /// Small-weight case: marginal risk + C_{gamma/2}(t)
    /// sqrt(log(1/delta) / (2N)).
    pub theorem_secondary_rhs: f64,
    /// The bound that applies to this model: the explicit form in the main
    /// case, the small-weight form otherwise.
    pub certificate_rhs: f64,
}

/// Evaluate the generalization bound at one horizon.
pub fn pac_bound(inputs: &BoundInputs, empirical_marginal_risk: f64, kl: f64) -> Result<BoundReport> {
    if inputs.delta <= 0.0 || inputs.delta >= 1.0 {
        return Err(Error::InvalidArgument(
            "confidence delta must lie in (0, 1)".into(),
        ));
    }
    if inputs.n < 2 {
        return Err(Error::InvalidArgument(
            "the bound needs at least two training samples".into(),
        ));
    }
    let n = inputs.n as f64;
    let l = inputs.spectral.len() as f64;
    let cgh = c_gamma(inputs.t, inputs.gamma / 2.0, inputs.class, inputs.d);
    let c_const =
        compute_c_from_norms(&inputs.spectral, &inputs.frobenius, inputs.b, inputs.max_width).ok();
    let spectral_product: f64 = inputs.spectral.iter().product();
    let main_case = spectral_product >= inputs.gamma / (2.0 * inputs.b);

    let lemma_rhs = empirical_marginal_risk
        + 4.0 * cgh * ((kl + (6.0 * n / inputs.delta).ln()) / (n - 1.0)).sqrt();
    let theorem_main_rhs = match c_const {
        Some(c) => {
            empirical_marginal_risk
                + cgh
                    * ((c + (l * n / inputs.delta).ln()) / (inputs.gamma * inputs.gamma * n))
                        .sqrt()
        }
        None => f64::INFINITY,
    };
    let theorem_secondary_rhs =
        empirical_marginal_risk + cgh * ((1.0 / inputs.delta).ln() / (2.0 * n)).sqrt();
    let certificate_rhs = if main_case {
        lemma_rhs
    } else {
        theorem_secondary_rhs
    };
    Ok(BoundReport {
        t: inputs.t,
        gamma: inputs.gamma,
        delta: inputs.delta,
        n: inputs.n,
        empirical_marginal_risk,
        c_gamma_half: cgh,
        c_const,
        kl,
        main_case,
        lemma_rhs,
        theorem_main_rhs,
        theorem_secondary_rhs,
        certificate_rhs,
    })
}

/// Sampled lower estimates of the marginal empirical risk at each radius in
/// `gammas` (ascending): per instance, the max residual after t steps over
/// the unperturbed start and `dirs` unit directions scaled by every radius up
/// to the current one. Sharing directions across radii makes the estimates
/// monotone in gamma by construction.
pub fn sampled_marginal_risks(
    weights: &ModelWeights,
    samples: &[TrainSample],
    t: usize,
    gammas: &[f64],
    dirs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    for w in gammas.windows(2) {
        if w[1] < w[0] {
            return Err(Error::InvalidArgument(
                "marginal radii must be ascending".into(),
            ));
        }
    }
    let per_instance: Vec<Result<Vec<f64>>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let z = weights.forward(s.theta)?;
            let run = |start: &[f64]| -> Result<f64> {
                let mut cur = start.to_vec();
                for _ in 0..t {
                    cur = s.op.apply(&cur)?;
                }
                s.op.fp_residual(&cur)
            };
            let mut cum = run(&z)?;
            let mut out = Vec::with_capacity(gammas.len());
            let directions: Vec<Vec<f64>> = (0..dirs)
                .map(|_| {
                    let v: Vec<f64> = (0..z.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let nv = norm(&v);
                    if nv == 0.0 {
                        let mut e = vec![0.0; z.len()];
                        e[0] = 1.0;
                        e
                    } else {
                        scale(&v, 1.0 / nv)
                    }
                })
                .collect();
            for &g in gammas {
                for d in &directions {
                    let start = add(&z, &scale(d, g));
                    cum = cum.max(run(&start)?);
                }
                out.push(cum);
            }
            Ok(out)
        })
        .collect();
    let mut sums = vec![0.0; gammas.len()];
    let mut count = 0usize;
    for r in per_instance {
        let v = r?;
        for (acc, x) in sums.iter_mut().zip(&v) {
            *acc += x;
        }
        count += 1;
    }
    Ok(sums.iter().map(|s| s / count as f64).collect())
}

/// Plain empirical risk at horizon t: mean residual of T^t(h_w(theta)).
pub fn empirical_risk(weights: &ModelWeights, samples: &[TrainSample], t: usize) -> Result<f64> {
    crate::training::mean_fp_residual_at_k(weights, samples, t)
}

impl BoundReport {
    /// Flat key-value serialization of every intermediate quantity.
    pub fn write_keyvalue(&self, out: &mut impl Write, label: &str) -> Result<()> {
        writeln!(out, "[{label}]")?;
        writeln!(out, "t = {}", self.t)?;
        writeln!(out, "gamma = {}", self.gamma)?;
        writeln!(out, "delta = {}", self.delta)?;
        writeln!(out, "n = {}", self.n)?;
        writeln!(
            out,
            "empirical_marginal_risk = {}  # sampled lower estimate",
            self.empirical_marginal_risk
        )?;
        writeln!(out, "c_gamma_half = {}", self.c_gamma_half)?;
        match self.c_const {
            Some(c) => writeln!(out, "c_const = {c}")?,
            None => writeln!(out, "c_const = degenerate")?,
        }
        writeln!(out, "kl = {}", self.kl)?;
        writeln!(out, "main_case = {}", self.main_case)?;
        writeln!(out, "lemma_rhs = {}", self.lemma_rhs)?;
        writeln!(out, "theorem_main_rhs = {}  # reference only", self.theorem_main_rhs)?;
        writeln!(out, "theorem_secondary_rhs = {}", self.theorem_secondary_rhs)?;
        writeln!(out, "certificate_rhs = {}", self.certificate_rhs)?;
        Ok(())
    }
}

/// Write per-t curves of the tail constant and certificate to CSV.
pub fn write_bound_curve(
    path: &Path,
    config_hash: &str,
    reports: &[BoundReport],
) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# config_hash: {config_hash}")?;
    writeln!(f, "t,c_gamma_half,certificate_rhs,lemma_rhs")?;
    for r in reports {
        writeln!(
            f,
            "{},{},{},{}",
            r.t, r.c_gamma_half, r.certificate_rhs, r.lemma_rhs
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::LossKind;
    use crate::numerics::Matrix;
    use crate::operators::ProxSpec;
    use std::sync::Arc;

    fn unit_norm_weights() -> (Vec<f64>, Vec<f64>) {
        (vec![1.0, 1.0], vec![2.0f64.sqrt(), 2.0f64.sqrt()])
    }

    #[test]
    fn c_constant_arithmetic() {
        let (s, f) = unit_norm_weights();
        let c = compute_c_from_norms(&s, &f, 1.0, 3).unwrap();
        // 1 * 4 * 3 * ln 6 * 1 * (2 + 2)
        let expect = 48.0 * 6.0f64.ln();
        assert!((c - expect).abs() < 1e-12, "{c} vs {expect}");
        // Doubling B scales by four.
        let c2 = compute_c_from_norms(&s, &f, 2.0, 3).unwrap();
        assert!((c2 - 4.0 * c).abs() < 1e-9);
        // Scaling every layer by s scales by s^4 for L = 2.
        let k = 1.7;
        let s2: Vec<f64> = s.iter().map(|v| v * k).collect();
        let f2: Vec<f64> = f.iter().map(|v| v * k).collect();
        let c3 = compute_c_from_norms(&s2, &f2, 1.0, 3).unwrap();
        assert!((c3 - k.powi(4) * c).abs() < 1e-9 * c3);
        // A zero layer is degenerate.
        assert!(compute_c_from_norms(&[0.0, 1.0], &f, 1.0, 3).is_err());
    }

    #[test]
    fn tail_constant_examples() {
        let c1 = c_gamma(2, 0.0, OperatorClass::Contractive(0.5), 1.0);
        assert!((c1 - 0.5).abs() < 1e-15);
        let c2 = c_gamma(0, 0.0, OperatorClass::Averaged(0.5), 1.0);
        assert!((c2 - 1.0).abs() < 1e-15);
        let c3 = c_gamma(10, 0.1, OperatorClass::Contractive(0.9), 2.0);
        assert!((c3 - 2.0 * 0.9f64.powi(10) * 2.1).abs() < 1e-12);
    }

    #[test]
    fn tail_constant_nonincreasing_in_t() {
        for class in [
            OperatorClass::Contractive(0.93),
            OperatorClass::LinearlyConvergent(0.85),
            OperatorClass::Averaged(0.5),
        ] {
            let mut prev = f64::INFINITY;
            for t in 0..200 {
                let v = c_gamma(t, 0.05, class, 3.0);
                assert!(v <= prev + 1e-15);
                prev = v;
            }
        }
    }

    #[test]
    fn ratio_bound_table() {
        let contr = OperatorClass::Contractive(0.5);
        assert_eq!(
            ratio_bound(contr, 7, 5, LossKind::Regression).unwrap(),
            0.5
        );
        assert_eq!(
            ratio_bound(contr, 7, 5, LossKind::FixedPoint).unwrap(),
            0.25
        );
        let avg = OperatorClass::Averaged(0.5);
        let r = ratio_bound(avg, 8, 5, LossKind::Regression).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        assert_eq!(ratio_bound(avg, 8, 5, LossKind::FixedPoint).unwrap(), 1.0);
        let lin = OperatorClass::LinearlyConvergent(0.7);
        assert_eq!(ratio_bound(lin, 9, 9, LossKind::FixedPoint).unwrap(), 1.0);
        assert!(ratio_bound(lin, 3, 5, LossKind::FixedPoint).is_err());
    }

    fn gd_op(c: Vec<f64>) -> Operator {
        Operator::gradient_descent(
            Arc::new(Matrix::diag(&[2.0, 1.0])),
            c,
            0.5,
            Some((1.0, 2.0)),
        )
        .unwrap()
    }

    #[test]
    fn d_estimate_edge_cases() {
        let op = gd_op(vec![0.0, 0.0]);
        let theta = vec![1.0, -1.0];
        let target = vec![3.0, 4.0];
        let samples = [TrainSample {
            theta: &theta,
            op: &op,
            target: Some(&target),
        }];
        // The zero model predicts the origin, so D is the target norm.
        let zero = ModelWeights::zeros(&[2, 2], true);
        assert_eq!(estimate_d(&zero, &samples).unwrap(), 5.0);
        // A model reproducing the target exactly gives zero.
        let mut exact = Matrix::zeros(2, 3);
        exact.set(0, 2, 3.0);
        exact.set(1, 2, 4.0);
        let w = ModelWeights::from_layers(vec![exact], true).unwrap();
        assert_eq!(estimate_d(&w, &samples).unwrap(), 0.0);
    }

    #[test]
    fn beta_estimates() {
        let op = Operator::gradient_descent(
            Arc::new(Matrix::diag(&[100.0, 1.0])),
            vec![0.0, 0.0],
            2.0 / 101.0,
            Some((1.0, 100.0)),
        )
        .unwrap();
        let est = estimate_beta(&op, 10_000, 1).unwrap();
        assert!((est - 99.0 / 101.0).abs() < 1e-3, "estimate {est}");
        // Identity operator (Douglas-Rachford with both proxes trivial).
        let ident =
            Operator::douglas_rachford(ProxSpec::ZeroFn, ProxSpec::ZeroFn, 3).unwrap();
        assert!((estimate_beta(&ident, 500, 2).unwrap() - 1.0).abs() < 1e-12);
        // Constant operator: gradient step that lands on the optimum from
        // anywhere.
        let constant = Operator::gradient_descent(
            Arc::new(Matrix::diag(&[2.0, 2.0])),
            vec![1.0, 1.0],
            0.5,
            Some((2.0, 2.0)),
        )
        .unwrap();
        assert_eq!(estimate_beta(&constant, 500, 3).unwrap(), 0.0);
    }

    #[test]
    fn pac_bound_cases() {
        let mk = |spectral: Vec<f64>, n: usize| BoundInputs {
            b: 10.0,
            d: 2.0,
            gamma: 0.5,
            delta: 0.05,
            n,
            t: 5,
            class: OperatorClass::Contractive(0.9),
            frobenius: spectral.iter().map(|s| s * 1.5).collect(),
            spectral,
            max_width: 8,
        };
        // Healthy weights select the main case and the explicit certificate.
        let inputs = mk(vec![2.0, 3.0], 100);
        let rep = pac_bound(&inputs, 0.3, 50.0).unwrap();
        assert!(rep.main_case);
        assert_eq!(rep.certificate_rhs, rep.lemma_rhs);
        assert!(rep.lemma_rhs > rep.empirical_marginal_risk);
        // Zero weights trip the small-product case and skip c entirely.
        let inputs = mk(vec![0.0, 0.0], 100);
        let rep = pac_bound(&inputs, 0.3, 0.0).unwrap();
        assert!(!rep.main_case);
        assert!(rep.c_const.is_none());
        let expect = 0.3
            + c_gamma(5, 0.25, OperatorClass::Contractive(0.9), 2.0)
                * ((1.0f64 / 0.05).ln() / 200.0).sqrt();
        assert!((rep.certificate_rhs - expect).abs() < 1e-12);
        // The penalty decays like 1/sqrt(N): far below the tail constant for
        // huge N, and a hundredfold N buys a tenfold shrink.
        let rep9 = pac_bound(&mk(vec![2.0, 3.0], 1_000_000_000), 0.3, 50.0).unwrap();
        let rep11 = pac_bound(&mk(vec![2.0, 3.0], 100_000_000_000), 0.3, 50.0).unwrap();
        assert!(rep11.lemma_rhs - 0.3 < 1e-3 * rep11.c_gamma_half);
        assert!(rep9.theorem_secondary_rhs - 0.3 < 1e-3 * rep9.c_gamma_half);
        let ratio = (rep11.lemma_rhs - 0.3) / (rep9.lemma_rhs - 0.3);
        assert!((ratio - 0.1).abs() < 0.01, "decay ratio {ratio}");
        // Bad arguments.
        assert!(pac_bound(&mk(vec![1.0, 1.0], 1), 0.3, 1.0).is_err());
        let mut bad = mk(vec![1.0, 1.0], 10);
        bad.delta = 1.5;
        assert!(pac_bound(&bad, 0.3, 1.0).is_err());
    }

    #[test]
    fn marginal_is_monotone_and_exact_at_zero() {
        let ops: Vec<Operator> = (0..4)
            .map(|i| gd_op(vec![i as f64, -(i as f64)]))
            .collect();
        let thetas: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 1.0]).collect();
        let samples: Vec<TrainSample> = thetas
            .iter()
            .zip(&ops)
            .map(|(t, o)| TrainSample {
                theta: t,
                op: o,
                target: None,
            })
            .collect();
        let w = ModelWeights::init(&[2, 3, 2], true, 5);
        let gammas = [0.0, 0.1, 0.5, 2.0];
        let est = sampled_marginal_risks(&w, &samples, 3, &gammas, 16, 9).unwrap();
        for win in est.windows(2) {
            assert!(win[0] <= win[1] + 1e-15);
        }
        let plain = empirical_risk(&w, &samples, 3).unwrap();
        assert!((est[0] - plain).abs() <= 1e-12);
    }

    #[test]
    fn contractive_marginal_surcharge() {
        // Sampled marginal never exceeds residual + 2 beta^t gamma.
        let op = gd_op(vec![1.0, 2.0]);
        let beta = match op.class() {
            OperatorClass::Contractive(b) => b,
            _ => unreachable!(),
        };
        let theta = vec![0.5, -0.5];
        let samples = [TrainSample {
            theta: &theta,
            op: &op,
            target: None,
        }];
        let w = ModelWeights::init(&[2, 4, 2], true, 6);
        for t in [0usize, 3, 10] {
            for gamma in [0.1, 1.0] {
                let est =
                    sampled_marginal_risks(&w, &samples, t, &[gamma], 32, 11).unwrap()[0];
                let plain = empirical_risk(&w, &samples, t).unwrap();
                assert!(
                    est <= plain + 2.0 * beta.powi(t as i32) * gamma + 1e-9,
                    "surcharge violated at t={t}, gamma={gamma}"
                );
            }
        }
    }
}
