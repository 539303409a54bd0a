//! Evaluating warm-start methods: residual curves, gain relative to the cold
//! start, iterations-to-tolerance tables, and CSV emission.
//!
//! Evaluation reuses the exact `apply` the training tapes record, so the
//! residual at t = k equals the training fp-loss on the same instance.

use crate::error::{Error, Result};
use crate::numerics::{norm, sub};
use crate::operators::Operator;
use crate::problems::BlockLayout;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

/// Gains are capped here when the cold-start residual underflows to zero.
pub const GAIN_CAP: f64 = 1e12;

/// Fixed-point residuals along the trajectory from `ws`: index t holds
/// ||T(z_t) - z_t|| with z_0 = ws, computed in one pass.
pub fn residual_curve(op: &Operator, ws: &[f64], t_max: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(t_max + 1);
    let mut z = ws.to_vec();
    for _ in 0..=t_max {
        let tz = op.apply(&z)?;
        out.push(norm(&sub(&tz, &z)));
        z = tz;
    }
    Ok(out)
}

/// Elementwise cold/method ratio. Returns the gains and whether any entry hit
/// the cap because the cold residual reached exact zero.
pub fn gain_curve(method: &[f64], cold: &[f64]) -> Result<(Vec<f64>, bool)> {
    if method.len() != cold.len() {
        return Err(Error::Shape {
            what: "gain curve lengths",
            expected: cold.len(),
            got: method.len(),
        });
    }
    let mut capped = false;
    let gains = method
        .iter()
        .zip(cold)
        .map(|(&m, &c)| {
            if m == 0.0 && c == 0.0 {
                1.0
            } else if m == 0.0 {
                capped = true;
                GAIN_CAP
            } else {
                let g = c / m;
                if g > GAIN_CAP {
                    capped = true;
                    GAIN_CAP
                } else {
                    g
                }
            }
        })
        .collect();
    Ok((gains, capped))
}

/// Warm start from the training instance nearest in parameter space; ties go
/// to the lowest index.
pub fn nearest_neighbor_ws(
    test_theta: &[f64],
    train_thetas: &[Vec<f64>],
    train_solutions: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if train_thetas.is_empty() {
        return Err(Error::Missing("empty training set for nearest neighbor".into()));
    }
    let mut best = (f64::INFINITY, 0usize);
    for (j, t) in train_thetas.iter().enumerate() {
        let d = norm(&sub(test_theta, t));
        if d < best.0 {
            best = (d, j);
        }
    }
    Ok(train_solutions[best.1].clone())
}

/// Shift the previous instance's solution one time index forward, duplicating
/// the final block. Only families with a declared per-time-step structure
/// support this.
pub fn previous_solution_ws(prev_z: &[f64], layout: Option<&BlockLayout>) -> Result<Vec<f64>> {
    match layout {
        Some(l) => Ok(l.shift(prev_z)),
        None => Err(Error::Config(
            "previous-solution warm start needs a sequential family".into(),
        )),
    }
}

/// First index t with residual <= tol, or len (= t_max + 1) when never
/// reached.
pub fn iters_to_tolerance(residuals: &[f64], tolerances: &[f64]) -> Vec<usize> {
    tolerances
        .iter()
        .map(|&tol| {
            residuals
                .iter()
                .position(|&r| r <= tol)
                .unwrap_or(residuals.len())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MethodEval {
    pub name: String,
    pub mean_residual: Vec<f64>,
    pub mean_gain: Vec<f64>,
    pub gain_capped: bool,
    /// Mean iterations to each tolerance; unconverged instances count as
    /// t_max + 1 (the sentinel convention, flagged via `capped_frac`).
    pub mean_iters: Vec<f64>,
    /// Mean cold-start iterations minus this method's, per tolerance.
    pub reduction: Vec<f64>,
    /// Fraction of instances that never reached each tolerance.
    pub capped_frac: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub t_max: usize,
    pub instance_count: usize,
    pub tolerances: Vec<f64>,
    pub methods: Vec<MethodEval>,
}

/// Evaluate warm-start methods over a common instance set. The first method
/// is the cold-start baseline for gains and reductions. `warm_starts[m][i]`
/// is method m's start for instance i.
pub fn evaluate_methods(
    ops: &[Operator],
    names: &[String],
    warm_starts: &[Vec<Vec<f64>>],
    t_max: usize,
    tolerances: &[f64],
) -> Result<EvalReport> {
    if names.len() != warm_starts.len() || names.is_empty() {
        return Err(Error::InvalidArgument(
            "method names and warm starts must align".into(),
        ));
    }
    for tol in tolerances.windows(2) {
        if tol[1] > tol[0] {
            return Err(Error::InvalidArgument(
                "tolerances must be sorted descending".into(),
            ));
        }
    }
    let n = ops.len();
    // curves[m][i]: residual curve of method m on instance i.
    let mut curves: Vec<Vec<Vec<f64>>> = Vec::with_capacity(names.len());
    for ws in warm_starts {
        if ws.len() != n {
            return Err(Error::Shape {
                what: "warm starts per instance",
                expected: n,
                got: ws.len(),
            });
        }
        let per: Vec<Result<Vec<f64>>> = ops
            .par_iter()
            .zip(ws.par_iter())
            .map(|(op, w)| residual_curve(op, w, t_max))
            .collect();
        curves.push(per.into_iter().collect::<Result<_>>()?);
    }

    let cold = &curves[0];
    let mut methods = Vec::with_capacity(names.len());
    for (m, name) in names.iter().enumerate() {
        let mine = &curves[m];
        let mut mean_residual = vec![0.0; t_max + 1];
        let mut mean_gain = vec![0.0; t_max + 1];
        let mut gain_capped = false;
        let mut iters_sum = vec![0.0; tolerances.len()];
        let mut capped = vec![0.0; tolerances.len()];
        for i in 0..n {
            for t in 0..=t_max {
                mean_residual[t] += mine[i][t];
            }
            let (g, c) = gain_curve(&mine[i], &cold[i])?;
            gain_capped |= c;
            for t in 0..=t_max {
                mean_gain[t] += g[t];
            }
            for (ti, &cnt) in iters_to_tolerance(&mine[i], tolerances).iter().enumerate() {
                iters_sum[ti] += cnt as f64;
                if cnt > t_max {
                    capped[ti] += 1.0;
                }
            }
        }
        let inv = 1.0 / n as f64;
        for v in mean_residual.iter_mut().chain(mean_gain.iter_mut()) {
            *v *= inv;
        }
        let mean_iters: Vec<f64> = iters_sum.iter().map(|s| s * inv).collect();
        let capped_frac: Vec<f64> = capped.iter().map(|s| s * inv).collect();
        methods.push(MethodEval {
            name: name.clone(),
            mean_residual,
            mean_gain,
            gain_capped,
            mean_iters,
            reduction: vec![],
            capped_frac,
        });
    }
    let cold_iters = methods[0].mean_iters.clone();
    for m in &mut methods {
        m.reduction = cold_iters
            .iter()
            .zip(&m.mean_iters)
            .map(|(c, s)| c - s)
            .collect();
    }
    Ok(EvalReport {
        t_max,
        instance_count: n,
        tolerances: tolerances.to_vec(),
        methods,
    })
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodEval> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Write the report as CSV files prefixed by the family name. Each file
    /// opens with a comment line carrying the configuration hash.
    pub fn emit_tables(&self, dir: &Path, family: &str, config_hash: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();

        let curve = |rows: &dyn Fn(usize, &MethodEval) -> f64| -> String {
            let mut s = String::new();
            for t in 0..=self.t_max {
                s.push_str(&t.to_string());
                for m in &self.methods {
                    s.push(',');
                    s.push_str(&format!("{}", rows(t, m)));
                }
                s.push('\n');
            }
            s
        };
        let write_file = |name: String, header: String, body: String| -> Result<()> {
            let mut f = std::fs::File::create(dir.join(name))?;
            writeln!(f, "# config_hash: {config_hash}")?;
            writeln!(f, "{header}")?;
            f.write_all(body.as_bytes())?;
            Ok(())
        };

        write_file(
            format!("{family}_residual_curve.csv"),
            format!("t,{}", names.join(",")),
            curve(&|t, m| m.mean_residual[t]),
        )?;
        write_file(
            format!("{family}_gain_curve.csv"),
            format!("t,{}", names.join(",")),
            curve(&|t, m| m.mean_gain[t]),
        )?;

        let table = |rows: &dyn Fn(usize, &MethodEval) -> f64| -> String {
            let mut s = String::new();
            for (ti, tol) in self.tolerances.iter().enumerate() {
                s.push_str(&format!("{tol}"));
                for m in &self.methods {
                    s.push(',');
                    s.push_str(&format!("{}", rows(ti, m)));
                }
                s.push('\n');
            }
            s
        };
        write_file(
            format!("{family}_iters.csv"),
            format!("tolerance,{}", names.join(",")),
            table(&|ti, m| m.mean_iters[ti]),
        )?;
        write_file(
            format!("{family}_reduction.csv"),
            format!("tolerance,{}", names.join(",")),
            table(&|ti, m| m.reduction[ti]),
        )?;
        write_file(
            format!("{family}_iters_capped_frac.csv"),
            format!("tolerance,{}", names.join(",")),
            table(&|ti, m| m.capped_frac[ti]),
        )?;
        Ok(())
    }

    /// A small gnuplot script rendering the emitted curves; purely optional.
    pub fn emit_gnuplot(&self, dir: &Path, family: &str) -> Result<()> {
        let mut f = std::fs::File::create(dir.join(format!("{family}_curves.gp")))?;
        writeln!(f, "set datafile separator ','")?;
        writeln!(f, "set logscale y")?;
        writeln!(f, "set xlabel 'evaluation steps'")?;
        writeln!(f, "set ylabel 'fixed-point residual'")?;
        let plots: Vec<String> = self
            .methods
            .iter()
            .enumerate()
            .map(|(i, m)| {
                format!(
                    "'{family}_residual_curve.csv' skip 2 using 1:{} with lines title '{}'",
                    i + 2,
                    m.name
                )
            })
            .collect();
        writeln!(f, "plot {}", plots.join(", \\\n     "))?;
        Ok(())
    }
}

/// Bitwise disjointness of two parameter sets; evaluation refuses to score a
/// test set that shares instances with training.
pub fn assert_disjoint(train: &[Vec<f64>], test: &[Vec<f64>]) -> Result<()> {
    use std::collections::HashSet;
    let key = |t: &[f64]| -> Vec<u64> { t.iter().map(|v| v.to_bits()).collect() };
    let seen: HashSet<Vec<u64>> = train.iter().map(|t| key(t)).collect();
    for t in test {
        if seen.contains(&key(t)) {
            return Err(Error::InvalidArgument(
                "test set shares an instance with the training set".into(),
            ));
        }
    }
    Ok(())
}
