//! Orchestration of the generate -> train -> eval -> bound pipeline from one
//! declarative config, with full seed provenance.
//!
//! Every random choice derives from the master seed and a stream label, the
//! resolved config is snapshotted verbatim into the output directory, and
//! every emitted file carries the config hash (computed with the output
//! location and worker count masked out, so reruns into different directories
//! stay byte-identical).

use crate::autodiff::LossKind;
use crate::bounds::{
    self, empirical_b, pac_bound, sampled_marginal_risks, weight_norms, BoundInputs, BoundReport,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    assert_disjoint, evaluate_methods, nearest_neighbor_ws, previous_solution_ws, residual_curve,
    EvalReport,
};
use crate::numerics::norm;
use crate::predictor::ModelWeights;
use crate::problems::{
    illustrative_operator, illustrative_warm_starts, Dataset, Family, FamilyKind, ScaleProfile,
};
use crate::seeds;
use crate::training::{sweep, train, SweepPoint, TrainConfig, GROUND_TRUTH_CAP};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    pub kind: FamilyKind,
    #[serde(default = "default_scale")]
    pub scale: ScaleProfile,
    /// Dimension override: lasso/robust_ls take [m, n], robust_kalman [T].
    #[serde(default)]
    pub dims: Vec<usize>,
}

fn default_scale() -> ScaleProfile {
    ScaleProfile::Desk
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// 0 means the family/scale default.
    pub train_count: usize,
    pub test_count: usize,
    pub ground_truths: bool,
    pub cap: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train_count: 0,
            test_count: 0,
            ground_truths: true,
            cap: GROUND_TRUTH_CAP,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub k_grid: Vec<usize>,
    /// Any of "fp", "reg".
    pub losses: Vec<String>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub bias: bool,
    pub sweep: bool,
    pub sweep_learning_rates: Vec<f64>,
    pub sweep_depths: Vec<usize>,
    pub sweep_width: usize,
    pub sweep_epochs: usize,
    pub max_decays: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            k_grid: vec![0, 5, 15, 30, 60],
            losses: vec!["fp".into(), "reg".into()],
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 200,
            hidden: vec![500],
            bias: true,
            sweep: false,
            sweep_learning_rates: vec![1e-3, 1e-4],
            sweep_depths: vec![0, 1, 2],
            sweep_width: 500,
            sweep_epochs: 50,
            max_decays: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// 0 means the family default (500 for the proximal-gradient family, 250
    /// otherwise).
    pub t_max: usize,
    pub tolerances: Vec<f64>,
    pub baselines: bool,
    pub gnuplot: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            t_max: 0,
            tolerances: vec![1e-1, 1e-2, 1e-3, 1e-4],
            baselines: true,
            gnuplot: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundSection {
    /// Radii are these multiples of the mean warm-start norm; the middle one
    /// is the reporting default.
    pub gamma_scales: Vec<f64>,
    pub delta: f64,
    pub t_list: Vec<usize>,
    pub marginal_dirs: usize,
}

impl Default for BoundSection {
    fn default() -> Self {
        BoundSection {
            gamma_scales: vec![0.01, 0.1, 1.0],
            delta: 0.05,
            t_list: vec![5, 60],
            marginal_dirs: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub master_seed: u64,
    pub out_dir: PathBuf,
    /// 0 leaves the global thread pool untouched.
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            master_seed: 42,
            out_dir: PathBuf::from("runs/out"),
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub family: FamilySection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub bound: BoundSection,
    #[serde(default)]
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_str_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut value: toml::Value =
            toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("override '{ov}' is not key=value")))?;
            apply_override(&mut value, key.trim(), raw.trim())?;
        }
        value
            .try_into()
            .map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_str_with_overrides(&text, overrides)
    }

    pub fn family(&self) -> Result<Family> {
        let seed = seeds::derive(self.run.master_seed, "family-data");
        let d = &self.family.dims;
        match (self.family.kind, d.len()) {
            (k, 0) => Family::standard(k, self.family.scale, seed),
            (FamilyKind::Lasso, 2) => Family::lasso(d[0], d[1], seed),
            (FamilyKind::RobustLs, 2) => Family::robust_ls(d[0], d[1], seed),
            (FamilyKind::RobustKalman, 1) => Family::robust_kalman(d[0], seed),
            _ => Err(Error::Config(format!(
                "dims {:?} do not fit family {:?}",
                d, self.family.kind
            ))),
        }
    }

    pub fn counts(&self) -> (usize, usize) {
        let (dt, de) = Family::standard_counts(self.family.kind, self.family.scale);
        (
            if self.data.train_count == 0 {
                dt
            } else {
                self.data.train_count
            },
            if self.data.test_count == 0 {
                de
            } else {
                self.data.test_count
            },
        )
    }

    pub fn losses(&self) -> Result<Vec<LossKind>> {
        self.train
            .losses
            .iter()
            .map(|s| match s.as_str() {
                "fp" => Ok(LossKind::FixedPoint),
                "reg" => Ok(LossKind::Regression),
                other => Err(Error::Config(format!("unknown loss '{other}'"))),
            })
            .collect()
    }

    /// Hash of the scientifically relevant config: output location and worker
    /// count are masked so reruns elsewhere produce identical bytes.
    pub fn hash(&self) -> String {
        let mut masked = self.clone();
        masked.run.out_dir = PathBuf::new();
        masked.run.workers = 0;
        let canon = toml::to_string(&masked).expect("config serializes");
        let mut h = Sha256::new();
        h.update(canon.as_bytes());
        let out = h.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        let mut f = std::fs::File::create(dir.join("config.toml"))?;
        writeln!(f, "# config_hash: {}", self.hash())?;
        f.write_all(text.as_bytes())?;
        Ok(())
    }
}

fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let parsed: toml::Value = if let Ok(v) = raw.parse::<i64>() {
        toml::Value::Integer(v)
    } else if let Ok(v) = raw.parse::<f64>() {
        toml::Value::Float(v)
    } else if let Ok(v) = raw.parse::<bool>() {
        toml::Value::Boolean(v)
    } else if raw.starts_with('[') {
        toml::from_str::<toml::Value>(&format!("v = {raw}"))
            .map_err(|e| Error::Parse(format!("override value '{raw}': {e}")))?
            .get("v")
            .cloned()
            .unwrap()
    } else {
        toml::Value::String(raw.to_string())
    };
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .as_table_mut()
            .ok_or_else(|| Error::Parse(format!("override key '{key}' mismatches config")))?
            .entry(part.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    cur.as_table_mut()
        .ok_or_else(|| Error::Parse(format!("override key '{key}' mismatches config")))?
        .insert(parts.last().unwrap().to_string(), parsed);
    Ok(())
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

fn loss_tag(loss: LossKind) -> &'static str {
    match loss {
        LossKind::FixedPoint => "fp",
        LossKind::Regression => "reg",
    }
}

fn family_tag(kind: FamilyKind) -> &'static str {
    match kind {
        FamilyKind::UnconstrainedQp => "unconstrained_qp",
        FamilyKind::Lasso => "lasso",
        FamilyKind::RobustKalman => "robust_kalman",
        FamilyKind::RobustLs => "robust_ls",
    }
}

/// Generate train/test datasets (with ground truths unless disabled) and
/// write them plus the config snapshot.
pub fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.run.out_dir;
    std::fs::create_dir_all(dir)?;
    cfg.snapshot(dir)?;
    let family = Arc::new(cfg.family()?);
    let (n_train, n_test) = cfg.counts();
    let mut train_ds = Dataset::generate(&family, n_train, "train")?;
    let mut test_ds = Dataset::generate(&family, n_test, "test")?;
    assert_disjoint(&train_ds.thetas, &test_ds.thetas)?;
    if cfg.data.ground_truths {
        train_ds.compute_ground_truths(cfg.data.cap)?;
        test_ds.compute_ground_truths(cfg.data.cap)?;
    }
    train_ds.save(&dir.join("train.ds"))?;
    test_ds.save(&dir.join("test.ds"))?;
    Ok(())
}

pub struct TrainedModel {
    pub loss: LossKind,
    pub k: usize,
    pub weights: ModelWeights,
}

fn model_path(dir: &Path, loss: LossKind, k: usize) -> PathBuf {
    dir.join(format!("model_{}_k{}.wts", loss_tag(loss), k))
}

/// Train one model per (loss, k) grid point; optionally run the sweep first
/// and adopt its winning learning rate and architecture for every model.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<TrainedModel>> {
    let dir = &cfg.run.out_dir;
    let train_ds = Dataset::load(&dir.join("train.ds"))?;
    let family = &train_ds.family;
    let losses = cfg.losses()?;
    let hash = cfg.hash();

    let mut lr = cfg.train.learning_rate;
    let mut hidden = cfg.train.hidden.clone();
    if cfg.train.sweep {
        let samples = train_ds.samples(false)?;
        let mut points = Vec::new();
        for &plr in &cfg.train.sweep_learning_rates {
            for &depth in &cfg.train.sweep_depths {
                points.push(SweepPoint {
                    learning_rate: plr,
                    hidden: vec![cfg.train.sweep_width; depth],
                });
            }
        }
        // One sweep at a reference grid point; its winner is reused for every
        // (loss, k) model.
        let ref_k = cfg.train.k_grid[cfg.train.k_grid.len() / 2];
        let base = TrainConfig {
            k: ref_k,
            loss: LossKind::FixedPoint,
            batch_size: cfg.train.batch_size,
            epochs: cfg.train.sweep_epochs,
            max_decays: cfg.train.max_decays,
            seed: seeds::derive(cfg.run.master_seed, "sweep"),
            ..TrainConfig::default()
        };
        let (best, outcomes) = sweep(
            &samples,
            family.theta_dim(),
            family.state_dim(),
            &points,
            &base,
            0.1,
            seeds::derive(cfg.run.master_seed, "sweep-init"),
        )?;
        let mut f = std::fs::File::create(dir.join("sweep.csv"))?;
        writeln!(f, "# config_hash: {hash}")?;
        writeln!(f, "learning_rate,depth,width,val_fp_residual,selected")?;
        for (i, o) in outcomes.iter().enumerate() {
            writeln!(
                f,
                "{},{},{},{},{}",
                o.point.learning_rate,
                o.point.hidden.len(),
                o.point.hidden.first().copied().unwrap_or(0),
                o.val_fp_residual,
                i == best
            )?;
        }
        lr = outcomes[best].point.learning_rate;
        hidden = outcomes[best].point.hidden.clone();
    }

    let mut sizes = vec![family.theta_dim()];
    sizes.extend(&hidden);
    sizes.push(family.state_dim());

    let mut models = Vec::new();
    for &loss in &losses {
        let samples = train_ds.samples(loss == LossKind::Regression)?;
        if samples.is_empty() {
            return Err(Error::Missing(
                "no usable training samples (all capped?)".into(),
            ));
        }
        for &k in &cfg.train.k_grid {
            let tag = format!("{}_k{}", loss_tag(loss), k);
            let init = ModelWeights::init(
                &sizes,
                cfg.train.bias,
                seeds::derive(cfg.run.master_seed, &format!("init/{tag}")),
            );
            let tc = TrainConfig {
                k,
                loss,
                learning_rate: lr,
                batch_size: cfg.train.batch_size,
                epochs: cfg.train.epochs,
                max_decays: cfg.train.max_decays,
                seed: seeds::derive(cfg.run.master_seed, &format!("train/{tag}")),
                ..TrainConfig::default()
            };
            let result = train(&init, &samples, &tc).map_err(|a| a.error)?;
            let meta = format!(
                "loss={} k={} lr={} epochs={} hash={}",
                loss_tag(loss),
                k,
                lr,
                result.history.len(),
                hash
            );
            result.weights.save(&model_path(dir, loss, k), &meta)?;
            let mut f = std::fs::File::create(dir.join(format!("history_{tag}.csv")))?;
            writeln!(f, "# config_hash: {hash}")?;
            writeln!(f, "epoch,train_loss,learning_rate")?;
            for h in &result.history {
                writeln!(f, "{},{},{}", h.epoch, h.train_loss, h.learning_rate)?;
            }
            models.push(TrainedModel {
                loss,
                k,
                weights: result.weights,
            });
        }
    }
    Ok(models)
}

fn load_models(cfg: &RunConfig) -> Result<Vec<TrainedModel>> {
    let dir = &cfg.run.out_dir;
    let mut models = Vec::new();
    let mut missing = Vec::new();
    for &loss in &cfg.losses()? {
        for &k in &cfg.train.k_grid {
            let path = model_path(dir, loss, k);
            if path.exists() {
                models.push(TrainedModel {
                    loss,
                    k,
                    weights: ModelWeights::load(&path)?,
                });
            } else {
                missing.push(path.display().to_string());
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Missing(format!(
            "model files not found: {}",
            missing.join(", ")
        )));
    }
    Ok(models)
}

/// Warm starts for every method on the test set, in table-column order.
fn build_methods(
    cfg: &RunConfig,
    train_ds: &Dataset,
    test_ds: &Dataset,
    models: &[TrainedModel],
) -> Result<(Vec<String>, Vec<Vec<Vec<f64>>>)> {
    let mut names = vec!["cold_start".to_string()];
    let mut starts: Vec<Vec<Vec<f64>>> = Vec::new();

    let sizes = models
        .first()
        .map(|m| m.weights.sizes().to_vec())
        .ok_or_else(|| Error::Missing("no models to evaluate".into()))?;
    let cold = ModelWeights::cold_start(
        &sizes,
        cfg.train.bias,
        seeds::derive(cfg.run.master_seed, "cold-start"),
    );
    starts.push(
        test_ds
            .thetas
            .iter()
            .map(|t| cold.forward(t))
            .collect::<Result<_>>()?,
    );

    if cfg.eval.baselines {
        let train_gts = train_ds
            .ground_truths
            .as_ref()
            .ok_or_else(|| Error::Missing("nearest neighbor needs training ground truths".into()))?;
        let sols: Vec<Vec<f64>> = train_gts.iter().map(|g| g.z.clone()).collect();
        names.push("nearest_neighbor".into());
        starts.push(
            test_ds
                .thetas
                .iter()
                .map(|t| nearest_neighbor_ws(t, &train_ds.thetas, &sols))
                .collect::<Result<_>>()?,
        );

        if let Some(layout) = test_ds.family.block_layout() {
            let test_gts = test_ds.ground_truths.as_ref().ok_or_else(|| {
                Error::Missing("previous-solution baseline needs test ground truths".into())
            })?;
            names.push("prev_solution".into());
            let mut prev = Vec::with_capacity(test_ds.len());
            for i in 0..test_ds.len() {
                // The first test instance continues from the last training
                // solution; later ones from their predecessor in the set.
                let source = if i == 0 {
                    &train_gts[train_gts.len() - 1].z
                } else {
                    &test_gts[i - 1].z
                };
                prev.push(previous_solution_ws(source, Some(layout))?);
            }
            starts.push(prev);
        }
    }

    for m in models {
        names.push(format!("{}_k{}", loss_tag(m.loss), m.k));
        starts.push(
            test_ds
                .thetas
                .iter()
                .map(|t| m.weights.forward(t))
                .collect::<Result<_>>()?,
        );
    }
    Ok((names, starts))
}

/// Evaluate all methods on the test set and emit the report tables.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let dir = &cfg.run.out_dir;
    let train_ds = Dataset::load(&dir.join("train.ds"))?;
    let test_ds = Dataset::load(&dir.join("test.ds"))?;
    assert_disjoint(&train_ds.thetas, &test_ds.thetas)?;
    let models = load_models(cfg)?;
    let (names, starts) = build_methods(cfg, &train_ds, &test_ds, &models)?;
    let t_max = if cfg.eval.t_max == 0 {
        test_ds.family.default_t_max()
    } else {
        cfg.eval.t_max
    };
    let report = evaluate_methods(&test_ds.operators, &names, &starts, t_max, &cfg.eval.tolerances)?;
    let tag = family_tag(cfg.family.kind);
    report.emit_tables(dir, tag, &cfg.hash())?;
    if cfg.eval.gnuplot {
        report.emit_gnuplot(dir, tag)?;
    }
    Ok(report)
}

/// Certificates for every trained model at the configured horizons and radii.
pub fn cmd_bound(cfg: &RunConfig) -> Result<Vec<(String, Vec<BoundReport>)>> {
    let dir = &cfg.run.out_dir;
    let train_ds = Dataset::load(&dir.join("train.ds"))?;
    let test_ds = Dataset::load(&dir.join("test.ds"))?;
    let models = load_models(cfg)?;
    let hash = cfg.hash();
    let b = empirical_b(&[&train_ds.thetas, &test_ds.thetas]);
    let class = train_ds.operators[0].class();
    let train_samples = train_ds.samples(true)?;
    let mut out = Vec::new();
    for m in &models {
        let tag = format!("{}_k{}", loss_tag(m.loss), m.k);
        let d = bounds::estimate_d(&m.weights, &train_samples)?;
        let (spectral, frobenius) = weight_norms(&m.weights);
        // Radii scale with the mean warm-start norm over training instances.
        let mean_ws: f64 = {
            let mut s = 0.0;
            for t in &train_ds.thetas {
                s += norm(&m.weights.forward(t)?);
            }
            (s / train_ds.len() as f64).max(1e-6)
        };
        let mut gammas: Vec<f64> = cfg.bound.gamma_scales.iter().map(|s| s * mean_ws).collect();
        gammas.sort_by(f64::total_cmp);

        let mut reports = Vec::new();
        for &t in &cfg.bound.t_list {
            let marginals = sampled_marginal_risks(
                &m.weights,
                &train_samples,
                t,
                &gammas,
                cfg.bound.marginal_dirs,
                seeds::derive(cfg.run.master_seed, &format!("marginal/{tag}/{t}")),
            )?;
            for (gi, &gamma) in gammas.iter().enumerate() {
                let inputs = BoundInputs {
                    b,
                    d,
                    gamma,
                    delta: cfg.bound.delta,
                    n: train_samples.len(),
                    t,
                    class,
                    spectral: spectral.clone(),
                    frobenius: frobenius.clone(),
                    max_width: m.weights.max_width(),
                };
                let kl = bounds::gaussian_kl(&m.weights, gamma, b).unwrap_or(f64::INFINITY);
                reports.push(pac_bound(&inputs, marginals[gi], kl)?);
            }
        }
        let mut f = std::fs::File::create(dir.join(format!("bound_{tag}.txt")))?;
        writeln!(f, "# config_hash: {hash}")?;
        writeln!(f, "model = {tag}")?;
        writeln!(f, "operator_class = {class:?}")?;
        writeln!(f, "b = {b}")?;
        writeln!(f, "d = {d}  # realized predictor, training instances")?;
        writeln!(f)?;
        for r in &reports {
            r.write_keyvalue(&mut f, &format!("t={} gamma={}", r.t, r.gamma))?;
            writeln!(f)?;
        }
        bounds::write_bound_curve(
            &dir.join(format!("bound_{tag}_curve.csv")),
            &hash,
            &reports,
        )?;
        out.push((tag, reports));
    }
    Ok(out)
}

/// The two-dimensional walkthrough: three equidistant warm starts whose
/// residual curves separate cleanly within five steps. Returns the labeled
/// curves and asserts the ordering purple < orange < green on steps 1..=5.
pub fn demo_illustrative(out_dir: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    std::fs::create_dir_all(out_dir)?;
    let op = illustrative_operator();
    let labels = ["purple", "orange", "green"];
    let starts = illustrative_warm_starts();
    let mut curves = Vec::new();
    for (label, ws) in labels.iter().zip(&starts) {
        curves.push((label.to_string(), residual_curve(&op, ws, 8)?));
    }
    for t in 1..=5 {
        let (p, o, g) = (curves[0].1[t], curves[1].1[t], curves[2].1[t]);
        if !(p < o && o < g) {
            return Err(Error::InvalidArgument(format!(
                "residual ordering violated at step {t}: {p} vs {o} vs {g}"
            )));
        }
    }
    let mut f = std::fs::File::create(out_dir.join("illustrative_residuals.csv"))?;
    writeln!(f, "t,purple,orange,green")?;
    for t in 0..curves[0].1.len() {
        writeln!(
            f,
            "{t},{},{},{}",
            curves[0].1[t], curves[1].1[t], curves[2].1[t]
        )?;
    }
    Ok(curves)
}

/// Print a text summary of whatever a run directory contains.
pub fn cmd_report(dir: &Path, out: &mut impl Write) -> Result<()> {
    let list = |suffix: &str| -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
            .into_iter()
            .flatten()
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.to_string_lossy().ends_with(suffix))
            .collect();
        v.sort();
        v
    };
    writeln!(out, "run directory: {}", dir.display())?;
    for p in list(".ds") {
        writeln!(out, "  dataset  {}", p.file_name().unwrap().to_string_lossy())?;
    }
    for p in list(".wts") {
        writeln!(out, "  model    {}", p.file_name().unwrap().to_string_lossy())?;
    }
    for p in list(".csv") {
        let name = p.file_name().unwrap().to_string_lossy().to_string();
        writeln!(out, "  table    {name}")?;
        if name.ends_with("_iters.csv") || name.ends_with("_reduction.csv") {
            let text = std::fs::read_to_string(&p)?;
            for line in text.lines().take(8) {
                writeln!(out, "           {line}")?;
            }
        }
    }
    for p in list(".txt") {
        writeln!(out, "  bounds   {}", p.file_name().unwrap().to_string_lossy())?;
        let text = std::fs::read_to_string(&p)?;
        for line in text.lines().filter(|l| l.starts_with("certificate_rhs")) {
            writeln!(out, "           {line}")?;
        }
    }
    Ok(())
}

/// Size the global worker pool; a no-op if it is already built.
pub fn init_workers(workers: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global();
}

/// Convenience wrapper running the full pipeline.
pub fn run_all(cfg: &RunConfig) -> Result<()> {
    cmd_generate(cfg)?;
    cmd_train(cfg)?;
    cmd_eval(cfg)?;
    cmd_bound(cfg)?;
    Ok(())
}
