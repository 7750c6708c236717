//! Training, evaluation, ablations and baseline forecasters.

mod baselines;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{self, Ablation, ModelConfig, ModelInput, ModelTarget};
use crate::numerics::{AdamState, NumericsError, ParamStore, PlateauDecay, Tensor};
use crate::types::{WindowedSample, DETERMINANT_COUNT, IMPACT_DIM};

pub use baselines::{baseline_linear_ar, baseline_persistence, fit_ar, ArModel, DEFAULT_AR_ORDER};
pub use metrics::{
    median_forecast_accuracy, rmse_from_mse, write_metrics_csv, MetricReport, Metrics, IMPACT_TARGET,
    MFA_EPS, SEVERITY_TARGET,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence {
        epoch: usize,
        reason: String,
        last_good: Box<Checkpoint>,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

/// Optimizer and schedule settings. Loss weights and the ablation
/// variant live in [`ModelConfig`] so they travel with checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Multiplicative learning-rate decay on validation plateaus.
    pub lr_decay: f64,
    pub decay_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 20,
            patience: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            lr_decay: 0.5,
            decay_patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad("patience must be in 1..=max_epochs");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if self.decay_patience == 0 {
            return bad("decay_patience must be positive");
        }
        Ok(())
    }
}

/// Mean and scale fitted on the training range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    /// Population statistics of `values`. A constant series gets unit
    /// scale so that `std > 0` always holds.
    pub fn fit(values: &[f64]) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Some(Self {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        })
    }

    /// Fits on every distinct timestep the training windows touch,
    /// counting overlapping weeks once.
    pub fn fit_windows(samples: &[WindowedSample]) -> Option<Self> {
        let mut by_step: BTreeMap<usize, f64> = BTreeMap::new();
        for s in samples {
            let all = s.severity_in.iter().chain(&s.severity_out);
            for (i, &v) in all.enumerate() {
                by_step.entry(s.start + i).or_insert(v);
            }
        }
        Self::fit(&by_step.into_values().collect::<Vec<_>>())
    }

    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Training statistics for the model inputs: severity, and each of the
/// impact components separately. Impact targets stay unscaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub severity: Standardizer,
    pub impact: Vec<Standardizer>,
}

impl Scaling {
    /// Fits on the distinct weeks covered by `samples`.
    pub fn fit(samples: &[WindowedSample]) -> Option<Self> {
        let severity = Standardizer::fit_windows(samples)?;
        let mut by_step: BTreeMap<usize, [f64; IMPACT_DIM]> = BTreeMap::new();
        for s in samples {
            for (i, iv) in s.impact_in.iter().chain(&s.impact_out).enumerate() {
                by_step.entry(s.start + i).or_insert_with(|| iv.concat());
            }
        }
        let impact = (0..IMPACT_DIM)
            .map(|j| Standardizer::fit(&by_step.values().map(|row| row[j]).collect::<Vec<_>>()))
            .collect::<Option<Vec<_>>>()?;
        Some(Self { severity, impact })
    }

    /// Unit scaling; inputs pass through unchanged.
    pub fn identity() -> Self {
        let unit = Standardizer { mean: 0.0, std: 1.0 };
        Self {
            severity: unit,
            impact: vec![unit; IMPACT_DIM],
        }
    }
}

/// Model input for one window: standardized severity and impact, with
/// the sources the ablation variant drops zeroed.
pub fn model_input(s: &WindowedSample, scale: &Scaling, ablation: Ablation) -> ModelInput {
    let impact = s
        .impact_in
        .iter()
        .map(|iv| {
            let mut row = iv.concat();
            for (v, st) in row.iter_mut().zip(&scale.impact) {
                *v = st.standardize(*v);
            }
            ablation.zero_dropped(&mut row);
            row
        })
        .collect();
    ModelInput {
        severity: s.severity_in.iter().map(|&v| scale.severity.standardize(v)).collect(),
        impact,
    }
}

/// Standardized last observed severity. Severity targets and outputs are
/// offsets from this anchor, so an all-zero severity head is the
/// persistence forecast.
pub fn anchor(s: &WindowedSample, scale: &Standardizer) -> f64 {
    scale.standardize(*s.severity_in.last().expect("non-empty lookback"))
}

pub fn model_target(s: &WindowedSample, scale: &Standardizer) -> ModelTarget {
    let a = anchor(s, scale);
    ModelTarget {
        severity: s.severity_out.iter().map(|&v| scale.standardize(v) - a).collect(),
        impact: s.impact_out.iter().map(|iv| iv.concat()).collect(),
    }
}

/// Weights plus everything needed to reproduce predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub config_hash: String,
    pub scaling: Scaling,
    pub best_epoch: usize,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(model: ModelConfig, scaling: Scaling, best_epoch: usize, params: ParamStore) -> Self {
        Self {
            config_hash: model.hash(),
            model,
            scaling,
            best_epoch,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let err = |message: String| TrainError::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let json = serde_json::to_string(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let err = |message: String| TrainError::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if ck.config_hash != ck.model.hash() {
            return Err(err("config hash does not match model block".into()));
        }
        if ck.scaling.impact.len() != IMPACT_DIM {
            return Err(err("impact scaling has the wrong length".into()));
        }
        let expected = ck.model.parameter_shapes();
        if expected.len() != ck.params.len()
            || expected
                .iter()
                .any(|(name, shape)| ck.params.get(name).map(Tensor::shape) != Some(shape.as_slice()))
        {
            return Err(err("parameters do not match model config".into()));
        }
        Ok(ck)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| std::io::Error::other(e);
        w.write_record(["epoch", "train_loss", "val_loss", "lr"]).map_err(io)?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                r.lr.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: History,
}

fn mean_loss(
    params: &ParamStore,
    cfg: &ModelConfig,
    data: &[(ModelInput, ModelTarget)],
) -> Result<f64, NumericsError> {
    let mut total = 0.0;
    for (x, y) in data {
        total += model::loss_only(params, cfg, x, y)?;
    }
    Ok(total / data.len() as f64)
}

/// Minibatch Adam with early stopping on validation loss. Returns the
/// parameters of the best validation epoch.
pub fn train(
    train_set: &[WindowedSample],
    val_set: &[WindowedSample],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let scale = Scaling::fit(train_set).ok_or_else(|| TrainError::Config("non-finite training data".into()))?;
    let prep = |set: &[WindowedSample]| -> Vec<(ModelInput, ModelTarget)> {
        set.iter()
            .map(|s| (model_input(s, &scale, model_cfg.ablation), model_target(s, &scale.severity)))
            .collect()
    };
    let train_data = prep(train_set);
    let val_data = prep(val_set);

    let mut params = model_cfg.init_params(cfg.seed);
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut plateau = PlateauDecay::new(cfg.lr_decay, cfg.decay_patience);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F0E_D0C5);
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    let mut best = Checkpoint::new(*model_cfg, scale.clone(), 0, params.clone());
    let mut best_val = f64::INFINITY;
    let mut stale = 0;
    let mut history = History::default();

    for epoch in 1..=cfg.max_epochs {
        let diverged = |reason: String, best: &Checkpoint| TrainError::Divergence {
            epoch,
            reason,
            last_good: Box::new(best.clone()),
        };
        order.shuffle(&mut rng);
        let lr = adam.learning_rate;
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (x, y) = &train_data[i];
                let (loss, g) = model::loss_and_grads(&params, model_cfg, x, y)?;
                batch_loss += loss;
                for (name, t) in g {
                    match grads.get_mut(&name) {
                        Some(acc) => acc.add_assign(&t),
                        None => {
                            grads.insert(name, t);
                        }
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(diverged("non-finite training loss".into(), &best));
            }
            let inv = 1.0 / batch.len() as f64;
            for t in grads.values_mut() {
                for v in t.data_mut() {
                    *v *= inv;
                }
            }
            if let Err(e) = adam.step(&mut params, &grads) {
                return Err(diverged(e.to_string(), &best));
            }
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / train_data.len() as f64;
        let val_loss = mean_loss(&params, model_cfg, &val_data)?;
        if !val_loss.is_finite() {
            return Err(diverged("non-finite validation loss".into(), &best));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:e}");
        if val_loss < best_val {
            best_val = val_loss;
            best = Checkpoint::new(*model_cfg, scale.clone(), epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("early stop after epoch {epoch}; best epoch {}", best.best_epoch);
                break;
            }
        }
        plateau.observe(val_loss, &mut adam);
    }
    Ok(TrainOutcome {
        checkpoint: best,
        history,
    })
}

/// One forecast point: a (sample, horizon step) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    /// Start timestep of the window.
    pub sample: usize,
    /// 1-based horizon step.
    pub step: usize,
    pub timestep: usize,
    pub severity_pred: f64,
    pub severity_true: f64,
    /// Clamped to `[0, 1]`.
    pub impact_pred: Vec<f64>,
    pub impact_true: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    pub points: Vec<ForecastPoint>,
}

pub fn impact_target_names() -> Vec<String> {
    let mut names = Vec::with_capacity(IMPACT_DIM);
    for prefix in ["s", "n"] {
        for i in 1..=DETERMINANT_COUNT {
            names.push(format!("{prefix}_{i}"));
        }
    }
    names
}

/// Metric rows for severity, the pooled impact vector, and each impact
/// component.
pub fn report_from_points(points: &[ForecastPoint]) -> Option<MetricReport> {
    let sp: Vec<f64> = points.iter().map(|p| p.severity_pred).collect();
    let st: Vec<f64> = points.iter().map(|p| p.severity_true).collect();
    let mut rows = vec![(SEVERITY_TARGET.to_string(), Metrics::compute(&sp, &st)?)];
    let ip: Vec<f64> = points.iter().flat_map(|p| p.impact_pred.iter().copied()).collect();
    let it: Vec<f64> = points.iter().flat_map(|p| p.impact_true.iter().copied()).collect();
    rows.push((IMPACT_TARGET.to_string(), Metrics::compute(&ip, &it)?));
    for (j, name) in impact_target_names().into_iter().enumerate() {
        let p: Vec<f64> = points.iter().map(|x| x.impact_pred[j]).collect();
        let t: Vec<f64> = points.iter().map(|x| x.impact_true[j]).collect();
        rows.push((name, Metrics::compute(&p, &t)?));
    }
    Some(MetricReport { rows })
}

/// Forecasts every test window and scores severity in DSCI units.
pub fn evaluate(checkpoint: &Checkpoint, test_set: &[WindowedSample]) -> Result<Evaluation, TrainError> {
    if test_set.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    let cfg = &checkpoint.model;
    let scale = &checkpoint.scaling;
    let mut points = Vec::with_capacity(test_set.len() * cfg.horizon);
    for s in test_set {
        let pred = model::predict(&checkpoint.params, cfg, &model_input(s, scale, cfg.ablation))?;
        let a = anchor(s, &scale.severity);
        for k in 0..cfg.horizon {
            points.push(ForecastPoint {
                sample: s.start,
                step: k + 1,
                timestep: s.first_target() + k,
                severity_pred: scale.severity.destandardize(a + pred.severity[k]),
                severity_true: s.severity_out[k],
                impact_pred: pred.impact[k].iter().map(|v| v.clamp(0.0, 1.0)).collect(),
                impact_true: s.impact_out[k].concat().to_vec(),
            });
        }
    }
    let report = report_from_points(&points).ok_or(TrainError::EmptySplit("test"))?;
    Ok(Evaluation { report, points })
}

fn prediction_header() -> Vec<String> {
    let mut h: Vec<String> = ["sample", "step", "timestep", "severity_pred", "severity_true"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let names = impact_target_names();
    h.extend(names.iter().map(|n| format!("pred_{n}")));
    h.extend(names.iter().map(|n| format!("true_{n}")));
    h
}

pub fn write_predictions_csv<W: Write>(out: W, points: &[ForecastPoint]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| std::io::Error::other(e);
    w.write_record(prediction_header()).map_err(io)?;
    for p in points {
        let mut rec = vec![
            p.sample.to_string(),
            p.step.to_string(),
            p.timestep.to_string(),
            p.severity_pred.to_string(),
            p.severity_true.to_string(),
        ];
        rec.extend(p.impact_pred.iter().map(f64::to_string));
        rec.extend(p.impact_true.iter().map(f64::to_string));
        w.write_record(rec).map_err(io)?;
    }
    w.flush()
}

pub fn read_predictions_csv<R: std::io::Read>(input: R) -> Result<Vec<ForecastPoint>, String> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(str::to_string)
        .collect();
    if header != prediction_header() {
        return Err("unexpected predictions header".into());
    }
    let mut points = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let bad = |e: &dyn std::fmt::Display| format!("row {}: {e}", line + 2);
        let u = |i: usize| rec[i].parse::<usize>().map_err(|e| bad(&e));
        let f = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(&e));
        let floats = |from: usize| (from..from + IMPACT_DIM).map(f).collect::<Result<Vec<_>, _>>();
        points.push(ForecastPoint {
            sample: u(0)?,
            step: u(1)?,
            timestep: u(2)?,
            severity_pred: f(3)?,
            severity_true: f(4)?,
            impact_pred: floats(5)?,
            impact_true: floats(5 + IMPACT_DIM)?,
        });
    }
    Ok(points)
}

/// Result of one ablation variant.
#[derive(Debug, Clone)]
pub struct VariantResult {
    pub ablation: Ablation,
    pub outcome: TrainOutcome,
    pub evaluation: Evaluation,
}

/// Trains and evaluates every variant on the same splits and seed.
pub fn run_ablation(
    train_set: &[WindowedSample],
    val_set: &[WindowedSample],
    test_set: &[WindowedSample],
    base: &ModelConfig,
    cfg: &TrainConfig,
    variants: &[Ablation],
) -> Result<Vec<VariantResult>, TrainError> {
    variants
        .iter()
        .map(|&ablation| {
            let model_cfg = ModelConfig {
                ablation,
                ..*base
            };
            let outcome = train(train_set, val_set, &model_cfg, cfg)?;
            let evaluation = evaluate(&outcome.checkpoint, test_set)?;
            Ok(VariantResult {
                ablation,
                outcome,
                evaluation,
            })
        })
        .collect()
}

/// Distinct timesteps covered by the windows.
pub fn covered_timesteps(samples: &[WindowedSample]) -> BTreeSet<usize> {
    samples
        .iter()
        .flat_map(|s| s.start..=s.last_target())
        .collect()
}
