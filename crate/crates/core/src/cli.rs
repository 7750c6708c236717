//! Command implementations behind the `side` binary.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::config::{Backend, ConfigError, RunConfig};
use crate::dsiq::{self, HttpBackend, Lexicon, ScoringBackend, DETERMINANT_NAMES};
use crate::ingest::{self, EntityList};
use crate::model::Ablation;
use crate::pipeline::{self, Splits};
use crate::synth;
use crate::train_eval::{
    self, baseline_linear_ar, baseline_persistence, write_metrics_csv, Checkpoint, MetricReport, TrainError,
};
use crate::types::{Source, DETERMINANT_COUNT};

/// Exit code for bad input, configuration or missing files.
pub const EXIT_USER: i32 = 2;
/// Exit code for divergence and other numerical failures.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => EXIT_USER,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } | TrainError::Numerics(_) => CliError::Numerical(e.to_string()),
            other => CliError::User(other.to_string()),
        }
    }
}

fn user(e: impl std::fmt::Display) -> CliError {
    CliError::User(e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| user(format!("cannot create {}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| user(format!("cannot write {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| user(format!("cannot read {}: {e}", path.display())))
}

/// Output directory for one state tag.
pub fn run_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.output.join(cfg.state.as_str())
}

fn lexicon(cfg: &RunConfig) -> Result<Lexicon, CliError> {
    match &cfg.paths.lexicon {
        Some(p) => Lexicon::load(p).map_err(user),
        None => Ok(Lexicon::builtin()),
    }
}

/// Writes synthetic inputs to `out` and returns the directory.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    cfg.synth
        .validate(cfg.window.lookback, cfg.window.horizon)
        .map_err(user)?;
    let data = synth::generate(&cfg.synth, &lexicon(cfg)?).map_err(user)?;
    synth::write_dir(&data, out).map_err(user)?;
    log::info!(
        "wrote {} weeks, {} posts, {} articles to {}",
        data.severity.len(),
        data.social.len(),
        data.news.len(),
        out.display()
    );
    Ok(())
}

/// Geofilters, fits topics on the training range, writes the impact
/// series and a topic report.
pub fn cmd_quantify(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let severity = ingest::load_severity(&cfg.paths.dsci).map_err(user)?;
    let calendar = severity.calendar();
    let social = ingest::load_documents(&cfg.paths.social, Source::Social, calendar, false).map_err(user)?;
    let news = ingest::load_documents(&cfg.paths.news, Source::News, calendar, false).map_err(user)?;
    for (name, load) in [("social", &social), ("news", &news)] {
        log::info!(
            "{name}: {} documents, {} malformed, {} empty, {} outside the series",
            load.documents.len(),
            load.malformed,
            load.empty_text,
            load.out_of_range
        );
    }
    let entities = EntityList::load(&cfg.paths.entities).map_err(user)?;
    let lex = lexicon(cfg)?;
    let http;
    let backend: &dyn ScoringBackend = match cfg.backend {
        Backend::Lexicon => &lex,
        Backend::Llm => {
            http = HttpBackend::from_env(Duration::from_secs(cfg.topics.timeout_secs)).ok_or_else(|| {
                user(format!(
                    "--backend llm needs {} (and optionally {})",
                    dsiq::LLM_URL_VAR,
                    dsiq::LLM_KEY_VAR
                ))
            })?;
            &http
        }
    };
    let q = pipeline::quantify_corpus(
        severity.len(),
        &social.documents,
        &news.documents,
        &entities,
        cfg.windows(),
        &cfg.topic_settings(),
        backend,
        &lex,
    )
    .map_err(user)?;
    dsiq::write_impact_csv(&q.impacts, create(&cfg.paths.impact)?).map_err(user)?;
    let report = run_dir(cfg).join("topics.csv");
    dsiq::write_topic_report(&[&q.social_model, &q.news_model], create(&report)?).map_err(user)?;
    log::info!("impact series written to {}", cfg.paths.impact.display());
    Ok(cfg.paths.impact.clone())
}

fn load_splits(cfg: &RunConfig) -> Result<Splits, CliError> {
    let severity = ingest::load_severity(&cfg.paths.dsci).map_err(user)?;
    let impacts = dsiq::read_impact_csv(open(&cfg.paths.impact)?).map_err(user)?;
    pipeline::make_splits(severity.values(), &impacts, cfg.windows()).map_err(user)
}

fn train_config(cfg: &RunConfig) -> train_eval::TrainConfig {
    train_eval::TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    }
}

/// Trains one model and writes `checkpoint.json` and `history.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let splits = load_splits(cfg)?;
    let dir = run_dir(cfg);
    let outcome = match train_eval::train(&splits.train, &splits.val, &cfg.model_config(), &train_config(cfg)) {
        Ok(o) => o,
        Err(TrainError::Divergence {
            epoch,
            reason,
            last_good,
        }) => {
            let path = dir.join("checkpoint.last_good.json");
            std::fs::create_dir_all(&dir).map_err(user)?;
            last_good.save(&path)?;
            return Err(CliError::Numerical(format!(
                "training diverged at epoch {epoch}: {reason}; last good checkpoint saved to {}",
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    std::fs::create_dir_all(&dir).map_err(user)?;
    let ck_path = dir.join("checkpoint.json");
    outcome.checkpoint.save(&ck_path)?;
    outcome.history.write_csv(create(&dir.join("history.csv"))?).map_err(user)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(user)?;
    log::info!(
        "best epoch {} of {}; checkpoint {}",
        outcome.checkpoint.best_epoch,
        outcome.history.epochs.len(),
        ck_path.display()
    );
    Ok(ck_path)
}

fn baselines(cfg: &RunConfig, splits: &Splits) -> Result<Vec<(&'static str, MetricReport)>, CliError> {
    Ok(vec![
        ("persistence", baseline_persistence(&splits.test)?),
        (
            "linear_ar",
            baseline_linear_ar(&splits.train, &splits.test, cfg.baseline.ar_order)?,
        ),
    ])
}

/// Scores the saved checkpoint and the baselines on the test split;
/// writes `metrics.csv` and `predictions.csv`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let splits = load_splits(cfg)?;
    let dir = run_dir(cfg);
    let ck_path = dir.join("checkpoint.json");
    if !ck_path.exists() {
        return Err(user(format!("no checkpoint at {}; run `train` first", ck_path.display())));
    }
    let ck = Checkpoint::load(&ck_path)?;
    if ck.model.lookback != cfg.window.lookback || ck.model.horizon != cfg.window.horizon {
        return Err(user("checkpoint window sizes differ from the config"));
    }
    let ev = train_eval::evaluate(&ck, &splits.test)?;
    let base = baselines(cfg, &splits)?;
    let variant = ck.model.ablation.as_str();
    let mut reports: Vec<(&str, &MetricReport)> = vec![(variant, &ev.report)];
    reports.extend(base.iter().map(|(n, r)| (*n, r)));
    let metrics = dir.join("metrics.csv");
    write_metrics_csv(create(&metrics)?, reports).map_err(user)?;
    train_eval::write_predictions_csv(create(&dir.join("predictions.csv"))?, &ev.points).map_err(user)?;
    log::info!(
        "severity MAE {:.3} RMSE {:.3} MFA {:.3}",
        ev.report.severity().mae,
        ev.report.severity().rmse,
        ev.report.severity().mfa
    );
    Ok(metrics)
}

/// Trains and scores every ablation variant; writes `ablation.csv`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let splits = load_splits(cfg)?;
    let results = train_eval::run_ablation(
        &splits.train,
        &splits.val,
        &splits.test,
        &cfg.model_config(),
        &train_config(cfg),
        &Ablation::ALL,
    )?;
    let base = baselines(cfg, &splits)?;
    let mut reports: Vec<(&str, &MetricReport)> = results
        .iter()
        .map(|r| (r.ablation.as_str(), &r.evaluation.report))
        .collect();
    reports.extend(base.iter().map(|(n, r)| (*n, r)));
    let path = run_dir(cfg).join("ablation.csv");
    write_metrics_csv(create(&path)?, reports).map_err(user)?;
    Ok(path)
}

/// Plot-ready tables derived from `predictions.csv` without recomputing
/// any forecast.
pub fn cmd_export_plots(cfg: &RunConfig, run: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    let pred_path = run.join("predictions.csv");
    if !pred_path.exists() {
        return Err(user(format!(
            "no predictions at {}; run `evaluate` first",
            pred_path.display()
        )));
    }
    let points = train_eval::read_predictions_csv(open(&pred_path)?).map_err(user)?;
    if points.is_empty() {
        return Err(user("predictions.csv has no rows"));
    }
    let state = cfg.state.as_str();
    let io = |e: csv::Error| user(e);

    let sev_path = run.join("plot_severity.csv");
    let mut w = csv::Writer::from_writer(create(&sev_path)?);
    w.write_record(["state", "sample", "step", "timestep", "predicted", "actual"])
        .map_err(io)?;
    for p in &points {
        w.write_record([
            state.to_string(),
            p.sample.to_string(),
            p.step.to_string(),
            p.timestep.to_string(),
            p.severity_pred.to_string(),
            p.severity_true.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(user)?;

    let bar_path = run.join("plot_determinants.csv");
    let mut w = csv::Writer::from_writer(create(&bar_path)?);
    w.write_record(["state", "source", "determinant", "predicted", "ground_truth"])
        .map_err(io)?;
    let n = points.len() as f64;
    for (s, source) in [Source::Social, Source::News].into_iter().enumerate() {
        for (i, name) in DETERMINANT_NAMES.iter().enumerate() {
            let j = s * DETERMINANT_COUNT + i;
            let pred = points.iter().map(|p| p.impact_pred[j]).sum::<f64>() / n;
            let truth = points.iter().map(|p| p.impact_true[j]).sum::<f64>() / n;
            w.write_record([
                state.to_string(),
                source.as_str().to_string(),
                name.to_string(),
                pred.to_string(),
                truth.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(user)?;
    Ok((sev_path, bar_path))
}
