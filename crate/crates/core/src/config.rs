//! Run configuration read from TOML.
//!
//! Precedence, lowest to highest: built-in defaults, the config file,
//! command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsiq::{TopicSettings, DEFAULT_THRESHOLD, DEFAULT_TOPICS, KEYWORDS_PER_TOPIC};
use crate::model::{Ablation, LossWeights, ModelConfig};
use crate::pipeline::WindowSettings;
use crate::synth::SynthSpec;
use crate::train_eval::TrainConfig;
use crate::types::{DEFAULT_SPLIT, DETERMINANT_COUNT};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Llm,
    Lexicon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateTag {
    Ca,
    Tx,
    Synth,
}

impl StateTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StateTag::Ca => "ca",
            StateTag::Tx => "tx",
            StateTag::Synth => "synth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dsci: PathBuf,
    pub social: PathBuf,
    pub news: PathBuf,
    pub entities: PathBuf,
    /// Builtin lexicon when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    /// Impact series; written by `quantify`, read by `train`.
    pub impact: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dsci: "data/dsci.csv".into(),
            social: "data/posts.jsonl".into(),
            news: "data/news.jsonl".into(),
            entities: "data/entities.txt".into(),
            lexicon: None,
            impact: "runs/impact.csv".into(),
            output: "runs".into(),
        }
    }
}

impl Paths {
    /// Resolves relative paths against `base`.
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dsci);
        fix(&mut self.social);
        fix(&mut self.news);
        fix(&mut self.entities);
        fix(&mut self.impact);
        fix(&mut self.output);
        if let Some(l) = &mut self.lexicon {
            fix(l);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSection {
    pub lookback: usize,
    pub horizon: usize,
    pub split: [u32; 3],
}

impl Default for WindowSection {
    fn default() -> Self {
        Self {
            lookback: 52,
            horizon: 5,
            split: [DEFAULT_SPLIT.0, DEFAULT_SPLIT.1, DEFAULT_SPLIT.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopicSection {
    pub topics: usize,
    pub keywords: usize,
    pub threshold: f64,
    pub max_in_flight: usize,
    /// Request timeout for the LLM backend, in seconds.
    pub timeout_secs: u64,
}

impl Default for TopicSection {
    fn default() -> Self {
        Self {
            topics: DEFAULT_TOPICS,
            keywords: KEYWORDS_PER_TOPIC,
            threshold: DEFAULT_THRESHOLD,
            max_in_flight: 4,
            timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: usize,
    pub hidden: usize,
    pub determinants: usize,
    pub lambda_d: f64,
    pub lambda_m: f64,
    pub ablation: Ablation,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            d_model: m.d_model,
            hidden: m.hidden,
            determinants: DETERMINANT_COUNT,
            lambda_d: m.loss.severity,
            lambda_m: m.loss.impact,
            ablation: Ablation::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub ar_order: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            ar_order: crate::train_eval::DEFAULT_AR_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub backend: Backend,
    pub state: StateTag,
    pub paths: Paths,
    pub window: WindowSection,
    pub topics: TopicSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub baseline: BaselineSection,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            backend: Backend::Lexicon,
            state: StateTag::Synth,
            paths: Paths::default(),
            window: WindowSection::default(),
            topics: TopicSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            baseline: BaselineSection::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config. `train.seed` and `synth.seed` default to the
    /// top-level seed when the file leaves them out.
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let table: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let has_seed = |section: &str| {
            table
                .get(section)
                .and_then(|s| s.as_table())
                .is_some_and(|s| s.contains_key("seed"))
        };
        let (train_seed, synth_seed) = (has_seed("train"), has_seed("synth"));
        let mut cfg: Self = table.try_into().map_err(|e: toml::de::Error| e.to_string())?;
        if !train_seed {
            cfg.train.seed = cfg.seed;
        }
        if !synth_seed {
            cfg.synth.seed = cfg.seed;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads and validates a config file. Relative paths inside it are
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        if let Some(dir) = path.parent() {
            cfg.paths.rebase(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let w = &self.window;
        if w.lookback == 0 || w.horizon == 0 {
            return bad("window.lookback and window.horizon must be positive".into());
        }
        if w.split.contains(&0) {
            return bad("window.split entries must be positive".into());
        }
        if self.topics.topics == 0 || self.topics.keywords == 0 {
            return bad("topics.topics and topics.keywords must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.topics.threshold) {
            return bad("topics.threshold must be in [0, 1]".into());
        }
        if self.topics.max_in_flight == 0 {
            return bad("topics.max_in_flight must be positive".into());
        }
        let m = &self.model;
        if m.d_model == 0 || m.hidden == 0 {
            return bad("model.d_model and model.hidden must be positive".into());
        }
        if m.determinants != DETERMINANT_COUNT {
            return bad(format!(
                "model.determinants must be {DETERMINANT_COUNT} (the determinant set is fixed)"
            ));
        }
        if LossWeights::new(m.lambda_d, m.lambda_m).is_none() {
            return bad("model.lambda_d and model.lambda_m must be non-negative and not both zero".into());
        }
        self.train
            .validate()
            .or_else(|e| bad(e.to_string()))?;
        if self.train.seed != self.seed {
            return bad("train.seed must equal seed; set the top-level seed".into());
        }
        if self.baseline.ar_order == 0 || self.baseline.ar_order >= w.lookback {
            return bad("baseline.ar_order must be in 1..lookback".into());
        }
        Ok(())
    }

    /// Applies the top-level seed everywhere a seed is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
    }

    pub fn windows(&self) -> WindowSettings {
        WindowSettings {
            lookback: self.window.lookback,
            horizon: self.window.horizon,
            ratios: (self.window.split[0], self.window.split[1], self.window.split[2]),
        }
    }

    pub fn topic_settings(&self) -> TopicSettings {
        TopicSettings {
            topics: self.topics.topics,
            keywords: self.topics.keywords,
            threshold: self.topics.threshold,
            seed: self.seed,
            max_in_flight: self.topics.max_in_flight,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            lookback: self.window.lookback,
            horizon: self.window.horizon,
            d_model: self.model.d_model,
            hidden: self.model.hidden,
            determinants: self.model.determinants,
            loss: LossWeights {
                severity: self.model.lambda_d,
                impact: self.model.lambda_m,
            },
            ablation: self.model.ablation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_window_and_topic_settings() {
        let c = RunConfig::default();
        assert_eq!((c.window.lookback, c.window.horizon), (52, 5));
        assert_eq!(c.model.determinants, 11);
        assert_eq!(c.topics.topics, 50);
        assert_eq!((c.train.max_epochs, c.train.patience), (20, 10));
        assert_eq!(c.window.split, [7, 1, 2]);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[train]\nepochs = 3").is_err());
        let ok = RunConfig::from_toml("seed = 3\n[train]\nmax_epochs = 30\nseed = 3").unwrap();
        assert_eq!(ok.train.max_epochs, 30);
        assert_eq!(ok.train.patience, 10);
    }

    #[test]
    fn section_seeds_follow_top_level_unless_set() {
        let c = RunConfig::from_toml("seed = 7").unwrap();
        assert_eq!((c.train.seed, c.synth.seed), (7, 7));
        assert!(c.validate().is_ok());
        let c = RunConfig::from_toml("seed = 7\n[train]\nseed = 2").unwrap();
        assert_eq!(c.train.seed, 2);
        assert!(c.validate().is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::default();
        c.model.determinants = 12;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.model.lambda_d = 0.0;
        c.model.lambda_m = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.train.patience = 50;
        assert!(c.validate().is_err());
        let mut c = RunConfig {
            seed: 4,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        c.set_seed(4);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[paths]\ndsci = \"in/d.csv\"\noutput = \"/abs/out\"\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.paths.dsci, dir.path().join("in/d.csv"));
        assert_eq!(c.paths.output, PathBuf::from("/abs/out"));
    }

    proptest! {
        #[test]
        fn toml_round_trip(
            seed in any::<u32>(),
            lookback in 2usize..80,
            lr in 1e-6f64..1.0,
            lambda_m in 0.0f64..5.0,
            ablation in prop::sample::select(Ablation::ALL.to_vec()),
            lexicon in prop::option::of("[a-z]{1,8}\\.json"),
        ) {
            let mut c = RunConfig::default();
            c.set_seed(seed as u64);
            c.window.lookback = lookback;
            c.train.learning_rate = lr;
            c.model.lambda_m = lambda_m;
            c.model.ablation = ablation;
            c.paths.lexicon = lexicon.map(PathBuf::from);
            let back = RunConfig::from_toml(&c.to_toml()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
