//! Synthetic severity series and text corpora with a known lead/lag
//! structure between social posts and severity.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dsiq::{Lexicon, OTHER_INDEX};
use crate::types::{clamp_dsci, Document, SeveritySeries, Source, DETERMINANT_COUNT, DSCI_MAX};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub weeks: usize,
    pub first_week: NaiveDate,
    pub base: f64,
    pub amplitude: f64,
    /// Seasonal period in weeks.
    pub period: usize,
    /// Innovation standard deviation of the AR(1) noise.
    pub noise: f64,
    pub ar_coef: f64,
    /// Social posts reflect severity this many weeks ahead.
    pub lag: usize,
    /// Mean documents per week at mid-range severity.
    pub social_rate: f64,
    pub news_rate: f64,
    /// Fraction of documents that name a place outside the entity list.
    pub off_region: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            weeks: 330,
            first_week: NaiveDate::from_ymd_opt(2018, 1, 2).expect("valid date"),
            base: 250.0,
            amplitude: 120.0,
            period: 52,
            noise: 20.0,
            ar_coef: 0.8,
            lag: 4,
            social_rate: 400.0,
            news_rate: 100.0,
            off_region: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self, lookback: usize, horizon: usize) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.weeks < lookback + horizon {
            return bad(format!(
                "weeks = {} is shorter than lookback + horizon = {}",
                self.weeks,
                lookback + horizon
            ));
        }
        if self.period == 0 {
            return bad("period must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative".into());
        }
        if !(-1.0 < self.ar_coef && self.ar_coef < 1.0) {
            return bad("ar_coef must be in (-1, 1)".into());
        }
        if !(self.social_rate > 0.0 && self.news_rate > 0.0) {
            return bad("document rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.off_region) {
            return bad("off_region must be in [0, 1)".into());
        }
        Ok(())
    }
}

pub const REGION_PLACES: [&str; 8] = [
    "Fresno",
    "Sacramento",
    "Bakersfield",
    "Modesto",
    "Stockton",
    "Redding",
    "Visalia",
    "Merced",
];

const OFF_REGION_PLACES: [&str; 4] = ["Phoenix", "Denver", "Houston", "Omaha"];

const FILLER: [&str; 8] = [
    "drought", "dry", "weather", "rain", "heat", "summer", "county", "residents",
];

const OFF_TOPIC: [&str; 16] = [
    "traffic", "music", "game", "election", "movie", "concert", "football", "recipe", "coffee",
    "school", "shopping", "birthday", "pizza", "podcast", "weekend", "festival",
];

/// Determinant weights at low and high severity.
const LOW_PROFILE: [f64; DETERMINANT_COUNT] = [
    0.02, 0.16, 0.12, 0.08, 0.08, 0.08, 0.08, 0.20, 0.02, 0.02, 0.14,
];
const HIGH_PROFILE: [f64; DETERMINANT_COUNT] = [
    0.36, 0.01, 0.01, 0.03, 0.01, 0.01, 0.03, 0.01, 0.32, 0.20, 0.01,
];

/// Severity band over which the mixture moves from low to high profile.
const MIXTURE_BAND: (f64, f64) = (50.0, 450.0);

/// Determinant mixture for a severity level.
pub fn mixture(severity: f64) -> [f64; DETERMINANT_COUNT] {
    let (lo, hi) = MIXTURE_BAND;
    let u = ((severity - lo) / (hi - lo)).clamp(0.0, 1.0);
    let mut p = [0.0; DETERMINANT_COUNT];
    for (i, v) in p.iter_mut().enumerate() {
        *v = (1.0 - u) * LOW_PROFILE[i] + u * HIGH_PROFILE[i];
    }
    p
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub severity: SeveritySeries,
    pub social: Vec<Document>,
    pub news: Vec<Document>,
    /// Calendar date of each document, parallel to `social` / `news`.
    pub social_dates: Vec<NaiveDate>,
    pub news_dates: Vec<NaiveDate>,
    pub entities: Vec<String>,
}

fn severity_path(spec: &SynthSpec, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let innov = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut e = 0.0;
    (0..len)
        .map(|t| {
            let phase = (t % spec.period) as f64 / spec.period as f64;
            let seasonal = spec.base + spec.amplitude * (std::f64::consts::TAU * phase).sin();
            if spec.noise > 0.0 {
                e = spec.ar_coef * e + innov.sample(rng);
            }
            clamp_dsci(seasonal + e)
        })
        .collect()
}

fn draw_index(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = p.iter().sum();
    let mut r = rng.random_range(0.0..total);
    for (i, &w) in p.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    p.len() - 1
}

fn compose_text(determinant: usize, terms: &[Vec<&str>], off_region: f64, rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<&str> = Vec::new();
    if determinant == OTHER_INDEX {
        for _ in 0..rng.random_range(3..6) {
            words.push(OFF_TOPIC[rng.random_range(0..OFF_TOPIC.len())]);
        }
    } else {
        let terms = &terms[determinant];
        for _ in 0..rng.random_range(3..6) {
            words.push(terms[rng.random_range(0..terms.len())]);
        }
    }
    for _ in 0..rng.random_range(1..3) {
        words.push(FILLER[rng.random_range(0..FILLER.len())]);
    }
    let place = if rng.random_bool(off_region) {
        OFF_REGION_PLACES[rng.random_range(0..OFF_REGION_PLACES.len())]
    } else {
        REGION_PLACES[rng.random_range(0..REGION_PLACES.len())]
    };
    let insert_at = rng.random_range(0..=words.len());
    words.insert(insert_at, place);
    let mut text = words.join(" ");
    if let Some(first) = text.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    text
}

fn corpus(
    source: Source,
    drivers: &[f64],
    rate: f64,
    spec: &SynthSpec,
    lexicon: &Lexicon,
    rng: &mut ChaCha8Rng,
) -> (Vec<Document>, Vec<NaiveDate>) {
    let mut docs = Vec::new();
    let mut dates = Vec::new();
    let prefix = &source.as_str()[..1];
    let terms: Vec<Vec<&str>> = (0..DETERMINANT_COUNT)
        .map(|i| lexicon.terms(i).iter().map(String::as_str).collect())
        .collect();
    for (t, &s) in drivers.iter().enumerate() {
        let mean = rate * (0.5 + s / DSCI_MAX);
        let count = Poisson::new(mean).expect("positive rate").sample(rng) as usize;
        let p = mixture(s);
        let week = spec.first_week + Duration::weeks(t as i64);
        for i in 0..count {
            let det = draw_index(&p, rng);
            docs.push(Document {
                id: format!("{prefix}{t}-{i}"),
                timestep: t,
                text: compose_text(det, &terms, spec.off_region, rng),
                source,
            });
            dates.push(week + Duration::days(rng.random_range(0..7)));
        }
    }
    (docs, dates)
}

/// Severity follows a seasonal sine plus AR(1) noise. Social posts are
/// drawn from the determinant mixture of severity `lag` weeks ahead,
/// news from the current week.
pub fn generate(spec: &SynthSpec, lexicon: &Lexicon) -> Result<SynthData, SynthError> {
    spec.validate(1, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let path = severity_path(spec, spec.weeks + spec.lag, &mut rng);
    let severity = path[..spec.weeks].to_vec();
    let social_driver = &path[spec.lag..];
    let (social, social_dates) = corpus(Source::Social, social_driver, spec.social_rate, spec, lexicon, &mut rng);
    let (news, news_dates) = corpus(Source::News, &severity, spec.news_rate, spec, lexicon, &mut rng);
    Ok(SynthData {
        severity: SeveritySeries::new(spec.first_week, severity).expect("clamped finite values"),
        social,
        news,
        social_dates,
        news_dates,
        entities: REGION_PLACES.iter().map(|s| s.to_string()).collect(),
    })
}

fn jsonl(docs: &[Document], dates: &[NaiveDate]) -> String {
    let mut out = String::new();
    for (d, date) in docs.iter().zip(dates) {
        let line = serde_json::json!({
            "id": d.id,
            "timestamp": format!("{date}T12:00:00Z"),
            "text": d.text,
        });
        writeln!(out, "{line}").expect("string write");
    }
    out
}

/// Writes `dsci.csv`, `posts.jsonl`, `news.jsonl` and `entities.txt`.
pub fn write_dir(data: &SynthData, dir: &Path) -> Result<(), SynthError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut csv = String::from("week_start,dsci\n");
    for (step, v) in data.severity.timesteps().zip(data.severity.values()) {
        writeln!(csv, "{},{v}", step.week_start).expect("string write");
    }
    let files = [
        ("dsci.csv", csv),
        ("posts.jsonl", jsonl(&data.social, &data.social_dates)),
        ("news.jsonl", jsonl(&data.news, &data.news_dates)),
        ("entities.txt", data.entities.join("\n") + "\n"),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).map_err(io(&path))?;
        f.write_all(body.as_bytes()).map_err(io(&path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            weeks: 120,
            social_rate: 20.0,
            news_rate: 10.0,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn zero_noise_is_exactly_periodic() {
        let spec = SynthSpec {
            noise: 0.0,
            ..small(1)
        };
        let d = generate(&spec, &Lexicon::builtin()).unwrap();
        let v = d.severity.values();
        for t in 0..v.len() - spec.period {
            assert_eq!(v[t], v[t + spec.period]);
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let lex = Lexicon::builtin();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_dir(&generate(&small(5), &lex).unwrap(), dir_a.path()).unwrap();
        write_dir(&generate(&small(5), &lex).unwrap(), dir_b.path()).unwrap();
        for f in ["dsci.csv", "posts.jsonl", "news.jsonl", "entities.txt"] {
            let a = std::fs::read(dir_a.path().join(f)).unwrap();
            let b = std::fs::read(dir_b.path().join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
        let c = generate(&small(6), &lex).unwrap();
        assert_ne!(c.severity.values(), generate(&small(5), &lex).unwrap().severity.values());
    }

    #[test]
    fn severity_within_bounds() {
        let spec = SynthSpec {
            amplitude: 400.0,
            noise: 80.0,
            ..small(2)
        };
        let d = generate(&spec, &Lexicon::builtin()).unwrap();
        assert!(d.severity.values().iter().all(|v| (0.0..=DSCI_MAX).contains(v)));
    }

    #[test]
    fn mixture_is_distribution_shifting_with_severity() {
        for s in [0.0, 250.0, 500.0] {
            let p = mixture(s);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let names = crate::dsiq::DETERMINANT_NAMES;
        let ag = names.iter().position(|n| *n == "Agriculture").unwrap();
        let wu = names.iter().position(|n| *n == "Water Utilities").unwrap();
        assert!(mixture(450.0)[ag] > mixture(50.0)[ag]);
        assert!(mixture(450.0)[wu] > mixture(50.0)[wu]);
    }

    #[test]
    fn zero_lag_sources_share_mixture() {
        let spec = SynthSpec {
            lag: 0,
            social_rate: 60.0,
            news_rate: 60.0,
            ..small(3)
        };
        let d = generate(&spec, &Lexicon::builtin()).unwrap();
        let share = |docs: &[Document]| {
            let lex = Lexicon::builtin();
            let hits = docs
                .iter()
                .filter(|doc| {
                    let toks = crate::dsiq::tokenize(&doc.text);
                    lex.terms(0).iter().any(|t| toks.contains(t))
                })
                .count();
            hits as f64 / docs.len() as f64
        };
        let (a, b) = (share(&d.social), share(&d.news));
        assert!((a - b).abs() < 0.03, "{a} vs {b}");
    }

    #[test]
    fn documents_name_places() {
        let d = generate(&small(4), &Lexicon::builtin()).unwrap();
        let places: Vec<String> = REGION_PLACES
            .iter()
            .chain(&OFF_REGION_PLACES)
            .map(|p| p.to_lowercase())
            .collect();
        assert!(d.social.iter().all(|doc| {
            let lower = doc.text.to_lowercase();
            places.iter().any(|p| lower.contains(p.as_str()))
        }));
        assert_eq!(d.social.len(), d.social_dates.len());
    }

    #[test]
    fn spec_validation() {
        assert!(SynthSpec::default().validate(52, 5).is_ok());
        let short = SynthSpec {
            weeks: 10,
            ..SynthSpec::default()
        };
        assert!(short.validate(52, 5).is_err());
    }
}
