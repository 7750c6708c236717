//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use side::dsiq::{self, Lexicon, TopicModel, TopicSettings};
use side::ingest::EntityList;
use side::model::{Ablation, ModelConfig};
use side::numerics::{Graph, Tensor};
use side::pipeline::{self, Splits, WindowSettings};
use side::synth::{self, SynthSpec};
use side::train_eval::{self, baseline_persistence, rmse_from_mse, Metrics, Standardizer, TrainConfig};
use side::types::{Document, Source, DEFAULT_SPLIT};

const PROPERTY_CASES: u32 = 256;

/// Synthetic experiment shared by the ablation and baseline criteria.
const EXPERIMENT_SEEDS: u64 = 5;
const EXPERIMENT_LOOKBACK: usize = 12;
const EXPERIMENT_HORIZON: usize = 5;
const EXPERIMENT_D_MODEL: usize = 16;
const EXPERIMENT_HIDDEN: usize = 32;

fn experiment_train(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        max_epochs: 30,
        patience: 10,
        batch_size: 8,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn runner() -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases: PROPERTY_CASES,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn metric_identity() -> Outcome {
    let cases = [(1823.20, 42.69), (4369.98, 66.10)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (mse, rmse) in cases {
        let got = rmse_from_mse(mse);
        ok &= (got - rmse).abs() <= 0.01;
        parts.push(format!("MSE {mse} -> RMSE {got:.4} (expected {rmse})"));
    }
    // the same numbers through the full reporting path
    let pred = [0.0, 0.0];
    let actual = [1823.20f64.sqrt(), -(1823.20f64.sqrt())];
    let m = Metrics::compute(&pred, &actual).unwrap();
    ok &= (m.rmse - 42.69).abs() <= 0.01;
    parts.push(format!("report RMSE {:.4}", m.rmse));
    outcome(ok, parts.join("; "))
}

fn gradient_correctness() -> Outcome {
    let mut worst_op = (0.0, String::new());
    let mut worst_model = (0.0, String::new());
    for seed in 0..20 {
        for (op, err) in common::op_gradient_errors(seed) {
            if err > worst_op.0 {
                worst_op = (err, format!("{op} seed {seed}"));
            }
        }
        for (name, err) in common::model_gradient_errors(seed, Ablation::Full) {
            if err > worst_model.0 {
                worst_model = (err, format!("{name} seed {seed}"));
            }
        }
    }
    outcome(
        worst_op.0 < common::GRAD_TOL && worst_model.0 < common::GRAD_TOL,
        format!(
            "20 seeds; worst op {:.2e} ({}), worst model parameter {:.2e} ({})",
            worst_op.0, worst_op.1, worst_model.0, worst_model.1
        ),
    )
}

fn cross_attention_oracle() -> Outcome {
    let worst = (0..100).map(common::cross_attention_discrepancy).fold(0.0, f64::max);
    outcome(worst < 1e-10, format!("100 instances, max abs difference {worst:.2e}"))
}

fn small_corpus() -> Vec<Document> {
    let spec = SynthSpec {
        weeks: 40,
        social_rate: 8.0,
        news_rate: 2.0,
        seed: 5,
        ..SynthSpec::default()
    };
    synth::generate(&spec, &Lexicon::builtin()).unwrap().social
}

fn invariant_suite() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };

    let softmax = runner()
        .run(
            &(1usize..6, 1usize..8).prop_flat_map(|(r, c)| {
                (Just((r, c)), prop::collection::vec(-60.0f64..60.0, r * c))
            }),
            |((r, c), data)| {
                let mut g = Graph::new();
                let x = g.constant(Tensor::new(vec![r, c], data).unwrap());
                let s = g.softmax_rows(x).unwrap();
                let v = g.value(s);
                for i in 0..r {
                    let row = v.row(i);
                    prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string());
    check("softmax rows", softmax);

    let corpus = small_corpus();
    let lex = Lexicon::builtin();
    let settings = TopicSettings {
        topics: 6,
        ..TopicSettings::default()
    };
    let model = TopicModel::fit(Source::Social, &corpus, &settings, &lex, &lex).unwrap();
    let n = corpus.len();

    let bounds = runner()
        .run(&prop::collection::vec(0..n, 0..60), |idx| {
            let docs: Vec<&Document> = idx.iter().map(|&i| &corpus[i]).collect();
            let q = dsiq::quantify(&docs, &model);
            prop_assert!(q.iter().all(|&p| (0.0..=1.0).contains(&p)));
            let total: f64 = q.iter().sum();
            if docs.is_empty() {
                prop_assert_eq!(total, 0.0);
            } else {
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
            Ok(())
        })
        .map_err(|e| e.to_string());
    check("impact bounds and sum rule", bounds);

    let perm = runner()
        .run(
            &prop::collection::vec(0..n, 1..60).prop_flat_map(|idx| (Just(idx.clone()), Just(idx).prop_shuffle())),
            |(idx, shuffled)| {
                let a: Vec<&Document> = idx.iter().map(|&i| &corpus[i]).collect();
                let b: Vec<&Document> = shuffled.iter().map(|&i| &corpus[i]).collect();
                prop_assert_eq!(dsiq::quantify(&a, &model), dsiq::quantify(&b, &model));
                Ok(())
            },
        )
        .map_err(|e| e.to_string());
    check("quantify permutation invariance", perm);

    // refitting on a shuffled corpus gives the same topic model
    let reference: Vec<usize> = corpus.iter().map(|d| model.determinant_of(&d.text)).collect();
    let refit = TestRunner::new_with_rng(
        Config {
            cases: 100,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
    .run(&Just((0..n).collect::<Vec<_>>()).prop_shuffle(), |order| {
        let shuffled: Vec<Document> = order.iter().map(|&i| corpus[i].clone()).collect();
        let m = TopicModel::fit(Source::Social, &shuffled, &settings, &lex, &lex).unwrap();
        let got: Vec<usize> = corpus.iter().map(|d| m.determinant_of(&d.text)).collect();
        prop_assert_eq!(&got, &reference);
        Ok(())
    })
    .map_err(|e| e.to_string());
    check("topic fit permutation invariance", refit);

    let round_trip = runner()
        .run(&prop::collection::vec(0.0f64..500.0, 1..80), |xs| {
            let s = Standardizer::fit(&xs).unwrap();
            for &x in &xs {
                prop_assert!((s.destandardize(s.standardize(x)) - x).abs() < 1e-9);
            }
            Ok(())
        })
        .map_err(|e| e.to_string());
    check("standardizer round trip", round_trip);

    let rmse = runner()
        .run(
            &(1usize..60).prop_flat_map(|n| {
                (
                    prop::collection::vec(0.0f64..500.0, n),
                    prop::collection::vec(0.0f64..500.0, n),
                )
            }),
            |(p, a)| {
                let m = Metrics::compute(&p, &a).unwrap();
                prop_assert!((m.rmse - m.mse.sqrt()).abs() < 1e-9);
                prop_assert!((rmse_from_mse(m.mse) - m.rmse).abs() < 1e-9);
                Ok(())
            },
        )
        .map_err(|e| e.to_string());
    check("RMSE = sqrt(MSE)", rmse);

    let pass = failures.is_empty();
    let detail = if pass {
        format!("6 properties x {PROPERTY_CASES} cases (topic refit x 100)")
    } else {
        failures.join("; ")
    };
    outcome(pass, detail)
}

fn quantified_splits(spec: &SynthSpec, windows: WindowSettings, topics: usize) -> Splits {
    let lex = Lexicon::builtin();
    let data = synth::generate(spec, &lex).unwrap();
    let entities = EntityList::new(&data.entities).unwrap();
    let settings = TopicSettings {
        topics,
        seed: spec.seed,
        ..TopicSettings::default()
    };
    let q = pipeline::quantify_corpus(
        spec.weeks,
        &data.social,
        &data.news,
        &entities,
        windows,
        &settings,
        &lex,
        &lex,
    )
    .unwrap();
    pipeline::make_splits(data.severity.values(), &q.impacts, windows).unwrap()
}

fn overfit_sanity() -> Outcome {
    let spec = SynthSpec {
        weeks: 120,
        social_rate: 60.0,
        news_rate: 20.0,
        seed: 2,
        ..SynthSpec::default()
    };
    let model = ModelConfig {
        d_model: 16,
        hidden: 128,
        ..ModelConfig::default()
    };
    let windows = WindowSettings {
        lookback: model.lookback,
        horizon: model.horizon,
        ratios: DEFAULT_SPLIT,
    };
    let splits = quantified_splits(&spec, windows, 10);
    let four = &splits.train[..4];
    let cfg = TrainConfig {
        max_epochs: 200,
        patience: 200,
        batch_size: 1,
        learning_rate: 1e-3,
        decay_patience: 10,
        seed: 2,
        ..TrainConfig::default()
    };
    let out = train_eval::train(four, four, &model, &cfg).unwrap();
    let last = out.history.epochs.last().unwrap();
    outcome(
        last.train_loss < 1e-3,
        format!(
            "{} epochs, final train loss {:.3e} (epoch 1: {:.3e})",
            out.history.epochs.len(),
            last.train_loss,
            out.history.epochs[0].train_loss
        ),
    )
}

struct SeedResult {
    full: f64,
    no_social: f64,
    no_attention: f64,
    persistence: f64,
}

fn run_experiment() -> Vec<SeedResult> {
    let windows = WindowSettings {
        lookback: EXPERIMENT_LOOKBACK,
        horizon: EXPERIMENT_HORIZON,
        ratios: DEFAULT_SPLIT,
    };
    (0..EXPERIMENT_SEEDS)
        .map(|seed| {
            let spec = SynthSpec {
                seed,
                ..SynthSpec::default()
            };
            assert_eq!((spec.weeks, spec.lag), (330, 4));
            let splits = quantified_splits(&spec, windows, dsiq::DEFAULT_TOPICS);
            let base = ModelConfig {
                lookback: EXPERIMENT_LOOKBACK,
                horizon: EXPERIMENT_HORIZON,
                d_model: EXPERIMENT_D_MODEL,
                hidden: EXPERIMENT_HIDDEN,
                ..ModelConfig::default()
            };
            let variants = [Ablation::Full, Ablation::NoSocial, Ablation::NoAttention];
            let results = train_eval::run_ablation(
                &splits.train,
                &splits.val,
                &splits.test,
                &base,
                &experiment_train(seed),
                &variants,
            )
            .unwrap();
            let mae = |a: Ablation| {
                results
                    .iter()
                    .find(|r| r.ablation == a)
                    .unwrap()
                    .evaluation
                    .report
                    .severity()
                    .mae
            };
            SeedResult {
                full: mae(Ablation::Full),
                no_social: mae(Ablation::NoSocial),
                no_attention: mae(Ablation::NoAttention),
                persistence: baseline_persistence(&splits.test).unwrap().severity().mae,
            }
        })
        .collect()
}

fn ablation_direction(results: &[SeedResult]) -> Outcome {
    let mean = |f: fn(&SeedResult) -> f64| results.iter().map(f).sum::<f64>() / results.len() as f64;
    let full = mean(|r| r.full);
    let no_social = mean(|r| r.no_social);
    let no_attention = mean(|r| r.no_attention);
    let yes = |b: bool| if b { "yes" } else { "no" };
    outcome(
        full < no_social && no_attention >= full,
        format!(
            "seed-mean severity MAE: full {full:.2}, no_social {no_social:.2}, no_attention {no_attention:.2}; \
             full < no_social: {}; no_attention >= full: {}",
            yes(full < no_social),
            yes(no_attention >= full)
        ),
    )
}

fn baseline_sanity(results: &[SeedResult]) -> Outcome {
    let wins = results.iter().filter(|r| r.full < r.persistence).count();
    let per_seed: Vec<String> = results
        .iter()
        .map(|r| format!("{:.2}/{:.2}", r.full, r.persistence))
        .collect();
    outcome(
        wins >= 4,
        format!(
            "full beats persistence in {wins}/{} seeds (full/persistence: {})",
            results.len(),
            per_seed.join(", ")
        ),
    )
}

const CLI_CONFIG: &str = r#"
seed = 11

[window]
lookback = 12
horizon = 3

[topics]
topics = 8

[model]
d_model = 8
hidden = 16

[train]
max_epochs = 4
patience = 4
batch_size = 8

[synth]
weeks = 100
social_rate = 40.0
news_rate = 15.0
"#;

fn side(dir: &Path, cmd: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_side"))
        .current_dir(dir)
        .arg("--config")
        .arg("run.toml")
        .args(cmd)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{cmd:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn end_to_end_determinism() -> Outcome {
    let run = || -> Result<bool, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        std::fs::write(dir.path().join("run.toml"), CLI_CONFIG).map_err(|e| e.to_string())?;
        side(dir.path(), &["synth", "--out", "data"])?;
        side(dir.path(), &["quantify"])?;
        let metrics = dir.path().join("runs/synth/metrics.csv");
        let mut copies = Vec::new();
        for _ in 0..2 {
            side(dir.path(), &["train"])?;
            side(dir.path(), &["evaluate"])?;
            copies.push(std::fs::read(&metrics).map_err(|e| e.to_string())?);
            std::fs::remove_file(&metrics).map_err(|e| e.to_string())?;
        }
        Ok(copies[0] == copies[1] && !copies[0].is_empty())
    };
    match run() {
        Ok(same) => outcome(
            same,
            if same { "metrics.csv byte-identical across two train+evaluate runs" } else { "metrics.csv differs" }.into(),
        ),
        Err(e) => outcome(false, e),
    }
}

fn report(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    let took = t.elapsed();
    let pass = o.pass && took <= limit;
    let timing = if took <= limit {
        format!("{:.1}s", took.as_secs_f64())
    } else {
        format!("{:.1}s, over the {}s limit", took.as_secs_f64(), limit.as_secs())
    };
    println!(
        "{} criterion {id} ({name}): {} [{timing}]",
        if pass { "PASS" } else { "FAIL" },
        o.detail
    );
    pass
}

fn main() {
    let secs = Duration::from_secs;
    let mut all = true;
    all &= report(1, "metric identity", secs(1), metric_identity);
    all &= report(2, "gradient correctness", secs(30), gradient_correctness);
    all &= report(3, "cross-attention oracle", secs(5), cross_attention_oracle);
    all &= report(4, "invariant suite", secs(60), invariant_suite);
    all &= report(5, "overfit sanity", secs(120), overfit_sanity);

    // criteria 6 and 7 share one experiment; each gets the full
    // experiment time counted against its limit
    let t = Instant::now();
    let results = run_experiment();
    let experiment = t.elapsed();
    all &= report(6, "ablation direction", secs(600).saturating_sub(experiment), || {
        ablation_direction(&results)
    });
    all &= report(7, "baseline sanity", secs(600).saturating_sub(experiment), || {
        baseline_sanity(&results)
    });
    println!("shared synthetic experiment took {:.1}s", experiment.as_secs_f64());
    all &= report(8, "end-to-end determinism", secs(600), end_to_end_determinism);

    if !all {
        std::process::exit(1);
    }
}
