#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use side::model::{self, Ablation, BoundParams, ModelConfig, ModelInput, ModelTarget};
use side::numerics::{finite_difference, Graph, NodeId, ParamStore, Tensor};
use side::types::IMPACT_DIM;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, floor)`.
pub fn norm_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.data().iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-8)
}

type Build = fn(&mut Graph, &[NodeId]) -> NodeId;

/// Builds `Σ op(inputs) ⊙ R` for a fixed random `R` and compares the
/// graph gradient of every input with central differences.
fn check_op(build: Build, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> f64 {
    let out_shape = {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let o = build(&mut g, &ids);
        g.value(o).shape().to_vec()
    };
    let weights = random_tensor(rng, &out_shape, 1.0);
    let eval = |vals: &[Tensor], track: bool| -> (f64, Vec<Tensor>) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals
            .iter()
            .map(|t| if track { g.variable(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        let o = build(&mut g, &ids);
        let r = g.constant(weights.clone());
        let prod = g.mul(o, r).unwrap();
        let loss = g.sum_all(prod);
        let value = g.value(loss).data()[0];
        if !track {
            return (value, Vec::new());
        }
        g.backward(loss).unwrap();
        let grads = ids
            .iter()
            .zip(vals)
            .map(|(&id, t)| g.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        (value, grads)
    };
    let (_, analytic) = eval(inputs, true);
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let numeric = finite_difference(&inputs[i], FD_STEP, |x| {
            let mut vals = inputs.to_vec();
            vals[i] = x.clone();
            eval(&vals, false).0
        });
        worst = worst.max(norm_relative_error(a, &numeric));
    }
    worst
}

/// Relative gradient error of every differentiable op for one seed.
pub fn op_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let t = |r: &mut ChaCha8Rng, s: &[usize]| random_tensor(r, s, 1.5);
    let cases: Vec<(&'static str, Build, Vec<Tensor>)> = vec![
        ("matmul", |g, x| g.matmul(x[0], x[1]).unwrap(), vec![t(r, &[3, 4]), t(r, &[4, 2])]),
        ("add", |g, x| g.add(x[0], x[1]).unwrap(), vec![t(r, &[3, 4]), t(r, &[3, 4])]),
        ("sub", |g, x| g.sub(x[0], x[1]).unwrap(), vec![t(r, &[3, 4]), t(r, &[3, 4])]),
        ("mul", |g, x| g.mul(x[0], x[1]).unwrap(), vec![t(r, &[3, 4]), t(r, &[3, 4])]),
        ("scale", |g, x| g.scale(x[0], -0.7), vec![t(r, &[2, 5])]),
        ("transpose", |g, x| g.transpose(x[0]).unwrap(), vec![t(r, &[3, 5])]),
        (
            "concat_last_dim",
            |g, x| g.concat_last_dim(x[0], x[1]).unwrap(),
            vec![t(r, &[3, 2]), t(r, &[3, 3])],
        ),
        ("slice_last_dim", |g, x| g.slice_last_dim(x[0], 1, 4).unwrap(), vec![t(r, &[3, 5])]),
        ("reshape", |g, x| g.reshape(x[0], &[2, 6]).unwrap(), vec![t(r, &[3, 4])]),
        ("sum_all", |g, x| g.sum_all(x[0]), vec![t(r, &[3, 4])]),
        ("mean_all", |g, x| g.mean_all(x[0]), vec![t(r, &[3, 4])]),
        ("square", |g, x| g.square(x[0]), vec![t(r, &[3, 4])]),
        ("softmax_rows", |g, x| g.softmax_rows(x[0]).unwrap(), vec![t(r, &[3, 4])]),
        ("gelu", |g, x| g.gelu(x[0]), vec![t(r, &[3, 4])]),
        ("layer_norm_rows", |g, x| g.layer_norm_rows(x[0], 1e-5), vec![t(r, &[3, 5])]),
    ];
    cases
        .into_iter()
        .map(|(name, build, inputs)| (name, check_op(build, &inputs, &mut rng)))
        .collect()
}

pub fn grad_check_config(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        lookback: 6,
        horizon: 2,
        d_model: 4,
        hidden: 5,
        ablation,
        ..ModelConfig::default()
    }
}

pub fn random_example(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> (ModelInput, ModelTarget) {
    let row = |rng: &mut ChaCha8Rng| {
        let mut r = [0.0; IMPACT_DIM];
        for v in &mut r {
            *v = rng.random_range(0.0..1.0);
        }
        r
    };
    let input = ModelInput {
        severity: (0..cfg.lookback).map(|_| rng.random_range(-2.0..2.0)).collect(),
        impact: (0..cfg.lookback).map(|_| row(rng)).collect(),
    };
    let target = ModelTarget {
        severity: (0..cfg.horizon).map(|_| rng.random_range(-2.0..2.0)).collect(),
        impact: (0..cfg.horizon).map(|_| row(rng)).collect(),
    };
    (input, target)
}

/// Relative error of the joint-loss gradient for every parameter.
pub fn model_gradient_errors(seed: u64, ablation: Ablation) -> Vec<(String, f64)> {
    let cfg = grad_check_config(ablation);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = cfg.init_params(seed);
    // non-zero biases so their gradients are exercised away from zero
    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        let shape = params.get(name).unwrap().shape().to_vec();
        if shape[0] == 1 {
            params.insert(name.clone(), random_tensor(&mut rng, &shape, 0.5));
        }
    }
    let (input, target) = random_example(&cfg, &mut rng);
    let (_, grads) = model::loss_and_grads(&params, &cfg, &input, &target).unwrap();
    names
        .iter()
        .filter(|n| ablation.uses_attention() || !n.starts_with("xattn/"))
        .map(|name| {
            let base = params.get(name).unwrap().clone();
            let numeric = finite_difference(&base, FD_STEP, |x| {
                let mut p: ParamStore = params.clone();
                p.insert(name.clone(), x.clone());
                model::loss_only(&p, &cfg, &input, &target).unwrap()
            });
            let analytic = grads.get(name).cloned().unwrap_or_else(|| Tensor::zeros(base.shape()));
            (name.clone(), norm_relative_error(&analytic, &numeric))
        })
        .collect()
}

/// Explicit-loop cross attention, written independently of the graph.
pub fn brute_cross_attention(
    h_m: &[Vec<f64>],
    h_d: &[Vec<f64>],
    w: &BTreeMap<&str, Vec<Vec<f64>>>,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let t = h_m.len();
    let d = h_m[0].len();
    let proj = |x: &[Vec<f64>], m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; d]; t];
        for i in 0..t {
            for j in 0..d {
                for k in 0..d {
                    out[i][j] += x[i][k] * m[k][j];
                }
            }
        }
        out
    };
    let attend = |q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; d]; t];
        for i in 0..t {
            let mut scores = vec![0.0; t];
            for j in 0..t {
                for c in 0..d {
                    scores[j] += q[i][c] * k[j][c];
                }
                scores[j] /= (d as f64).sqrt();
            }
            let mut m = f64::NEG_INFINITY;
            for &s in &scores {
                if s > m {
                    m = s;
                }
            }
            let mut z = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - m).exp();
                z += *s;
            }
            for j in 0..t {
                for c in 0..d {
                    out[i][c] += scores[j] / z * v[j][c];
                }
            }
        }
        out
    };
    let q_m = proj(h_m, &w["wq_m"]);
    let k_d = proj(h_d, &w["wk_d"]);
    let v_d = proj(h_d, &w["wv_d"]);
    let q_d = proj(h_d, &w["wq_d"]);
    let k_m = proj(h_m, &w["wk_m"]);
    let v_m = proj(h_m, &w["wv_m"]);
    (attend(&q_m, &k_d, &v_d), attend(&q_d, &k_m, &v_m))
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (r, _) = t.dims2().unwrap();
    (0..r).map(|i| t.row(i).to_vec()).collect()
}

/// Max abs difference between the graph cross attention and the loop
/// oracle on one random instance.
pub fn cross_attention_discrepancy(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.random_range(1..=4);
    let d = rng.random_range(1..=3);
    let h_m = random_tensor(&mut rng, &[t, d], 2.0);
    let h_d = random_tensor(&mut rng, &[t, d], 2.0);
    let names = ["wq_m", "wk_d", "wv_d", "wq_d", "wk_m", "wv_m"];
    let mut store = ParamStore::new();
    let mut loops = BTreeMap::new();
    for n in names {
        let m = random_tensor(&mut rng, &[d, d], 1.5);
        loops.insert(n, to_rows(&m));
        store.insert(format!("xattn/{n}"), m);
    }
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, &store, false);
    let hm = g.constant(h_m.clone());
    let hd = g.constant(h_d.clone());
    let ca = model::cross_attend(&mut g, &p, hm, hd).unwrap();
    let (md, dm) = brute_cross_attention(&to_rows(&h_m), &to_rows(&h_d), &loops);
    let mut worst: f64 = 0.0;
    for (node, oracle) in [(ca.h_md, md), (ca.h_dm, dm)] {
        let got = to_rows(g.value(node));
        for (a, b) in got.iter().flatten().zip(oracle.iter().flatten()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}
