//! Cross-attention encoder-decoder for joint severity and impact forecasts.
//!
//! Two single-layer transformer encoders embed the impact and severity
//! lookback sequences. Bidirectional cross-attention relates them, and an
//! MLP decoder maps the concatenated attended sequences to `T_P` rows of
//! `[severity, impact_1..impact_22]`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numerics::{Graph, NodeId, NumericsError, ParamStore, Tensor};
use crate::types::{ImpactVector, DETERMINANT_COUNT, IMPACT_DIM};

const LN_EPS: f64 = 1e-5;

/// Which inputs and components a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoSocial,
    NoNews,
    NoAttention,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoSocial,
        Ablation::NoNews,
        Ablation::NoAttention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSocial => "no_social",
            Ablation::NoNews => "no_news",
            Ablation::NoAttention => "no_attention",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }

    /// Model input row for one week, with masked sources zeroed.
    pub fn mask(self, iv: &ImpactVector) -> [f64; IMPACT_DIM] {
        let mut row = iv.concat();
        self.zero_dropped(&mut row);
        row
    }

    /// Zeroes the half of a concatenated row this variant drops.
    pub fn zero_dropped(self, row: &mut [f64; IMPACT_DIM]) {
        match self {
            Ablation::NoSocial => row[..DETERMINANT_COUNT].fill(0.0),
            Ablation::NoNews => row[DETERMINANT_COUNT..].fill(0.0),
            Ablation::Full | Ablation::NoAttention => {}
        }
    }

    pub fn uses_attention(self) -> bool {
        self != Ablation::NoAttention
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Task weights of the joint loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub severity: f64,
    pub impact: f64,
}

impl LossWeights {
    pub fn new(severity: f64, impact: f64) -> Option<Self> {
        let ok = severity >= 0.0 && impact >= 0.0 && (severity > 0.0 || impact > 0.0);
        ok.then_some(Self { severity, impact })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            severity: 1.0,
            impact: 1.0,
        }
    }
}

/// Architecture and loss settings stored alongside trained weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub hidden: usize,
    pub determinants: usize,
    pub loss: LossWeights,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lookback: 52,
            horizon: 5,
            d_model: 32,
            hidden: 64,
            determinants: DETERMINANT_COUNT,
            loss: LossWeights::default(),
            ablation: Ablation::Full,
        }
    }
}

impl ModelConfig {
    pub fn impact_dim(&self) -> usize {
        2 * self.determinants
    }

    /// Columns per output row: severity plus impact.
    pub fn output_width(&self) -> usize {
        1 + self.impact_dim()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Names and shapes of every parameter.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = Vec::new();
        for (prefix, in_dim) in [("enc_m", self.impact_dim()), ("enc_d", 1)] {
            out.push((format!("{prefix}/w_in"), vec![in_dim, d]));
            out.push((format!("{prefix}/b_in"), vec![1, d]));
            for w in ["wq", "wk", "wv", "wo"] {
                out.push((format!("{prefix}/{w}"), vec![d, d]));
            }
            out.push((format!("{prefix}/ff1_w"), vec![d, 4 * d]));
            out.push((format!("{prefix}/ff1_b"), vec![1, 4 * d]));
            out.push((format!("{prefix}/ff2_w"), vec![4 * d, d]));
            out.push((format!("{prefix}/ff2_b"), vec![1, d]));
        }
        for w in ["wq_m", "wk_d", "wv_d", "wq_d", "wk_m", "wv_m"] {
            out.push((format!("xattn/{w}"), vec![d, d]));
        }
        out.push(("dec/w1".into(), vec![self.lookback * 2 * d, self.hidden]));
        out.push(("dec/b1".into(), vec![1, self.hidden]));
        out.push((
            "dec/w2".into(),
            vec![self.hidden, self.horizon * self.output_width()],
        ));
        out.push(("dec/b2".into(), vec![1, self.horizon * self.output_width()]));
        out
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in self.parameter_shapes() {
            let n: usize = shape.iter().product();
            let data = if name.contains("/b") || name.ends_with("_b") {
                vec![0.0; n]
            } else {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-limit..limit)).collect()
            };
            store.insert(name, Tensor::new(shape, data).expect("shape product"));
        }
        store
    }
}

/// Fixed sinusoidal position table, `len × d`.
pub fn positional_table(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10_000f64.powf(exponent);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, d], data).expect("shape product")
}

/// Parameters placed on a graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    /// Adds every parameter as a leaf; `trainable` decides whether the
    /// leaves collect gradients.
    pub fn bind(graph: &mut Graph, params: &ParamStore, trainable: bool) -> Self {
        let ids = params
            .iter()
            .map(|(name, t)| {
                let id = if trainable {
                    graph.variable(t.clone())
                } else {
                    graph.constant(t.clone())
                };
                (name.clone(), id)
            })
            .collect();
        Self { ids }
    }

    pub fn get(&self, name: &str) -> Result<NodeId, NumericsError> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))
    }

    /// Gradients of every parameter reached by the last backward pass.
    pub fn grads(&self, graph: &Graph) -> BTreeMap<String, Tensor> {
        self.ids
            .iter()
            .filter_map(|(name, &id)| graph.grad(id).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

/// `x·W + 1·b` with the bias broadcast through a ones column.
fn affine(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
    let rows = g.value(x).dims2()?.0;
    let xw = g.matmul(x, w)?;
    let ones = g.constant(Tensor::filled(&[rows, 1], 1.0));
    let bias = g.matmul(ones, b)?;
    g.add(xw, bias)
}

/// `softmax(Q·Kᵀ/√d)·V`.
fn attention(g: &mut Graph, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId, NumericsError> {
    let d = g.value(q).last_dim();
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = g.softmax_rows(scaled)?;
    g.matmul(weights, v)
}

/// Input projection, positional encoding, one self-attention block and a
/// feed-forward block. Each block normalizes its input and adds its output
/// back onto the residual stream, so input magnitudes pass through.
pub fn encode(
    g: &mut Graph,
    p: &BoundParams,
    prefix: &str,
    seq: NodeId,
) -> Result<NodeId, NumericsError> {
    let w_in = p.get(&format!("{prefix}/w_in"))?;
    let (len, in_dim) = g.value(seq).dims2()?;
    let expected_in = g.value(w_in).dims2()?.0;
    if in_dim != expected_in {
        return Err(NumericsError::Shape {
            op: "encode",
            left: vec![len, in_dim],
            right: g.value(w_in).shape().to_vec(),
        });
    }
    let d = g.value(w_in).last_dim();
    let b_in = p.get(&format!("{prefix}/b_in"))?;
    let projected = affine(g, seq, w_in, b_in)?;
    let pos = g.constant(positional_table(len, d));
    let x = g.add(projected, pos)?;

    let n1 = g.layer_norm_rows(x, LN_EPS);
    let q = g.matmul(n1, p.get(&format!("{prefix}/wq"))?)?;
    let k = g.matmul(n1, p.get(&format!("{prefix}/wk"))?)?;
    let v = g.matmul(n1, p.get(&format!("{prefix}/wv"))?)?;
    let attended = attention(g, q, k, v)?;
    let out = g.matmul(attended, p.get(&format!("{prefix}/wo"))?)?;
    let x1 = g.add(x, out)?;

    let n2 = g.layer_norm_rows(x1, LN_EPS);
    let h = affine(
        g,
        n2,
        p.get(&format!("{prefix}/ff1_w"))?,
        p.get(&format!("{prefix}/ff1_b"))?,
    )?;
    let h = g.gelu(h);
    let f = affine(
        g,
        h,
        p.get(&format!("{prefix}/ff2_w"))?,
        p.get(&format!("{prefix}/ff2_b"))?,
    )?;
    g.add(x1, f)
}

/// Attention maps and attended sequences from [`cross_attend`].
#[derive(Debug, Clone, Copy)]
pub struct CrossAttention {
    pub impact_to_severity: NodeId,
    pub severity_to_impact: NodeId,
    pub h_md: NodeId,
    pub h_dm: NodeId,
}

/// Impact queries attend over severity keys/values (`H_MD`) and severity
/// queries attend over impact keys/values (`H_DM`). Single head, no output
/// projection.
pub fn cross_attend(
    g: &mut Graph,
    p: &BoundParams,
    h_m: NodeId,
    h_d: NodeId,
) -> Result<CrossAttention, NumericsError> {
    if g.value(h_m).shape() != g.value(h_d).shape() {
        return Err(NumericsError::Shape {
            op: "cross_attend",
            left: g.value(h_m).shape().to_vec(),
            right: g.value(h_d).shape().to_vec(),
        });
    }
    let d = g.value(h_m).dims2()?.1;
    let scale = 1.0 / (d as f64).sqrt();

    let q_m = g.matmul(h_m, p.get("xattn/wq_m")?)?;
    let k_d = g.matmul(h_d, p.get("xattn/wk_d")?)?;
    let v_d = g.matmul(h_d, p.get("xattn/wv_d")?)?;
    let q_d = g.matmul(h_d, p.get("xattn/wq_d")?)?;
    let k_m = g.matmul(h_m, p.get("xattn/wk_m")?)?;
    let v_m = g.matmul(h_m, p.get("xattn/wv_m")?)?;

    let kdt = g.transpose(k_d)?;
    let s_md = g.matmul(q_m, kdt)?;
    let s_md = g.scale(s_md, scale);
    let a_md = g.softmax_rows(s_md)?;

    let kmt = g.transpose(k_m)?;
    let s_dm = g.matmul(q_d, kmt)?;
    let s_dm = g.scale(s_dm, scale);
    let a_dm = g.softmax_rows(s_dm)?;

    let h_md = g.matmul(a_md, v_d)?;
    let h_dm = g.matmul(a_dm, v_m)?;
    Ok(CrossAttention {
        impact_to_severity: a_md,
        severity_to_impact: a_dm,
        h_md,
        h_dm,
    })
}

/// The attention-free variant: the encoded pair passes through unchanged.
pub fn forward_no_attention(h_m: NodeId, h_d: NodeId) -> (NodeId, NodeId) {
    (h_m, h_d)
}

/// Decoder outputs: severity `T_P×1` and impact `T_P×2δ`.
#[derive(Debug, Clone, Copy)]
pub struct Decoded {
    pub severity: NodeId,
    pub impact: NodeId,
}

/// Concatenate, flatten, two-layer MLP, reshape to `T_P × (1+2δ)`.
pub fn decode(
    g: &mut Graph,
    p: &BoundParams,
    h_md: NodeId,
    h_dm: NodeId,
    horizon: usize,
) -> Result<Decoded, NumericsError> {
    let h = g.concat_last_dim(h_md, h_dm)?;
    let flat_len = g.value(h).len();
    let flat = g.reshape(h, &[1, flat_len])?;
    let z = g.matmul(flat, p.get("dec/w1")?)?;
    let z = g.add(z, p.get("dec/b1")?)?;
    let z = g.gelu(z);
    let out = g.matmul(z, p.get("dec/w2")?)?;
    let out = g.add(out, p.get("dec/b2")?)?;
    let width = g.value(out).len() / horizon;
    let grid = g.reshape(out, &[horizon, width])?;
    let severity = g.slice_last_dim(grid, 0, 1)?;
    let impact = g.slice_last_dim(grid, 1, width)?;
    Ok(Decoded { severity, impact })
}

/// `Σ_steps λ_D·(D̂−D)² + λ_M·mean_j (M̂_j−M_j)²`.
pub fn joint_loss(
    g: &mut Graph,
    severity_hat: NodeId,
    severity: NodeId,
    impact_hat: NodeId,
    impact: NodeId,
    weights: LossWeights,
) -> Result<NodeId, NumericsError> {
    let width = g.value(impact).last_dim().max(1);
    let ds = g.sub(severity_hat, severity)?;
    let ds = g.square(ds);
    let ds = g.sum_all(ds);
    let ds = g.scale(ds, weights.severity);
    let dm = g.sub(impact_hat, impact)?;
    let dm = g.square(dm);
    let dm = g.sum_all(dm);
    let dm = g.scale(dm, weights.impact / width as f64);
    g.add(ds, dm)
}

/// One model input: standardized severity and masked impact rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub severity: Vec<f64>,
    pub impact: Vec<[f64; IMPACT_DIM]>,
}

/// Targets in the same units as model outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTarget {
    pub severity: Vec<f64>,
    pub impact: Vec<[f64; IMPACT_DIM]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub severity: Vec<f64>,
    pub impact: Vec<Vec<f64>>,
}

fn rows_tensor(rows: &[[f64; IMPACT_DIM]]) -> Tensor {
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Tensor::new(vec![rows.len(), IMPACT_DIM], data).expect("shape product")
}

fn column_tensor(values: &[f64]) -> Tensor {
    Tensor::new(vec![values.len(), 1], values.to_vec()).expect("shape product")
}

/// Builds the full forward graph for one input.
pub fn forward(
    g: &mut Graph,
    p: &BoundParams,
    config: &ModelConfig,
    input: &ModelInput,
) -> Result<Decoded, NumericsError> {
    if input.severity.len() != config.lookback || input.impact.len() != config.lookback {
        return Err(NumericsError::Shape {
            op: "forward",
            left: vec![input.severity.len(), input.impact.len()],
            right: vec![config.lookback, config.lookback],
        });
    }
    let m_seq = g.constant(rows_tensor(&input.impact));
    let d_seq = g.constant(column_tensor(&input.severity));
    let h_m = encode(g, p, "enc_m", m_seq)?;
    let h_d = encode(g, p, "enc_d", d_seq)?;
    let (h_md, h_dm) = if config.ablation.uses_attention() {
        let ca = cross_attend(g, p, h_m, h_d)?;
        (ca.h_md, ca.h_dm)
    } else {
        forward_no_attention(h_m, h_d)
    };
    decode(g, p, h_md, h_dm, config.horizon)
}

/// Inference without gradient tracking.
pub fn predict(
    params: &ParamStore,
    config: &ModelConfig,
    input: &ModelInput,
) -> Result<Prediction, NumericsError> {
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, params, false);
    let out = forward(&mut g, &p, config, input)?;
    let impact = g.value(out.impact);
    Ok(Prediction {
        severity: g.value(out.severity).data().to_vec(),
        impact: (0..config.horizon).map(|r| impact.row(r).to_vec()).collect(),
    })
}

/// Joint loss of one example and its parameter gradients.
pub fn loss_and_grads(
    params: &ParamStore,
    config: &ModelConfig,
    input: &ModelInput,
    target: &ModelTarget,
) -> Result<(f64, BTreeMap<String, Tensor>), NumericsError> {
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, params, true);
    let out = forward(&mut g, &p, config, input)?;
    let sev = g.constant(column_tensor(&target.severity));
    let imp = g.constant(rows_tensor(&target.impact));
    let loss = joint_loss(&mut g, out.severity, sev, out.impact, imp, config.loss)?;
    g.backward(loss)?;
    let value = g.value(loss).data()[0];
    Ok((value, p.grads(&g)))
}

/// Joint loss of one example without gradients.
pub fn loss_only(
    params: &ParamStore,
    config: &ModelConfig,
    input: &ModelInput,
    target: &ModelTarget,
) -> Result<f64, NumericsError> {
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, params, false);
    let out = forward(&mut g, &p, config, input)?;
    let sev = g.constant(column_tensor(&target.severity));
    let imp = g.constant(rows_tensor(&target.impact));
    let loss = joint_loss(&mut g, out.severity, sev, out.impact, imp, config.loss)?;
    Ok(g.value(loss).data()[0])
}
