//! MAE / MSE / RMSE / MFA and the tabular report written to `metrics.csv`.

use std::io::Write;

use serde::{Deserialize, Serialize};

/// Denominator floor for relative accuracy.
pub const MFA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub mfa: f64,
    pub count: usize,
}

pub fn rmse_from_mse(mse: f64) -> f64 {
    mse.sqrt()
}

/// Median of `max(0, 1 - |ŷ - y| / max(|y|, ε))` over all points.
pub fn median_forecast_accuracy(pred: &[f64], actual: &[f64]) -> f64 {
    let scores: Vec<f64> = pred
        .iter()
        .zip(actual)
        .map(|(p, y)| (1.0 - (p - y).abs() / y.abs().max(MFA_EPS)).max(0.0))
        .collect();
    median(scores)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

impl Metrics {
    /// `None` for empty or mismatched inputs.
    pub fn compute(pred: &[f64], actual: &[f64]) -> Option<Self> {
        if pred.is_empty() || pred.len() != actual.len() {
            return None;
        }
        let n = pred.len() as f64;
        let mae = pred.iter().zip(actual).map(|(p, y)| (p - y).abs()).sum::<f64>() / n;
        let mse = pred.iter().zip(actual).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n;
        Some(Self {
            mae,
            mse,
            rmse: rmse_from_mse(mse),
            mfa: median_forecast_accuracy(pred, actual),
            count: pred.len(),
        })
    }
}

/// Named metric rows for one run or variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<(String, Metrics)>,
}

impl MetricReport {
    pub fn get(&self, target: &str) -> Option<&Metrics> {
        self.rows.iter().find(|(t, _)| t == target).map(|(_, m)| m)
    }

    pub fn severity(&self) -> &Metrics {
        self.get(SEVERITY_TARGET).expect("every report has a severity row")
    }
}

pub const SEVERITY_TARGET: &str = "severity";
pub const IMPACT_TARGET: &str = "impact";

/// `variant,target,MAE,MSE,RMSE,MFA` rows.
pub fn write_metrics_csv<'a, W: Write>(
    out: W,
    reports: impl IntoIterator<Item = (&'a str, &'a MetricReport)>,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| std::io::Error::other(e);
    w.write_record(["variant", "target", "MAE", "MSE", "RMSE", "MFA"])
        .map_err(io)?;
    for (variant, report) in reports {
        for (target, m) in &report.rows {
            w.write_record([
                variant.to_string(),
                target.clone(),
                m.mae.to_string(),
                m.mse.to_string(),
                m.rmse.to_string(),
                m.mfa.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()
}
