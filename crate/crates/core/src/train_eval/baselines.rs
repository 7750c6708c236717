//! Persistence and linear autoregressive reference forecasters.

use nalgebra::{DMatrix, DVector};

use super::metrics::{MetricReport, Metrics, SEVERITY_TARGET};
use super::TrainError;
use crate::types::WindowedSample;

pub const DEFAULT_AR_ORDER: usize = 4;

fn severity_report(pred: &[f64], actual: &[f64]) -> Result<MetricReport, TrainError> {
    let m = Metrics::compute(pred, actual).ok_or(TrainError::EmptySplit("test"))?;
    Ok(MetricReport {
        rows: vec![(SEVERITY_TARGET.to_string(), m)],
    })
}

fn targets(samples: &[WindowedSample]) -> Vec<f64> {
    samples.iter().flat_map(|s| s.severity_out.iter().copied()).collect()
}

/// Repeats the last observed severity across the horizon.
pub fn baseline_persistence(samples: &[WindowedSample]) -> Result<MetricReport, TrainError> {
    let pred: Vec<f64> = samples
        .iter()
        .flat_map(|s| {
            let last = *s.severity_in.last().expect("non-empty lookback");
            std::iter::repeat_n(last, s.horizon())
        })
        .collect();
    severity_report(&pred, &targets(samples))
}

/// `y_t = c + Σ_i a_i · y_{t-i}` fitted by least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    pub intercept: f64,
    /// `coefficients[i]` multiplies `y_{t-1-i}`.
    pub coefficients: Vec<f64>,
}

impl ArModel {
    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    /// Iterated multi-step forecast from the end of `history`.
    pub fn forecast(&self, history: &[f64], steps: usize) -> Vec<f64> {
        let mut buf = history.to_vec();
        for _ in 0..steps {
            let n = buf.len();
            let next = self.intercept
                + self
                    .coefficients
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a * buf[n - 1 - i])
                    .sum::<f64>();
            buf.push(next);
        }
        buf.split_off(history.len())
    }
}

/// Regression rows come from every lookback sequence in `train`; targets
/// are never used as regressors so test-time inputs mirror training.
pub fn fit_ar(train: &[WindowedSample], order: usize) -> Result<ArModel, TrainError> {
    let lookback = train
        .first()
        .map(WindowedSample::lookback)
        .ok_or(TrainError::EmptySplit("train"))?;
    if order == 0 || order >= lookback {
        return Err(TrainError::Config(format!(
            "AR order must be in 1..{lookback}, got {order}"
        )));
    }
    let mut rows: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in train {
        let seq = &s.severity_in;
        for t in order..seq.len() {
            rows.push(1.0);
            rows.extend((1..=order).map(|i| seq[t - i]));
            ys.push(seq[t]);
        }
    }
    let x = DMatrix::from_row_slice(ys.len(), order + 1, &rows);
    let y = DVector::from_vec(ys);
    let beta = x
        .svd(true, true)
        .solve(&y, 1e-10)
        .map_err(|e| TrainError::Config(format!("least squares failed: {e}")))?;
    Ok(ArModel {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
    })
}

pub fn baseline_linear_ar(
    train: &[WindowedSample],
    test: &[WindowedSample],
    order: usize,
) -> Result<MetricReport, TrainError> {
    let model = fit_ar(train, order)?;
    let pred: Vec<f64> = test
        .iter()
        .flat_map(|s| model.forecast(&s.severity_in, s.horizon()))
        .collect();
    severity_report(&pred, &targets(test))
}
