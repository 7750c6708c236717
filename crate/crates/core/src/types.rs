//! Domain data model and sliding-window construction.

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of societal-impact determinants per source.
pub const DETERMINANT_COUNT: usize = 11;

/// Width of a concatenated social + news impact vector.
pub const IMPACT_DIM: usize = 2 * DETERMINANT_COUNT;

/// Upper bound of the DSCI scale.
pub const DSCI_MAX: f64 = 500.0;

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("severity has {severity} steps but impact series has {impacts}")]
    Alignment { severity: usize, impacts: usize },
    #[error("impact vector at position {position} carries timestep {found}")]
    Misaligned { position: usize, found: usize },
    #[error("need at least {needed} steps for lookback {lookback} + horizon {horizon}, have {have}")]
    InsufficientData {
        have: usize,
        needed: usize,
        lookback: usize,
        horizon: usize,
    },
    #[error("lookback and horizon must be at least 1")]
    ZeroWindow,
    #[error("cannot split an empty sample list")]
    EmptySamples,
    #[error("split ratios must be positive")]
    BadRatios,
}

/// One weekly collection period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeStep {
    pub index: usize,
    pub week_start: NaiveDate,
}

/// Weekly calendar anchored at the first week of the severity record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeekCalendar {
    pub first_week: NaiveDate,
    pub weeks: usize,
}

impl WeekCalendar {
    pub fn step(&self, index: usize) -> TimeStep {
        TimeStep {
            index,
            week_start: self.first_week + Duration::weeks(index as i64),
        }
    }

    /// Index of the week containing `date`, if within the calendar.
    pub fn bucket(&self, date: NaiveDate) -> Option<usize> {
        let days = (date - self.first_week).num_days();
        if days < 0 {
            return None;
        }
        let idx = (days / 7) as usize;
        (idx < self.weeks).then_some(idx)
    }
}

/// Weekly DSCI values, one per consecutive week.
#[derive(Debug, Clone, PartialEq)]
pub struct SeveritySeries {
    calendar: WeekCalendar,
    values: Vec<f64>,
}

impl SeveritySeries {
    /// Values are clamped into `[0, 500]`; non-finite values are rejected.
    pub fn new(first_week: NaiveDate, values: Vec<f64>) -> Option<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let values = values.into_iter().map(clamp_dsci).collect::<Vec<_>>();
        Some(Self {
            calendar: WeekCalendar {
                first_week,
                weeks: values.len(),
            },
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn calendar(&self) -> WeekCalendar {
        self.calendar
    }

    pub fn timesteps(&self) -> impl Iterator<Item = TimeStep> + '_ {
        (0..self.values.len()).map(|i| self.calendar.step(i))
    }
}

pub fn clamp_dsci(v: f64) -> f64 {
    v.clamp(0.0, DSCI_MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Social,
    News,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Social => "social",
            Source::News => "news",
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A post or article bucketed into a week.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub timestep: usize,
    pub text: String,
    pub source: Source,
}

/// Per-source determinant distributions for one week.
///
/// Each part is either a probability vector or all zeros (no documents).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactVector {
    pub timestep: usize,
    pub social: [f64; DETERMINANT_COUNT],
    pub news: [f64; DETERMINANT_COUNT],
}

impl ImpactVector {
    pub fn zeros(timestep: usize) -> Self {
        Self {
            timestep,
            social: [0.0; DETERMINANT_COUNT],
            news: [0.0; DETERMINANT_COUNT],
        }
    }

    /// `[social || news]`, length 22.
    pub fn concat(&self) -> [f64; IMPACT_DIM] {
        let mut out = [0.0; IMPACT_DIM];
        out[..DETERMINANT_COUNT].copy_from_slice(&self.social);
        out[DETERMINANT_COUNT..].copy_from_slice(&self.news);
        out
    }

    pub fn part(&self, source: Source) -> &[f64; DETERMINANT_COUNT] {
        match source {
            Source::Social => &self.social,
            Source::News => &self.news,
        }
    }

    /// Bounds and sum rule for both parts.
    pub fn is_valid(&self) -> bool {
        [&self.social, &self.news].iter().all(|part| {
            let in_bounds = part.iter().all(|v| (0.0..=1.0).contains(v));
            let sum: f64 = part.iter().sum();
            in_bounds && (sum == 0.0 && part.iter().all(|&v| v == 0.0) || (sum - 1.0).abs() <= 1e-6)
        })
    }
}

/// One (lookback, horizon) training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    /// Timestep index of the first lookback step.
    pub start: usize,
    pub severity_in: Vec<f64>,
    pub impact_in: Vec<ImpactVector>,
    pub severity_out: Vec<f64>,
    pub impact_out: Vec<ImpactVector>,
}

impl WindowedSample {
    pub fn lookback(&self) -> usize {
        self.severity_in.len()
    }

    pub fn horizon(&self) -> usize {
        self.severity_out.len()
    }

    /// Timestep index of the first forecast step.
    pub fn first_target(&self) -> usize {
        self.start + self.lookback()
    }

    /// Timestep index of the last forecast step.
    pub fn last_target(&self) -> usize {
        self.first_target() + self.horizon() - 1
    }
}

/// Stride-1 sliding windows: `T - lookback - horizon + 1` samples.
pub fn make_windows(
    severity: &[f64],
    impacts: &[ImpactVector],
    lookback: usize,
    horizon: usize,
) -> Result<Vec<WindowedSample>, WindowError> {
    if lookback == 0 || horizon == 0 {
        return Err(WindowError::ZeroWindow);
    }
    if severity.len() != impacts.len() {
        return Err(WindowError::Alignment {
            severity: severity.len(),
            impacts: impacts.len(),
        });
    }
    if let Some((position, iv)) = impacts.iter().enumerate().find(|(i, iv)| iv.timestep != *i) {
        return Err(WindowError::Misaligned {
            position,
            found: iv.timestep,
        });
    }
    let total = severity.len();
    let needed = lookback + horizon;
    if total < needed {
        return Err(WindowError::InsufficientData {
            have: total,
            needed,
            lookback,
            horizon,
        });
    }
    Ok((0..=total - needed)
        .map(|s| {
            let mid = s + lookback;
            let end = mid + horizon;
            WindowedSample {
                start: s,
                severity_in: severity[s..mid].to_vec(),
                impact_in: impacts[s..mid].to_vec(),
                severity_out: severity[mid..end].to_vec(),
                impact_out: impacts[mid..end].to_vec(),
            }
        })
        .collect())
}

/// Partition sizes: `floor(n·r/Σr)` per part, remainder to the first part.
pub fn split_sizes(n: usize, ratios: (u32, u32, u32)) -> Result<(usize, usize, usize), WindowError> {
    let (a, b, c) = ratios;
    if a == 0 || b == 0 || c == 0 {
        return Err(WindowError::BadRatios);
    }
    if n == 0 {
        return Err(WindowError::EmptySamples);
    }
    let total = (a + b + c) as usize;
    let val = n * b as usize / total;
    let test = n * c as usize / total;
    Ok((n - val - test, val, test))
}

/// Train, validation and test parts.
pub type Split<T> = (Vec<T>, Vec<T>, Vec<T>);

/// Contiguous chronological split into (train, val, test).
pub fn chronological_split<T: Clone>(samples: &[T], ratios: (u32, u32, u32)) -> Result<Split<T>, WindowError> {
    let (tr, va, _) = split_sizes(samples.len(), ratios)?;
    Ok((
        samples[..tr].to_vec(),
        samples[tr..tr + va].to_vec(),
        samples[tr + va..].to_vec(),
    ))
}

/// Default split ratios (train:val:test).
pub const DEFAULT_SPLIT: (u32, u32, u32) = (7, 1, 2);

/// Last timestep index touched by any training window, for a series of
/// `weeks` steps. Used to restrict topic fitting and scaling statistics to
/// the training range.
pub fn training_range_end(
    weeks: usize,
    lookback: usize,
    horizon: usize,
    ratios: (u32, u32, u32),
) -> Result<usize, WindowError> {
    if lookback == 0 || horizon == 0 {
        return Err(WindowError::ZeroWindow);
    }
    let needed = lookback + horizon;
    if weeks < needed {
        return Err(WindowError::InsufficientData {
            have: weeks,
            needed,
            lookback,
            horizon,
        });
    }
    let n = weeks - needed + 1;
    let (train, _, _) = split_sizes(n, ratios)?;
    Ok(train - 1 + needed - 1)
}
