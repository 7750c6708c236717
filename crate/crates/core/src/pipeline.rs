//! End-to-end glue: geofiltered corpora to impact series to windowed
//! splits.

use crate::dsiq::{build_impact_series, DsiqError, Lexicon, ScoringBackend, TopicModel, TopicSettings};
use crate::ingest::{geofilter, EntityList};
use crate::types::{
    chronological_split, make_windows, training_range_end, Document, ImpactVector, Source, WindowError,
    WindowedSample,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error("{corpus} topic model: {error}")]
    Topics { corpus: Source, error: DsiqError },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSettings {
    pub lookback: usize,
    pub horizon: usize,
    pub ratios: (u32, u32, u32),
}

#[derive(Debug, Clone)]
pub struct Quantified {
    pub impacts: Vec<ImpactVector>,
    pub social_model: TopicModel,
    pub news_model: TopicModel,
    /// Last timestep whose documents were used to fit topics.
    pub fit_end: usize,
    pub social_kept: usize,
    pub news_kept: usize,
}

/// Geofilters both corpora, fits one topic model per source on
/// training-range documents, and quantifies every week.
#[allow(clippy::too_many_arguments)]
pub fn quantify_corpus(
    weeks: usize,
    social: &[Document],
    news: &[Document],
    entities: &EntityList,
    windows: WindowSettings,
    settings: &TopicSettings,
    backend: &dyn ScoringBackend,
    lexicon: &Lexicon,
) -> Result<Quantified, PipelineError> {
    let fit_end = training_range_end(weeks, windows.lookback, windows.horizon, windows.ratios)?;
    let social = geofilter(social, entities);
    let news = geofilter(news, entities);
    let fit = |source: Source, docs: &[Document]| {
        let in_range: Vec<Document> = docs.iter().filter(|d| d.timestep <= fit_end).cloned().collect();
        TopicModel::fit(source, &in_range, settings, backend, lexicon)
            .map_err(|error| PipelineError::Topics { corpus: source, error })
    };
    let social_model = fit(Source::Social, &social)?;
    let news_model = fit(Source::News, &news)?;
    let impacts = build_impact_series(&social, &news, weeks, &social_model, &news_model);
    Ok(Quantified {
        impacts,
        social_model,
        news_model,
        fit_end,
        social_kept: social.len(),
        news_kept: news.len(),
    })
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<WindowedSample>,
    pub val: Vec<WindowedSample>,
    pub test: Vec<WindowedSample>,
}

pub fn make_splits(
    severity: &[f64],
    impacts: &[ImpactVector],
    windows: WindowSettings,
) -> Result<Splits, WindowError> {
    let samples = make_windows(severity, impacts, windows.lookback, windows.horizon)?;
    let (train, val, test) = chronological_split(&samples, windows.ratios)?;
    Ok(Splits { train, val, test })
}
