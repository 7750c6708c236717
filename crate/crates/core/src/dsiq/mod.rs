//! Determinant-driven societal impact quantification.
//!
//! Documents from each source are vectorized, clustered into at most `K`
//! topics, each topic is mapped to one of the eleven determinants, and the
//! weekly share of documents per determinant becomes that week's impact
//! vector.

mod cluster;
mod mapping;
mod text;

use std::io::{Read, Write};

use thiserror::Error;

pub use cluster::{class_keywords, kmeans, nearest, KMeans};
pub use mapping::{
    map_topic, map_topics, pick_determinant, BackendError, HttpBackend, Lexicon, ScoringBackend,
    DEFAULT_THRESHOLD, LLM_KEY_VAR, LLM_URL_VAR,
};
pub use text::{cosine, tokenize, vectorize, SparseVec, Vocabulary};

use crate::types::{Document, ImpactVector, Source, DETERMINANT_COUNT};

pub const DETERMINANT_NAMES: [&str; DETERMINANT_COUNT] = [
    "Agriculture",
    "Ecosystems",
    "Energy",
    "Hazard Planning & Preparedness",
    "Manufacturing",
    "Navigation and Transportation",
    "Public Health",
    "Recreation and Tourism",
    "Water Utilities",
    "Wildfire Management",
    "Other",
];

pub const OTHER_INDEX: usize = DETERMINANT_COUNT - 1;

/// Default number of topics per source.
pub const DEFAULT_TOPICS: usize = 50;

/// Keywords kept per topic.
pub const KEYWORDS_PER_TOPIC: usize = 10;

#[derive(Debug, Error)]
pub enum DsiqError {
    #[error("no documents to fit")]
    NoDocuments,
    #[error("vocabulary is empty after filtering rare terms and stopwords")]
    EmptyVocabulary,
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("impact csv line {line}: {message}")]
    ImpactCsv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The fixed, ordered determinant list. Position defines the component
/// index in every impact vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeterminantSet;

impl DeterminantSet {
    pub fn standard() -> Self {
        DeterminantSet
    }

    pub fn len(&self) -> usize {
        DETERMINANT_COUNT
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn name(&self, i: usize) -> &'static str {
        DETERMINANT_NAMES[i]
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> {
        DETERMINANT_NAMES.iter().copied()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        DETERMINANT_NAMES.iter().position(|n| n.eq_ignore_ascii_case(name.trim()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicCluster {
    pub id: usize,
    pub member_doc_ids: Vec<String>,
    pub keywords: Vec<String>,
    pub determinant_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopicSettings {
    pub topics: usize,
    pub keywords: usize,
    pub threshold: f64,
    pub seed: u64,
    pub max_in_flight: usize,
}

impl Default for TopicSettings {
    fn default() -> Self {
        Self {
            topics: DEFAULT_TOPICS,
            keywords: KEYWORDS_PER_TOPIC,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            max_in_flight: 4,
        }
    }
}

/// A fitted, frozen topic model for one source.
#[derive(Debug, Clone)]
pub struct TopicModel {
    pub source: Source,
    vocabulary: Vocabulary,
    centroids: Vec<Vec<f64>>,
    centroid_norms: Vec<f64>,
    pub clusters: Vec<TopicCluster>,
}

impl TopicModel {
    /// Fits on `docs` (one source, training range only).
    ///
    /// Documents are put in a canonical order first so the fit does not
    /// depend on input order.
    pub fn fit(
        source: Source,
        docs: &[Document],
        settings: &TopicSettings,
        backend: &dyn ScoringBackend,
        fallback: &Lexicon,
    ) -> Result<Self, DsiqError> {
        let mut ordered: Vec<&Document> = docs.iter().filter(|d| d.source == source).collect();
        if ordered.is_empty() {
            return Err(DsiqError::NoDocuments);
        }
        ordered.sort_by(|a, b| {
            (a.timestep, &a.id, &a.text).cmp(&(b.timestep, &b.id, &b.text))
        });
        let texts: Vec<&str> = ordered.iter().map(|d| d.text.as_str()).collect();
        let (vocabulary, vectors) = vectorize(&texts)?;

        // documents without informative terms are not clustered
        let live: Vec<usize> = (0..vectors.len()).filter(|&i| !vectors[i].is_empty()).collect();
        let live_vectors: Vec<SparseVec> = live.iter().map(|&i| vectors[i].clone()).collect();
        let km = kmeans(&live_vectors, vocabulary.len(), settings.topics, settings.seed);
        let live_texts: Vec<&str> = live.iter().map(|&i| texts[i]).collect();
        let keywords = class_keywords(
            &vocabulary,
            &live_texts,
            &km.assignments,
            km.centroids.len(),
            settings.keywords,
        );
        let determinants = DeterminantSet::standard();
        let mapped = map_topics(
            &keywords,
            &determinants,
            backend,
            fallback,
            settings.threshold,
            settings.max_in_flight,
        );

        let mut members: Vec<Vec<String>> = vec![Vec::new(); km.centroids.len()];
        for (&doc_idx, &a) in live.iter().zip(&km.assignments) {
            members[a].push(ordered[doc_idx].id.clone());
        }
        let clusters = keywords
            .into_iter()
            .zip(mapped)
            .zip(members)
            .enumerate()
            .map(|(id, ((keywords, determinant_index), member_doc_ids))| TopicCluster {
                id,
                member_doc_ids,
                keywords,
                determinant_index,
            })
            .collect();
        let centroid_norms = km
            .centroids
            .iter()
            .map(|c| c.iter().map(|v| v * v).sum())
            .collect();
        Ok(Self {
            source,
            vocabulary,
            centroids: km.centroids,
            centroid_norms,
            clusters,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    /// Nearest topic, or `None` when the text has no informative term.
    pub fn assign(&self, text: &str) -> Option<usize> {
        if self.centroids.is_empty() {
            return None;
        }
        let v = self.vocabulary.transform(text);
        if v.is_empty() {
            return None;
        }
        Some(nearest(&v, &self.centroids, &self.centroid_norms))
    }

    /// Determinant of a document; uninformative documents count as "Other".
    pub fn determinant_of(&self, text: &str) -> usize {
        self.assign(text)
            .map_or(OTHER_INDEX, |c| self.clusters[c].determinant_index)
    }
}

/// Share of `docs` per determinant; all zeros when `docs` is empty.
pub fn quantify(docs: &[&Document], model: &TopicModel) -> [f64; DETERMINANT_COUNT] {
    let mut counts = [0usize; DETERMINANT_COUNT];
    for d in docs {
        counts[model.determinant_of(&d.text)] += 1;
    }
    let total: usize = counts.iter().sum();
    let mut out = [0.0; DETERMINANT_COUNT];
    if total > 0 {
        for (o, c) in out.iter_mut().zip(counts) {
            *o = c as f64 / total as f64;
        }
    }
    out
}

/// One impact vector per week `0..weeks`.
pub fn build_impact_series(
    social_docs: &[Document],
    news_docs: &[Document],
    weeks: usize,
    social_model: &TopicModel,
    news_model: &TopicModel,
) -> Vec<ImpactVector> {
    let social = bucket_by_week(social_docs, weeks);
    let news = bucket_by_week(news_docs, weeks);
    (0..weeks)
        .map(|t| ImpactVector {
            timestep: t,
            social: quantify(&social[t], social_model),
            news: quantify(&news[t], news_model),
        })
        .collect()
}

fn bucket_by_week(docs: &[Document], weeks: usize) -> Vec<Vec<&Document>> {
    let mut by_week: Vec<Vec<&Document>> = vec![Vec::new(); weeks];
    for d in docs {
        if d.timestep < weeks {
            by_week[d.timestep].push(d);
        }
    }
    by_week
}

/// Header of the impact series CSV.
pub fn impact_header() -> Vec<String> {
    let mut h = vec!["timestep".to_string()];
    h.extend((1..=DETERMINANT_COUNT).map(|i| format!("s_{i}")));
    h.extend((1..=DETERMINANT_COUNT).map(|i| format!("n_{i}")));
    h
}

pub fn write_impact_csv(series: &[ImpactVector], out: impl Write) -> Result<(), DsiqError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(impact_header()).map_err(csv_io)?;
    for iv in series {
        let mut row = vec![iv.timestep.to_string()];
        row.extend(iv.concat().iter().map(|v| v.to_string()));
        w.write_record(row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_impact_csv(input: impl Read) -> Result<Vec<ImpactVector>, DsiqError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| DsiqError::ImpactCsv {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if header != impact_header() {
        return Err(DsiqError::ImpactCsv {
            line: 1,
            message: "unexpected header".into(),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let bad = |message: String| DsiqError::ImpactCsv { line, message };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let timestep: usize = rec[0].parse().map_err(|_| bad(format!("bad timestep `{}`", &rec[0])))?;
        let mut values = [0.0; 2 * DETERMINANT_COUNT];
        for (j, v) in values.iter_mut().enumerate() {
            let field = &rec[j + 1];
            *v = field.parse().map_err(|_| bad(format!("bad value `{field}`")))?;
        }
        let mut iv = ImpactVector::zeros(timestep);
        iv.social.copy_from_slice(&values[..DETERMINANT_COUNT]);
        iv.news.copy_from_slice(&values[DETERMINANT_COUNT..]);
        if !iv.is_valid() {
            return Err(bad("impact parts violate bounds or sum rule".into()));
        }
        out.push(iv);
    }
    Ok(out)
}

/// `source,cluster,determinant,doc_count,keywords` per topic.
pub fn write_topic_report(models: &[&TopicModel], out: impl Write) -> Result<(), DsiqError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "cluster", "determinant", "doc_count", "keywords"])
        .map_err(csv_io)?;
    let set = DeterminantSet::standard();
    for m in models {
        for c in &m.clusters {
            w.write_record([
                m.source.as_str().to_string(),
                c.id.to_string(),
                set.name(c.determinant_index).to_string(),
                c.member_doc_ids.len().to_string(),
                c.keywords.join(" "),
            ])
            .map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> DsiqError {
    DsiqError::Io(std::io::Error::other(e))
}
