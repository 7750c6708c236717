//! Tokenization and TF-IDF vectorization.

use std::collections::{BTreeMap, HashMap};

use super::DsiqError;

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "amp", "an", "and",
    "any", "are", "as", "at", "be", "because", "been", "before", "being", "below", "between",
    "both", "but", "by", "can", "com", "could", "did", "do", "does", "doing", "down", "during",
    "each", "few", "for", "from", "further", "get", "got", "had", "has", "have", "having", "he",
    "her", "here", "hers", "him", "his", "how", "http", "https", "i", "if", "in", "into", "is",
    "it", "its", "itself", "just", "like", "me", "more", "most", "my", "new", "no", "nor", "not",
    "now", "of", "off", "on", "once", "one", "only", "or", "other", "our", "ours", "out", "over",
    "own", "rt", "said", "same", "says", "she", "should", "so", "some", "such", "than", "that",
    "the", "their", "theirs", "them", "then", "there", "these", "they", "this", "those", "through",
    "to", "too", "under", "until", "up", "very", "via", "was", "we", "were", "what", "when",
    "where", "which", "while", "who", "whom", "why", "will", "with", "would", "www", "you", "your",
    "yours",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Lowercased alphanumeric runs of at least two characters, excluding
/// stopwords and pure numbers.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .filter(|t| !t.chars().all(|c| c.is_ascii_digit()) && !is_stopword(t))
        .collect()
}

/// Sparse vector as `(term index, weight)` pairs sorted by index.
pub type SparseVec = Vec<(usize, f64)>;

pub fn dot_dense(x: &SparseVec, dense: &[f64]) -> f64 {
    x.iter().map(|&(i, w)| w * dense[i]).sum()
}

pub fn norm_sq(x: &SparseVec) -> f64 {
    x.iter().map(|(_, w)| w * w).sum()
}

pub fn cosine(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    let denom = (norm_sq(a) * norm_sq(b)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        dot / denom
    }
}

/// Term index and inverse document frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    idf: Vec<f64>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, i: usize) -> &str {
        &self.terms[i]
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn idf(&self, i: usize) -> f64 {
        self.idf[i]
    }

    /// Raw in-vocabulary term counts of `text`, sorted by term index.
    pub fn counts(&self, text: &str) -> Vec<(usize, usize)> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for tok in tokenize(text) {
            if let Some(i) = self.index_of(&tok) {
                *counts.entry(i).or_default() += 1;
            }
        }
        counts.into_iter().collect()
    }

    /// L2-normalized TF-IDF vector; empty when no informative term occurs.
    pub fn transform(&self, text: &str) -> SparseVec {
        let mut v: SparseVec = self
            .counts(text)
            .into_iter()
            .map(|(i, c)| (i, c as f64 * self.idf[i]))
            .filter(|&(_, w)| w > 0.0)
            .collect();
        let norm = norm_sq(&v).sqrt();
        if norm > 0.0 {
            for (_, w) in &mut v {
                *w /= norm;
            }
        }
        v
    }
}

/// Builds the vocabulary from `texts` and returns it with one TF-IDF
/// vector per text. Terms in fewer than two documents are excluded;
/// IDF is `ln(N / df)`.
pub fn vectorize<S: AsRef<str>>(texts: &[S]) -> Result<(Vocabulary, Vec<SparseVec>), DsiqError> {
    if texts.is_empty() {
        return Err(DsiqError::NoDocuments);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        let mut toks = tokenize(text.as_ref());
        toks.sort_unstable();
        toks.dedup();
        for t in toks {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = texts.len() as f64;
    let (terms, idf): (Vec<String>, Vec<f64>) = df
        .into_iter()
        .filter(|(_, d)| *d >= 2)
        .map(|(t, d)| {
            let idf = (n / d as f64).ln();
            (t, idf)
        })
        .unzip();
    if terms.is_empty() {
        return Err(DsiqError::EmptyVocabulary);
    }
    let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    let vocab = Vocabulary { terms, index, idf };
    let vectors = texts.iter().map(|t| vocab.transform(t.as_ref())).collect();
    Ok((vocab, vectors))
}
