//! Severity CSV and document JSONL readers, weekly bucketing and
//! location-entity filtering.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::Deserialize;
use thiserror::Error;

use crate::types::{clamp_dsci, Document, SeveritySeries, Source, WeekCalendar, DSCI_MAX};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("expected header `week_start,dsci`, found `{0}`")]
    Header(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate date {date}")]
    DuplicateDate { line: usize, date: NaiveDate },
    #[error("line {line}: date {date} is earlier than the previous row {previous}")]
    NonMonotonic {
        line: usize,
        date: NaiveDate,
        previous: NaiveDate,
    },
    #[error("line {line}: missing week(s) between {previous} and {date}")]
    Gap {
        line: usize,
        date: NaiveDate,
        previous: NaiveDate,
    },
    #[error("severity file has no data rows")]
    NoRows,
    #[error("entity list is empty")]
    NoEntities,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads `week_start,dsci` rows. Weeks must be consecutive; values above
/// 500 or below 0 are clamped with a warning.
pub fn load_severity(path: &Path) -> Result<SeveritySeries, IngestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_severity(file)
}

pub fn parse_severity(reader: impl Read) -> Result<SeveritySeries, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| IngestError::Parse {
            line: 1,
            message: e.to_string(),
        })?,
        None => return Err(IngestError::NoRows),
    };
    let header_text = header.iter().collect::<Vec<_>>().join(",");
    if header_text != "week_start,dsci" {
        return Err(IngestError::Header(header_text));
    }

    let mut first: Option<NaiveDate> = None;
    let mut previous: Option<NaiveDate> = None;
    let mut values = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| IngestError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(IngestError::Parse {
                line,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| IngestError::Parse {
            line,
            message: format!("bad date `{}`: {e}", &rec[0]),
        })?;
        let raw: f64 = rec[1].parse().map_err(|_| IngestError::Parse {
            line,
            message: format!("bad dsci value `{}`", &rec[1]),
        })?;
        if !raw.is_finite() {
            return Err(IngestError::Parse {
                line,
                message: format!("non-finite dsci value `{}`", &rec[1]),
            });
        }
        if let Some(prev) = previous {
            let days = (date - prev).num_days();
            if days == 0 {
                return Err(IngestError::DuplicateDate { line, date });
            }
            if days < 0 {
                return Err(IngestError::NonMonotonic {
                    line,
                    date,
                    previous: prev,
                });
            }
            if days != 7 {
                return Err(IngestError::Gap {
                    line,
                    date,
                    previous: prev,
                });
            }
        }
        let value = clamp_dsci(raw);
        if value != raw {
            log::warn!("line {line}: dsci {raw} outside [0, {DSCI_MAX}], clamped to {value}");
        }
        first.get_or_insert(date);
        previous = Some(date);
        values.push(value);
    }
    let first = first.ok_or(IngestError::NoRows)?;
    Ok(SeveritySeries::new(first, values).expect("values validated finite"))
}

#[derive(Debug, Deserialize)]
struct RawDocument {
    id: serde_json::Value,
    timestamp: String,
    text: String,
}

/// Outcome of reading one JSONL document file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentLoad {
    pub documents: Vec<Document>,
    pub malformed: usize,
    pub empty_text: usize,
    pub out_of_range: usize,
}

pub fn load_documents(
    path: &Path,
    source: Source,
    calendar: WeekCalendar,
    strict: bool,
) -> Result<DocumentLoad, IngestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_documents(BufReader::new(file), source, calendar, strict)
}

/// Parses JSONL documents and buckets them into the calendar's weeks.
///
/// In lenient mode malformed lines are skipped and counted; in strict mode
/// the first malformed line is an error.
pub fn parse_documents(
    reader: impl BufRead,
    source: Source,
    calendar: WeekCalendar,
    strict: bool,
) -> Result<DocumentLoad, IngestError> {
    let mut out = DocumentLoad::default();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| IngestError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawDocument>(&line)
            .map_err(|e| e.to_string())
            .and_then(|raw| {
                let date = parse_timestamp(&raw.timestamp)
                    .ok_or_else(|| format!("bad timestamp `{}`", raw.timestamp))?;
                let id = match raw.id {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Number(n) => n.to_string(),
                    other => return Err(format!("bad id `{other}`")),
                };
                Ok((id, date, raw.text))
            });
        let (id, date, text) = match parsed {
            Ok(v) => v,
            Err(message) if strict => return Err(IngestError::Parse { line: lineno, message }),
            Err(message) => {
                log::debug!("skipping line {lineno}: {message}");
                out.malformed += 1;
                continue;
            }
        };
        if text.trim().is_empty() {
            out.empty_text += 1;
            continue;
        }
        let Some(timestep) = calendar.bucket(date) else {
            out.out_of_range += 1;
            continue;
        };
        out.documents.push(Document {
            id,
            timestep,
            text,
            source,
        });
    }
    if out.malformed + out.empty_text + out.out_of_range > 0 {
        log::info!(
            "{source} documents: kept {}, malformed {}, empty {}, out of range {}",
            out.documents.len(),
            out.malformed,
            out.empty_text,
            out.out_of_range
        );
    }
    Ok(out)
}

/// Accepts RFC 3339, naive `YYYY-MM-DDTHH:MM:SS`, or a bare date.
fn parse_timestamp(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc).date_naive());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.date());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

/// Lowercase location names (cities, counties, landmarks).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityList {
    entities: BTreeSet<String>,
}

impl EntityList {
    pub fn new<I, S>(entries: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entities: BTreeSet<String> = entries
            .into_iter()
            .map(|e| e.as_ref().trim().to_lowercase())
            .filter(|e| !e.is_empty())
            .collect();
        if entities.is_empty() {
            return Err(IngestError::NoEntities);
        }
        Ok(Self { entities })
    }

    /// One entity per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        Self::new(text.lines().map(|l| l.split('#').next().unwrap_or("")))
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entities.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// True if any entity occurs in `text` delimited by non-alphanumeric
    /// characters or the text ends.
    pub fn matches(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.entities.iter().any(|e| contains_token(&lower, e))
    }
}

fn contains_token(haystack: &str, needle: &str) -> bool {
    let is_word = |c: char| c.is_alphanumeric();
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before_ok = haystack[..start].chars().next_back().is_none_or(|c| !is_word(c));
        let after_ok = haystack[end..].chars().next().is_none_or(|c| !is_word(c));
        if before_ok && after_ok {
            return true;
        }
        from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// Keeps documents mentioning at least one entity, preserving order.
pub fn geofilter(docs: &[Document], entities: &EntityList) -> Vec<Document> {
    docs.iter()
        .filter(|d| entities.matches(&d.text))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cal(weeks: usize) -> WeekCalendar {
        WeekCalendar {
            first_week: NaiveDate::from_ymd_opt(2017, 1, 2).unwrap(),
            weeks,
        }
    }

    #[test]
    fn severity_single_row() {
        let s = parse_severity("week_start,dsci\n2017-01-02,310.5\n".as_bytes()).unwrap();
        assert_eq!(s.values(), &[310.5]);
        assert_eq!(s.calendar().first_week, NaiveDate::from_ymd_opt(2017, 1, 2).unwrap());
    }

    #[test]
    fn severity_clamps_high_values() {
        let s = parse_severity("week_start,dsci\n2017-01-02,612.0\n2017-01-09,5\n".as_bytes()).unwrap();
        assert_eq!(s.values(), &[500.0, 5.0]);
    }

    #[test]
    fn severity_rejects_duplicates_gaps_and_disorder() {
        let dup = "week_start,dsci\n2017-01-02,1\n2017-01-02,2\n";
        assert!(matches!(
            parse_severity(dup.as_bytes()),
            Err(IngestError::DuplicateDate { line: 3, .. })
        ));
        let gap = "week_start,dsci\n2017-01-02,1\n2017-01-16,2\n";
        assert!(matches!(parse_severity(gap.as_bytes()), Err(IngestError::Gap { line: 3, .. })));
        let back = "week_start,dsci\n2017-01-09,1\n2017-01-02,2\n";
        assert!(matches!(
            parse_severity(back.as_bytes()),
            Err(IngestError::NonMonotonic { line: 3, .. })
        ));
        let bad = "week_start,dsci\n2017-01-02,abc\n";
        let err = parse_severity(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
        assert!(matches!(
            parse_severity("date,value\n".as_bytes()),
            Err(IngestError::Header(_))
        ));
        assert!(matches!(parse_severity("week_start,dsci\n".as_bytes()), Err(IngestError::NoRows)));
    }

    #[test]
    fn documents_bucketed_by_week() {
        // 2017-02-22 is day 51 after 2017-01-02, i.e. inside week 7
        let line = r#"{"id":"a","timestamp":"2017-02-22T14:00:00Z","text":"dry fields"}"#;
        let load = parse_documents(line.as_bytes(), Source::Social, cal(20), false).unwrap();
        assert_eq!(load.documents.len(), 1);
        assert_eq!(load.documents[0].timestep, 7);
        assert_eq!(load.documents[0].source, Source::Social);
    }

    #[test]
    fn lenient_and_strict_modes() {
        let text = [
            r#"{"id":"1","timestamp":"2017-01-03T00:00:00Z","text":"one"}"#,
            r#"{"id":"2","timestamp":"2017-01-04T00:00:00Z","text":"two"}"#,
            r#"{"id":"3","timestamp":"not a date","text":"three"}"#,
            r#"{"id":4,"timestamp":"2017-01-05","text":"four"}"#,
            r#"{"id":"5","timestamp":"2017-01-05T00:00:00Z","text":"   "}"#,
            r#"{"id":"6","timestamp":"2019-01-05T00:00:00Z","text":"late"}"#,
        ]
        .join("\n");
        let load = parse_documents(text.as_bytes(), Source::News, cal(4), false).unwrap();
        assert_eq!(load.documents.len(), 3);
        assert_eq!(load.malformed, 1);
        assert_eq!(load.empty_text, 1);
        assert_eq!(load.out_of_range, 1);
        assert_eq!(load.documents[2].id, "4");

        let err = parse_documents(text.as_bytes(), Source::News, cal(4), true).unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 3, .. }));
    }

    #[test]
    fn entity_list_parsing() {
        let e = EntityList::parse("# cities\nFresno\n  los angeles \nfresno\n\nDallas # tx\n").unwrap();
        assert_eq!(e.iter().collect::<Vec<_>>(), vec!["dallas", "fresno", "los angeles"]);
        assert!(matches!(EntityList::parse("# nothing\n\n"), Err(IngestError::NoEntities)));
    }

    fn doc(text: &str) -> Document {
        Document {
            id: text.to_string(),
            timestep: 0,
            text: text.to_string(),
            source: Source::Social,
        }
    }

    #[test]
    fn geofilter_token_boundaries() {
        let e = EntityList::new(["fresno", "los angeles", "dallas"]).unwrap();
        let docs = vec![
            doc("Drought hits Fresno farms"),
            doc("refresno"),
            doc("Water cuts in Los Angeles."),
            doc("dallastown reservoir"),
            doc("(Dallas) lake levels"),
        ];
        let kept = geofilter(&docs, &e);
        let ids: Vec<_> = kept.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(
            ids,
            vec!["Drought hits Fresno farms", "Water cuts in Los Angeles.", "(Dallas) lake levels"]
        );
        let none = EntityList::new(["sacramento"]).unwrap();
        assert!(geofilter(&docs, &none).is_empty());
    }

    proptest! {
        #[test]
        fn geofilter_idempotent(texts in prop::collection::vec("[a-z ]{0,30}", 0..20)) {
            let e = EntityList::new(["ab", "cd e"]).unwrap();
            let docs: Vec<Document> = texts.iter().map(|t| doc(t)).collect();
            let once = geofilter(&docs, &e);
            let twice = geofilter(&once, &e);
            prop_assert_eq!(once, twice);
        }
    }
}
