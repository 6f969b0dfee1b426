use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// Token <-> dense index mapping, in order of first appearance.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut v = Vocab::new();
        for t in tokens {
            if v.index.contains_key(&t) {
                return Err(Error::input(format!("duplicate vocabulary token {t:?}")));
            }
            v.intern(&t);
        }
        Ok(v)
    }

    pub fn intern(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One parsed input line with user/item mapped to dense indices.
#[derive(Clone, Debug, PartialEq)]
pub struct RawInteraction {
    pub user: usize,
    pub item: usize,
    /// `None` for the unrated marker (empty field or `-`).
    pub rating: Option<f64>,
    pub timestamp: Option<i64>,
    /// 1-based source line number; doubles as the tie-break key.
    pub line: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InputFormat {
    /// `user \t item \t rating \t timestamp`, timestamp column optional.
    #[default]
    Tsv,
    /// MovieLens `user::item::rating::timestamp`.
    DoubleColon,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(InputFormat::Tsv),
            "dat" | "movielens" => Ok(InputFormat::DoubleColon),
            other => Err(Error::config(format!("unknown input format {other:?}"))),
        }
    }
}

/// Ingested records plus vocabularies and diagnostics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<RawInteraction>,
    pub users: Vocab,
    pub items: Vocab,
    /// Skipped lines as `(line number, reason)`.
    pub malformed: Vec<(usize, String)>,
    /// Records dropped by the keep-latest dedup rule.
    pub duplicates_removed: usize,
}

impl Dataset {
    pub fn has_timestamps(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.timestamp.is_some())
    }
}

pub fn ingest(path: &Path, format: InputFormat) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ds = parse(&text, format)?;
    if ds.records.is_empty() {
        warn!("{} contains no interactions", path.display());
    }
    Ok(ds)
}

fn split_fields(line: &str, format: InputFormat) -> Vec<&str> {
    match format {
        InputFormat::Tsv => line.split('\t').map(str::trim).collect(),
        InputFormat::DoubleColon => line.split("::").map(str::trim).collect(),
    }
}

fn looks_like_header(fields: &[&str]) -> bool {
    fields
        .first()
        .is_some_and(|f| f.to_ascii_lowercase().starts_with("user"))
}

struct ParsedLine<'a> {
    user: &'a str,
    item: &'a str,
    rating: Option<f64>,
    timestamp: Option<i64>,
}

fn parse_line<'a>(fields: &[&'a str]) -> std::result::Result<ParsedLine<'a>, String> {
    if !(3..=4).contains(&fields.len()) {
        return Err(format!("expected 3 or 4 fields, found {}", fields.len()));
    }
    let (user, item) = (fields[0], fields[1]);
    if user.is_empty() || item.is_empty() {
        return Err("empty user or item token".into());
    }
    let rating = match fields[2] {
        "" | "-" => None,
        r => {
            let v: f64 = r.parse().map_err(|_| format!("unparseable rating {r:?}"))?;
            if !(0.5..=5.0).contains(&v) {
                return Err(format!("rating {v} outside [0.5, 5]"));
            }
            Some(v)
        }
    };
    let timestamp = match fields.get(3) {
        None | Some(&"") => None,
        Some(ts) => Some(
            ts.parse::<i64>()
                .or_else(|_| ts.parse::<f64>().map(|f| f as i64))
                .map_err(|_| format!("unparseable timestamp {ts:?}"))?,
        ),
    };
    Ok(ParsedLine {
        user,
        item,
        rating,
        timestamp,
    })
}

/// Parses file contents. Malformed lines are skipped and reported; only an
/// unusable header line is fatal. Duplicate `(user, item)` pairs keep the
/// record with the latest timestamp (ties: later line).
pub fn parse(text: &str, format: InputFormat) -> Result<Dataset> {
    let mut ds = Dataset::default();
    let mut seen_content = false;
    let mut latest: HashMap<(usize, usize), usize> = HashMap::new();
    let mut records: Vec<Option<RawInteraction>> = Vec::new();

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(line, format);
        let first = !seen_content;
        seen_content = true;
        let parsed = match parse_line(&fields) {
            Ok(p) => p,
            Err(reason) if first && looks_like_header(&fields) => {
                if !(3..=4).contains(&fields.len()) {
                    return Err(Error::input(format!(
                        "malformed header on line {lineno}: expected 3 or 4 columns, found {}",
                        fields.len()
                    )));
                }
                let _ = reason;
                continue;
            }
            Err(reason) => {
                warn!("line {lineno}: {reason}");
                ds.malformed.push((lineno, reason));
                continue;
            }
        };
        let user = ds.users.intern(parsed.user);
        let item = ds.items.intern(parsed.item);
        let rec = RawInteraction {
            user,
            item,
            rating: parsed.rating,
            timestamp: parsed.timestamp,
            line: lineno,
        };
        match latest.get(&(user, item)) {
            Some(&prev) => {
                ds.duplicates_removed += 1;
                let old = records[prev].as_ref().expect("live record");
                if rec.timestamp >= old.timestamp {
                    warn!("line {lineno}: duplicate ({}, {}) supersedes line {}", parsed.user, parsed.item, old.line);
                    records[prev] = None;
                    latest.insert((user, item), records.len());
                    records.push(Some(rec));
                } else {
                    warn!("line {lineno}: duplicate ({}, {}) older than line {}, dropped", parsed.user, parsed.item, old.line);
                }
            }
            None => {
                latest.insert((user, item), records.len());
                records.push(Some(rec));
            }
        }
    }
    ds.records = records.into_iter().flatten().collect();
    Ok(ds)
}
