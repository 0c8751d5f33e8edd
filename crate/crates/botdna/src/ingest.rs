//! Corpus ingestion: parsing, validation, filtering, balancing, and
//! splitting of labeled account timelines stored as line-delimited JSON.
//!
//! One account per line:
//!
//! ```text
//! {"user_id": str, "description": str, "label": 0|1|null,
//!  "split": "train"|"val"|"test"|null, "tweets": [...]}
//! ```
//!
//! Unknown keys are ignored with a warning. Timestamps must be integer
//! UNIX seconds; anything else is rejected rather than guessed, because
//! chronological order drives the downstream sequence encoding.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON at line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("unknown kind '{kind}' at line {line}")]
    UnknownKind { kind: String, line: usize },
    #[error("missing required field '{field}' at line {line}")]
    MissingField { field: &'static str, line: usize },
    #[error("invalid value for field '{field}' at line {line}: {reason}")]
    InvalidField {
        field: &'static str,
        line: usize,
        reason: String,
    },
    #[error("record '{user_id}' carries no label")]
    MissingLabel { user_id: String },
    #[error("record '{user_id}' carries no split assignment")]
    MissingSplit { user_id: String },
    #[error("fractions sum ≠ 1 (got {sum})")]
    BadFractions { sum: f64 },
    #[error("class {label} has {count} records, fewer than the {splits} requested splits")]
    TooFewPerClass {
        label: Label,
        count: usize,
        splits: usize,
    },
    #[error("duplicate user_id '{0}' across splits")]
    DuplicateUser(String),
}

/// Tweet kind symbol source for the type alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TweetKind {
    Original,
    Retweet,
    Reply,
}

/// Class label with bots as the positive class (1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Human = 0,
    Bot = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Human),
            1 => Some(Label::Bot),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_u8(v).ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One timeline entry. Entity counts come from the input file; see
/// [`scan_entities`] for the text-scanning fallback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Tweet {
    pub id: String,
    pub created_at: i64,
    pub kind: TweetKind,
    pub n_urls: u32,
    pub n_hashtags: u32,
    pub n_mentions: u32,
    pub text: String,
}

/// One account: profile description, optional label/split, and timeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserRecord {
    pub user_id: String,
    pub description: String,
    pub label: Option<Label>,
    pub split: Option<SplitName>,
    pub tweets: Vec<Tweet>,
}

impl UserRecord {
    /// True when the record survives the eligibility filter: a
    /// non-empty description after Unicode-whitespace trim and at
    /// least one tweet.
    pub fn is_eligible(&self) -> bool {
        !self.description.trim().is_empty() && !self.tweets.is_empty()
    }
}

/// A named corpus partitioned into splits, with per-split class tallies.
#[derive(Debug, Clone, Serialize)]
pub struct Corpus {
    pub name: String,
    pub splits: BTreeMap<SplitName, Vec<UserRecord>>,
    pub class_counts: BTreeMap<SplitName, BTreeMap<Label, usize>>,
}

impl Corpus {
    /// Builds a corpus from explicit splits, rejecting user ids that
    /// appear in more than one split and tallying class counts.
    pub fn new(
        name: impl Into<String>,
        splits: BTreeMap<SplitName, Vec<UserRecord>>,
    ) -> Result<Corpus, IngestError> {
        let mut seen = std::collections::HashSet::new();
        let mut class_counts = BTreeMap::new();
        for (split, records) in &splits {
            let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
            for r in records {
                if !seen.insert(r.user_id.clone()) {
                    return Err(IngestError::DuplicateUser(r.user_id.clone()));
                }
                if let Some(label) = r.label {
                    *counts.entry(label).or_insert(0) += 1;
                }
            }
            class_counts.insert(*split, counts);
        }
        Ok(Corpus {
            name: name.into(),
            splits,
            class_counts,
        })
    }

    /// Groups records by their explicit `split` field (TwiBot-20 style
    /// pre-split corpora). Records without a split are rejected.
    pub fn from_presplit(
        name: impl Into<String>,
        records: Vec<UserRecord>,
    ) -> Result<Corpus, IngestError> {
        let mut splits: BTreeMap<SplitName, Vec<UserRecord>> = BTreeMap::new();
        for split in SplitName::ALL {
            splits.insert(split, Vec::new());
        }
        for r in records {
            let split = r.split.ok_or_else(|| IngestError::MissingSplit {
                user_id: r.user_id.clone(),
            })?;
            splits.get_mut(&split).expect("all splits present").push(r);
        }
        Corpus::new(name, splits)
    }

    pub fn records(&self, split: SplitName) -> &[UserRecord] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all_records(&self) -> impl Iterator<Item = &UserRecord> {
        SplitName::ALL
            .into_iter()
            .flat_map(move |s| self.records(s).iter())
    }

    pub fn len(&self) -> usize {
        self.splits.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Canonical serialization: train, then val, then test, one record
    /// per line with the split field filled in.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), IngestError> {
        for split in SplitName::ALL {
            for record in self.records(split) {
                let mut record = record.clone();
                record.split = Some(split);
                serde_json::to_writer(&mut w, &record)
                    .map_err(|e| IngestError::Io(std::io::Error::other(e)))?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

/// A non-fatal observation made while parsing (unknown keys and the like).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// When set, tweets lacking entity-count fields get them populated
    /// from the tweet text via [`scan_entities`] instead of erroring.
    pub scan_missing_entity_counts: bool,
}

const USER_KEYS: [&str; 5] = ["user_id", "description", "label", "split", "tweets"];
const TWEET_KEYS: [&str; 7] = [
    "id",
    "created_at",
    "kind",
    "n_urls",
    "n_hashtags",
    "n_mentions",
    "text",
];

/// Parses a JSONL corpus file, one [`UserRecord`] per valid line in
/// file order. Warnings are written to stderr; use
/// [`parse_jsonl_reader`] to capture them instead.
pub fn parse_jsonl(path: impl AsRef<Path>) -> Result<Vec<UserRecord>, IngestError> {
    let file = File::open(path.as_ref())?;
    let (records, warnings) = parse_jsonl_reader(BufReader::new(file), ParseOptions::default())?;
    for w in &warnings {
        eprintln!("warning: {}: {}", path.as_ref().display(), w);
    }
    Ok(records)
}

/// Reader-based parse that returns warnings alongside the records.
pub fn parse_jsonl_reader<R: Read>(
    reader: R,
    opts: ParseOptions,
) -> Result<(Vec<UserRecord>, Vec<ParseWarning>), IngestError> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(&line).map_err(|e| IngestError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        records.push(parse_record(&value, line_no, opts, &mut warnings)?);
    }
    Ok((records, warnings))
}

fn parse_record(
    value: &Value,
    line: usize,
    opts: ParseOptions,
    warnings: &mut Vec<ParseWarning>,
) -> Result<UserRecord, IngestError> {
    let obj = value.as_object().ok_or_else(|| IngestError::MalformedLine {
        line,
        message: "expected a JSON object".into(),
    })?;
    for key in obj.keys() {
        if !USER_KEYS.contains(&key.as_str()) {
            warnings.push(ParseWarning {
                line,
                message: format!("ignoring unknown key '{key}'"),
            });
        }
    }

    let user_id = require_str(obj, "user_id", line)?.to_string();
    let description = require_str(obj, "description", line)?.to_string();

    let label = match obj.get("label") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let n = v.as_u64().and_then(|n| u8::try_from(n).ok());
            match n.and_then(Label::from_u8) {
                Some(l) => Some(l),
                None => {
                    return Err(IngestError::InvalidField {
                        field: "label",
                        line,
                        reason: format!("expected 0, 1, or null, got {v}"),
                    })
                }
            }
        }
    };

    let split = match obj.get("split") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => match s.as_str() {
            "train" => Some(SplitName::Train),
            "val" => Some(SplitName::Val),
            "test" => Some(SplitName::Test),
            other => {
                return Err(IngestError::InvalidField {
                    field: "split",
                    line,
                    reason: format!("expected train/val/test or null, got '{other}'"),
                })
            }
        },
        Some(v) => {
            return Err(IngestError::InvalidField {
                field: "split",
                line,
                reason: format!("expected a string or null, got {v}"),
            })
        }
    };

    let tweets_val = obj
        .get("tweets")
        .ok_or(IngestError::MissingField {
            field: "tweets",
            line,
        })?
        .as_array()
        .ok_or_else(|| IngestError::InvalidField {
            field: "tweets",
            line,
            reason: "expected an array".into(),
        })?;

    let mut tweets = Vec::with_capacity(tweets_val.len());
    for t in tweets_val {
        tweets.push(parse_tweet(t, line, opts, warnings)?);
    }

    Ok(UserRecord {
        user_id,
        description,
        label,
        split,
        tweets,
    })
}

fn parse_tweet(
    value: &Value,
    line: usize,
    opts: ParseOptions,
    warnings: &mut Vec<ParseWarning>,
) -> Result<Tweet, IngestError> {
    let obj = value.as_object().ok_or_else(|| IngestError::InvalidField {
        field: "tweets",
        line,
        reason: "expected tweet objects".into(),
    })?;
    for key in obj.keys() {
        if !TWEET_KEYS.contains(&key.as_str()) {
            warnings.push(ParseWarning {
                line,
                message: format!("ignoring unknown tweet key '{key}'"),
            });
        }
    }

    let id = require_str(obj, "id", line)?.to_string();
    let text = require_str(obj, "text", line)?.to_string();

    let created_at = match obj.get("created_at") {
        None | Some(Value::Null) => {
            return Err(IngestError::MissingField {
                field: "created_at",
                line,
            })
        }
        Some(v) => v.as_i64().ok_or_else(|| IngestError::InvalidField {
            field: "created_at",
            line,
            reason: format!("expected integer UNIX seconds, got {v}"),
        })?,
    };

    let kind_str = require_str(obj, "kind", line)?;
    let kind = match kind_str {
        "original" => TweetKind::Original,
        "retweet" => TweetKind::Retweet,
        "reply" => TweetKind::Reply,
        other => {
            return Err(IngestError::UnknownKind {
                kind: other.to_string(),
                line,
            })
        }
    };

    let scanned = if opts.scan_missing_entity_counts {
        Some(scan_entities(&text))
    } else {
        None
    };
    let n_urls = parse_count(obj, "n_urls", line, scanned.map(|s| s.0))?;
    let n_hashtags = parse_count(obj, "n_hashtags", line, scanned.map(|s| s.1))?;
    let n_mentions = parse_count(obj, "n_mentions", line, scanned.map(|s| s.2))?;

    Ok(Tweet {
        id,
        created_at,
        kind,
        n_urls,
        n_hashtags,
        n_mentions,
        text,
    })
}

fn require_str<'a>(
    obj: &'a serde_json::Map<String, Value>,
    field: &'static str,
    line: usize,
) -> Result<&'a str, IngestError> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(IngestError::MissingField { field, line }),
        Some(Value::String(s)) => Ok(s),
        Some(v) => Err(IngestError::InvalidField {
            field,
            line,
            reason: format!("expected a string, got {v}"),
        }),
    }
}

fn parse_count(
    obj: &serde_json::Map<String, Value>,
    field: &'static str,
    line: usize,
    fallback: Option<u32>,
) -> Result<u32, IngestError> {
    match obj.get(field) {
        None | Some(Value::Null) => fallback.ok_or(IngestError::MissingField { field, line }),
        Some(v) => v
            .as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .ok_or_else(|| IngestError::InvalidField {
                field,
                line,
                reason: format!("expected a non-negative integer, got {v}"),
            }),
    }
}

/// Counts URL, hashtag, and mention tokens in tweet text without
/// regexes: whitespace-separated tokens starting with `http://` or
/// `https://`, `#` followed by a word character, or `@` followed by a
/// word character.
pub fn scan_entities(text: &str) -> (u32, u32, u32) {
    let mut urls = 0;
    let mut hashtags = 0;
    let mut mentions = 0;
    for token in text.split_whitespace() {
        if token.starts_with("http://") || token.starts_with("https://") {
            urls += 1;
        } else if let Some(rest) = token.strip_prefix('#') {
            if rest.chars().next().is_some_and(|c| c.is_alphanumeric() || c == '_') {
                hashtags += 1;
            }
        } else if let Some(rest) = token.strip_prefix('@') {
            if rest.chars().next().is_some_and(|c| c.is_alphanumeric() || c == '_') {
                mentions += 1;
            }
        }
    }
    (urls, hashtags, mentions)
}

/// Orders tweets ascending by `created_at`, breaking ties by ascending
/// tweet id; stable for fully equal keys.
pub fn sort_chronological(mut record: UserRecord) -> UserRecord {
    record
        .tweets
        .sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
    record
}

/// Keeps exactly the records with a non-empty trimmed description and a
/// non-empty timeline, preserving order. Idempotent.
pub fn filter_eligible(records: Vec<UserRecord>) -> Vec<UserRecord> {
    records.into_iter().filter(UserRecord::is_eligible).collect()
}

/// Downsamples the majority class to the minority count with a seeded
/// uniform draw, then shuffles the combined result deterministically.
pub fn balance_downsample(
    records: Vec<UserRecord>,
    seed: u64,
) -> Result<Vec<UserRecord>, IngestError> {
    let mut by_class: BTreeMap<Label, Vec<UserRecord>> = BTreeMap::new();
    for r in records {
        let label = r.label.ok_or_else(|| IngestError::MissingLabel {
            user_id: r.user_id.clone(),
        })?;
        by_class.entry(label).or_default().push(r);
    }
    let target = by_class.values().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut combined = Vec::new();
    for (_, mut class_records) in by_class {
        if class_records.len() > target {
            class_records.shuffle(&mut rng);
            class_records.truncate(target);
        }
        combined.extend(class_records);
    }
    combined.shuffle(&mut rng);
    Ok(combined)
}

/// Stratified train/val/test split by label, deterministic under the
/// seed. Per-class counts use the largest-remainder rule so every
/// split's class ratio stays within one account of the global ratio.
pub fn split_corpus(
    records: Vec<UserRecord>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Corpus, IngestError> {
    let fracs = [fractions.0, fractions.1, fractions.2];
    let sum: f64 = fracs.iter().sum();
    if fracs.iter().any(|&f| f <= 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(IngestError::BadFractions { sum });
    }

    let mut by_class: BTreeMap<Label, Vec<UserRecord>> = BTreeMap::new();
    for r in records {
        let label = r.label.ok_or_else(|| IngestError::MissingLabel {
            user_id: r.user_id.clone(),
        })?;
        by_class.entry(label).or_default().push(r);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits: BTreeMap<SplitName, Vec<UserRecord>> = BTreeMap::new();
    for split in SplitName::ALL {
        splits.insert(split, Vec::new());
    }

    for (label, mut class_records) in by_class {
        let n = class_records.len();
        if n < SplitName::ALL.len() {
            return Err(IngestError::TooFewPerClass {
                label,
                count: n,
                splits: SplitName::ALL.len(),
            });
        }
        class_records.shuffle(&mut rng);
        let counts = largest_remainder(n, &fracs);
        let mut offset = 0;
        for (split, count) in SplitName::ALL.into_iter().zip(counts) {
            splits
                .get_mut(&split)
                .expect("all splits present")
                .extend(class_records[offset..offset + count].iter().cloned());
            offset += count;
        }
    }

    for split in SplitName::ALL {
        let records = splits.get_mut(&split).expect("all splits present");
        records.shuffle(&mut rng);
        for r in records.iter_mut() {
            r.split = Some(split);
        }
    }

    Corpus::new("corpus", splits)
}

/// Integer apportionment of `n` items over `fracs`: floor the targets,
/// then hand the remainder to the largest fractional parts.
fn largest_remainder(n: usize, fracs: &[f64]) -> Vec<usize> {
    let targets: Vec<f64> = fracs.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fracs.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..(n - assigned) {
        counts[order[i % fracs.len()]] += 1;
    }
    counts
}
