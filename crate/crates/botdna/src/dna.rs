//! Digital-DNA encoding: one symbol per tweet, in chronological order,
//! under either the tweet-type alphabet (A/C/T) or the tweet-content
//! alphabet (N/U/H/M/X).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Corpus, Tweet, TweetKind, UserRecord};

#[derive(Debug, Error)]
pub enum DnaError {
    #[error("record '{user_id}' has an empty timeline")]
    EmptyTimeline { user_id: String },
    #[error("no eligible users")]
    EmptyCorpus,
}

/// The two symbol sets. Symbol order is fixed; it defines palette
/// assignment downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Alphabet {
    /// Tweet type: A = original tweet, C = reply, T = retweet.
    Type3,
    /// Tweet content: N = no entities, U = URLs, H = hashtags,
    /// M = mentions, X = mixed entity categories.
    Content5,
}

impl Alphabet {
    pub fn symbols(self) -> &'static [char] {
        match self {
            Alphabet::Type3 => &['A', 'C', 'T'],
            Alphabet::Content5 => &['N', 'U', 'H', 'M', 'X'],
        }
    }

    pub fn contains(self, c: char) -> bool {
        self.symbols().contains(&c)
    }

    pub fn name(self) -> &'static str {
        match self {
            Alphabet::Type3 => "Type3",
            Alphabet::Content5 => "Content5",
        }
    }

    pub fn parse(name: &str) -> Option<Alphabet> {
        match name {
            "Type3" | "type3" => Some(Alphabet::Type3),
            "Content5" | "content5" => Some(Alphabet::Content5),
            _ => None,
        }
    }
}

impl std::fmt::Display for Alphabet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A per-account DNA string; every character belongs to `alphabet` and
/// the length equals the number of encoded tweets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnaSequence {
    pub user_id: String,
    pub alphabet: Alphabet,
    pub seq: String,
}

/// Type-alphabet symbol for one tweet: retweet → T, reply → C,
/// original → A.
pub fn symbol_of_type(tweet: &Tweet) -> char {
    match tweet.kind {
        TweetKind::Original => 'A',
        TweetKind::Reply => 'C',
        TweetKind::Retweet => 'T',
    }
}

/// Content-alphabet symbol for one tweet, by the entity categories
/// present: none → N, one category → U/H/M, two or more distinct
/// categories → X. Multiple entities of a single category stay in that
/// category (three hashtags alone is still H).
pub fn symbol_of_content(tweet: &Tweet) -> char {
    let has_urls = tweet.n_urls > 0;
    let has_hashtags = tweet.n_hashtags > 0;
    let has_mentions = tweet.n_mentions > 0;
    match (has_urls, has_hashtags, has_mentions) {
        (false, false, false) => 'N',
        (true, false, false) => 'U',
        (false, true, false) => 'H',
        (false, false, true) => 'M',
        _ => 'X',
    }
}

fn symbol(tweet: &Tweet, alphabet: Alphabet) -> char {
    match alphabet {
        Alphabet::Type3 => symbol_of_type(tweet),
        Alphabet::Content5 => symbol_of_content(tweet),
    }
}

/// Encodes one record: `seq[i]` is the symbol of the i-th oldest tweet.
/// Ordering (timestamp, then id) is applied here regardless of storage
/// order, so the result depends only on the timeline's chronology.
pub fn encode(record: &UserRecord, alphabet: Alphabet) -> Result<DnaSequence, DnaError> {
    if record.tweets.is_empty() {
        return Err(DnaError::EmptyTimeline {
            user_id: record.user_id.clone(),
        });
    }
    let mut order: Vec<usize> = (0..record.tweets.len()).collect();
    order.sort_by(|&a, &b| {
        let ta = &record.tweets[a];
        let tb = &record.tweets[b];
        (ta.created_at, &ta.id).cmp(&(tb.created_at, &tb.id))
    });
    let seq: String = order
        .into_iter()
        .map(|i| symbol(&record.tweets[i], alphabet))
        .collect();
    Ok(DnaSequence {
        user_id: record.user_id.clone(),
        alphabet,
        seq,
    })
}

/// Sequences for every user in the corpus plus the corpus-wide maximum
/// length, so all splits later share one image canvas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodedCorpus {
    pub alphabet: Alphabet,
    pub sequences: BTreeMap<String, DnaSequence>,
    pub max_len: usize,
}

/// Encodes all records of all splits. `max_len` spans the whole corpus.
pub fn encode_corpus(corpus: &Corpus, alphabet: Alphabet) -> Result<EncodedCorpus, DnaError> {
    use rayon::prelude::*;
    let records: Vec<&UserRecord> = corpus.all_records().collect();
    if records.is_empty() {
        return Err(DnaError::EmptyCorpus);
    }
    let encoded: Vec<DnaSequence> = records
        .par_iter()
        .map(|r| encode(r, alphabet))
        .collect::<Result<_, _>>()?;
    let max_len = encoded.iter().map(|s| s.seq.len()).max().unwrap_or(0);
    let sequences = encoded
        .into_iter()
        .map(|s| (s.user_id.clone(), s))
        .collect();
    Ok(EncodedCorpus {
        alphabet,
        sequences,
        max_len,
    })
}
