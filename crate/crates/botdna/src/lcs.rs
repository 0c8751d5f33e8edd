//! Unsupervised group detection via longest-common-substring curves.
//!
//! For a set of accounts' DNA strings, `lcs_len(k)` is the longest
//! substring shared by the best choice of k accounts. Coordinated bot
//! groups produce long plateaus that collapse once k exceeds the group
//! size; the steepest consecutive drop marks the boundary.
//!
//! All k values are computed from one generalized suffix array with a
//! document-coverage sliding window, never by subset enumeration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LcsError {
    #[error("need at least {needed} strings, got {got}")]
    TooFewStrings { needed: usize, got: usize },
    #[error("curve needs at least 2 points, got {0}")]
    CurveTooShort(usize),
    #[error("curve is not contiguous or not non-increasing at k={0}")]
    MalformedCurve(usize),
}

/// Longest contiguous substring common to `a` and `b`, by the classic
/// dynamic-programming table over suffix-match lengths. Kept separate
/// from the suffix-array route so the two can check each other.
pub fn lcs_pair(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            cur[j] = if a[i - 1] == b[j - 1] {
                prev[j - 1] + 1
            } else {
                0
            };
            best = best.max(cur[j]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Generalized suffix array over several documents, with Kasai LCP and
/// a per-suffix document id (separators carry none).
struct SuffixIndex {
    sa: Vec<usize>,
    lcp: Vec<usize>,
    doc: Vec<Option<usize>>,
    n_docs: usize,
}

impl SuffixIndex {
    fn build(strings: &[&str]) -> SuffixIndex {
        let n_docs = strings.len();
        let mut text: Vec<u32> = Vec::new();
        let mut doc_of_pos: Vec<Option<usize>> = Vec::new();
        for (d, s) in strings.iter().enumerate() {
            for c in s.chars() {
                text.push(n_docs as u32 + c as u32);
                doc_of_pos.push(Some(d));
            }
            // unique separator strictly below every character value
            text.push(d as u32);
            doc_of_pos.push(None);
        }
        let sa = suffix_array(&text);
        let lcp = lcp_array(&text, &sa);
        let doc = sa.iter().map(|&p| doc_of_pos[p]).collect();
        SuffixIndex {
            sa,
            lcp,
            doc,
            n_docs,
        }
    }

    /// Maximum over suffix-array windows covering at least `k` distinct
    /// documents of the window's minimum LCP, plus the documents of one
    /// maximizing window.
    fn best_for_coverage(&self, k: usize) -> (usize, Vec<usize>) {
        let n = self.sa.len();
        let mut counts = vec![0usize; self.n_docs];
        let mut distinct = 0usize;
        let mut best = 0usize;
        let mut best_docs: Vec<usize> = Vec::new();
        // monotonic deque of (sa index, lcp) over lcp[l+1..=r]
        let mut deque: std::collections::VecDeque<(usize, usize)> = std::collections::VecDeque::new();
        let mut l = 0usize;
        for r in 0..n {
            if r > 0 {
                while deque.back().is_some_and(|&(_, v)| v >= self.lcp[r]) {
                    deque.pop_back();
                }
                deque.push_back((r, self.lcp[r]));
            }
            if let Some(d) = self.doc[r] {
                if counts[d] == 0 {
                    distinct += 1;
                }
                counts[d] += 1;
            }
            while distinct >= k && l < r {
                while deque.front().is_some_and(|&(i, _)| i <= l) {
                    deque.pop_front();
                }
                if let Some(&(_, min_lcp)) = deque.front() {
                    if min_lcp > best {
                        best = min_lcp;
                        best_docs = counts
                            .iter()
                            .enumerate()
                            .filter(|&(_, &c)| c > 0)
                            .map(|(d, _)| d)
                            .collect();
                    }
                }
                if let Some(d) = self.doc[l] {
                    counts[d] -= 1;
                    if counts[d] == 0 {
                        distinct -= 1;
                    }
                }
                l += 1;
            }
        }
        (best, best_docs)
    }
}

/// Suffix array by rank doubling, O(n log² n).
fn suffix_array(text: &[u32]) -> Vec<usize> {
    let n = text.len();
    let mut sa: Vec<usize> = (0..n).collect();
    let mut rank: Vec<i64> = text.iter().map(|&c| c as i64).collect();
    let mut tmp: Vec<i64> = vec![0; n];
    let mut k = 1;
    loop {
        let key = |i: usize| -> (i64, i64) {
            let second = if i + k < n { rank[i + k] } else { -1 };
            (rank[i], second)
        };
        sa.sort_unstable_by(|&a, &b| key(a).cmp(&key(b)));
        tmp[sa[0]] = 0;
        for w in 1..n {
            tmp[sa[w]] = tmp[sa[w - 1]] + i64::from(key(sa[w - 1]) < key(sa[w]));
        }
        std::mem::swap(&mut rank, &mut tmp);
        if rank[sa[n - 1]] as usize == n - 1 {
            break;
        }
        k *= 2;
    }
    sa
}

/// Kasai's algorithm; `lcp[i]` is the common-prefix length of
/// `sa[i-1]` and `sa[i]`, with `lcp[0] = 0`.
fn lcp_array(text: &[u32], sa: &[usize]) -> Vec<usize> {
    let n = text.len();
    let mut inv = vec![0usize; n];
    for (i, &p) in sa.iter().enumerate() {
        inv[p] = i;
    }
    let mut lcp = vec![0usize; n];
    let mut h = 0usize;
    for i in 0..n {
        if inv[i] > 0 {
            let j = sa[inv[i] - 1];
            while i + h < n && j + h < n && text[i + h] == text[j + h] {
                h += 1;
            }
            lcp[inv[i]] = h;
            h = h.saturating_sub(1);
        } else {
            h = 0;
        }
    }
    lcp
}

/// Longest substring common to every input string.
pub fn lcs_among<S: AsRef<str>>(strings: &[S]) -> Result<usize, LcsError> {
    if strings.len() < 2 {
        return Err(LcsError::TooFewStrings {
            needed: 2,
            got: strings.len(),
        });
    }
    let refs: Vec<&str> = strings.iter().map(AsRef::as_ref).collect();
    let index = SuffixIndex::build(&refs);
    Ok(index.best_for_coverage(refs.len()).0)
}

/// One curve point: the best k accounts and the substring length they
/// share.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub lcs_len: usize,
    /// A size-k account set attaining `lcs_len`, sorted by user id.
    pub accounts: Vec<String>,
}

/// LCS length against group size, k = 2..n contiguously, non-increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LcsCurve {
    pub points: Vec<CurvePoint>,
}

impl LcsCurve {
    /// Validates contiguity from k=2, monotone non-increase, and that
    /// every point records exactly k accounts.
    pub fn new(points: Vec<CurvePoint>) -> Result<LcsCurve, LcsError> {
        for (i, p) in points.iter().enumerate() {
            if p.k != i + 2 || p.accounts.len() != p.k {
                return Err(LcsError::MalformedCurve(p.k));
            }
            if i > 0 && points[i - 1].lcs_len < p.lcs_len {
                return Err(LcsError::MalformedCurve(p.k));
            }
        }
        Ok(LcsCurve { points })
    }

    pub fn lcs_len(&self, k: usize) -> Option<usize> {
        self.points.iter().find(|p| p.k == k).map(|p| p.lcs_len)
    }
}

/// Computes the full curve: for each k in 2..=n, the maximum over all
/// size-k subsets of their common-substring length, via the suffix
/// array's document-coverage window.
pub fn lcs_curve(sequences: &BTreeMap<String, String>) -> Result<LcsCurve, LcsError> {
    let n = sequences.len();
    if n < 2 {
        return Err(LcsError::TooFewStrings { needed: 2, got: n });
    }
    let ids: Vec<&String> = sequences.keys().collect();
    let strings: Vec<&str> = sequences.values().map(String::as_str).collect();
    let index = SuffixIndex::build(&strings);

    let mut points = Vec::with_capacity(n - 1);
    for k in 2..=n {
        let (len, docs) = index.best_for_coverage(k);
        let mut accounts: Vec<String> = if len > 0 {
            docs.iter().map(|&d| ids[d].clone()).collect()
        } else {
            // every subset shares the empty substring; record the first
            // k ids for definiteness
            ids.iter().take(k).map(|s| (*s).clone()).collect()
        };
        accounts.sort();
        accounts.truncate(k);
        points.push(CurvePoint {
            k,
            lcs_len: len,
            accounts,
        });
    }
    LcsCurve::new(points)
}

/// The extracted group: the accounts at the steepest consecutive drop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupVerdict {
    pub bot_group: Vec<String>,
    pub split_k: usize,
    pub drop_magnitude: usize,
}

/// Finds the largest drop `lcs_len(k) − lcs_len(k+1)`, ties broken
/// toward smaller k. A flat curve yields an empty group.
pub fn detect_group(curve: &LcsCurve) -> Result<GroupVerdict, LcsError> {
    if curve.points.len() < 2 {
        return Err(LcsError::CurveTooShort(curve.points.len()));
    }
    let mut best_drop = 0usize;
    let mut best_idx: Option<usize> = None;
    for i in 0..curve.points.len() - 1 {
        let drop = curve.points[i].lcs_len - curve.points[i + 1].lcs_len;
        if drop > best_drop {
            best_drop = drop;
            best_idx = Some(i);
        }
    }
    Ok(match best_idx {
        None => GroupVerdict {
            bot_group: Vec::new(),
            split_k: 0,
            drop_magnitude: 0,
        },
        Some(i) => GroupVerdict {
            bot_group: curve.points[i].accounts.clone(),
            split_k: curve.points[i].k,
            drop_magnitude: best_drop,
        },
    })
}
