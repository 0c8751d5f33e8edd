//! Deterministic synthetic corpora for tests, demos, and the
//! acceptance suite. Every generator is a pure function of its seed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ingest::{Corpus, Label, SplitName, Tweet, TweetKind, UserRecord};

const SPAM_VOCAB: [&str; 10] = [
    "free", "followers", "instant", "promo", "click", "link", "boost", "crypto", "giveaway",
    "deal",
];
const BENIGN_VOCAB: [&str; 10] = [
    "coffee",
    "lover",
    "engineer",
    "music",
    "travel",
    "books",
    "football",
    "photography",
    "garden",
    "painter",
];

fn tweet(user: &str, idx: usize, kind: TweetKind, rng: &mut ChaCha8Rng) -> Tweet {
    let n_urls = u32::from(rng.gen_bool(0.2));
    let n_hashtags = if rng.gen_bool(0.25) { rng.gen_range(1..3) } else { 0 };
    let n_mentions = u32::from(rng.gen_bool(0.3));
    Tweet {
        id: format!("{user}-t{idx:04}"),
        created_at: 1_600_000_000 + idx as i64 * 60,
        kind,
        n_urls,
        n_hashtags,
        n_mentions,
        text: format!("post {idx}"),
    }
}

fn timeline(
    user: &str,
    n: usize,
    weights: [f64; 3], // original, retweet, reply
    rng: &mut ChaCha8Rng,
) -> Vec<Tweet> {
    (0..n)
        .map(|idx| {
            let roll: f64 = rng.gen();
            let kind = if roll < weights[0] {
                TweetKind::Original
            } else if roll < weights[0] + weights[1] {
                TweetKind::Retweet
            } else {
                TweetKind::Reply
            };
            tweet(user, idx, kind, rng)
        })
        .collect()
}

fn description(vocab: &[&str], len: usize, rng: &mut ChaCha8Rng) -> String {
    (0..len)
        .map(|_| *vocab.choose(rng).expect("vocab non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn record(
    user_id: String,
    label: Label,
    split: SplitName,
    desc: String,
    tweets: Vec<Tweet>,
) -> UserRecord {
    UserRecord {
        user_id,
        description: desc,
        label: Some(label),
        split: Some(split),
        tweets,
    }
}

/// The 12-account fixture: 6 retweet-heavy spam bots and 6 mixed-
/// activity humans, 200 tweets each, pre-split 8/2/2.
pub fn fixture_corpus12() -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1C);
    let mut records = Vec::new();
    for i in 0..6 {
        let split = match i {
            0..=3 => SplitName::Train,
            4 => SplitName::Val,
            _ => SplitName::Test,
        };
        let user = format!("bot{i:02}");
        let tweets = timeline(&user, 200, [0.10, 0.85, 0.05], &mut rng);
        let desc = description(&SPAM_VOCAB, 6, &mut rng);
        records.push(record(user, Label::Bot, split, desc, tweets));

        let user = format!("human{i:02}");
        let tweets = timeline(&user, 200, [0.60, 0.15, 0.25], &mut rng);
        let desc = description(&BENIGN_VOCAB, 6, &mut rng);
        records.push(record(user, Label::Human, split, desc, tweets));
    }
    Corpus::from_presplit("fixture12", records).expect("fixture is well-formed")
}

/// Split sizes for generated corpora.
#[derive(Debug, Clone, Copy)]
pub struct SynthSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SynthSizes {
    fn splits(self) -> [(SplitName, usize); 3] {
        [
            (SplitName::Train, self.train),
            (SplitName::Val, self.val),
            (SplitName::Test, self.test),
        ]
    }
}

/// Corpus where the label is visible in both modalities: bots retweet
/// heavily (bright images) and write spam-vocabulary bios, humans post
/// originals and write benign bios. Class-balanced per split.
pub fn learnable_corpus(sizes: SynthSizes, tweets_per_user: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for (split, n) in sizes.splits() {
        for i in 0..n {
            let bot = i % 2 == 0;
            let user = format!("{split}-u{i:04}");
            let (weights, vocab, label) = if bot {
                ([0.15, 0.80, 0.05], &SPAM_VOCAB, Label::Bot)
            } else {
                ([0.80, 0.10, 0.10], &BENIGN_VOCAB, Label::Human)
            };
            let tweets = timeline(&user, tweets_per_user, weights, &mut rng);
            let desc = description(vocab, rng.gen_range(4..9), &mut rng);
            records.push(record(user, label, split, desc, tweets));
        }
    }
    Corpus::from_presplit("learnable", records).expect("generated corpus is well-formed")
}

/// Corpus whose label is the XOR of a text-borne bit and an
/// image-borne bit. Each split holds the four (text bit, image bit)
/// combinations in equal counts, and inputs are identical within a
/// combination, so any single-modality classifier scores exactly 0.5.
pub fn xor_corpus(sizes: SynthSizes, tweets_per_user: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for (split, n) in sizes.splits() {
        assert!(n % 4 == 0, "split size {n} must be divisible by 4");
        for i in 0..n {
            let text_bit = (i / (n / 4)) % 2 == 1;
            let image_bit = (i / (n / 2)) % 2 == 1;
            let label = if text_bit ^ image_bit {
                Label::Bot
            } else {
                Label::Human
            };
            let user = format!("{split}-x{i:04}");
            let marker = if text_bit { "beta" } else { "alpha" };
            let desc = [marker; 5].join(" ");
            let kind = if image_bit {
                TweetKind::Retweet
            } else {
                TweetKind::Original
            };
            let tweets: Vec<Tweet> = (0..tweets_per_user)
                .map(|idx| tweet(&user, idx, kind, &mut rng))
                .collect();
            records.push(record(user, label, split, desc, tweets));
        }
    }
    Corpus::from_presplit("xor", records).expect("generated corpus is well-formed")
}

/// DNA strings with a planted coordinated group: `n_bots` accounts
/// share a long run of retweets inside otherwise random strings,
/// `n_humans` accounts are fully random.
pub fn planted_group_sequences(
    n_bots: usize,
    n_humans: usize,
    len: usize,
    planted_len: usize,
    seed: u64,
) -> BTreeMap<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let symbols = ['A', 'C', 'T'];
    let random_string = |rng: &mut ChaCha8Rng| -> Vec<char> {
        (0..len).map(|_| *symbols.choose(rng).expect("non-empty")).collect()
    };
    let mut out = BTreeMap::new();
    for b in 0..n_bots {
        let mut chars = random_string(&mut rng);
        let at = rng.gen_range(0..=len.saturating_sub(planted_len));
        for c in chars.iter_mut().skip(at).take(planted_len) {
            *c = 'T';
        }
        out.insert(format!("bot{b:02}"), chars.into_iter().collect());
    }
    for h in 0..n_humans {
        out.insert(
            format!("human{h:02}"),
            random_string(&mut rng).into_iter().collect(),
        );
    }
    out
}
