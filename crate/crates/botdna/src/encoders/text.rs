//! Trainable text encoder over hashed character trigrams.
//!
//! Descriptions are tokenized into lowercase word and punctuation
//! tokens (at most [`MAX_TOKENS`]); each token embeds as the sum of
//! table rows selected by seeded trigram hashing, and a trainable
//! start-of-sequence vector is prepended. The start position's output
//! — the start vector plus the mean of the token embeddings — is the
//! pooled feature, mirroring CLS-token pooling.

use rand_chacha::ChaCha8Rng;

use super::{EncoderError, D_MODEL};
use crate::tensor::{Graph, NodeId, ParamStore, Tensor, TensorError};

/// Hash buckets in the embedding table.
pub const TEXT_BUCKETS: usize = 4096;
/// Token cap; with the start vector the sequence never exceeds 64
/// positions.
pub const MAX_TOKENS: usize = 63;

const PARAM_TABLE: &str = "text.embed";
const PARAM_START: &str = "text.start";

/// Per-token trigram bucket lists, precomputable once per description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBags {
    pub bags: Vec<Vec<u32>>,
}

impl TokenBags {
    /// Sequence length including the start position.
    pub fn n_positions(&self) -> usize {
        self.bags.len() + 1
    }
}

/// Output nodes of one encoded description.
#[derive(Debug, Clone, Copy)]
pub struct TextNodes {
    pub sequence: NodeId,
    pub pooled: NodeId,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    hash_seed: u64,
}

impl TextEncoder {
    pub fn new(hash_seed: u64) -> TextEncoder {
        TextEncoder { hash_seed }
    }

    pub fn register_params(
        &self,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), TensorError> {
        store.register_weight(PARAM_TABLE, &[TEXT_BUCKETS, D_MODEL], D_MODEL, rng)?;
        store.register_weight(PARAM_START, &[D_MODEL], D_MODEL, rng)?;
        Ok(())
    }

    /// Deterministic tokenization + hashing; independent of parameters,
    /// so callers cache it per user.
    pub fn bags_for(&self, description: &str) -> TokenBags {
        let bags = tokenize(description)
            .into_iter()
            .take(MAX_TOKENS)
            .map(|token| trigram_buckets(&token, self.hash_seed))
            .collect();
        TokenBags { bags }
    }

    /// Builds the [N, 768] sequence (start position first) and the
    /// pooled feature on the graph. The start position carries
    /// `start + mean(token embeddings)` so the pooled feature
    /// summarizes the description; with no tokens it is the bare
    /// start vector.
    pub fn forward(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        bags: &TokenBags,
    ) -> Result<TextNodes, EncoderError> {
        let start = graph.param(store, PARAM_START)?;
        let sequence = if bags.bags.is_empty() {
            graph.reshape(start, &[1, D_MODEL])?
        } else {
            let table = graph.param(store, PARAM_TABLE)?;
            let tokens = graph.embed_bag(table, bags.bags.clone())?;
            let token_mean = graph.mean_rows(tokens)?;
            let head = graph.add(start, token_mean)?;
            let head_row = graph.reshape(head, &[1, D_MODEL])?;
            graph.concat_rows(&[head_row, tokens])?
        };
        let pooled = graph.pick_row(sequence, 0)?;
        Ok(TextNodes {
            sequence,
            pooled,
            n: bags.n_positions(),
        })
    }

    /// Inference convenience: plain tensors for one description.
    pub fn encode(
        &self,
        store: &ParamStore,
        description: &str,
    ) -> Result<(Tensor, Tensor), EncoderError> {
        let bags = self.bags_for(description);
        let mut graph = Graph::new();
        let nodes = self.forward(&mut graph, store, &bags)?;
        Ok((
            graph.value(nodes.pooled).clone(),
            graph.value(nodes.sequence).clone(),
        ))
    }
}

/// Lowercase word/punctuation tokens: alphanumeric runs stay together,
/// every other non-whitespace character is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_alphanumeric() {
            current.push(c);
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Seeded FNV-1a over each 3-character window; tokens shorter than
/// three characters hash whole.
fn trigram_buckets(token: &str, seed: u64) -> Vec<u32> {
    let chars: Vec<char> = token.chars().collect();
    if chars.len() < 3 {
        return vec![bucket_of(token.as_bytes(), seed)];
    }
    chars
        .windows(3)
        .map(|w| {
            let tri: String = w.iter().collect();
            bucket_of(tri.as_bytes(), seed)
        })
        .collect()
}

fn bucket_of(bytes: &[u8], seed: u64) -> u32 {
    let mut hash = 0xcbf29ce484222325u64 ^ seed;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    (hash % TEXT_BUCKETS as u64) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn encoder_and_store() -> (TextEncoder, ParamStore) {
        let encoder = TextEncoder::new(7);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        encoder.register_params(&mut store, &mut rng).unwrap();
        (encoder, store)
    }

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(
            tokenize("Hello, World! bot-hunter 42"),
            vec!["hello", ",", "world", "!", "bot", "-", "hunter", "42"]
        );
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \t ").is_empty());
    }

    #[test]
    fn empty_description_yields_start_vector_only() {
        let (encoder, store) = encoder_and_store();
        let (pooled, sequence) = encoder.encode(&store, "").unwrap();
        assert_eq!(sequence.shape(), &[1, D_MODEL]);
        assert_eq!(pooled.shape(), &[D_MODEL]);
        assert_eq!(pooled.data(), &sequence.data()[..D_MODEL]);
    }

    #[test]
    fn encoding_is_deterministic() {
        let (encoder, store) = encoder_and_store();
        let (p1, s1) = encoder.encode(&store, "free followers now").unwrap();
        let (p2, s2) = encoder.encode(&store, "free followers now").unwrap();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn one_token_difference_changes_the_features() {
        let (encoder, store) = encoder_and_store();
        let (p1, s1) = encoder.encode(&store, "cook loves pasta").unwrap();
        let (p2, s2) = encoder.encode(&store, "cook loves trains").unwrap();
        assert_eq!(s1.shape(), s2.shape());
        assert_ne!(s1, s2);
        assert_ne!(p1, p2, "pooled feature must reflect the tokens");
    }

    #[test]
    fn token_cap_bounds_sequence_length() {
        let (encoder, store) = encoder_and_store();
        let long: String = (0..500).map(|i| format!("tok{i} ")).collect();
        let (_, sequence) = encoder.encode(&store, &long).unwrap();
        assert_eq!(sequence.shape(), &[MAX_TOKENS + 1, D_MODEL]);
    }

    #[test]
    fn pooled_is_first_position_of_sequence() {
        let (encoder, store) = encoder_and_store();
        let (pooled, sequence) = encoder.encode(&store, "some account bio").unwrap();
        assert_eq!(pooled.data(), &sequence.data()[..D_MODEL]);
    }

    #[test]
    fn hash_seed_changes_bucket_assignment() {
        let a = trigram_buckets("followers", 1);
        let b = trigram_buckets("followers", 2);
        assert_eq!(a.len(), b.len());
        assert_ne!(a, b);
    }
}
