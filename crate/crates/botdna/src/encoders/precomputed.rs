//! Adapter serving features exported by an external pipeline (real
//! TwHIN-BERT / VGG16 runs) from the binary tensor container, keyed
//! `user_id/text` and `user_id/vision`. Dimensions are checked at load
//! time, never at use.

use std::collections::BTreeMap;
use std::path::Path;

use super::{EncoderError, D_MODEL};
use crate::tensor::{load_named_tensors, save_named_tensors, Tensor};

#[derive(Debug, Clone, Default)]
pub struct PrecomputedFeatures {
    text: BTreeMap<String, Tensor>,
    vision: BTreeMap<String, Tensor>,
}

impl PrecomputedFeatures {
    /// Loads and validates a feature file. Entries may be rank-1
    /// `[d]` (normalized to a single-position sequence) or rank-2
    /// `[n, d]`; `d` must equal `expected_dim`.
    pub fn load(path: &Path, expected_dim: usize) -> Result<PrecomputedFeatures, EncoderError> {
        let mut features = PrecomputedFeatures::default();
        for (name, tensor) in load_named_tensors(path)? {
            let tensor = normalize(&name, tensor, expected_dim)?;
            if let Some(user_id) = name.strip_suffix("/text") {
                features.text.insert(user_id.to_string(), tensor);
            } else if let Some(user_id) = name.strip_suffix("/vision") {
                features.vision.insert(user_id.to_string(), tensor);
            }
            // other entries are ignored; the container is shared with
            // parameter checkpoints
        }
        Ok(features)
    }

    pub fn load_default(path: &Path) -> Result<PrecomputedFeatures, EncoderError> {
        PrecomputedFeatures::load(path, D_MODEL)
    }

    /// Writes per-user sequences in sorted order.
    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        let mut entries = Vec::new();
        for (user_id, tensor) in &self.text {
            entries.push((format!("{user_id}/text"), tensor.clone()));
        }
        for (user_id, tensor) in &self.vision {
            entries.push((format!("{user_id}/vision"), tensor.clone()));
        }
        save_named_tensors(&entries, path)?;
        Ok(())
    }

    pub fn insert_text(&mut self, user_id: &str, tensor: Tensor) {
        self.text.insert(user_id.to_string(), tensor);
    }

    pub fn insert_vision(&mut self, user_id: &str, tensor: Tensor) {
        self.vision.insert(user_id.to_string(), tensor);
    }

    /// Text sequence `[N, d]` for one user; the pooled feature is its
    /// first row (CLS-style).
    pub fn text_sequence(&self, user_id: &str) -> Result<&Tensor, EncoderError> {
        self.text
            .get(user_id)
            .ok_or_else(|| EncoderError::MissingUser(user_id.to_string()))
    }

    /// Vision sequence `[T, d]` for one user; the pooled feature is
    /// its position mean.
    pub fn vision_sequence(&self, user_id: &str) -> Result<&Tensor, EncoderError> {
        self.vision
            .get(user_id)
            .ok_or_else(|| EncoderError::MissingUser(user_id.to_string()))
    }

    pub fn user_ids(&self) -> impl Iterator<Item = &String> {
        self.text.keys()
    }

    pub fn len(&self) -> usize {
        self.text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

fn normalize(name: &str, tensor: Tensor, expected_dim: usize) -> Result<Tensor, EncoderError> {
    match tensor.rank() {
        1 => {
            let d = tensor.shape()[0];
            if d != expected_dim {
                return Err(EncoderError::DimMismatch {
                    name: name.to_string(),
                    got: d,
                    expected: expected_dim,
                });
            }
            Ok(tensor.reshaped(&[1, d])?)
        }
        2 => {
            let d = tensor.shape()[1];
            if d != expected_dim {
                return Err(EncoderError::DimMismatch {
                    name: name.to_string(),
                    got: d,
                    expected: expected_dim,
                });
            }
            Ok(tensor)
        }
        rank => Err(EncoderError::BadRank {
            name: name.to_string(),
            rank,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_file(dir: &Path, users: usize, dim: usize) -> std::path::PathBuf {
        let path = dir.join("features.bwts");
        let mut features = PrecomputedFeatures::default();
        for i in 0..users {
            let uid = format!("u{i}");
            features.insert_text(
                &uid,
                Tensor::from_vec(&[2, dim], vec![i as f64; 2 * dim]).unwrap(),
            );
            features.insert_vision(
                &uid,
                Tensor::from_vec(&[3, dim], vec![-(i as f64); 3 * dim]).unwrap(),
            );
        }
        features.save(&path).unwrap();
        path
    }

    #[test]
    fn loads_every_stored_user() {
        let dir = tempfile::tempdir().unwrap();
        let path = sample_file(dir.path(), 12, 16);
        let features = PrecomputedFeatures::load(&path, 16).unwrap();
        assert_eq!(features.len(), 12);
        for i in 0..12 {
            let uid = format!("u{i}");
            assert_eq!(features.text_sequence(&uid).unwrap().shape(), &[2, 16]);
            assert_eq!(features.vision_sequence(&uid).unwrap().shape(), &[3, 16]);
        }
    }

    #[test]
    fn unknown_user_is_reported_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = sample_file(dir.path(), 2, 8);
        let features = PrecomputedFeatures::load(&path, 8).unwrap();
        let err = features.text_sequence("u99").unwrap_err();
        assert_eq!(err.to_string(), "user u99 absent");
    }

    #[test]
    fn dimension_mismatch_fails_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = sample_file(dir.path(), 2, 512);
        let err = PrecomputedFeatures::load(&path, 768).unwrap_err();
        match err {
            EncoderError::DimMismatch { got, expected, .. } => {
                assert_eq!((got, expected), (512, 768));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn rank_one_entries_become_single_position_sequences() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.bwts");
        save_named_tensors(
            &[("u1/text".to_string(), Tensor::vector(vec![1.0; 8]))],
            &path,
        )
        .unwrap();
        let features = PrecomputedFeatures::load(&path, 8).unwrap();
        assert_eq!(features.text_sequence("u1").unwrap().shape(), &[1, 8]);
    }
}
