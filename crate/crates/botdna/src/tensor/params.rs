//! Named trainable parameters with paired gradient buffers.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Tensor, TensorError};

/// One trainable tensor; `grad` always has the same shape as `value`
/// and is zeroed at the start of every optimizer step.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Registration-ordered parameter set shared by encoders and heads.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<usize, TensorError> {
        if self.index.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let grad = Tensor::zeros(value.shape());
        let idx = self.params.len();
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
        });
        self.index.insert(name.to_string(), idx);
        Ok(idx)
    }

    /// Weight initialized uniform(−√(1/fan_in), +√(1/fan_in)).
    pub fn register_weight(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize, TensorError> {
        let bound = (1.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.register(name, Tensor::from_vec(shape, data)?)
    }

    /// Bias initialized to zeros.
    pub fn register_bias(&mut self, name: &str, dim: usize) -> Result<usize, TensorError> {
        self.register(name, Tensor::zeros(&[dim]))
    }

    pub fn index_of(&self, name: &str) -> Result<usize, TensorError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Parameter, TensorError> {
        Ok(&self.params[self.index_of(name)?])
    }

    pub fn by_index(&self, idx: usize) -> &Parameter {
        &self.params[idx]
    }

    pub fn by_index_mut(&mut self, idx: usize) -> &mut Parameter {
        &mut self.params[idx]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Snapshot of all values, used to restore the best epoch.
    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore_values(&mut self, values: &[Tensor]) {
        assert_eq!(values.len(), self.params.len());
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            store.register("w", Tensor::zeros(&[2])),
            Err(TensorError::DuplicateParam(_))
        ));
    }

    #[test]
    fn weight_init_is_bounded_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        store.register_weight("w", &[4, 4], 4, &mut rng).unwrap();
        let bound = 0.5;
        assert!(store.get("w").unwrap().value.data().iter().all(|v| v.abs() < bound));

        let mut rng2 = ChaCha8Rng::seed_from_u64(0);
        let mut store2 = ParamStore::new();
        store2.register_weight("w", &[4, 4], 4, &mut rng2).unwrap();
        assert_eq!(store.get("w").unwrap().value, store2.get("w").unwrap().value);
    }

    #[test]
    fn zero_grads_clears_buffers() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::zeros(&[2])).unwrap();
        store.by_index_mut(0).grad.data_mut()[0] = 3.0;
        store.zero_grads();
        assert_eq!(store.by_index(0).grad.data(), &[0.0, 0.0]);
    }
}
