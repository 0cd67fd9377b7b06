//! Named trainable parameters.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered collection of named parameter matrices. Iteration order is
/// insertion order, which fixes every reduction over parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        let id = self.id(name)?;
        Some(self.value_mut(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    /// Sum of squares of every parameter, accumulated in insertion order.
    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(Mat::sum_squares).sum()
    }

    /// Parameter group of a name: everything before the last `.`.
    pub fn group_of(name: &str) -> &str {
        name.rsplit_once('.').map_or(name, |(g, _)| g)
    }
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Mat {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Mat::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn insertion_order_and_lookup() {
        let mut s = ParamStore::default();
        let a = s.insert("enc.w", Mat::zeros(2, 2));
        let b = s.insert("enc.b", Mat::zeros(1, 2));
        assert_eq!(s.id("enc.b"), Some(b));
        assert_eq!(s.name(a), "enc.w");
        assert_eq!(ParamStore::group_of("relate.0.attn.wq"), "relate.0.attn");
        assert_eq!(s.num_scalars(), 6);
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = init_uniform(&mut r1, 8, 8, 16);
        assert_eq!(a, init_uniform(&mut r2, 8, 8, 16));
        assert!(a.max_abs() <= 0.25);
    }
}
