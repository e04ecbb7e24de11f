use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// One named tensor with its gradient and Adam moments.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub trainable: bool,
    pub(crate) first_moment: Vec<T>,
    pub(crate) second_moment: Vec<T>,
}

impl<T: Real> Parameter<T> {
    fn new(value: Tensor<T>) -> Self {
        let n = value.len();
        Self {
            value,
            grad: None,
            trainable: true,
            first_moment: vec![T::zero(); n],
            second_moment: vec![T::zero(); n],
        }
    }

    pub fn moments(&self) -> (&[T], &[T]) {
        (&self.first_moment, &self.second_moment)
    }
}

/// Ordered name → tensor map. Iteration follows insertion order.
#[derive(Clone, Debug)]
pub struct ParameterStore<T> {
    entries: Vec<(String, Parameter<T>)>,
    index: HashMap<String, usize>,
    pub version: u32,
    pub rng_seed: u64,
}

impl<T: Real> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new(0)
    }
}

impl<T: Real> ParameterStore<T> {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
            version: crate::checkpoint::CHECKPOINT_VERSION,
            rng_seed,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParameter(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, Parameter::new(value)));
        Ok(())
    }

    /// Uniform Glorot initialization for a `rows×cols` weight.
    pub fn insert_glorot<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> Result<()> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| T::of(rng.random_range(-limit..limit))).collect();
        self.insert(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn insert_normal<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut R) -> Result<()> {
        let normal = Normal::new(0.0, std).map_err(|e| TensorError::State(e.to_string()))?;
        let data = (0..rows * cols).map(|_| T::of(normal.sample(rng))).collect();
        self.insert(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn insert_filled(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> Result<()> {
        self.insert(name, Tensor::filled(rows, cols, T::of(value)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn value_at(&self, idx: usize) -> &Tensor<T> {
        &self.entries[idx].1.value
    }

    pub fn get(&self, name: &str) -> Result<&Parameter<T>> {
        self.index_of(name)
            .map(|i| &self.entries[i].1)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter<T>> {
        let i = self
            .index_of(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        Ok(&mut self.entries[i].1)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).map(|p| &p.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter<T>)> {
        self.entries.iter_mut().map(|(n, p)| (n.as_str(), p))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Marks every entry whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (n, p) in &mut self.entries {
            if n.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in &mut self.entries {
            p.grad = Some(Tensor::new(p.value.shape().to_vec(), vec![T::zero(); p.value.len()]).expect("same shape"));
        }
    }

    /// Clears Adam moments, e.g. before a new training phase.
    pub fn reset_moments(&mut self) {
        for (_, p) in &mut self.entries {
            p.first_moment.iter_mut().for_each(|x| *x = T::zero());
            p.second_moment.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub(crate) fn ensure_grads(&mut self) {
        for (_, p) in &mut self.entries {
            if p.grad.is_none() {
                p.grad = Some(Tensor::new(p.value.shape().to_vec(), vec![T::zero(); p.value.len()]).expect("same shape"));
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, idx: usize, g: &[T]) {
        let p = &mut self.entries[idx].1;
        if let Some(grad) = p.grad.as_mut() {
            for (d, &s) in grad.data_mut().iter_mut().zip(g) {
                *d += s;
            }
        }
    }

    /// Scales every populated gradient by `factor`.
    pub fn scale_grads(&mut self, factor: f64) {
        let f = T::of(factor);
        for (_, p) in &mut self.entries {
            if let Some(g) = p.grad.as_mut() {
                for x in g.data_mut() {
                    *x *= f;
                }
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|(_, p)| p.grad.as_ref())
            .flat_map(|g| g.data().iter().map(|x| x.as_f64().powi(2)))
            .sum::<f64>()
            .sqrt()
    }

    /// `(name, ‖value‖₂)` for diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.entries.iter().map(|(n, p)| (n.clone(), p.value.norm())).collect()
    }

    /// Copies values (not gradients or moments) into another precision.
    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        let mut out = ParameterStore::<U>::new(self.rng_seed);
        out.version = self.version;
        for (n, p) in &self.entries {
            out.insert(n.clone(), p.value.cast::<U>()).expect("names are unique");
            out.get_mut(n).expect("just inserted").trainable = p.trainable;
        }
        out
    }

    /// Overwrites values of matching names from `other`.
    pub fn copy_values_from(&mut self, other: &ParameterStore<T>) -> Result<()> {
        for (n, p) in &mut self.entries {
            let src = other.value(n)?;
            if src.shape() != p.value.shape() {
                return Err(TensorError::Dimension { op: "copy_values_from", lhs: p.value.shape().to_vec(), rhs: src.shape().to_vec() });
            }
            p.value = src.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut s = ParameterStore::<f32>::new(1);
        s.insert("b", Tensor::scalar(1.0)).unwrap();
        s.insert("a", Tensor::scalar(2.0)).unwrap();
        assert!(matches!(s.insert("a", Tensor::scalar(3.0)), Err(TensorError::DuplicateParameter(_))));
        assert_eq!(s.names().collect::<Vec<_>>(), vec!["b", "a"]);
    }

    #[test]
    fn cast_preserves_values() {
        let mut s = ParameterStore::<f32>::new(1);
        s.insert("w", Tensor::row(&[0.5, -1.25])).unwrap();
        let d = s.cast::<f64>();
        assert_eq!(d.value("w").unwrap().data(), &[0.5, -1.25]);
    }
}
