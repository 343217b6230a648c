use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered collection of parameter matrices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
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

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names
            .iter()
            .zip(self.values.iter())
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_layout(&self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Shape("parameter names differ".into()));
        }
        for (i, (a, b)) in self.values.iter().zip(other.values.iter()).enumerate() {
            if a.dim() != b.dim() {
                return Err(Error::Shape(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    self.names[i],
                    b.dim(),
                    a.dim()
                )));
            }
        }
        Ok(())
    }

    /// `self += k * direction`, parameter by parameter.
    pub fn axpy(&mut self, k: f64, direction: &GradStore) {
        for (v, d) in self.values.iter_mut().zip(direction.grads.iter()) {
            v.scaled_add(k, d);
        }
    }
}

/// Gradient accumulator laid out like a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct GradStore {
    grads: Vec<Matrix>,
}

impl GradStore {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
        }
    }

    pub fn accumulate(&mut self, graph: &Graph, grads: &Gradients) {
        for (id, g) in grads.param_grads(graph) {
            self.grads[id.0] += g;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.grads {
            g.mapv_inplace(|x| x * k);
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.grads.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }

    pub fn dot(&self, other: &GradStore) -> f64 {
        self.grads
            .iter()
            .zip(other.grads.iter())
            .map(|(a, b)| (a * b).sum())
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Random standard-normal direction with the store's layout.
    pub fn random_direction<R: Rng + ?Sized>(store: &ParamStore, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        Self {
            grads: store
                .values
                .iter()
                .map(|v| Array2::from_shape_fn(v.dim(), |_| normal.sample(rng)))
                .collect(),
        }
    }

    /// Direction that is zero everywhere except parameter `id`.
    pub fn masked(&self, id: ParamId) -> Self {
        Self {
            grads: self
                .grads
                .iter()
                .enumerate()
                .map(|(i, g)| if i == id.0 { g.clone() } else { Array2::zeros(g.dim()) })
                .collect(),
        }
    }
}

/// Helper that registers parameters under a dotted name prefix.
pub struct ParamBuilder<'a, R: Rng> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
    prefix: String,
}

impl<'a, R: Rng> ParamBuilder<'a, R> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut R) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut ParamBuilder<'_, R>) -> T) -> T {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        let mut child = ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        };
        f(&mut child)
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let n = self.full_name(name);
        self.store.add(n, Array2::zeros((rows, cols)))
    }

    pub fn ones(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let n = self.full_name(name);
        self.store.add(n, Array2::ones((rows, cols)))
    }

    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> ParamId {
        let normal = Normal::new(0.0, std).expect("finite std");
        let rng = &mut *self.rng;
        let m = Array2::from_shape_fn((rows, cols), |_| normal.sample(rng));
        let n = self.full_name(name);
        self.store.add(n, m)
    }

    /// Glorot-uniform init for a `fan_in × fan_out` weight.
    pub fn xavier(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let rng = &mut *self.rng;
        let m = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit));
        let n = self.full_name(name);
        self.store.add(n, m)
    }

    /// He-normal init for a `fan_in × fan_out` weight feeding a ReLU.
    pub fn he(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        self.normal(name, fan_in, fan_out, (2.0 / fan_in as f64).sqrt())
    }
}
