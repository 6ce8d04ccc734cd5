//! Named parameter storage and its binding onto a [`Graph`].

use std::collections::HashMap;
use std::ops::Index;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Values are rounded to `f32` so checkpoints are lossless.
    pub fn add(&mut self, name: impl Into<String>, mut value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        value.round_f32();
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Replace a value, keeping the registered shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::shape("param set", self.values[id.0].shape(), value.shape()));
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Zero every parameter whose name starts with `prefix`; returns how many were zeroed.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (name, v) in self.names.iter().zip(&mut self.values) {
            if name.starts_with(prefix) {
                v.data_mut().fill(0.0);
                n += 1;
            }
        }
        n
    }

    /// Put every parameter on `g` as a gradient-requiring leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.values.iter().map(|v| g.param(v.clone())).collect())
    }

    /// Put every parameter on `g` as a constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound(self.values.iter().map(|v| g.constant(v.clone())).collect())
    }
}

/// Graph handles of a bound [`ParamStore`], indexable by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wrap handles in [`ParamStore`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Seeded parameter initializer that registers into a store under a name prefix.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: SplitMix64,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            rng: SplitMix64::new(seed),
            prefix: String::new(),
        }
    }

    /// Run `f` with `name.` appended to the current prefix.
    pub fn scope<T>(&mut self, name: &str, f: impl FnOnce(&mut Init<'_>) -> T) -> T {
        let scoped = format!("{}{name}.", self.prefix);
        let saved = std::mem::replace(&mut self.prefix, scoped);
        let out = f(self);
        self.prefix = saved;
        out
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        let full = format!("{}{name}", self.prefix);
        self.store.add(full, value)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn fan_in(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::uniform(shape, -bound, bound, &mut self.rng);
        self.add(name, t)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let t = Tensor::randn(shape, std, &mut self.rng);
        self.add(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::ones(shape))
    }

    /// Gaussian `rows×cols` matrix rescaled to spectral norm `sigma`.
    pub fn spectral(&mut self, name: &str, rows: usize, cols: usize, sigma: f64) -> ParamId {
        let mut t = Tensor::randn(&[rows, cols], 1.0, &mut self.rng);
        let s = spectral_norm(&t);
        if s > 0.0 {
            for v in t.data_mut() {
                *v *= sigma / s;
            }
        }
        self.add(name, t)
    }
}

/// Largest singular value of a 2-d tensor by power iteration on `AᵀA`.
pub fn spectral_norm(a: &Tensor) -> f64 {
    assert_eq!(a.ndim(), 2, "spectral_norm expects a matrix");
    let (rows, cols) = (a.shape()[0], a.shape()[1]);
    let d = a.data();
    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut sigma = 0.0;
    for _ in 0..500 {
        let av: Vec<f64> = (0..rows)
            .map(|i| (0..cols).map(|j| d[i * cols + j] * v[j]).sum())
            .collect();
        let atav: Vec<f64> = (0..cols)
            .map(|j| (0..rows).map(|i| d[i * cols + j] * av[i]).sum())
            .collect();
        let norm = atav.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm.sqrt();
        v = atav.into_iter().map(|x| x / norm).collect();
        if (next - sigma).abs() <= 1e-13 * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scoped_names_and_lookup() {
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, 1);
        let a = init.scope("enc", |i| i.scope("s1", |i| i.zeros("w", &[2])));
        let b = init.ones("bias", &[3]);
        assert_eq!(store.name(a), "enc.s1.w");
        assert_eq!(store.id("bias"), Some(b));
        assert_eq!(store.numel(), 5);
        assert_eq!(store.zero_prefix("bias"), 1);
        assert_eq!(store.get(b).sum(), 0.0);
    }

    #[test]
    fn spectral_init_has_requested_norm() {
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, 9);
        let id = init.spectral("w", 6, 6, 0.45);
        let s = spectral_norm(init.store.get(id));
        // f32 rounding perturbs the norm slightly.
        assert!((s - 0.45).abs() < 1e-6, "{s}");
        let id = init.spectral("r", 3, 8, 0.2);
        let s = spectral_norm(store.get(id));
        assert!((s - 0.2).abs() < 1e-6, "{s}");
        let diag = Tensor::new(vec![2, 2], vec![3.0, 0.0, 0.0, -5.0]).unwrap();
        assert!((spectral_norm(&diag) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn values_are_f32_representable() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::from_vec(vec![0.1]));
        assert_eq!(store.get(id).item(), 0.1f32 as f64);
    }
}
