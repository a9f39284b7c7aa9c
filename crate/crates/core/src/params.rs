//! Named parameter collections, gradient buffers and the Adam optimizer.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;

/// Dense row-major matrix. Vectors are stored as `rows x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor payload does not match shape");
        Tensor { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Uniform(f64),
}

/// Ordered, named parameter set. Insertion order is stable and is the
/// serialization order of checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let data = match init {
            Init::Zeros => vec![0.0; rows * cols],
            Init::Uniform(a) => (0..rows * cols).map(|_| rng.gen_range(-a..=a)).collect(),
        };
        self.insert(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Flat view used by finite-difference checks.
    pub fn scalar_mut(&mut self, id: ParamId, offset: usize) -> &mut f64 {
        &mut self.tensors[id.0].data[offset]
    }
}

/// Gradient accumulator with the same layout as a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            data: store.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Grads, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * *y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn global_norm(&self) -> f64 {
        self.data.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`. Returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().flatten().all(|&x| x == 0.0)
    }
}

/// Deterministic seed for batch `batch` of epoch `epoch`.
pub fn derive_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((epoch as u64) << 32)
        .wrapping_add((batch as u64) << 12)
}

/// Evaluates `f` on every item in parallel, each into its own buffer, and sums
/// the buffers and losses in item order so the result does not depend on
/// scheduling.
pub fn batch_gradient<T, F>(store: &ParamStore, items: &[T], f: F) -> (Grads, f64)
where
    T: Sync,
    F: Fn(usize, &T, &mut Grads) -> f64 + Sync,
{
    let parts: Vec<(Grads, f64)> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let mut g = Grads::zeros_like(store);
            let loss = f(i, item, &mut g);
            (g, loss)
        })
        .collect();
    let mut total = Grads::zeros_like(store);
    let mut loss = 0.0;
    for (g, l) in &parts {
        total.add_assign(g);
        loss += l;
    }
    (total, loss)
}

/// Adam with L2 regularization folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l2: f64,
    m: Grads,
    v: Grads,
    t: i32,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, l2: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2,
            m: Grads::zeros_like(store),
            v: Grads::zeros_like(store),
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (i, tensor) in store.tensors.iter_mut().enumerate() {
            let g = &grads.data[i];
            let m = &mut self.m.data[i];
            let v = &mut self.v.data[i];
            for j in 0..tensor.data.len() {
                let grad = g[j] + self.l2 * tensor.data[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * grad;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * grad * grad;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                tensor.data[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_init_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let id = store.add("w", 20, 30, Init::Uniform(0.2), &mut rng);
        assert!(store.get(id).data.iter().all(|x| x.abs() <= 0.2));
        assert_eq!(store.name(id), "w");
        assert_eq!(store.id("w"), Some(id));
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.add("w", 2, 1, Init::Zeros, &mut rng);
        let mut g = Grads::zeros_like(&store);
        g.data[0] = vec![30.0, 40.0];
        assert_eq!(g.clip_norm(5.0), 50.0);
        assert!((g.global_norm() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let id = store.add("w", 1, 1, Init::Zeros, &mut rng);
        let mut opt = Adam::new(&store, 0.1, 0.0);
        let mut g = Grads::zeros_like(&store);
        g.data[0][0] = 2.0;
        opt.step(&mut store, &g);
        assert!((store.get(id).data[0] + 0.1).abs() < 1e-6);
    }
}
