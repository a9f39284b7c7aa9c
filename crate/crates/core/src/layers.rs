//! Recurrent and attention building blocks shared by the NLU, SSG and LM models.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::params::{Init, ParamId, ParamStore};

pub const INIT_RANGE: f64 = 0.2;

/// Standard LSTM cell; gate order in the fused weight is input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let init = Init::Uniform(INIT_RANGE);
        let w = store.add(&format!("{name}.w"), 4 * hidden, input + hidden, init, rng);
        let b = store.add(&format!("{name}.b"), 4 * hidden, 1, init, rng);
        LstmCell {
            w,
            b,
            input,
            hidden,
        }
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> (Var, Var) {
        let n = self.hidden;
        let xh = g.concat(&[x, h]);
        let w = g.param(self.w);
        let b = g.param(self.b);
        let z = g.matvec(w, xh);
        let z = g.add(z, b);
        let zi = g.slice(z, 0, n);
        let zf = g.slice(z, n, n);
        let zc = g.slice(z, 2 * n, n);
        let zo = g.slice(z, 3 * n, n);
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zc);
        let o = g.sigmoid(zo);
        let fc = g.mul(f, c);
        let ic = g.mul(i, cand);
        let c_next = g.add(fc, ic);
        let tc = g.tanh(c_next);
        let h_next = g.mul(o, tc);
        (h_next, c_next)
    }

    /// Runs over `inputs` from a zero state unless `init_h` is given.
    pub fn run(&self, g: &mut Graph, inputs: &[Var], init_h: Option<Var>) -> Vec<Var> {
        let mut h = init_h.unwrap_or_else(|| g.zeros(self.hidden));
        let mut c = g.zeros(self.hidden);
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let (h2, c2) = self.step(g, x, h, c);
            h = h2;
            c = c2;
            out.push(h);
        }
        out
    }
}

/// Bidirectional LSTM.
#[derive(Debug, Clone)]
pub struct Blstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

#[derive(Debug, Clone)]
pub struct BlstmOutput {
    /// Forward hiddens, position order.
    pub fwd: Vec<Var>,
    /// Backward hiddens, position order (`bwd[0]` has read the whole sequence).
    pub bwd: Vec<Var>,
    /// `fwd[i] ⊕ bwd[i]`.
    pub hiddens: Vec<Var>,
}

impl Blstm {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Blstm {
            fwd: LstmCell::new(store, &format!("{name}.fwd"), input, hidden, rng),
            bwd: LstmCell::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    pub fn run(&self, g: &mut Graph, inputs: &[Var]) -> BlstmOutput {
        let fwd = self.fwd.run(g, inputs, None);
        let rev: Vec<Var> = inputs.iter().rev().copied().collect();
        let mut bwd = self.bwd.run(g, &rev, None);
        bwd.reverse();
        let hiddens = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect();
        BlstmOutput { fwd, bwd, hiddens }
    }
}

/// Additive attention: `u_i = v^T tanh(W (q ⊕ e_i))`, `a = softmax(u)`, `z = Σ a_i e_i`.
#[derive(Debug, Clone)]
pub struct Attention {
    pub w: ParamId,
    pub v: ParamId,
    pub key_dim: usize,
}

impl Attention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        query_dim: usize,
        key_dim: usize,
        att_dim: usize,
        rng: &mut R,
    ) -> Self {
        let init = Init::Uniform(INIT_RANGE);
        let w = store.add(&format!("{name}.w"), att_dim, query_dim + key_dim, init, rng);
        let v = store.add(&format!("{name}.v"), att_dim, 1, init, rng);
        Attention { w, v, key_dim }
    }

    /// Returns the context vector and the attention weights. An empty key list
    /// yields a zero context and `None` weights.
    pub fn attend(&self, g: &mut Graph, query: Var, keys: &[Var]) -> (Var, Option<Var>) {
        if keys.is_empty() {
            return (g.zeros(self.key_dim), None);
        }
        let w = g.param(self.w);
        let v = g.param(self.v);
        let scores: Vec<Var> = keys
            .iter()
            .map(|&k| {
                let qk = g.concat(&[query, k]);
                let proj = g.matvec(w, qk);
                let act = g.tanh(proj);
                let prod = g.mul(v, act);
                g.sum(prod)
            })
            .collect();
        let u = g.concat(&scores);
        let a = g.softmax(u);
        let stacked = g.stack(keys);
        let z = g.mat_t_vec(stacked, a);
        (z, Some(a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn blstm_backward_first_state_reads_whole_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let blstm = Blstm::new(&mut store, "enc", 3, 4, &mut rng);
        let inputs: Vec<Vec<f64>> = (0..3).map(|i| vec![0.1 * i as f64, -0.2, 0.3]).collect();
        let h1 = |inputs: &[Vec<f64>]| {
            let mut g = Graph::new(&store);
            let xs: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
            let out = blstm.run(&mut g, &xs);
            assert_eq!(g.len(out.hiddens[0]), 8);
            g.value(out.bwd[0]).to_vec()
        };
        let base = h1(&inputs);
        let mut changed = inputs.clone();
        changed[2][0] = 5.0;
        assert_ne!(base, h1(&changed));
    }

    #[test]
    fn attention_weights_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::new();
        let att = Attention::new(&mut store, "att", 2, 3, 4, &mut rng);
        let mut g = Graph::new(&store);
        let q = g.constant(vec![0.5, -0.5]);
        let keys: Vec<Var> = (0..4).map(|i| g.constant(vec![i as f64, 1.0, -1.0])).collect();
        let (z, a) = att.attend(&mut g, q, &keys);
        let a = a.unwrap();
        assert!((g.value(a).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(g.len(z), 3);
        let (z0, none) = att.attend(&mut g, q, &[]);
        assert!(none.is_none());
        assert_eq!(g.value(z0), &[0.0, 0.0, 0.0]);
    }
}
