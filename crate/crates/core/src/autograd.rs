//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably; parameter leaves read their
//! values straight from the store and `backward` accumulates into a [`Grads`]
//! buffer with the store's layout. Nodes are appended in evaluation order, so
//! the tape is already topologically sorted.

use rand::Rng;

use crate::params::{Grads, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    Row(ParamId, usize),
    MatVec(Var, Var),
    MatTVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleBy(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Stack(Vec<Var>),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
    Sum(Var),
    Norm2(Var),
    CrfLogZ { emissions: Var, trans: Var, start: Var },
}

#[derive(Debug)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_cache: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_cache: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => &self.store.get(id).data,
            _ => &node.value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1);
        val[0]
    }

    pub fn len(&self, v: Var) -> usize {
        let n = &self.nodes[v.0];
        n.rows * n.cols
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.push(Op::Const, n, 1, value)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant(vec![0.0; n])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_cache[id.index()] {
            return v;
        }
        let t = self.store.get(id);
        let v = self.push(Op::Param(id), t.rows, t.cols, Vec::new());
        self.param_cache[id.index()] = Some(v);
        v
    }

    /// Row `r` of a parameter matrix (embedding lookup).
    pub fn row(&mut self, id: ParamId, r: usize) -> Var {
        let t = self.store.get(id);
        let value = t.row(r).to_vec();
        self.push(Op::Row(id, r), t.cols, 1, value)
    }

    pub fn matvec(&mut self, m: Var, x: Var) -> Var {
        let (rows, cols) = self.shape(m);
        assert_eq!(cols, self.len(x), "matvec shape mismatch");
        let mv = self.value(m);
        let xv = self.value(x);
        let out: Vec<f64> = (0..rows)
            .map(|i| {
                mv[i * cols..(i + 1) * cols]
                    .iter()
                    .zip(xv)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        self.push(Op::MatVec(m, x), rows, 1, out)
    }

    /// `m^T x` for an `r x c` matrix and an `r`-vector.
    pub fn mat_t_vec(&mut self, m: Var, x: Var) -> Var {
        let (rows, cols) = self.shape(m);
        assert_eq!(rows, self.len(x), "mat_t_vec shape mismatch");
        let mv = self.value(m);
        let xv = self.value(x);
        let mut out = vec![0.0; cols];
        for i in 0..rows {
            let w = xv[i];
            for (o, a) in out.iter_mut().zip(&mv[i * cols..(i + 1) * cols]) {
                *o += w * a;
            }
        }
        self.push(Op::MatTVec(m, x), cols, 1, out)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.len(), bv.len(), "elementwise shape mismatch");
        let out: Vec<f64> = av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect();
        let (r, c) = self.shape(a);
        self.push(op, r, c, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Vector `a` times the scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let out: Vec<f64> = self.value(a).iter().map(|x| x * k).collect();
        let (r, c) = self.shape(a);
        self.push(Op::ScaleBy(a, s), r, c, out)
    }

    /// Row-major constant matrix.
    pub fn constant_matrix(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(rows * cols, value.len(), "constant matrix shape mismatch");
        self.push(Op::Const, rows, cols, value)
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|x| scale * x + shift).collect();
        let (r, c) = self.shape(a);
        self.push(Op::Affine(a, scale), r, c, out)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|x| f(*x)).collect();
        let (r, c) = self.shape(a);
        self.push(op, r, c, out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a), f64::ln)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let n = out.len();
        self.push(Op::Concat(parts.to_vec()), n, 1, out)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a)[start..start + len].to_vec();
        self.push(Op::Slice(a, start), len, 1, out)
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "cannot stack zero rows");
        let d = self.len(rows[0]);
        let mut out = Vec::with_capacity(d * rows.len());
        for &r in rows {
            assert_eq!(self.len(r), d, "stack rows differ in length");
            out.extend_from_slice(self.value(r));
        }
        self.push(Op::Stack(rows.to_vec()), rows.len(), d, out)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax(self.value(a));
        let n = out.len();
        self.push(Op::Softmax(a), n, 1, out)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = log_softmax(self.value(a));
        let n = out.len();
        self.push(Op::LogSoftmax(a), n, 1, out)
    }

    pub fn pick(&mut self, a: Var, idx: usize) -> Var {
        let v = self.value(a)[idx];
        self.push(Op::Pick(a, idx), 1, 1, vec![v])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().sum();
        self.push(Op::Sum(a), 1, 1, vec![v])
    }

    /// Adds up a list of scalars (or equal-length vectors).
    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        acc
    }

    pub fn norm2(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x * x).sum::<f64>().sqrt();
        self.push(Op::Norm2(a), 1, 1, vec![v])
    }

    /// Log-partition of a linear-chain CRF. `emissions` is `L x T` (one row per
    /// position), `trans[i][j]` scores the move from tag `i` to tag `j`, and
    /// `start[j]` scores tag `j` at the first position.
    pub fn crf_log_z(&mut self, emissions: Var, trans: Var, start: Var) -> Var {
        let (len, ntags) = self.shape(emissions);
        let alpha = crf_alpha(self.value(emissions), self.value(trans), self.value(start), len, ntags);
        let log_z = log_sum_exp(&alpha[len - 1]);
        self.push(
            Op::CrfLogZ {
                emissions,
                trans,
                start,
            },
            1,
            1,
            vec![log_z],
        )
    }

    /// Inverted dropout. Without an RNG (evaluation) this is the identity.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: Option<&mut R>) -> Var {
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 - p;
                let mask: Vec<f64> = (0..self.len(a))
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let m = self.constant(mask);
                self.mul(a, m)
            }
            _ => a,
        }
    }

    /// Accumulates `seed * d(root)/d(param)` into `grads`.
    pub fn backward(&self, root: Var, seed: f64, grads: &mut Grads) {
        let mut ng: Vec<Option<Vec<f64>>> = Vec::with_capacity(root.0 + 1);
        ng.resize_with(root.0 + 1, || None);
        ng[root.0] = Some(vec![seed; self.len(root)]);

        for i in (0..=root.0).rev() {
            let Some(g) = ng[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => add_into(&mut grads.data[id.index()], &g),
                Op::Row(id, r) => {
                    let cols = self.store.get(*id).cols;
                    add_into(&mut grads.data[id.index()][r * cols..(r + 1) * cols], &g);
                }
                Op::MatVec(m, x) => {
                    let (rows, cols) = self.shape(*m);
                    let xv = self.value(*x);
                    if let Some(dm) = self.target(&mut ng, grads, *m) {
                        for r in 0..rows {
                            let gr = g[r];
                            if gr != 0.0 {
                                for (d, xj) in dm[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                    *d += gr * xj;
                                }
                            }
                        }
                    }
                    let mv = self.value(*m);
                    if let Some(dx) = self.target(&mut ng, grads, *x) {
                        for r in 0..rows {
                            let gr = g[r];
                            if gr != 0.0 {
                                for (d, a) in dx.iter_mut().zip(&mv[r * cols..(r + 1) * cols]) {
                                    *d += gr * a;
                                }
                            }
                        }
                    }
                }
                Op::MatTVec(m, x) => {
                    let (rows, cols) = self.shape(*m);
                    let xv = self.value(*x);
                    if let Some(dm) = self.target(&mut ng, grads, *m) {
                        for r in 0..rows {
                            for (d, gj) in dm[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                                *d += xv[r] * gj;
                            }
                        }
                    }
                    let mv = self.value(*m);
                    if let Some(dx) = self.target(&mut ng, grads, *x) {
                        for r in 0..rows {
                            dx[r] += mv[r * cols..(r + 1) * cols]
                                .iter()
                                .zip(&g)
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                    }
                }
                Op::Add(a, b) => {
                    if let Some(d) = self.target(&mut ng, grads, *a) {
                        add_into(d, &g);
                    }
                    if let Some(d) = self.target(&mut ng, grads, *b) {
                        add_into(d, &g);
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(d) = self.target(&mut ng, grads, *a) {
                        add_into(d, &g);
                    }
                    if let Some(d) = self.target(&mut ng, grads, *b) {
                        d.iter_mut().zip(&g).for_each(|(d, g)| *d -= g);
                    }
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = g.iter().zip(self.value(*b)).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = g.iter().zip(self.value(*a)).map(|(g, x)| g * x).collect();
                    if let Some(d) = self.target(&mut ng, grads, *a) {
                        add_into(d, &da);
                    }
                    if let Some(d) = self.target(&mut ng, grads, *b) {
                        add_into(d, &db);
                    }
                }
                Op::ScaleBy(a, s) => {
                    let k = self.scalar(*s);
                    let ds: f64 = g.iter().zip(self.value(*a)).map(|(g, x)| g * x).sum();
                    if let Some(d) = self.target(&mut ng, grads, *a) {
                        d.iter_mut().zip(&g).for_each(|(d, g)| *d += k * g);
                    }
                    if let Some(d) = self.target(&mut ng, grads, *s) {
                        d[0] += ds;
                    }
                }
                Op::Affine(a, s) => {
                    if let Some(d) = self.target(&mut ng, grads, *a) {
                        d.iter_mut().zip(&g).for_each(|(d, g)| *d += s * g);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    if let Some(d) = self.target(&mut ng, grads, *a) {
                        for k in 0..d.len() {
                            d[k] += g[k] * y[k] * (1.0 - y[k]);
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    if let Some(d) = self.target(&mut ng, grads, *a) {
                        for k in 0..d.len() {
                            d[k] += g[k] * (1.0 - y[k] * y[k]);
                        }
                    }
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    if let Some(d) = self.target(&mut ng, grads, *a) {
                        for k in 0..d.len() {
                            d[k] += g[k] * y[k];
                        }
                    }
                }
                Op::Log(a) => {
                    let x = self.value(*a);
                    let dx: Vec<f64> = g.iter().zip(x).map(|(g, x)| g / x).collect();
                    if let Some(d) = self.target(&mut ng, grads, *a) {
                        add_into(d, &dx);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.len(p);
                        if let Some(d) = self.target(&mut ng, grads, p) {
                            add_into(d, &g[off..off + n]);
                        }
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let n = g.len();
                    if let Some(d) = self.target(&mut ng, grads, *a) {
                        add_into(&mut d[*start..*start + n], &g);
                    }
                }
                Op::Stack(rows) => {
                    let d = node.cols;
                    for (k, &r) in rows.iter().enumerate() {
                        if let Some(dr) = self.target(&mut ng, grads, r) {
                            add_into(dr, &g[k * d..(k + 1) * d]);
                        }
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                    if let Some(d) = self.target(&mut ng, grads, *a) {
                        for k in 0..d.len() {
                            d[k] += y[k] * (g[k] - dot);
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let total: f64 = g.iter().sum();
                    if let Some(d) = self.target(&mut ng, grads, *a) {
                        for k in 0..d.len() {
                            d[k] += g[k] - y[k].exp() * total;
                        }
                    }
                }
                Op::Pick(a, idx) => {
                    if let Some(d) = self.target(&mut ng, grads, *a) {
                        d[*idx] += g[0];
                    }
                }
                Op::Sum(a) => {
                    if let Some(d) = self.target(&mut ng, grads, *a) {
                        d.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::Norm2(a) => {
                    let norm = node.value[0];
                    // Subgradient 0 at the origin.
                    if norm > 0.0 {
                        let dx: Vec<f64> = self.value(*a).iter().map(|x| g[0] * x / norm).collect();
                        if let Some(d) = self.target(&mut ng, grads, *a) {
                            add_into(d, &dx);
                        }
                    }
                }
                Op::CrfLogZ {
                    emissions,
                    trans,
                    start,
                } => {
                    let (len, ntags) = self.shape(*emissions);
                    let (de, dt, ds) = crf_marginals(
                        self.value(*emissions),
                        self.value(*trans),
                        self.value(*start),
                        len,
                        ntags,
                    );
                    let scale = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| x * g[0]).collect() };
                    let (de, dt, ds) = (scale(de), scale(dt), scale(ds));
                    if let Some(d) = self.target(&mut ng, grads, *emissions) {
                        add_into(d, &de);
                    }
                    if let Some(d) = self.target(&mut ng, grads, *trans) {
                        add_into(d, &dt);
                    }
                    if let Some(d) = self.target(&mut ng, grads, *start) {
                        add_into(d, &ds);
                    }
                }
            }
        }
    }

    /// Gradient destination for `v`: the store-shaped buffer for parameter
    /// leaves, a lazily allocated node buffer otherwise, nothing for constants.
    fn target<'a>(
        &self,
        ng: &'a mut [Option<Vec<f64>>],
        grads: &'a mut Grads,
        v: Var,
    ) -> Option<&'a mut [f64]> {
        match self.nodes[v.0].op {
            Op::Const => None,
            Op::Param(id) => Some(&mut grads.data[id.index()]),
            _ => {
                let n = self.len(v);
                Some(ng[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| x - lse).collect()
}

fn crf_alpha(em: &[f64], trans: &[f64], start: &[f64], len: usize, t: usize) -> Vec<Vec<f64>> {
    let mut alpha = vec![vec![0.0; t]; len];
    for j in 0..t {
        alpha[0][j] = start[j] + em[j];
    }
    let mut buf = vec![0.0; t];
    for pos in 1..len {
        for j in 0..t {
            for i in 0..t {
                buf[i] = alpha[pos - 1][i] + trans[i * t + j];
            }
            alpha[pos][j] = log_sum_exp(&buf) + em[pos * t + j];
        }
    }
    alpha
}

fn crf_beta(em: &[f64], trans: &[f64], len: usize, t: usize) -> Vec<Vec<f64>> {
    let mut beta = vec![vec![0.0; t]; len];
    let mut buf = vec![0.0; t];
    for pos in (0..len.saturating_sub(1)).rev() {
        for i in 0..t {
            for j in 0..t {
                buf[j] = trans[i * t + j] + em[(pos + 1) * t + j] + beta[pos + 1][j];
            }
            beta[pos][i] = log_sum_exp(&buf);
        }
    }
    beta
}

/// Node and edge marginals, i.e. the gradient of the log-partition with
/// respect to emissions, transitions and start scores.
fn crf_marginals(
    em: &[f64],
    trans: &[f64],
    start: &[f64],
    len: usize,
    t: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let alpha = crf_alpha(em, trans, start, len, t);
    let beta = crf_beta(em, trans, len, t);
    let log_z = log_sum_exp(&alpha[len - 1]);
    let mut de = vec![0.0; len * t];
    for pos in 0..len {
        for j in 0..t {
            de[pos * t + j] = (alpha[pos][j] + beta[pos][j] - log_z).exp();
        }
    }
    let ds = de[..t].to_vec();
    let mut dt = vec![0.0; t * t];
    for pos in 1..len {
        for i in 0..t {
            for j in 0..t {
                dt[i * t + j] += (alpha[pos - 1][i] + trans[i * t + j] + em[pos * t + j]
                    + beta[pos][j]
                    - log_z)
                    .exp();
            }
        }
    }
    (de, dt, ds)
}
