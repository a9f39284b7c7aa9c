//! The dual model: hierarchical slot-value encoder and a semantically
//! conditioned LSTM decoder with attention and a copy gate, generating
//! delexicalized sentences from semantic forms.
//!
//! Output vocabulary layout: index 0 is end-of-sequence, 1 is the unknown
//! word, then every ordinary word, then one placeholder per slot. The decoder
//! input table has one extra row for the start symbol.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::corpus::{relexicalize, DelexToken, DelexicalizedForm, LabeledExample, Relexicalization, SemanticForm, Vocabulary};
use crate::error::{Error, Result};
use crate::layers::{Attention, Blstm, INIT_RANGE};
use crate::params::{Grads, Init, ParamId, ParamStore};

/// Weight η of the per-step slot-state penalty.
pub const SC_ETA: f64 = 1e-4;
/// Base ξ of the per-step slot-state penalty.
pub const SC_XI: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsgConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub intent_dim: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl Default for SsgConfig {
    fn default() -> Self {
        SsgConfig {
            embed_dim: 400,
            hidden: 256,
            intent_dim: 400,
            dropout: 0.5,
            max_len: 60,
        }
    }
}

/// SC-LSTM cell: an LSTM whose cell state also receives `tanh(W_dc s_t)`,
/// where the slot state decays through the reading gate
/// `r_t = σ(W_r (x_t ⊕ d_{t-1}))`, `s_t = r_t ⊙ s_{t-1}`.
#[derive(Debug, Clone)]
struct ScLstm {
    w: ParamId,
    b: ParamId,
    wr: ParamId,
    wdc: ParamId,
    hidden: usize,
}

#[derive(Debug, Clone, Copy)]
struct DecState {
    d: Var,
    c: Var,
    s: Var,
}

impl ScLstm {
    fn step(&self, g: &mut Graph, x: Var, st: DecState) -> DecState {
        let n = self.hidden;
        let xh = g.concat(&[x, st.d]);
        let wr = g.param(self.wr);
        let rz = g.matvec(wr, xh);
        let r = g.sigmoid(rz);
        let s = g.mul(r, st.s);
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
        let wdc = g.param(self.wdc);
        let sd = g.matvec(wdc, s);
        let sd = g.tanh(sd);
        let fc = g.mul(f, st.c);
        let ic = g.mul(i, cand);
        let c = g.add(fc, ic);
        let c = g.add(c, sd);
        let tc = g.tanh(c);
        let d = g.mul(o, tc);
        DecState { d, c, s }
    }
}

#[derive(Debug, Clone)]
struct Layout {
    in_embed: ParamId,
    local: Blstm,
    global: Blstm,
    intent_embed: ParamId,
    init_att: Attention,
    w0: ParamId,
    dec_embed: ParamId,
    cell: ScLstm,
    step_att: Attention,
    w_out: ParamId,
    v_gate: ParamId,
}

/// A semantic form as indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedForm {
    pub intent: usize,
    /// Per pair: slot index and the encoder tokens `(slot, "=", value...)`.
    pub pairs: Vec<(usize, Vec<usize>)>,
}

/// A form with its teacher sequence of output indices (ending in EOS).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SsgExample {
    pub form: IndexedForm,
    pub targets: Vec<usize>,
}

/// Decoder quantities at one step.
#[derive(Debug, Clone)]
pub struct SsgStep {
    /// `g·p_gen + (1-g)·p_copy` over the output vocabulary.
    pub mixture: Vec<f64>,
    pub p_gen: Vec<f64>,
    pub p_copy: Vec<f64>,
    pub gate: f64,
    pub slot_state: Vec<f64>,
    /// Attention over the `M` pairs (empty when `M = 0`).
    pub attention: Vec<f64>,
}

/// Encoder outputs for one form.
#[derive(Debug, Clone)]
pub struct SemanticEncoding {
    pub global: Vec<Vec<f64>>,
    pub local_means: Vec<Vec<f64>>,
    pub intent: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsgLoss {
    pub nll: f64,
    pub sc: f64,
}

impl SsgLoss {
    pub fn total(&self) -> f64 {
        self.nll + self.sc
    }
}

/// A generated delexicalized sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub delex: DelexicalizedForm,
    /// Output indices without the final EOS.
    pub ids: Vec<usize>,
    /// Summed log-probability, EOS included when emitted.
    pub log_score: f64,
    /// Hit the length bound without emitting EOS.
    pub truncated: bool,
}

impl Generation {
    /// Fills the placeholders with the form's values.
    pub fn realize(&self, form: &SemanticForm) -> Relexicalization {
        relexicalize(&self.delex, &form.pairs)
    }
}

struct Encoded {
    global: Vec<Var>,
    locals: Vec<Var>,
    intent: Var,
    copy: Option<Var>,
    init: DecState,
}

#[derive(Debug, Clone)]
pub struct SsgModel {
    pub config: SsgConfig,
    pub vocab: Arc<Vocabulary>,
    pub params: ParamStore,
    layout: Layout,
}

impl SsgModel {
    pub fn new(config: SsgConfig, vocab: Arc<Vocabulary>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let init = Init::Uniform(INIT_RANGE);
        let (e, n, di) = (config.embed_dim, config.hidden, config.intent_dim);
        let ns = vocab.num_slots();
        let out = vocab.num_words() - 2 + ns;
        let in_embed = store.add("ssg.in_embed", vocab.num_words() + ns + 1, e, init, &mut rng);
        let local = Blstm::new(&mut store, "ssg.local", e, n, &mut rng);
        let global = Blstm::new(&mut store, "ssg.global", 2 * n, n, &mut rng);
        let intent_embed = store.add("ssg.intent_embed", vocab.num_intents(), di, init, &mut rng);
        let init_att = Attention::new(&mut store, "ssg.init_att", di, 2 * n, n, &mut rng);
        let w0 = store.add("ssg.w0", n, 2 * n, init, &mut rng);
        let dec_embed = store.add("ssg.dec_embed", out + 1, e, init, &mut rng);
        let cell = ScLstm {
            w: store.add("ssg.cell.w", 4 * n, e + di + n, init, &mut rng),
            b: store.add("ssg.cell.b", 4 * n, 1, init, &mut rng),
            wr: store.add("ssg.cell.wr", ns, e + di + n, init, &mut rng),
            wdc: store.add("ssg.cell.wdc", n, ns, init, &mut rng),
            hidden: n,
        };
        let step_att = Attention::new(&mut store, "ssg.step_att", n, 2 * n, n, &mut rng);
        let w_out = store.add("ssg.w_out", out, 3 * n, init, &mut rng);
        let v_gate = store.add("ssg.v_gate", 3 * n, 1, init, &mut rng);
        SsgModel {
            config,
            vocab,
            params: store,
            layout: Layout {
                in_embed,
                local,
                global,
                intent_embed,
                init_att,
                w0,
                dec_embed,
                cell,
                step_att,
                w_out,
                v_gate,
            },
        }
    }

    /// Size of the output vocabulary.
    pub fn out_size(&self) -> usize {
        self.vocab.num_words() - 2 + self.vocab.num_slots()
    }

    pub const EOS_OUT: usize = 0;

    fn bos_in(&self) -> usize {
        self.out_size()
    }

    fn slot_out(&self, slot: usize) -> usize {
        self.vocab.num_words() - 2 + slot
    }

    fn word_out(&self, w: &str) -> usize {
        match self.vocab.word_id(w) {
            Vocabulary::EOS_ID => Self::EOS_OUT,
            id if id < 4 => 1,
            id => id - 2,
        }
    }

    /// Output index to delexicalized token; `None` for EOS.
    pub fn out_token(&self, o: usize) -> Option<DelexToken> {
        let nw = self.vocab.num_words() - 2;
        match o {
            Self::EOS_OUT => None,
            1 => Some(DelexToken::Word(crate::corpus::UNK.to_string())),
            o if o < nw => Some(DelexToken::Word(self.vocab.word(o + 2).to_string())),
            o => Some(DelexToken::Slot(self.vocab.slot(o - nw).to_string())),
        }
    }

    pub fn index_form(&self, form: &SemanticForm) -> Result<IndexedForm> {
        let intent = self
            .vocab
            .intent_id(&form.intent)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown intent {:?}", form.intent)))?;
        let nw = self.vocab.num_words();
        let eq = nw + self.vocab.num_slots();
        let pairs = form
            .pairs
            .iter()
            .map(|p| {
                let s = self.vocab.slot_id(&p.slot).ok_or_else(|| Error::UnknownSlot(p.slot.clone()))?;
                let mut toks = vec![nw + s, eq];
                toks.extend(p.value.iter().map(|w| self.vocab.word_id(w)));
                Ok((s, toks))
            })
            .collect::<Result<_>>()?;
        Ok(IndexedForm { intent, pairs })
    }

    /// `s_0`: one indicator per slot type present in the form.
    pub fn initial_slot_state(&self, form: &SemanticForm) -> Result<Vec<f64>> {
        let f = self.index_form(form)?;
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, &f, None);
        Ok(g.value(enc.init.s).to_vec())
    }

    pub fn target_ids(&self, delex: &DelexicalizedForm) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(delex.len() + 1);
        for t in &delex.tokens {
            out.push(match t {
                DelexToken::Word(w) => self.word_out(w),
                DelexToken::Slot(s) => self.slot_out(self.vocab.slot_id(s).ok_or_else(|| Error::UnknownSlot(s.clone()))?),
            });
        }
        out.push(Self::EOS_OUT);
        Ok(out)
    }

    pub fn index(&self, form: &SemanticForm, delex: &DelexicalizedForm) -> Result<SsgExample> {
        Ok(SsgExample {
            form: self.index_form(form)?,
            targets: self.target_ids(delex)?,
        })
    }

    pub fn index_labeled(&self, e: &LabeledExample) -> Result<SsgExample> {
        self.index(&e.semantic_form(), &e.delexicalized())
    }

    fn encode(&self, g: &mut Graph, form: &IndexedForm, mut rng: Option<&mut ChaCha8Rng>) -> Encoded {
        let p = self.config.dropout;
        let n = self.config.hidden;
        let locals: Vec<Var> = form
            .pairs
            .iter()
            .map(|(_, toks)| {
                let xs: Vec<Var> = toks
                    .iter()
                    .map(|&t| {
                        let e = g.row(self.layout.in_embed, t);
                        g.dropout(e, p, rng.as_deref_mut())
                    })
                    .collect();
                let out = self.layout.local.run(g, &xs);
                let sum = g.add_all(&out.hiddens);
                g.scale(sum, 1.0 / toks.len() as f64)
            })
            .collect();
        let global = if locals.is_empty() {
            Vec::new()
        } else {
            self.layout.global.run(g, &locals).hiddens
        };
        let intent = g.row(self.layout.intent_embed, form.intent);
        let (z0, _) = self.layout.init_att.attend(g, intent, &global);
        let w0 = g.param(self.layout.w0);
        let d = g.matvec(w0, z0);
        let c = g.zeros(n);
        let mut s0 = vec![0.0; self.vocab.num_slots()];
        for (s, _) in &form.pairs {
            s0[*s] = 1.0;
        }
        let s = g.constant(s0);
        let copy = if form.pairs.is_empty() {
            None
        } else {
            let out = self.out_size();
            let mut m = vec![0.0; form.pairs.len() * out];
            for (k, (s, _)) in form.pairs.iter().enumerate() {
                m[k * out + self.slot_out(*s)] = 1.0;
            }
            Some(g.constant_matrix(form.pairs.len(), out, m))
        };
        Encoded {
            global,
            locals,
            intent,
            copy,
            init: DecState { d, c, s },
        }
    }

    /// One decoder step; returns the mixture node, gate, attention and new state.
    fn step(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        prev: usize,
        st: DecState,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Var, Var, Option<Var>, Var, DecState) {
        let p = self.config.dropout;
        let mut rng = rng;
        let e = g.row(self.layout.dec_embed, prev);
        let e = g.dropout(e, p, rng.as_deref_mut());
        let x = g.concat(&[e, enc.intent]);
        let next = self.layout.cell.step(g, x, st);
        let (z, att) = self.layout.step_att.attend(g, next.d, &enc.global);
        let dz = g.concat(&[next.d, z]);
        let dz = g.dropout(dz, p, rng);
        let wo = g.param(self.layout.w_out);
        let logits = g.matvec(wo, dz);
        let p_gen = g.softmax(logits);
        let vg = g.param(self.layout.v_gate);
        let gz = g.mul(vg, dz);
        let gz = g.sum(gz);
        let gate = g.sigmoid(gz);
        let mix = match (enc.copy, att) {
            (Some(cm), Some(a)) => {
                let p_copy = g.mat_t_vec(cm, a);
                let gen = g.scale_by(p_gen, gate);
                let rest = g.affine(gate, -1.0, 1.0);
                let cp = g.scale_by(p_copy, rest);
                g.add(gen, cp)
            }
            _ => p_gen,
        };
        (mix, gate, att, p_gen, next)
    }

    /// Builds `(NLL, L_SC)` under teacher forcing.
    fn loss_vars(&self, g: &mut Graph, ex: &SsgExample, mut rng: Option<&mut ChaCha8Rng>) -> (Var, Var) {
        let enc = self.encode(g, &ex.form, rng.as_deref_mut());
        let mut st = enc.init;
        let mut prev = self.bos_in();
        let mut nll_terms = Vec::with_capacity(ex.targets.len());
        let mut sc_terms = Vec::with_capacity(ex.targets.len() + 1);
        for &t in &ex.targets {
            let (mix, _, _, _, next) = self.step(g, &enc, prev, st, rng.as_deref_mut());
            let pt = g.pick(mix, t);
            nll_terms.push(g.log(pt));
            let ds = g.sub(next.s, st.s);
            let dn = g.norm2(ds);
            let ex = g.affine(dn, SC_XI.ln(), 0.0);
            let ex = g.exp(ex);
            sc_terms.push(g.scale(ex, SC_ETA));
            st = next;
            prev = t;
        }
        let ll = g.add_all(&nll_terms);
        let nll = g.scale(ll, -1.0);
        sc_terms.push(g.norm2(st.s));
        let sc = g.add_all(&sc_terms);
        (nll, sc)
    }

    pub fn loss(&self, form: &SemanticForm, delex: &DelexicalizedForm) -> Result<SsgLoss> {
        let ex = self.index(form, delex)?;
        Ok(self.loss_indexed(&ex))
    }

    pub fn loss_indexed(&self, ex: &SsgExample) -> SsgLoss {
        let mut g = Graph::new(&self.params);
        let (nll, sc) = self.loss_vars(&mut g, ex, None);
        SsgLoss {
            nll: g.scalar(nll),
            sc: g.scalar(sc),
        }
    }

    /// Adds `weight * ∇ L_SSG` into `grads` and returns the loss value.
    pub fn accumulate(&self, ex: &SsgExample, weight: f64, grads: &mut Grads, rng: Option<&mut ChaCha8Rng>) -> f64 {
        let mut g = Graph::new(&self.params);
        let (nll, sc) = self.loss_vars(&mut g, ex, rng);
        let total = g.add(nll, sc);
        if weight != 0.0 {
            g.backward(total, weight, grads);
        }
        g.scalar(total)
    }

    pub fn encode_semantics(&self, form: &SemanticForm) -> Result<SemanticEncoding> {
        let f = self.index_form(form)?;
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, &f, None);
        Ok(SemanticEncoding {
            global: enc.global.iter().map(|&v| g.value(v).to_vec()).collect(),
            local_means: enc.locals.iter().map(|&v| g.value(v).to_vec()).collect(),
            intent: g.value(enc.intent).to_vec(),
        })
    }

    /// Teacher-forced step outputs.
    pub fn forward(&self, form: &SemanticForm, teacher: &DelexicalizedForm) -> Result<Vec<SsgStep>> {
        let ex = self.index(form, teacher)?;
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, &ex.form, None);
        let mut st = enc.init;
        let mut prev = self.bos_in();
        let mut out = Vec::with_capacity(ex.targets.len());
        for &t in &ex.targets {
            let (mix, gate, att, p_gen, next) = self.step(&mut g, &enc, prev, st, None);
            let attention = att.map(|a| g.value(a).to_vec()).unwrap_or_default();
            let mut p_copy = vec![0.0; self.out_size()];
            for (k, (s, _)) in ex.form.pairs.iter().enumerate() {
                p_copy[self.slot_out(*s)] += attention[k];
            }
            out.push(SsgStep {
                mixture: g.value(mix).to_vec(),
                p_gen: g.value(p_gen).to_vec(),
                p_copy,
                gate: g.scalar(gate),
                slot_state: g.value(next.s).to_vec(),
                attention,
            });
            st = next;
            prev = t;
        }
        Ok(out)
    }

    /// Summed log-probability of an output index sequence (EOS only if listed).
    pub fn sequence_logprob(&self, form: &SemanticForm, ids: &[usize]) -> Result<f64> {
        let f = self.index_form(form)?;
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, &f, None);
        let mut st = enc.init;
        let mut prev = self.bos_in();
        let mut total = 0.0;
        for &t in ids {
            let (mix, _, _, _, next) = self.step(&mut g, &enc, prev, st, None);
            total += g.value(mix)[t].ln();
            st = next;
            prev = t;
        }
        Ok(total)
    }

    pub fn greedy(&self, form: &SemanticForm) -> Result<Generation> {
        Ok(self.beam(form, 1)?.remove(0))
    }

    /// Beam search over output sequences by raw summed log-probability.
    /// Finished hypotheses stay in the pool; results are sorted by score with
    /// ties broken by the index sequence.
    pub fn beam(&self, form: &SemanticForm, k: usize) -> Result<Vec<Generation>> {
        assert!(k >= 1, "beam width must be at least 1");
        let f = self.index_form(form)?;
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, &f, None);
        struct Live {
            ids: Vec<usize>,
            score: f64,
            st: DecState,
        }
        let mut live = vec![Live {
            ids: Vec::new(),
            score: 0.0,
            st: enc.init,
        }];
        let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
        let out = self.out_size();
        for _ in 0..self.config.max_len {
            let mut cands: Vec<(usize, usize, f64, DecState)> = Vec::with_capacity(live.len() * out);
            for (li, h) in live.iter().enumerate() {
                let prev = h.ids.last().copied().unwrap_or(self.bos_in());
                let (mix, _, _, _, next) = self.step(&mut g, &enc, prev, h.st, None);
                for (o, &p) in g.value(mix).iter().enumerate() {
                    cands.push((li, o, h.score + p.ln(), next));
                }
            }
            enum Entry {
                Fin(usize),
                Cand(usize),
            }
            let mut pool: Vec<Entry> = (0..finished.len()).map(Entry::Fin).chain((0..cands.len()).map(Entry::Cand)).collect();
            let key = |e: &Entry| -> (f64, &[usize], Option<usize>) {
                match *e {
                    Entry::Fin(i) => (finished[i].1, &finished[i].0, Some(Self::EOS_OUT)),
                    Entry::Cand(i) => (cands[i].2, &live[cands[i].0].ids, Some(cands[i].1)),
                }
            };
            pool.sort_by(|a, b| {
                let (sa, ia, la) = key(a);
                let (sb, ib, lb) = key(b);
                sb.partial_cmp(&sa)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| ia.iter().chain(la.iter()).cmp(ib.iter().chain(lb.iter())))
            });
            pool.truncate(k);
            let mut next_fin = Vec::new();
            let mut next_live = Vec::new();
            for e in &pool {
                match *e {
                    Entry::Fin(i) => next_fin.push(finished[i].clone()),
                    Entry::Cand(i) => {
                        let (li, o, score, st) = cands[i];
                        let mut ids = live[li].ids.clone();
                        if o == Self::EOS_OUT {
                            next_fin.push((ids, score));
                        } else {
                            ids.push(o);
                            next_live.push(Live { ids, score, st });
                        }
                    }
                }
            }
            finished = next_fin;
            live = next_live;
            if live.is_empty() {
                break;
            }
        }
        let mut all: Vec<(Vec<usize>, f64, bool)> = finished
            .into_iter()
            .map(|(ids, s)| (ids, s, false))
            .chain(live.into_iter().map(|h| (h.ids, h.score, true)))
            .collect();
        all.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.0.iter().chain((!a.2).then_some(&Self::EOS_OUT)).cmp(b.0.iter().chain((!b.2).then_some(&Self::EOS_OUT))))
        });
        Ok(all
            .into_iter()
            .map(|(ids, log_score, truncated)| Generation {
                delex: DelexicalizedForm::new(ids.iter().filter_map(|&o| self.out_token(o)).collect()),
                ids,
                log_score,
                truncated,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests;
