//! The primal model: BLSTM sentence encoder, attention intent classifier and
//! one of three slot taggers (independent softmax, linear-chain CRF, or a
//! focus decoder conditioned on the previous tag).

mod crf;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crf::{log_partition, sequence_score, viterbi_decode};

use crate::autograd::{Graph, Var};
use crate::corpus::{repair_iob, summarize, LabeledExample, SemanticForm, Vocabulary};
use crate::error::{Error, Result};
use crate::layers::{Attention, Blstm, LstmCell, INIT_RANGE};
use crate::params::{Grads, Init, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaggerMode {
    Softmax,
    Crf,
    Focus,
}

impl FromStr for TaggerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(TaggerMode::Softmax),
            "crf" => Ok(TaggerMode::Crf),
            "focus" => Ok(TaggerMode::Focus),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for TaggerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaggerMode::Softmax => "softmax",
            TaggerMode::Crf => "crf",
            TaggerMode::Focus => "focus",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NluConfig {
    pub mode: TaggerMode,
    pub embed_dim: usize,
    pub hidden: usize,
    pub tag_embed_dim: usize,
    pub dropout: f64,
}

impl Default for NluConfig {
    fn default() -> Self {
        NluConfig {
            mode: TaggerMode::Focus,
            embed_dim: 400,
            hidden: 256,
            tag_embed_dim: 100,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
enum TagHead {
    Softmax {
        out: ParamId,
    },
    Crf {
        out: ParamId,
        trans: ParamId,
        start: ParamId,
    },
    Focus {
        tag_embed: ParamId,
        start_tag: ParamId,
        decoder: LstmCell,
        out: ParamId,
    },
}

#[derive(Debug, Clone)]
struct Layout {
    embed: ParamId,
    encoder: Blstm,
    intent_att: Attention,
    intent_out: ParamId,
    head: TagHead,
}

/// Sentence, tags and intent as indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexedExample {
    pub words: Vec<usize>,
    pub tags: Vec<usize>,
    pub intent: usize,
}

/// Raw model outputs for one sentence.
#[derive(Debug, Clone)]
pub struct NluOutput {
    /// Log-distribution over intents.
    pub intent_logprobs: Vec<f64>,
    pub tags: TagScores,
    /// Encoder hiddens `h_i = →h_i ⊕ ←h_i`.
    pub encoder: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub enum TagScores {
    /// Per-position log-distributions over tags (softmax and focus heads).
    Distributions(Vec<Vec<f64>>),
    /// Unnormalized emissions plus the transition and start scores.
    Crf {
        emissions: Vec<Vec<f64>>,
        transitions: Tensor,
        start: Vec<f64>,
    },
}

/// Top-1 reading of a sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub form: SemanticForm,
    /// Predicted tags after IOB repair.
    pub tags: Vec<String>,
    pub intent_id: usize,
}

/// One entry of the K-best tag beam.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub form: SemanticForm,
    /// Raw tag indices as searched (before repair).
    pub tag_ids: Vec<usize>,
    /// Tags after IOB repair, used for the summary.
    pub tags: Vec<String>,
    /// `log p(tags | x)` of the raw sequence.
    pub log_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub intent: f64,
    pub tags: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.intent + self.tags
    }
}

struct Encoded {
    hiddens: Vec<Var>,
    bwd_first: Var,
    intent_logp: Var,
}

#[derive(Debug, Clone)]
pub struct NluModel {
    pub config: NluConfig,
    pub vocab: Arc<Vocabulary>,
    pub params: ParamStore,
    layout: Layout,
}

impl NluModel {
    pub fn new(config: NluConfig, vocab: Arc<Vocabulary>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let init = Init::Uniform(INIT_RANGE);
        let n = config.hidden;
        let t = vocab.num_tags();
        let embed = store.add("nlu.embed", vocab.num_words(), config.embed_dim, init, &mut rng);
        let encoder = Blstm::new(&mut store, "nlu.encoder", config.embed_dim, n, &mut rng);
        let intent_att = Attention::new(&mut store, "nlu.intent_att", n, 2 * n, n, &mut rng);
        let intent_out = store.add("nlu.intent_out", vocab.num_intents(), 2 * n, init, &mut rng);
        let head = match config.mode {
            TaggerMode::Softmax => TagHead::Softmax {
                out: store.add("nlu.tag_out", t, 2 * n, init, &mut rng),
            },
            TaggerMode::Crf => TagHead::Crf {
                out: store.add("nlu.tag_out", t, 2 * n, init, &mut rng),
                trans: store.add("nlu.crf.trans", t, t, init, &mut rng),
                start: store.add("nlu.crf.start", t, 1, init, &mut rng),
            },
            TaggerMode::Focus => {
                let d = config.tag_embed_dim;
                TagHead::Focus {
                    tag_embed: store.add("nlu.focus.tag_embed", t, d, init, &mut rng),
                    start_tag: store.add("nlu.focus.start_tag", d, 1, init, &mut rng),
                    decoder: LstmCell::new(&mut store, "nlu.focus.decoder", 2 * n + d, n, &mut rng),
                    out: store.add("nlu.tag_out", t, n, init, &mut rng),
                }
            }
        };
        NluModel {
            config,
            vocab,
            params: store,
            layout: Layout {
                embed,
                encoder,
                intent_att,
                intent_out,
                head,
            },
        }
    }

    /// Replaces the word embedding table (e.g. with pretrained rows).
    pub fn set_embeddings(&mut self, table: Tensor) -> Result<()> {
        let cur = self.params.get(self.layout.embed);
        if (cur.rows, cur.cols) != (table.rows, table.cols) {
            return Err(Error::InvalidArgument(format!(
                "embedding table is {}x{}, expected {}x{}",
                table.rows, table.cols, cur.rows, cur.cols
            )));
        }
        *self.params.get_mut(self.layout.embed) = table;
        Ok(())
    }

    pub fn mode(&self) -> TaggerMode {
        self.config.mode
    }

    pub fn index(&self, e: &LabeledExample) -> Result<IndexedExample> {
        if e.tokens.len() != e.tags.len() {
            return Err(Error::LengthMismatch {
                left: e.tokens.len(),
                right: e.tags.len(),
            });
        }
        let tags = e
            .tags
            .iter()
            .map(|t| {
                self.vocab
                    .tag_id(t)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown tag {t:?}")))
            })
            .collect::<Result<_>>()?;
        let intent = self
            .vocab
            .intent_id(&e.intent)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown intent {:?}", e.intent)))?;
        Ok(IndexedExample {
            words: self.vocab.encode(&e.tokens),
            tags,
            intent,
        })
    }

    fn encode(&self, g: &mut Graph, words: &[usize], mut rng: Option<&mut ChaCha8Rng>) -> Encoded {
        let p = self.config.dropout;
        let inputs: Vec<Var> = words
            .iter()
            .map(|&w| {
                let e = g.row(self.layout.embed, w);
                g.dropout(e, p, rng.as_deref_mut())
            })
            .collect();
        let out = self.layout.encoder.run(g, &inputs);
        let hiddens: Vec<Var> = out
            .hiddens
            .iter()
            .map(|&h| g.dropout(h, p, rng.as_deref_mut()))
            .collect();
        let bwd_first = out.bwd[0];
        let (z, _) = self.layout.intent_att.attend(g, bwd_first, &hiddens);
        let w1 = g.param(self.layout.intent_out);
        let logits = g.matvec(w1, z);
        let intent_logp = g.log_softmax(logits);
        Encoded {
            hiddens,
            bwd_first,
            intent_logp,
        }
    }

    /// One focus-decoder step from `(h, c)` having emitted `prev` (None at the start).
    fn focus_step(&self, g: &mut Graph, h_sen: Var, prev: Option<usize>, h: Var, c: Var) -> (Var, Var, Var) {
        let TagHead::Focus {
            tag_embed,
            start_tag,
            decoder,
            out,
        } = &self.layout.head
        else {
            unreachable!("focus step on a non-focus head")
        };
        let prev_emb = match prev {
            Some(t) => g.row(*tag_embed, t),
            None => g.param(*start_tag),
        };
        let x = g.concat(&[h_sen, prev_emb]);
        let (h2, c2) = decoder.step(g, x, h, c);
        let w3 = g.param(*out);
        let logits = g.matvec(w3, h2);
        let logp = g.log_softmax(logits);
        (logp, h2, c2)
    }

    fn emissions(&self, g: &mut Graph, enc: &Encoded, out: ParamId) -> Vec<Var> {
        let w = g.param(out);
        enc.hiddens.iter().map(|&h| g.matvec(w, h)).collect()
    }

    /// Builds `(-log p(intent|x), -log p(tags|x))` on the graph.
    fn loss_vars(&self, g: &mut Graph, ex: &IndexedExample, rng: Option<&mut ChaCha8Rng>) -> (Var, Var) {
        let enc = self.encode(g, &ex.words, rng);
        let intent_lp = g.pick(enc.intent_logp, ex.intent);
        let intent_nll = g.scale(intent_lp, -1.0);
        let tag_lp = match &self.layout.head {
            TagHead::Softmax { out } => {
                let w = g.param(*out);
                let terms: Vec<Var> = enc
                    .hiddens
                    .iter()
                    .zip(&ex.tags)
                    .map(|(&h, &t)| {
                        let logits = g.matvec(w, h);
                        let lp = g.log_softmax(logits);
                        g.pick(lp, t)
                    })
                    .collect();
                g.add_all(&terms)
            }
            TagHead::Crf { out, trans, start } => {
                let em = self.emissions(g, &enc, *out);
                let tr = g.param(*trans);
                let st = g.param(*start);
                let mut terms = Vec::with_capacity(2 * em.len());
                terms.push(g.pick(st, ex.tags[0]));
                let ntags = self.vocab.num_tags();
                for (i, (&e, &t)) in em.iter().zip(&ex.tags).enumerate() {
                    terms.push(g.pick(e, t));
                    if i > 0 {
                        terms.push(g.pick(tr, ex.tags[i - 1] * ntags + t));
                    }
                }
                let gold = g.add_all(&terms);
                let stacked = g.stack(&em);
                let log_z = g.crf_log_z(stacked, tr, st);
                g.sub(gold, log_z)
            }
            TagHead::Focus { .. } => {
                let mut h = enc.bwd_first;
                let mut c = g.zeros(self.config.hidden);
                let mut terms = Vec::with_capacity(ex.tags.len());
                for (i, &t) in ex.tags.iter().enumerate() {
                    let prev = if i == 0 { None } else { Some(ex.tags[i - 1]) };
                    let (lp, h2, c2) = self.focus_step(g, enc.hiddens[i], prev, h, c);
                    terms.push(g.pick(lp, t));
                    h = h2;
                    c = c2;
                }
                g.add_all(&terms)
            }
        };
        let tag_nll = g.scale(tag_lp, -1.0);
        (intent_nll, tag_nll)
    }

    /// Loss of an example without dropout, split into its two terms.
    pub fn loss(&self, e: &LabeledExample) -> Result<LossTerms> {
        let ex = self.index(e)?;
        if ex.words.is_empty() {
            return Err(Error::InvalidArgument("empty sentence".into()));
        }
        let mut g = Graph::new(&self.params);
        let (i, t) = self.loss_vars(&mut g, &ex, None);
        Ok(LossTerms {
            intent: g.scalar(i),
            tags: g.scalar(t),
        })
    }

    /// Adds `weight * ∇ L_NLU` into `grads` and returns the loss value.
    /// Dropout is active only when `rng` is given.
    pub fn accumulate(
        &self,
        ex: &IndexedExample,
        weight: f64,
        grads: &mut Grads,
        rng: Option<&mut ChaCha8Rng>,
    ) -> f64 {
        let mut g = Graph::new(&self.params);
        let (i, t) = self.loss_vars(&mut g, ex, rng);
        let total = g.add(i, t);
        if weight != 0.0 {
            g.backward(total, weight, grads);
        }
        g.scalar(total)
    }

    /// Raw forward pass. `teacher_tags` drives the focus decoder; without them
    /// it feeds back its own greedy predictions.
    pub fn forward(&self, tokens: &[String], teacher_tags: Option<&[String]>) -> Result<NluOutput> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty sentence".into()));
        }
        let teacher: Option<Vec<usize>> = match teacher_tags {
            Some(tags) => {
                if tags.len() != tokens.len() {
                    return Err(Error::LengthMismatch {
                        left: tokens.len(),
                        right: tags.len(),
                    });
                }
                Some(
                    tags.iter()
                        .map(|t| {
                            self.vocab
                                .tag_id(t)
                                .ok_or_else(|| Error::InvalidArgument(format!("unknown tag {t:?}")))
                        })
                        .collect::<Result<_>>()?,
                )
            }
            None => None,
        };
        let words = self.vocab.encode(tokens);
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, &words, None);
        let tags = match &self.layout.head {
            TagHead::Softmax { out } => {
                let em = self.emissions(&mut g, &enc, *out);
                TagScores::Distributions(
                    em.iter()
                        .map(|&e| crate::autograd::log_softmax(g.value(e)))
                        .collect(),
                )
            }
            TagHead::Crf { out, trans, start } => {
                let em = self.emissions(&mut g, &enc, *out);
                TagScores::Crf {
                    emissions: em.iter().map(|&e| g.value(e).to_vec()).collect(),
                    transitions: self.params.get(*trans).clone(),
                    start: self.params.get(*start).data.clone(),
                }
            }
            TagHead::Focus { .. } => {
                let mut h = enc.bwd_first;
                let mut c = g.zeros(self.config.hidden);
                let mut prev = None;
                let mut dists = Vec::with_capacity(words.len());
                for i in 0..words.len() {
                    let (lp, h2, c2) = self.focus_step(&mut g, enc.hiddens[i], prev, h, c);
                    let dist = g.value(lp).to_vec();
                    prev = Some(match &teacher {
                        Some(t) => t[i],
                        None => argmax(&dist),
                    });
                    dists.push(dist);
                    h = h2;
                    c = c2;
                }
                TagScores::Distributions(dists)
            }
        };
        Ok(NluOutput {
            intent_logprobs: g.value(enc.intent_logp).to_vec(),
            tags,
            encoder: enc.hiddens.iter().map(|&h| g.value(h).to_vec()).collect(),
        })
    }

    /// Intent argmax plus per-step argmax, Viterbi or greedy focus decoding.
    pub fn decode_top1(&self, tokens: &[String]) -> Decoded {
        if tokens.is_empty() {
            let intent_id = 0;
            return Decoded {
                form: SemanticForm::new(self.vocab.intent(intent_id), Vec::new()),
                tags: Vec::new(),
                intent_id,
            };
        }
        let out = self.forward(tokens, None).expect("non-empty input");
        let intent_id = argmax(&out.intent_logprobs);
        let ids: Vec<usize> = match &out.tags {
            TagScores::Distributions(d) => d.iter().map(|p| argmax(p)).collect(),
            TagScores::Crf {
                emissions,
                transitions,
                start,
            } => viterbi_decode(emissions, transitions, start),
        };
        let tags = repair_iob(&ids.iter().map(|&t| self.vocab.tag(t)).collect::<Vec<_>>());
        Decoded {
            form: summarize(self.vocab.intent(intent_id), tokens, &tags),
            tags,
            intent_id,
        }
    }

    /// `log p(tags | x)` of a given tag index sequence.
    pub fn tags_logprob(&self, tokens: &[String], tags: &[usize]) -> f64 {
        let words = self.vocab.encode(tokens);
        let mut g = Graph::new(&self.params);
        let ex = IndexedExample {
            words,
            tags: tags.to_vec(),
            intent: 0,
        };
        let (_, t) = self.loss_vars(&mut g, &ex, None);
        -g.scalar(t)
    }

    /// K-best tag sequences by summed log-probability, each paired with the
    /// top-1 intent. Scores are non-increasing; ties are ordered by tag indices.
    pub fn beam_decode(&self, tokens: &[String], k: usize) -> Vec<Hypothesis> {
        assert!(k >= 1, "beam width must be at least 1");
        if tokens.is_empty() {
            return Vec::new();
        }
        let words = self.vocab.encode(tokens);
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, &words, None);
        let intent_id = argmax(g.value(enc.intent_logp));
        let ntags = self.vocab.num_tags();
        let beams: Vec<(Vec<usize>, f64)> = match &self.layout.head {
            TagHead::Softmax { out } => {
                let em = self.emissions(&mut g, &enc, *out);
                let dists: Vec<Vec<f64>> = em.iter().map(|&e| crate::autograd::log_softmax(g.value(e))).collect();
                let mut beam = vec![(Vec::new(), 0.0)];
                for d in &dists {
                    beam = prune(
                        beam.iter()
                            .flat_map(|(seq, s)| (0..ntags).map(move |t| ([seq.as_slice(), &[t]].concat(), s + d[t])))
                            .collect(),
                        k,
                    );
                }
                beam
            }
            TagHead::Crf { out, trans, start } => {
                let em = self.emissions(&mut g, &enc, *out);
                let em: Vec<Vec<f64>> = em.iter().map(|&e| g.value(e).to_vec()).collect();
                let tr = self.params.get(*trans);
                let st = &self.params.get(*start).data;
                let log_z = log_partition(&em, tr, st);
                crf::k_best(&em, tr, st, k).into_iter().map(|(seq, s)| (seq, s - log_z)).collect()
            }
            TagHead::Focus { .. } => {
                struct State {
                    seq: Vec<usize>,
                    score: f64,
                    h: Var,
                    c: Var,
                }
                let c0 = g.zeros(self.config.hidden);
                let mut beam = vec![State {
                    seq: Vec::new(),
                    score: 0.0,
                    h: enc.bwd_first,
                    c: c0,
                }];
                for i in 0..words.len() {
                    let mut cands: Vec<(Vec<usize>, f64)> = Vec::new();
                    let mut states = Vec::new();
                    for (bi, st) in beam.iter().enumerate() {
                        let (lp, h2, c2) = self.focus_step(&mut g, enc.hiddens[i], st.seq.last().copied(), st.h, st.c);
                        let d = g.value(lp);
                        for t in 0..ntags {
                            cands.push(([st.seq.as_slice(), &[t]].concat(), st.score + d[t]));
                            states.push((bi, h2, c2));
                        }
                    }
                    let mut order: Vec<usize> = (0..cands.len()).collect();
                    order.sort_by(|&a, &b| cmp_hyp(&cands[a], &cands[b]));
                    beam = order
                        .into_iter()
                        .take(k)
                        .map(|j| {
                            let (_, h, c) = states[j];
                            State {
                                seq: cands[j].0.clone(),
                                score: cands[j].1,
                                h,
                                c,
                            }
                        })
                        .collect();
                }
                beam.into_iter().map(|s| (s.seq, s.score)).collect()
            }
        };
        let intent = self.vocab.intent(intent_id).to_string();
        beams
            .into_iter()
            .map(|(ids, log_score)| {
                let tags = repair_iob(&ids.iter().map(|&t| self.vocab.tag(t)).collect::<Vec<_>>());
                Hypothesis {
                    form: summarize(&intent, tokens, &tags),
                    tag_ids: ids,
                    tags,
                    log_score,
                }
            })
            .collect()
    }
}

fn cmp_hyp(a: &(Vec<usize>, f64), b: &(Vec<usize>, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0))
}

fn prune(mut cands: Vec<(Vec<usize>, f64)>, k: usize) -> Vec<(Vec<usize>, f64)> {
    cands.sort_by(cmp_hyp);
    cands.truncate(k);
    cands
}

/// Index of the maximum; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
