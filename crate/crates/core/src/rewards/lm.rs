//! Fluency scoring: an LSTM language model over words and a trivial unigram
//! model, both behind [`LanguageModel`].

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::layers::{LstmCell, INIT_RANGE};
use crate::params::{batch_gradient, derive_seed, Adam, Grads, Init, ParamId, ParamStore};

pub trait LanguageModel: Sync {
    /// Log-probability of each predicted position of `tokens`.
    fn log_probs(&self, tokens: &[String]) -> Vec<f64>;
}

/// `(1/|x'|) log LM(x')`, averaging over the predicted positions.
pub fn lm_logprob_normalized(lm: &dyn LanguageModel, tokens: &[String]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("empty sentence".into()));
    }
    let lp = lm.log_probs(tokens);
    Ok(lp.iter().sum::<f64>() / lp.len() as f64)
}

/// Position-independent word distribution, optionally with a sentence-end term.
#[derive(Debug, Clone, PartialEq)]
pub struct UnigramLm {
    pub probs: HashMap<String, f64>,
    pub unk: f64,
    pub eos: Option<f64>,
}

impl LanguageModel for UnigramLm {
    fn log_probs(&self, tokens: &[String]) -> Vec<f64> {
        let mut out: Vec<f64> = tokens
            .iter()
            .map(|t| self.probs.get(t).copied().unwrap_or(self.unk).ln())
            .collect();
        if let Some(p) = self.eos {
            out.push(p.ln());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            embed_dim: 400,
            hidden: 256,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig {
            epochs: 50,
            batch_size: 16,
            lr: 1e-3,
            clip: 5.0,
            l2: 1e-5,
            seed: 0,
        }
    }
}

/// Left-to-right LSTM language model; each sentence is read after the start
/// symbol and must predict every word and then the end symbol.
#[derive(Debug, Clone)]
pub struct LstmLm {
    pub config: LmConfig,
    pub vocab: Arc<Vocabulary>,
    pub params: ParamStore,
    embed: ParamId,
    cell: LstmCell,
    out: ParamId,
    out_b: ParamId,
}

impl LstmLm {
    pub fn new(config: LmConfig, vocab: Arc<Vocabulary>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let init = Init::Uniform(INIT_RANGE);
        let v = vocab.num_words();
        let embed = store.add("lm.embed", v, config.embed_dim, init, &mut rng);
        let cell = LstmCell::new(&mut store, "lm.cell", config.embed_dim, config.hidden, &mut rng);
        let out = store.add("lm.out", v, config.hidden, init, &mut rng);
        let out_b = store.add("lm.out_b", v, 1, init, &mut rng);
        LstmLm {
            config,
            vocab,
            params: store,
            embed,
            cell,
            out,
            out_b,
        }
    }

    pub fn out_weights(&self) -> (ParamId, ParamId) {
        (self.out, self.out_b)
    }

    /// Per-position log-probability nodes of `tokens` followed by EOS.
    fn terms(&self, g: &mut Graph, tokens: &[String], mut rng: Option<&mut ChaCha8Rng>) -> Vec<Var> {
        let ids = self.vocab.encode(tokens);
        let inputs: Vec<usize> = std::iter::once(Vocabulary::BOS_ID).chain(ids.iter().copied()).collect();
        let targets: Vec<usize> = ids.iter().copied().chain(std::iter::once(Vocabulary::EOS_ID)).collect();
        let p = self.config.dropout;
        let xs: Vec<Var> = inputs
            .iter()
            .map(|&w| {
                let e = g.row(self.embed, w);
                g.dropout(e, p, rng.as_deref_mut())
            })
            .collect();
        let hs = self.cell.run(g, &xs, None);
        let w = g.param(self.out);
        let b = g.param(self.out_b);
        hs.iter()
            .zip(&targets)
            .map(|(&h, &t)| {
                let h = g.dropout(h, p, rng.as_deref_mut());
                let z = g.matvec(w, h);
                let z = g.add(z, b);
                let lp = g.log_softmax(z);
                g.pick(lp, t)
            })
            .collect()
    }

    /// Adds `weight * ∇ NLL(sentence)` into `grads`; returns the NLL and the
    /// number of predicted positions.
    pub fn accumulate(&self, tokens: &[String], weight: f64, grads: &mut Grads, rng: Option<&mut ChaCha8Rng>) -> (f64, usize) {
        let mut g = Graph::new(&self.params);
        let terms = self.terms(&mut g, tokens, rng);
        let n = terms.len();
        let ll = g.add_all(&terms);
        let nll = g.scale(ll, -1.0);
        if weight != 0.0 {
            g.backward(nll, weight, grads);
        }
        (g.scalar(nll), n)
    }

    /// Per-token perplexity over a corpus.
    pub fn perplexity(&self, sentences: &[Vec<String>]) -> f64 {
        let (mut nll, mut n) = (0.0, 0usize);
        for s in sentences {
            let lp = self.log_probs(s);
            nll -= lp.iter().sum::<f64>();
            n += lp.len();
        }
        (nll / n.max(1) as f64).exp()
    }
}

impl LanguageModel for LstmLm {
    fn log_probs(&self, tokens: &[String]) -> Vec<f64> {
        let mut g = Graph::new(&self.params);
        let terms = self.terms(&mut g, tokens, None);
        terms.iter().map(|&t| g.scalar(t)).collect()
    }
}

/// Trains on `train` and keeps the epoch with the lowest perplexity on `valid`
/// (on `train` when `valid` is empty). Returns the model and per-epoch
/// validation perplexities.
pub fn lm_train(
    vocab: Arc<Vocabulary>,
    train: &[Vec<String>],
    valid: &[Vec<String>],
    config: LmConfig,
    tc: LmTrainConfig,
) -> Result<(LstmLm, Vec<f64>)> {
    let train: Vec<&Vec<String>> = train.iter().filter(|s| !s.is_empty()).collect();
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut lm = LstmLm::new(config, vocab, tc.seed);
    let mut adam = Adam::new(&lm.params, tc.lr, tc.l2);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x4c4d);
    let held: Vec<Vec<String>> = if valid.is_empty() {
        train.iter().map(|s| (*s).clone()).collect()
    } else {
        valid.to_vec()
    };
    let mut best = (lm.perplexity(&held), lm.params.clone());
    let mut history = Vec::with_capacity(tc.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(tc.batch_size.max(1)).enumerate() {
            let items: Vec<&Vec<String>> = batch.iter().map(|&i| train[i]).collect();
            let base = derive_seed(tc.seed, epoch, b);
            let (mut grads, _) = batch_gradient(&lm.params, &items, |i, s, g| {
                let mut r = ChaCha8Rng::seed_from_u64(base.wrapping_add(i as u64));
                lm.accumulate(s, 1.0 / items.len() as f64, g, Some(&mut r)).0
            });
            grads.clip_norm(tc.clip);
            adam.step(&mut lm.params, &grads);
        }
        let ppl = lm.perplexity(&held);
        history.push(ppl);
        if ppl < best.0 {
            best = (ppl, lm.params.clone());
        }
    }
    lm.params = best.1;
    Ok((lm, history))
}
