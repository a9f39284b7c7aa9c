use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    index_nlu, index_ssg, mean_batch_grads, selection_set, set_dropout, step, stream_seed, validate_nlu, MetricsLog,
    PhaseReport, TrainConfig, PHASE_DUAL, STREAM_NLU,
};
use crate::corpus::{build_com, build_lexicon_db, delexicalize, CoOccurrenceMatrix, Dataset, LabeledExample, LexiconDb, SemanticForm, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::select_best;
use crate::nlu::{IndexedExample, NluModel};
use crate::params::{derive_seed, Adam, Grads};
use crate::rewards::{
    lm_train, semantic_reconstruction, semantic_validity, sentence_bleu, sentence_validity, LanguageModel, LmConfig,
    LmTrainConfig, LstmLm, RewardWeights,
};
use crate::ssg::{SsgExample, SsgModel};

/// Reward ingredients: lexicon, co-occurrence matrix, language model and weights.
#[derive(Clone, Copy)]
pub struct RewardContext<'a> {
    pub db: &'a LexiconDb,
    pub com: &'a CoOccurrenceMatrix,
    pub lm: &'a dyn LanguageModel,
    pub weights: RewardWeights,
}

/// Lexicon and co-occurrence matrix of the labeled data plus a language model
/// trained on labeled and unlabeled sentences.
pub struct Knowledge {
    pub db: LexiconDb,
    pub com: CoOccurrenceMatrix,
    pub lm: LstmLm,
}

impl Knowledge {
    pub fn build(
        vocab: Arc<Vocabulary>,
        dataset: &Dataset,
        valid_sentences: &[Vec<String>],
        lm_config: LmConfig,
        lm_train_config: LmTrainConfig,
    ) -> Result<Self> {
        let (lm, _) = lm_train(vocab, &dataset.all_sentences(), valid_sentences, lm_config, lm_train_config)?;
        Ok(Knowledge {
            db: build_lexicon_db(&dataset.labeled),
            com: build_com(&dataset.labeled),
            lm,
        })
    }

    pub fn context(&self, weights: RewardWeights) -> RewardContext<'_> {
        RewardContext {
            db: &self.db,
            com: &self.com,
            lm: &self.lm,
            weights,
        }
    }
}

/// One hypothesis of a closed loop: its reward and the weighted
/// maximum-likelihood targets it contributes to each model.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub reward: f64,
    pub nlu: Option<(IndexedExample, f64)>,
    pub ssg: Option<(SsgExample, f64)>,
}

/// Per-model gradients of one closed loop, already divided by the number of
/// hypotheses, plus the hypothesis rewards.
#[derive(Debug, Clone)]
pub struct DualGrads {
    pub nlu: Grads,
    pub ssg: Grads,
    pub rewards: Vec<f64>,
}

/// Sentence → semantic forms → sentences. For each of the K best parses `y'`
/// of `x`, the SSG model greedily reconstructs `x'`. The reward is
/// `α·R^Y_val(y') + (1-α)·BLEU(x, x')`; the NLU model is trained toward `y'`
/// with that reward and the SSG model toward `x` from `y'` with
/// `(1-α)·BLEU(x, x')`.
pub fn nlu2ssg_rollouts(nlu: &NluModel, ssg: &SsgModel, x: &[String], ctx: &RewardContext, k: usize) -> Result<Vec<Rollout>> {
    let w = ctx.weights;
    let words = nlu.vocab.encode(x);
    nlu.beam_decode(x, k)
        .into_iter()
        .map(|h| {
            let val = semantic_validity(&h.form, ctx.db, ctx.com, w.lambda).reward;
            let gen = ssg.greedy(&h.form)?;
            let rec = if gen.truncated {
                0.0
            } else {
                sentence_bleu(x, &gen.realize(&h.form).tokens)
            };
            let reward = w.alpha * val + (1.0 - w.alpha) * rec;
            let intent = nlu
                .vocab
                .intent_id(&h.form.intent)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown intent {:?}", h.form.intent)))?;
            let target = IndexedExample {
                words: words.clone(),
                tags: h.tag_ids.clone(),
                intent,
            };
            let back = ssg.index(&h.form, &delexicalize(x, &h.tags))?;
            Ok(Rollout {
                reward,
                nlu: Some((target, reward)),
                ssg: Some((back, (1.0 - w.alpha) * rec)),
            })
        })
        .collect()
}

/// Semantic form → sentences → semantic forms. For each of the K beam
/// sentences `x'` of `y`, the NLU model parses `y'`. The reward is
/// `β·R^X_val(x') + (1-β)·R^Y_rec(y, y')`; the SSG model is trained toward
/// `x'` with that reward and the NLU model toward `y` from `x'` with
/// `(1-β)·R^Y_rec`. Truncated or empty sentences get reward 0.
pub fn ssg2nlu_rollouts(nlu: &NluModel, ssg: &SsgModel, y: &SemanticForm, ctx: &RewardContext, k: usize) -> Result<Vec<Rollout>> {
    let w = ctx.weights;
    ssg.beam(y, k)?
        .into_iter()
        .map(|gen| {
            let r = gen.realize(y);
            if gen.truncated || r.tokens.is_empty() {
                return Ok(Rollout {
                    reward: 0.0,
                    nlu: None,
                    ssg: None,
                });
            }
            let val = sentence_validity(&gen.delex, y, ctx.lm, &r.tokens, w.gamma)?;
            let parsed = nlu.decode_top1(&r.tokens);
            let rec = semantic_reconstruction(y, &parsed.form, w.omega);
            let reward = w.beta * val + (1.0 - w.beta) * rec;
            let target = ssg.index(y, &gen.delex)?;
            let back = nlu.index(&LabeledExample::new(r.tokens, r.tags, y.intent.clone()))?;
            Ok(Rollout {
                reward,
                nlu: Some((back, (1.0 - w.beta) * rec)),
                ssg: Some((target, reward)),
            })
        })
        .collect()
}

/// Sums `weight / K · ∇L` over the rollouts. Zero weights contribute nothing.
/// Dropout uses one stream per hypothesis when `dropout_seed` is given.
pub fn assemble(nlu: &NluModel, ssg: &SsgModel, rollouts: &[Rollout], dropout_seed: Option<u64>) -> DualGrads {
    let k = rollouts.len().max(1) as f64;
    let mut g_nlu = Grads::zeros_like(&nlu.params);
    let mut g_ssg = Grads::zeros_like(&ssg.params);
    let rng = |j: usize, salt: u64| dropout_seed.map(|s| ChaCha8Rng::seed_from_u64(s.wrapping_add(2 * j as u64 + salt)));
    for (j, r) in rollouts.iter().enumerate() {
        if let Some((ex, w)) = &r.nlu {
            if *w != 0.0 {
                nlu.accumulate(ex, w / k, &mut g_nlu, rng(j, 0).as_mut());
            }
        }
        if let Some((ex, w)) = &r.ssg {
            if *w != 0.0 {
                ssg.accumulate(ex, w / k, &mut g_ssg, rng(j, 1).as_mut());
            }
        }
    }
    DualGrads {
        nlu: g_nlu,
        ssg: g_ssg,
        rewards: rollouts.iter().map(|r| r.reward).collect(),
    }
}

/// Policy-gradient contributions of the sentence-first loop for one sentence.
pub fn nlu2ssg_step(
    nlu: &NluModel,
    ssg: &SsgModel,
    x: &[String],
    ctx: &RewardContext,
    k: usize,
    dropout_seed: Option<u64>,
) -> Result<DualGrads> {
    let r = nlu2ssg_rollouts(nlu, ssg, x, ctx, k)?;
    Ok(assemble(nlu, ssg, &r, dropout_seed))
}

/// Policy-gradient contributions of the form-first loop for one form.
pub fn ssg2nlu_step(
    nlu: &NluModel,
    ssg: &SsgModel,
    y: &SemanticForm,
    ctx: &RewardContext,
    k: usize,
    dropout_seed: Option<u64>,
) -> Result<DualGrads> {
    let r = ssg2nlu_rollouts(nlu, ssg, y, ctx, k)?;
    Ok(assemble(nlu, ssg, &r, dropout_seed))
}

fn mean_into(total: &mut Grads, parts: &[Grads]) {
    let n = parts.len().max(1) as f64;
    for p in parts {
        total.add_scaled(p, 1.0 / n);
    }
}

/// Closed-loop training. An epoch is one pass over labeled and unlabeled
/// sentences in batches; batch `b` also draws the `b`-th batch of the shuffled
/// labeled and unexpressed forms and one supervised labeled batch. Each update
/// adds the mean gradient of both loops and of the supervised batch.
pub fn dual_learning(
    nlu: &mut NluModel,
    ssg: &mut SsgModel,
    dataset: &Dataset,
    valid: &[LabeledExample],
    ctx: &RewardContext,
    cfg: &TrainConfig,
    log: &mut MetricsLog,
) -> Result<PhaseReport> {
    cfg.validate()?;
    if dataset.labeled.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    set_dropout(nlu, Some(ssg), cfg.dropout);
    let phase = "dual-learning";
    let sel = selection_set(valid, &dataset.labeled);
    let sentences: Vec<Vec<String>> = dataset.all_sentences().into_iter().filter(|s| !s.is_empty()).collect();
    let forms: Vec<SemanticForm> = dataset.all_forms();
    let sup_nlu = index_nlu(nlu, &dataset.labeled, 1.0)?;
    let sup_ssg = index_ssg(ssg, &dataset.labeled, 1.0)?;
    let seed = stream_seed(cfg.seed, PHASE_DUAL, STREAM_NLU);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nlu_adam = Adam::new(&nlu.params, cfg.lr, cfg.l2);
    let mut ssg_adam = Adam::new(&ssg.params, cfg.lr, cfg.l2);
    let mut history = vec![validate_nlu(nlu, sel, 0)?];
    log.record(phase, "valid", &history[0]);
    let mut best = (history[0].avg(), nlu.params.clone(), ssg.params.clone());
    let bs = cfg.batch_size;
    let mut sup_order: Vec<usize> = Vec::new();
    for epoch in 1..=cfg.dual_epochs {
        let mut x_order: Vec<usize> = (0..sentences.len()).collect();
        let mut y_order: Vec<usize> = (0..forms.len()).collect();
        x_order.shuffle(&mut rng);
        y_order.shuffle(&mut rng);
        let y_batches: Vec<&[usize]> = y_order.chunks(bs).collect();
        for (b, xb) in x_order.chunks(bs).enumerate() {
            let base = derive_seed(seed, epoch, b);
            let (n, s) = (&*nlu, &*ssg);
            let from_x = xb
                .par_iter()
                .enumerate()
                .map(|(i, &j)| nlu2ssg_step(n, s, &sentences[j], ctx, cfg.beam_k, Some(base.wrapping_add(1_000 * i as u64))))
                .collect::<Result<Vec<_>>>()?;
            let yb: &[usize] = y_batches.get(b).copied().unwrap_or(&[]);
            let from_y = yb
                .par_iter()
                .enumerate()
                .map(|(i, &j)| ssg2nlu_step(n, s, &forms[j], ctx, cfg.beam_k, Some(base.wrapping_add(1_000 * (i + bs) as u64))))
                .collect::<Result<Vec<_>>>()?;
            let mut sup_idx = Vec::with_capacity(bs);
            while sup_idx.len() < bs.min(sup_nlu.len()) {
                if sup_order.is_empty() {
                    sup_order = (0..sup_nlu.len()).collect();
                    sup_order.shuffle(&mut rng);
                }
                sup_idx.push(sup_order.pop().expect("non-empty"));
            }
            let sup_seed = base.wrapping_add(1_000 * (2 * bs) as u64);
            let nb: Vec<_> = sup_idx.iter().map(|&i| &sup_nlu[i]).collect();
            let sb: Vec<_> = sup_idx.iter().map(|&i| &sup_ssg[i]).collect();
            let (mut g_nlu, l_nlu) = mean_batch_grads(n, &nb, sup_seed);
            let (mut g_ssg, l_ssg) = mean_batch_grads(s, &sb, sup_seed);
            mean_into(&mut g_nlu, &from_x.iter().map(|d| d.nlu.clone()).collect::<Vec<_>>());
            mean_into(&mut g_nlu, &from_y.iter().map(|d| d.nlu.clone()).collect::<Vec<_>>());
            mean_into(&mut g_ssg, &from_x.iter().map(|d| d.ssg.clone()).collect::<Vec<_>>());
            mean_into(&mut g_ssg, &from_y.iter().map(|d| d.ssg.clone()).collect::<Vec<_>>());
            step(&mut nlu.params, &mut nlu_adam, &mut g_nlu, l_nlu, cfg.clip, epoch, b)?;
            step(&mut ssg.params, &mut ssg_adam, &mut g_ssg, l_ssg, cfg.clip, epoch, b)?;
        }
        let m = validate_nlu(nlu, sel, epoch)?;
        log.record(phase, "valid", &m);
        if m.avg() > best.0 {
            best = (m.avg(), nlu.params.clone(), ssg.params.clone());
        }
        history.push(m);
    }
    nlu.params = best.1;
    ssg.params = best.2;
    Ok(PhaseReport {
        phase: phase.to_string(),
        best_epoch: select_best(&history)?,
        history,
    })
}
