//! Supervised pretraining, dual pseudo-labeling, policy-gradient dual
//! learning and the combined three-phase schedule.

mod dual;
mod pseudo;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dual::{
    assemble, dual_learning, nlu2ssg_rollouts, nlu2ssg_step, ssg2nlu_rollouts, ssg2nlu_step, DualGrads, Knowledge,
    RewardContext, Rollout,
};
pub use pseudo::{
    dual_pseudo_labeling, make_pseudo_samples, pl_baseline, pl_weight, pseudo_labeling, pseudo_samples_for, Origin,
    PseudoSample,
};

use crate::corpus::{template_synthesis, Dataset, LabeledExample};
use crate::error::{Error, Result};
use crate::eval::{evaluate_nlu, select_best, EpochMetrics};
use crate::nlu::{IndexedExample, NluModel};
use crate::params::{batch_gradient, derive_seed, Adam, Grads, ParamStore};
use crate::rewards::RewardWeights;
use crate::ssg::{SsgExample, SsgModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub clip: f64,
    pub l2: f64,
    pub dropout: f64,
    /// Supervised pretraining epochs.
    pub epochs: usize,
    /// Pseudo-labeling iterations `N`.
    pub pl_iterations: usize,
    pub dual_epochs: usize,
    pub beam_k: usize,
    /// Also relabel the labeled data in both directions during pseudo-labeling.
    pub pl_include_labeled: bool,
    pub rewards: RewardWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 16,
            clip: 5.0,
            l2: 1e-5,
            dropout: 0.5,
            epochs: 50,
            pl_iterations: 5,
            dual_epochs: 10,
            beam_k: 5,
            pl_include_labeled: true,
            rewards: RewardWeights::default(),
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(self.l2 >= 0.0) {
            return bad("l2 must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.pl_iterations == 0 {
            return bad("pl_iterations must be at least 1");
        }
        if self.beam_k == 0 {
            return bad("beam_k must be at least 1");
        }
        self.rewards.validate()
    }
}

/// Evaluation events, one `phase<TAB>epoch<TAB>split<TAB>intent_acc<TAB>slot_f1<TAB>avg`
/// line each.
#[derive(Debug, Clone, Default)]
pub struct MetricsLog {
    lines: Vec<String>,
    /// Also print each line to stderr.
    pub echo: bool,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn echoing() -> Self {
        MetricsLog {
            lines: Vec::new(),
            echo: true,
        }
    }

    pub fn record(&mut self, phase: &str, split: &str, m: &EpochMetrics) {
        let line = format!(
            "{phase}\t{}\t{split}\t{:.6}\t{:.6}\t{:.6}",
            m.epoch,
            m.intent_acc,
            m.slot_f1,
            m.avg()
        );
        if self.echo {
            eprintln!("{line}");
        }
        self.lines.push(line);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            let _ = writeln!(s, "{l}");
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

/// Validation history of one phase. Epoch 0 is the phase's starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: String,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

impl PhaseReport {
    pub fn best(&self) -> &EpochMetrics {
        self.history.iter().find(|m| m.epoch == self.best_epoch).expect("best epoch in history")
    }
}

pub(crate) const PHASE_PRETRAIN: usize = 1;
pub(crate) const PHASE_PL: usize = 2;
pub(crate) const PHASE_DUAL: usize = 3;
pub(crate) const STREAM_NLU: usize = 0;
pub(crate) const STREAM_SSG: usize = 1;

/// Seed of an independent random stream for one model within one phase.
pub(crate) fn stream_seed(seed: u64, phase: usize, stream: usize) -> u64 {
    derive_seed(seed ^ 0x5eed_0000, phase, stream + 1)
}

/// Models trained by plain weighted maximum likelihood.
pub(crate) trait Learner: Sync {
    type Example: Sync;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn learn(&self, ex: &Self::Example, weight: f64, grads: &mut Grads, rng: &mut ChaCha8Rng) -> f64;
}

impl Learner for NluModel {
    type Example = IndexedExample;

    fn store(&self) -> &ParamStore {
        &self.params
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn learn(&self, ex: &IndexedExample, weight: f64, grads: &mut Grads, rng: &mut ChaCha8Rng) -> f64 {
        self.accumulate(ex, weight, grads, Some(rng))
    }
}

impl Learner for SsgModel {
    type Example = SsgExample;

    fn store(&self) -> &ParamStore {
        &self.params
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn learn(&self, ex: &SsgExample, weight: f64, grads: &mut Grads, rng: &mut ChaCha8Rng) -> f64 {
        self.accumulate(ex, weight, grads, Some(rng))
    }
}

/// Gradient of the weighted mean loss over `batch`, and the summed loss.
pub(crate) fn mean_batch_grads<M: Learner>(m: &M, batch: &[&(M::Example, f64)], seed: u64) -> (Grads, f64) {
    let n = batch.len().max(1) as f64;
    batch_gradient(m.store(), batch, |i, item, g| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        m.learn(&item.0, item.1 / n, g, &mut rng)
    })
}

/// One shuffled pass over weighted examples. Returns the mean loss.
pub(crate) fn train_epoch<M: Learner>(
    m: &mut M,
    adam: &mut Adam,
    data: &[(M::Example, f64)],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    seed: u64,
    epoch: usize,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
        let batch: Vec<_> = idx.iter().map(|&i| &data[i]).collect();
        let (mut g, loss) = mean_batch_grads(m, &batch, derive_seed(seed, epoch, b));
        step(m.store_mut(), adam, &mut g, loss, cfg.clip, epoch, b)?;
        total += loss;
    }
    Ok(total / data.len().max(1) as f64)
}

pub(crate) fn step(store: &mut ParamStore, adam: &mut Adam, g: &mut Grads, loss: f64, clip: f64, epoch: usize, batch: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}, batch {batch}")));
    }
    g.clip_norm(clip);
    adam.step(store, g);
    Ok(())
}

pub(crate) fn set_dropout(nlu: &mut NluModel, ssg: Option<&mut SsgModel>, p: f64) {
    nlu.config.dropout = p;
    if let Some(s) = ssg {
        s.config.dropout = p;
    }
}

/// Examples used for checkpoint selection: validation data, or the training
/// data when no validation data is given.
pub(crate) fn selection_set<'a>(valid: &'a [LabeledExample], train: &'a [LabeledExample]) -> &'a [LabeledExample] {
    if valid.is_empty() {
        train
    } else {
        valid
    }
}

pub(crate) fn validate_nlu(nlu: &NluModel, valid: &[LabeledExample], epoch: usize) -> Result<EpochMetrics> {
    Ok(evaluate_nlu(nlu, valid)?.metrics(epoch))
}

pub(crate) fn index_nlu(nlu: &NluModel, data: &[LabeledExample], weight: f64) -> Result<Vec<(IndexedExample, f64)>> {
    data.iter()
        .filter(|e| !e.tokens.is_empty())
        .map(|e| Ok((nlu.index(e)?, weight)))
        .collect()
}

pub(crate) fn index_ssg(ssg: &SsgModel, data: &[LabeledExample], weight: f64) -> Result<Vec<(SsgExample, f64)>> {
    data.iter().map(|e| Ok((ssg.index_labeled(e)?, weight))).collect()
}

fn ssg_valid_loss(ssg: &SsgModel, data: &[SsgExample]) -> f64 {
    use rayon::prelude::*;
    let total: f64 = data.par_iter().map(|e| ssg.loss_indexed(e).total()).collect::<Vec<_>>().iter().sum();
    total / data.len().max(1) as f64
}

/// Trains the NLU model on weighted data, evaluating after every epoch and
/// restoring the best one.
pub(crate) fn fit_nlu(
    nlu: &mut NluModel,
    data: &[(IndexedExample, f64)],
    valid: &[LabeledExample],
    epochs: usize,
    cfg: &TrainConfig,
    phase: &str,
    phase_id: usize,
    log: &mut MetricsLog,
) -> Result<PhaseReport> {
    let seed = stream_seed(cfg.seed, phase_id, STREAM_NLU);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(&nlu.params, cfg.lr, cfg.l2);
    let mut history = vec![validate_nlu(nlu, valid, 0)?];
    log.record(phase, "valid", &history[0]);
    let mut best = (history[0].avg(), nlu.params.clone());
    for epoch in 1..=epochs {
        train_epoch(nlu, &mut adam, data, cfg, &mut rng, seed, epoch)?;
        let m = validate_nlu(nlu, valid, epoch)?;
        log.record(phase, "valid", &m);
        if m.avg() > best.0 {
            best = (m.avg(), nlu.params.clone());
        }
        history.push(m);
    }
    nlu.params = best.1;
    Ok(PhaseReport {
        phase: phase.to_string(),
        best_epoch: select_best(&history)?,
        history,
    })
}

/// Trains the SSG model on weighted data and keeps the epoch with the lowest
/// mean loss on `held_out`.
pub(crate) fn fit_ssg(
    ssg: &mut SsgModel,
    data: &[(SsgExample, f64)],
    held_out: &[SsgExample],
    epochs: usize,
    cfg: &TrainConfig,
    phase_id: usize,
) -> Result<usize> {
    let seed = stream_seed(cfg.seed, phase_id, STREAM_SSG);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(&ssg.params, cfg.lr, cfg.l2);
    let mut best = (ssg_valid_loss(ssg, held_out), 0, ssg.params.clone());
    for epoch in 1..=epochs {
        train_epoch(ssg, &mut adam, data, cfg, &mut rng, seed, epoch)?;
        let l = ssg_valid_loss(ssg, held_out);
        if l < best.0 {
            best = (l, epoch, ssg.params.clone());
        }
    }
    ssg.params = best.2;
    Ok(best.1)
}

/// Supervised training of both models on the labeled data. The NLU
/// checkpoint is chosen by validation intent accuracy and slot F1, the SSG
/// checkpoint by validation loss.
pub fn pretrain_supervised(
    nlu: &mut NluModel,
    ssg: Option<&mut SsgModel>,
    labeled: &[LabeledExample],
    valid: &[LabeledExample],
    cfg: &TrainConfig,
    log: &mut MetricsLog,
) -> Result<PhaseReport> {
    supervised(nlu, ssg, labeled, valid, cfg, log, "pretrain")
}

fn supervised(
    nlu: &mut NluModel,
    mut ssg: Option<&mut SsgModel>,
    labeled: &[LabeledExample],
    valid: &[LabeledExample],
    cfg: &TrainConfig,
    log: &mut MetricsLog,
    phase: &str,
) -> Result<PhaseReport> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    set_dropout(nlu, ssg.as_deref_mut(), cfg.dropout);
    let sel = selection_set(valid, labeled);
    let data = index_nlu(nlu, labeled, 1.0)?;
    let report = fit_nlu(nlu, &data, sel, cfg.epochs, cfg, phase, PHASE_PRETRAIN, log)?;
    if let Some(ssg) = ssg {
        let data = index_ssg(ssg, labeled, 1.0)?;
        let held: Vec<SsgExample> = sel.iter().filter_map(|e| ssg.index_labeled(e).ok()).collect();
        let held = if held.is_empty() { data.iter().map(|d| d.0.clone()).collect() } else { held };
        fit_ssg(ssg, &data, &held, cfg.epochs, cfg, PHASE_PRETRAIN)?;
    }
    Ok(report)
}

/// Template-synthesis baseline: supervised NLU training on the labeled data
/// plus sentences made by filling labeled templates with unexpressed forms.
pub fn template_synthesis_training(
    nlu: &mut NluModel,
    dataset: &Dataset,
    valid: &[LabeledExample],
    cfg: &TrainConfig,
    log: &mut MetricsLog,
) -> Result<PhaseReport> {
    let mut data = dataset.labeled.clone();
    data.extend(template_synthesis(&dataset.labeled, &dataset.unexpressed_forms));
    let sel = selection_set(valid, &dataset.labeled);
    supervised(nlu, None, &data, sel, cfg, log, "template-synthesis")
}

/// Reports of the three phases of [`combined_training`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedReport {
    pub pretrain: PhaseReport,
    pub pseudo_labeling: PhaseReport,
    pub dual_learning: PhaseReport,
}

/// Pretraining, then dual pseudo-labeling, then dual learning; each phase
/// starts from the previous phase's selected checkpoint.
pub fn combined_training(
    nlu: &mut NluModel,
    ssg: &mut SsgModel,
    dataset: &Dataset,
    valid: &[LabeledExample],
    knowledge: &Knowledge,
    cfg: &TrainConfig,
    log: &mut MetricsLog,
) -> Result<CombinedReport> {
    let pretrain = pretrain_supervised(nlu, Some(ssg), &dataset.labeled, valid, cfg, log)?;
    let pseudo_labeling = dual_pseudo_labeling(nlu, ssg, dataset, valid, cfg, log)?;
    let ctx = knowledge.context(cfg.rewards);
    let dual_learning = dual_learning(nlu, ssg, dataset, valid, &ctx, cfg, log)?;
    Ok(CombinedReport {
        pretrain,
        pseudo_labeling,
        dual_learning,
    })
}

#[cfg(test)]
mod tests;
