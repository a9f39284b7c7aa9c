//! Validity and reconstruction rewards for the two dual-learning loops.

mod bleu;
mod lm;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use bleu::{corpus_bleu, sentence_bleu};
pub use lm::{lm_logprob_normalized, lm_train, LanguageModel, LmConfig, LmTrainConfig, LstmLm, UnigramLm};

use crate::corpus::{CoOccurrenceMatrix, DelexicalizedForm, LexiconDb, SemanticForm};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub omega: f64,
    /// Declared alongside the others but not used by any reward.
    pub delta: f64,
    pub lambda: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            alpha: 0.5,
            beta: 0.5,
            gamma: 0.5,
            omega: 0.5,
            delta: 0.5,
            lambda: 0.25,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("omega", self.omega),
            ("delta", self.delta),
            ("lambda", self.lambda),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Word-level Levenshtein distance with unit costs.
pub fn edit_distance<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `max_e (1 - ED(e, v) / |v|)` over the lexicon values of `slot`, clamped to
/// `[0, 1]`. Unknown slots score 0.
pub fn slot_value_score(slot: &str, value: &[String], db: &LexiconDb) -> f64 {
    if value.is_empty() {
        return 0.0;
    }
    db.values(slot)
        .iter()
        .map(|e| 1.0 - edit_distance(e, value) as f64 / value.len() as f64)
        .fold(0.0, f64::max)
}

/// Sub-scores of the semantic-form validity reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticValidity {
    pub slot_value: f64,
    pub slot_intent: f64,
    pub reward: f64,
}

/// `R^Y_val = λ·r_sv + (1-λ)·r_si`; both averages are 1 for an empty pair list.
pub fn semantic_validity(form: &SemanticForm, db: &LexiconDb, com: &CoOccurrenceMatrix, lambda: f64) -> SemanticValidity {
    let (slot_value, slot_intent) = if form.pairs.is_empty() {
        (1.0, 1.0)
    } else {
        let m = form.pairs.len() as f64;
        let sv: f64 = form.pairs.iter().map(|p| slot_value_score(&p.slot, &p.value, db)).sum();
        let si: f64 = form.pairs.iter().map(|p| f64::from(com.get(&form.intent, &p.slot))).sum();
        (sv / m, si / m)
    };
    SemanticValidity {
        slot_value,
        slot_intent,
        reward: lambda * slot_value + (1.0 - lambda) * slot_intent,
    }
}

/// `1 - (p + q) / m` with `p` omitted and `q` redundant placeholders counted on
/// multisets. Not clamped. With `m = 0`: 1 without placeholders, else 0.
pub fn slot_accuracy(generated: &DelexicalizedForm, form: &SemanticForm) -> f64 {
    let mut balance: HashMap<&str, i64> = HashMap::new();
    for p in &form.pairs {
        *balance.entry(p.slot.as_str()).or_default() += 1;
    }
    let mut any = false;
    for s in generated.placeholders() {
        *balance.entry(s).or_default() -= 1;
        any = true;
    }
    let m = form.pairs.len();
    if m == 0 {
        return if any { 0.0 } else { 1.0 };
    }
    let omitted: i64 = balance.values().filter(|&&v| v > 0).sum();
    let redundant: i64 = balance.values().filter(|&&v| v < 0).map(|v| -v).sum();
    1.0 - (omitted + redundant) as f64 / m as f64
}

/// `R^X_val = γ·SlotAcc + (1-γ)·(1/|x'|) log LM(x')`. SlotAcc is taken on the
/// decoder's delexicalized output, the LM term on the relexicalized sentence.
pub fn sentence_validity(
    generated: &DelexicalizedForm,
    form: &SemanticForm,
    lm: &dyn LanguageModel,
    tokens: &[String],
    gamma: f64,
) -> Result<f64> {
    let acc = slot_accuracy(generated, form);
    if gamma == 1.0 {
        return Ok(acc);
    }
    Ok(gamma * acc + (1.0 - gamma) * lm_logprob_normalized(lm, tokens)?)
}

/// Precision, recall and F1 of exact `(slot, value)` matches on multisets.
/// Two empty lists give 1 for all three.
pub fn pair_prf(gold: &SemanticForm, pred: &SemanticForm) -> (f64, f64, f64) {
    if gold.pairs.is_empty() && pred.pairs.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    let mut left: HashMap<(&str, &[String]), usize> = HashMap::new();
    for p in &gold.pairs {
        *left.entry((p.slot.as_str(), p.value.as_slice())).or_default() += 1;
    }
    let mut hits = 0usize;
    for p in &pred.pairs {
        if let Some(c) = left.get_mut(&(p.slot.as_str(), p.value.as_slice())) {
            if *c > 0 {
                *c -= 1;
                hits += 1;
            }
        }
    }
    let prec = if pred.pairs.is_empty() { 0.0 } else { hits as f64 / pred.pairs.len() as f64 };
    let rec = if gold.pairs.is_empty() { 0.0 } else { hits as f64 / gold.pairs.len() as f64 };
    let f1 = if hits == 0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
    (prec, rec, f1)
}

/// `R^Y_rec = ω·1{intent matches} + (1-ω)·F1(pairs)`.
pub fn semantic_reconstruction(y: &SemanticForm, y_pred: &SemanticForm, omega: f64) -> f64 {
    let hit = if y.intent == y_pred.intent { 1.0 } else { 0.0 };
    omega * hit + (1.0 - omega) * pair_prf(y, y_pred).2
}
