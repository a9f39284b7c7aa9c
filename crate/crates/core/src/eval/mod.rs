//! Slot and intent metrics, BLEU for generation, McNemar's test and
//! checkpoint selection.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

pub use crate::rewards::{corpus_bleu, pair_prf};

use crate::corpus::{chunks, LabeledExample, SemanticForm};
use crate::error::{Error, Result};
use crate::nlu::NluModel;
use crate::ssg::SsgModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Chunk-level precision, recall and F1 with exact boundaries and types.
/// No chunks on either side counts as perfect.
pub fn conll_slot_f1<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<Prf> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: gold.len(),
            right: pred.len(),
        });
    }
    let (mut correct, mut n_gold, mut n_pred) = (0usize, 0usize, 0usize);
    for (g, p) in gold.iter().zip(pred) {
        if g.len() != p.len() {
            return Err(Error::LengthMismatch {
                left: g.len(),
                right: p.len(),
            });
        }
        let gc: HashSet<_> = chunks(g).into_iter().collect();
        let pc = chunks(p);
        n_gold += gc.len();
        n_pred += pc.len();
        correct += pc.iter().filter(|c| gc.contains(*c)).count();
    }
    if n_gold == 0 && n_pred == 0 {
        return Ok(Prf {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        });
    }
    let precision = if n_pred == 0 { 0.0 } else { correct as f64 / n_pred as f64 };
    let recall = if n_gold == 0 { 0.0 } else { correct as f64 / n_gold as f64 };
    let f1 = if correct == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(Prf { precision, recall, f1 })
}

pub fn intent_accuracy<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: gold.len(),
            right: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let hits = gold.iter().zip(pred).filter(|(a, b)| a.as_ref() == b.as_ref()).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// F1 of exact `(slot, value)` matches between two forms.
pub fn pair_f1(gold: &SemanticForm, pred: &SemanticForm) -> f64 {
    pair_prf(gold, pred).2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// A right, B wrong.
    pub b: usize,
    /// A wrong, B right.
    pub c: usize,
    /// `(|b - c| - 1)^2 / (b + c)`.
    pub statistic: f64,
    /// Chi-square tail with one degree of freedom.
    pub p_value: f64,
    /// Two-sided exact binomial p-value on the discordant pairs.
    pub exact_p_value: f64,
    pub significant: bool,
}

/// McNemar's test on paired per-example correctness.
pub fn mcnemar(a: &[bool], b: &[bool]) -> Result<McNemar> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let bc = a.iter().zip(b).filter(|(x, y)| **x && !**y).count();
    let cb = a.iter().zip(b).filter(|(x, y)| !**x && **y).count();
    let n = bc + cb;
    if n == 0 {
        return Ok(McNemar {
            b: 0,
            c: 0,
            statistic: 0.0,
            p_value: 1.0,
            exact_p_value: 1.0,
            significant: false,
        });
    }
    let diff = (bc as f64 - cb as f64).abs() - 1.0;
    let statistic = diff * diff / n as f64;
    let p_value = ChiSquared::new(1.0).expect("valid dof").sf(statistic);
    let binom = Binomial::new(0.5, n as u64).expect("valid binomial");
    let exact_p_value = (2.0 * binom.cdf(bc.min(cb) as u64)).min(1.0);
    Ok(McNemar {
        b: bc,
        c: cb,
        statistic,
        p_value,
        exact_p_value,
        significant: p_value < 0.05,
    })
}

/// Validation metrics of one evaluated checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub intent_acc: f64,
    pub slot_f1: f64,
}

impl EpochMetrics {
    pub fn avg(&self) -> f64 {
        (self.intent_acc + self.slot_f1) / 2.0
    }
}

/// Epoch with the best average of intent accuracy and slot F1; earliest wins ties.
pub fn select_best(history: &[EpochMetrics]) -> Result<usize> {
    let mut best: Option<&EpochMetrics> = None;
    for m in history {
        if best.is_none_or(|b| m.avg() > b.avg()) {
            best = Some(m);
        }
    }
    best.map(|m| m.epoch).ok_or(Error::EmptyCorpus)
}

/// Test-set report for the NLU model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: usize,
    pub slot_precision: f64,
    pub slot_recall: f64,
    pub slot_f1: f64,
    pub intent_accuracy: f64,
    pub avg: f64,
    pub corpus_bleu: Option<f64>,
    pub intent_correct: Vec<bool>,
    pub slots_correct: Vec<bool>,
    pub joint_correct: Vec<bool>,
}

impl EvalReport {
    pub fn from_predictions(gold: &[LabeledExample], pred_tags: &[Vec<String>], pred_intents: &[String]) -> Result<Self> {
        let gold_tags: Vec<&Vec<String>> = gold.iter().map(|e| &e.tags).collect();
        let gold_tags: Vec<Vec<&str>> = gold_tags.iter().map(|t| t.iter().map(String::as_str).collect()).collect();
        let pt: Vec<Vec<&str>> = pred_tags.iter().map(|t| t.iter().map(String::as_str).collect()).collect();
        let prf = conll_slot_f1(&gold_tags, &pt)?;
        let gi: Vec<&str> = gold.iter().map(|e| e.intent.as_str()).collect();
        let pi: Vec<&str> = pred_intents.iter().map(String::as_str).collect();
        let intent_accuracy = intent_accuracy(&gi, &pi)?;
        let intent_correct: Vec<bool> = gi.iter().zip(&pi).map(|(a, b)| a == b).collect();
        let slots_correct: Vec<bool> = gold_tags
            .iter()
            .zip(&pt)
            .map(|(g, p)| {
                let a: HashSet<_> = chunks(g).into_iter().collect();
                let b: HashSet<_> = chunks(p).into_iter().collect();
                a == b
            })
            .collect();
        let joint_correct = intent_correct.iter().zip(&slots_correct).map(|(a, b)| *a && *b).collect();
        Ok(EvalReport {
            examples: gold.len(),
            slot_precision: prf.precision,
            slot_recall: prf.recall,
            slot_f1: prf.f1,
            intent_accuracy,
            avg: (intent_accuracy + prf.f1) / 2.0,
            corpus_bleu: None,
            intent_correct,
            slots_correct,
            joint_correct,
        })
    }

    pub fn metrics(&self, epoch: usize) -> EpochMetrics {
        EpochMetrics {
            epoch,
            intent_acc: self.intent_accuracy,
            slot_f1: self.slot_f1,
        }
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<18}{:>10}", "metric", "value");
        let _ = writeln!(s, "{:<18}{:>10}", "examples", self.examples);
        for (k, v) in self.scalar_rows() {
            let _ = writeln!(s, "{k:<18}{:>10.2}", 100.0 * v);
        }
        s
    }

    fn scalar_rows(&self) -> Vec<(&'static str, f64)> {
        let mut rows = vec![
            ("slot_precision", self.slot_precision),
            ("slot_recall", self.slot_recall),
            ("slot_f1", self.slot_f1),
            ("intent_accuracy", self.intent_accuracy),
            ("avg", self.avg),
        ];
        if let Some(b) = self.corpus_bleu {
            rows.push(("corpus_bleu", b));
        }
        rows
    }

    /// `key<TAB>value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = format!("examples\t{}\n", self.examples);
        for (k, v) in self.scalar_rows() {
            let _ = writeln!(s, "{k}\t{v:.6}");
        }
        s
    }

    /// One line per example: `intent<TAB>slots<TAB>joint` as 0/1.
    pub fn correctness_tsv(&self) -> String {
        let mut s = String::from("intent\tslots\tjoint\n");
        for i in 0..self.examples {
            let _ = writeln!(
                s,
                "{}\t{}\t{}",
                u8::from(self.intent_correct[i]),
                u8::from(self.slots_correct[i]),
                u8::from(self.joint_correct[i])
            );
        }
        s
    }
}

/// Which per-example correctness column to compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correctness {
    Intent,
    Slots,
    Joint,
}

impl std::str::FromStr for Correctness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intent" => Ok(Correctness::Intent),
            "slots" => Ok(Correctness::Slots),
            "joint" => Ok(Correctness::Joint),
            other => Err(Error::Config(format!("unknown correctness column {other:?}"))),
        }
    }
}

/// Reads one column of a file written by [`EvalReport::correctness_tsv`].
pub fn parse_correctness(text: &str, column: Correctness) -> Result<Vec<bool>> {
    let idx = column as usize;
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, line)| match line.split('\t').nth(idx) {
            Some("1") => Ok(true),
            Some("0") => Ok(false),
            _ => Err(Error::InvalidArgument(format!("line {}: expected 0/1 columns", i + 2))),
        })
        .collect()
}

/// Decodes every example with the NLU model (in parallel, results in order).
pub fn evaluate_nlu(model: &NluModel, examples: &[LabeledExample]) -> Result<EvalReport> {
    let decoded: Vec<_> = examples.par_iter().map(|e| model.decode_top1(&e.tokens)).collect();
    let tags: Vec<Vec<String>> = decoded.iter().map(|d| d.tags.clone()).collect();
    let intents: Vec<String> = decoded.into_iter().map(|d| d.form.intent).collect();
    EvalReport::from_predictions(examples, &tags, &intents)
}

/// Generation quality of the SSG model on labeled examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsgReport {
    pub bleu: f64,
    pub slot_accuracy: f64,
    pub evaluated: usize,
    /// Examples whose form uses labels unknown to the model.
    pub skipped: usize,
}

/// Greedy generation from each example's semantic form, scored against its
/// gold sentence.
pub fn evaluate_ssg(model: &SsgModel, examples: &[LabeledExample]) -> Result<SsgReport> {
    let out: Vec<Option<(Vec<String>, Vec<String>, f64)>> = examples
        .par_iter()
        .map(|e| {
            let form = e.semantic_form();
            let g = model.greedy(&form).ok()?;
            let acc = crate::rewards::slot_accuracy(&g.delex, &form);
            Some((e.tokens.clone(), g.realize(&form).tokens, acc))
        })
        .collect();
    let kept: Vec<_> = out.iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let refs: Vec<Vec<String>> = kept.iter().map(|k| k.0.clone()).collect();
    let hyps: Vec<Vec<String>> = kept.iter().map(|k| k.1.clone()).collect();
    Ok(SsgReport {
        bleu: corpus_bleu(&refs, &hyps)?,
        slot_accuracy: kept.iter().map(|k| k.2).sum::<f64>() / kept.len() as f64,
        evaluated: kept.len(),
        skipped: examples.len() - kept.len(),
    })
}

#[cfg(test)]
mod tests;
