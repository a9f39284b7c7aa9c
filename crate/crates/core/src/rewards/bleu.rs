//! BLEU-4 with uniform weights against a single reference.

use std::collections::HashMap;

use crate::error::{Error, Result};

const ORDER: usize = 4;

fn ngram_counts<S: AsRef<str>>(toks: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    m
}

/// Clipped matches and the candidate n-gram count (at least 1) for order `n`.
fn modified_precision<S: AsRef<str>>(reference: &[S], hypothesis: &[S], n: usize) -> (usize, usize) {
    let hyp = ngram_counts(hypothesis, n);
    let refc = ngram_counts(reference, n);
    let matched = hyp
        .iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    let total: usize = hyp.values().sum();
    (matched, total.max(1))
}

fn brevity_penalty(ref_len: usize, hyp_len: usize) -> f64 {
    if hyp_len > ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Sentence BLEU-4. Precisions of order two and up are smoothed by adding one
/// to numerator and denominator; no unigram match gives 0.
pub fn sentence_bleu<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> f64 {
    let mut log_sum = 0.0;
    for n in 1..=ORDER {
        let (m, t) = modified_precision(reference, hypothesis, n);
        if n == 1 {
            if m == 0 {
                return 0.0;
            }
            log_sum += (m as f64 / t as f64).ln();
        } else {
            log_sum += ((m + 1) as f64 / (t + 1) as f64).ln();
        }
    }
    brevity_penalty(reference.len(), hypothesis.len()) * (log_sum / ORDER as f64).exp()
}

/// Corpus BLEU-4: n-gram statistics summed over all pairs, one brevity
/// penalty, no smoothing (any order without matches gives 0).
pub fn corpus_bleu<S: AsRef<str>>(references: &[Vec<S>], hypotheses: &[Vec<S>]) -> Result<f64> {
    if references.len() != hypotheses.len() {
        return Err(Error::LengthMismatch {
            left: references.len(),
            right: hypotheses.len(),
        });
    }
    if references.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut num = [0usize; ORDER];
    let mut den = [0usize; ORDER];
    let (mut ref_len, mut hyp_len) = (0, 0);
    for (r, h) in references.iter().zip(hypotheses) {
        for n in 1..=ORDER {
            let (m, t) = modified_precision(r, h, n);
            num[n - 1] += m;
            den[n - 1] += t;
        }
        ref_len += r.len();
        hyp_len += h.len();
    }
    if num.contains(&0) {
        return Ok(0.0);
    }
    let log_sum: f64 = (0..ORDER).map(|i| (num[i] as f64 / den[i] as f64).ln()).sum();
    Ok(brevity_penalty(ref_len, hyp_len) * (log_sum / ORDER as f64).exp())
}
