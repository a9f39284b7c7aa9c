use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, LabeledExample};
use crate::error::{Error, Result};

/// Number of examples kept labeled for `ratio` of `n`.
pub(crate) fn labeled_count(ratio: f64, n: usize) -> usize {
    // The epsilon absorbs binary rounding such as 0.1 * 30 = 3.0000000000000004.
    ((ratio * n as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Shuffles once with `seed`; the first `⌈ratio·N⌉` examples stay labeled, every
/// other example contributes its sentence to the unlabeled set and its semantic
/// form to the unexpressed set. Ratios under one seed are nested.
pub fn make_semi_split(labeled: &[LabeledExample], ratio: f64, seed: u64) -> Result<Dataset> {
    if labeled.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "label ratio must be in (0, 1], got {ratio}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.shuffle(&mut rng);
    let k = labeled_count(ratio, labeled.len()).min(labeled.len());
    let (keep, rest) = order.split_at(k);
    let unlabeled_sentences = rest.iter().map(|&i| labeled[i].tokens.clone()).collect();
    // Forms get their own order so the two unpaired sets are not index-aligned.
    let mut form_order = rest.to_vec();
    form_order.shuffle(&mut rng);
    let unexpressed_forms = form_order.iter().map(|&i| labeled[i].semantic_form()).collect();
    Ok(Dataset {
        labeled: keep.iter().map(|&i| labeled[i].clone()).collect(),
        unlabeled_sentences,
        unexpressed_forms,
    })
}
