//! Linear-chain CRF scoring and decoding on plain values.

use crate::autograd::log_sum_exp;
use crate::params::Tensor;

/// `ψ(x, y) = start[y0] + Σ_i emit[i][y_i] + Σ_{i>0} trans[y_{i-1}][y_i]`.
pub fn sequence_score(emissions: &[Vec<f64>], trans: &Tensor, start: &[f64], tags: &[usize]) -> f64 {
    let mut s = start[tags[0]] + emissions[0][tags[0]];
    for i in 1..tags.len() {
        s += trans.data[tags[i - 1] * trans.cols + tags[i]] + emissions[i][tags[i]];
    }
    s
}

/// Forward-algorithm log-partition.
pub fn log_partition(emissions: &[Vec<f64>], trans: &Tensor, start: &[f64]) -> f64 {
    let t = start.len();
    let mut alpha: Vec<f64> = (0..t).map(|j| start[j] + emissions[0][j]).collect();
    let mut buf = vec![0.0; t];
    for em in &emissions[1..] {
        let next: Vec<f64> = (0..t)
            .map(|j| {
                for i in 0..t {
                    buf[i] = alpha[i] + trans.data[i * t + j];
                }
                log_sum_exp(&buf) + em[j]
            })
            .collect();
        alpha = next;
    }
    log_sum_exp(&alpha)
}

/// Highest-scoring tag sequence. Ties go to the lower tag index.
pub fn viterbi_decode(emissions: &[Vec<f64>], trans: &Tensor, start: &[f64]) -> Vec<usize> {
    let len = emissions.len();
    if len == 0 {
        return Vec::new();
    }
    let t = start.len();
    let mut delta: Vec<f64> = (0..t).map(|j| start[j] + emissions[0][j]).collect();
    let mut back = vec![vec![0usize; t]; len];
    for pos in 1..len {
        let mut next = vec![0.0; t];
        for j in 0..t {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..t {
                let s = delta[i] + trans.data[i * t + j];
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            next[j] = best + emissions[pos][j];
            back[pos][j] = arg;
        }
        delta = next;
    }
    let mut last = 0;
    for j in 1..t {
        if delta[j] > delta[last] {
            last = j;
        }
    }
    let mut path = vec![last; len];
    for pos in (1..len).rev() {
        path[pos - 1] = back[pos][path[pos]];
    }
    path
}

/// Exact K-best sequences by unnormalized score, keeping the K best
/// prefixes ending in each tag. Ties are ordered by tag indices.
pub fn k_best(emissions: &[Vec<f64>], trans: &Tensor, start: &[f64], k: usize) -> Vec<(Vec<usize>, f64)> {
    if emissions.is_empty() {
        return Vec::new();
    }
    let t = start.len();
    let mut lists: Vec<Vec<(Vec<usize>, f64)>> = (0..t).map(|j| vec![(vec![j], start[j] + emissions[0][j])]).collect();
    for em in &emissions[1..] {
        lists = (0..t)
            .map(|j| {
                let cands = lists
                    .iter()
                    .enumerate()
                    .flat_map(|(i, l)| {
                        l.iter().map(move |(seq, s)| ([seq.as_slice(), &[j]].concat(), s + trans.data[i * t + j] + em[j]))
                    })
                    .collect();
                best_of(cands, k)
            })
            .collect();
    }
    best_of(lists.into_iter().flatten().collect(), k)
}

fn best_of(mut cands: Vec<(Vec<usize>, f64)>, k: usize) -> Vec<(Vec<usize>, f64)> {
    cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
    cands.truncate(k);
    cands
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn enumerate(len: usize, t: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|p| (0..t).map(move |j| [p.clone(), vec![j]].concat()))
                .collect();
        }
        out
    }

    #[test]
    fn zero_scores_decode_to_tag_zero() {
        let em = vec![vec![0.0; 3]; 4];
        let tr = Tensor::zeros(3, 3);
        assert_eq!(viterbi_decode(&em, &tr, &[0.0; 3]), vec![0, 0, 0, 0]);
    }

    #[test]
    fn length_one_partition_is_lse_of_tag_scores() {
        let em = vec![vec![0.3, -1.0, 2.0]];
        let start = [0.1, 0.2, -0.3];
        let expected = log_sum_exp(&[0.4, -0.8, 1.7]);
        assert!((log_partition(&em, &Tensor::zeros(3, 3), &start) - expected).abs() < 1e-12);
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let len = rng.gen_range(1..=5);
            let t = rng.gen_range(1..=4);
            let em: Vec<Vec<f64>> = (0..len).map(|_| (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let tr = Tensor::from_vec(t, t, (0..t * t).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let st: Vec<f64> = (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let all = enumerate(len, t);
            let scores: Vec<f64> = all.iter().map(|y| sequence_score(&em, &tr, &st, y)).collect();
            assert!((log_partition(&em, &tr, &st) - log_sum_exp(&scores)).abs() < 1e-9);
            let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = viterbi_decode(&em, &tr, &st);
            assert!((sequence_score(&em, &tr, &st, &v) - best).abs() < 1e-12);
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for k in [1, 2, 5, all.len()] {
                let kb = k_best(&em, &tr, &st, k);
                assert_eq!(kb.len(), k.min(all.len()));
                for ((y, s), want) in kb.iter().zip(&sorted) {
                    assert!((s - want).abs() < 1e-12);
                    assert!((sequence_score(&em, &tr, &st, y) - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dominant_emissions_give_per_step_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let t = 3;
        let tr = Tensor::from_vec(t, t, (0..t * t).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let margin: f64 = tr.data.iter().map(|x| x.abs()).sum::<f64>() + 1.0;
        let winners = [2usize, 0, 1, 1];
        let em: Vec<Vec<f64>> = winners
            .iter()
            .map(|&w| (0..t).map(|j| if j == w { margin * 2.0 } else { 0.0 }).collect())
            .collect();
        assert_eq!(viterbi_decode(&em, &tr, &[0.0; 3]), winners.to_vec());
    }
}
