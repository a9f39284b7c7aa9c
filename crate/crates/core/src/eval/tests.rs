use super::*;
use crate::corpus::SlotValue;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tags(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Chunk extraction following conlleval's `endOfChunk`/`startOfChunk` rules.
fn conlleval_chunks(tags: &[String]) -> Vec<(String, usize, usize)> {
    let split = |t: &str| -> (char, String) {
        if t == "O" {
            ('O', String::new())
        } else {
            let (p, ty) = t.split_once('-').unwrap();
            (p.chars().next().unwrap(), ty.to_string())
        }
    };
    let mut out = Vec::new();
    let (mut prev_tag, mut prev_type) = ('O', String::new());
    let mut start = 0;
    for (i, t) in tags.iter().chain(std::iter::once(&"O".to_string())).enumerate() {
        let (tag, ty) = split(t);
        let end = (prev_tag == 'B' || prev_tag == 'I') && (tag == 'B' || tag == 'O' || prev_type != ty);
        let begin = tag == 'B' || (tag == 'I' && (prev_tag == 'O' || prev_type != ty));
        if end {
            out.push((prev_type.clone(), start, i));
        }
        if begin {
            start = i;
        }
        prev_tag = tag;
        prev_type = ty;
    }
    out
}

fn random_tags(rng: &mut ChaCha8Rng) -> Vec<String> {
    let len = rng.gen_range(0..12);
    (0..len)
        .map(|_| match rng.gen_range(0..5) {
            0 | 1 => "O".to_string(),
            2 => format!("B-{}", ["A", "B", "C"][rng.gen_range(0..3)]),
            _ => format!("I-{}", ["A", "B", "C"][rng.gen_range(0..3)]),
        })
        .collect()
}

#[test]
fn chunker_agrees_with_conlleval_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for _ in 0..200 {
        let t = random_tags(&mut rng);
        let ours: Vec<_> = chunks(&t).into_iter().map(|c| (c.slot, c.start, c.end)).collect();
        assert_eq!(ours, conlleval_chunks(&t), "{t:?}");
    }
}

#[test]
fn slot_f1_hand_counts() {
    let gold = vec![tags("B-A I-A O B-B")];
    assert_eq!(conll_slot_f1(&gold, &gold).unwrap().f1, 1.0);
    let shifted = vec![tags("O B-A I-A O")];
    let one = vec![tags("B-A I-A O O")];
    assert_eq!(conll_slot_f1(&one, &shifted).unwrap().f1, 0.0);
    let pred = vec![tags("B-A I-A O B-C")];
    let prf = conll_slot_f1(&gold, &pred).unwrap();
    assert_eq!((prf.precision, prf.recall, prf.f1), (0.5, 0.5, 0.5));
    assert!(matches!(conll_slot_f1(&gold, &[]), Err(Error::LengthMismatch { .. })));
    assert!(conll_slot_f1(&gold, &[tags("O")]).is_err());
}

#[test]
fn slot_f1_matches_oracle_counts_on_random_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for _ in 0..200 {
        let g = random_tags(&mut rng);
        let mut p = g.clone();
        for t in p.iter_mut() {
            if rng.gen_bool(0.2) {
                *t = random_tags(&mut rng).pop().unwrap_or_else(|| "O".into());
            }
        }
        gold.push(g);
        pred.push(p);
    }
    let (mut c, mut ng, mut np) = (0, 0, 0);
    for (g, p) in gold.iter().zip(&pred) {
        let gc = conlleval_chunks(g);
        let pc = conlleval_chunks(p);
        ng += gc.len();
        np += pc.len();
        c += pc.iter().filter(|x| gc.contains(x)).count();
    }
    let prf = conll_slot_f1(&gold, &pred).unwrap();
    let (p, r) = (c as f64 / np as f64, c as f64 / ng as f64);
    assert!((prf.precision - p).abs() < 1e-15);
    assert!((prf.recall - r).abs() < 1e-15);
    assert!((prf.f1 - 2.0 * p * r / (p + r)).abs() < 1e-15);
}

#[test]
fn intent_accuracy_counts() {
    assert_eq!(intent_accuracy(&["a", "b"], &["a", "b"]).unwrap(), 1.0);
    assert_eq!(intent_accuracy(&["a", "b"], &["b", "a"]).unwrap(), 0.0);
    assert_eq!(intent_accuracy(&["a", "a", "b", "c"], &["a", "a", "b", "b"]).unwrap(), 0.75);
    assert!(intent_accuracy(&["a"], &[]).is_err());
}

#[test]
fn pair_f1_cases() {
    let empty = SemanticForm::new("i", vec![]);
    assert_eq!(pair_f1(&empty, &empty), 1.0);
    let a = SemanticForm::new("i", vec![SlotValue::new("A", "x"), SlotValue::new("B", "y")]);
    let b = SemanticForm::new("i", vec![SlotValue::new("C", "z")]);
    assert_eq!(pair_f1(&a, &b), 0.0);
    let one = SemanticForm::new("i", vec![SlotValue::new("A", "x")]);
    assert!((pair_f1(&a, &one) - 2.0 / 3.0).abs() < 1e-15);
}

/// Upper tail of chi-square(1) by Simpson integration of its density after
/// the substitution `x = u^2`, which removes the singularity at 0.
fn chi2_sf_oracle(stat: f64) -> f64 {
    let n = 200_000;
    let hi = stat.sqrt();
    let f = |u: f64| (2.0 / std::f64::consts::PI).sqrt() * (-u * u / 2.0).exp();
    let h = hi / n as f64;
    let mut s = f(0.0) + f(hi);
    for k in 1..n {
        s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - s * h / 3.0
}

fn paired(b: usize, c: usize, agree: usize) -> (Vec<bool>, Vec<bool>) {
    let mut x = vec![true; agree];
    let mut y = vec![true; agree];
    x.extend(std::iter::repeat_n(true, b));
    y.extend(std::iter::repeat_n(false, b));
    x.extend(std::iter::repeat_n(false, c));
    y.extend(std::iter::repeat_n(true, c));
    (x, y)
}

#[test]
fn mcnemar_fixture() {
    let (a, b) = paired(5, 15, 30);
    let m = mcnemar(&a, &b).unwrap();
    assert_eq!((m.b, m.c), (5, 15));
    assert!((m.statistic - 4.05).abs() < 1e-12);
    assert!((m.p_value - chi2_sf_oracle(4.05)).abs() < 1e-9);
    assert!((m.p_value - 0.0442).abs() < 5e-4);
    assert!(m.significant);
    // 2 * P(Bin(20, 1/2) <= 5) = 2 * 21700 / 2^20
    assert!((m.exact_p_value - 2.0 * 21700.0 / 1048576.0).abs() < 1e-12);
}

#[test]
fn mcnemar_degenerate_and_symmetric() {
    let same = vec![true, false, true];
    let m = mcnemar(&same, &same).unwrap();
    assert_eq!(m.p_value, 1.0);
    assert!(!m.significant);
    for k in 1..30 {
        let (a, b) = paired(k, k, 3);
        let m = mcnemar(&a, &b).unwrap();
        assert!(m.statistic <= 1.0 / (2 * k) as f64);
        assert!(!m.significant);
    }
    assert!(mcnemar(&[true], &[]).is_err());
}

proptest! {
    #[test]
    fn mcnemar_is_symmetric(a in proptest::collection::vec(any::<bool>(), 0..60), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<bool> = a.iter().map(|_| rng.gen()).collect();
        let x = mcnemar(&a, &b).unwrap();
        let y = mcnemar(&b, &a).unwrap();
        prop_assert_eq!(x.p_value, y.p_value);
        prop_assert_eq!(x.exact_p_value, y.exact_p_value);
    }

    #[test]
    fn pair_f1_permutation_invariant(n in 0usize..5, rot in 0usize..5) {
        let pairs: Vec<_> = (0..n).map(|i| SlotValue::new(format!("S{}", i % 3), &format!("v{i}"))).collect();
        let mut p2 = pairs.clone();
        if n > 0 { p2.rotate_left(rot % n); }
        let a = SemanticForm::new("i", pairs);
        let b = SemanticForm::new("i", p2);
        prop_assert_eq!(pair_f1(&a, &b), 1.0);
    }
}

fn m(epoch: usize, i: f64, s: f64) -> EpochMetrics {
    EpochMetrics {
        epoch,
        intent_acc: i,
        slot_f1: s,
    }
}

#[test]
fn select_best_rules() {
    assert!(select_best(&[]).is_err());
    assert_eq!(select_best(&[m(4, 0.1, 0.2)]).unwrap(), 4);
    assert_eq!(select_best(&[m(1, 0.1, 0.1), m(2, 0.2, 0.2), m(3, 0.3, 0.3)]).unwrap(), 3);
    let h: Vec<_> = (1..=8).map(|e| if e == 3 || e == 7 { m(e, 0.9, 0.8) } else { m(e, 0.5, 0.5) }).collect();
    assert_eq!(select_best(&h).unwrap(), 3);
}

#[test]
fn report_from_predictions() {
    let gold = vec![
        LabeledExample::from_strs("a b c", "B-X O B-Y", "i"),
        LabeledExample::from_strs("d e", "O B-X", "j"),
    ];
    let pt = vec![tags("B-X O B-Y"), tags("B-X O")];
    let pi = vec!["i".to_string(), "i".to_string()];
    let r = EvalReport::from_predictions(&gold, &pt, &pi).unwrap();
    assert_eq!(r.intent_accuracy, 0.5);
    assert!((r.slot_precision - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(r.slot_recall, 2.0 / 3.0);
    assert_eq!(r.avg, (r.intent_accuracy + r.slot_f1) / 2.0);
    assert_eq!(r.intent_correct, vec![true, false]);
    assert_eq!(r.slots_correct, vec![true, false]);
    assert_eq!(r.joint_correct, vec![true, false]);
    let tsv = r.correctness_tsv();
    assert_eq!(parse_correctness(&tsv, Correctness::Joint).unwrap(), r.joint_correct);
    assert!(r.to_kv().contains("slot_f1\t0.666667"));
    assert!(r.table().contains("intent_accuracy"));
}
