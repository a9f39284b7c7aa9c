use super::*;
use crate::params::Adam;
use crate::testutil::{grad_check, toy_examples, toy_vocab};

fn tiny(mode: TaggerMode, seed: u64) -> NluModel {
    let config = NluConfig {
        mode,
        embed_dim: 5,
        hidden: 4,
        tag_embed_dim: 3,
        dropout: 0.0,
    };
    NluModel::new(config, toy_vocab(), seed)
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn mode_parsing() {
    assert_eq!("crf".parse::<TaggerMode>().unwrap(), TaggerMode::Crf);
    assert_eq!(TaggerMode::Focus.to_string(), "focus");
    assert!(matches!("lstm".parse::<TaggerMode>(), Err(Error::UnknownMode(m)) if m == "lstm"));
}

#[test]
fn gradients_match_finite_differences_in_every_mode() {
    for mode in [TaggerMode::Softmax, TaggerMode::Crf, TaggerMode::Focus] {
        let mut m = tiny(mode, 3);
        let ex = m.index(&toy_examples()[1]).unwrap();
        grad_check(
            &mut m,
            |m| &mut m.params,
            |m, g| {
                m.accumulate(&ex, 1.0, g, None);
            },
            |m| {
                let mut g = Graph::new(&m.params);
                let (a, b) = m.loss_vars(&mut g, &ex, None);
                g.scalar(a) + g.scalar(b)
            },
            12,
        );
    }
}

#[test]
fn forward_shapes_and_normalization() {
    for mode in [TaggerMode::Softmax, TaggerMode::Crf, TaggerMode::Focus] {
        let m = tiny(mode, 1);
        let x = tokens("flights to boston");
        let out = m.forward(&x, None).unwrap();
        assert_eq!(out.intent_logprobs.len(), 2);
        let s: f64 = out.intent_logprobs.iter().map(|l| l.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(out.encoder.len(), 3);
        assert_eq!(out.encoder[0].len(), 8);
        match out.tags {
            TagScores::Distributions(d) => {
                assert_eq!(d.len(), 3);
                for row in d {
                    assert!((row.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
            TagScores::Crf { emissions, transitions, start } => {
                assert_eq!(mode, TaggerMode::Crf);
                assert_eq!(emissions.len(), 3);
                assert_eq!(transitions.rows, m.vocab.num_tags());
                assert_eq!(start.len(), m.vocab.num_tags());
            }
        }
        assert!(m.forward(&[], None).is_err());
    }
}

#[test]
fn tag_probabilities_sum_to_one_over_all_sequences() {
    for mode in [TaggerMode::Softmax, TaggerMode::Crf, TaggerMode::Focus] {
        let m = tiny(mode, 5);
        let x = tokens("fare to boston");
        let beam = m.beam_decode(&x, 5usize.pow(3));
        assert_eq!(beam.len(), 125);
        let total: f64 = beam.iter().map(|h| h.log_score.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9, "{mode}: {total}");
        for h in &beam {
            assert!((m.tags_logprob(&x, &h.tag_ids) - h.log_score).abs() < 1e-9);
        }
    }
}

#[test]
fn beam_scores_are_sorted_and_top1_matches_decoder() {
    for mode in [TaggerMode::Softmax, TaggerMode::Crf] {
        let m = tiny(mode, 8);
        let x = tokens("show flights from denver to boston");
        let beam = m.beam_decode(&x, 5);
        assert_eq!(beam.len(), 5);
        assert!(beam.windows(2).all(|w| w[0].log_score >= w[1].log_score));
        let top = m.decode_top1(&x);
        assert_eq!(beam[0].tags, top.tags);
        assert_eq!(beam[0].form, top.form);
    }
}

#[test]
fn softmax_beam_is_exact_k_best() {
    let m = tiny(TaggerMode::Softmax, 4);
    let x = tokens("fare from boston to denver");
    let all = m.beam_decode(&x, 5usize.pow(5));
    let k5 = m.beam_decode(&x, 5);
    assert_eq!(&all[..5], &k5[..]);
}

#[test]
fn empty_sentence_decodes_to_empty_form() {
    let m = tiny(TaggerMode::Focus, 0);
    let d = m.decode_top1(&[]);
    assert!(d.form.pairs.is_empty());
    assert!(m.beam_decode(&[], 3).is_empty());
}

#[test]
fn dropout_is_only_active_with_rng() {
    let mut m = tiny(TaggerMode::Softmax, 2);
    m.config.dropout = 0.5;
    let ex = m.index(&toy_examples()[0]).unwrap();
    let mut g = Grads::zeros_like(&m.params);
    let a = m.accumulate(&ex, 0.0, &mut g, None);
    let b = m.accumulate(&ex, 0.0, &mut g, None);
    assert_eq!(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = m.accumulate(&ex, 0.0, &mut g, Some(&mut rng));
    assert_ne!(a, c);
    assert!(g.is_zero());
}

#[test]
fn overfits_toy_corpus() {
    for mode in [TaggerMode::Softmax, TaggerMode::Crf, TaggerMode::Focus] {
        let mut m = tiny(mode, 6);
        m.config.hidden = 4;
        let data: Vec<_> = toy_examples().iter().map(|e| m.index(e).unwrap()).collect();
        let mut adam = Adam::new(&m.params, 0.05, 0.0);
        let first: f64 = data.iter().map(|e| m.accumulate(e, 0.0, &mut Grads::zeros_like(&m.params), None)).sum();
        for _ in 0..150 {
            let mut g = Grads::zeros_like(&m.params);
            for e in &data {
                m.accumulate(e, 1.0 / data.len() as f64, &mut g, None);
            }
            adam.step(&mut m.params, &g);
        }
        let last: f64 = data.iter().map(|e| m.accumulate(e, 0.0, &mut Grads::zeros_like(&m.params), None)).sum();
        assert!(last < 0.1 * first, "{mode}: {first} -> {last}");
        for e in toy_examples() {
            let d = m.decode_top1(&e.tokens);
            assert_eq!(d.form, e.semantic_form(), "{mode}");
        }
    }
}

#[test]
fn index_rejects_unknown_labels() {
    let m = tiny(TaggerMode::Softmax, 0);
    let bad = LabeledExample::from_strs("to boston", "O B-Nowhere", "fare");
    assert!(m.index(&bad).is_err());
    let bad_intent = LabeledExample::from_strs("to boston", "O O", "book");
    assert!(m.index(&bad_intent).is_err());
}
