use super::*;
use crate::corpus::SlotValue;
use crate::params::Adam;
use crate::testutil::{grad_check, toy_examples, toy_vocab};

fn config() -> SsgConfig {
    SsgConfig {
        embed_dim: 4,
        hidden: 3,
        intent_dim: 2,
        dropout: 0.0,
        max_len: 12,
    }
}

fn tiny(seed: u64) -> SsgModel {
    SsgModel::new(config(), toy_vocab(), seed)
}

fn two_pairs() -> (SemanticForm, DelexicalizedForm) {
    let e = &toy_examples()[0];
    (e.semantic_form(), e.delexicalized())
}

#[test]
fn gradients_match_finite_differences() {
    let (form, delex) = two_pairs();
    let mut m = tiny(4);
    // Larger weights make the reading gate and copy gate move visibly.
    for (id, _, _) in m.params.clone().iter() {
        for k in 0..m.params.get(id).len() {
            *m.params.scalar_mut(id, k) *= 4.0;
        }
    }
    let ex = m.index(&form, &delex).unwrap();
    let steps = m.forward(&form, &delex).unwrap();
    assert!(steps.iter().any(|s| s.gate > 0.05 && s.gate < 0.95));
    assert!(steps.last().unwrap().slot_state.iter().any(|&v| v > 0.0 && v < 1.0));
    grad_check(
        &mut m,
        |m| &mut m.params,
        |m, g| {
            m.accumulate(&ex, 1.0, g, None);
        },
        |m| m.loss_indexed(&ex).total(),
        10,
    );
}

#[test]
fn slot_state_starts_one_hot_and_decays() {
    let m = tiny(1);
    let (form, delex) = two_pairs();
    let s0 = m.initial_slot_state(&form).unwrap();
    assert_eq!(s0.iter().filter(|&&v| v == 1.0).count(), 2);
    assert_eq!(s0.iter().filter(|&&v| v == 0.0).count(), s0.len() - 2);
    let mut dup = form.clone();
    dup.pairs.push(SlotValue::new("ToCity", "austin"));
    assert_eq!(m.initial_slot_state(&dup).unwrap(), s0);
    let mut prev = s0;
    for step in m.forward(&form, &delex).unwrap() {
        for (a, b) in step.slot_state.iter().zip(&prev) {
            assert!(*a <= *b && *a >= 0.0);
        }
        prev = step.slot_state;
    }
}

#[test]
fn mixture_is_normalized_and_copy_is_supported_on_present_slots() {
    let m = tiny(2);
    let (form, delex) = two_pairs();
    let from = m.slot_out(m.vocab.slot_id("FromCity").unwrap());
    let to = m.slot_out(m.vocab.slot_id("ToCity").unwrap());
    for step in m.forward(&form, &delex).unwrap() {
        assert!((step.mixture.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((step.p_gen.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((step.p_copy.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (o, &p) in step.p_copy.iter().enumerate() {
            if o != from && o != to {
                assert_eq!(p, 0.0);
            }
        }
        for o in 0..m.out_size() {
            let expect = step.gate * step.p_gen[o] + (1.0 - step.gate) * step.p_copy[o];
            assert!((step.mixture[o] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn nll_matches_step_outputs() {
    let m = tiny(3);
    let (form, delex) = two_pairs();
    let targets = m.target_ids(&delex).unwrap();
    let steps = m.forward(&form, &delex).unwrap();
    let nll: f64 = steps.iter().zip(&targets).map(|(s, &t)| -s.mixture[t].ln()).sum();
    let loss = m.loss(&form, &delex).unwrap();
    assert!((loss.nll - nll).abs() < 1e-10);
    let last = steps.last().unwrap();
    assert!(loss.sc >= last.slot_state.iter().map(|v| v * v).sum::<f64>().sqrt());
    assert!((m.sequence_logprob(&form, &targets).unwrap() + nll).abs() < 1e-10);
}

#[test]
fn empty_form_has_closed_form_slot_penalty() {
    let m = tiny(5);
    let form = SemanticForm::new("fare", vec![]);
    let delex = DelexicalizedForm::parse("what is the fare");
    let loss = m.loss(&form, &delex).unwrap();
    assert!((loss.sc - 5.0 * SC_ETA).abs() < 1e-15);
    let enc = m.encode_semantics(&form).unwrap();
    assert!(enc.global.is_empty());
    for step in m.forward(&form, &delex).unwrap() {
        assert_eq!(step.mixture, step.p_gen);
        assert!(step.attention.is_empty());
    }
}

#[test]
fn encoder_is_order_sensitive() {
    let m = tiny(6);
    let a = SemanticForm::new("find_flight", vec![SlotValue::new("ToCity", "new york")]);
    let b = SemanticForm::new("find_flight", vec![SlotValue::new("ToCity", "york new")]);
    let ea = m.encode_semantics(&a).unwrap();
    let eb = m.encode_semantics(&b).unwrap();
    assert_eq!(ea.global.len(), 1);
    assert!(ea.global[0].iter().all(|v| v.is_finite()));
    assert_ne!(ea.local_means[0], eb.local_means[0]);
}

#[test]
fn unknown_placeholder_is_rejected() {
    let m = tiny(0);
    let (form, _) = two_pairs();
    let bad = DelexicalizedForm::parse("flights to <Airline>");
    assert!(matches!(m.forward(&form, &bad), Err(Error::UnknownSlot(s)) if s == "Airline"));
}

#[test]
fn greedy_equals_width_one_beam_and_is_deterministic() {
    let m = tiny(7);
    let (form, _) = two_pairs();
    let g = m.greedy(&form).unwrap();
    assert_eq!(g, m.beam(&form, 1).unwrap()[0]);
    assert_eq!(g, m.greedy(&form).unwrap());
    let b = m.beam(&form, 5).unwrap();
    assert!(b.windows(2).all(|w| w[0].log_score >= w[1].log_score));
    for h in &b {
        let mut ids = h.ids.clone();
        if !h.truncated {
            ids.push(SsgModel::EOS_OUT);
        }
        assert!((m.sequence_logprob(&form, &ids).unwrap() - h.log_score).abs() < 1e-9);
    }
}

#[test]
fn beam_is_exhaustive_on_tiny_output_space() {
    let vocab = Arc::new(Vocabulary::from_parts(["a".to_string()], ["q".to_string()], ["X".to_string()]));
    let mut cfg = config();
    cfg.max_len = 3;
    let m = SsgModel::new(cfg, vocab, 9);
    assert_eq!(m.out_size(), 4);
    let form = SemanticForm::new("q", vec![SlotValue::new("X", "a")]);
    // Every sequence: up to two non-EOS tokens then EOS, or three non-EOS tokens.
    let mut all: Vec<(Vec<usize>, bool)> = vec![(vec![], false)];
    for a in 1..4 {
        all.push((vec![a], false));
        for b in 1..4 {
            all.push((vec![a, b], false));
            for c in 1..4 {
                all.push((vec![a, b, c], true));
            }
        }
    }
    assert_eq!(all.len(), 40);
    let mut scored: Vec<(f64, Vec<usize>)> = all
        .iter()
        .map(|(ids, trunc)| {
            let mut full = ids.clone();
            if !trunc {
                full.push(0);
            }
            (m.sequence_logprob(&form, &full).unwrap(), ids.clone())
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for k in [1, 5, 40] {
        let beam = m.beam(&form, k).unwrap();
        if k == 40 {
            assert_eq!(beam.len(), 40);
            for (h, (s, ids)) in beam.iter().zip(&scored) {
                assert_eq!(&h.ids, ids);
                assert!((h.log_score - s).abs() < 1e-9);
            }
        }
        assert!((beam[0].log_score - scored[0].0).abs() < 1e-9 || k < 40);
    }
}

#[test]
fn overfits_toy_corpus() {
    let mut m = tiny(8);
    m.config.hidden = 3;
    let data: Vec<_> = toy_examples().iter().map(|e| m.index_labeled(e).unwrap()).collect();
    let mut adam = Adam::new(&m.params, 0.05, 0.0);
    for _ in 0..300 {
        let mut g = Grads::zeros_like(&m.params);
        for e in &data {
            m.accumulate(e, 1.0 / data.len() as f64, &mut g, None);
        }
        adam.step(&mut m.params, &g);
    }
    for e in toy_examples() {
        let gen = m.greedy(&e.semantic_form()).unwrap();
        assert_eq!(gen.delex, e.delexicalized());
        let r = gen.realize(&e.semantic_form());
        assert_eq!(r.tokens, e.tokens);
        assert_eq!(r.mismatches(), 0);
    }
}
