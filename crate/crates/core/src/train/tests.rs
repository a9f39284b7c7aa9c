use std::collections::HashMap;
use std::sync::Arc;

use super::*;
use crate::corpus::{build_com, build_lexicon_db, build_vocab, iob_to_slot_values, SemanticForm, SlotValue, Vocabulary};
use crate::nlu::{NluConfig, TaggerMode};
use crate::rewards::{semantic_reconstruction, semantic_validity, sentence_bleu, sentence_validity, LmConfig, LmTrainConfig, UnigramLm};
use crate::ssg::SsgConfig;
use crate::testutil::{toy_examples, toy_vocab};

fn nlu_cfg(mode: TaggerMode) -> NluConfig {
    NluConfig {
        mode,
        embed_dim: 6,
        hidden: 5,
        tag_embed_dim: 3,
        dropout: 0.0,
    }
}

fn ssg_cfg() -> SsgConfig {
    SsgConfig {
        embed_dim: 5,
        hidden: 4,
        intent_dim: 3,
        dropout: 0.0,
        max_len: 10,
    }
}

fn models(vocab: Arc<Vocabulary>, seed: u64) -> (NluModel, SsgModel) {
    (
        NluModel::new(nlu_cfg(TaggerMode::Focus), vocab.clone(), seed),
        SsgModel::new(ssg_cfg(), vocab, seed + 1),
    )
}

fn fast(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 0.02,
        batch_size: 2,
        dropout: 0.1,
        epochs: 3,
        pl_iterations: 2,
        dual_epochs: 1,
        beam_k: 2,
        seed,
        ..TrainConfig::default()
    }
}

fn toy_dataset() -> Dataset {
    let all = toy_examples();
    Dataset {
        labeled: all[..2].to_vec(),
        unlabeled_sentences: vec![all[2].tokens.clone()],
        unexpressed_forms: vec![all[3].semantic_form()],
    }
}

fn unigram() -> UnigramLm {
    UnigramLm {
        probs: HashMap::new(),
        unk: 0.1,
        eos: Some(0.1),
    }
}

fn grads_close(a: &Grads, b: &Grads, tol: f64) {
    for (x, y) in a.data.iter().flatten().zip(b.data.iter().flatten()) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let c = TrainConfig::default();
    assert_eq!((c.lr, c.batch_size, c.clip, c.l2, c.dropout, c.epochs, c.beam_k), (1e-3, 16, 5.0, 1e-5, 0.5, 50, 5));
    assert!(TrainConfig { beam_k: 0, ..c }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..c }.validate().is_err());
    assert!(TrainConfig { pl_iterations: 0, ..c }.validate().is_err());
}

#[test]
fn pl_weight_schedule() {
    assert_eq!(pl_weight(1, 10), 0.1);
    assert_eq!(pl_weight(10, 10), 1.0);
    assert_eq!(pl_weight(1, 1), 1.0);
    assert!((1..10).all(|i| pl_weight(i, 10) < pl_weight(i + 1, 10)));
}

#[test]
fn metrics_log_line_format() {
    let mut log = MetricsLog::new();
    log.record(
        "pretrain",
        "valid",
        &EpochMetrics {
            epoch: 3,
            intent_acc: 0.5,
            slot_f1: 0.25,
        },
    );
    assert_eq!(log.render(), "pretrain\t3\tvalid\t0.500000\t0.250000\t0.375000\n");
}

#[test]
fn pseudo_sample_counts_and_round_trip() {
    let vocab = toy_vocab();
    let (nlu, ssg) = models(vocab, 3);
    let mut ds = Dataset::labeled_only(toy_examples()[..1].to_vec());
    assert!(make_pseudo_samples(&nlu, &ssg, &ds, false, 1).unwrap().is_empty());
    ds.unlabeled_sentences.push(toy_examples()[1].tokens.clone());
    let s = make_pseudo_samples(&nlu, &ssg, &ds, false, 1).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].origin, Origin::NluOnUnlabeled);
    assert_eq!(s[0].example.tokens, toy_examples()[1].tokens);

    let form = SemanticForm::new("find_flight", vec![SlotValue::new("FromCity", "boston"), SlotValue::new("ToCity", "new york")]);
    let ds = Dataset {
        labeled: toy_examples()[..1].to_vec(),
        unlabeled_sentences: vec![],
        unexpressed_forms: vec![form.clone()],
    };
    for seed in 0..6 {
        let (nlu, ssg) = models(toy_vocab(), seed);
        let s = make_pseudo_samples(&nlu, &ssg, &ds, false, 2).unwrap();
        assert!(s.len() <= 1);
        for p in &s {
            assert_eq!(p.origin, Origin::SsgOnUnexpressed);
            assert_eq!(p.iteration, 2);
            for pair in iob_to_slot_values(&p.example.tokens, &p.example.tags) {
                assert!(form.pairs.contains(&pair), "{pair:?}");
            }
        }
    }
    let with_labeled = make_pseudo_samples(&nlu, &ssg, &ds, true, 1).unwrap();
    assert!(with_labeled.iter().any(|p| p.origin == Origin::NluOnLabeled));
}

#[test]
fn pretraining_overfits_small_corpus() {
    let mut data = toy_examples();
    data.push(LabeledExample::from_strs("show fare to denver", "O O O B-ToCity", "fare"));
    let vocab = Arc::new(build_vocab(&Dataset::labeled_only(data.clone()), 1));
    let mut nlu = NluModel::new(nlu_cfg(TaggerMode::Focus), vocab, 2);
    let cfg = TrainConfig {
        lr: 0.02,
        batch_size: 16,
        dropout: 0.0,
        epochs: 200,
        ..TrainConfig::default()
    };
    let report = pretrain_supervised(&mut nlu, None, &data, &[], &cfg, &mut MetricsLog::new()).unwrap();
    assert_eq!(report.history.len(), 201);
    let (mut hit, mut n) = (0, 0);
    for e in &data {
        let d = nlu.decode_top1(&e.tokens);
        hit += d.tags.iter().zip(&e.tags).filter(|(a, b)| a == b).count();
        n += e.tags.len();
    }
    assert!(hit as f64 / n as f64 >= 0.99);
    assert_eq!(report.best().avg(), 1.0);
}

#[test]
fn pretraining_is_deterministic() {
    let run = || {
        let (mut nlu, mut ssg) = models(toy_vocab(), 5);
        let mut log = MetricsLog::new();
        pretrain_supervised(&mut nlu, Some(&mut ssg), &toy_examples(), &toy_examples()[..2], &fast(9), &mut log).unwrap();
        (nlu.params, ssg.params, log.render())
    };
    assert_eq!(run(), run());
}

#[test]
fn pl_baseline_equals_restricted_dual_pl() {
    let ds = toy_dataset();
    let cfg = fast(4);
    let (mut a, _) = models(toy_vocab(), 1);
    let (mut b, mut ssg) = models(toy_vocab(), 1);
    pl_baseline(&mut a, &ds, &[], &cfg, &mut MetricsLog::new()).unwrap();
    pseudo_labeling(&mut b, Some(&mut ssg), &ds, &[], &[Origin::NluOnUnlabeled], &cfg, &mut MetricsLog::new(), "x").unwrap();
    assert_eq!(a.params, b.params);
    assert!(pseudo_labeling(&mut b, None, &ds, &[], &[Origin::SsgOnUnexpressed], &cfg, &mut MetricsLog::new(), "x").is_err());
}

fn reward_fixture() -> (NluModel, SsgModel, LexiconDbCom) {
    let (mut nlu, mut ssg) = models(toy_vocab(), 11);
    // Partly trained so beam outputs terminate and rewards are non-trivial.
    let cfg = TrainConfig { epochs: 15, dropout: 0.0, ..fast(1) };
    pretrain_supervised(&mut nlu, Some(&mut ssg), &toy_examples(), &[], &cfg, &mut MetricsLog::new()).unwrap();
    let db = build_lexicon_db(&toy_examples());
    let com = build_com(&toy_examples());
    (nlu, ssg, (db, com))
}

type LexiconDbCom = (crate::corpus::LexiconDb, crate::corpus::CoOccurrenceMatrix);

#[test]
fn nlu2ssg_gradient_is_reward_weighted_sum_of_supervised_gradients() {
    let (nlu, ssg, (db, com)) = reward_fixture();
    let lm = unigram();
    let w = RewardWeights::default();
    let ctx = RewardContext { db: &db, com: &com, lm: &lm, weights: w };
    let x = toy_examples()[0].tokens.clone();
    let k = 4;
    let got = nlu2ssg_step(&nlu, &ssg, &x, &ctx, k, None).unwrap();

    let hyps = nlu.beam_decode(&x, k);
    assert_eq!(hyps.len(), k);
    let mut want_nlu = Grads::zeros_like(&nlu.params);
    let mut want_ssg = Grads::zeros_like(&ssg.params);
    for (j, h) in hyps.iter().enumerate() {
        let val = semantic_validity(&h.form, &db, &com, w.lambda).reward;
        let gen = ssg.greedy(&h.form).unwrap();
        let rec = if gen.truncated { 0.0 } else { sentence_bleu(&x, &gen.realize(&h.form).tokens) };
        let r = w.alpha * val + (1.0 - w.alpha) * rec;
        assert_eq!(got.rewards[j], r);
        let ex = IndexedExample {
            words: nlu.vocab.encode(&x),
            tags: h.tag_ids.clone(),
            intent: nlu.vocab.intent_id(&h.form.intent).unwrap(),
        };
        let mut g = Grads::zeros_like(&nlu.params);
        nlu.accumulate(&ex, 1.0, &mut g, None);
        want_nlu.add_scaled(&g, r / k as f64);
        let sx = ssg.index(&h.form, &crate::corpus::delexicalize(&x, &h.tags)).unwrap();
        let mut g = Grads::zeros_like(&ssg.params);
        ssg.accumulate(&sx, 1.0, &mut g, None);
        want_ssg.add_scaled(&g, (1.0 - w.alpha) * rec / k as f64);
    }
    grads_close(&got.nlu, &want_nlu, 1e-10);
    grads_close(&got.ssg, &want_ssg, 1e-10);
    assert!(!got.nlu.is_zero());
}

#[test]
fn ssg2nlu_gradient_is_reward_weighted_sum_of_supervised_gradients() {
    let (nlu, ssg, (db, com)) = reward_fixture();
    let lm = unigram();
    let w = RewardWeights::default();
    let ctx = RewardContext { db: &db, com: &com, lm: &lm, weights: w };
    let y = toy_examples()[1].semantic_form();
    let k = 3;
    let got = ssg2nlu_step(&nlu, &ssg, &y, &ctx, k, None).unwrap();

    let gens = ssg.beam(&y, k).unwrap();
    let mut want_nlu = Grads::zeros_like(&nlu.params);
    let mut want_ssg = Grads::zeros_like(&ssg.params);
    let mut live = 0;
    for (j, gen) in gens.iter().enumerate() {
        let r = gen.realize(&y);
        if gen.truncated || r.tokens.is_empty() {
            assert_eq!(got.rewards[j], 0.0);
            continue;
        }
        live += 1;
        let val = sentence_validity(&gen.delex, &y, &lm, &r.tokens, w.gamma).unwrap();
        let rec = semantic_reconstruction(&y, &nlu.decode_top1(&r.tokens).form, w.omega);
        let reward = w.beta * val + (1.0 - w.beta) * rec;
        assert!((got.rewards[j] - reward).abs() < 1e-15);
        let mut g = Grads::zeros_like(&ssg.params);
        ssg.accumulate(&ssg.index(&y, &gen.delex).unwrap(), 1.0, &mut g, None);
        want_ssg.add_scaled(&g, reward / gens.len() as f64);
        let back = nlu.index(&LabeledExample::new(r.tokens, r.tags, y.intent.clone())).unwrap();
        let mut g = Grads::zeros_like(&nlu.params);
        nlu.accumulate(&back, 1.0, &mut g, None);
        want_nlu.add_scaled(&g, (1.0 - w.beta) * rec / gens.len() as f64);
    }
    assert!(live > 0);
    grads_close(&got.nlu, &want_nlu, 1e-10);
    grads_close(&got.ssg, &want_ssg, 1e-10);

    let only_validity = RewardContext {
        weights: RewardWeights { beta: 1.0, ..w },
        ..ctx
    };
    assert!(ssg2nlu_step(&nlu, &ssg, &y, &only_validity, k, None).unwrap().nlu.is_zero());
}

#[test]
fn zero_rewards_contribute_nothing_and_unit_reward_is_supervised() {
    let (nlu, ssg, (db, com)) = reward_fixture();
    let lm = unigram();
    let ctx = RewardContext { db: &db, com: &com, lm: &lm, weights: RewardWeights::default() };
    let x = toy_examples()[0].tokens.clone();
    let mut r = nlu2ssg_rollouts(&nlu, &ssg, &x, &ctx, 3).unwrap();
    for ro in r.iter_mut() {
        ro.nlu.as_mut().unwrap().1 = 0.0;
        ro.ssg.as_mut().unwrap().1 = 0.0;
    }
    let z = assemble(&nlu, &ssg, &r, Some(1));
    assert!(z.nlu.is_zero() && z.ssg.is_zero());

    let mut one = nlu2ssg_rollouts(&nlu, &ssg, &x, &ctx, 1).unwrap();
    one[0].nlu.as_mut().unwrap().1 = 1.0;
    let got = assemble(&nlu, &ssg, &one, None);
    let mut want = Grads::zeros_like(&nlu.params);
    nlu.accumulate(&one[0].nlu.as_ref().unwrap().0, 1.0, &mut want, None);
    assert_eq!(got.nlu, want);
}

#[test]
fn dual_learning_without_batches_leaves_models_unchanged() {
    let (mut nlu, mut ssg, (db, com)) = reward_fixture();
    let lm = unigram();
    let ctx = RewardContext { db: &db, com: &com, lm: &lm, weights: RewardWeights::default() };
    let before = (nlu.params.clone(), ssg.params.clone());
    let cfg = TrainConfig { dual_epochs: 0, ..fast(1) };
    let rep = dual_learning(&mut nlu, &mut ssg, &toy_dataset(), &[], &ctx, &cfg, &mut MetricsLog::new()).unwrap();
    assert_eq!(rep.history.len(), 1);
    assert_eq!((nlu.params, ssg.params), before);
}

#[test]
fn combined_training_runs_phases_in_order_deterministically() {
    let ds = toy_dataset();
    let vocab = Arc::new(build_vocab(&ds, 1));
    let lm_cfg = LmConfig {
        embed_dim: 3,
        hidden: 3,
        dropout: 0.0,
    };
    let lm_tc = LmTrainConfig {
        epochs: 2,
        ..LmTrainConfig::default()
    };
    let run = || {
        let knowledge = Knowledge::build(vocab.clone(), &ds, &[], lm_cfg, lm_tc).unwrap();
        let (mut nlu, mut ssg) = models(vocab.clone(), 2);
        let mut log = MetricsLog::new();
        let rep = combined_training(&mut nlu, &mut ssg, &ds, &toy_examples()[2..], &knowledge, &fast(3), &mut log).unwrap();
        (log.render(), nlu.params, ssg.params, rep)
    };
    let (log, nlu, ssg, rep) = run();
    let phases: Vec<&str> = log.lines().map(|l| l.split('\t').next().unwrap()).collect();
    let first = |p: &str| phases.iter().position(|x| *x == p).unwrap();
    assert!(first("pretrain") < first("dual-pl") && first("dual-pl") < first("dual-learning"));
    assert_eq!(phases.len(), 4 + 3 + 2);
    assert_eq!(rep.pseudo_labeling.history[0], EpochMetrics { ..*rep.pretrain.best() }.with_epoch(0));
    let again = run();
    assert_eq!((log, nlu, ssg), (again.0, again.1, again.2));
}

trait WithEpoch {
    fn with_epoch(self, e: usize) -> Self;
}

impl WithEpoch for EpochMetrics {
    fn with_epoch(mut self, e: usize) -> Self {
        self.epoch = e;
        self
    }
}
