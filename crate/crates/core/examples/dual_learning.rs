//! The two closed loops of dual learning: rewards of individual rollouts, then
//! a dual-learning phase on top of pretrained models.
//!
//! cargo run --release --example dual_learning

use std::sync::Arc;

use dual_nlu::corpus::{build_vocab, make_semi_split};
use dual_nlu::eval::evaluate_nlu;
use dual_nlu::nlu::NluModel;
use dual_nlu::pipeline::ExperimentConfig;
use dual_nlu::ssg::SsgModel;
use dual_nlu::synthetic;
use dual_nlu::train::{dual_learning, nlu2ssg_rollouts, pretrain_supervised, ssg2nlu_rollouts, Knowledge, MetricsLog};

fn main() -> dual_nlu::Result<()> {
    let (train, valid, test) = synthetic::splits(2000, 5);
    let ds = make_semi_split(&train, 0.1, 5)?;
    let mut cfg = ExperimentConfig::desk(5);
    cfg.train.dual_epochs = 1;
    let vocab = Arc::new(build_vocab(&ds, 1));
    let valid_sentences: Vec<Vec<String>> = valid.iter().map(|e| e.tokens.clone()).collect();
    let knowledge = Knowledge::build(vocab.clone(), &ds, &valid_sentences, cfg.lm, cfg.lm_train)?;
    let ctx = knowledge.context(cfg.train.rewards);

    let mut nlu = NluModel::new(cfg.nlu, vocab.clone(), 1);
    let mut ssg = SsgModel::new(cfg.ssg, vocab, 2);
    let mut log = MetricsLog::new();
    pretrain_supervised(&mut nlu, Some(&mut ssg), &ds.labeled, &valid, &cfg.train, &mut log)?;
    println!("pretrained      slot F1 {:.4}", evaluate_nlu(&nlu, &test)?.slot_f1);

    let x = &ds.unlabeled_sentences[0];
    println!("\nsentence -> form -> sentence: {}", x.join(" "));
    for r in nlu2ssg_rollouts(&nlu, &ssg, x, &ctx, 3)? {
        println!("  reward {:.3}", r.reward);
    }
    let y = &ds.unexpressed_forms[0];
    println!("form -> sentence -> form: {y}");
    for r in ssg2nlu_rollouts(&nlu, &ssg, y, &ctx, 3)? {
        println!("  reward {:.3}", r.reward);
    }

    dual_learning(&mut nlu, &mut ssg, &ds, &valid, &ctx, &cfg.train, &mut log)?;
    println!("\ndual learning   slot F1 {:.4}", evaluate_nlu(&nlu, &test)?.slot_f1);
    Ok(())
}
