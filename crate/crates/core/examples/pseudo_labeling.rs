//! Pseudo-labeling with the tagger alone versus the dual variant that also
//! labels unexpressed forms through the generator.
//!
//! cargo run --release --example pseudo_labeling

use std::sync::Arc;

use dual_nlu::corpus::{build_vocab, make_semi_split};
use dual_nlu::eval::evaluate_nlu;
use dual_nlu::nlu::NluModel;
use dual_nlu::pipeline::ExperimentConfig;
use dual_nlu::ssg::SsgModel;
use dual_nlu::synthetic;
use dual_nlu::train::{dual_pseudo_labeling, make_pseudo_samples, pl_baseline, pretrain_supervised, MetricsLog};

fn main() -> dual_nlu::Result<()> {
    let (train, valid, test) = synthetic::splits(2000, 3);
    let ds = make_semi_split(&train, 0.1, 3)?;
    let cfg = ExperimentConfig::desk(3);
    let vocab = Arc::new(build_vocab(&ds, 1));
    let mut nlu = NluModel::new(cfg.nlu, vocab.clone(), 1);
    let mut ssg = SsgModel::new(cfg.ssg, vocab, 2);
    let mut log = MetricsLog::new();
    pretrain_supervised(&mut nlu, Some(&mut ssg), &ds.labeled, &valid, &cfg.train, &mut log)?;
    println!("supervised  slot F1 {:.4}", evaluate_nlu(&nlu, &test)?.slot_f1);

    for s in make_pseudo_samples(&nlu, &ssg, &ds, false, 1)?.iter().take(4) {
        println!("  {:?}: {}  =>  {}", s.origin, s.example.tokens.join(" "), s.form);
    }

    let mut pl = nlu.clone();
    pl_baseline(&mut pl, &ds, &valid, &cfg.train, &mut log)?;
    println!("PL          slot F1 {:.4}", evaluate_nlu(&pl, &test)?.slot_f1);
    dual_pseudo_labeling(&mut nlu, &mut ssg, &ds, &valid, &cfg.train, &mut log)?;
    println!("dual PL     slot F1 {:.4}", evaluate_nlu(&nlu, &test)?.slot_f1);
    Ok(())
}
