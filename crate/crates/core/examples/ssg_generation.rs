//! Training the semantic-to-sentence generator and realizing unseen forms with
//! greedy and beam decoding.
//!
//! cargo run --release --example ssg_generation

use std::sync::Arc;

use dual_nlu::corpus::{build_vocab, load_labeled, Dataset};
use dual_nlu::eval::evaluate_ssg;
use dual_nlu::nlu::{NluConfig, NluModel};
use dual_nlu::ssg::{SsgConfig, SsgModel};
use dual_nlu::train::{pretrain_supervised, MetricsLog, TrainConfig};

fn main() -> dual_nlu::Result<()> {
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic");
    let mut train = load_labeled(format!("{data}/train.txt"))?;
    train.truncate(300);
    let test = load_labeled(format!("{data}/test.txt"))?;
    let vocab = Arc::new(build_vocab(&Dataset::labeled_only(train.clone()), 1));
    let mut nlu = NluModel::new(NluConfig { embed_dim: 16, hidden: 16, tag_embed_dim: 8, ..NluConfig::default() }, vocab.clone(), 1);
    let mut ssg = SsgModel::new(SsgConfig { embed_dim: 32, hidden: 32, intent_dim: 16, dropout: 0.2, max_len: 30 }, vocab, 2);
    let cfg = TrainConfig { lr: 5e-3, epochs: 10, dropout: 0.2, seed: 1, ..TrainConfig::default() };
    pretrain_supervised(&mut nlu, Some(&mut ssg), &train, &test[..50], &cfg, &mut MetricsLog::new())?;

    let r = evaluate_ssg(&ssg, &test)?;
    println!("test BLEU {:.3}  slot accuracy {:.3}  ({} skipped)", r.bleu, r.slot_accuracy, r.skipped);
    for e in &test[..3] {
        let form = e.semantic_form();
        println!("\n{form}");
        println!("  reference  {}", e.tokens.join(" "));
        let g = ssg.greedy(&form)?;
        println!("  greedy     {}   [{}]", g.realize(&form).tokens.join(" "), g.delex);
        for g in ssg.beam(&form, 3)? {
            println!("  beam {:>7.3} {}", g.log_score, g.realize(&form).tokens.join(" "));
        }
    }
    Ok(())
}
