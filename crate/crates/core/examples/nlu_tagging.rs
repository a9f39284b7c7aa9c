//! Supervised training of the joint intent / slot tagger in each head mode,
//! then K-best decoding of a held-out sentence.
//!
//! cargo run --release --example nlu_tagging -- [softmax|crf|focus]

use std::sync::Arc;

use dual_nlu::corpus::{build_vocab, load_labeled, Dataset};
use dual_nlu::eval::evaluate_nlu;
use dual_nlu::nlu::{NluConfig, NluModel, TaggerMode};
use dual_nlu::train::{pretrain_supervised, MetricsLog, TrainConfig};

fn main() -> dual_nlu::Result<()> {
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic");
    let mut train = load_labeled(format!("{data}/train.txt"))?;
    train.truncate(200);
    let test = load_labeled(format!("{data}/test.txt"))?;
    let modes: Vec<TaggerMode> = match std::env::args().nth(1) {
        Some(m) => vec![m.parse()?],
        None => vec![TaggerMode::Softmax, TaggerMode::Crf, TaggerMode::Focus],
    };
    let vocab = Arc::new(build_vocab(&Dataset::labeled_only(train.clone()), 1));
    let cfg = TrainConfig { lr: 5e-3, epochs: 15, dropout: 0.2, seed: 1, ..TrainConfig::default() };
    for mode in modes {
        let nc = NluConfig { mode, embed_dim: 32, hidden: 32, tag_embed_dim: 16, dropout: 0.2 };
        let mut nlu = NluModel::new(nc, vocab.clone(), 1);
        let report = pretrain_supervised(&mut nlu, None, &train, &test[..100], &cfg, &mut MetricsLog::new())?;
        let r = evaluate_nlu(&nlu, &test)?;
        println!("{mode:<8} best epoch {:>2}  intent acc {:.3}  slot F1 {:.3}", report.best_epoch, r.intent_accuracy, r.slot_f1);

        let x = &test[0].tokens;
        for h in nlu.beam_decode(x, 3) {
            println!("    {:>8.3}  {}", h.log_score, h.form);
        }
    }
    Ok(())
}
