//! The reward functions on hand-made inputs, plus a small LSTM language model.
//!
//! cargo run --release --example rewards

use std::sync::Arc;

use dual_nlu::corpus::{build_com, build_lexicon_db, build_vocab, load_labeled, Dataset, DelexicalizedForm, SemanticForm, SlotValue};
use dual_nlu::rewards::{
    lm_logprob_normalized, lm_train, semantic_reconstruction, semantic_validity, sentence_bleu, sentence_validity,
    LmConfig, LmTrainConfig,
};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn main() -> dual_nlu::Result<()> {
    let train = load_labeled(concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic/train.txt"))?;
    let db = build_lexicon_db(&train);
    let com = build_com(&train);

    let good = SemanticForm::new("find_flight", vec![SlotValue::new("FromCity", "boston"), SlotValue::new("ToCity", "denver")]);
    let odd = SemanticForm::new("ground_service", vec![SlotValue::new("FromCity", "new denver"), SlotValue::new("Airline", "tuesday")]);
    for f in [&good, &odd] {
        let v = semantic_validity(f, &db, &com, 0.5);
        println!("validity {:.3} (values {:.3}, intent fit {:.3})  {f}", v.reward, v.slot_value, v.slot_intent);
    }
    println!("reconstruction of a half-recovered form: {:.3}", semantic_reconstruction(&good, &SemanticForm::new("find_flight", good.pairs[..1].to_vec()), 0.5));

    let reference = words("show me flights from boston to denver");
    for hyp in ["show me flights from boston to denver", "flights from boston to denver", "denver boston"] {
        println!("BLEU {:.3}  {hyp}", sentence_bleu(&reference, &words(hyp)));
    }

    let sentences: Vec<Vec<String>> = train.iter().map(|e| e.tokens.clone()).collect();
    let vocab = Arc::new(build_vocab(&Dataset::labeled_only(train.clone()), 1));
    let cfg = LmConfig { embed_dim: 32, hidden: 32, dropout: 0.2 };
    let tc = LmTrainConfig { epochs: 3, lr: 5e-3, ..LmTrainConfig::default() };
    let (lm, ppl) = lm_train(vocab, &sentences[..1000], &sentences[1000..], cfg, tc)?;
    println!("LM validation perplexity by epoch: {ppl:.2?}");
    for s in ["show me flights from boston to denver", "denver me boston show flights to from"] {
        println!("normalized log-prob {:.3}  {s}", lm_logprob_normalized(&lm, &words(s))?);
    }
    let gen = DelexicalizedForm::parse("show me flights from <FromCity> to <ToCity>");
    println!("sentence validity {:.3}", sentence_validity(&gen, &good, &lm, &reference, 0.5)?);
    Ok(())
}
