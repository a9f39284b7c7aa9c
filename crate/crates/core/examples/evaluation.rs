//! Evaluation reports for two tagger variants and McNemar's test on their
//! per-example correctness.
//!
//! cargo run --release --example evaluation

use dual_nlu::corpus::load_labeled;
use dual_nlu::eval::{conll_slot_f1, evaluate_nlu, mcnemar};
use dual_nlu::pipeline::{train_regime, ExperimentConfig, Regime};
use dual_nlu::corpus::make_semi_split;
use dual_nlu::train::MetricsLog;

fn main() -> dual_nlu::Result<()> {
    let gold = vec![vec!["B-FromCity", "O", "B-ToCity", "I-ToCity"]];
    let pred = vec![vec!["B-FromCity", "O", "B-ToCity", "O"]];
    let prf = conll_slot_f1(&gold, &pred)?;
    println!("one boundary error: P {:.2} R {:.2} F1 {:.2}\n", prf.precision, prf.recall, prf.f1);

    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic");
    let train = load_labeled(format!("{data}/train.txt"))?;
    let valid = load_labeled(format!("{data}/valid.txt"))?;
    let test = load_labeled(format!("{data}/test.txt"))?;
    let ds = make_semi_split(&train, 0.1, 1)?;
    let cfg = ExperimentConfig::desk(1);

    let mut reports = Vec::new();
    for regime in [Regime::Supervised, Regime::DualPl] {
        let t = train_regime(regime, &ds, &valid, &cfg, None, &mut MetricsLog::new())?;
        let r = evaluate_nlu(&t.nlu, &test)?;
        println!("{regime}\n{}", r.table());
        reports.push(r);
    }
    let m = mcnemar(&reports[0].slots_correct, &reports[1].slots_correct)?;
    println!(
        "McNemar on slot correctness: b={} c={} statistic {:.3} p {:.4} (exact {:.4}) significant {}",
        m.b, m.c, m.statistic, m.p_value, m.exact_p_value, m.significant
    );
    Ok(())
}
