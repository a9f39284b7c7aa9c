//! The desk-scale semi-supervised comparison on the synthetic flight domain:
//! test slot F1 after supervised pretraining, dual pseudo-labeling and dual
//! learning, for each seed.
//!
//! cargo run --release --example desk_experiment -- [ratio] [seeds...]

use dual_nlu::pipeline::{desk_experiment, ExperimentConfig};

fn main() -> dual_nlu::Result<()> {
    let mut args = std::env::args().skip(1);
    let ratio: f64 = args.next().map(|r| r.parse().expect("ratio")).unwrap_or(0.1);
    let mut seeds: Vec<u64> = args.map(|s| s.parse().expect("seed")).collect();
    if seeds.is_empty() {
        seeds = vec![1, 2, 3];
    }
    println!("seed\tsupervised\tdual-pl\tcombined");
    let mut sum = [0.0; 3];
    for &seed in &seeds {
        let r = desk_experiment(seed, ratio, &ExperimentConfig::desk(seed))?;
        println!("{seed}\t{:.4}\t{:.4}\t{:.4}", r.supervised, r.dual_pl, r.combined);
        sum[0] += r.supervised;
        sum[1] += r.dual_pl;
        sum[2] += r.combined;
    }
    let n = seeds.len() as f64;
    println!("mean\t{:.4}\t{:.4}\t{:.4}", sum[0] / n, sum[1] / n, sum[2] / n);
    Ok(())
}
