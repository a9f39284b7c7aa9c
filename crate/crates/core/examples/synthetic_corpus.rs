//! Writes the bundled flight-domain corpus (train/valid/test) to a directory.
//!
//! cargo run --release --example synthetic_corpus -- [out_dir] [seed]

use dual_nlu::corpus::write_labeled;
use dual_nlu::synthetic;

fn main() -> dual_nlu::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic").into());
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(1);
    let (train, valid, test) = synthetic::splits(2000, seed);
    std::fs::create_dir_all(&out).expect("create output dir");
    for (name, part) in [("train", &train), ("valid", &valid), ("test", &test)] {
        let path = format!("{out}/{name}.txt");
        write_labeled(&path, part)?;
        println!("{path}\t{}", part.len());
    }
    Ok(())
}
