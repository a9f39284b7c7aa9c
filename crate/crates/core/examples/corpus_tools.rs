//! Loading a labeled corpus, the semi-supervised split, delexicalization and
//! the lexicon / co-occurrence knowledge built from labeled data.
//!
//! cargo run --example corpus_tools

use dual_nlu::corpus::{
    build_com, build_lexicon_db, build_vocab, delexicalize, load_labeled, make_semi_split, relexicalize,
    template_synthesis,
};

fn main() -> dual_nlu::Result<()> {
    let train = load_labeled(concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic/train.txt"))?;
    let ds = make_semi_split(&train, 0.1, 7)?;
    println!(
        "{} labeled, {} unlabeled sentences, {} unexpressed forms",
        ds.labeled.len(),
        ds.unlabeled_sentences.len(),
        ds.unexpressed_forms.len()
    );

    let e = &ds.labeled[0];
    let form = e.semantic_form();
    let delex = delexicalize(&e.tokens, &e.tags);
    println!("sentence: {}", e.tokens.join(" "));
    println!("form:     {form}");
    println!("delex:    {delex}");
    let other = ds
        .unexpressed_forms
        .iter()
        .find(|f| f.intent == form.intent && f.slot_multiset() == form.slot_multiset())
        .unwrap_or(&form);
    let r = relexicalize(&delex, &other.pairs);
    println!("refilled with {other}: {} ({} mismatches)", r.tokens.join(" "), r.mismatches());

    let vocab = build_vocab(&ds, 1);
    println!("vocab: {} words, {} tags, {} intents", vocab.num_words(), vocab.num_tags(), vocab.num_intents());
    let db = build_lexicon_db(&ds.labeled);
    let com = build_com(&ds.labeled);
    for slot in db.slots() {
        println!("  {slot:<13} {:>3} values", db.values(slot).len());
    }
    println!("ground_service uses FromCity: {}", com.get("ground_service", "FromCity"));
    println!("template synthesis: {} new sentences", template_synthesis(&ds.labeled, &ds.unexpressed_forms).len());
    Ok(())
}
