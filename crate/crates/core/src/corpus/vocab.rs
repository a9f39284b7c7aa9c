use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexSet;
use rand::Rng;
use sha2::{Digest, Sha256};

use super::Dataset;
use crate::error::{Error, Result};
use crate::params::Tensor;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// Index maps for words, IOB tags, intents and slots.
///
/// Word indices 0..4 are reserved for [`PAD`], [`UNK`], [`BOS`] and [`EOS`].
/// Tag 0 is always `O`, followed by `B-`/`I-` pairs in slot order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub words: IndexSet<String>,
    pub tags: IndexSet<String>,
    pub intents: IndexSet<String>,
    pub slots: IndexSet<String>,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const BOS_ID: usize = 2;
    pub const EOS_ID: usize = 3;

    /// Builds a vocabulary from explicit inventories.
    pub fn from_parts<W, I, S>(words: W, intents: I, slots: S) -> Self
    where
        W: IntoIterator<Item = String>,
        I: IntoIterator<Item = String>,
        S: IntoIterator<Item = String>,
    {
        let mut w: IndexSet<String> = [PAD, UNK, BOS, EOS].iter().map(|s| s.to_string()).collect();
        w.extend(words);
        let slots: IndexSet<String> = slots.into_iter().collect();
        let mut tags = IndexSet::new();
        tags.insert("O".to_string());
        for s in &slots {
            tags.insert(format!("B-{s}"));
            tags.insert(format!("I-{s}"));
        }
        Vocabulary {
            words: w,
            tags,
            intents: intents.into_iter().collect(),
            slots,
        }
    }

    pub fn word_id(&self, w: &str) -> usize {
        self.words.get_index_of(w).unwrap_or(Self::UNK_ID)
    }

    pub fn word(&self, id: usize) -> &str {
        self.words.get_index(id).map(String::as_str).unwrap_or(UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.word_id(t)).collect()
    }

    pub fn tag_id(&self, t: &str) -> Option<usize> {
        self.tags.get_index_of(t)
    }

    pub fn tag(&self, id: usize) -> &str {
        &self.tags[id]
    }

    pub fn intent_id(&self, i: &str) -> Option<usize> {
        self.intents.get_index_of(i)
    }

    pub fn intent(&self, id: usize) -> &str {
        &self.intents[id]
    }

    pub fn slot_id(&self, s: &str) -> Option<usize> {
        self.slots.get_index_of(s)
    }

    pub fn slot(&self, id: usize) -> &str {
        &self.slots[id]
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn num_intents(&self) -> usize {
        self.intents.len()
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    /// `word<TAB>index` lines.
    pub fn dump_words(&self) -> String {
        dump(&self.words)
    }

    /// Stable digest over all four inventories, stored in checkpoints.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for set in [&self.words, &self.tags, &self.intents, &self.slots] {
            h.update(dump(set).as_bytes());
            h.update(b"\x1e");
        }
        hex(&h.finalize())
    }

    /// Writes `words.tsv`, `intents.tsv` and `slots.tsv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (name, set) in [("words", &self.words), ("intents", &self.intents), ("slots", &self.slots)] {
            let p = dir.join(format!("{name}.tsv"));
            fs::write(&p, dump(set)).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let words = load_dump(&dir.join("words.tsv"))?;
        let intents = load_dump(&dir.join("intents.tsv"))?;
        let slots = load_dump(&dir.join("slots.tsv"))?;
        if words.len() < 4 || words[..4] != [PAD, UNK, BOS, EOS] {
            return Err(Error::parse(dir.join("words.tsv"), 1, "reserved symbols missing"));
        }
        Ok(Vocabulary::from_parts(
            words.into_iter().skip(4),
            intents,
            slots,
        ))
    }
}

fn dump(set: &IndexSet<String>) -> String {
    let mut s = String::new();
    for (i, w) in set.iter().enumerate() {
        let _ = writeln!(s, "{w}\t{i}");
    }
    s
}

fn load_dump(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (w, idx) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected word<TAB>index"))?;
        if idx.trim().parse::<usize>().ok() != Some(out.len()) {
            return Err(Error::parse(path, i + 1, format!("index {idx:?} out of order")));
        }
        out.push(w.to_string());
    }
    Ok(out)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Vocabulary over every sentence and slot value of the training partitions.
/// Words seen fewer than `min_count` times map to [`UNK`]. Words are ordered by
/// descending frequency then alphabetically; labels alphabetically.
pub fn build_vocab(dataset: &Dataset, min_count: usize) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut intents = std::collections::BTreeSet::new();
    let mut slots = std::collections::BTreeSet::new();
    for e in &dataset.labeled {
        e.tokens.iter().for_each(|t| *counts.entry(t).or_default() += 1);
        intents.insert(e.intent.clone());
        for t in &e.tags {
            if let Some(s) = t.strip_prefix("B-").or_else(|| t.strip_prefix("I-")) {
                slots.insert(s.to_string());
            }
        }
    }
    for s in &dataset.unlabeled_sentences {
        s.iter().for_each(|t| *counts.entry(t).or_default() += 1);
    }
    for f in &dataset.unexpressed_forms {
        intents.insert(f.intent.clone());
        for p in &f.pairs {
            slots.insert(p.slot.clone());
            p.value.iter().for_each(|t| *counts.entry(t).or_default() += 1);
        }
    }
    let mut words: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(w, c)| c >= min_count.max(1) && ![PAD, UNK, BOS, EOS].contains(&w))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Vocabulary::from_parts(
        words.into_iter().map(|(w, _)| w.to_string()),
        intents,
        slots,
    )
}

/// Embedding table for `vocab`: rows found in a whitespace-separated
/// pretrained file (`word v1 .. vd`) are copied, the rest sampled from
/// `U[-0.2, 0.2]`.
pub fn init_embeddings<R: Rng>(
    vocab: &Vocabulary,
    dim: usize,
    pretrained: Option<&Path>,
    rng: &mut R,
) -> Result<Tensor> {
    let mut table = Tensor::zeros(vocab.num_words(), dim);
    for v in table.data.iter_mut() {
        *v = rng.gen_range(-0.2..=0.2);
    }
    if let Some(path) = pretrained {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let Some(id) = vocab.words.get_index_of(word) else { continue };
            let row: Vec<f64> = parts
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            if row.len() != dim {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected {dim} components, found {}", row.len()),
                ));
            }
            table.row_mut(id).copy_from_slice(&row);
        }
    }
    Ok(table)
}
