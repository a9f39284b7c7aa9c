use std::collections::{BTreeMap, BTreeSet};

use super::LabeledExample;

/// Observed values per slot.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LexiconDb {
    values: BTreeMap<String, BTreeSet<Vec<String>>>,
}

static EMPTY: BTreeSet<Vec<String>> = BTreeSet::new();

impl LexiconDb {
    /// Values seen for `slot`; empty for unknown slots.
    pub fn values(&self, slot: &str) -> &BTreeSet<Vec<String>> {
        self.values.get(slot).unwrap_or(&EMPTY)
    }

    pub fn contains_slot(&self, slot: &str) -> bool {
        self.values.contains_key(slot)
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn insert(&mut self, slot: &str, value: Vec<String>) {
        self.values.entry(slot.to_string()).or_default().insert(value);
    }
}

/// Binary intent/slot co-occurrence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoOccurrenceMatrix {
    seen: BTreeSet<(String, String)>,
}

impl CoOccurrenceMatrix {
    pub fn get(&self, intent: &str, slot: &str) -> u8 {
        u8::from(self.seen.contains(&(intent.to_string(), slot.to_string())))
    }

    pub fn row_sum(&self, intent: &str) -> usize {
        self.seen.iter().filter(|(i, _)| i == intent).count()
    }

    pub fn insert(&mut self, intent: &str, slot: &str) {
        self.seen.insert((intent.to_string(), slot.to_string()));
    }
}

pub fn build_lexicon_db(labeled: &[LabeledExample]) -> LexiconDb {
    let mut db = LexiconDb::default();
    for e in labeled {
        for p in e.semantic_form().pairs {
            db.insert(&p.slot, p.value);
        }
    }
    db
}

pub fn build_com(labeled: &[LabeledExample]) -> CoOccurrenceMatrix {
    let mut com = CoOccurrenceMatrix::default();
    for e in labeled {
        for p in e.semantic_form().pairs {
            com.insert(&e.intent, &p.slot);
        }
    }
    com
}
