//! Corpora for intent detection and slot filling: IOB handling, slot-value
//! summaries, delexicalization, semi-supervised splits and the lexicon
//! knowledge used by the validity rewards.

mod io;
mod iob;
mod knowledge;
mod split;
mod synthesis;
mod vocab;

use std::fmt;

pub use io::{
    load_corpus, load_forms, load_labeled, load_sentences, parse_form_line, write_forms,
    write_labeled, write_sentences, CorpusKind,
};
pub use iob::{
    chunks, delexicalize, iob_to_slot_values, relexicalize, repair_iob, summarize, Chunk,
    Relexicalization, TagKind,
};
pub use knowledge::{build_com, build_lexicon_db, CoOccurrenceMatrix, LexiconDb};
pub use split::make_semi_split;
pub use synthesis::template_synthesis;
pub use vocab::{build_vocab, init_embeddings, Vocabulary, BOS, EOS, PAD, UNK};

/// A sentence with its IOB tags and intent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledExample {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    pub intent: String,
}

impl LabeledExample {
    pub fn new(tokens: Vec<String>, tags: Vec<String>, intent: impl Into<String>) -> Self {
        LabeledExample {
            tokens,
            tags,
            intent: intent.into(),
        }
    }

    /// Builds an example from whitespace-separated tokens and tags.
    pub fn from_strs(tokens: &str, tags: &str, intent: &str) -> Self {
        LabeledExample::new(words(tokens), words(tags), intent)
    }

    /// Intent plus the slot-value summary of the tags.
    pub fn semantic_form(&self) -> SemanticForm {
        SemanticForm {
            intent: self.intent.clone(),
            pairs: iob_to_slot_values(&self.tokens, &self.tags),
        }
    }

    pub fn delexicalized(&self) -> DelexicalizedForm {
        delexicalize(&self.tokens, &self.tags)
    }
}

/// One slot-value pair of a semantic form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotValue {
    pub slot: String,
    pub value: Vec<String>,
}

impl SlotValue {
    pub fn new(slot: impl Into<String>, value: &str) -> Self {
        SlotValue {
            slot: slot.into(),
            value: words(value),
        }
    }
}

impl fmt::Display for SlotValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.slot, self.value.join(" "))
    }
}

/// Intent plus an ordered list of slot-value pairs. Slots may repeat.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SemanticForm {
    pub intent: String,
    pub pairs: Vec<SlotValue>,
}

impl SemanticForm {
    pub fn new(intent: impl Into<String>, pairs: Vec<SlotValue>) -> Self {
        SemanticForm {
            intent: intent.into(),
            pairs,
        }
    }

    /// Slot names sorted, with repeats: the multiset of slots.
    pub fn slot_multiset(&self) -> Vec<&str> {
        let mut s: Vec<&str> = self.pairs.iter().map(|p| p.slot.as_str()).collect();
        s.sort_unstable();
        s
    }
}

impl fmt::Display for SemanticForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pairs: Vec<String> = self.pairs.iter().map(ToString::to_string).collect();
        write!(f, "{}\t{}", self.intent, pairs.join(";"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DelexToken {
    Word(String),
    Slot(String),
}

impl fmt::Display for DelexToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelexToken::Word(w) => f.write_str(w),
            DelexToken::Slot(s) => write!(f, "<{s}>"),
        }
    }
}

/// A sentence whose slot values have been replaced by typed placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct DelexicalizedForm {
    pub tokens: Vec<DelexToken>,
}

impl DelexicalizedForm {
    pub fn new(tokens: Vec<DelexToken>) -> Self {
        DelexicalizedForm { tokens }
    }

    /// Parses `"show me flights from <FromCity>"`-style text.
    pub fn parse(text: &str) -> Self {
        let tokens = text
            .split_whitespace()
            .map(|t| match t.strip_prefix('<').and_then(|r| r.strip_suffix('>')) {
                Some(slot) => DelexToken::Slot(slot.to_string()),
                None => DelexToken::Word(t.to_string()),
            })
            .collect();
        DelexicalizedForm { tokens }
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().filter_map(|t| match t {
            DelexToken::Slot(s) => Some(s.as_str()),
            DelexToken::Word(_) => None,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for DelexicalizedForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.tokens.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(" "))
    }
}

/// Labeled pairs plus the two unpaired partitions used for semi-supervised training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub labeled: Vec<LabeledExample>,
    pub unlabeled_sentences: Vec<Vec<String>>,
    pub unexpressed_forms: Vec<SemanticForm>,
}

impl Dataset {
    pub fn labeled_only(labeled: Vec<LabeledExample>) -> Self {
        Dataset {
            labeled,
            ..Default::default()
        }
    }

    /// Every sentence available for training: labeled first, then unlabeled.
    pub fn all_sentences(&self) -> Vec<Vec<String>> {
        self.labeled
            .iter()
            .map(|e| e.tokens.clone())
            .chain(self.unlabeled_sentences.iter().cloned())
            .collect()
    }

    /// Every semantic form available for training: labeled first, then unexpressed.
    pub fn all_forms(&self) -> Vec<SemanticForm> {
        self.labeled
            .iter()
            .map(LabeledExample::semantic_form)
            .chain(self.unexpressed_forms.iter().cloned())
            .collect()
    }
}

pub(crate) fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}
