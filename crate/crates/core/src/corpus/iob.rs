use std::collections::{HashMap, VecDeque};

use super::{DelexToken, DelexicalizedForm, SemanticForm, SlotValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagKind<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> TagKind<'a> {
    /// `None` for anything that is not `O`, `B-<slot>` or `I-<slot>`.
    pub fn parse(tag: &'a str) -> Option<Self> {
        if tag == "O" {
            return Some(TagKind::Outside);
        }
        match tag.split_once('-') {
            Some(("B", slot)) if !slot.is_empty() => Some(TagKind::Begin(slot)),
            Some(("I", slot)) if !slot.is_empty() => Some(TagKind::Inside(slot)),
            _ => None,
        }
    }

    /// Lenient reading used on model predictions: unknown tags count as `O`.
    fn lenient(tag: &'a str) -> Self {
        Self::parse(tag).unwrap_or(TagKind::Outside)
    }
}

/// A maximal slot span `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Chunk {
    pub slot: String,
    pub start: usize,
    pub end: usize,
}

/// Chunks with conlleval semantics: `I-X` after `O` or after a tag of another
/// slot opens a new chunk.
pub fn chunks<S: AsRef<str>>(tags: &[S]) -> Vec<Chunk> {
    let mut out: Vec<Chunk> = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let kind = TagKind::lenient(tag.as_ref());
        let continues = matches!((&open, kind), (Some((s, _)), TagKind::Inside(x)) if s == x);
        if continues {
            continue;
        }
        if let Some((slot, start)) = open.take() {
            out.push(Chunk {
                slot,
                start,
                end: i,
            });
        }
        match kind {
            TagKind::Begin(x) | TagKind::Inside(x) => open = Some((x.to_string(), i)),
            TagKind::Outside => {}
        }
    }
    if let Some((slot, start)) = open {
        out.push(Chunk {
            slot,
            start,
            end: tags.len(),
        });
    }
    out
}

/// Rewrites every `I-X` without a valid predecessor as `B-X`. Idempotent.
pub fn repair_iob<S: AsRef<str>>(tags: &[S]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(tags.len());
    let mut prev_slot: Option<String> = None;
    for tag in tags {
        let tag = tag.as_ref();
        match TagKind::lenient(tag) {
            TagKind::Inside(x) if prev_slot.as_deref() != Some(x) => {
                out.push(format!("B-{x}"));
                prev_slot = Some(x.to_string());
            }
            TagKind::Inside(x) | TagKind::Begin(x) => {
                out.push(tag.to_string());
                prev_slot = Some(x.to_string());
            }
            TagKind::Outside => {
                out.push("O".to_string());
                prev_slot = None;
            }
        }
    }
    out
}

/// One `(slot, value)` pair per chunk, in sentence order.
pub fn iob_to_slot_values<S: AsRef<str>>(tokens: &[String], tags: &[S]) -> Vec<SlotValue> {
    chunks(tags)
        .into_iter()
        .map(|c| SlotValue {
            slot: c.slot,
            value: tokens[c.start..c.end].to_vec(),
        })
        .collect()
}

/// Semantic form of a tagged sentence.
pub fn summarize<S: AsRef<str>>(intent: &str, tokens: &[String], tags: &[S]) -> SemanticForm {
    SemanticForm {
        intent: intent.to_string(),
        pairs: iob_to_slot_values(tokens, tags),
    }
}

/// Replaces each chunk by one placeholder and keeps outside words verbatim.
pub fn delexicalize<S: AsRef<str>>(tokens: &[String], tags: &[S]) -> DelexicalizedForm {
    let spans = chunks(tags);
    let mut out = Vec::new();
    let mut i = 0;
    let mut next = spans.iter().peekable();
    while i < tokens.len() {
        match next.peek() {
            Some(c) if c.start == i => {
                out.push(DelexToken::Slot(c.slot.clone()));
                i = c.end;
                next.next();
            }
            _ => {
                out.push(DelexToken::Word(tokens[i].clone()));
                i += 1;
            }
        }
    }
    DelexicalizedForm { tokens: out }
}

/// Result of filling placeholders with slot values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relexicalization {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    /// Placeholders that found no pair and were dropped.
    pub redundant: usize,
    /// Pairs no placeholder consumed.
    pub omitted: Vec<SlotValue>,
}

impl Relexicalization {
    pub fn mismatches(&self) -> usize {
        self.redundant + self.omitted.len()
    }
}

/// Fills placeholders left to right: the k-th placeholder of slot `s` takes the
/// k-th pair with slot `s`.
pub fn relexicalize(form: &DelexicalizedForm, pairs: &[SlotValue]) -> Relexicalization {
    let mut queues: HashMap<&str, VecDeque<usize>> = HashMap::new();
    for (i, p) in pairs.iter().enumerate() {
        queues.entry(p.slot.as_str()).or_default().push_back(i);
    }
    let mut used = vec![false; pairs.len()];
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut redundant = 0;
    for tok in &form.tokens {
        match tok {
            DelexToken::Word(w) => {
                tokens.push(w.clone());
                tags.push("O".to_string());
            }
            DelexToken::Slot(s) => match queues.get_mut(s.as_str()).and_then(VecDeque::pop_front) {
                Some(idx) => {
                    used[idx] = true;
                    for (k, w) in pairs[idx].value.iter().enumerate() {
                        tokens.push(w.clone());
                        tags.push(if k == 0 { format!("B-{s}") } else { format!("I-{s}") });
                    }
                }
                None => redundant += 1,
            },
        }
    }
    let omitted = pairs
        .iter()
        .zip(&used)
        .filter(|(_, &u)| !u)
        .map(|(p, _)| p.clone())
        .collect();
    Relexicalization {
        tokens,
        tags,
        redundant,
        omitted,
    }
}
