//! Plain-text corpus formats.
//!
//! * labeled: one example per block of `token<TAB>tag` lines closed by
//!   `#intent<TAB><label>`, blocks separated by blank lines;
//! * sentences: one space-separated sentence per line;
//! * forms: `<intent><TAB>slot=value;slot=value` per line.
//!
//! Tokens and slot values are lowercased on load.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::iob::{repair_iob, TagKind};
use super::{Dataset, LabeledExample, SemanticForm, SlotValue};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusKind {
    Labeled,
    Sentences,
    Forms,
}

impl FromStr for CorpusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeled" => Ok(CorpusKind::Labeled),
            "sentences" => Ok(CorpusKind::Sentences),
            "forms" => Ok(CorpusKind::Forms),
            other => Err(Error::InvalidArgument(format!("unknown corpus kind {other:?}"))),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads one file into the matching partition of a [`Dataset`].
pub fn load_corpus(kind: CorpusKind, path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut ds = Dataset::default();
    match kind {
        CorpusKind::Labeled => ds.labeled = load_labeled(path)?,
        CorpusKind::Sentences => ds.unlabeled_sentences = load_sentences(path)?,
        CorpusKind::Forms => ds.unexpressed_forms = load_forms(path)?,
    }
    Ok(ds)
}

pub fn load_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    parse_labeled(&read(path)?, path)
}

fn parse_labeled(text: &str, path: &Path) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut block_start = 0;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("block starting at line {block_start} has no #intent line"),
                ));
            }
            continue;
        }
        if tokens.is_empty() {
            block_start = lineno;
        }
        if let Some(rest) = line.strip_prefix("#intent") {
            let intent = rest
                .strip_prefix('\t')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::parse(path, lineno, "expected \"#intent<TAB><label>\""))?;
            if tokens.is_empty() {
                return Err(Error::parse(path, lineno, "intent line without tokens"));
            }
            let tags_repaired = repair_iob(&tags);
            out.push(LabeledExample {
                tokens: std::mem::take(&mut tokens),
                tags: tags_repaired,
                intent: intent.to_string(),
            });
            tags.clear();
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(tok), Some(tag), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected \"token<TAB>tag\", got {line:?}"),
            ));
        };
        let (tok, tag) = (tok.trim(), tag.trim());
        if tok.is_empty() || tag.is_empty() {
            return Err(Error::parse(path, lineno, "empty token or tag"));
        }
        if TagKind::parse(tag).is_none() {
            return Err(Error::parse(path, lineno, format!("invalid IOB tag {tag:?}")));
        }
        tokens.push(tok.to_lowercase());
        tags.push(tag.to_string());
    }
    if !tokens.is_empty() {
        return Err(Error::parse(
            path,
            block_start,
            "last block has no #intent line",
        ));
    }
    Ok(out)
}

pub fn load_sentences(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    Ok(read(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::to_lowercase).collect())
        .collect())
}

pub fn load_forms(path: impl AsRef<Path>) -> Result<Vec<SemanticForm>> {
    let path = path.as_ref();
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_form_line(l).map_err(|msg| Error::parse(path, i + 1, msg)))
        .collect()
}

/// Parses `intent<TAB>slot=value;slot=value`. The pair column may be empty or absent.
pub fn parse_form_line(line: &str) -> std::result::Result<SemanticForm, String> {
    let line = line.trim_end_matches(['\r', '\n']);
    let (intent, rest) = match line.split_once('\t') {
        Some((i, r)) => (i.trim(), r.trim()),
        None => (line.trim(), ""),
    };
    if intent.is_empty() {
        return Err("missing intent".into());
    }
    let mut pairs = Vec::new();
    for item in rest.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (slot, value) = item
            .split_once('=')
            .ok_or_else(|| format!("expected slot=value, got {item:?}"))?;
        let value: Vec<String> = value.split_whitespace().map(str::to_lowercase).collect();
        if slot.trim().is_empty() || value.is_empty() {
            return Err(format!("empty slot or value in {item:?}"));
        }
        if value.iter().any(|w| w.contains('=')) {
            return Err(format!("'=' inside value {item:?}"));
        }
        pairs.push(SlotValue {
            slot: slot.trim().to_string(),
            value,
        });
    }
    Ok(SemanticForm {
        intent: intent.to_string(),
        pairs,
    })
}

pub fn write_labeled(path: impl AsRef<Path>, examples: &[LabeledExample]) -> Result<()> {
    let mut s = String::new();
    for (i, e) in examples.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        for (t, g) in e.tokens.iter().zip(&e.tags) {
            let _ = writeln!(s, "{t}\t{g}");
        }
        let _ = writeln!(s, "#intent\t{}", e.intent);
    }
    let path = path.as_ref();
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_sentences(path: impl AsRef<Path>, sentences: &[Vec<String>]) -> Result<()> {
    let s: String = sentences.iter().map(|t| t.join(" ") + "\n").collect();
    let path = path.as_ref();
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_forms(path: impl AsRef<Path>, forms: &[SemanticForm]) -> Result<()> {
    let s: String = forms.iter().map(|f| format!("{f}\n")).collect();
    let path = path.as_ref();
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
