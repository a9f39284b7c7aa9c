use indexmap::IndexSet;

use super::{relexicalize, LabeledExample, SemanticForm};

/// Template-synthesis baseline: every delexicalized labeled sentence is filled
/// with each unexpressed form of the same intent whose slot multiset equals the
/// template's placeholder multiset. Output is deduplicated, first occurrence kept.
pub fn template_synthesis(
    labeled: &[LabeledExample],
    unexpressed_forms: &[SemanticForm],
) -> Vec<LabeledExample> {
    let mut templates = IndexSet::new();
    for e in labeled {
        templates.insert((e.intent.clone(), e.delexicalized()));
    }
    let mut out = IndexSet::new();
    for (intent, template) in &templates {
        let mut needed: Vec<&str> = template.placeholders().collect();
        needed.sort_unstable();
        for form in unexpressed_forms {
            if &form.intent != intent || form.slot_multiset() != needed {
                continue;
            }
            let r = relexicalize(template, &form.pairs);
            out.insert(LabeledExample::new(r.tokens, r.tags, form.intent.clone()));
        }
    }
    out.into_iter().collect()
}
