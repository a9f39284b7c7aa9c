use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    index_nlu, index_ssg, selection_set, set_dropout, stream_seed, train_epoch, validate_nlu, MetricsLog, PhaseReport,
    TrainConfig, PHASE_PL, STREAM_NLU, STREAM_SSG,
};
use crate::corpus::{delexicalize, Dataset, DelexicalizedForm, LabeledExample, SemanticForm};
use crate::error::{Error, Result};
use crate::eval::select_best;
use crate::nlu::NluModel;
use crate::params::Adam;
use crate::ssg::SsgModel;

/// Where a pseudo-sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    NluOnUnlabeled,
    SsgOnUnexpressed,
    NluOnLabeled,
    SsgOnLabeled,
}

impl Origin {
    pub fn uses_ssg(self) -> bool {
        matches!(self, Origin::SsgOnUnexpressed | Origin::SsgOnLabeled)
    }
}

/// A model-labeled training pair. `form` and `delex` are the SSG view of the
/// pair; `example` the NLU view.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSample {
    pub origin: Origin,
    pub example: LabeledExample,
    pub form: SemanticForm,
    pub delex: DelexicalizedForm,
    pub iteration: usize,
}

/// `w_i = i / N`.
pub fn pl_weight(i: usize, n: usize) -> f64 {
    i as f64 / n as f64
}

fn nlu_sample(nlu: &NluModel, tokens: &[String], origin: Origin, iteration: usize) -> Option<PseudoSample> {
    if tokens.is_empty() {
        return None;
    }
    let d = nlu.decode_top1(tokens);
    Some(PseudoSample {
        origin,
        delex: delexicalize(tokens, &d.tags),
        example: LabeledExample::new(tokens.to_vec(), d.tags, d.form.intent.clone()),
        form: d.form,
        iteration,
    })
}

fn ssg_sample(ssg: &SsgModel, form: &SemanticForm, origin: Origin, iteration: usize) -> Result<Option<PseudoSample>> {
    let g = ssg.greedy(form)?;
    let r = g.realize(form);
    if r.tokens.is_empty() {
        return Ok(None);
    }
    Ok(Some(PseudoSample {
        origin,
        example: LabeledExample::new(r.tokens, r.tags, form.intent.clone()),
        form: form.clone(),
        delex: g.delex,
        iteration,
    }))
}

/// Labels unlabeled sentences with the NLU model and realizes unexpressed
/// forms with the SSG model; with `include_labeled`, also relabels both sides
/// of the labeled data.
pub fn make_pseudo_samples(
    nlu: &NluModel,
    ssg: &SsgModel,
    dataset: &Dataset,
    include_labeled: bool,
    iteration: usize,
) -> Result<Vec<PseudoSample>> {
    let mut origins = vec![Origin::NluOnUnlabeled, Origin::SsgOnUnexpressed];
    if include_labeled {
        origins.extend([Origin::NluOnLabeled, Origin::SsgOnLabeled]);
    }
    pseudo_samples_for(nlu, Some(ssg), dataset, &origins, iteration)
}

/// Pseudo-samples of the given origins, in origin order then input order.
pub fn pseudo_samples_for(
    nlu: &NluModel,
    ssg: Option<&SsgModel>,
    dataset: &Dataset,
    origins: &[Origin],
    iteration: usize,
) -> Result<Vec<PseudoSample>> {
    let mut out = Vec::new();
    for &o in origins {
        match o {
            Origin::NluOnUnlabeled | Origin::NluOnLabeled => {
                let sents: Vec<&Vec<String>> = if o == Origin::NluOnUnlabeled {
                    dataset.unlabeled_sentences.iter().collect()
                } else {
                    dataset.labeled.iter().map(|e| &e.tokens).collect()
                };
                let made: Vec<_> = sents.par_iter().map(|s| nlu_sample(nlu, s, o, iteration)).collect();
                out.extend(made.into_iter().flatten());
            }
            Origin::SsgOnUnexpressed | Origin::SsgOnLabeled => {
                let ssg = ssg.ok_or_else(|| Error::InvalidArgument(format!("{o:?} samples need an SSG model")))?;
                let forms: Vec<SemanticForm> = if o == Origin::SsgOnUnexpressed {
                    dataset.unexpressed_forms.clone()
                } else {
                    dataset.labeled.iter().map(|e| e.semantic_form()).collect()
                };
                let made = forms
                    .par_iter()
                    .map(|f| ssg_sample(ssg, f, o, iteration))
                    .collect::<Result<Vec<_>>>()?;
                out.extend(made.into_iter().flatten());
            }
        }
    }
    Ok(out)
}

/// Iterative pseudo-labeling restricted to `origins`. Iteration `i` of `N`
/// regenerates the pseudo-samples with the current models and trains one
/// epoch on the labeled data plus the samples weighted by `w_i`. The SSG model
/// is fine-tuned alongside when given.
pub fn pseudo_labeling(
    nlu: &mut NluModel,
    mut ssg: Option<&mut SsgModel>,
    dataset: &Dataset,
    valid: &[LabeledExample],
    origins: &[Origin],
    cfg: &TrainConfig,
    log: &mut MetricsLog,
    phase: &str,
) -> Result<PhaseReport> {
    cfg.validate()?;
    if dataset.labeled.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    set_dropout(nlu, ssg.as_deref_mut(), cfg.dropout);
    let n = cfg.pl_iterations;
    let sel = selection_set(valid, &dataset.labeled);
    let nlu_seed = stream_seed(cfg.seed, PHASE_PL, STREAM_NLU);
    let ssg_seed = stream_seed(cfg.seed, PHASE_PL, STREAM_SSG);
    let mut nlu_rng = ChaCha8Rng::seed_from_u64(nlu_seed);
    let mut ssg_rng = ChaCha8Rng::seed_from_u64(ssg_seed);
    let mut nlu_adam = Adam::new(&nlu.params, cfg.lr, cfg.l2);
    let mut ssg_adam = ssg.as_deref().map(|s| Adam::new(&s.params, cfg.lr, cfg.l2));
    let mut history = vec![validate_nlu(nlu, sel, 0)?];
    log.record(phase, "valid", &history[0]);
    let snapshot = |nlu: &NluModel, ssg: &Option<&mut SsgModel>| (nlu.params.clone(), ssg.as_deref().map(|s| s.params.clone()));
    let mut best = (history[0].avg(), snapshot(nlu, &ssg));
    for i in 1..=n {
        let w = pl_weight(i, n);
        let samples = pseudo_samples_for(nlu, ssg.as_deref(), dataset, origins, i)?;
        let pseudo: Vec<LabeledExample> = samples.iter().map(|s| s.example.clone()).collect();
        let mut data = index_nlu(nlu, &dataset.labeled, 1.0)?;
        data.extend(index_nlu(nlu, &pseudo, w)?);
        train_epoch(nlu, &mut nlu_adam, &data, cfg, &mut nlu_rng, nlu_seed, i)?;
        if let (Some(ssg), Some(adam)) = (ssg.as_deref_mut(), ssg_adam.as_mut()) {
            let mut data = index_ssg(ssg, &dataset.labeled, 1.0)?;
            for s in &samples {
                data.push((ssg.index(&s.form, &s.delex)?, w));
            }
            train_epoch(ssg, adam, &data, cfg, &mut ssg_rng, ssg_seed, i)?;
        }
        let m = validate_nlu(nlu, sel, i)?;
        log.record(phase, "valid", &m);
        if m.avg() > best.0 {
            best = (m.avg(), snapshot(nlu, &ssg));
        }
        history.push(m);
    }
    let (np, sp) = best.1;
    nlu.params = np;
    if let (Some(ssg), Some(sp)) = (ssg, sp) {
        ssg.params = sp;
    }
    Ok(PhaseReport {
        phase: phase.to_string(),
        best_epoch: select_best(&history)?,
        history,
    })
}

/// Pseudo-labeling in both directions: NLU labels for unlabeled sentences and
/// SSG sentences for unexpressed forms (plus relabeled labeled data when
/// configured), both models fine-tuned on all of them.
pub fn dual_pseudo_labeling(
    nlu: &mut NluModel,
    ssg: &mut SsgModel,
    dataset: &Dataset,
    valid: &[LabeledExample],
    cfg: &TrainConfig,
    log: &mut MetricsLog,
) -> Result<PhaseReport> {
    let mut origins = vec![Origin::NluOnUnlabeled, Origin::SsgOnUnexpressed];
    if cfg.pl_include_labeled {
        origins.extend([Origin::NluOnLabeled, Origin::SsgOnLabeled]);
    }
    pseudo_labeling(nlu, Some(ssg), dataset, valid, &origins, cfg, log, "dual-pl")
}

/// Classic self-training of the NLU model on its own labels for the
/// unlabeled sentences.
pub fn pl_baseline(
    nlu: &mut NluModel,
    dataset: &Dataset,
    valid: &[LabeledExample],
    cfg: &TrainConfig,
    log: &mut MetricsLog,
) -> Result<PhaseReport> {
    pseudo_labeling(nlu, None, dataset, valid, &[Origin::NluOnUnlabeled], cfg, log, "pl")
}
