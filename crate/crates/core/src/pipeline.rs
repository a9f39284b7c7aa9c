//! Training regimes end to end: vocabulary, model construction, the phases
//! of each regime, and test scoring of every phase's selected checkpoint.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocab, init_embeddings, make_semi_split, Dataset, LabeledExample, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{evaluate_nlu, EvalReport};
use crate::nlu::{NluConfig, NluModel, TaggerMode};
use crate::params::{derive_seed, ParamStore};
use crate::rewards::{LmConfig, LmTrainConfig, LstmLm};
use crate::ssg::{SsgConfig, SsgModel};
use crate::train::{
    dual_learning, dual_pseudo_labeling, pl_baseline, pretrain_supervised, template_synthesis_training, Knowledge,
    MetricsLog, PhaseReport, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Supervised,
    Pl,
    DualPl,
    DualLearning,
    Combined,
    TemplateSynthesis,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::Supervised,
        Regime::Pl,
        Regime::DualPl,
        Regime::DualLearning,
        Regime::Combined,
        Regime::TemplateSynthesis,
    ];

    pub fn needs_ssg(self) -> bool {
        matches!(self, Regime::DualPl | Regime::DualLearning | Regime::Combined)
    }

    pub fn needs_lm(self) -> bool {
        matches!(self, Regime::DualLearning | Regime::Combined)
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?}")))
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Supervised => "supervised",
            Regime::Pl => "pl",
            Regime::DualPl => "dual-pl",
            Regime::DualLearning => "dual-learning",
            Regime::Combined => "combined",
            Regime::TemplateSynthesis => "template-synthesis",
        })
    }
}

/// Everything a regime needs besides data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub nlu: NluConfig,
    pub ssg: SsgConfig,
    pub lm: LmConfig,
    pub lm_train: LmTrainConfig,
    pub train: TrainConfig,
    pub min_count: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            nlu: NluConfig::default(),
            ssg: SsgConfig::default(),
            lm: LmConfig::default(),
            lm_train: LmTrainConfig::default(),
            train: TrainConfig::default(),
            min_count: 1,
        }
    }
}

impl ExperimentConfig {
    /// Small dimensions and short schedules for the bundled synthetic domain.
    pub fn desk(seed: u64) -> Self {
        let d = 32;
        ExperimentConfig {
            nlu: NluConfig {
                mode: TaggerMode::Focus,
                embed_dim: d,
                hidden: d,
                tag_embed_dim: d / 2,
                dropout: 0.3,
            },
            ssg: SsgConfig {
                embed_dim: d,
                hidden: d,
                intent_dim: d / 2,
                dropout: 0.3,
                max_len: 30,
            },
            lm: LmConfig {
                embed_dim: d,
                hidden: d,
                dropout: 0.3,
            },
            lm_train: LmTrainConfig {
                epochs: 5,
                lr: 5e-3,
                seed,
                ..LmTrainConfig::default()
            },
            train: TrainConfig {
                lr: 5e-3,
                dropout: 0.3,
                epochs: 40,
                pl_iterations: 3,
                dual_epochs: 2,
                beam_k: 3,
                seed,
                ..TrainConfig::default()
            },
            min_count: 1,
        }
    }
}

/// A phase's selected NLU parameters.
#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub report: PhaseReport,
    pub nlu: ParamStore,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub vocab: Arc<Vocabulary>,
    pub nlu: NluModel,
    pub ssg: Option<SsgModel>,
    pub lm: Option<LstmLm>,
    pub phases: Vec<PhaseOutcome>,
}

impl Trained {
    /// The NLU model as it was after `phase`.
    pub fn nlu_after(&self, phase: &str) -> Option<NluModel> {
        let p = self.phases.iter().find(|p| p.report.phase == phase)?;
        let mut m = self.nlu.clone();
        m.params = p.nlu.clone();
        Some(m)
    }
}

/// Builds the vocabulary and models from `dataset` and runs `regime`. Only
/// `dataset` and `valid` are read.
pub fn train_regime(
    regime: Regime,
    dataset: &Dataset,
    valid: &[LabeledExample],
    cfg: &ExperimentConfig,
    embeddings: Option<&Path>,
    log: &mut MetricsLog,
) -> Result<Trained> {
    cfg.train.validate()?;
    let seed = cfg.train.seed;
    let vocab = Arc::new(build_vocab(dataset, cfg.min_count));
    let mut nlu = NluModel::new(cfg.nlu, vocab.clone(), derive_seed(seed, 0, 11));
    if let Some(path) = embeddings {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 13));
        nlu.set_embeddings(init_embeddings(&vocab, cfg.nlu.embed_dim, Some(path), &mut rng)?)?;
    }
    let mut ssg = regime.needs_ssg().then(|| SsgModel::new(cfg.ssg, vocab.clone(), derive_seed(seed, 0, 12)));
    let mut phases = Vec::new();
    let mut done = |report: PhaseReport, nlu: &NluModel| {
        phases.push(PhaseOutcome {
            report,
            nlu: nlu.params.clone(),
        })
    };
    let mut lm = None;
    if regime == Regime::TemplateSynthesis {
        let r = template_synthesis_training(&mut nlu, dataset, valid, &cfg.train, log)?;
        done(r, &nlu);
    } else {
        let r = pretrain_supervised(&mut nlu, ssg.as_mut(), &dataset.labeled, valid, &cfg.train, log)?;
        done(r, &nlu);
    }
    match regime {
        Regime::Supervised | Regime::TemplateSynthesis => {}
        Regime::Pl => {
            let r = pl_baseline(&mut nlu, dataset, valid, &cfg.train, log)?;
            done(r, &nlu);
        }
        Regime::DualPl | Regime::DualLearning | Regime::Combined => {
            let s = ssg.as_mut().expect("ssg model");
            if regime != Regime::DualLearning {
                let r = dual_pseudo_labeling(&mut nlu, s, dataset, valid, &cfg.train, log)?;
                done(r, &nlu);
            }
            if regime.needs_lm() {
                let valid_sents: Vec<Vec<String>> = valid.iter().map(|e| e.tokens.clone()).collect();
                let k = Knowledge::build(vocab.clone(), dataset, &valid_sents, cfg.lm, cfg.lm_train)?;
                let r = dual_learning(&mut nlu, s, dataset, valid, &k.context(cfg.train.rewards), &cfg.train, log)?;
                done(r, &nlu);
                lm = Some(k.lm);
            }
        }
    }
    Ok(Trained {
        vocab,
        nlu,
        ssg,
        lm,
        phases,
    })
}

/// Test slot F1 after pretraining, dual pseudo-labeling and the full combined
/// schedule, from one combined run on the synthetic domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeskResult {
    pub seed: u64,
    pub supervised: f64,
    pub dual_pl: f64,
    pub combined: f64,
}

/// One seed of the desk-scale semi-supervised experiment: 2000 synthetic
/// sentences, 70/15/15 split, `ratio` of the training part labeled.
pub fn desk_experiment(seed: u64, ratio: f64, cfg: &ExperimentConfig) -> Result<DeskResult> {
    let (train, valid, test) = crate::synthetic::splits(2000, seed);
    let dataset = make_semi_split(&train, ratio, seed)?;
    let t = train_regime(Regime::Combined, &dataset, &valid, cfg, None, &mut MetricsLog::new())?;
    let score = |phase: &str| -> Result<f64> {
        let m = t.nlu_after(phase).expect("phase ran");
        Ok(evaluate_nlu(&m, &test)?.slot_f1)
    };
    Ok(DeskResult {
        seed,
        supervised: score("pretrain")?,
        dual_pl: score("dual-pl")?,
        combined: score("dual-learning")?,
    })
}

/// Test report of a trained model.
pub fn test_report(t: &Trained, test: &[LabeledExample]) -> Result<EvalReport> {
    evaluate_nlu(&t.nlu, test)
}
