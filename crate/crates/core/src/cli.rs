//! The `dualnlu` command line: a flat `key = value` run configuration with
//! flag overrides, and the prepare / train / eval / generate / significance
//! subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_nlu, load_ssg, save_lm, save_nlu, save_ssg};
use crate::corpus::{
    load_forms, load_labeled, load_sentences, make_semi_split, write_forms, write_labeled, write_sentences, Dataset,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_nlu, mcnemar, parse_correctness, Correctness, EvalReport};
use crate::nlu::TaggerMode;
use crate::pipeline::{train_regime, ExperimentConfig, Regime};
use crate::train::MetricsLog;

/// Environment variable read for the seed when neither file nor flags set one.
pub const SEED_ENV: &str = "DUALNLU_SEED";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Extra unlabeled sentences added to the split's.
    pub unlabeled: Option<PathBuf>,
    /// Extra unexpressed forms added to the split's.
    pub forms: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub regime: Regime,
    pub ratio: f64,
    pub experiment: ExperimentConfig,
    seed_set: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: None,
            valid: None,
            test: None,
            unlabeled: None,
            forms: None,
            embeddings: None,
            output_dir: PathBuf::from("run"),
            regime: Regime::Supervised,
            ratio: 1.0,
            experiment: ExperimentConfig::default(),
            seed_set: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "train", "valid", "test", "unlabeled", "forms", "embeddings", "output_dir", "mode", "regime", "ratio", "seed",
    "lr", "batch_size", "clip", "l2", "dropout", "epochs", "pl_iterations", "dual_epochs", "beam_k",
    "pl_include_labeled", "alpha", "beta", "gamma", "omega", "delta", "lambda", "embed_dim", "hidden",
    "tag_embed_dim", "intent_dim", "max_len", "lm_epochs", "min_count",
];

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.experiment.train.seed
    }

    /// Sets one key. Sizes apply to every model; `lr` also to the language model.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let e = &mut self.experiment;
        let path = || Some(PathBuf::from(value));
        match key {
            "train" => self.train = path(),
            "valid" => self.valid = path(),
            "test" => self.test = path(),
            "unlabeled" => self.unlabeled = path(),
            "forms" => self.forms = path(),
            "embeddings" => self.embeddings = path(),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "mode" => e.nlu.mode = value.parse::<TaggerMode>().map_err(|err| err.to_string())?,
            "regime" => self.regime = value.parse::<Regime>().map_err(|err| err.to_string())?,
            "ratio" => {
                let r: f64 = num(value)?;
                if !(r > 0.0 && r <= 1.0) {
                    return Err(format!("ratio must be in (0, 1], got {value}"));
                }
                self.ratio = r;
            }
            "seed" => {
                e.train.seed = num(value)?;
                e.lm_train.seed = e.train.seed;
                self.seed_set = true;
            }
            "lr" => {
                e.train.lr = num(value)?;
                e.lm_train.lr = e.train.lr;
            }
            "batch_size" => {
                e.train.batch_size = num(value)?;
                e.lm_train.batch_size = e.train.batch_size;
            }
            "clip" => e.train.clip = num(value)?,
            "l2" => e.train.l2 = num(value)?,
            "dropout" => {
                let p = num(value)?;
                e.train.dropout = p;
                e.nlu.dropout = p;
                e.ssg.dropout = p;
                e.lm.dropout = p;
            }
            "epochs" => e.train.epochs = num(value)?,
            "pl_iterations" => e.train.pl_iterations = num(value)?,
            "dual_epochs" => e.train.dual_epochs = num(value)?,
            "beam_k" => e.train.beam_k = num(value)?,
            "pl_include_labeled" => e.train.pl_include_labeled = num(value)?,
            "alpha" => e.train.rewards.alpha = num(value)?,
            "beta" => e.train.rewards.beta = num(value)?,
            "gamma" => e.train.rewards.gamma = num(value)?,
            "omega" => e.train.rewards.omega = num(value)?,
            "delta" => e.train.rewards.delta = num(value)?,
            "lambda" => e.train.rewards.lambda = num(value)?,
            "embed_dim" => {
                let d = num(value)?;
                e.nlu.embed_dim = d;
                e.ssg.embed_dim = d;
                e.lm.embed_dim = d;
            }
            "hidden" => {
                let d = num(value)?;
                e.nlu.hidden = d;
                e.ssg.hidden = d;
                e.lm.hidden = d;
            }
            "tag_embed_dim" => e.nlu.tag_embed_dim = num(value)?,
            "intent_dim" => e.ssg.intent_dim = num(value)?,
            "max_len" => e.ssg.max_len = num(value)?,
            "lm_epochs" => e.lm_train.epochs = num(value)?,
            "min_count" => e.min_count = num(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment. Every offending
    /// line is reported.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut bad = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(msg) = self.set(k.trim(), v.trim()) {
                        bad.push(format!("line {}: {}: {msg}", i + 1, k.trim()));
                    }
                }
                None => bad.push(format!("line {}: expected key = value", i + 1)),
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Applies `key=value` overrides, reporting every offender.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        let mut bad = Vec::new();
        for o in overrides {
            let o = o.as_ref();
            match o.split_once('=') {
                Some((k, v)) => {
                    if let Err(msg) = self.set(k.trim(), v.trim()) {
                        bad.push(format!("{}: {msg}", k.trim()));
                    }
                }
                None => bad.push(format!("{o}: expected key=value")),
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Seed from the environment when nothing else set it.
    pub fn apply_env_seed(&mut self, value: Option<&str>) -> Result<()> {
        if self.seed_set {
            return Ok(());
        }
        if let Some(v) = value {
            self.set("seed", v).map_err(|m| Error::Config(format!("{SEED_ENV}: {m}")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.train.validate()
    }

    /// Key-value echo of the effective configuration.
    pub fn echo(&self) -> BTreeMap<&'static str, String> {
        let e = &self.experiment;
        let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let r = &e.train.rewards;
        BTreeMap::from([
            ("train", p(&self.train)),
            ("valid", p(&self.valid)),
            ("test", p(&self.test)),
            ("unlabeled", p(&self.unlabeled)),
            ("forms", p(&self.forms)),
            ("embeddings", p(&self.embeddings)),
            ("output_dir", self.output_dir.display().to_string()),
            ("mode", e.nlu.mode.to_string()),
            ("regime", self.regime.to_string()),
            ("ratio", self.ratio.to_string()),
            ("seed", e.train.seed.to_string()),
            ("lr", e.train.lr.to_string()),
            ("batch_size", e.train.batch_size.to_string()),
            ("clip", e.train.clip.to_string()),
            ("l2", e.train.l2.to_string()),
            ("dropout", e.train.dropout.to_string()),
            ("epochs", e.train.epochs.to_string()),
            ("pl_iterations", e.train.pl_iterations.to_string()),
            ("dual_epochs", e.train.dual_epochs.to_string()),
            ("beam_k", e.train.beam_k.to_string()),
            ("pl_include_labeled", e.train.pl_include_labeled.to_string()),
            ("alpha", r.alpha.to_string()),
            ("beta", r.beta.to_string()),
            ("gamma", r.gamma.to_string()),
            ("omega", r.omega.to_string()),
            ("delta", r.delta.to_string()),
            ("lambda", r.lambda.to_string()),
            ("embed_dim", e.nlu.embed_dim.to_string()),
            ("hidden", e.nlu.hidden.to_string()),
            ("tag_embed_dim", e.nlu.tag_embed_dim.to_string()),
            ("intent_dim", e.ssg.intent_dim.to_string()),
            ("max_len", e.ssg.max_len.to_string()),
            ("lm_epochs", e.lm_train.epochs.to_string()),
            ("min_count", e.min_count.to_string()),
        ])
    }
}

#[derive(Debug, Parser)]
#[command(name = "dualnlu", version, about = "Semi-supervised intent detection and slot filling with a dual generator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration file of `key = value` lines.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split the labeled training file and build the vocabulary.
    Prepare(Common),
    /// Prepare, train the configured regime, and evaluate on the test file.
    Train(Common),
    /// Evaluate the trained NLU checkpoint on a labeled file.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Labeled file; defaults to the configured test file.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Generate sentences for a form file with the trained SSG checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Beam width; 1 is greedy.
        #[arg(long, default_value_t = 1)]
        beam: usize,
    },
    /// McNemar's test on two per-example correctness files.
    Significance {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "joint")]
        column: String,
    },
}

/// Maps errors to exit codes: 1 configuration, 2 data, 3 runtime.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownMode(_) => 1,
        Error::Parse { .. } | Error::Io { .. } | Error::EmptyCorpus | Error::UnknownSlot(_) | Error::LengthMismatch { .. } => 2,
        _ => 3,
    }
}

pub fn load_config(common: &Common, env_seed: Option<&str>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    cfg.apply_overrides(&common.set)?;
    if let Some(s) = common.seed {
        cfg.set("seed", &s.to_string()).map_err(Error::Config)?;
    }
    if let Some(d) = &common.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.apply_env_seed(env_seed)?;
    cfg.validate()?;
    Ok(cfg)
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("missing required key {key}")))
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Splits the training file by ratio and seed, adds extra unpaired data,
/// writes the partitions and vocabulary under `output_dir`.
pub fn prepare(cfg: &RunConfig) -> Result<(Dataset, Vocabulary)> {
    let train = load_labeled(require(&cfg.train, "train")?)?;
    let mut ds = make_semi_split(&train, cfg.ratio, cfg.seed())?;
    if let Some(p) = &cfg.unlabeled {
        ds.unlabeled_sentences.extend(load_sentences(p)?);
    }
    if let Some(p) = &cfg.forms {
        ds.unexpressed_forms.extend(load_forms(p)?);
    }
    let data = cfg.output_dir.join("data");
    mkdir(&data)?;
    write_labeled(data.join("labeled.txt"), &ds.labeled)?;
    write_sentences(data.join("unlabeled.txt"), &ds.unlabeled_sentences)?;
    write_forms(data.join("forms.txt"), &ds.unexpressed_forms)?;
    let vocab = crate::corpus::build_vocab(&ds, cfg.experiment.min_count);
    let vdir = cfg.output_dir.join("vocab");
    mkdir(&vdir)?;
    vocab.save(&vdir)?;
    Ok((ds, vocab))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: BTreeMap<&'static str, String>,
    data_hashes: BTreeMap<String, String>,
    vocab_hash: String,
    artifacts: Vec<String>,
}

fn write_manifest(cfg: &RunConfig, command: &str, vocab: &Vocabulary, artifacts: Vec<String>) -> Result<()> {
    let mut data_hashes = BTreeMap::new();
    for p in [&cfg.train, &cfg.valid, &cfg.unlabeled, &cfg.forms, &cfg.embeddings].into_iter().flatten() {
        data_hashes.insert(p.display().to_string(), file_hash(p)?);
    }
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed(),
        config: cfg.echo(),
        data_hashes,
        vocab_hash: vocab.hash(),
        artifacts,
    };
    let json = serde_json::to_string_pretty(&m).expect("manifest serializes");
    write(&cfg.output_dir.join(format!("manifest.{command}.json")), &(json + "\n"))
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<Vec<String>> {
    let files = [
        ("report.txt", report.table()),
        ("report.tsv", report.to_kv()),
        ("correctness.tsv", report.correctness_tsv()),
    ];
    let mut out = Vec::new();
    for (name, text) in files {
        write(&dir.join(name), &text)?;
        out.push(name.to_string());
    }
    Ok(out)
}

/// Trains the configured regime, saves checkpoints and the metrics log, and
/// evaluates the reloaded NLU checkpoint on the test file when one is set.
pub fn train(cfg: &RunConfig) -> Result<Option<EvalReport>> {
    let (ds, _) = prepare(cfg)?;
    let valid = match &cfg.valid {
        Some(p) => load_labeled(p)?,
        None => Vec::new(),
    };
    let mut log = MetricsLog::echoing();
    let t = train_regime(cfg.regime, &ds, &valid, &cfg.experiment, cfg.embeddings.as_deref(), &mut log)?;
    let out = &cfg.output_dir;
    log.write(out.join("metrics.log"))?;
    let mut artifacts = vec!["metrics.log".to_string(), "nlu.ckpt".to_string()];
    let last = t.phases.last().expect("at least one phase");
    save_nlu(out.join("nlu.ckpt"), &t.nlu, last.report.best_epoch, Some(*last.report.best()))?;
    if let Some(ssg) = &t.ssg {
        save_ssg(out.join("ssg.ckpt"), ssg, 0)?;
        artifacts.push("ssg.ckpt".into());
    }
    if let Some(lm) = &t.lm {
        save_lm(out.join("lm.ckpt"), lm)?;
        artifacts.push("lm.ckpt".into());
    }
    let report = match &cfg.test {
        Some(p) => {
            let test = load_labeled(p)?;
            let nlu = load_nlu(out.join("nlu.ckpt"), t.vocab.clone())?;
            let r = evaluate_nlu(&nlu, &test)?;
            artifacts.extend(write_report(out, &r)?);
            Some(r)
        }
        None => None,
    };
    write_manifest(cfg, "train", &t.vocab, artifacts)?;
    Ok(report)
}

fn load_vocab(cfg: &RunConfig) -> Result<Arc<Vocabulary>> {
    Ok(Arc::new(Vocabulary::load(&cfg.output_dir.join("vocab"))?))
}

/// Re-evaluates the saved NLU checkpoint.
pub fn eval(cfg: &RunConfig, data: Option<&Path>) -> Result<EvalReport> {
    let path = match data {
        Some(p) => p,
        None => require(&cfg.test, "test")?,
    };
    let vocab = load_vocab(cfg)?;
    let nlu = load_nlu(cfg.output_dir.join("nlu.ckpt"), vocab.clone())?;
    let r = evaluate_nlu(&nlu, &load_labeled(path)?)?;
    write_report(&cfg.output_dir, &r)?;
    Ok(r)
}

/// `form_index<TAB>rank<TAB>log_score<TAB>sentence` lines.
pub fn generate(cfg: &RunConfig, input: &Path, beam: usize) -> Result<String> {
    if beam == 0 {
        return Err(Error::Config("beam must be at least 1".into()));
    }
    let vocab = load_vocab(cfg)?;
    let ssg = load_ssg(cfg.output_dir.join("ssg.ckpt"), vocab)?;
    let mut out = String::new();
    for (i, form) in load_forms(input)?.iter().enumerate() {
        for (rank, g) in ssg.beam(form, beam)?.iter().enumerate() {
            let r = g.realize(form);
            out.push_str(&format!("{i}\t{rank}\t{:.4}\t{}\n", g.log_score, r.tokens.join(" ")));
        }
    }
    Ok(out)
}

pub fn significance(a: &Path, b: &Path, column: &str) -> Result<String> {
    let col: Correctness = column.parse()?;
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let x = parse_correctness(&read(a)?, col)?;
    let y = parse_correctness(&read(b)?, col)?;
    let m = mcnemar(&x, &y)?;
    Ok(format!(
        "b\t{}\nc\t{}\nstatistic\t{:.6}\np_value\t{:.6}\nexact_p_value\t{:.6}\nsignificant\t{}\n",
        m.b, m.c, m.statistic, m.p_value, m.exact_p_value, m.significant
    ))
}

pub fn dispatch(cli: Cli, env_seed: Option<&str>) -> Result<String> {
    match cli.command {
        Command::Prepare(c) => {
            let cfg = load_config(&c, env_seed)?;
            let (ds, vocab) = prepare(&cfg)?;
            write_manifest(&cfg, "prepare", &vocab, vec!["data".into(), "vocab".into()])?;
            Ok(format!(
                "labeled\t{}\nunlabeled\t{}\nforms\t{}\nwords\t{}\n",
                ds.labeled.len(),
                ds.unlabeled_sentences.len(),
                ds.unexpressed_forms.len(),
                vocab.num_words()
            ))
        }
        Command::Train(c) => {
            let cfg = load_config(&c, env_seed)?;
            Ok(train(&cfg)?.map(|r| r.table()).unwrap_or_default())
        }
        Command::Eval { common, data } => {
            let cfg = load_config(&common, env_seed)?;
            Ok(eval(&cfg, data.as_deref())?.table())
        }
        Command::Generate { common, input, beam } => {
            let cfg = load_config(&common, env_seed)?;
            generate(&cfg, &input, beam)
        }
        Command::Significance { a, b, column } => significance(&a, &b, &column),
    }
}

/// Parses `args`, runs the command and prints its output.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    match dispatch(cli, env_seed.as_deref()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_reference_settings() {
        let c = RunConfig::default();
        let e = &c.experiment;
        assert_eq!(e.nlu.mode, TaggerMode::Focus);
        assert_eq!((e.nlu.embed_dim, e.nlu.hidden, e.nlu.tag_embed_dim), (400, 256, 100));
        assert_eq!((e.train.lr, e.train.batch_size, e.train.beam_k), (1e-3, 16, 5));
        assert_eq!(c.echo().len(), KEYS.len());
        assert!(c.echo().keys().all(|k| KEYS.contains(k)));
    }

    #[test]
    fn file_then_overrides() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nregime = combined\nmode = crf  # inline\nratio = 0.1\nhidden=8\n").unwrap();
        c.apply_overrides(&["hidden=16", "seed=4"]).unwrap();
        assert_eq!(c.regime, Regime::Combined);
        assert_eq!(c.experiment.nlu.mode, TaggerMode::Crf);
        assert_eq!((c.experiment.nlu.hidden, c.experiment.ssg.hidden), (16, 16));
        assert_eq!(c.seed(), 4);
        c.apply_env_seed(Some("9")).unwrap();
        assert_eq!(c.seed(), 4);
        let mut d = RunConfig::default();
        d.apply_env_seed(Some("9")).unwrap();
        assert_eq!(d.seed(), 9);
    }

    #[test]
    fn all_offending_keys_are_listed() {
        let mut c = RunConfig::default();
        let err = c.apply_text("colour = red\nratio = 2\nmode = lstm\nepochs = 3\nnonsense\n").unwrap_err();
        let msg = err.to_string();
        for needle in ["colour", "ratio", "mode", "line 5"] {
            assert!(msg.contains(needle), "{msg}");
        }
        assert!(!msg.contains("epochs"));
        assert_eq!(exit_code(&err), 1);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::EmptyCorpus), 2);
        assert_eq!(exit_code(&Error::io("x", std::io::Error::other("no"))), 2);
        assert_eq!(exit_code(&Error::Diverged("nan".into())), 3);
        assert_eq!(exit_code(&Error::Checkpoint("bad".into())), 3);
    }
}
