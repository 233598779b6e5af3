//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys are errors. [`KEYS`] lists every key with its default.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::corpus::{CorpusSpec, GridDims, Jitter, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{Architecture, ClassifierHyper, FreezeMode, Hyperparams, LossMode};
use crate::quadruples::BatchMix;
use crate::retrieval::{AblationConfig, QuestionSpec, Regime, UnseenMode};

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "training, question and baseline seed"),
    ("corpus", "corpus.vslc", "corpus file read by train/eval/ablate and written by gen-corpus"),
    ("out", "runs", "directory that receives timestamped run directories"),
    ("threads", "1", "worker threads; 1 keeps results bit-reproducible across machines"),
    ("num_categories", "12", "glyph categories"),
    ("num_properties", "8", "properties (hues and rotations)"),
    ("exemplars_per_cell", "6", "jittered exemplars per (category, property) cell"),
    ("image_size", "24", "square image side in pixels (multiple of 4)"),
    ("hue_properties", "auto", "how many properties are hues; auto = half"),
    ("jitter_shift_px", "2.0", "maximum translation in pixels"),
    ("jitter_scale", "0.10", "maximum relative scale change"),
    ("jitter_noise", "0.05", "background noise amplitude"),
    ("corpus_seed", "0", "seed of the rendered corpus"),
    ("unseen_categories", "2", "categories withheld from training"),
    ("heldout_types", "6", "analogy types withheld from training"),
    ("split_seed", "0", "seed choosing unseen categories and held-out types"),
    ("loss", "double", "single or double margin"),
    ("m", "0.4", "single-margin m"),
    ("mp", "0.2", "double-margin positive margin m_P"),
    ("mn", "0.4", "double-margin negative margin m_N"),
    ("lr", "0.05", "initial learning rate"),
    ("lr_decay", "0.5", "learning-rate factor applied after each quarter of the steps"),
    ("momentum", "0.9", "SGD momentum"),
    ("batch_size", "32", "quadruples per step"),
    ("steps", "5000", "training steps"),
    ("freeze", "fc_plus_lastconv", "fc_only, fc_plus_lastconv or all"),
    ("pos_fraction", "0.5", "share of positives in a batch"),
    ("hard_fraction", "0.5", "share of negatives built by substitution"),
    ("init", "random", "random or classifier (start from the pretrained classifier body)"),
    ("conv1", "8", "first convolution kernels"),
    ("conv2", "16", "second convolution kernels"),
    ("hidden", "64", "hidden dense units"),
    ("embed_dim", "32", "feature dimension"),
    ("clf_lr", "0.02", "classifier pretraining learning rate"),
    ("clf_steps", "1500", "classifier pretraining steps"),
    ("clf_batch_size", "32", "classifier pretraining batch size"),
    ("n_questions", "1000", "questions per regime and distractor size"),
    ("distractor_sizes", "100", "comma-separated distractor set sizes"),
    ("ks", "1,2,5,10,20,50,100", "comma-separated k values (capped at the candidate count)"),
    ("regimes", "seen,unseen", "comma-separated regimes to evaluate"),
    ("unseen_mode", "both", "types, categories or both"),
    ("ablation_seeds", "0,1,2", "comma-separated seeds of the ablation"),
    ("ablation_freezes", "fc_only,fc_plus_lastconv", "comma-separated freeze modes of the ablation"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Random,
    Classifier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub threads: usize,
    pub num_categories: usize,
    pub num_properties: usize,
    pub exemplars_per_cell: usize,
    pub image_size: usize,
    pub hue_properties: Option<usize>,
    pub jitter: Jitter,
    pub corpus_seed: u64,
    pub unseen_categories: usize,
    pub heldout_types: usize,
    pub split_seed: u64,
    pub loss: String,
    pub m: f64,
    pub mp: f64,
    pub mn: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub freeze: FreezeMode,
    pub pos_fraction: f64,
    pub hard_fraction: f64,
    pub init: InitMode,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub clf_lr: f64,
    pub clf_steps: usize,
    pub clf_batch_size: usize,
    pub n_questions: usize,
    pub distractor_sizes: Vec<usize>,
    pub ks: Vec<usize>,
    pub regimes: Vec<Regime>,
    pub unseen_mode: UnseenMode,
    pub ablation_seeds: Vec<u64>,
    pub ablation_freezes: Vec<FreezeMode>,
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let items = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("`{key}` needs at least one value")));
    }
    Ok(items)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn regime(key: &str, v: &str) -> Result<Regime> {
    match v {
        "seen" => Ok(Regime::Seen),
        "unseen" => Ok(Regime::Unseen),
        _ => Err(Error::Config(format!("`{key}`: unknown regime `{v}`"))),
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            seed: 0,
            corpus: PathBuf::new(),
            out: PathBuf::new(),
            threads: 1,
            num_categories: 0,
            num_properties: 0,
            exemplars_per_cell: 0,
            image_size: 0,
            hue_properties: None,
            jitter: Jitter::default(),
            corpus_seed: 0,
            unseen_categories: 0,
            heldout_types: 0,
            split_seed: 0,
            loss: String::new(),
            m: 0.0,
            mp: 0.0,
            mn: 0.0,
            lr: 0.0,
            lr_decay: 0.0,
            momentum: 0.0,
            batch_size: 0,
            steps: 0,
            freeze: FreezeMode::All,
            pos_fraction: 0.0,
            hard_fraction: 0.0,
            init: InitMode::Random,
            conv1: 0,
            conv2: 0,
            hidden: 0,
            embed_dim: 0,
            clf_lr: 0.0,
            clf_steps: 0,
            clf_batch_size: 0,
            n_questions: 0,
            distractor_sizes: Vec::new(),
            ks: Vec::new(),
            regimes: Vec::new(),
            unseen_mode: UnseenMode::Both,
            ablation_seeds: Vec::new(),
            ablation_freezes: Vec::new(),
        };
        for (k, v, _) in KEYS {
            c.set(k, v).expect("documented defaults parse");
        }
        c
    }
}

impl RunConfig {
    /// Defaults overridden by the lines of `text`.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            c.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        Ok(c)
    }

    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = num(key, v)?,
            "corpus" => self.corpus = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "threads" => self.threads = num(key, v)?,
            "num_categories" => self.num_categories = num(key, v)?,
            "num_properties" => self.num_properties = num(key, v)?,
            "exemplars_per_cell" => self.exemplars_per_cell = num(key, v)?,
            "image_size" => self.image_size = num(key, v)?,
            "hue_properties" => {
                self.hue_properties = if v == "auto" { None } else { Some(num(key, v)?) }
            }
            "jitter_shift_px" => self.jitter.max_shift_px = num(key, v)?,
            "jitter_scale" => self.jitter.max_scale = num(key, v)?,
            "jitter_noise" => self.jitter.noise_amplitude = num(key, v)?,
            "corpus_seed" => self.corpus_seed = num(key, v)?,
            "unseen_categories" => self.unseen_categories = num(key, v)?,
            "heldout_types" => self.heldout_types = num(key, v)?,
            "split_seed" => self.split_seed = num(key, v)?,
            "loss" => match v {
                "single" | "double" => self.loss = v.to_string(),
                _ => return Err(Error::Config(format!("`loss` must be single or double, got `{v}`"))),
            },
            "m" => self.m = num(key, v)?,
            "mp" => self.mp = num(key, v)?,
            "mn" => self.mn = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "lr_decay" => self.lr_decay = num(key, v)?,
            "momentum" => self.momentum = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "freeze" => self.freeze = v.parse()?,
            "pos_fraction" => self.pos_fraction = num(key, v)?,
            "hard_fraction" => self.hard_fraction = num(key, v)?,
            "init" => {
                self.init = match v {
                    "random" => InitMode::Random,
                    "classifier" => InitMode::Classifier,
                    _ => return Err(Error::Config(format!("`init` must be random or classifier, got `{v}`"))),
                }
            }
            "conv1" => self.conv1 = num(key, v)?,
            "conv2" => self.conv2 = num(key, v)?,
            "hidden" => self.hidden = num(key, v)?,
            "embed_dim" => self.embed_dim = num(key, v)?,
            "clf_lr" => self.clf_lr = num(key, v)?,
            "clf_steps" => self.clf_steps = num(key, v)?,
            "clf_batch_size" => self.clf_batch_size = num(key, v)?,
            "n_questions" => self.n_questions = num(key, v)?,
            "distractor_sizes" => self.distractor_sizes = list(key, v)?,
            "ks" => self.ks = list(key, v)?,
            "regimes" => {
                self.regimes = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| regime(key, s))
                    .collect::<Result<_>>()?;
                if self.regimes.is_empty() {
                    return Err(Error::Config("`regimes` needs at least one value".into()));
                }
            }
            "unseen_mode" => self.unseen_mode = v.parse()?,
            "ablation_seeds" => self.ablation_seeds = list(key, v)?,
            "ablation_freezes" => {
                self.ablation_freezes = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(FreezeMode::from_str)
                    .collect::<Result<_>>()?;
                if self.ablation_freezes.is_empty() {
                    return Err(Error::Config("`ablation_freezes` needs at least one value".into()));
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Current value of `key` in text form.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "corpus" => self.corpus.display().to_string(),
            "out" => self.out.display().to_string(),
            "threads" => self.threads.to_string(),
            "num_categories" => self.num_categories.to_string(),
            "num_properties" => self.num_properties.to_string(),
            "exemplars_per_cell" => self.exemplars_per_cell.to_string(),
            "image_size" => self.image_size.to_string(),
            "hue_properties" => self.hue_properties.map_or("auto".into(), |h| h.to_string()),
            "jitter_shift_px" => self.jitter.max_shift_px.to_string(),
            "jitter_scale" => self.jitter.max_scale.to_string(),
            "jitter_noise" => self.jitter.noise_amplitude.to_string(),
            "corpus_seed" => self.corpus_seed.to_string(),
            "unseen_categories" => self.unseen_categories.to_string(),
            "heldout_types" => self.heldout_types.to_string(),
            "split_seed" => self.split_seed.to_string(),
            "loss" => self.loss.clone(),
            "m" => self.m.to_string(),
            "mp" => self.mp.to_string(),
            "mn" => self.mn.to_string(),
            "lr" => self.lr.to_string(),
            "lr_decay" => self.lr_decay.to_string(),
            "momentum" => self.momentum.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "steps" => self.steps.to_string(),
            "freeze" => self.freeze.to_string(),
            "pos_fraction" => self.pos_fraction.to_string(),
            "hard_fraction" => self.hard_fraction.to_string(),
            "init" => match self.init {
                InitMode::Random => "random".into(),
                InitMode::Classifier => "classifier".into(),
            },
            "conv1" => self.conv1.to_string(),
            "conv2" => self.conv2.to_string(),
            "hidden" => self.hidden.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "clf_lr" => self.clf_lr.to_string(),
            "clf_steps" => self.clf_steps.to_string(),
            "clf_batch_size" => self.clf_batch_size.to_string(),
            "n_questions" => self.n_questions.to_string(),
            "distractor_sizes" => join(&self.distractor_sizes),
            "ks" => join(&self.ks),
            "regimes" => join(&self.regimes),
            "unseen_mode" => self.unseen_mode.to_string(),
            "ablation_seeds" => join(&self.ablation_seeds),
            "ablation_freezes" => join(&self.ablation_freezes),
            _ => return None,
        })
    }

    /// Every key with its resolved value, in [`KEYS`] order; parses back to
    /// an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _, doc) in KEYS {
            let _ = writeln!(s, "# {doc}\n{k} = {}", self.get(k).expect("every key has a getter"));
        }
        s
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            num_categories: self.num_categories,
            num_properties: self.num_properties,
            exemplars_per_cell: self.exemplars_per_cell,
            image_size: self.image_size,
            channels: 3,
            hue_properties: self.hue_properties,
            jitter: self.jitter,
            seed: self.corpus_seed,
        }
    }

    pub fn split_spec(&self, dims: GridDims) -> Result<SplitSpec> {
        SplitSpec::sample(dims, self.unseen_categories, self.heldout_types, self.split_seed)
    }

    pub fn loss_mode(&self) -> LossMode {
        if self.loss == "single" {
            LossMode::Single { margin: self.m }
        } else {
            LossMode::Double {
                pos_margin: self.mp,
                neg_margin: self.mn,
            }
        }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            loss: self.loss_mode(),
            lr: self.lr,
            lr_decay: self.lr_decay,
            momentum: self.momentum,
            batch_size: self.batch_size,
            steps: self.steps,
            freeze: self.freeze,
            mix: BatchMix {
                pos_fraction: self.pos_fraction,
                hard_fraction: self.hard_fraction,
            },
            seed: self.seed,
            threads: self.threads,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            in_channels: 3,
            image_size: self.image_size,
            kernel: 3,
            conv1: self.conv1,
            conv2: self.conv2,
            hidden: self.hidden,
            embed_dim: self.embed_dim,
        }
    }

    pub fn classifier_hyper(&self) -> ClassifierHyper {
        ClassifierHyper {
            lr: self.clf_lr,
            momentum: self.momentum,
            batch_size: self.clf_batch_size,
            steps: self.clf_steps,
            seed: self.seed,
        }
    }

    pub fn question_spec(&self, regime: Regime, distractor_size: usize) -> QuestionSpec {
        QuestionSpec {
            regime,
            unseen_mode: self.unseen_mode,
            n_questions: self.n_questions,
            distractor_size,
        }
    }

    pub fn ablation(&self) -> AblationConfig {
        AblationConfig {
            base: self.hyperparams(),
            arch: self.architecture(),
            losses: vec![
                LossMode::Single { margin: self.m },
                LossMode::Double {
                    pos_margin: self.mp,
                    neg_margin: self.mn,
                },
            ],
            freezes: self.ablation_freezes.clone(),
            seeds: self.ablation_seeds.clone(),
            pretrain: (self.init == InitMode::Classifier).then(|| self.classifier_hyper()),
            ks: self.ks.clone(),
            n_questions: self.n_questions,
            distractor_size: self.distractor_sizes[0],
            unseen_mode: self.unseen_mode,
        }
    }

    /// Checks that need no corpus.
    pub fn validate(&self) -> Result<()> {
        self.corpus_spec().validate()?;
        self.architecture().validate()?;
        self.hyperparams().validate()?;
        LossMode::Single { margin: self.m }.validate()?;
        self.classifier_hyper().validate()?;
        if self.n_questions == 0 {
            return Err(Error::Config("n_questions must be >= 1".into()));
        }
        if self.distractor_sizes.contains(&0) || self.ks.contains(&0) {
            return Err(Error::Config("distractor sizes and ks must be >= 1".into()));
        }
        let distinct: BTreeSet<_> = self.ablation_seeds.iter().collect();
        if distinct.len() != self.ablation_seeds.len() {
            return Err(Error::Config("ablation_seeds must be distinct".into()));
        }
        Ok(())
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        assert_eq!(c.corpus_spec(), CorpusSpec::default());
        assert_eq!(c.hyperparams(), Hyperparams::default());
        assert_eq!(c.architecture(), Architecture::default());
        assert_eq!(c.classifier_hyper(), ClassifierHyper::default());
        c.validate().unwrap();
        for (k, v, _) in KEYS {
            let mut d = RunConfig::default();
            d.set(k, &c.get(k).unwrap()).unwrap();
            assert_eq!(d, c, "{k}");
            d.set(k, v).unwrap();
            assert_eq!(d, c, "{k}");
        }
    }

    #[test]
    fn parse_overrides_and_comments() {
        let c = RunConfig::parse("# comment\n\nloss = single  # trailing\nm=0.5\nks = 1, 10\n").unwrap();
        assert_eq!(c.loss_mode(), LossMode::Single { margin: 0.5 });
        assert_eq!(c.ks, vec![1, 10]);
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.set("regimes", "unseen").unwrap();
        c.set("hue_properties", "3").unwrap();
        c.set("init", "classifier").unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_line_or_key() {
        let e = RunConfig::parse("steps = 10\nbogus = 1\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("bogus"), "{e}");
        assert!(RunConfig::parse("steps 10").is_err());
        assert!(RunConfig::parse("steps = -1").is_err());
        assert!(RunConfig::parse("freeze = none").is_err());
        assert!(RunConfig::parse("ks = ,").is_err());
        let bad = RunConfig::parse("mp = 0.5\nmn = 0.4").unwrap();
        assert!(bad.validate().is_err());
        let bad = RunConfig::parse("num_categories = 1").unwrap();
        assert!(bad.validate().is_err());
    }
}
