//! Plain-text `key=value` configuration with `#` comments, and the merged
//! run configuration used by the command-line driver.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::branches::Reduction;
use crate::cleaner::TrainConfig;
use crate::error::{ClcError, Result};
use crate::model::ModelConfig;

/// Parsed `key=value` pairs. Later entries override earlier ones.
#[derive(Clone, Debug, Default)]
pub struct KvFile {
    entries: BTreeMap<String, (String, String)>,
}

/// Read access used by the typed config structs.
pub trait KvSource {
    fn raw(&self, key: &str) -> Option<(&str, &str)>;

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((value, origin)) => value.parse().map(Some).map_err(|_| {
                ClcError::Config(format!("{origin}: cannot parse {key}={value}"))
            }),
        }
    }

    fn set_usize(&self, key: &str, slot: &mut usize) -> Result<()> {
        if let Some(v) = self.parsed(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn set_u64(&self, key: &str, slot: &mut u64) -> Result<()> {
        if let Some(v) = self.parsed(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn set_f64(&self, key: &str, slot: &mut f64) -> Result<()> {
        if let Some(v) = self.parsed::<f64>(key)? {
            if !v.is_finite() {
                return Err(ClcError::Config(format!("{key} must be finite")));
            }
            *slot = v;
        }
        Ok(())
    }

    fn set_bool(&self, key: &str, slot: &mut bool) -> Result<()> {
        if let Some((value, origin)) = self.raw(key) {
            *slot = match value {
                "true" | "1" | "on" | "yes" => true,
                "false" | "0" | "off" | "no" => false,
                _ => {
                    return Err(ClcError::Config(format!(
                        "{origin}: {key} expects a boolean, got {value}"
                    )))
                }
            };
        }
        Ok(())
    }

    fn set_path(&self, key: &str, slot: &mut Option<PathBuf>) -> Result<()> {
        if let Some((value, _)) = self.raw(key) {
            *slot = (!value.is_empty()).then(|| PathBuf::from(value));
        }
        Ok(())
    }
}

impl KvSource for KvFile {
    fn raw(&self, key: &str) -> Option<(&str, &str)> {
        self.entries.get(key).map(|(v, o)| (v.as_str(), o.as_str()))
    }
}

impl KvFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut kv = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = match line.find('#') {
                Some(i) => &line[..i],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ClcError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            let origin = format!("{}:{}", path.display(), n + 1);
            kv.entries
                .insert(key.trim().to_owned(), (value.trim().to_owned(), origin));
        }
        Ok(kv)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            ClcError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text, path)
    }

    /// Parses `key=value` overrides given on the command line.
    pub fn from_overrides<S: AsRef<str>>(items: &[S]) -> Result<Self> {
        let mut kv = Self::default();
        for item in items {
            let item = item.as_ref();
            let (k, v) = item.split_once('=').ok_or_else(|| {
                ClcError::Config(format!("override `{item}` is not key=value"))
            })?;
            kv.insert(k.trim(), v.trim(), "command line");
        }
        Ok(kv)
    }

    pub fn insert(&mut self, key: &str, value: &str, origin: &str) {
        self.entries
            .insert(key.to_owned(), (value.to_owned(), origin.to_owned()));
    }

    /// Entries of `other` override entries of `self`.
    pub fn merge(mut self, other: KvFile) -> Self {
        self.entries.extend(other.entries);
        self
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn reject_unknown<'a>(&self, known: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let known: Vec<&str> = known.into_iter().collect();
        for (key, (_, origin)) in &self.entries {
            if !known.contains(&key.as_str()) {
                return Err(ClcError::Config(format!("{origin}: unknown key `{key}`")));
            }
        }
        Ok(())
    }
}

/// One documented configuration key.
pub struct KeyDoc {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

/// Every `RunConfig` key with its default and provenance.
pub const RUN_KEYS: &[KeyDoc] = &[
    KeyDoc { key: "seed", default: "0", help: "seed for initialization and window shuffling (CLC_SEED overrides)" },
    KeyDoc { key: "d_model", default: "512", help: "shared feature width after projection (published setting: 512)" },
    KeyDoc { key: "hidden", default: "128", help: "recurrent hidden width per direction" },
    KeyDoc { key: "tau", default: "0.65", help: "clean sample proportion per modality, in (0, 1]" },
    KeyDoc { key: "beta", default: "0.1", help: "consistency loss weight (published setting: 0.1)" },
    KeyDoc { key: "filter_k", default: "9", help: "median filter half-width (published setting: 9)" },
    KeyDoc { key: "learning_rate", default: "0.01", help: "SGD step size (published setting: 0.01)" },
    KeyDoc { key: "epochs", default: "50", help: "training epochs (published setting: 50)" },
    KeyDoc { key: "window", default: "128", help: "shots per training/inference window" },
    KeyDoc { key: "cross_propagation", default: "true", help: "use the attention block; false feeds projected inputs straight to the heads" },
    KeyDoc { key: "gate_normalize", default: "false", help: "divide the cross-correlation row mass by the window length" },
    KeyDoc { key: "unimodal_updates_acp", default: "false", help: "let uni-modal losses update the shared attention block" },
    KeyDoc { key: "mean_reduction", default: "false", help: "average loss terms instead of summing them" },
    KeyDoc { key: "grad_clip", default: "false", help: "clip the global gradient norm at 5" },
    KeyDoc { key: "train_data", default: "", help: "CLCF file with noisy training labels" },
    KeyDoc { key: "eval_data", default: "", help: "CLCF file with ground-truth labels (validation / evaluation)" },
    KeyDoc { key: "checkpoint", default: "", help: "checkpoint path written by train, read by eval" },
    KeyDoc { key: "train_log", default: "", help: "line-delimited training log path" },
    KeyDoc { key: "report", default: "", help: "evaluation report path" },
    KeyDoc { key: "curves_dir", default: "", help: "directory for per-video score curves (optional)" },
];

/// Clip threshold used when `grad_clip` is on.
pub const GRAD_CLIP_NORM: f64 = 5.0;

/// Fully merged configuration for train / eval / ablate.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub d_model: usize,
    pub hidden: usize,
    pub tau: f64,
    pub beta: f64,
    pub filter_k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub window: usize,
    pub cross_propagation: bool,
    pub gate_normalize: bool,
    pub unimodal_updates_acp: bool,
    pub mean_reduction: bool,
    pub grad_clip: bool,
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub train_log: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub curves_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d_model: 512,
            hidden: 128,
            tau: 0.65,
            beta: 0.1,
            filter_k: 9,
            learning_rate: 0.01,
            epochs: 50,
            window: 128,
            cross_propagation: true,
            gate_normalize: false,
            unimodal_updates_acp: false,
            mean_reduction: false,
            grad_clip: false,
            train_data: None,
            eval_data: None,
            checkpoint: None,
            train_log: None,
            report: None,
            curves_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        kv.reject_unknown(RUN_KEYS.iter().map(|k| k.key))?;
        let mut c = Self::default();
        kv.set_u64("seed", &mut c.seed)?;
        kv.set_usize("d_model", &mut c.d_model)?;
        kv.set_usize("hidden", &mut c.hidden)?;
        kv.set_f64("tau", &mut c.tau)?;
        kv.set_f64("beta", &mut c.beta)?;
        kv.set_usize("filter_k", &mut c.filter_k)?;
        kv.set_f64("learning_rate", &mut c.learning_rate)?;
        kv.set_usize("epochs", &mut c.epochs)?;
        kv.set_usize("window", &mut c.window)?;
        kv.set_bool("cross_propagation", &mut c.cross_propagation)?;
        kv.set_bool("gate_normalize", &mut c.gate_normalize)?;
        kv.set_bool("unimodal_updates_acp", &mut c.unimodal_updates_acp)?;
        kv.set_bool("mean_reduction", &mut c.mean_reduction)?;
        kv.set_bool("grad_clip", &mut c.grad_clip)?;
        kv.set_path("train_data", &mut c.train_data)?;
        kv.set_path("eval_data", &mut c.eval_data)?;
        kv.set_path("checkpoint", &mut c.checkpoint)?;
        kv.set_path("train_log", &mut c.train_log)?;
        kv.set_path("report", &mut c.report)?;
        kv.set_path("curves_dir", &mut c.curves_dir)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.d_model == 0 || self.hidden == 0 {
            return Err(ClcError::Config("d_model and hidden must be positive".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            tau: self.tau,
            beta: self.beta,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            window: self.window,
            seed: self.seed,
            unimodal_updates_acp: self.unimodal_updates_acp,
            reduction: if self.mean_reduction {
                Reduction::Mean
            } else {
                Reduction::Sum
            },
            grad_clip: self.grad_clip.then_some(GRAD_CLIP_NORM),
            filter_k: self.filter_k,
        }
    }

    pub fn model_config(&self, d_visual: usize, d_audio: usize) -> ModelConfig {
        ModelConfig {
            d_visual,
            d_audio,
            d_model: self.d_model,
            hidden: self.hidden,
            cross_propagation: self.cross_propagation,
            gate_normalize: self.gate_normalize,
        }
    }

    /// Canonical rendering of every hyperparameter (file paths excluded).
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "seed={}\nd_model={}\nhidden={}\ntau={}\nbeta={}\nfilter_k={}\nlearning_rate={}\n\
             epochs={}\nwindow={}\ncross_propagation={}\ngate_normalize={}\n\
             unimodal_updates_acp={}\nmean_reduction={}\ngrad_clip={}\n",
            self.seed,
            self.d_model,
            self.hidden,
            self.tau,
            self.beta,
            self.filter_k,
            self.learning_rate,
            self.epochs,
            self.window,
            self.cross_propagation,
            self.gate_normalize,
            self.unimodal_updates_acp,
            self.mean_reduction,
            self.grad_clip
        );
        s
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::canonical`].
    pub fn fingerprint(&self) -> String {
        short_hash(self.canonical().as_bytes())
    }
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
