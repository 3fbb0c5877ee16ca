//! TOML experiment configuration with defaults, validation and dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::continual::{LearnerConfig, StreamConfig};
use crate::error::{Error, Result};
use crate::fewshot::{ClusterSpec, TaskFamily};
use crate::mask::{MaskKind, DEFAULT_LATENT_DIM};
use crate::nn::{Activation, OptimizerKind};
use crate::online::{OnlineLearnerConfig, OnlineStreamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Fewshot,
    Continual,
    Online,
    Twophase,
}

impl Regime {
    pub const NAMES: [&'static str; 4] = ["fewshot", "continual", "online", "twophase"];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "fewshot" => Ok(Regime::Fewshot),
            "continual" => Ok(Regime::Continual),
            "online" => Ok(Regime::Online),
            "twophase" => Ok(Regime::Twophase),
            "" => Err(Error::field("regime", "must not be empty")),
            other => Err(Error::field(
                "regime",
                format!("unknown regime `{other}`, expected one of {}", Regime::NAMES.join(", ")),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        Regime::NAMES[self as usize]
    }
}

/// Hidden layers; input and output widths follow from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub bias: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden: vec![40, 40],
            activation: Activation::Relu,
            bias: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskInit {
    /// Kaiming-scaled magnitudes with a `sparsity` fraction of negative signs.
    Kaiming,
    /// Every coordinate on.
    AllOn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub kind: MaskKind,
    pub init: MaskInit,
    /// Initial fraction of frozen coordinates.
    pub sparsity: f64,
    /// Draw hidden-layer masks from a latent-variable generator.
    pub stochastic: bool,
    pub latent_dim: usize,
    /// Scale of the generator's initial `A`.
    pub a_scale: f64,
    /// Groups pinned frozen throughout meta-training.
    pub freeze_groups: Vec<String>,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            kind: MaskKind::Binary,
            init: MaskInit::Kaiming,
            sparsity: 0.5,
            stochastic: false,
            latent_dim: DEFAULT_LATENT_DIM,
            a_scale: 0.01,
            freeze_groups: Vec::new(),
        }
    }
}

/// Domain shift applied to cluster tasks for cross-domain evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    pub rotation: f64,
    pub spread_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FewshotConfig {
    pub family: TaskFamily,
    pub query_size: usize,
    pub alpha: f64,
    pub gamma_m: f64,
    pub meta_lr: f64,
    pub optimizer: OptimizerKind,
    pub k_train: usize,
    pub k_test: usize,
    /// Defaults to 4 for one-shot families and 2 otherwise.
    pub tasks_per_batch: Option<usize>,
    pub iterations: u64,
    pub val_every: u64,
    pub val_tasks: usize,
    pub patience: usize,
    pub test_tasks: usize,
    pub shift: Option<ShiftConfig>,
}

impl Default for FewshotConfig {
    fn default() -> Self {
        Self {
            family: TaskFamily::GaussianClusters(ClusterSpec {
                n_way: 5,
                k_shot: 5,
                d_in: 16,
                spread: 2.0,
            }),
            query_size: 15,
            alpha: 0.1,
            gamma_m: 0.0075,
            meta_lr: 0.001,
            optimizer: OptimizerKind::Adam,
            k_train: 5,
            k_test: 10,
            tasks_per_batch: None,
            iterations: 1000,
            val_every: 50,
            val_tasks: 50,
            patience: 0,
            test_tasks: 200,
            shift: None,
        }
    }
}

impl FewshotConfig {
    pub fn effective_tasks_per_batch(&self) -> usize {
        self.tasks_per_batch.unwrap_or(match self.family {
            TaskFamily::Sinusoid { k_shot } if k_shot == 1 => 4,
            TaskFamily::GaussianClusters(c) | TaskFamily::ShiftedClusters { clusters: c, .. } if c.k_shot == 1 => 4,
            _ => 2,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ContinualSection {
    pub stream: StreamConfig,
    pub learner: LearnerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineSection {
    pub stream: OnlineStreamConfig,
    pub learner: OnlineLearnerConfig,
}

/// Independent seed streams so one factor can vary at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    /// Parameter and mask initialisation.
    pub model: u64,
    /// Task sampling (few-shot) and task generation (continual).
    pub tasks: u64,
    /// Stochastic masks, replay sampling and the online stream.
    pub stream: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            model: 0,
            tasks: 1,
            stream: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Few-shot checkpoint whose `θ` the two-phase regime starts from.
    pub pretrained: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            pretrained: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub regime: Regime,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub mask: MaskConfig,
    #[serde(default)]
    pub fewshot: FewshotConfig,
    #[serde(default)]
    pub continual: ContinualSection,
    #[serde(default)]
    pub online: OnlineSection,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn new(regime: Regime) -> Self {
        Self {
            regime,
            arch: ArchConfig::default(),
            mask: MaskConfig::default(),
            fewshot: FewshotConfig::default(),
            continual: ContinualSection::default(),
            online: OnlineSection::default(),
            seeds: Seeds::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::field(name, format!("must be positive, got {v}")))
            }
        }
        fn fraction(name: &str, v: f64) -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::field(name, format!("must lie in [0, 1], got {v}")))
            }
        }
        fn non_negative(name: &str, v: f64) -> Result<()> {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::field(name, format!("must be non-negative, got {v}")))
            }
        }
        if self.arch.hidden.contains(&0) {
            return Err(Error::field("arch.hidden", "layer widths must be positive"));
        }
        fraction("mask.sparsity", self.mask.sparsity)?;
        if self.mask.stochastic && self.mask.latent_dim == 0 {
            return Err(Error::field("mask.latent_dim", "must be positive"));
        }
        non_negative("mask.a_scale", self.mask.a_scale)?;
        match self.regime {
            Regime::Fewshot | Regime::Twophase => {
                let f = &self.fewshot;
                positive("fewshot.alpha", f.alpha)?;
                positive("fewshot.meta_lr", f.meta_lr)?;
                non_negative("fewshot.gamma_m", f.gamma_m)?;
                if f.query_size == 0 {
                    return Err(Error::field("fewshot.query_size", "must be at least 1"));
                }
                if f.effective_tasks_per_batch() == 0 {
                    return Err(Error::field("fewshot.tasks_per_batch", "must be at least 1"));
                }
                if f.test_tasks == 0 {
                    return Err(Error::field("fewshot.test_tasks", "must be at least 1"));
                }
                crate::fewshot::TaskSampler::new(f.family, f.query_size)
                    .map_err(|e| Error::field("fewshot.family", e.to_string()))?;
                if let Some(s) = f.shift {
                    non_negative("fewshot.shift.spread_scale", s.spread_scale)?;
                }
                if self.mask.stochastic && self.mask.kind != MaskKind::Binary {
                    return Err(Error::field("mask.kind", "stochastic masks are binary"));
                }
            }
            Regime::Continual => {
                let c = &self.continual;
                c.stream.validate()?;
                positive("continual.learner.alpha0", c.learner.alpha0)?;
                non_negative("continual.learner.gamma", c.learner.gamma)?;
                fraction("continual.learner.init_sparsity", c.learner.init_sparsity)?;
                if self.mask.kind != MaskKind::Binary {
                    return Err(Error::field("mask.kind", "the continual regime uses binary masks"));
                }
            }
            Regime::Online => {
                let o = &self.online;
                o.stream.validate()?;
                positive("online.learner.alpha0", o.learner.alpha0)?;
                non_negative("online.learner.gamma_m", o.learner.gamma_m)?;
                fraction("online.learner.init_sparsity", o.learner.init_sparsity)?;
                // Infinity is allowed and disables switch detection.
                if !(o.learner.detector_lambda > 0.0) {
                    return Err(Error::field("online.learner.detector_lambda", "must be positive"));
                }
                o.learner.lr_adapt.validate()?;
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::structural(format!("cannot serialize config: {e}")))
    }

    /// Hash of every setting that affects the trajectory, i.e. all but the iteration
    /// budget and output locations.
    pub fn trajectory_hash(&self) -> String {
        let mut c = self.clone();
        c.fewshot.iterations = 0;
        c.output = OutputConfig::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Parses TOML text, applying `overrides` (`dotted.key=value`) before validation.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    match table.get("regime") {
        None => return Err(Error::field("regime", "missing")),
        Some(toml::Value::String(s)) => {
            Regime::parse(s)?;
        }
        Some(_) => return Err(Error::field("regime", "must be a string")),
    }
    let config: ExperimentConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| config_error(&e))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, overrides)
}

fn parse_error(text: &str, e: &toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    Error::ConfigParse {
        line,
        message: e.message().to_owned(),
    }
}

/// Errors raised while mapping the parsed table onto the typed config.
fn config_error(e: &toml::de::Error) -> Error {
    let msg = e.message();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("field"))
        .unwrap_or("config")
        .to_owned();
    Error::ConfigField {
        field,
        message: msg.to_owned(),
    }
}

/// Sets `a.b.c = value`, creating intermediate tables. The value is read as TOML and
/// falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::field(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::field(assignment, "empty key"));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_owned()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::field(key, format!("`{p}` is not a table"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}
