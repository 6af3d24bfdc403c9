//! TOML run configuration.
//!
//! Every key is optional; omitted keys take the defaults below. Unknown keys
//! are reported by [`validate_text`] rather than silently ignored.
//!
//! ```toml
//! seed = 0                  # base seed; repeat r runs with seed + r
//! out_dir = "runs"
//! b = 2                     # classes in the first task
//! c = 2                     # classes in every later task
//! methods = ["lingocl", "muprocl"]   # baseline_trainable | lingocl | muprocl | oracle
//! oracle_head = "muprocl"   # classifier trained by the oracle method
//! repeats = 1
//! epochs = 100
//! batch_size = 32
//! memory_capacity = 20      # exemplars per class
//! logit_scale = 1.0
//!
//! [data]
//! source = "synthetic"      # synthetic | features
//! num_classes = 4
//! modes_per_class = 2
//! dim = 8                   # latent dimension, equal to the embedding dimension
//! input_dim = 8             # must match the feature file for source = "features"
//! latent_noise = 0.3
//! input_noise = 0.05
//! train_per_mode = 50
//! test_per_mode = 25
//! max_mode_cosine = 0.9
//! max_retries = 1000
//! # features_path, split_path, class_names_path: required for source = "features"
//!
//! [agent]
//! kind = "stub"             # stub | http | file
//! k_max = 4
//! dedup_threshold = 0.95
//! coverage_gain_threshold = 0.2
//! disambiguation = true
//! expansion = true
//! timeout_secs = 60
//! # endpoint, model, api_key_env (http); candidates_path (file)
//!
//! [embedder]
//! kind = "world"            # world | stub | file
//! dim = 8
//! noise = 0.0
//! # path: required for kind = "file"
//!
//! [encoder]
//! hidden = [32]
//!
//! [optim]
//! learning_rate = 0.05
//! momentum = 0.9
//! schedule = [[50, 0.1], [75, 0.1]]
//!
//! [sweep]
//! k_max = []                # empty: agent.k_max only
//! ablations = ["none"]      # none | no_disambiguation | no_expansion | both
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentKind, AgentSpec, SelectConfig};
use crate::continual::{HeadKind, Method, TrainConfig};
use crate::datagen::WorldSpec;
use crate::embedding::{EmbedderKind, EmbedderSpec};
use crate::encoder::OptimConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    pub num_classes: usize,
    pub modes_per_class: usize,
    pub dim: usize,
    pub input_dim: usize,
    pub latent_noise: f64,
    pub input_noise: f64,
    pub train_per_mode: usize,
    pub test_per_mode: usize,
    pub max_mode_cosine: f64,
    pub max_retries: usize,
    pub features_path: Option<PathBuf>,
    pub split_path: Option<PathBuf>,
    pub class_names_path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let w = WorldSpec::uniform(4, 2, 8, 8);
        DataConfig {
            source: DataSource::Synthetic,
            num_classes: 4,
            modes_per_class: 2,
            dim: w.dim,
            input_dim: w.input_dim,
            latent_noise: w.latent_noise,
            input_noise: w.input_noise,
            train_per_mode: w.train_per_mode,
            test_per_mode: w.test_per_mode,
            max_mode_cosine: w.max_mode_cosine,
            max_retries: w.max_retries,
            features_path: None,
            split_path: None,
            class_names_path: None,
        }
    }
}

impl DataConfig {
    pub fn world_spec(&self) -> WorldSpec {
        WorldSpec {
            modes: vec![self.modes_per_class; self.num_classes],
            dim: self.dim,
            input_dim: self.input_dim,
            latent_noise: self.latent_noise,
            input_noise: self.input_noise,
            train_per_mode: self.train_per_mode,
            test_per_mode: self.test_per_mode,
            max_mode_cosine: self.max_mode_cosine,
            max_retries: self.max_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub k_max: usize,
    pub dedup_threshold: f64,
    pub coverage_gain_threshold: f64,
    pub disambiguation: bool,
    pub expansion: bool,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub candidates_path: Option<PathBuf>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        let s = SelectConfig::default();
        AgentConfig {
            kind: AgentKind::Stub,
            k_max: s.k_max,
            dedup_threshold: s.dedup_threshold,
            coverage_gain_threshold: s.coverage_gain_threshold,
            disambiguation: s.disambiguation_enabled,
            expansion: s.expansion_enabled,
            endpoint: None,
            model: None,
            api_key_env: None,
            timeout_secs: 60,
            candidates_path: None,
        }
    }
}

impl AgentConfig {
    pub fn select(&self) -> SelectConfig {
        SelectConfig {
            k_max: self.k_max,
            dedup_threshold: self.dedup_threshold,
            coverage_gain_threshold: self.coverage_gain_threshold,
            disambiguation_enabled: self.disambiguation,
            expansion_enabled: self.expansion,
        }
    }

    pub fn spec(&self, seed: u64) -> AgentSpec {
        AgentSpec {
            kind: self.kind,
            seed,
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            api_key_env: self.api_key_env.clone(),
            timeout_secs: self.timeout_secs,
            candidates_path: self.candidates_path.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub noise: f64,
    pub path: Option<PathBuf>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            kind: EmbedderKind::World,
            dim: 8,
            noise: 0.0,
            path: None,
        }
    }
}

impl EmbedderConfig {
    pub fn spec(&self, seed: u64) -> EmbedderSpec {
        EmbedderSpec {
            kind: self.kind,
            dim: self.dim,
            path: self.path.clone(),
            seed,
            noise: self.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { hidden: vec![32] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    NoDisambiguation,
    NoExpansion,
    Both,
}

impl Ablation {
    pub fn flags(self) -> (bool, bool) {
        match self {
            Ablation::None => (false, false),
            Ablation::NoDisambiguation => (true, false),
            Ablation::NoExpansion => (false, true),
            Ablation::Both => (true, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub k_max: Vec<usize>,
    pub ablations: Vec<Ablation>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            k_max: Vec::new(),
            ablations: vec![Ablation::None],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub b: usize,
    pub c: usize,
    pub methods: Vec<Method>,
    pub oracle_head: Method,
    pub repeats: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub memory_capacity: usize,
    pub logit_scale: f64,
    pub data: DataConfig,
    pub agent: AgentConfig,
    pub embedder: EmbedderConfig,
    pub encoder: EncoderConfig,
    pub optim: OptimConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            b: 2,
            c: 2,
            methods: vec![Method::Lingocl, Method::Muprocl],
            oracle_head: Method::Muprocl,
            repeats: 1,
            epochs: t.epochs,
            batch_size: t.batch_size,
            memory_capacity: t.memory_capacity,
            logit_scale: t.logit_scale,
            data: DataConfig::default(),
            agent: AgentConfig::default(),
            embedder: EmbedderConfig::default(),
            encoder: EncoderConfig::default(),
            optim: OptimConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

const TOP_KEYS: &[&str] = &[
    "seed",
    "out_dir",
    "b",
    "c",
    "methods",
    "oracle_head",
    "repeats",
    "epochs",
    "batch_size",
    "memory_capacity",
    "logit_scale",
];

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "data",
        &[
            "source",
            "num_classes",
            "modes_per_class",
            "dim",
            "input_dim",
            "latent_noise",
            "input_noise",
            "train_per_mode",
            "test_per_mode",
            "max_mode_cosine",
            "max_retries",
            "features_path",
            "split_path",
            "class_names_path",
        ],
    ),
    (
        "agent",
        &[
            "kind",
            "k_max",
            "dedup_threshold",
            "coverage_gain_threshold",
            "disambiguation",
            "expansion",
            "endpoint",
            "model",
            "api_key_env",
            "timeout_secs",
            "candidates_path",
        ],
    ),
    ("embedder", &["kind", "dim", "noise", "path"]),
    ("encoder", &["hidden"]),
    ("optim", &["learning_rate", "momentum", "schedule"]),
    ("sweep", &["k_max", "ablations"]),
];

fn unknown_keys(root: &toml::Table) -> Vec<String> {
    let mut out = Vec::new();
    for (key, value) in root {
        if TOP_KEYS.contains(&key.as_str()) {
            continue;
        }
        match SECTIONS.iter().find(|(s, _)| s == key) {
            Some((section, known)) => match value.as_table() {
                Some(t) => {
                    for k in t.keys() {
                        if !known.contains(&k.as_str()) {
                            out.push(format!("unknown key {section}.{k}"));
                        }
                    }
                }
                None => out.push(format!("{section} must be a table")),
            },
            None => out.push(format!("unknown key {key}")),
        }
    }
    out
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optim: self.optim.clone(),
            memory_capacity: self.memory_capacity,
            hidden: self.encoder.hidden.clone(),
            logit_scale: self.logit_scale,
        }
    }

    pub fn oracle_head_kind(&self) -> HeadKind {
        match self.oracle_head {
            Method::BaselineTrainable => HeadKind::Trainable,
            Method::Lingocl => HeadKind::SingleTarget,
            _ => HeadKind::MultiPrototype,
        }
    }

    /// Every violation found; empty means the config is runnable.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.b == 0 || self.c == 0 {
            out.push(format!("b and c must be >= 1 (b = {}, c = {})", self.b, self.c));
        }
        if self.data.source == DataSource::Synthetic {
            let n = self.data.num_classes;
            if self.b > n || (self.c > 0 && !(n - self.b.min(n)).is_multiple_of(self.c)) {
                out.push(format!(
                    "{n} classes cannot be split into b = {} initial classes plus tasks of c = {}",
                    self.b, self.c
                ));
            }
            out.extend(self.data.world_spec().validate());
            if self.embedder.kind == EmbedderKind::World && self.embedder.dim != self.data.dim {
                out.push(format!(
                    "embedder.dim ({}) must equal data.dim ({}) for the world embedder",
                    self.embedder.dim, self.data.dim
                ));
            }
        } else {
            for (name, p) in [
                ("features_path", &self.data.features_path),
                ("split_path", &self.data.split_path),
                ("class_names_path", &self.data.class_names_path),
            ] {
                if p.is_none() {
                    out.push(format!("data.source = \"features\" requires data.{name}"));
                }
            }
            if self.embedder.kind == EmbedderKind::World {
                out.push("embedder.kind = \"world\" requires data.source = \"synthetic\"".into());
            }
        }
        if self.methods.is_empty() {
            out.push("methods must list at least one method".into());
        }
        if self.oracle_head == Method::Oracle {
            out.push("oracle_head must name a non-oracle method".into());
        }
        if self.repeats == 0 {
            out.push("repeats must be >= 1".into());
        }
        if self.batch_size == 0 {
            out.push("batch_size must be >= 1".into());
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            out.push(format!("logit_scale must be > 0, got {}", self.logit_scale));
        }
        if self.encoder.hidden.contains(&0) {
            out.push("encoder.hidden sizes must be >= 1".into());
        }
        if !(self.optim.learning_rate > 0.0 && self.optim.learning_rate.is_finite()) {
            out.push(format!("optim.learning_rate must be > 0, got {}", self.optim.learning_rate));
        }
        if !(0.0..1.0).contains(&self.optim.momentum) {
            out.push(format!("optim.momentum must be in [0, 1), got {}", self.optim.momentum));
        }
        if self.optim.schedule.iter().any(|&(_, m)| !(m > 0.0 && m.is_finite())) {
            out.push("optim.schedule multipliers must be > 0".into());
        }
        out.extend(self.agent.select().validate());
        out.extend(self.agent.spec(self.seed).validate());
        out.extend(self.embedder.spec(self.seed).validate());
        for &k in &self.sweep.k_max {
            if k == 0 {
                out.push("sweep.k_max entries must be >= 1 (1 <= K_c <= K_max)".into());
                break;
            }
        }
        if self.sweep.ablations.is_empty() {
            out.push("sweep.ablations must not be empty".into());
        }
        out
    }
}

/// Parses `text`, returning the config together with all diagnostics.
/// The config is `None` when the text is not valid TOML or a value has the
/// wrong type.
pub fn validate_text(text: &str) -> (Option<RunConfig>, Vec<String>) {
    let table: toml::Table = match text.parse() {
        Ok(t) => t,
        Err(e) => return (None, vec![format!("invalid TOML: {}", e.message())]),
    };
    let mut diags = unknown_keys(&table);
    match RunConfig::deserialize(table) {
        Ok(cfg) => {
            diags.extend(cfg.validate());
            (Some(cfg), diags)
        }
        Err(e) => {
            diags.push(format!("invalid value: {}", e.message()));
            (None, diags)
        }
    }
}

pub fn validate_file(path: &Path) -> Result<(Option<RunConfig>, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(validate_text(&text))
}

/// Loads a config, failing with every diagnostic if it is not runnable.
pub fn load(path: &Path) -> Result<RunConfig> {
    let (cfg, diags) = validate_file(path)?;
    match cfg {
        Some(cfg) if diags.is_empty() => Ok(cfg),
        _ => Err(Error::Config(diags.join("; "))),
    }
}
