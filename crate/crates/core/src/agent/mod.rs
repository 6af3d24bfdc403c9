//! Prompt-set generation: candidate proposal by an agent, then sense
//! filtering, near-duplicate removal and farthest-point selection.

mod http;
mod lexicon;
mod select;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{Embedding, PromptRef, TextEmbedder};
use crate::error::{Error, Result};

pub use http::{HttpAgent, INSTRUCTION_TEMPLATE};
pub use lexicon::{Lexicon, Sense};
pub use select::{dedup, fps_indices, fps_select, sense_filter, Selection};

/// Expansion templates; `{object}` is replaced by the class name.
pub const EXPANSION_TEMPLATES: [&str; 4] = [
    "a photo of a {object}",
    "a sketch of a {object}",
    "a logo of {object}",
    "{object} at night",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    Bare,
    Disambiguation,
    Expansion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub text: String,
    pub class_id: usize,
    pub kind: CandidateKind,
    pub mode_tag: Option<String>,
    pub visual: bool,
}

impl PromptCandidate {
    pub fn bare(class_id: usize, class_name: &str) -> Self {
        PromptCandidate {
            text: class_name.to_string(),
            class_id,
            kind: CandidateKind::Bare,
            mode_tag: None,
            visual: true,
        }
    }

    pub fn as_ref(&self) -> PromptRef<'_> {
        PromptRef {
            text: &self.text,
            class_id: self.class_id,
            mode_tag: self.mode_tag.as_deref(),
        }
    }
}

/// The selected prompts `S_c` for one class. `K_c` is `prompts.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub class_id: usize,
    pub prompts: Vec<PromptCandidate>,
}

impl PromptSet {
    pub fn k(&self) -> usize {
        self.prompts.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    pub k_max: usize,
    pub dedup_threshold: f64,
    pub coverage_gain_threshold: f64,
    pub disambiguation_enabled: bool,
    pub expansion_enabled: bool,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            k_max: 4,
            dedup_threshold: 0.95,
            coverage_gain_threshold: 0.2,
            disambiguation_enabled: true,
            expansion_enabled: true,
        }
    }
}

impl SelectConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.k_max < 1 {
            out.push(format!(
                "agent.k_max = {} violates 1 <= K_c <= K_max (K_max must be >= 1)",
                self.k_max
            ));
        }
        for (name, v) in [
            ("dedup_threshold", self.dedup_threshold),
            ("coverage_gain_threshold", self.coverage_gain_threshold),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                out.push(format!("agent.{name} = {v} is outside (0, 1]"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Stub,
    Http,
    /// Replays raw candidates from a prompt-set JSON file.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub kind: AgentKind,
    pub seed: u64,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub candidates_path: Option<PathBuf>,
}

impl AgentSpec {
    pub fn stub(seed: u64) -> Self {
        AgentSpec {
            kind: AgentKind::Stub,
            seed,
            endpoint: None,
            model: None,
            api_key_env: None,
            timeout_secs: 60,
            candidates_path: None,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.kind {
            AgentKind::Http if self.endpoint.is_none() => {
                out.push("agent.kind = \"http\" requires agent.endpoint".into())
            }
            AgentKind::File if self.candidates_path.is_none() => {
                out.push("agent.kind = \"file\" requires agent.candidates_path".into())
            }
            _ => {}
        }
        out
    }
}

/// Anything that proposes a raw candidate pool for a class name.
pub trait PromptAgent: Send + Sync {
    fn propose(&self, class_id: usize, class_name: &str, cfg: &SelectConfig)
        -> Result<Vec<PromptCandidate>>;
}

/// Deterministic agent backed by a polysemy lexicon.
#[derive(Debug, Clone)]
pub struct StubAgent {
    seed: u64,
    lexicon: Lexicon,
}

impl StubAgent {
    pub fn new(seed: u64) -> Self {
        StubAgent {
            seed,
            lexicon: Lexicon::builtin(),
        }
    }

    pub fn with_lexicon(seed: u64, lexicon: Lexicon) -> Self {
        StubAgent { seed, lexicon }
    }

    pub fn lexicon_mut(&mut self) -> &mut Lexicon {
        &mut self.lexicon
    }

    fn template_offset(&self, class_name: &str) -> usize {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(class_name.as_bytes());
        let d = h.finalize();
        d[0] as usize % EXPANSION_TEMPLATES.len()
    }
}

impl PromptAgent for StubAgent {
    fn propose(
        &self,
        class_id: usize,
        class_name: &str,
        cfg: &SelectConfig,
    ) -> Result<Vec<PromptCandidate>> {
        let mut out = vec![PromptCandidate::bare(class_id, class_name)];
        if cfg.disambiguation_enabled && self.lexicon.is_polysemous(class_name) {
            for sense in self.lexicon.senses(class_name) {
                out.push(PromptCandidate {
                    text: format!("{class_name} ({})", sense.label),
                    class_id,
                    kind: CandidateKind::Disambiguation,
                    mode_tag: sense.mode_tag.clone(),
                    visual: sense.visual,
                });
            }
        }
        if cfg.expansion_enabled {
            let off = self.template_offset(class_name);
            for i in 0..EXPANSION_TEMPLATES.len() {
                let t = EXPANSION_TEMPLATES[(i + off) % EXPANSION_TEMPLATES.len()];
                out.push(PromptCandidate {
                    text: t.replace("{object}", class_name),
                    class_id,
                    kind: CandidateKind::Expansion,
                    mode_tag: None,
                    visual: true,
                });
            }
        }
        Ok(out)
    }
}

/// Agent that replays candidates previously written to a prompt-set file
/// (for instance by an offline exporter), applying the config's flags.
#[derive(Debug, Clone)]
pub struct FileAgent {
    file: PromptSetFile,
}

impl FileAgent {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(FileAgent {
            file: PromptSetFile::load(path)?,
        })
    }

    pub fn from_file(file: PromptSetFile) -> Self {
        FileAgent { file }
    }
}

impl PromptAgent for FileAgent {
    fn propose(
        &self,
        class_id: usize,
        class_name: &str,
        cfg: &SelectConfig,
    ) -> Result<Vec<PromptCandidate>> {
        let entry = self
            .file
            .classes
            .get(&class_id)
            .ok_or_else(|| Error::Agent(format!("no candidates for class id {class_id}")))?;
        if entry.class_name != class_name {
            return Err(Error::Agent(format!(
                "candidate file names class {class_id} {:?}, expected {class_name:?}",
                entry.class_name
            )));
        }
        let mut out = vec![PromptCandidate::bare(class_id, class_name)];
        for p in &entry.prompts {
            let keep = match p.kind {
                CandidateKind::Bare => false,
                CandidateKind::Disambiguation => cfg.disambiguation_enabled,
                CandidateKind::Expansion => cfg.expansion_enabled,
            };
            if keep {
                out.push(p.to_candidate(class_id));
            }
        }
        Ok(out)
    }
}

pub fn build_agent(spec: &AgentSpec, extra: Option<Lexicon>) -> Result<Box<dyn PromptAgent>> {
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    Ok(match spec.kind {
        AgentKind::Stub => {
            let mut agent = StubAgent::new(spec.seed);
            if let Some(extra) = extra {
                agent.lexicon_mut().extend(extra);
            }
            Box::new(agent)
        }
        AgentKind::Http => Box::new(HttpAgent::from_spec(spec)?),
        AgentKind::File => Box::new(FileAgent::load(
            spec.candidates_path.as_deref().expect("validated"),
        )?),
    })
}

pub fn generate_candidates(
    agent: &dyn PromptAgent,
    class_id: usize,
    class_name: &str,
    cfg: &SelectConfig,
) -> Result<Vec<PromptCandidate>> {
    if class_name.is_empty() {
        return Err(Error::invalid("empty class name"));
    }
    let mut cands = agent.propose(class_id, class_name, cfg)?;
    if !cands.iter().any(|c| c.kind == CandidateKind::Bare) {
        cands.insert(0, PromptCandidate::bare(class_id, class_name));
    }
    Ok(cands)
}

/// Runs the full filter–select pipeline for one class.
pub fn select_class(
    agent: &dyn PromptAgent,
    class_id: usize,
    class_name: &str,
    embedder: &dyn TextEmbedder,
    cfg: &SelectConfig,
) -> Result<PromptSet> {
    let run = || -> Result<PromptSet> {
        let cands = sense_filter(generate_candidates(agent, class_id, class_name, cfg)?);
        let embs = cands
            .iter()
            .map(|c| embedder.embed(c.as_ref()))
            .collect::<Result<Vec<Embedding>>>()?;
        let (cands, embs) = dedup(cands, embs, cfg.dedup_threshold)?;
        fps_select(&cands, &embs, cfg)
    };
    run().map_err(|e| e.for_class(class_name))
}

/// `classes` is `(class_id, class_name)` in any order; output follows it.
pub fn build_prompt_sets(
    agent: &dyn PromptAgent,
    classes: &[(usize, String)],
    embedder: &dyn TextEmbedder,
    cfg: &SelectConfig,
) -> Result<Vec<PromptSet>> {
    let mut seen = std::collections::HashSet::new();
    for (_, name) in classes {
        if name.is_empty() {
            return Err(Error::invalid("empty class name"));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::invalid(format!("duplicate class name {name:?}")));
        }
    }
    classes
        .iter()
        .map(|(id, name)| select_class(agent, *id, name, embedder, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistedPrompt {
    pub text: String,
    pub kind: CandidateKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_tag: Option<String>,
    #[serde(default = "default_true")]
    pub visual: bool,
}

fn default_true() -> bool {
    true
}

impl PersistedPrompt {
    fn to_candidate(&self, class_id: usize) -> PromptCandidate {
        PromptCandidate {
            text: self.text.clone(),
            class_id,
            kind: self.kind,
            mode_tag: self.mode_tag.clone(),
            visual: self.visual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistedClass {
    pub class_name: String,
    pub prompts: Vec<PersistedPrompt>,
}

/// JSON file mapping `class_id` → ordered prompts with their kinds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PromptSetFile {
    pub version: u32,
    pub classes: BTreeMap<usize, PersistedClass>,
}

impl PromptSetFile {
    pub fn from_sets(sets: &[PromptSet], names: &BTreeMap<usize, String>) -> Self {
        let classes = sets
            .iter()
            .map(|s| {
                let prompts = s
                    .prompts
                    .iter()
                    .map(|p| PersistedPrompt {
                        text: p.text.clone(),
                        kind: p.kind,
                        mode_tag: p.mode_tag.clone(),
                        visual: p.visual,
                    })
                    .collect();
                let class_name = names.get(&s.class_id).cloned().unwrap_or_else(|| {
                    s.prompts
                        .iter()
                        .find(|p| p.kind == CandidateKind::Bare)
                        .map(|p| p.text.clone())
                        .unwrap_or_default()
                });
                (s.class_id, PersistedClass { class_name, prompts })
            })
            .collect();
        PromptSetFile {
            version: 1,
            classes,
        }
    }

    /// Prompt sets in class-id order.
    pub fn to_sets(&self) -> Vec<PromptSet> {
        self.classes
            .iter()
            .map(|(&class_id, c)| PromptSet {
                class_id,
                prompts: c.prompts.iter().map(|p| p.to_candidate(class_id)).collect(),
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
