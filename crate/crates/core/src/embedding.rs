//! Text embedders (`g_T`) and the tab-separated embedding file format.
//!
//! File layout, one record per line:
//!
//! ```text
//! #dim=<d>
//! <prompt-key>\t<class_id>\t<f_1> <f_2> ... <f_d>
//! ```
//!
//! Every embedding handed out by an embedder is L2-normalized. Files are
//! written with 32-bit precision.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::SyntheticWorld;
use crate::error::{Error, Result};
use crate::numerics::{self, Vector};

/// A unit-norm text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vector,
    pub source_prompt: String,
    pub class_id: usize,
}

impl Embedding {
    /// Normalizes `raw` and wraps it.
    pub fn new(raw: &[f64], source_prompt: impl Into<String>, class_id: usize) -> Result<Self> {
        let v = numerics::normalize(raw)?;
        Ok(Embedding {
            vector: Vector::new(v)?,
            source_prompt: source_prompt.into(),
            class_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.vector.dim()
    }
}

/// What an embedder sees of a prompt.
#[derive(Debug, Clone, Copy)]
pub struct PromptRef<'a> {
    pub text: &'a str,
    pub class_id: usize,
    pub mode_tag: Option<&'a str>,
}

impl<'a> PromptRef<'a> {
    pub fn bare(text: &'a str, class_id: usize) -> Self {
        PromptRef {
            text,
            class_id,
            mode_tag: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Stub,
    File,
    /// Stub aligned with a synthetic world's mode centroids.
    World,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub path: Option<PathBuf>,
    pub seed: u64,
    /// Scale of the seeded perturbation added to mode centroids (world kind).
    pub noise: f64,
}

impl EmbedderSpec {
    pub fn stub(dim: usize, seed: u64) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::Stub,
            dim,
            path: None,
            seed,
            noise: 0.0,
        }
    }

    pub fn file(dim: usize, path: impl Into<PathBuf>) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::File,
            dim,
            path: Some(path.into()),
            seed: 0,
            noise: 0.0,
        }
    }

    pub fn world(dim: usize, seed: u64, noise: f64) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::World,
            dim,
            path: None,
            seed,
            noise,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dim == 0 {
            out.push("embedder.dim must be positive".to_string());
        }
        if self.kind == EmbedderKind::File && self.path.is_none() {
            out.push("embedder.kind = \"file\" requires embedder.path".to_string());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            out.push(format!("embedder.noise must be >= 0, got {}", self.noise));
        }
        out
    }
}

/// A text encoder producing unit-norm embeddings.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, prompt: PromptRef<'_>) -> Result<Embedding>;
}

/// Expands `(seed, prompt)` into `dim` values in `[-1, 1)` using SHA-256 in
/// counter mode, four values per block.
pub fn hash_expand(seed: u64, text: &str, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    let mut counter: u32 = 0;
    while out.len() < dim {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(counter.to_le_bytes());
        h.update(text.as_bytes());
        let digest = h.finalize();
        for chunk in digest.chunks_exact(8) {
            if out.len() == dim {
                break;
            }
            let u = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            out.push((u >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0);
        }
        counter += 1;
    }
    out
}

#[derive(Debug, Clone)]
pub struct StubEmbedder {
    dim: usize,
    seed: u64,
}

impl StubEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        StubEmbedder { dim, seed }
    }
}

impl TextEmbedder for StubEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, prompt: PromptRef<'_>) -> Result<Embedding> {
        if prompt.text.is_empty() {
            return Err(Error::invalid("empty prompt"));
        }
        let raw = hash_expand(self.seed, prompt.text, self.dim);
        Embedding::new(&raw, prompt.text, prompt.class_id)
    }
}

/// Looks prompts up by exact text in a loaded embedding file.
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    dim: usize,
    vectors: HashMap<String, Vector>,
}

impl FileEmbedder {
    pub fn from_table(table: &EmbeddingTable) -> Result<Self> {
        let mut vectors = HashMap::with_capacity(table.len());
        for rec in &table.records {
            let v = numerics::normalize(&rec.vector).map_err(|_| {
                Error::invalid(format!("record {:?} has zero norm", rec.key))
            })?;
            vectors.insert(rec.key.clone(), Vector::new(v)?);
        }
        Ok(FileEmbedder {
            dim: table.dim,
            vectors,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(&load_embedding_file(path)?)
    }
}

impl TextEmbedder for FileEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, prompt: PromptRef<'_>) -> Result<Embedding> {
        let v = self
            .vectors
            .get(prompt.text)
            .ok_or_else(|| Error::MissingEmbedding {
                prompt: prompt.text.to_string(),
            })?;
        Ok(Embedding {
            vector: v.clone(),
            source_prompt: prompt.text.to_string(),
            class_id: prompt.class_id,
        })
    }
}

/// Formats a `(class, mode)` annotation understood by [`ModeAwareEmbedder`].
pub fn mode_tag(class_id: usize, mode: usize) -> String {
    format!("{class_id}:{mode}")
}

pub fn parse_mode_tag(tag: &str) -> Option<(usize, usize)> {
    let (c, k) = tag.split_once(':')?;
    Some((c.parse().ok()?, k.parse().ok()?))
}

/// Test embedder whose outputs line up with a [`SyntheticWorld`]'s modes.
///
/// A prompt tagged `(c, k)` embeds to `normalize(μ_{c,k} + ε)`, where `ε` is
/// seeded by the prompt text. An untagged prompt embeds to the normalized
/// mean of its class's centroids, the ambiguous single target.
#[derive(Debug, Clone)]
pub struct ModeAwareEmbedder {
    seed: u64,
    noise: f64,
    centroids: Vec<Vec<Vec<f64>>>,
}

impl ModeAwareEmbedder {
    pub fn new(world: &SyntheticWorld, seed: u64, noise: f64) -> Self {
        ModeAwareEmbedder {
            seed,
            noise,
            centroids: world.centroids.clone(),
        }
    }
}

impl TextEmbedder for ModeAwareEmbedder {
    fn dim(&self) -> usize {
        self.centroids
            .first()
            .and_then(|c| c.first())
            .map_or(0, Vec::len)
    }

    fn embed(&self, prompt: PromptRef<'_>) -> Result<Embedding> {
        let missing = || Error::MissingEmbedding {
            prompt: prompt.text.to_string(),
        };
        match prompt.mode_tag {
            Some(tag) => {
                let (c, k) = parse_mode_tag(tag).ok_or_else(missing)?;
                let mu = self.centroids.get(c).and_then(|m| m.get(k)).ok_or_else(missing)?;
                let mut raw = mu.clone();
                if self.noise > 0.0 {
                    let eps = hash_expand(self.seed, prompt.text, raw.len());
                    numerics::axpy(self.noise, &eps, &mut raw);
                }
                Embedding::new(&raw, prompt.text, prompt.class_id)
            }
            None => {
                let modes = self.centroids.get(prompt.class_id).ok_or_else(missing)?;
                let d = modes[0].len();
                let mut mean = vec![0.0; d];
                for mu in modes {
                    numerics::axpy(1.0 / modes.len() as f64, mu, &mut mean);
                }
                Embedding::new(&mean, prompt.text, prompt.class_id)
            }
        }
    }
}

/// Builds the embedder described by `spec`. The world kind needs `world`.
pub fn build_embedder(
    spec: &EmbedderSpec,
    world: Option<&SyntheticWorld>,
) -> Result<Box<dyn TextEmbedder>> {
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    let emb: Box<dyn TextEmbedder> = match spec.kind {
        EmbedderKind::Stub => Box::new(StubEmbedder::new(spec.dim, spec.seed)),
        EmbedderKind::File => {
            let path = spec.path.as_deref().expect("validated");
            let e = FileEmbedder::load(path)?;
            if e.dim() != spec.dim {
                return Err(Error::Config(format!(
                    "embedding file {} has dim {}, config says {}",
                    path.display(),
                    e.dim(),
                    spec.dim
                )));
            }
            Box::new(e)
        }
        EmbedderKind::World => {
            let world = world.ok_or_else(|| {
                Error::Config("embedder.kind = \"world\" requires a synthetic data source".into())
            })?;
            if world.dim() != spec.dim {
                return Err(Error::Config(format!(
                    "world latent dim {} does not match embedder.dim {}",
                    world.dim(),
                    spec.dim
                )));
            }
            Box::new(ModeAwareEmbedder::new(world, spec.seed, spec.noise))
        }
    };
    Ok(emb)
}

/// Embeds one prompt under `spec` (stub or file kinds).
pub fn embed(spec: &EmbedderSpec, prompt: &str) -> Result<Embedding> {
    if prompt.is_empty() {
        return Err(Error::invalid("empty prompt"));
    }
    build_embedder(spec, None)?.embed(PromptRef::bare(prompt, 0))
}

/// Embeds one annotated prompt against `world`.
pub fn mode_aware_stub_embed(
    spec: &EmbedderSpec,
    prompt: PromptRef<'_>,
    world: &SyntheticWorld,
) -> Result<Embedding> {
    ModeAwareEmbedder::new(world, spec.seed, spec.noise).embed(prompt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub key: String,
    pub class_id: usize,
    pub vector: Vec<f64>,
}

/// Raw (un-normalized) contents of an embedding file, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&EmbeddingRecord> {
        self.records.iter().find(|r| r.key == key)
    }
}

pub fn parse_embedding_text(text: &str, origin: &str) -> Result<EmbeddingTable> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(origin, 1, "missing #dim header"))?;
    let dim: usize = header
        .trim_end()
        .strip_prefix("#dim=")
        .and_then(|d| d.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::parse(origin, 1, format!("bad header {header:?}")))?;

    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(key), Some(class), Some(floats), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::parse(origin, lineno, "expected 3 tab-separated fields"));
        };
        if key.is_empty() {
            return Err(Error::parse(origin, lineno, "empty prompt key"));
        }
        let class_id: usize = class
            .trim()
            .parse()
            .map_err(|_| Error::parse(origin, lineno, format!("bad class id {class:?}")))?;
        let vector = floats
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(origin, lineno, format!("bad float {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.len() != dim {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected {dim} floats, got {}", vector.len()),
            ));
        }
        if let Some(prev) = seen.insert(key.to_string(), lineno) {
            return Err(Error::parse(
                origin,
                lineno,
                format!("duplicate key {key:?} (first seen on line {prev})"),
            ));
        }
        records.push(EmbeddingRecord {
            key: key.to_string(),
            class_id,
            vector,
        });
    }
    Ok(EmbeddingTable { dim, records })
}

pub fn load_embedding_file(path: &Path) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embedding_text(&text, &path.display().to_string())
}

pub fn format_embedding_table(table: &EmbeddingTable) -> Result<String> {
    let mut out = format!("#dim={}\n", table.dim);
    for rec in &table.records {
        if rec.key.is_empty() || rec.key.contains(['\t', '\n', '\r']) {
            return Err(Error::invalid(format!(
                "prompt key {:?} is empty or contains tab/newline",
                rec.key
            )));
        }
        if rec.vector.len() != table.dim {
            return Err(Error::invalid(format!(
                "record {:?} has {} floats, header says {}",
                rec.key,
                rec.vector.len(),
                table.dim
            )));
        }
        write!(out, "{}\t{}\t", rec.key, rec.class_id).expect("string write");
        for (j, v) in rec.vector.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{}", *v as f32).expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_embedding_file(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let text = format_embedding_table(table)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> bool {
        (numerics::norm(v) - 1.0).abs() < 1e-9
    }

    #[test]
    fn stub_is_deterministic_and_unit() {
        let spec = EmbedderSpec::stub(16, 7);
        let a = embed(&spec, "crane").unwrap();
        let b = embed(&spec, "crane").unwrap();
        assert_eq!(a.vector, b.vector);
        assert!(unit(&a.vector));
        let c = embed(&EmbedderSpec::stub(16, 8), "crane").unwrap();
        assert_ne!(a.vector, c.vector);
        assert!(embed(&spec, "").is_err());
    }

    #[test]
    fn hash_expand_handles_partial_blocks() {
        let v = hash_expand(1, "x", 6);
        assert_eq!(v.len(), 6);
        assert_eq!(&hash_expand(1, "x", 4)[..], &v[..4]);
        assert!(v.iter().all(|x| (-1.0..1.0).contains(x)));
    }

    #[test]
    fn file_mode_matches_normalized_row() {
        let text = "#dim=2\ncat\t0\t3 4\ndog\t1\t0 -2\n";
        let table = parse_embedding_text(text, "mem").unwrap();
        let e = FileEmbedder::from_table(&table).unwrap();
        let cat = e.embed(PromptRef::bare("cat", 0)).unwrap();
        assert!((cat.vector[0] - 0.6).abs() < 1e-15 && (cat.vector[1] - 0.8).abs() < 1e-15);
        let dog = e.embed(PromptRef::bare("dog", 1)).unwrap();
        assert_eq!(dog.vector.as_slice(), &[0.0, -1.0]);
        match e.embed(PromptRef::bare("cow", 0)) {
            Err(Error::MissingEmbedding { prompt }) => assert_eq!(prompt, "cow"),
            other => panic!("expected missing embedding, got {other:?}"),
        }
    }

    #[test]
    fn parser_contracts() {
        let t = parse_embedding_text("#dim=4\na\t0\t1 2 3 4\nb\t1\t1e-3 0 0 -2.5E2\n", "m").unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.records.iter().all(|r| r.vector.len() == 4));

        let err = parse_embedding_text("#dim=4\na\t0\t1 2 3 4\nb\t0\t1 2 3\n", "m").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");

        let err = parse_embedding_text("#dim=2\na\t0\t1 2\na\t0\t1 2\n", "m").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");

        let err = parse_embedding_text("#dim=2\na 0 1 2\n", "m").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));

        let err = parse_embedding_text("dim=2\n", "m").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));

        assert!(parse_embedding_text("#dim=3\n", "m").unwrap().is_empty());
    }

    #[test]
    fn writer_rejects_tabs_in_keys() {
        let table = EmbeddingTable {
            dim: 1,
            records: vec![EmbeddingRecord {
                key: "a\tb".into(),
                class_id: 0,
                vector: vec![1.0],
            }],
        };
        assert!(format_embedding_table(&table).is_err());
    }

    #[test]
    fn mode_tags_round_trip() {
        assert_eq!(parse_mode_tag(&mode_tag(3, 1)), Some((3, 1)));
        assert_eq!(parse_mode_tag("nope"), None);
    }
}
