//! Classifier heads over encoder features `z`.
//!
//! A [`PrototypeBank`] is the frozen, language-derived classifier: every
//! class owns `K_c` unit-norm prototype rows. Under [`ScoringRule::LogSumExp`]
//! the class score is `s_c = log Σ_k exp(scale · ⟨w_c^(k), z⟩)`; under
//! [`ScoringRule::Single`] every class must have exactly one row and
//! `s_c = scale · ⟨w_c, z⟩`. [`TrainableHead`] is the randomly initialized,
//! jointly trained linear head.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::agent::PromptSet;
use crate::embedding::{self, EmbeddingRecord, EmbeddingTable, TextEmbedder};
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};

/// Per-class scores, in the classifier's class order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest score; earliest wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.0.iter().enumerate() {
            if s > self.0[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoringRule {
    LogSumExp,
    Single,
}

/// Common interface of the frozen bank and the trainable head.
pub trait Classifier {
    fn dim(&self) -> usize;
    fn class_ids(&self) -> &[usize];
    fn is_frozen(&self) -> bool;
    fn scores(&self, z: &[f64]) -> Result<ScoreVector>;
    /// Cross-entropy over `scores` plus its gradient with respect to `z`.
    fn loss_and_grad_z(&self, scores: &ScoreVector, label: usize, z: &[f64])
        -> Result<(f64, Vec<f64>)>;

    fn num_classes(&self) -> usize {
        self.class_ids().len()
    }

    /// Position of `class_id` in the score vector.
    fn index_of(&self, class_id: usize) -> Option<usize> {
        self.class_ids().iter().position(|&c| c == class_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    class_ids: Vec<usize>,
    /// `offsets[i]..offsets[i + 1]` are the rows of class `class_ids[i]`.
    offsets: Vec<usize>,
    rows: Matrix,
    prompts: Vec<String>,
    rule: ScoringRule,
    scale: f64,
    frozen: bool,
}

impl PrototypeBank {
    pub fn empty(dim: usize, rule: ScoringRule) -> Self {
        PrototypeBank {
            class_ids: Vec::new(),
            offsets: vec![0],
            rows: Matrix::zeros(0, dim),
            prompts: Vec::new(),
            rule,
            scale: 1.0,
            frozen: true,
        }
    }

    /// Sets the similarity scale (1 leaves inner products unchanged).
    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// Appends one class's prototypes. Existing rows are never touched.
    pub fn push_class(&mut self, class_id: usize, rows: &[(String, Vec<f64>)]) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::invalid(format!("class {class_id} has no prototypes")));
        }
        if self.class_ids.contains(&class_id) {
            return Err(Error::Contract(format!("class {class_id} is already in the bank")));
        }
        if self.rule == ScoringRule::Single && rows.len() != 1 {
            return Err(Error::invalid(format!(
                "single-target bank needs exactly one prototype for class {class_id}, got {}",
                rows.len()
            )));
        }
        for (prompt, v) in rows {
            if v.len() != self.dim() {
                return Err(Error::invalid(format!(
                    "prototype {prompt:?} has dim {}, bank has {}",
                    v.len(),
                    self.dim()
                )));
            }
            if (numerics::norm(v) - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("prototype {prompt:?} is not unit norm")));
            }
        }
        for (prompt, v) in rows {
            self.rows.push_row(v)?;
            self.prompts.push(prompt.clone());
        }
        self.class_ids.push(class_id);
        self.offsets.push(self.rows.rows());
        Ok(())
    }

    /// Embeds and appends every prompt set in order.
    pub fn extend(&mut self, sets: &[PromptSet], embedder: &dyn TextEmbedder) -> Result<()> {
        for set in sets {
            let rows = set
                .prompts
                .iter()
                .map(|p| {
                    embedder
                        .embed(p.as_ref())
                        .map(|e| (p.text.clone(), e.vector.into_inner()))
                })
                .collect::<Result<Vec<_>>>()?;
            self.push_class(set.class_id, &rows)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn rule(&self) -> ScoringRule {
        self.rule
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn total_rows(&self) -> usize {
        self.rows.rows()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets[..self.class_ids.len()]
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    /// `K_c` for each class in bank order.
    pub fn ks(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Rows of the class at bank position `i`.
    pub fn class_rows(&self, i: usize) -> impl Iterator<Item = &[f64]> {
        (self.offsets[i]..self.offsets[i + 1]).map(move |r| self.rows.row(r))
    }

    /// Mutable access to prototype rows; always refused on frozen banks.
    pub fn rows_mut(&mut self) -> Result<&mut Matrix> {
        if self.frozen {
            return Err(Error::Contract("prototype bank is frozen".into()));
        }
        Ok(&mut self.rows)
    }

    /// Same bank with every prototype row repeated twice in place.
    pub fn with_duplicated_prototypes(&self) -> Result<Self> {
        let mut out = PrototypeBank::empty(self.dim(), self.rule).with_scale(self.scale);
        for (i, &c) in self.class_ids.iter().enumerate() {
            let mut rows = Vec::new();
            for r in self.offsets[i]..self.offsets[i + 1] {
                let row = (self.prompts[r].clone(), self.rows.row(r).to_vec());
                rows.push(row.clone());
                rows.push(row);
            }
            out.push_class(c, &rows)?;
        }
        Ok(out)
    }

    /// Per-class similarities `scale · ⟨w_c^(k), z⟩` for class position `i`.
    fn class_sims(&self, i: usize, z: &[f64]) -> Vec<f64> {
        self.class_rows(i)
            .map(|w| self.scale * numerics::dot_unchecked(w, z))
            .collect()
    }

    fn check_z(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::invalid(format!(
                "feature has dim {}, bank has {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn to_table(&self) -> EmbeddingTable {
        let mut records = Vec::with_capacity(self.total_rows());
        for (i, &c) in self.class_ids.iter().enumerate() {
            for r in self.offsets[i]..self.offsets[i + 1] {
                records.push(EmbeddingRecord {
                    key: self.prompts[r].clone(),
                    class_id: c,
                    vector: self.rows.row(r).to_vec(),
                });
            }
        }
        EmbeddingTable {
            dim: self.dim(),
            records,
        }
    }

    /// Rebuilds a bank from an embedding table, grouping consecutive records
    /// by class id. Rows are re-normalized after the 32-bit round trip.
    pub fn from_table(table: &EmbeddingTable, rule: ScoringRule) -> Result<Self> {
        let mut bank = PrototypeBank::empty(table.dim, rule);
        let mut i = 0;
        while i < table.records.len() {
            let c = table.records[i].class_id;
            let mut rows = Vec::new();
            while i < table.records.len() && table.records[i].class_id == c {
                let rec = &table.records[i];
                rows.push((rec.key.clone(), numerics::normalize(&rec.vector)?));
                i += 1;
            }
            bank.push_class(c, &rows)?;
        }
        Ok(bank)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        embedding::write_embedding_file(path, &self.to_table())
    }

    pub fn load(path: &Path, rule: ScoringRule) -> Result<Self> {
        Self::from_table(&embedding::load_embedding_file(path)?, rule)
    }
}

/// Builds a frozen bank from prompt sets.
pub fn build_bank(
    sets: &[PromptSet],
    embedder: &dyn TextEmbedder,
    rule: ScoringRule,
) -> Result<PrototypeBank> {
    let mut bank = PrototypeBank::empty(embedder.dim(), rule);
    bank.extend(sets, embedder)?;
    Ok(bank)
}

/// `s_c = log Σ_k exp(scale · ⟨w_c^(k), z⟩)` for every class.
pub fn score_multi(bank: &PrototypeBank, z: &[f64]) -> Result<ScoreVector> {
    bank.check_z(z)?;
    (0..bank.class_ids.len())
        .map(|i| numerics::log_sum_exp(&bank.class_sims(i, z)))
        .collect::<Result<Vec<_>>>()
        .map(ScoreVector)
}

/// `s_c = scale · ⟨row_c, z⟩` for a matrix of one target row per class.
pub fn score_single(targets: &Matrix, scale: f64, z: &[f64]) -> Result<ScoreVector> {
    if z.len() != targets.cols() {
        return Err(Error::invalid(format!(
            "feature has dim {}, targets have {}",
            z.len(),
            targets.cols()
        )));
    }
    Ok(ScoreVector(
        targets
            .iter_rows()
            .map(|w| scale * numerics::dot_unchecked(w, z))
            .collect(),
    ))
}

/// `(−log softmax(scores)[label], softmax(scores) − onehot(label))`.
pub fn ce_loss_and_residual(scores: &ScoreVector, label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= scores.len() {
        return Err(Error::invalid(format!(
            "label index {label} out of range for {} classes",
            scores.len()
        )));
    }
    let lse = numerics::log_sum_exp(&scores.0)?;
    let mut p = numerics::softmax(&scores.0)?;
    p[label] -= 1.0;
    Ok((lse - scores.0[label], p))
}

/// Loss and `∂L/∂z` through the LSE aggregation:
/// `Σ_c (p_c − 1[c = y]) Σ_k α_{c,k} · scale · w_c^(k)` with `α_{c,·}` the
/// within-class softmax of similarities.
pub fn ce_loss_and_grad_z(
    scores: &ScoreVector,
    label: usize,
    bank: &PrototypeBank,
    z: &[f64],
) -> Result<(f64, Vec<f64>)> {
    bank.check_z(z)?;
    if scores.len() != bank.class_ids.len() {
        return Err(Error::invalid("score vector does not match bank"));
    }
    let (loss, resid) = ce_loss_and_residual(scores, label)?;
    let mut grad = vec![0.0; bank.dim()];
    let mut inner = vec![0.0; bank.dim()];
    for (i, &coef) in resid.iter().enumerate() {
        let alpha = numerics::softmax(&bank.class_sims(i, z))?;
        inner.iter_mut().for_each(|v| *v = 0.0);
        for (w, a) in bank.class_rows(i).zip(&alpha) {
            numerics::axpy(a * bank.scale, w, &mut inner);
        }
        numerics::axpy(coef, &inner, &mut grad);
    }
    Ok((loss, grad))
}

/// Loss and `∂L/∂z` for one target row per class: `Σ_c (p_c − 1[c = y]) · scale · w_c`.
pub fn ce_loss_and_grad_z_single(
    scores: &ScoreVector,
    label: usize,
    targets: &Matrix,
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    if scores.len() != targets.rows() {
        return Err(Error::invalid("score vector does not match targets"));
    }
    let (loss, resid) = ce_loss_and_residual(scores, label)?;
    let mut grad = vec![0.0; targets.cols()];
    let mut scaled = vec![0.0; targets.cols()];
    for (w, &coef) in targets.iter_rows().zip(&resid) {
        for (s, x) in scaled.iter_mut().zip(w) {
            *s = scale * x;
        }
        numerics::axpy(coef, &scaled, &mut grad);
    }
    Ok((loss, grad))
}

/// Loss and `∂L/∂W` of a single-target head: row `c` is `(p_c − 1[c = y]) · scale · z`.
/// Frozen classifiers refuse the request.
pub fn ce_loss_and_grad_w(
    classifier: &dyn Classifier,
    scores: &ScoreVector,
    label: usize,
    z: &[f64],
) -> Result<(f64, Matrix)> {
    if classifier.is_frozen() {
        return Err(Error::Contract(
            "gradient with respect to a frozen classifier was requested".into(),
        ));
    }
    let (loss, resid) = ce_loss_and_residual(scores, label)?;
    let mut g = Matrix::zeros(resid.len(), z.len());
    for (c, &coef) in resid.iter().enumerate() {
        for (gv, zv) in g.row_mut(c).iter_mut().zip(z) {
            *gv = coef * zv;
        }
    }
    Ok((loss, g))
}

impl Classifier for PrototypeBank {
    fn dim(&self) -> usize {
        self.rows.cols()
    }

    fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn scores(&self, z: &[f64]) -> Result<ScoreVector> {
        match self.rule {
            ScoringRule::LogSumExp => score_multi(self, z),
            ScoringRule::Single => score_single(&self.rows, self.scale, z),
        }
    }

    fn loss_and_grad_z(
        &self,
        scores: &ScoreVector,
        label: usize,
        z: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        match self.rule {
            ScoringRule::LogSumExp => ce_loss_and_grad_z(scores, label, self, z),
            ScoringRule::Single => {
                self.check_z(z)?;
                ce_loss_and_grad_z_single(scores, label, &self.rows, self.scale)
            }
        }
    }
}

/// Randomly initialized linear head, trained jointly with the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableHead {
    class_ids: Vec<usize>,
    pub weights: Matrix,
    velocity: Matrix,
}

impl TrainableHead {
    pub fn new(dim: usize) -> Self {
        TrainableHead {
            class_ids: Vec::new(),
            weights: Matrix::zeros(0, dim),
            velocity: Matrix::zeros(0, dim),
        }
    }

    /// Adds one row per new class, drawn from `N(0, I_d)`.
    pub fn widen(&mut self, class_ids: &[usize], rng: &mut impl Rng) -> Result<()> {
        let d = self.weights.cols();
        for &c in class_ids {
            if self.class_ids.contains(&c) {
                return Err(Error::Contract(format!("class {c} already has a head row")));
            }
            let row: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            self.weights.push_row(&row)?;
            self.velocity.push_row(&vec![0.0; d])?;
            self.class_ids.push(c);
        }
        Ok(())
    }

    /// Momentum SGD on the rows for `active` class positions only.
    pub fn sgd_step(&mut self, grad: &Matrix, lr: f64, momentum: f64, active: &[bool]) {
        for r in 0..self.weights.rows() {
            if !active.get(r).copied().unwrap_or(false) {
                continue;
            }
            let v = self.velocity.row_mut(r);
            for (vi, gi) in v.iter_mut().zip(grad.row(r)) {
                *vi = momentum * *vi + gi;
            }
            let v = self.velocity.row(r).to_vec();
            numerics::axpy(-lr, &v, self.weights.row_mut(r));
        }
    }

    pub fn reset_velocity(&mut self) {
        self.velocity.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
    }
}

impl Classifier for TrainableHead {
    fn dim(&self) -> usize {
        self.weights.cols()
    }

    fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    fn is_frozen(&self) -> bool {
        false
    }

    fn scores(&self, z: &[f64]) -> Result<ScoreVector> {
        score_single(&self.weights, 1.0, z)
    }

    fn loss_and_grad_z(
        &self,
        scores: &ScoreVector,
        label: usize,
        z: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        if z.len() != self.dim() {
            return Err(Error::invalid("feature dim does not match head"));
        }
        ce_loss_and_grad_z_single(scores, label, &self.weights, 1.0)
    }
}

/// Writes a bank next to the run's other artifacts.
pub fn save_bank_text(bank: &PrototypeBank) -> Result<String> {
    embedding::format_embedding_table(&bank.to_table())
}

pub fn write_bank(path: &Path, bank: &PrototypeBank) -> Result<()> {
    fs::write(path, save_bank_text(bank)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{PromptCandidate, SelectConfig};
    use crate::embedding::StubEmbedder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(v: &[f64]) -> Vec<f64> {
        numerics::normalize(v).unwrap()
    }

    fn bank_from(classes: &[Vec<Vec<f64>>], rule: ScoringRule) -> PrototypeBank {
        let mut b = PrototypeBank::empty(classes[0][0].len(), rule);
        for (c, rows) in classes.iter().enumerate() {
            let rows: Vec<_> = rows
                .iter()
                .enumerate()
                .map(|(k, r)| (format!("c{c}k{k}"), unit(r)))
                .collect();
            b.push_class(c, &rows).unwrap();
        }
        b
    }

    fn set(class_id: usize, texts: &[&str]) -> PromptSet {
        PromptSet {
            class_id,
            prompts: texts
                .iter()
                .map(|t| PromptCandidate {
                    kind: if *t == texts[0] {
                        crate::agent::CandidateKind::Bare
                    } else {
                        crate::agent::CandidateKind::Expansion
                    },
                    ..PromptCandidate::bare(class_id, t)
                })
                .collect(),
        }
    }

    #[test]
    fn bank_bookkeeping_and_extension() {
        let emb = StubEmbedder::new(6, 3);
        let sets = vec![set(0, &["a"]), set(1, &["b", "b1", "b2"])];
        let mut bank = build_bank(&sets, &emb, ScoringRule::LogSumExp).unwrap();
        assert_eq!(bank.total_rows(), 4);
        assert_eq!(bank.offsets(), &[0, 1]);
        assert_eq!(bank.ks(), vec![1, 3]);
        assert!(bank.is_frozen());

        let before = bank.rows().as_slice().to_vec();
        bank.extend(&[set(2, &["c", "c1"])], &emb).unwrap();
        assert_eq!(&bank.rows().as_slice()[..before.len()], &before[..]);
        assert_eq!(bank.ks(), vec![1, 3, 2]);

        let again = build_bank(&sets, &emb, ScoringRule::LogSumExp).unwrap();
        assert_eq!(again.rows().as_slice(), &before[..]);
        assert!(bank.extend(&[set(0, &["dup"])], &emb).is_err());
    }

    #[test]
    fn frozen_bank_refuses_mutation() {
        let mut bank = bank_from(&[vec![vec![1.0, 0.0]]], ScoringRule::LogSumExp);
        assert!(matches!(bank.rows_mut(), Err(Error::Contract(_))));
        let s = bank.scores(&[1.0, 0.0]).unwrap();
        assert!(matches!(
            ce_loss_and_grad_w(&bank, &s, 0, &[1.0, 0.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn single_prototype_lse_is_the_dot() {
        let w = unit(&[0.3, -0.2, 0.9]);
        let bank = bank_from(&[vec![w.clone()]], ScoringRule::LogSumExp);
        let z = [1.7, -3.1, 0.4];
        let s = score_multi(&bank, &z).unwrap();
        assert_eq!(s.0[0], numerics::dot(&w, &z).unwrap());
    }

    #[test]
    fn two_prototypes_at_half_cosine() {
        let z = [1.0, 0.0, 0.0];
        let a = [0.5, 0.75f64.sqrt(), 0.0];
        let b = [0.5, 0.0, 0.75f64.sqrt()];
        let bank = bank_from(&[vec![a.to_vec(), b.to_vec()]], ScoringRule::LogSumExp);
        let s = score_multi(&bank, &z).unwrap();
        assert!((s.0[0] - (0.5 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn single_scoring_standard_basis() {
        let head = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let z = [0.0, 0.0, 1.0];
        let s = score_single(&head, 1.0, &z).unwrap();
        assert_eq!(s.0, z.to_vec());
        assert_eq!(s.argmax(), 2);
        assert!(score_single(&head, 1.0, &[1.0]).is_err());
    }

    #[test]
    fn single_matches_independent_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let z: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let s = score_single(&m, 1.0, &z).unwrap();
        for (c, row) in rows.iter().enumerate() {
            let mut acc = 0.0;
            for j in 0..5 {
                acc += row[j] * z[j];
            }
            assert!((s.0[c] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_equals_single_when_all_k_one() {
        let classes = vec![vec![vec![1.0, 2.0]], vec![vec![-1.0, 0.5]], vec![vec![0.2, -0.3]]];
        let multi = bank_from(&classes, ScoringRule::LogSumExp);
        let single = bank_from(&classes, ScoringRule::Single);
        let z = [0.7, -1.3];
        let sm = multi.scores(&z).unwrap();
        let ss = single.scores(&z).unwrap();
        assert_eq!(sm, ss);
        for label in 0..3 {
            assert_eq!(
                multi.loss_and_grad_z(&sm, label, &z).unwrap(),
                single.loss_and_grad_z(&ss, label, &z).unwrap()
            );
        }
    }

    #[test]
    fn uniform_scores_give_ln_c() {
        let s = ScoreVector(vec![0.3; 5]);
        let (loss, _) = ce_loss_and_residual(&s, 2).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!(ce_loss_and_residual(&s, 5).is_err());
    }

    #[test]
    fn k_one_gradient_is_linear_head_gradient() {
        let classes = vec![vec![vec![1.0, 0.0, 0.0]], vec![vec![0.0, 1.0, 1.0]]];
        let bank = bank_from(&classes, ScoringRule::LogSumExp);
        let z = [0.5, -0.2, 0.1];
        let s = bank.scores(&z).unwrap();
        let (_, g) = ce_loss_and_grad_z(&s, 1, &bank, &z).unwrap();
        let p = numerics::softmax(&s.0).unwrap();
        let w1 = unit(&[0.0, 1.0, 1.0]);
        for j in 0..3 {
            let want = p[0] * [1.0, 0.0, 0.0][j] + (p[1] - 1.0) * w1[j];
            assert!((g[j] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_w_edge_cases() {
        let mut head = TrainableHead::new(2);
        head.widen(&[0, 1], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (_, g) = ce_loss_and_grad_w(&head, &ScoreVector(vec![0.0, 0.0]), 0, &[0.0, 0.0]).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
        let (_, g) =
            ce_loss_and_grad_w(&head, &ScoreVector(vec![800.0, 0.0]), 0, &[1.0, 2.0]).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn head_updates_only_active_rows() {
        let mut head = TrainableHead::new(2);
        head.widen(&[0, 1], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let before = head.weights.clone();
        let g = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        head.sgd_step(&g, 0.1, 0.9, &[false, true]);
        assert_eq!(head.weights.row(0), before.row(0));
        assert!((head.weights.get(1, 0) - (before.get(1, 0) - 0.1)).abs() < 1e-15);
    }

    #[test]
    fn bank_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.tsv");
        let agent = crate::agent::StubAgent::new(0);
        let emb = StubEmbedder::new(8, 0);
        let classes = vec![(0, "crane".to_string()), (1, "tulip".to_string())];
        let sets =
            crate::agent::build_prompt_sets(&agent, &classes, &emb, &SelectConfig::default())
                .unwrap();
        let bank = build_bank(&sets, &emb, ScoringRule::LogSumExp).unwrap();
        write_bank(&path, &bank).unwrap();
        let back = PrototypeBank::load(&path, ScoringRule::LogSumExp).unwrap();
        assert_eq!(back.ks(), bank.ks());
        assert_eq!(back.class_ids(), bank.class_ids());
        for (a, b) in back.rows().as_slice().iter().zip(bank.rows().as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
