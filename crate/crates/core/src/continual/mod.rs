//! Class-incremental protocol: task sequence, replay memory, per-task
//! training under each method and evaluation after every phase.

mod memory;
mod metrics;

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{self, PromptAgent, PromptCandidate, PromptSet, SelectConfig};
use crate::classifier::{self, Classifier, PrototypeBank, ScoringRule, TrainableHead};
use crate::datagen::{self, Sample, Split, SyntheticWorld};
use crate::embedding::TextEmbedder;
use crate::encoder::{self, EncoderParams, Gradients, OptimConfig, OptimState};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use memory::{update_memory, MemoryBuffer};
pub use metrics::{compute_metrics, AccuracyMatrix, MetricsReport, PhaseRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BaselineTrainable,
    Lingocl,
    Muprocl,
    Oracle,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::BaselineTrainable => "baseline_trainable",
            Method::Lingocl => "lingocl",
            Method::Muprocl => "muprocl",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "baseline_trainable" => Method::BaselineTrainable,
            "lingocl" => Method::Lingocl,
            "muprocl" => Method::Muprocl,
            "oracle" => Method::Oracle,
            _ => return None,
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How classes are scored during training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Randomly initialized, trained jointly with the encoder.
    Trainable,
    /// Frozen, one bare-name prototype per class.
    SingleTarget,
    /// Frozen, agent-selected prototypes aggregated by LogSumExp.
    MultiPrototype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMode {
    pub method: Method,
    pub no_disambiguation: bool,
    pub no_expansion: bool,
    pub k_max: Option<usize>,
    /// Classifier used by [`Method::Oracle`].
    pub oracle_head: HeadKind,
}

impl MethodMode {
    pub fn new(method: Method) -> Self {
        MethodMode {
            method,
            no_disambiguation: false,
            no_expansion: false,
            k_max: None,
            oracle_head: HeadKind::MultiPrototype,
        }
    }

    pub fn head(&self) -> HeadKind {
        match self.method {
            Method::BaselineTrainable => HeadKind::Trainable,
            Method::Lingocl => HeadKind::SingleTarget,
            Method::Muprocl => HeadKind::MultiPrototype,
            Method::Oracle => self.oracle_head,
        }
    }

    pub fn is_oracle(&self) -> bool {
        self.method == Method::Oracle
    }

    /// Selection config after applying ablation flags and the `K_max` override.
    pub fn select_config(&self, base: &SelectConfig) -> SelectConfig {
        let mut cfg = base.clone();
        if self.no_disambiguation {
            cfg.disambiguation_enabled = false;
        }
        if self.no_expansion {
            cfg.expansion_enabled = false;
        }
        if let Some(k) = self.k_max {
            cfg.k_max = k;
        }
        cfg
    }

    /// Label used in result files, e.g. `muprocl`, `muprocl+no_expansion`.
    pub fn label(&self) -> String {
        let mut s = self.method.as_str().to_string();
        if self.method == Method::Oracle {
            let head = match self.oracle_head {
                HeadKind::Trainable => "baseline_trainable",
                HeadKind::SingleTarget => "lingocl",
                HeadKind::MultiPrototype => "muprocl",
            };
            s.push_str(&format!("({head})"));
        }
        if self.head() == HeadKind::MultiPrototype {
            if self.no_disambiguation {
                s.push_str("+no_disambiguation");
            }
            if self.no_expansion {
                s.push_str("+no_expansion");
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    /// Exemplars kept per class after its task.
    pub memory_capacity: usize,
    pub hidden: Vec<usize>,
    /// Multiplier on prototype inner products; 1 leaves them unchanged.
    pub logit_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            optim: OptimConfig::default(),
            memory_capacity: 20,
            hidden: vec![32],
            logit_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub index: usize,
    pub class_ids: Vec<usize>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl TaskSpec {
    pub fn contains(&self, class_id: usize) -> bool {
        self.class_ids.contains(&class_id)
    }
}

/// Splits `class_order` into a first task of `b` classes and further tasks
/// of `c` classes each.
pub fn make_task_sequence(class_order: &[usize], b: usize, c: usize) -> Result<Vec<TaskSpec>> {
    let n = class_order.len();
    if b == 0 || c == 0 {
        return Err(Error::Config("B and C must be >= 1".into()));
    }
    if b > n || !(n - b).is_multiple_of(c) {
        return Err(Error::Config(format!(
            "{n} classes cannot be split into B={b} initial classes plus tasks of C={c}"
        )));
    }
    let mut tasks = vec![class_order[..b].to_vec()];
    tasks.extend(class_order[b..].chunks(c).map(<[usize]>::to_vec));
    Ok(tasks
        .into_iter()
        .enumerate()
        .map(|(index, class_ids)| TaskSpec {
            index,
            class_ids,
            train_indices: Vec::new(),
            test_indices: Vec::new(),
        })
        .collect())
}

/// Fills each task's sample indices by label.
pub fn assign_samples(tasks: &mut [TaskSpec], train: &[Sample], test: &[Sample]) {
    for t in tasks.iter_mut() {
        t.train_indices = (0..train.len()).filter(|&i| t.contains(train[i].label)).collect();
        t.test_indices = (0..test.len()).filter(|&i| t.contains(test[i].label)).collect();
    }
}

/// Independent, named random streams derived from one run seed.
pub fn seed_stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    ChaCha8Rng::from_seed(d.into())
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub class_names: Vec<String>,
}

impl Dataset {
    /// Train and test splits sampled from `world` under `seed`.
    pub fn from_world(world: &SyntheticWorld, seed: u64) -> Self {
        Dataset {
            train: datagen::sample_dataset(world, Split::Train, seed),
            test: datagen::sample_dataset(world, Split::Test, seed),
            class_names: world.class_names.clone(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn input_dim(&self) -> usize {
        self.train.first().map_or(0, |s| s.x.dim())
    }
}

/// Source of frozen prototypes.
pub struct Supervision<'a> {
    pub agent: &'a dyn PromptAgent,
    pub embedder: &'a dyn TextEmbedder,
    pub select: SelectConfig,
}

#[derive(Debug, Clone)]
pub enum Head {
    Frozen(PrototypeBank),
    Trainable(TrainableHead),
}

impl Head {
    pub fn classifier(&self) -> &dyn Classifier {
        match self {
            Head::Frozen(b) => b,
            Head::Trainable(h) => h,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnerState {
    pub encoder: EncoderParams,
    pub head: Head,
    pub memory: MemoryBuffer,
}

impl LearnerState {
    pub fn new(encoder: EncoderParams, head: Head, memory_capacity: usize) -> Self {
        LearnerState {
            encoder,
            head,
            memory: MemoryBuffer::new(memory_capacity),
        }
    }
}

/// Adds the task's classes to the head. Frozen modes return the prompt sets
/// used for the new prototypes.
pub fn extend_head(
    state: &mut LearnerState,
    class_ids: &[usize],
    class_names: &[String],
    kind: HeadKind,
    supervision: &Supervision<'_>,
    mode: &MethodMode,
    head_rng: &mut impl Rng,
) -> Result<Vec<PromptSet>> {
    let named: Vec<(usize, String)> = class_ids
        .iter()
        .map(|&c| (c, class_names[c].clone()))
        .collect();
    match (&mut state.head, kind) {
        (Head::Trainable(h), HeadKind::Trainable) => {
            h.widen(class_ids, head_rng)?;
            Ok(Vec::new())
        }
        (Head::Frozen(bank), HeadKind::SingleTarget) => {
            let sets: Vec<PromptSet> = named
                .iter()
                .map(|(c, n)| PromptSet {
                    class_id: *c,
                    prompts: vec![PromptCandidate::bare(*c, n)],
                })
                .collect();
            bank.extend(&sets, supervision.embedder)?;
            Ok(sets)
        }
        (Head::Frozen(bank), HeadKind::MultiPrototype) => {
            let cfg = mode.select_config(&supervision.select);
            let sets =
                agent::build_prompt_sets(supervision.agent, &named, supervision.embedder, &cfg)?;
            bank.extend(&sets, supervision.embedder)?;
            Ok(sets)
        }
        _ => Err(Error::Contract("head kind does not match learner state".into())),
    }
}

/// Trains on the task's samples plus replayed exemplars. Returns the mean
/// training loss of every epoch.
pub fn train_task(
    state: &mut LearnerState,
    task: &TaskSpec,
    train: &[Sample],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut pool: Vec<usize> = task.train_indices.clone();
    pool.extend(
        state
            .memory
            .all()
            .into_iter()
            .filter(|&i| !task.contains(train[i].label)),
    );
    if pool.is_empty() || cfg.epochs == 0 {
        return Ok(Vec::new());
    }

    let cls_ids = state.head.classifier().class_ids().to_vec();
    let label_index = |label: usize| {
        cls_ids
            .iter()
            .position(|&c| c == label)
            .ok_or_else(|| Error::Contract(format!("class {label} is not in the classifier")))
    };
    let active: Vec<bool> = cls_ids.iter().map(|&c| task.contains(c)).collect();

    let mut opt = OptimState::new(cfg.optim.clone(), &state.encoder);
    if let Head::Trainable(h) = &mut state.head {
        h.reset_velocity();
    }
    let batch = cfg.batch_size.max(1);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        pool.shuffle(rng);
        let mut epoch_loss = 0.0;
        for chunk in pool.chunks(batch) {
            let mut grads = Gradients::zeros_like(&state.encoder);
            let trainable = matches!(state.head, Head::Trainable(_));
            let mut grad_w = trainable.then(|| Matrix::zeros(cls_ids.len(), state.encoder.output_dim()));
            {
                let cls = state.head.classifier();
                for &i in chunk {
                    let s = &train[i];
                    let y = label_index(s.label)?;
                    let (z, cache) = state.encoder.forward(&s.x)?;
                    let scores = cls.scores(&z)?;
                    let (loss, gz) = cls.loss_and_grad_z(&scores, y, &z)?;
                    grads.accumulate(&state.encoder.backward(&cache, &gz)?);
                    if let Some(gw) = grad_w.as_mut() {
                        let (_, g) = classifier::ce_loss_and_grad_w(cls, &scores, y, &z)?;
                        crate::numerics::axpy(1.0, g.as_slice(), gw.as_mut_slice());
                    }
                    epoch_loss += loss;
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            grads.scale(inv);
            encoder::sgd_step(&mut state.encoder, &grads, &mut opt, epoch);
            if let (Head::Trainable(h), Some(mut gw)) = (&mut state.head, grad_w) {
                gw.as_mut_slice().iter_mut().for_each(|v| *v *= inv);
                h.sgd_step(&gw, opt.lr_at(epoch), cfg.optim.momentum, &active);
            }
        }
        losses.push(epoch_loss / pool.len() as f64);
    }
    Ok(losses)
}

/// Accuracy of argmax over all classes in the head, per seen task and overall.
pub fn evaluate(state: &LearnerState, tasks_seen: &[TaskSpec], test: &[Sample]) -> Result<PhaseRow> {
    let cls = state.head.classifier();
    let ids = cls.class_ids();
    let mut correct = vec![false; test.len()];
    for t in tasks_seen {
        for &i in &t.test_indices {
            let z = state.encoder.encode(&test[i].x)?;
            let pred = ids[cls.scores(&z)?.argmax()];
            correct[i] = pred == test[i].label;
        }
    }
    let acc = |idx: &mut dyn Iterator<Item = &usize>| {
        let (mut hit, mut n) = (0usize, 0usize);
        for &i in idx {
            n += 1;
            hit += correct[i] as usize;
        }
        if n == 0 {
            0.0
        } else {
            hit as f64 / n as f64
        }
    };
    let per_task = tasks_seen
        .iter()
        .map(|t| acc(&mut t.test_indices.iter()))
        .collect();
    let overall = acc(&mut tasks_seen.iter().flat_map(|t| t.test_indices.iter()));
    Ok(PhaseRow { per_task, overall })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub mode: MethodMode,
    pub tasks: Vec<TaskSpec>,
    pub matrix: AccuracyMatrix,
    pub metrics: MetricsReport,
    /// `epoch_losses[t][e]`: mean training loss of epoch `e` in task `t`.
    pub epoch_losses: Vec<Vec<f64>>,
    pub prompt_sets: Vec<PromptSet>,
    pub class_names: Vec<String>,
    pub state: LearnerState,
}

/// Per-task epoch overrides, for protocol experiments; `None` uses `cfg.epochs`.
pub type EpochPlan<'a> = Option<&'a [usize]>;

#[allow(clippy::too_many_arguments)]
pub fn run_protocol(
    data: &Dataset,
    supervision: &Supervision<'_>,
    mode: &MethodMode,
    b: usize,
    c: usize,
    cfg: &TrainConfig,
    seed: u64,
    epoch_plan: EpochPlan<'_>,
) -> Result<RunOutcome> {
    let n = data.num_classes();
    if data.train.iter().chain(&data.test).any(|s| s.label >= n) {
        return Err(Error::invalid("sample label outside the class list"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed_stream(seed, "class_order"));
    let mut tasks = if mode.is_oracle() {
        make_task_sequence(&order, n, n.max(1))?
    } else {
        make_task_sequence(&order, b, c)?
    };
    assign_samples(&mut tasks, &data.train, &data.test);

    let d = supervision.embedder.dim();
    let mut sizes = vec![data.input_dim()];
    sizes.extend(&cfg.hidden);
    sizes.push(d);
    let encoder = EncoderParams::init(&sizes, &mut seed_stream(seed, "encoder_init"))?;
    let kind = mode.head();
    let head = match kind {
        HeadKind::Trainable => Head::Trainable(TrainableHead::new(d)),
        HeadKind::SingleTarget => {
            Head::Frozen(PrototypeBank::empty(d, ScoringRule::Single).with_scale(cfg.logit_scale))
        }
        HeadKind::MultiPrototype => Head::Frozen(
            PrototypeBank::empty(d, ScoringRule::LogSumExp).with_scale(cfg.logit_scale),
        ),
    };
    let mut state = LearnerState::new(encoder, head, cfg.memory_capacity);
    let mut head_rng = seed_stream(seed, "head_init");
    let mut shuffle_rng = seed_stream(seed, "shuffle");
    let mut memory_rng = seed_stream(seed, "memory");

    let mut matrix = AccuracyMatrix::default();
    let mut epoch_losses = Vec::new();
    let mut prompt_sets = Vec::new();
    for t in 0..tasks.len() {
        let sets = extend_head(
            &mut state,
            &tasks[t].class_ids,
            &data.class_names,
            kind,
            supervision,
            mode,
            &mut head_rng,
        )
        .map_err(|e| e.at_stage("prompt generation"))?;
        prompt_sets.extend(sets);

        let mut task_cfg = cfg.clone();
        if let Some(plan) = epoch_plan {
            task_cfg.epochs = plan.get(t).copied().unwrap_or(cfg.epochs);
        }
        let losses = train_task(&mut state, &tasks[t], &data.train, &task_cfg, &mut shuffle_rng)
            .map_err(|e| e.at_stage("training"))?;
        epoch_losses.push(losses);
        matrix.push(evaluate(&state, &tasks[..=t], &data.test)?);

        if !mode.is_oracle() {
            let task_samples: Vec<(usize, usize)> = tasks[t]
                .train_indices
                .iter()
                .map(|&i| (i, data.train[i].label))
                .collect();
            update_memory(&mut state.memory, &task_samples, &mut memory_rng);
        }
    }
    let metrics = compute_metrics(&matrix, mode.is_oracle())?;
    Ok(RunOutcome {
        mode: mode.clone(),
        tasks,
        matrix,
        metrics,
        epoch_losses,
        prompt_sets,
        class_names: data.class_names.clone(),
        state,
    })
}
