//! Properties of the class-incremental protocol on small synthetic worlds.

use muprocl_core::agent::{Lexicon, SelectConfig, StubAgent};
use muprocl_core::classifier::{PrototypeBank, ScoringRule};
use muprocl_core::continual::{
    evaluate, extend_head, make_task_sequence, run_protocol, assign_samples, seed_stream,
    train_task, Dataset, Head, HeadKind, LearnerState, Method, MethodMode, RunOutcome,
    Supervision, TrainConfig,
};
use muprocl_core::datagen::{make_world, SyntheticWorld, WorldSpec};
use muprocl_core::embedding::ModeAwareEmbedder;
use muprocl_core::encoder::{EncoderParams, OptimConfig};

fn world(classes: usize, modes: usize, seed: u64) -> SyntheticWorld {
    let spec = WorldSpec {
        train_per_mode: 20,
        test_per_mode: 10,
        ..WorldSpec::uniform(classes, modes, 8, 8)
    };
    make_world(&spec, seed).unwrap()
}

fn small_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        hidden: vec![16],
        ..TrainConfig::default()
    }
}

fn run(
    w: &SyntheticWorld,
    data: &Dataset,
    method: Method,
    b: usize,
    c: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> RunOutcome {
    let agent = StubAgent::with_lexicon(seed, Lexicon::from_world(w));
    let emb = ModeAwareEmbedder::new(w, seed, 0.0);
    let sup = Supervision {
        agent: &agent,
        embedder: &emb,
        select: SelectConfig::default(),
    };
    run_protocol(data, &sup, &MethodMode::new(method), b, c, cfg, seed, None).unwrap()
}

#[test]
fn zero_epochs_leave_state_and_evaluation_unchanged() {
    let w = world(4, 2, 1);
    let data = Dataset::from_world(&w, 1);
    let agent = StubAgent::with_lexicon(1, Lexicon::from_world(&w));
    let emb = ModeAwareEmbedder::new(&w, 1, 0.0);
    let sup = Supervision {
        agent: &agent,
        embedder: &emb,
        select: SelectConfig::default(),
    };
    let mode = MethodMode::new(Method::Muprocl);
    let mut tasks = make_task_sequence(&[0, 1, 2, 3], 2, 2).unwrap();
    assign_samples(&mut tasks, &data.train, &data.test);
    let enc = EncoderParams::init(&[8, 16, 8], &mut seed_stream(1, "encoder_init")).unwrap();
    let bank = PrototypeBank::empty(8, ScoringRule::LogSumExp);
    let mut state = LearnerState::new(enc, Head::Frozen(bank), 20);
    let mut head_rng = seed_stream(1, "head_init");
    extend_head(
        &mut state,
        &tasks[0].class_ids,
        &data.class_names,
        HeadKind::MultiPrototype,
        &sup,
        &mode,
        &mut head_rng,
    )
    .unwrap();

    let before_enc = state.encoder.clone();
    let before = evaluate(&state, &tasks[..1], &data.test).unwrap();
    assert_eq!(before, evaluate(&state, &tasks[..1], &data.test).unwrap());
    let losses = train_task(
        &mut state,
        &tasks[0],
        &data.train,
        &small_cfg(0),
        &mut seed_stream(1, "shuffle"),
    )
    .unwrap();
    assert!(losses.is_empty());
    assert_eq!(state.encoder, before_enc);
    assert_eq!(evaluate(&state, &tasks[..1], &data.test).unwrap(), before);
}

#[test]
fn untrained_encoder_is_at_chance() {
    let seeds = 0..30u64;
    let n = seeds.clone().count() as f64;
    let mut total = 0.0;
    for seed in seeds {
        let w = world(2, 1, seed);
        let data = Dataset::from_world(&w, seed);
        let out = run(&w, &data, Method::Lingocl, 2, 2, &small_cfg(0), seed);
        total += out.metrics.last;
    }
    let mean = total / n;
    assert!((mean - 0.5).abs() <= 0.1, "mean untrained accuracy {mean}");
}

#[test]
fn memorizes_a_single_task_toy() {
    let w = world(3, 2, 4);
    let mut data = Dataset::from_world(&w, 4);
    data.test = data.train.clone();
    let cfg = TrainConfig {
        epochs: 300,
        hidden: vec![32],
        memory_capacity: usize::MAX,
        optim: OptimConfig {
            schedule: vec![],
            ..OptimConfig::default()
        },
        ..TrainConfig::default()
    };
    let out = run(&w, &data, Method::BaselineTrainable, 3, 3, &cfg, 4);
    assert_eq!(out.tasks.len(), 1);
    assert_eq!(out.metrics.last, 1.0);
    assert_eq!(out.metrics.forgetting, None);
}

#[test]
fn separable_two_class_toy_fits_within_200_epochs() {
    let spec = WorldSpec {
        latent_noise: 0.05,
        input_noise: 0.0,
        max_mode_cosine: 0.0,
        ..WorldSpec::uniform(2, 1, 8, 8)
    };
    let w = make_world(&spec, 9).unwrap();
    let mut data = Dataset::from_world(&w, 9);
    data.test = data.train.clone();
    let out = run(&w, &data, Method::Lingocl, 2, 2, &small_cfg(200), 9);
    assert_eq!(out.metrics.last, 1.0);
    let losses = &out.epoch_losses[0];
    assert!(losses.last().unwrap() < losses.first().unwrap());
}

#[test]
fn memory_holds_capped_exemplars_of_finished_tasks() {
    let w = world(6, 2, 2);
    let data = Dataset::from_world(&w, 2);
    let out = run(&w, &data, Method::Muprocl, 2, 2, &small_cfg(3), 2);
    let mem = &out.state.memory;
    for task in &out.tasks {
        for &c in &task.class_ids {
            let ex = mem.exemplars(c);
            assert_eq!(ex.len(), 20, "class {c}");
            assert!(ex.iter().all(|&i| data.train[i].label == c));
            let mut uniq = ex.to_vec();
            uniq.sort_unstable();
            uniq.dedup();
            assert_eq!(uniq.len(), ex.len());
        }
    }
    assert_eq!(mem.len(), 6 * 20);
}

#[test]
fn runs_are_deterministic() {
    let w = world(4, 2, 3);
    let data = Dataset::from_world(&w, 3);
    for method in [Method::BaselineTrainable, Method::Lingocl, Method::Muprocl, Method::Oracle] {
        let a = run(&w, &data, method, 2, 1, &small_cfg(4), 3);
        let b = run(&w, &data, method, 2, 1, &small_cfg(4), 3);
        assert_eq!(a.matrix, b.matrix, "{method}");
        assert_eq!(a.epoch_losses, b.epoch_losses, "{method}");
        assert_eq!(a.state.encoder, b.state.encoder, "{method}");
        assert_eq!(a.prompt_sets, b.prompt_sets, "{method}");
    }
}

#[test]
fn different_seeds_change_the_class_order() {
    let w = world(6, 1, 0);
    let data = Dataset::from_world(&w, 0);
    let orders: Vec<Vec<usize>> = (0..4)
        .map(|s| {
            run(&w, &data, Method::Lingocl, 2, 2, &small_cfg(0), s)
                .tasks
                .iter()
                .flat_map(|t| t.class_ids.clone())
                .collect()
        })
        .collect();
    assert!(orders.iter().any(|o| o != &orders[0]));
}

#[test]
fn baseline_trainable_learns_incrementally() {
    let w = world(4, 2, 5);
    let data = Dataset::from_world(&w, 5);
    let out = run(&w, &data, Method::BaselineTrainable, 2, 1, &small_cfg(20), 5);
    assert_eq!(out.tasks.len(), 3);
    assert_eq!(out.matrix.phases(), 3);
    assert!(out.prompt_sets.is_empty());
    let f = out.metrics.forgetting.expect("three phases");
    assert!((0.0..=1.0).contains(&f));
    assert!(out.matrix.rows[0].overall > 0.5, "{:?}", out.matrix.rows[0]);
}

#[test]
fn oracle_trains_once_without_memory() {
    let w = world(4, 2, 6);
    let data = Dataset::from_world(&w, 6);
    let out = run(&w, &data, Method::Oracle, 2, 2, &small_cfg(5), 6);
    assert_eq!(out.tasks.len(), 1);
    assert_eq!(out.tasks[0].class_ids.len(), 4);
    assert_eq!(out.epoch_losses.len(), 1);
    assert!(out.state.memory.is_empty());
    assert_eq!(out.metrics.forgetting, None);
    assert_eq!(out.metrics.avg, out.metrics.last);
}

#[test]
fn frozen_prototypes_never_move() {
    let w = world(4, 2, 7);
    let data = Dataset::from_world(&w, 7);
    let agent = StubAgent::with_lexicon(7, Lexicon::from_world(&w));
    let emb = ModeAwareEmbedder::new(&w, 7, 0.0);
    let sup = Supervision {
        agent: &agent,
        embedder: &emb,
        select: SelectConfig::default(),
    };
    let mode = MethodMode::new(Method::Muprocl);
    let full = run_protocol(&data, &sup, &mode, 2, 2, &small_cfg(5), 7, None).unwrap();
    let first = run_protocol(&data, &sup, &mode, 4, 4, &small_cfg(0), 7, None).unwrap();
    let (Head::Frozen(a), Head::Frozen(b)) = (&full.state.head, &first.state.head) else {
        panic!("muprocl head is not frozen");
    };
    // Same classes, same prompts, regardless of training and task split.
    let rows = |bank: &PrototypeBank| {
        let mut v: Vec<(String, Vec<u64>)> = bank
            .prompts()
            .iter()
            .zip(bank.rows().iter_rows())
            .map(|(p, r)| (p.clone(), r.iter().map(|x| x.to_bits()).collect()))
            .collect();
        v.sort();
        v
    };
    assert_eq!(rows(a), rows(b));
}
