//! Expands a [`RunConfig`] into independent runs, executes them in parallel
//! and writes the merged results.
//!
//! Output layout under the output directory:
//!
//! - `results.csv`: `run_id,seed,method,B,C,K_max,phase,task,accuracy`, one
//!   row per `(phase, task)` entry of the accuracy matrix plus a `task = all`
//!   row carrying overall seen-class accuracy.
//! - `summary.csv`: `run_id,avg,last,forgetting`; `forgetting` is empty when
//!   not applicable.
//! - `losses.csv`: `run_id,task,epoch,loss`.
//! - `summary.txt`: the same numbers averaged over seeds, as a table.
//! - `runs/<run_id>/`: `metrics.json`, `encoder.ckpt` and, for frozen heads,
//!   `prompt_sets.json` and `bank.tsv`.
//!
//! Files contain no timestamps, so identical configs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::agent::{self, Lexicon, PromptSetFile};
use crate::classifier;
use crate::config::{Ablation, DataSource, RunConfig};
use crate::continual::{
    self, compute_metrics, AccuracyMatrix, Dataset, Head, HeadKind, Method, MethodMode,
    MetricsReport, PhaseRow, RunOutcome, Supervision,
};
use crate::datagen::{self, SyntheticWorld};
use crate::embedding;
use crate::error::{Error, Result};

/// One run of the expanded plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanEntry {
    pub run_id: String,
    pub seed: u64,
    pub mode: MethodMode,
}

impl PlanEntry {
    /// `K_max` column: the selection cap for multi-prototype heads, 1 for the
    /// single-target head, empty for the trainable head.
    pub fn k_max_field(&self, cfg: &RunConfig) -> String {
        match self.mode.head() {
            HeadKind::MultiPrototype => self.mode.k_max.unwrap_or(cfg.agent.k_max).to_string(),
            HeadKind::SingleTarget => "1".into(),
            HeadKind::Trainable => String::new(),
        }
    }
}

/// Expands methods × repeats, and with `sweep` also the `K_max` list and
/// ablation grid (which only apply to multi-prototype heads).
pub fn plan(cfg: &RunConfig, sweep: bool) -> Vec<PlanEntry> {
    let ks: Vec<usize> = if sweep && !cfg.sweep.k_max.is_empty() {
        cfg.sweep.k_max.clone()
    } else {
        vec![cfg.agent.k_max]
    };
    let ablations = if sweep {
        cfg.sweep.ablations.clone()
    } else {
        vec![Ablation::None]
    };
    let mut out = Vec::new();
    for r in 0..cfg.repeats {
        let seed = cfg.seed.wrapping_add(r as u64);
        for &method in &cfg.methods {
            let mut base = MethodMode::new(method);
            base.oracle_head = cfg.oracle_head_kind();
            if base.head() != HeadKind::MultiPrototype {
                out.push(PlanEntry {
                    run_id: format!("{}-s{seed}", base.label()),
                    seed,
                    mode: base,
                });
                continue;
            }
            for &k in &ks {
                for &ab in &ablations {
                    let mut mode = base.clone();
                    (mode.no_disambiguation, mode.no_expansion) = ab.flags();
                    mode.k_max = Some(k);
                    out.push(PlanEntry {
                        run_id: format!("{}-k{k}-s{seed}", mode.label()),
                        seed,
                        mode,
                    });
                }
            }
        }
    }
    out
}

struct Prepared {
    data: Dataset,
    world: Option<SyntheticWorld>,
}

fn read_class_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let names: Vec<String> = text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if names.is_empty() {
        return Err(Error::Config(format!("{} lists no class names", path.display())));
    }
    Ok(names)
}

fn prepare(cfg: &RunConfig, seed: u64) -> Result<Prepared> {
    match cfg.data.source {
        DataSource::Synthetic => {
            let world = datagen::make_world(&cfg.data.world_spec(), seed)?;
            Ok(Prepared {
                data: Dataset::from_world(&world, seed),
                world: Some(world),
            })
        }
        DataSource::Features => {
            let (f, s, n) = (
                cfg.data.features_path.as_deref(),
                cfg.data.split_path.as_deref(),
                cfg.data.class_names_path.as_deref(),
            );
            let (Some(f), Some(s), Some(n)) = (f, s, n) else {
                return Err(Error::Config("feature source paths are missing".into()));
            };
            let features = datagen::load_feature_dataset(f, s, Some(cfg.data.input_dim))?;
            let class_names = read_class_names(n)?;
            if features.num_classes() > class_names.len() {
                return Err(Error::Config(format!(
                    "features use {} classes but {} names only {}",
                    features.num_classes(),
                    n.display(),
                    class_names.len()
                )));
            }
            Ok(Prepared {
                data: Dataset {
                    train: features.train,
                    test: features.test,
                    class_names,
                },
                world: None,
            })
        }
    }
}

/// Runs one plan entry end to end.
pub fn execute(cfg: &RunConfig, entry: &PlanEntry) -> Result<RunOutcome> {
    let prep = prepare(cfg, entry.seed).map_err(|e| e.at_stage("data"))?;
    let extra = prep.world.as_ref().map(Lexicon::from_world);
    let agent = agent::build_agent(&cfg.agent.spec(entry.seed), extra)
        .map_err(|e| e.at_stage("agent setup"))?;
    let embedder = embedding::build_embedder(&cfg.embedder.spec(entry.seed), prep.world.as_ref())
        .map_err(|e| e.at_stage("embedder setup"))?;
    let supervision = Supervision {
        agent: agent.as_ref(),
        embedder: embedder.as_ref(),
        select: cfg.agent.select(),
    };
    continual::run_protocol(
        &prep.data,
        &supervision,
        &entry.mode,
        cfg.b,
        cfg.c,
        &cfg.train_config(),
        entry.seed,
        None,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub avg: f64,
    pub last: f64,
    pub forgetting: Option<f64>,
}

#[derive(Debug)]
pub struct RunReport {
    pub entries: Vec<PlanEntry>,
    pub outcomes: Vec<RunOutcome>,
    pub summary: Vec<SummaryRow>,
    /// Human-readable comparison table, averaged over seeds.
    pub table: String,
}

/// Expands, executes and writes everything under `cfg.out_dir`. Nothing is
/// written unless every run succeeds.
pub fn run(cfg: &RunConfig, sweep: bool, jobs: Option<usize>) -> Result<RunReport> {
    let diags = cfg.validate();
    if !diags.is_empty() {
        return Err(Error::Config(diags.join("; ")));
    }
    let entries = plan(cfg, sweep);
    let work = || -> Result<Vec<RunOutcome>> {
        entries
            .par_iter()
            .map(|e| execute(cfg, e).map_err(|err| Error::Run {
                    run_id: e.run_id.clone(),
                    source: Box::new(err),
                }))
            .collect()
    };
    let outcomes = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let summary: Vec<SummaryRow> = entries
        .iter()
        .zip(&outcomes)
        .map(|(e, o)| SummaryRow {
            run_id: e.run_id.clone(),
            avg: o.metrics.avg,
            last: o.metrics.last,
            forgetting: o.metrics.forgetting,
        })
        .collect();
    let table = comparison_table(cfg, &entries, &outcomes);
    write_outputs(cfg, &entries, &outcomes, &summary, &table).map_err(|e| e.at_stage("output"))?;
    Ok(RunReport {
        entries,
        outcomes,
        summary,
        table,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn results_csv(cfg: &RunConfig, entries: &[PlanEntry], outcomes: &[RunOutcome]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run_id", "seed", "method", "B", "C", "K_max", "phase", "task", "accuracy"])?;
    for (e, o) in entries.iter().zip(outcomes) {
        let (b, c) = if e.mode.is_oracle() {
            let n = o.tasks[0].class_ids.len().to_string();
            (n.clone(), n)
        } else {
            (cfg.b.to_string(), cfg.c.to_string())
        };
        let head = [
            e.run_id.clone(),
            e.seed.to_string(),
            e.mode.label(),
            b,
            c,
            e.k_max_field(cfg),
        ];
        for (p, row) in o.matrix.rows.iter().enumerate() {
            let tasks = row
                .per_task
                .iter()
                .enumerate()
                .map(|(j, a)| (j.to_string(), *a))
                .chain(std::iter::once(("all".to_string(), row.overall)));
            for (task, acc) in tasks {
                let mut rec = head.to_vec();
                rec.extend([p.to_string(), task, acc.to_string()]);
                w.write_record(&rec)?;
            }
        }
    }
    into_string(w)
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run_id", "avg", "last", "forgetting"])?;
    for r in rows {
        w.write_record([
            r.run_id.clone(),
            r.avg.to_string(),
            r.last.to_string(),
            fmt_opt(r.forgetting),
        ])?;
    }
    into_string(w)
}

fn losses_csv(entries: &[PlanEntry], outcomes: &[RunOutcome]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run_id", "task", "epoch", "loss"])?;
    for (e, o) in entries.iter().zip(outcomes) {
        for (t, losses) in o.epoch_losses.iter().enumerate() {
            for (ep, l) in losses.iter().enumerate() {
                w.write_record([e.run_id.clone(), t.to_string(), ep.to_string(), l.to_string()])?;
            }
        }
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {}", e.error())))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(format!("csv buffer: {e}")))
}

/// Rebuilds every run's summary from the detailed results CSV.
pub fn summaries_from_results(csv_text: &str) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let mut order: Vec<String> = Vec::new();
    let mut runs: BTreeMap<String, (bool, BTreeMap<usize, PhaseRow>)> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let bad = |msg: String| Error::parse("results.csv", line, msg);
        let run_id = field(0).to_string();
        let oracle = field(2).starts_with(Method::Oracle.as_str());
        let phase: usize = field(6).parse().map_err(|_| bad(format!("bad phase {:?}", field(6))))?;
        let acc: f64 = field(8).parse().map_err(|_| bad(format!("bad accuracy {:?}", field(8))))?;
        if !runs.contains_key(&run_id) {
            order.push(run_id.clone());
        }
        let (_, phases) = runs.entry(run_id).or_insert((oracle, BTreeMap::new()));
        let row = phases.entry(phase).or_insert(PhaseRow {
            per_task: Vec::new(),
            overall: f64::NAN,
        });
        match field(7) {
            "all" => row.overall = acc,
            t => {
                let j: usize = t.parse().map_err(|_| bad(format!("bad task {t:?}")))?;
                if j != row.per_task.len() {
                    return Err(bad(format!("task {j} out of order")));
                }
                row.per_task.push(acc);
            }
        }
    }
    order
        .into_iter()
        .map(|id| {
            let (oracle, phases) = runs.remove(&id).expect("collected");
            let matrix = AccuracyMatrix {
                rows: phases.into_values().collect(),
            };
            let m: MetricsReport = compute_metrics(&matrix, oracle)?;
            Ok(SummaryRow {
                run_id: id,
                avg: m.avg,
                last: m.last,
                forgetting: m.forgetting,
            })
        })
        .collect()
}

fn comparison_table(cfg: &RunConfig, entries: &[PlanEntry], outcomes: &[RunOutcome]) -> String {
    #[derive(Default)]
    struct Acc {
        n: usize,
        avg: f64,
        last: f64,
        f: Vec<f64>,
    }
    let mut groups: Vec<((String, String), Acc)> = Vec::new();
    for (e, o) in entries.iter().zip(outcomes) {
        let key = (e.mode.label(), e.k_max_field(cfg));
        let idx = match groups.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                groups.push((key, Acc::default()));
                groups.len() - 1
            }
        };
        let g = &mut groups[idx].1;
        g.n += 1;
        g.avg += o.metrics.avg;
        g.last += o.metrics.last;
        g.f.extend(o.metrics.forgetting);
    }
    let width = groups.iter().map(|((l, _), _)| l.len()).max().unwrap_or(6).max(6);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>5}  {:>5}  {:>7}  {:>7}  {:>7}",
        "method", "K_max", "seeds", "Avg", "Last", "F"
    );
    for ((label, k), g) in &groups {
        let n = g.n as f64;
        let f = if g.f.is_empty() {
            "-".to_string()
        } else {
            format!("{:.2}", 100.0 * g.f.iter().sum::<f64>() / g.f.len() as f64)
        };
        let k = if k.is_empty() { "-" } else { k.as_str() };
        let _ = writeln!(
            s,
            "{label:<width$}  {k:>5}  {:>5}  {:>7.2}  {:>7.2}  {f:>7}",
            g.n,
            100.0 * g.avg / n,
            100.0 * g.last / n,
        );
    }
    s
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_outputs(
    cfg: &RunConfig,
    entries: &[PlanEntry],
    outcomes: &[RunOutcome],
    summary: &[SummaryRow],
    table: &str,
) -> Result<()> {
    let out = &cfg.out_dir;
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    write(&out.join("results.csv"), &results_csv(cfg, entries, outcomes)?)?;
    write(&out.join("summary.csv"), &summary_csv(summary)?)?;
    write(&out.join("losses.csv"), &losses_csv(entries, outcomes)?)?;
    write(&out.join("summary.txt"), table)?;
    for (e, o) in entries.iter().zip(outcomes) {
        let dir = runs_dir.join(&e.run_id);
        fs::create_dir_all(&dir).map_err(|err| Error::io(&dir, err))?;
        let metrics = serde_json::json!({
            "run_id": e.run_id,
            "seed": e.seed,
            "mode": e.mode,
            "class_order": o.tasks.iter().map(|t| &t.class_ids).collect::<Vec<_>>(),
            "matrix": o.matrix,
            "metrics": o.metrics,
        });
        write(&dir.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;
        o.state.encoder.save(&dir.join("encoder.ckpt"))?;
        if let Head::Frozen(bank) = &o.state.head {
            classifier::write_bank(&dir.join("bank.tsv"), bank)?;
            let names: BTreeMap<usize, String> = o
                .prompt_sets
                .iter()
                .map(|s| (s.class_id, o.class_names[s.class_id].clone()))
                .collect();
            PromptSetFile::from_sets(&o.prompt_sets, &names).save(&dir.join("prompt_sets.json"))?;
        }
    }
    Ok(())
}
