use serde::Serialize;

use crate::error::{Error, Result};

/// Accuracies measured after one training phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseRow {
    /// `per_task[j]`: accuracy on task `j`'s test classes, for `j <= phase`.
    pub per_task: Vec<f64>,
    /// Accuracy over the test samples of every class seen so far.
    pub overall: f64,
}

/// `rows[p]` holds the evaluation after phase `p`; lower-triangular.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AccuracyMatrix {
    pub rows: Vec<PhaseRow>,
}

impl AccuracyMatrix {
    pub fn push(&mut self, row: PhaseRow) {
        self.rows.push(row);
    }

    pub fn phases(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, phase: usize, task: usize) -> Option<f64> {
        self.rows.get(phase)?.per_task.get(task).copied()
    }

    pub fn validate(&self) -> Result<()> {
        for (p, row) in self.rows.iter().enumerate() {
            if row.per_task.len() != p + 1 {
                return Err(Error::invalid(format!(
                    "phase {p} has {} task entries, expected {}",
                    row.per_task.len(),
                    p + 1
                )));
            }
            let all = row.per_task.iter().chain(std::iter::once(&row.overall));
            if all.into_iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::invalid(format!("phase {p} has accuracy outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    /// Mean over phases of overall seen-class accuracy.
    pub avg: f64,
    /// Overall accuracy after the final phase.
    pub last: f64,
    /// `None` where forgetting is not applicable (single phase, oracle).
    pub forgetting: Option<f64>,
    /// Overall accuracy per phase.
    pub curve: Vec<f64>,
    /// Forgetting measured after each phase; `None` for phase 0.
    pub forgetting_curve: Vec<Option<f64>>,
}

/// Mean over tasks `j < P` of `max_{j <= p <= P} A[p][j] − A[P][j]`.
fn forgetting_at(a: &AccuracyMatrix, last: usize) -> Option<f64> {
    if last == 0 {
        return None;
    }
    let mut total = 0.0;
    for j in 0..last {
        let best = (j..=last)
            .map(|p| a.rows[p].per_task[j])
            .fold(f64::NEG_INFINITY, f64::max);
        total += best - a.rows[last].per_task[j];
    }
    Some(total / last as f64)
}

pub fn compute_metrics(a: &AccuracyMatrix, oracle: bool) -> Result<MetricsReport> {
    if a.rows.is_empty() {
        return Err(Error::invalid("accuracy matrix is empty"));
    }
    a.validate()?;
    let curve: Vec<f64> = a.rows.iter().map(|r| r.overall).collect();
    let avg = curve.iter().sum::<f64>() / curve.len() as f64;
    let last = *curve.last().expect("nonempty");
    let final_phase = a.rows.len() - 1;
    let forgetting = if oracle {
        None
    } else {
        forgetting_at(a, final_phase)
    };
    let forgetting_curve = (0..a.rows.len())
        .map(|p| if oracle { None } else { forgetting_at(a, p) })
        .collect();
    Ok(MetricsReport {
        avg,
        last,
        forgetting,
        curve,
        forgetting_curve,
    })
}
