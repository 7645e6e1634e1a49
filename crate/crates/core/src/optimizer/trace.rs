use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surface::SurfaceState;

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    MaxIterations,
    /// The line search shrank the step below `mu_min` without an acceptable point.
    Stalled,
}

/// One accepted iteration. Iteration 0 is the starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub step: f64,
    pub backtracks: usize,
    /// Updated block for block-wise runs (`theta`, `beta`, `alpha`), `all` otherwise.
    pub block: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub restart: usize,
    pub status: Status,
    pub records: Vec<IterationRecord>,
    pub final_state: SurfaceState,
}

impl RestartTrace {
    pub fn initial_objective(&self) -> f64 {
        self.records.first().map_or(f64::NAN, |r| r.objective)
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.objective)
    }

    /// Number of accepted iterations (excluding the starting point).
    pub fn accepted_iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// First accepted iteration whose objective is within `fraction` of the final one.
    pub fn iterations_to_within(&self, fraction: f64) -> usize {
        let target = self.final_objective() - fraction * self.final_objective().abs();
        self.records
            .iter()
            .find(|r| r.objective >= target)
            .map_or(self.accepted_iterations(), |r| r.iteration)
    }

    pub fn is_monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[1].objective >= w[0].objective)
    }
}

/// Traces of every restart plus the index of the winner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub restarts: Vec<RestartTrace>,
    pub best: usize,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    restart: usize,
    iteration: usize,
    block: String,
    objective: f64,
    step: f64,
    backtracks: usize,
}

impl OptimizationTrace {
    pub fn best_trace(&self) -> &RestartTrace {
        &self.restarts[self.best]
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for t in &self.restarts {
            for r in &t.records {
                w.serialize(CsvRow {
                    restart: t.restart,
                    iteration: r.iteration,
                    block: r.block.clone(),
                    objective: r.objective,
                    step: r.step,
                    backtracks: r.backtracks,
                })
                .map_err(|e| csv_error(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads back `(restart, record)` pairs written by [`Self::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<(usize, IterationRecord)>> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        r.deserialize::<CsvRow>()
            .map(|row| {
                let row = row.map_err(|e| csv_error(path, e))?;
                Ok((
                    row.restart,
                    IterationRecord {
                        iteration: row.iteration,
                        objective: row.objective,
                        step: row.step,
                        backtracks: row.backtracks,
                        block: row.block,
                    },
                ))
            })
            .collect()
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.display().to_string(),
            message: format!("{other:?}"),
        },
    }
}
