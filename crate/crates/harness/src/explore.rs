//! `minimize`: best-of-restarts on one subspace, with every restart listed.

use crate::config::ExperimentConfig;
use crate::report::{Cell, Record};
use entroscope_core::optimizer::{minimize, Classification, MinimizationResult, OptimizerError};
use entroscope_core::subspace::{random_subspace, Subspace, SubspaceError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Restart values within this of each other count as the same minimum.
pub const SAME_MINIMUM: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: SubspaceError },
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeRecord {
    pub restart: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Index of the distinct local value this restart reached, in order of
    /// first appearance.
    pub minimum_id: usize,
    pub best: bool,
    /// Filled for the best restart only.
    pub classification: Option<Classification>,
    pub lambda_min: Option<f64>,
}

impl Record for MinimizeRecord {
    fn columns() -> &'static [&'static str] {
        &[
            "restart",
            "value",
            "grad_norm",
            "iterations",
            "minimum_id",
            "best",
            "classification",
            "lambda_min",
        ]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![
            self.restart.into(),
            self.value.into(),
            self.grad_norm.into(),
            self.iterations.into(),
            self.minimum_id.into(),
            self.best.into(),
            self.classification.map_or(Cell::Empty, |c| c.as_str().into()),
            self.lambda_min.into(),
        ]
    }

    fn nats_fields() -> &'static [&'static str] {
        &["value"]
    }
}

pub fn load_subspace(path: &Path) -> Result<Subspace, ExploreError> {
    let text = std::fs::read_to_string(path).map_err(|source| ExploreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Subspace::from_json(&text).map_err(|source| ExploreError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn records(res: &MinimizationResult) -> Vec<MinimizeRecord> {
    let mut distinct: Vec<f64> = Vec::new();
    res.local
        .iter()
        .map(|l| {
            let id = match distinct.iter().position(|v| (v - l.value).abs() < SAME_MINIMUM) {
                Some(id) => id,
                None => {
                    distinct.push(l.value);
                    distinct.len() - 1
                }
            };
            let best = l.restart == res.restart;
            MinimizeRecord {
                restart: l.restart,
                value: l.value,
                grad_norm: l.grad_norm,
                iterations: l.iterations,
                minimum_id: id,
                best,
                classification: best.then_some(res.classification),
                lambda_min: if best {
                    res.hessian_spectrum.first().copied()
                } else {
                    None
                },
            }
        })
        .collect()
}

/// Uses `--input` when given, otherwise a random `n1 x m1` subspace of
/// dimension `d1`.
pub fn run_minimize(config: &ExperimentConfig) -> Result<(MinimizationResult, Vec<MinimizeRecord>), ExploreError> {
    let k = match &config.input {
        Some(path) => load_subspace(path)?,
        None => {
            let (n, m, _, _) = config.dims;
            random_subspace(n, m, config.subspace_dims.0, config.seed)?
        }
    };
    let res = minimize(&k, config.seed, &config.minimize_options())?;
    let rows = records(&res);
    Ok((res, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Command;

    #[test]
    fn one_best_row_and_consistent_ids() {
        let mut config = ExperimentConfig::new(Command::Minimize);
        config.restarts = 6;
        let (res, rows) = run_minimize(&config).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows.iter().filter(|r| r.best).count(), 1);
        assert_eq!(rows[0].minimum_id, 0);
        let best = rows.iter().find(|r| r.best).unwrap();
        assert_eq!(best.value, res.value);
        assert_eq!(best.classification, Some(res.classification));
        for a in &rows {
            for b in &rows {
                if a.minimum_id == b.minimum_id {
                    assert!((a.value - b.value).abs() < 2.0 * SAME_MINIMUM);
                }
            }
        }
    }
}
