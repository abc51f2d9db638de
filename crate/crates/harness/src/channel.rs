//! Minimum output entropy of a channel through its subspace.

use crate::config::ExperimentConfig;
use crate::report::{Cell, Record};
use entroscope_core::matrix::{c, CMatrix};
use entroscope_core::optimizer::{minimize, Classification, OptimizerError};
use entroscope_core::subspace::{channel_to_subspace, ChannelIsometry, SubspaceError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
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
pub struct ChannelRecord {
    pub d_in: usize,
    pub d_out: usize,
    pub d_env: usize,
    pub s_min: f64,
    pub grad_norm: f64,
    pub classification: Classification,
    pub restart: usize,
    /// Minimizing input state, as `[re, im]` amplitudes.
    pub input: Vec<[f64; 2]>,
}

impl Record for ChannelRecord {
    fn columns() -> &'static [&'static str] {
        &[
            "d_in",
            "d_out",
            "d_env",
            "s_min",
            "grad_norm",
            "classification",
            "restart",
            "input",
        ]
    }

    fn cells(&self) -> Vec<Cell> {
        let input = self
            .input
            .iter()
            .map(|[re, im]| format!("{re:.16e}{im:+.16e}i"))
            .collect::<Vec<_>>()
            .join(" ");
        vec![
            self.d_in.into(),
            self.d_out.into(),
            self.d_env.into(),
            self.s_min.into(),
            self.grad_norm.into(),
            self.classification.as_str().into(),
            self.restart.into(),
            input.into(),
        ]
    }

    fn nats_fields() -> &'static [&'static str] {
        &["s_min"]
    }
}

pub fn load_channel(path: &Path) -> Result<ChannelIsometry, ChannelError> {
    let text = std::fs::read_to_string(path).map_err(|source| ChannelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ChannelIsometry::from_json(&text).map_err(|source| ChannelError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// Kraus operators `{sqrt(1 - 3q/4) I, sqrt(q/4) X, sqrt(q/4) Y, sqrt(q/4) Z}`.
pub fn depolarizing_kraus(q: f64) -> Vec<CMatrix> {
    let a = (1.0 - 0.75 * q).sqrt();
    let b = (0.25 * q).sqrt();
    let m = |e: [[(f64, f64); 2]; 2]| CMatrix::from_fn(2, 2, |i, j| c(e[i][j].0, e[i][j].1));
    vec![
        m([[(a, 0.0), (0.0, 0.0)], [(0.0, 0.0), (a, 0.0)]]),
        m([[(0.0, 0.0), (b, 0.0)], [(b, 0.0), (0.0, 0.0)]]),
        m([[(0.0, 0.0), (0.0, -b)], [(0.0, b), (0.0, 0.0)]]),
        m([[(b, 0.0), (0.0, 0.0)], [(0.0, 0.0), (-b, 0.0)]]),
    ]
}

/// `S_min` as the minimum entanglement of the channel subspace.
pub fn min_entropy_output(channel: &ChannelIsometry, config: &ExperimentConfig) -> Result<ChannelRecord, ChannelError> {
    let k = channel_to_subspace(channel)?;
    let res = minimize(&k, config.seed, &config.minimize_options())?;
    let psi = channel.input_for(&res.x_star);
    Ok(ChannelRecord {
        d_in: channel.d_in,
        d_out: channel.d_out,
        d_env: channel.d_env,
        s_min: res.value,
        grad_norm: res.grad_norm,
        classification: res.classification,
        restart: res.restart,
        input: psi.iter().map(|z| [z.re, z.im]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Command;
    use entroscope_core::matrix::von_neumann_entropy;

    fn config() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(Command::Channel);
        c.restarts = 3;
        c
    }

    #[test]
    fn identity_channel_has_zero_output_entropy() {
        let ch = ChannelIsometry::from_kraus(vec![CMatrix::identity(3, 3)]).unwrap();
        let r = min_entropy_output(&ch, &config()).unwrap();
        assert!(r.s_min.abs() < 1e-12);
    }

    #[test]
    fn depolarizing_matches_direct_output() {
        let kraus = depolarizing_kraus(0.5);
        let ch = ChannelIsometry::from_kraus(kraus.clone()).unwrap();
        let r = min_entropy_output(&ch, &config()).unwrap();
        let rho = CMatrix::from_fn(2, 2, |i, j| if (i, j) == (0, 0) { c(1.0, 0.0) } else { c(0.0, 0.0) });
        let out = kraus
            .iter()
            .fold(CMatrix::zeros(2, 2), |acc, k| acc + k * &rho * k.adjoint());
        let direct = von_neumann_entropy(&out).unwrap();
        assert!((r.s_min - direct).abs() < 1e-8);
        let norm: f64 = r.input.iter().map(|[a, b]| a * a + b * b).sum();
        assert!((norm - 1.0).abs() < 1e-10);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_channel(Path::new("/no/such/channel.json")).unwrap_err();
        assert!(err.to_string().contains("/no/such/channel.json"));
    }
}
