use entroscope_core::optimizer::{MinimizeOptions, DEFAULT_TOL_GRAD};
use entroscope_core::par::Execution;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot parse {what} from {text:?}: expected {expected}")]
    Parse {
        what: &'static str,
        text: String,
        expected: &'static str,
    },
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("subspace dimension {d} is outside 1..={max}")]
    SubspaceDim { d: usize, max: usize },
    #[error("{name} must be positive and finite, got {value}")]
    Tolerance { name: &'static str, value: f64 },
    #[error("{0} requires --input")]
    MissingInput(&'static str),
    #[error("ENTROSCOPE_THREADS must be a positive integer, got {0:?}")]
    Threads(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Validate,
    PhiScan,
    Additivity,
    SingularProbe,
    Channel,
    Minimize,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::PhiScan => "phi-scan",
            Command::Additivity => "additivity",
            Command::SingularProbe => "singular-probe",
            Command::Channel => "channel",
            Command::Minimize => "minimize",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Nats,
    Bits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    /// `(n1, m1, n2, m2)`
    pub dims: (usize, usize, usize, usize),
    pub subspace_dims: (usize, usize),
    pub seed: u64,
    pub restarts: usize,
    pub trials: usize,
    pub max_iter: usize,
    pub tol_grad: f64,
    /// Points per axis of the Phi gap grid.
    pub grid: usize,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub format: Format,
    pub units: Units,
    pub execution: Execution,
    /// Flips the sign of the quadratic expansion term. Only used to check
    /// that validation notices a broken formula.
    pub mutate_quadratic: bool,
}

impl ExperimentConfig {
    pub fn new(command: Command) -> Self {
        let (restarts, trials) = match command {
            Command::Additivity => (10, 20),
            Command::Validate => (1, 100),
            _ => (10, 20),
        };
        ExperimentConfig {
            command,
            dims: (3, 3, 3, 3),
            subspace_dims: (3, 3),
            seed: 0,
            restarts,
            trials,
            max_iter: 5000,
            tol_grad: DEFAULT_TOL_GRAD,
            grid: 200,
            input: None,
            output: None,
            format: Format::Json,
            units: Units::Nats,
            execution: Execution::available(),
            mutate_quadratic: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let (n1, m1, n2, m2) = self.dims;
        if [n1, m1, n2, m2].contains(&0) {
            return Err(ConfigError::Zero("every entry of --dims"));
        }
        let (d1, d2) = self.subspace_dims;
        for (d, max) in [(d1, n1 * m1), (d2, n2 * m2)] {
            if d == 0 || d > max {
                return Err(ConfigError::SubspaceDim { d, max });
            }
        }
        for (name, v) in [
            ("--restarts", self.restarts),
            ("--trials", self.trials),
            ("--max-iter", self.max_iter),
        ] {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        if self.grid < 2 {
            return Err(ConfigError::Zero("--grid / 2"));
        }
        if !(self.tol_grad > 0.0 && self.tol_grad.is_finite()) {
            return Err(ConfigError::Tolerance {
                name: "--tol-grad",
                value: self.tol_grad,
            });
        }
        if self.command == Command::Channel && self.input.is_none() {
            return Err(ConfigError::MissingInput("channel"));
        }
        Ok(())
    }

    pub fn minimize_options(&self) -> MinimizeOptions {
        MinimizeOptions {
            restarts: self.restarts,
            max_iter: self.max_iter,
            tol_grad: self.tol_grad,
            execution: self.execution,
            ..Default::default()
        }
    }
}

fn parse_list(text: &str, what: &'static str, expected: &'static str) -> Result<Vec<usize>, ConfigError> {
    text.split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| ConfigError::Parse {
            what,
            text: text.to_string(),
            expected,
        })
}

/// `n1,m1` or `n1,m1,n2,m2`; the short form repeats the first pair.
pub fn parse_dims(text: &str) -> Result<(usize, usize, usize, usize), ConfigError> {
    const EXPECTED: &str = "n1,m1 or n1,m1,n2,m2";
    match *parse_list(text, "--dims", EXPECTED)?.as_slice() {
        [n, m] => Ok((n, m, n, m)),
        [n1, m1, n2, m2] => Ok((n1, m1, n2, m2)),
        _ => Err(ConfigError::Parse {
            what: "--dims",
            text: text.to_string(),
            expected: EXPECTED,
        }),
    }
}

/// `d1` or `d1,d2`.
pub fn parse_subspace_dims(text: &str) -> Result<(usize, usize), ConfigError> {
    const EXPECTED: &str = "d1 or d1,d2";
    match *parse_list(text, "--subspace-dim", EXPECTED)?.as_slice() {
        [d] => Ok((d, d)),
        [d1, d2] => Ok((d1, d2)),
        _ => Err(ConfigError::Parse {
            what: "--subspace-dim",
            text: text.to_string(),
            expected: EXPECTED,
        }),
    }
}

/// Reads a thread cap; `None` when the variable is unset or empty.
pub fn parse_threads(value: Option<&str>) -> Result<Option<usize>, ConfigError> {
    match value.map(str::trim) {
        None | Some("") => Ok(None),
        Some(text) => match text.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(ConfigError::Threads(text.to_string())),
        },
    }
}
