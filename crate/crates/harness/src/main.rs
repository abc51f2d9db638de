use clap::{Parser, Subcommand, ValueEnum};
use entroscope::additivity::{run_additivity, Verdict};
use entroscope::channel::{load_channel, min_entropy_output};
use entroscope::config::{parse_dims, parse_subspace_dims, parse_threads};
use entroscope::explore::run_minimize;
use entroscope::phi_scan::run_phi_scan;
use entroscope::report::{emit_report, Record};
use entroscope::singular::run_singular_probe;
use entroscope::validation::run_validation;
use entroscope::{Command, ConfigError, ExperimentConfig, Format, Units};
use entroscope_core::par::Execution;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "entroscope",
    version,
    about = "Entanglement of bipartite subspaces: checks and local minimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true)]
    restarts: Option<usize>,
    /// `n1,m1` or `n1,m1,n2,m2`
    #[arg(long, global = true)]
    dims: Option<String>,
    /// `d1` or `d1,d2`
    #[arg(long = "subspace-dim", global = true)]
    subspace_dim: Option<String>,
    #[arg(long = "tol-grad", global = true)]
    tol_grad: Option<f64>,
    #[arg(long = "max-iter", global = true)]
    max_iter: Option<usize>,
    /// Trials for `additivity`, random cases for `validate`.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Points per axis for `phi-scan`.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Kraus list for `channel`, subspace basis for `minimize`.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    /// Report entropies in bits instead of nats.
    #[arg(long, global = true)]
    bits: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Sub {
    /// Expansion, derivative and identity checks.
    Validate,
    /// Grid scan of the Phi inequality.
    PhiScan,
    /// Local additivity on random tensor-product subspaces.
    Additivity,
    /// Second derivatives at rank-deficient states.
    SingularProbe,
    /// Minimum output entropy of a channel given as a Kraus list.
    Channel,
    /// Local minimization of the entanglement on one subspace.
    Minimize,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum FormatArg {
    Json,
    Csv,
}

impl Sub {
    fn command(self) -> Command {
        match self {
            Sub::Validate => Command::Validate,
            Sub::PhiScan => Command::PhiScan,
            Sub::Additivity => Command::Additivity,
            Sub::SingularProbe => Command::SingularProbe,
            Sub::Channel => Command::Channel,
            Sub::Minimize => Command::Minimize,
        }
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let mut config = ExperimentConfig::new(cli.command.command());
    config.seed = cli.seed;
    if let Some(d) = &cli.dims {
        config.dims = parse_dims(d)?;
    }
    if let Some(d) = &cli.subspace_dim {
        config.subspace_dims = parse_subspace_dims(d)?;
    }
    if let Some(v) = cli.restarts {
        config.restarts = v;
    }
    if let Some(v) = cli.tol_grad {
        config.tol_grad = v;
    }
    if let Some(v) = cli.max_iter {
        config.max_iter = v;
    }
    if let Some(v) = cli.trials {
        config.trials = v;
    }
    if let Some(v) = cli.grid {
        config.grid = v;
    }
    config.input = cli.input.clone();
    config.output = cli.out.clone();
    config.format = match cli.format {
        FormatArg::Json => Format::Json,
        FormatArg::Csv => Format::Csv,
    };
    config.units = if cli.bits { Units::Bits } else { Units::Nats };

    let threads = parse_threads(std::env::var("ENTROSCOPE_THREADS").ok().as_deref())?;
    config.execution = match threads {
        Some(1) => Execution::Sequential,
        _ => Execution::available(),
    };
    #[cfg(feature = "parallel")]
    if let Some(n) = threads.filter(|&n| n > 1) {
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    config.validate()?;
    Ok(config)
}

/// Writes the report to `--out` or stdout.
fn emit<R: Record>(config: &ExperimentConfig, records: &[R]) -> Result<(), String> {
    let text = emit_report(
        config.command.name(),
        records,
        config.format,
        config.units,
        config.output.as_deref(),
    )
    .map_err(|e| e.to_string())?;
    if config.output.is_none() {
        print!("{text}");
    }
    Ok(())
}

fn unit_label(units: Units) -> &'static str {
    match units {
        Units::Nats => "nats",
        Units::Bits => "bits",
    }
}

fn in_units(v: f64, units: Units) -> f64 {
    match units {
        Units::Nats => v,
        Units::Bits => v / std::f64::consts::LN_2,
    }
}

/// Returns whether every check passed.
fn run(config: &ExperimentConfig) -> Result<bool, String> {
    match config.command {
        Command::Validate => {
            let checks = run_validation(config);
            for c in &checks {
                eprintln!("{}", c.summary_line());
            }
            emit(config, &checks)?;
            Ok(checks.iter().all(|c| c.passed))
        }
        Command::PhiScan => {
            let report = run_phi_scan(config);
            for c in &report.checks {
                eprintln!("{}", c.summary_line());
            }
            eprintln!(
                "min gap {:e} at r={}, s={}",
                report.min_gap, report.argmin.0, report.argmin.1
            );
            emit(config, &report.points)?;
            Ok(report.passed())
        }
        Command::Additivity => {
            let records = run_additivity(config).map_err(|e| e.to_string())?;
            let count = |v: Verdict| records.iter().filter(|r| r.verdict == v).count();
            for v in [
                Verdict::VerifiedNondegenerate,
                Verdict::VerifiedDegenerateDirection,
                Verdict::OutsideTheoremScope,
                Verdict::Inconclusive,
                Verdict::Violation,
            ] {
                eprintln!("{:<32}{}", v.as_str(), count(v));
            }
            emit(config, &records)?;
            Ok(count(Verdict::Violation) == 0)
        }
        Command::SingularProbe => {
            let records = run_singular_probe(config).map_err(|e| e.to_string())?;
            let failed: Vec<&str> = records.iter().filter(|r| !r.passed).map(|r| r.case.as_str()).collect();
            eprintln!("{} of {} cases passed", records.len() - failed.len(), records.len());
            for case in &failed {
                eprintln!("FAIL {case}");
            }
            emit(config, &records)?;
            Ok(failed.is_empty())
        }
        Command::Channel => {
            let path = config.input.as_deref().expect("validated");
            let channel = load_channel(path).map_err(|e| e.to_string())?;
            let record = min_entropy_output(&channel, config).map_err(|e| e.to_string())?;
            eprintln!(
                "S_min = {:.12} {} ({}, grad {:e})",
                in_units(record.s_min, config.units),
                unit_label(config.units),
                record.classification.as_str(),
                record.grad_norm
            );
            let critical = record.classification.is_critical();
            emit(config, &[record])?;
            Ok(critical)
        }
        Command::Minimize => {
            let (res, records) = run_minimize(config).map_err(|e| e.to_string())?;
            let distinct = records.iter().map(|r| r.minimum_id).max().map_or(0, |m| m + 1);
            eprintln!(
                "E = {:.12} {} ({}, restart {}, {} distinct local values)",
                in_units(res.value, config.units),
                unit_label(config.units),
                res.classification.as_str(),
                res.restart,
                distinct
            );
            emit(config, &records)?;
            Ok(res.classification.is_critical())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(&config) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILURE),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
