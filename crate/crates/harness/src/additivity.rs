//! Local additivity: minimize on `K1` and `K2`, then check that the product
//! of the minimizers is a critical point of the right kind in `K1 (x) K2`.

use crate::config::ExperimentConfig;
use crate::report::{Cell, Record};
use entroscope_core::entanglement::{curve_entropy, entropy, StateMatrix};
use entroscope_core::matrix::kron;
use entroscope_core::optimizer::{
    classify, gradient, minimize, tangent_frame, Classification, MinimizationResult, MinimizeOptions, OptimizerError,
};
use entroscope_core::par::{map_indices, Execution};
use entroscope_core::random::rng_for_stream;
use entroscope_core::subspace::{random_subspace, split_direction, tensor, Subspace};
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// Gradient bound at the product point.
pub const TENSOR_GRAD_TOL: f64 = 1e-7;
/// Smallest Hessian eigenvalue accepted at the product point.
pub const TENSOR_LAMBDA_MIN: f64 = 1e-9;
/// A soft direction of the product point must be this close to pure
/// `y1 (x) x2` or `x1 (x) y2` form, and `E` along it must split as a sum
/// to the same accuracy.
pub const SOFT_FORM_TOL: f64 = 1e-6;
const SOFT_PROBE_T: f64 = 0.05;
/// Factor by which a failed trial's gradient tolerance is tightened.
pub const RERUN_TIGHTENING: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    VerifiedNondegenerate,
    VerifiedDegenerateDirection,
    /// Both factors degenerate.
    OutsideTheoremScope,
    /// A factor minimization did not end at a minimum.
    Inconclusive,
    /// A guaranteed check failed even after a re-run.
    Violation,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::VerifiedNondegenerate => "verified_nondegenerate",
            Verdict::VerifiedDegenerateDirection => "verified_degenerate_direction",
            Verdict::OutsideTheoremScope => "outside_theorem_scope",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Violation => "violation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditivityRecord {
    pub trial: usize,
    pub seed_k1: u64,
    pub seed_k2: u64,
    pub seed_opt: u64,
    pub value_1: f64,
    pub value_2: f64,
    pub class_1: Classification,
    pub class_2: Classification,
    pub grad_1: f64,
    pub grad_2: f64,
    pub lambda_min_1: Option<f64>,
    pub lambda_min_2: Option<f64>,
    pub tensor_value: f64,
    pub tensor_grad_norm: f64,
    /// `None` when every tangent direction at the product point diverges.
    pub tensor_lambda_min: Option<f64>,
    pub tensor_divergent_directions: usize,
    pub tensor_class: Classification,
    /// Worst deviation of a soft direction from product form.
    pub soft_form_error: Option<f64>,
    pub reruns: usize,
    pub verdict: Verdict,
}

impl Record for AdditivityRecord {
    fn columns() -> &'static [&'static str] {
        &[
            "trial",
            "seed_k1",
            "seed_k2",
            "seed_opt",
            "value_1",
            "value_2",
            "class_1",
            "class_2",
            "grad_1",
            "grad_2",
            "lambda_min_1",
            "lambda_min_2",
            "tensor_value",
            "tensor_grad_norm",
            "tensor_lambda_min",
            "tensor_divergent_directions",
            "tensor_class",
            "soft_form_error",
            "reruns",
            "verdict",
        ]
    }

    fn cells(&self) -> Vec<Cell> {
        vec![
            self.trial.into(),
            self.seed_k1.into(),
            self.seed_k2.into(),
            self.seed_opt.into(),
            self.value_1.into(),
            self.value_2.into(),
            self.class_1.as_str().into(),
            self.class_2.as_str().into(),
            self.grad_1.into(),
            self.grad_2.into(),
            self.lambda_min_1.into(),
            self.lambda_min_2.into(),
            self.tensor_value.into(),
            self.tensor_grad_norm.into(),
            self.tensor_lambda_min.into(),
            self.tensor_divergent_directions.into(),
            self.tensor_class.as_str().into(),
            self.soft_form_error.into(),
            self.reruns.into(),
            self.verdict.as_str().into(),
        ]
    }

    fn nats_fields() -> &'static [&'static str] {
        &["value_1", "value_2", "tensor_value"]
    }
}

/// Measurements at the product point.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductPoint {
    pub value: f64,
    pub grad_norm: f64,
    pub lambda_min: Option<f64>,
    pub divergent_directions: usize,
    pub classification: Classification,
    pub soft_form_error: Option<f64>,
}

fn smallest(values: &[f64]) -> Option<f64> {
    values.iter().copied().reduce(f64::min)
}

pub fn product_point(
    k1: &Subspace,
    k2: &Subspace,
    r1: &MinimizationResult,
    r2: &MinimizationResult,
    tol_grad: f64,
) -> Result<ProductPoint, OptimizerError> {
    let k = tensor(k1, k2);
    let x = StateMatrix::normalized(kron(&r1.x_star, &r2.x_star))?;
    let frame = tangent_frame(&k, &x)?;
    let grad_norm = gradient(&x, &frame).iter().map(|v| v * v).sum::<f64>().sqrt();
    let report = classify(&k, &x, tol_grad.max(TENSOR_GRAD_TOL))?;
    let mut soft_form_error = None;
    if !report.soft_directions.is_empty() {
        let x1 = StateMatrix::new(r1.x_star.clone())?;
        let x2 = StateMatrix::new(r2.x_star.clone())?;
        let mut worst: f64 = 0.0;
        for y in &report.soft_directions {
            let split = split_direction(y, &r1.x_star, &r2.x_star)?;
            let [c1, c2, _] = split.coefficients;
            worst = worst.max(1.0 - c1.max(c2));
            // E along y1 (x) x2 is E along y1 plus E(x2), and symmetrically
            let along = curve_entropy(&x, y, SOFT_PROBE_T)?;
            let expected = if c2 >= c1 {
                curve_entropy(&x1, &split.y1, SOFT_PROBE_T)? + r2.value
            } else {
                r1.value + curve_entropy(&x2, &split.y2, SOFT_PROBE_T)?
            };
            worst = worst.max((along - expected).abs());
        }
        soft_form_error = Some(worst);
    }
    Ok(ProductPoint {
        value: entropy(&x),
        grad_norm,
        lambda_min: smallest(&report.hessian_spectrum),
        divergent_directions: report.divergent_directions,
        classification: report.classification,
        soft_form_error,
    })
}

fn verdict(r1: &MinimizationResult, r2: &MinimizationResult, p: &ProductPoint) -> Verdict {
    let (c1, c2) = (r1.classification, r2.classification);
    let critical = c1.is_critical() && c2.is_critical();
    if critical && p.grad_norm >= TENSOR_GRAD_TOL {
        return Verdict::Violation;
    }
    let minimum = |c: Classification| c.is_nondegenerate() || c == Classification::DegenerateMin;
    if !(minimum(c1) && minimum(c2)) {
        return Verdict::Inconclusive;
    }
    match (c1.is_nondegenerate(), c2.is_nondegenerate()) {
        (true, true) => {
            let lambda_ok = p.lambda_min.is_none_or(|l| l > TENSOR_LAMBDA_MIN);
            if lambda_ok && p.classification.is_nondegenerate() {
                Verdict::VerifiedNondegenerate
            } else {
                Verdict::Violation
            }
        }
        (false, false) => Verdict::OutsideTheoremScope,
        _ => {
            let soft_ok = p.soft_form_error.is_some_and(|e| e < SOFT_FORM_TOL);
            if p.classification == Classification::DegenerateMin && soft_ok {
                Verdict::VerifiedDegenerateDirection
            } else {
                Verdict::Violation
            }
        }
    }
}

/// Seeds for trial `t`: subspace seeds for both factors and the optimizer seed.
pub fn trial_seeds(seed: u64, trial: usize) -> (u64, u64, u64) {
    let mut rng = rng_for_stream(seed, trial as u64);
    (rng.next_u64(), rng.next_u64(), rng.next_u64())
}

/// One trial on given subspaces. A failed check is retried once with a
/// tighter gradient tolerance before it is recorded.
pub fn additivity_trial(
    trial: usize,
    k1: &Subspace,
    k2: &Subspace,
    seeds: (u64, u64, u64),
    opts: &MinimizeOptions,
) -> Result<AdditivityRecord, OptimizerError> {
    let mut opts = *opts;
    let mut reruns = 0;
    loop {
        let r1 = minimize(k1, seeds.2, &opts)?;
        let r2 = minimize(k2, seeds.2 ^ 0x9e37_79b9_7f4a_7c15, &opts)?;
        let p = product_point(k1, k2, &r1, &r2, opts.tol_grad)?;
        let v = verdict(&r1, &r2, &p);
        if v == Verdict::Violation && reruns == 0 {
            reruns += 1;
            opts.tol_grad *= RERUN_TIGHTENING;
            opts.max_iter *= 2;
            continue;
        }
        let lambda = |r: &MinimizationResult| smallest(&r.hessian_spectrum);
        return Ok(AdditivityRecord {
            trial,
            seed_k1: seeds.0,
            seed_k2: seeds.1,
            seed_opt: seeds.2,
            value_1: r1.value,
            value_2: r2.value,
            class_1: r1.classification,
            class_2: r2.classification,
            grad_1: r1.grad_norm,
            grad_2: r2.grad_norm,
            lambda_min_1: lambda(&r1),
            lambda_min_2: lambda(&r2),
            tensor_value: p.value,
            tensor_grad_norm: p.grad_norm,
            tensor_lambda_min: p.lambda_min,
            tensor_divergent_directions: p.divergent_directions,
            tensor_class: p.classification,
            soft_form_error: p.soft_form_error,
            reruns,
            verdict: v,
        });
    }
}

pub fn run_additivity(config: &ExperimentConfig) -> Result<Vec<AdditivityRecord>, OptimizerError> {
    let (n1, m1, n2, m2) = config.dims;
    let (d1, d2) = config.subspace_dims;
    // trials run in parallel; restarts inside a trial stay sequential
    let opts = MinimizeOptions {
        execution: Execution::Sequential,
        ..config.minimize_options()
    };
    map_indices(config.execution, config.trials, |t| {
        let seeds = trial_seeds(config.seed, t);
        let k1 = random_subspace(n1, m1, d1, seeds.0)?;
        let k2 = random_subspace(n2, m2, d2, seeds.1)?;
        additivity_trial(t, &k1, &k2, seeds, &opts)
    })
    .into_iter()
    .collect()
}
