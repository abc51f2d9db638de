//! Derivative and expansion checks against finite-difference and
//! closed-form oracles.

use crate::config::ExperimentConfig;
use crate::report::CheckRecord;
use entroscope_core::divided_diff::{expansion_terms, matrix_function, NegEntropy};
use entroscope_core::entanglement::{
    affine_split_check, curve_entropy, d1, d2_nonsingular, entropy, necessary_conditions, via_m_gamma,
    EntanglementError, StateMatrix,
};
use entroscope_core::matrix::{c, frobenius, hs_inner, real_diag, CMatrix};
use entroscope_core::par::map_indices;
use entroscope_core::random::{complex_gaussian_matrix, random_hermitian, rng_for_stream, Rng64};
use rand::Rng;

/// Step sizes whose residual ratios `r(t)/r(t/2)` must show cubic decay.
pub const RATIO_STEPS: [f64; 3] = [1e-2, 5e-3, 2.5e-3];
pub const CUBIC_BAND: (f64, f64) = (6.4, 9.6);
pub const GRADIENT_STEP: f64 = 1e-5;
pub const GRADIENT_TOL: f64 = 1e-6;
pub const HESSIAN_STEP: f64 = 1e-3;
pub const HESSIAN_TOL: f64 = 1e-4;
pub const M_GAMMA_TOL: f64 = 1e-10;
pub const AVERAGING_TOL: f64 = 1e-11;
/// Smallest Schmidt probability accepted in the random derivative sweep.
pub const MIN_PROBABILITY: f64 = 1e-3;

const STREAM_SPECTRA: u64 = 0;
const STREAM_SWEEP: u64 = 1 << 20;

/// Probability vector with every entry in `[0.05, 0.95]`.
fn spectrum(rng: &mut Rng64, n: usize) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        if p.iter().all(|&v| (0.05..=0.95).contains(&v)) {
            return p;
        }
    }
}

fn traceless_direction(rng: &mut Rng64, n: usize) -> CMatrix {
    let mut b = random_hermitian(rng, n);
    let shift = b.trace() / c(n as f64, 0.0);
    for i in 0..n {
        b[(i, i)] -= shift;
    }
    let norm = frobenius(&b);
    b.unscale(norm)
}

fn tangent(rng: &mut Rng64, x: &StateMatrix) -> CMatrix {
    let (n, m) = x.shape();
    let g = complex_gaussian_matrix(rng, n, m);
    let overlap = hs_inner(&g, x.matrix()).expect("same shape");
    let y = g - x.matrix() * overlap;
    let norm = frobenius(&y);
    y.unscale(norm)
}

/// Random instance of the expansion checks: a diagonal density matrix of
/// size `n` and a traceless Hermitian direction.
pub struct ExpansionInstance {
    pub alpha: Vec<f64>,
    pub b: CMatrix,
    /// Unit direction orthogonal to `diag(sqrt(alpha))`.
    pub y: CMatrix,
}

pub fn expansion_instances(seed: u64) -> Vec<ExpansionInstance> {
    (3..=8)
        .map(|n| {
            let mut rng = rng_for_stream(seed, STREAM_SPECTRA + n as u64);
            let alpha = spectrum(&mut rng, n);
            let b = traceless_direction(&mut rng, n);
            let x = state_from_spectrum(&alpha);
            let y = tangent(&mut rng, &x);
            ExpansionInstance { alpha, b, y }
        })
        .collect()
}

fn state_from_spectrum(alpha: &[f64]) -> StateMatrix {
    let n = alpha.len();
    let sq: Vec<f64> = alpha.iter().map(|v| v.sqrt()).collect();
    StateMatrix::normalized(real_diag(n, n, &sq)).expect("positive spectrum")
}

/// `|f(A + tB) - [f(A) + tL + t^2 Q]|_F` for `f = -t log t`.
pub fn expansion_residual(alpha: &[f64], b: &CMatrix, t: f64, flip_quadratic: bool) -> f64 {
    let f = NegEntropy;
    let terms = expansion_terms(&f, alpha, b).expect("positive spectrum");
    let q = if flip_quadratic {
        -terms.quadratic.clone()
    } else {
        terms.quadratic.clone()
    };
    let approx = &terms.zeroth + terms.linear.scale(t) + q.scale(t * t);
    let n = alpha.len();
    let exact = matrix_function(&f, &(real_diag(n, n, alpha) + b.scale(t))).expect("positive definite");
    frobenius(&(exact - approx))
}

/// `|S(rho + t g0 + t^2 g1) - S(rho + t g0) + t^2 Tr[g1 log rho]|`.
pub fn affine_split_residual(x: &StateMatrix, y: &CMatrix, t: f64) -> f64 {
    let (lhs, rhs) = affine_split_check(x, y, t).expect("full-rank state");
    (lhs - rhs).abs()
}

fn ratios(residual: impl Fn(f64) -> f64) -> Vec<f64> {
    RATIO_STEPS.iter().map(|&t| residual(t) / residual(0.5 * t)).collect()
}

/// `r(t)/r(t/2)` of the matrix expansion residual on every instance.
pub fn expansion_ratios(instances: &[ExpansionInstance], flip_quadratic: bool) -> Vec<f64> {
    instances
        .iter()
        .flat_map(|inst| ratios(|t| expansion_residual(&inst.alpha, &inst.b, t, flip_quadratic)))
        .collect()
}

/// `r(t)/r(t/2)` of the affine entropy split on every instance.
pub fn affine_split_ratios(instances: &[ExpansionInstance]) -> Vec<f64> {
    instances
        .iter()
        .flat_map(|inst| {
            let x = state_from_spectrum(&inst.alpha);
            ratios(|t| affine_split_residual(&x, &inst.y, t))
        })
        .collect()
}

/// Relative derivative errors for one random pair. The last two are only
/// measured on square states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCase {
    pub gradient: f64,
    pub hessian: f64,
    pub m_gamma: Option<f64>,
    pub averaging: Option<f64>,
}

/// Shapes cycle through `2..=6` rows and columns.
pub fn sweep_shape(i: usize) -> (usize, usize) {
    let n = 2 + i % 5;
    let m = if i.is_multiple_of(2) { n } else { 2 + (i / 5) % 5 };
    (n, m)
}

pub fn sweep_case(seed: u64, i: usize) -> Result<SweepCase, EntanglementError> {
    let mut rng = rng_for_stream(seed, STREAM_SWEEP + i as u64);
    let (n, m) = sweep_shape(i);
    // resample until comfortably full rank
    let x = loop {
        let x = StateMatrix::normalized(complex_gaussian_matrix(&mut rng, n, m))?;
        if x.probabilities().iter().all(|&p| p > MIN_PROBABILITY) {
            break x;
        }
    };
    let y = tangent(&mut rng, &x);
    let h = GRADIENT_STEP;
    let g = d1(&x, &y)?;
    let fd1 = (curve_entropy(&x, &y, h)? - curve_entropy(&x, &y, -h)?) / (2.0 * h);
    let q = d2_nonsingular(&x, &y)?;
    let h = HESSIAN_STEP;
    let fd2 = (curve_entropy(&x, &y, h)? - 2.0 * entropy(&x) + curve_entropy(&x, &y, -h)?) / (h * h);
    let (m_gamma, averaging) = if n == m {
        let mg = via_m_gamma(&x, &y)?;
        let iy = &y * c(0.0, 1.0);
        let avg = 0.5 * (mg.m + via_m_gamma(&x, &iy)?.m);
        let rhs = necessary_conditions(&x, &y)?.phi_tilde_trace;
        (
            Some((mg.d2 - q).abs() / q.abs().max(1.0)),
            Some((avg - rhs).abs() / rhs.abs().max(1.0)),
        )
    } else {
        (None, None)
    };
    Ok(SweepCase {
        gradient: (g - fd1).abs() / g.abs().max(1.0),
        hessian: (q - fd2).abs() / q.abs().max(1.0),
        m_gamma,
        averaging,
    })
}

pub fn sweep(config: &ExperimentConfig) -> Vec<Result<SweepCase, EntanglementError>> {
    map_indices(config.execution, config.trials, |i| sweep_case(config.seed, i))
}

pub fn run_validation(config: &ExperimentConfig) -> Vec<CheckRecord> {
    let instances = expansion_instances(config.seed);
    let expansion = expansion_ratios(&instances, config.mutate_quadratic);
    let split = affine_split_ratios(&instances);
    let cases = sweep(config);
    let mut gradient = Vec::new();
    let mut hessian = Vec::new();
    let mut m_gamma = Vec::new();
    let mut averaging = Vec::new();
    for case in cases {
        match case {
            Ok(s) => {
                gradient.push(s.gradient);
                hessian.push(s.hessian);
                m_gamma.extend(s.m_gamma);
                averaging.extend(s.averaging);
            }
            Err(_) => {
                gradient.push(f64::NAN);
                hessian.push(f64::NAN);
            }
        }
    }
    let (lo, hi) = CUBIC_BAND;
    vec![
        CheckRecord::from_values("expansion_cubic_ratio", &expansion, Some(lo), Some(hi)),
        CheckRecord::from_values("affine_split_cubic_ratio", &split, Some(lo), Some(hi)),
        CheckRecord::from_values("gradient_fidelity", &gradient, None, Some(GRADIENT_TOL)),
        CheckRecord::from_values("hessian_fidelity", &hessian, None, Some(HESSIAN_TOL)),
        CheckRecord::from_values("m_gamma_agreement", &m_gamma, None, Some(M_GAMMA_TOL)),
        CheckRecord::from_values("averaging_identity", &averaging, None, Some(AVERAGING_TOL)),
    ]
}
