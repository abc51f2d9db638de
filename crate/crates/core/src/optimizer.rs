//! Local minimization of `E` over the unit sphere of a subspace, and
//! classification of the critical points found.
//!
//! Points are kept as coordinates `c` in the orthonormal basis of `K`. A
//! restart draws a Haar-random `c`, runs projected gradient descent with the
//! retraction `c -> (c - eta g)/|c - eta g|` and Armijo backtracking, and
//! finishes with Newton steps on the real tangent frame once the Hessian is
//! positive definite.

use crate::entanglement::{self, EntanglementError, QuadraticForm, StateMatrix};
use crate::matrix::{self, c, CMatrix, C64};
use crate::par::{self, Execution};
use crate::random::{rng_for_stream, unit_vector};
use crate::subspace::{self, Subspace, SubspaceError};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hessian eigenvalues within this of zero count as degenerate.
pub const TAU_DEGENERATE: f64 = 1e-6;

pub const DEFAULT_TOL_GRAD: f64 = 1e-9;

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-18;
const MAX_STEP: f64 = 1e4;
/// Real frame directions whose kernel-block image is below this are finite.
const NULL_TOL: f64 = 1e-8;
/// Newton is attempted once the gradient is this small.
const NEWTON_GRAD: f64 = 1e-3;
const CURVE_SAMPLES: [f64; 4] = [1e-3, 3e-3, 1e-2, 3e-2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Entanglement(#[from] EntanglementError),
    #[error("subspace is empty")]
    EmptySubspace,
}

pub type Result<T> = std::result::Result<T, OptimizerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    NondegenerateMin,
    DegenerateMin,
    SaddleOrMax,
    /// Rank-deficient minimum: some directions have `D2 = +inf` and the
    /// rest have positive second derivative.
    DivergentBoundary,
    /// Gradient norm above tolerance.
    NotCritical,
}

impl Classification {
    /// Non-degenerate in the sense that every direction has `D2 > 0`,
    /// counting `+inf` as positive.
    pub fn is_nondegenerate(self) -> bool {
        matches!(
            self,
            Classification::NondegenerateMin | Classification::DivergentBoundary
        )
    }

    pub fn is_critical(self) -> bool {
        !matches!(self, Classification::NotCritical)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Classification::NondegenerateMin => "nondegenerate_min",
            Classification::DegenerateMin => "degenerate_min",
            Classification::SaddleOrMax => "saddle_or_max",
            Classification::DivergentBoundary => "divergent_boundary",
            Classification::NotCritical => "not_critical",
        }
    }
}

/// Real orthonormal tangent directions at `x`: `(y_a, i y_a)` for an
/// orthonormal basis `y_a` of `x^perp` in `K`.
#[derive(Debug, Clone)]
pub struct TangentFrame {
    /// Coordinates of each direction in the basis of `K`.
    pub coefficients: Vec<DVector<C64>>,
    pub directions: Vec<CMatrix>,
}

impl TangentFrame {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// `sum_a v_a direction_a` in coordinates.
    pub fn combine_coefficients(&self, v: &[f64]) -> DVector<C64> {
        let d = self.coefficients.first().map(|c| c.len()).unwrap_or(0);
        let mut out = DVector::zeros(d);
        for (cf, &va) in self.coefficients.iter().zip(v) {
            out += cf * c(va, 0.0);
        }
        out
    }

    pub fn combine(&self, v: &[f64]) -> Option<CMatrix> {
        let first = self.directions.first()?;
        let mut out = CMatrix::zeros(first.nrows(), first.ncols());
        for (dir, &va) in self.directions.iter().zip(v) {
            out += dir.scale(va);
        }
        Some(out)
    }
}

pub fn tangent_frame(k: &Subspace, x: &StateMatrix) -> Result<TangentFrame> {
    let complex = subspace::complement_coefficients(k, x.matrix())?;
    let mut coefficients = Vec::with_capacity(2 * complex.len());
    for v in complex {
        let iv = &v * c(0.0, 1.0);
        coefficients.push(v);
        coefficients.push(iv);
    }
    let directions = coefficients.iter().map(|cf| k.element(cf)).collect();
    Ok(TangentFrame {
        coefficients,
        directions,
    })
}

/// First derivatives along each frame direction.
pub fn gradient(x: &StateMatrix, frame: &TangentFrame) -> Vec<f64> {
    let g = entanglement::gradient_matrix(x);
    frame.directions.iter().map(|y| matrix::inner(y, &g).re).collect()
}

/// Hessian on the tangent frame.
#[derive(Debug, Clone)]
pub enum Hessian {
    Finite(DMatrix<f64>),
    /// Some directions have `D2 = +inf`. `finite_basis` holds (as columns,
    /// in frame coordinates) an orthonormal basis of the directions with
    /// finite second derivative, and `restricted` the Hessian on them.
    Divergent {
        finite_basis: DMatrix<f64>,
        restricted: DMatrix<f64>,
    },
}

fn polar_matrix(form: &QuadraticForm<'_>, rotated: &[CMatrix]) -> DMatrix<f64> {
    let n = rotated.len();
    let mut h = DMatrix::zeros(n, n);
    for a in 0..n {
        h[(a, a)] = form.finite(&rotated[a]);
        for b in a + 1..n {
            let v = form.polar(&rotated[a], &rotated[b]);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    h
}

/// Orthonormal basis (columns) of the real directions with zero
/// kernel-kernel block.
fn finite_directions(form: &QuadraticForm<'_>, rotated: &[CMatrix]) -> DMatrix<f64> {
    let dim = rotated.len();
    let blocks: Vec<Vec<C64>> = rotated.iter().map(|yt| form.kernel_block(yt)).collect();
    let rows = blocks.first().map(|b| b.len()).unwrap_or(0);
    let mut a = DMatrix::<f64>::zeros(2 * rows, dim);
    for (j, b) in blocks.iter().enumerate() {
        for (i, z) in b.iter().enumerate() {
            a[(2 * i, j)] = z.re;
            a[(2 * i + 1, j)] = z.im;
        }
    }
    let gram = a.transpose() * &a;
    let eig = SymmetricEigen::new(gram);
    let cols: Vec<DVector<f64>> = (0..dim)
        .filter(|&j| eig.eigenvalues[j].max(0.0).sqrt() < NULL_TOL)
        .map(|j| eig.eigenvectors.column(j).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(dim, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

pub fn hessian(x: &StateMatrix, frame: &TangentFrame) -> Hessian {
    let form = QuadraticForm::new(x);
    let rotated: Vec<CMatrix> = frame.directions.iter().map(|y| form.rotate(y)).collect();
    let full = polar_matrix(&form, &rotated);
    if !x.is_singular() {
        return Hessian::Finite(full);
    }
    let basis = finite_directions(&form, &rotated);
    if basis.ncols() == frame.len() {
        return Hessian::Finite(full);
    }
    let restricted = basis.transpose() * &full * &basis;
    Hessian::Divergent {
        finite_basis: basis,
        restricted,
    }
}

/// Eigenvalues ascending with matching eigenvectors (as columns).
fn sorted_eigen(h: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = h.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classification: Classification,
    pub grad_norm: f64,
    /// Ascending spectrum of the Hessian, restricted to the finite
    /// directions when some directions diverge.
    pub hessian_spectrum: Vec<f64>,
    /// Number of real tangent directions with `D2 = +inf` behaviour.
    pub divergent_directions: usize,
    /// Unit soft directions (as matrices) for degenerate minima.
    #[serde(skip)]
    pub soft_directions: Vec<CMatrix>,
}

/// Whether `E` along each unit direction stays at or above `E(x)` on the
/// sample grid.
fn curve_confirms_minimum(x: &StateMatrix, directions: &[CMatrix]) -> Result<bool> {
    let e0 = entanglement::entropy(x);
    for y in directions {
        for &t in &CURVE_SAMPLES {
            for s in [t, -t] {
                if entanglement::curve_entropy(x, y, s)? < e0 - 1e-12 {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

fn unit_matrix(m: CMatrix) -> CMatrix {
    let n = matrix::frobenius(&m);
    if n > 0.0 {
        m.unscale(n)
    } else {
        m
    }
}

/// Classifies `x` as a critical point of `E` on the unit sphere of `K`.
pub fn classify(k: &Subspace, x: &StateMatrix, tol_grad: f64) -> Result<ClassificationReport> {
    let frame = tangent_frame(k, x)?;
    let g = gradient(x, &frame);
    let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let hess = hessian(x, &frame);
    let (spectrum, vectors, basis, divergent) = match &hess {
        Hessian::Finite(h) => {
            let (s, v) = sorted_eigen(h);
            (s, v, None, 0)
        }
        Hessian::Divergent {
            finite_basis,
            restricted,
        } => {
            let (s, v) = sorted_eigen(restricted);
            (s, v, Some(finite_basis), frame.len() - finite_basis.ncols())
        }
    };
    let mut report = ClassificationReport {
        classification: Classification::NotCritical,
        grad_norm,
        hessian_spectrum: spectrum.clone(),
        divergent_directions: divergent,
        soft_directions: Vec::new(),
    };
    if grad_norm >= tol_grad {
        return Ok(report);
    }
    let positive = if divergent > 0 {
        Classification::DivergentBoundary
    } else {
        Classification::NondegenerateMin
    };
    let lambda_min = spectrum.first().copied().unwrap_or(f64::INFINITY);
    report.classification = if lambda_min > TAU_DEGENERATE {
        positive
    } else if lambda_min < -TAU_DEGENERATE {
        Classification::SaddleOrMax
    } else {
        let soft: Vec<CMatrix> = spectrum
            .iter()
            .enumerate()
            .filter(|(_, &l)| l.abs() <= TAU_DEGENERATE)
            .filter_map(|(j, _)| {
                let v = vectors.column(j).into_owned();
                let in_frame = match basis {
                    Some(b) => b * v,
                    None => v,
                };
                frame.combine(in_frame.as_slice()).map(unit_matrix)
            })
            .collect();
        let confirmed = curve_confirms_minimum(x, &soft)?;
        report.soft_directions = soft;
        if confirmed {
            Classification::DegenerateMin
        } else {
            Classification::SaddleOrMax
        }
    };
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol_grad: f64,
    pub newton: bool,
    pub record_history: bool,
    pub execution: Execution,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            restarts: 10,
            max_iter: 5000,
            tol_grad: DEFAULT_TOL_GRAD,
            newton: true,
            record_history: false,
            execution: Execution::available(),
        }
    }
}

/// Outcome of a single restart.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub restart: usize,
    pub coefficients: DVector<C64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Entropy after each accepted gradient step, when requested.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MinimizationResult {
    pub x_star: CMatrix,
    pub coefficients: DVector<C64>,
    pub value: f64,
    pub grad_norm: f64,
    pub hessian_spectrum: Vec<f64>,
    pub divergent_directions: usize,
    pub classification: Classification,
    pub soft_directions: Vec<CMatrix>,
    pub iterations: usize,
    pub seed: u64,
    /// Index of the restart that produced the best value.
    pub restart: usize,
    /// Every restart, in index order.
    pub local: Vec<LocalResult>,
}

fn state_of(k: &Subspace, coeffs: &DVector<C64>) -> Result<StateMatrix> {
    Ok(StateMatrix::normalized(k.element(coeffs))?)
}

fn normalize(v: DVector<C64>) -> DVector<C64> {
    let n = v.norm();
    v.unscale(n)
}

/// Euclidean gradient in coordinates and its tangent projection.
fn projected_gradient(k: &Subspace, x: &StateMatrix, coeffs: &DVector<C64>) -> DVector<C64> {
    let g = entanglement::gradient_matrix(x);
    let full = DVector::from_iterator(k.dim(), k.basis().iter().map(|b| matrix::inner(&g, b)));
    let along = coeffs.dotc(&full);
    full - coeffs * along
}

/// One Newton step on the real tangent frame, if the Hessian is positive
/// definite there.
fn newton_step(k: &Subspace, x: &StateMatrix, coeffs: &DVector<C64>) -> Result<Option<DVector<C64>>> {
    let frame = tangent_frame(k, x)?;
    if frame.is_empty() {
        return Ok(None);
    }
    let g = DVector::from_vec(gradient(x, &frame));
    let step = match hessian(x, &frame) {
        Hessian::Finite(h) => match h.cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => return Ok(None),
        },
        Hessian::Divergent {
            finite_basis,
            restricted,
        } => {
            if restricted.nrows() == 0 {
                return Ok(None);
            }
            let gf = finite_basis.transpose() * &g;
            match restricted.cholesky() {
                Some(ch) => &finite_basis * ch.solve(&(-gf)),
                None => return Ok(None),
            }
        }
    };
    let delta = frame.combine_coefficients(step.as_slice());
    Ok(Some(normalize(coeffs + delta)))
}

/// Runs descent from the given coordinates.
pub fn descend(k: &Subspace, start: DVector<C64>, restart: usize, opts: &MinimizeOptions) -> Result<LocalResult> {
    let mut coeffs = normalize(start);
    let mut x = state_of(k, &coeffs)?;
    let mut value = entanglement::entropy(&x);
    let mut grad = projected_gradient(k, &x, &coeffs);
    let mut grad_norm = grad.norm();
    let mut eta: f64 = 1.0;
    let mut iterations = 0;
    let mut history = Vec::new();
    if opts.record_history {
        history.push(value);
    }
    while iterations < opts.max_iter && grad_norm >= opts.tol_grad {
        iterations += 1;
        if opts.newton && grad_norm < NEWTON_GRAD {
            if let Some(next) = newton_step(k, &x, &coeffs)? {
                let nx = state_of(k, &next)?;
                let nv = entanglement::entropy(&nx);
                let ng = projected_gradient(k, &nx, &next);
                if ng.norm() < grad_norm && nv <= value + 1e-13 {
                    coeffs = next;
                    x = nx;
                    value = nv;
                    grad = ng;
                    grad_norm = grad.norm();
                    continue;
                }
            }
        }
        // Armijo backtracking along the projected gradient
        let mut accepted = false;
        eta = (eta * 2.0).min(MAX_STEP);
        while eta > MIN_STEP {
            let trial = normalize(&coeffs - &grad * c(eta, 0.0));
            let tx = state_of(k, &trial)?;
            let tv = entanglement::entropy(&tx);
            if tv <= value - ARMIJO * eta * grad_norm * grad_norm && tv < value {
                coeffs = trial;
                x = tx;
                value = tv;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
        if opts.record_history {
            history.push(value);
        }
        grad = projected_gradient(k, &x, &coeffs);
        grad_norm = grad.norm();
    }
    Ok(LocalResult {
        restart,
        coefficients: coeffs,
        value,
        grad_norm,
        iterations,
        history,
    })
}

/// Best-of-restarts local minimization. Restart `r` starts from a
/// Haar-random point drawn from stream `r` of `seed`.
pub fn minimize(k: &Subspace, seed: u64, opts: &MinimizeOptions) -> Result<MinimizationResult> {
    if k.is_empty() {
        return Err(OptimizerError::EmptySubspace);
    }
    let restarts = opts.restarts.max(1);
    let local = par::map_indices(opts.execution, restarts, |r| {
        let mut rng = rng_for_stream(seed, r as u64);
        let start = unit_vector(&mut rng, k.dim());
        descend(k, start, r, opts)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let best = local
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value).then(a.restart.cmp(&b.restart)))
        .expect("at least one restart")
        .clone();
    let x = state_of(k, &best.coefficients)?;
    let report = classify(k, &x, opts.tol_grad)?;
    Ok(MinimizationResult {
        x_star: x.into_matrix(),
        coefficients: best.coefficients,
        value: best.value,
        grad_norm: report.grad_norm,
        hessian_spectrum: report.hessian_spectrum,
        divergent_directions: report.divergent_directions,
        classification: report.classification,
        soft_directions: report.soft_directions,
        iterations: best.iterations,
        seed,
        restart: best.restart,
        local,
    })
}
