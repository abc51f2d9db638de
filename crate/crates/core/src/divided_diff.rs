//! Divided differences of scalar functions and the second-order expansion
//! `f(A + tB) = f(A) + t L_A(B) + t^2 Q_A(B) + O(t^3)` for Hermitian `A`.
//!
//! `A` is always passed through its eigenvalues: callers rotate `B` into
//! the eigenbasis of `A` first.

use crate::matrix::{self, c, CMatrix, MatrixError};
use thiserror::Error;

/// Gaps below this switch divided differences to their derivative limits.
pub const CONFLUENT_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DividedDiffError {
    #[error("argument {0} outside the function domain")]
    OutOfDomain(f64),
    #[error("{rows}x{cols} matrix does not match {len} eigenvalues")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

pub type Result<T> = std::result::Result<T, DividedDiffError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Open half line `(0, inf)`.
    Positive,
    Real,
}

impl Domain {
    pub fn contains(self, t: f64) -> bool {
        match self {
            Domain::Positive => t > 0.0 && t.is_finite(),
            Domain::Real => t.is_finite(),
        }
    }
}

/// A `C^2` real function with its first two derivatives.
///
/// The difference methods have generic implementations; functions with a
/// cancellation-free closed form override them.
pub trait ScalarFunction: Send + Sync {
    fn value(&self, t: f64) -> f64;
    fn derivative(&self, t: f64) -> f64;
    fn second_derivative(&self, t: f64) -> f64;
    fn domain(&self) -> Domain;

    /// `(f(a) - f(b)) / (a - b)`, or `f'` at the midpoint for close arguments.
    fn first_difference(&self, a: f64, b: f64) -> f64 {
        if (a - b).abs() < CONFLUENT_TOL {
            self.derivative(0.5 * (a + b))
        } else {
            (self.value(a) - self.value(b)) / (a - b)
        }
    }

    /// First divided difference of `f'`; its confluent value is `f''`.
    fn derivative_difference(&self, a: f64, b: f64) -> f64 {
        if (a - b).abs() < CONFLUENT_TOL {
            self.second_derivative(0.5 * (a + b))
        } else {
            (self.derivative(a) - self.derivative(b)) / (a - b)
        }
    }

    fn second_difference(&self, a: f64, b: f64, c: f64) -> f64 {
        let mut s = [a, b, c];
        s.sort_by(|x, y| y.total_cmp(x));
        let [hi, mid, lo] = s;
        if hi - lo < CONFLUENT_TOL {
            0.5 * self.second_derivative(mid)
        } else {
            (self.first_difference(hi, mid) - self.first_difference(mid, lo)) / (hi - lo)
        }
    }
}

/// `g(t) = -t log t` on `(0, inf)`, with `g' = -1 - log t` and `g'' = -1/t`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NegEntropy;

impl ScalarFunction for NegEntropy {
    fn value(&self, t: f64) -> f64 {
        -t * t.ln()
    }

    fn derivative(&self, t: f64) -> f64 {
        -1.0 - t.ln()
    }

    fn second_derivative(&self, t: f64) -> f64 {
        -1.0 / t
    }

    fn domain(&self) -> Domain {
        Domain::Positive
    }

    // with a > b and u = b/a: a log a - b log b = (a - b) log a - b log u
    fn first_difference(&self, a: f64, b: f64) -> f64 {
        if (a - b).abs() < CONFLUENT_TOL {
            return self.derivative(0.5 * (a + b));
        }
        let (hi, lo) = if a > b { (a, b) } else { (b, a) };
        -hi.ln() - lo * log_ratio(hi, lo) / (hi - lo)
    }

    fn derivative_difference(&self, a: f64, b: f64) -> f64 {
        if (a - b).abs() < CONFLUENT_TOL {
            return self.second_derivative(0.5 * (a + b));
        }
        let (hi, lo) = if a > b { (a, b) } else { (b, a) };
        -log_ratio(hi, lo) / (hi - lo)
    }
}

/// `log(hi / lo)` for `hi > lo > 0`, through `log1p` when the two are close.
fn log_ratio(hi: f64, lo: f64) -> f64 {
    let delta = (hi - lo) / hi;
    if delta < 0.5 {
        -(-delta).ln_1p()
    } else {
        hi.ln() - lo.ln()
    }
}

/// `f(t) = t^m`.
#[derive(Debug, Clone, Copy)]
pub struct Monomial(pub u32);

impl Monomial {
    fn power(t: f64, k: u32) -> f64 {
        t.powi(k as i32)
    }

    /// Complete homogeneous symmetric polynomial of degree `k` in `(a, b)`.
    fn h2(a: f64, b: f64, k: i64) -> f64 {
        if k < 0 {
            return 0.0;
        }
        (0..=k as u32)
            .map(|p| Self::power(a, p) * Self::power(b, k as u32 - p))
            .sum()
    }
}

impl ScalarFunction for Monomial {
    fn value(&self, t: f64) -> f64 {
        Self::power(t, self.0)
    }

    fn derivative(&self, t: f64) -> f64 {
        if self.0 == 0 {
            0.0
        } else {
            self.0 as f64 * Self::power(t, self.0 - 1)
        }
    }

    fn second_derivative(&self, t: f64) -> f64 {
        if self.0 < 2 {
            0.0
        } else {
            (self.0 * (self.0 - 1)) as f64 * Self::power(t, self.0 - 2)
        }
    }

    fn domain(&self) -> Domain {
        Domain::Real
    }

    fn first_difference(&self, a: f64, b: f64) -> f64 {
        Self::h2(a, b, self.0 as i64 - 1)
    }

    fn derivative_difference(&self, a: f64, b: f64) -> f64 {
        self.0 as f64 * Self::h2(a, b, self.0 as i64 - 2)
    }

    fn second_difference(&self, a: f64, b: f64, cc: f64) -> f64 {
        let k = self.0 as i64 - 2;
        if k < 0 {
            return 0.0;
        }
        (0..=k as u32)
            .map(|r| Self::h2(a, b, k - r as i64) * Self::power(cc, r))
            .sum()
    }
}

fn check_domain<F: ScalarFunction + ?Sized>(f: &F, points: &[f64]) -> Result<()> {
    match points.iter().find(|&&t| !f.domain().contains(t)) {
        Some(&t) => Err(DividedDiffError::OutOfDomain(t)),
        None => Ok(()),
    }
}

pub fn dd1<F: ScalarFunction + ?Sized>(f: &F, a: f64, b: f64) -> Result<f64> {
    check_domain(f, &[a, b])?;
    Ok(f.first_difference(a, b))
}

pub fn dd2<F: ScalarFunction + ?Sized>(f: &F, a: f64, b: f64, cc: f64) -> Result<f64> {
    check_domain(f, &[a, b, cc])?;
    Ok(f.second_difference(a, b, cc))
}

fn check_shape(alpha: &[f64], b: &CMatrix) -> Result<()> {
    let n = alpha.len();
    if b.nrows() != n || b.ncols() != n {
        return Err(DividedDiffError::Shape {
            rows: b.nrows(),
            cols: b.ncols(),
            len: n,
        });
    }
    Ok(())
}

/// `[L_A(B)]_ij = f[alpha_i, alpha_j] b_ij`.
pub fn expansion_l<F: ScalarFunction + ?Sized>(f: &F, alpha: &[f64], b: &CMatrix) -> Result<CMatrix> {
    check_shape(alpha, b)?;
    check_domain(f, alpha)?;
    let n = alpha.len();
    Ok(CMatrix::from_fn(n, n, |i, j| {
        b[(i, j)] * f.first_difference(alpha[i], alpha[j])
    }))
}

/// `[Q_A(B)]_ij = sum_k f[alpha_i, alpha_k, alpha_j] b_ik b_kj`.
pub fn expansion_q<F: ScalarFunction + ?Sized>(f: &F, alpha: &[f64], b: &CMatrix) -> Result<CMatrix> {
    check_shape(alpha, b)?;
    check_domain(f, alpha)?;
    let n = alpha.len();
    let mut q = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = c(0.0, 0.0);
            for k in 0..n {
                acc += b[(i, k)] * b[(k, j)] * f.second_difference(alpha[i], alpha[k], alpha[j]);
            }
            q[(i, j)] = acc;
        }
    }
    Ok(q)
}

/// `Tr Q_A(B)` for Hermitian `B`, via the divided difference of `f'`.
pub fn trace_q<F: ScalarFunction + ?Sized>(f: &F, alpha: &[f64], b: &CMatrix) -> Result<f64> {
    check_shape(alpha, b)?;
    check_domain(f, alpha)?;
    let residual = matrix::hermitian_residual(b);
    if residual > matrix::HERMITIAN_TOL {
        return Err(MatrixError::NotHermitian { residual }.into());
    }
    Ok(trace_q_unchecked(f, alpha, b))
}

/// `trace_q` without validation, for hot loops whose inputs are Hermitian
/// by construction.
pub(crate) fn trace_q_unchecked<F: ScalarFunction + ?Sized>(f: &F, alpha: &[f64], b: &CMatrix) -> f64 {
    let n = alpha.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let bb = (b[(i, j)] * b[(j, i)]).re;
            if bb != 0.0 {
                acc += 0.5 * f.derivative_difference(alpha[i], alpha[j]) * bb;
            }
        }
    }
    acc
}

#[derive(Debug, Clone)]
pub struct ExpansionTerms {
    pub zeroth: CMatrix,
    pub linear: CMatrix,
    pub quadratic: CMatrix,
}

impl ExpansionTerms {
    /// `f(A) + t L + t^2 Q`.
    pub fn evaluate(&self, t: f64) -> CMatrix {
        &self.zeroth + self.linear.scale(t) + self.quadratic.scale(t * t)
    }
}

pub fn expansion_terms<F: ScalarFunction + ?Sized>(f: &F, alpha: &[f64], b: &CMatrix) -> Result<ExpansionTerms> {
    let linear = expansion_l(f, alpha, b)?;
    let quadratic = expansion_q(f, alpha, b)?;
    let values: Vec<f64> = alpha.iter().map(|&a| f.value(a)).collect();
    let zeroth = matrix::real_diag(alpha.len(), alpha.len(), &values);
    Ok(ExpansionTerms {
        zeroth,
        linear,
        quadratic,
    })
}

/// Second-order approximation of `f(diag(alpha) + tB)`.
pub fn expand<F: ScalarFunction + ?Sized>(f: &F, alpha: &[f64], b: &CMatrix, t: f64) -> Result<CMatrix> {
    Ok(expansion_terms(f, alpha, b)?.evaluate(t))
}

/// `f(H)` through the spectral decomposition of a Hermitian matrix.
pub fn matrix_function<F: ScalarFunction + ?Sized>(f: &F, h: &CMatrix) -> Result<CMatrix> {
    let eig = matrix::herm_eig(h)?;
    check_domain(f, &eig.eigenvalues)?;
    Ok(eig.map(|t| f.value(t)))
}
