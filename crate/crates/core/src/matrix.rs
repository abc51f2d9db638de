//! Dense complex linear algebra shared by the rest of the crate.
//!
//! Matrices are plain [`nalgebra::DMatrix`] values over `Complex<f64>`.
//! Eigen- and singular-value decompositions are always returned sorted in
//! descending order so that downstream code can rely on a canonical layout.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Relative rank tolerance: singular values below `RANK_TOL * sigma_max` are kernel.
pub const RANK_TOL: f64 = 1e-10;

/// Hermiticity tolerance for [`herm_eig`], relative to the largest entry.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Eigenvalues of a PSD input may dip this far below zero from roundoff.
pub const PSD_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("matrix is not Hermitian (max |H - H*| = {residual:e})")]
    NotHermitian { residual: f64 },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("declared tensor dimensions {dims:?} do not factor a {rows}x{cols} matrix")]
    DimensionMismatch {
        dims: (usize, usize, usize, usize),
        rows: usize,
        cols: usize,
    },

    #[error("traced factor must be square, got {0}x{1}")]
    TracedFactorNotSquare(usize, usize),

    #[error("logarithm of a singular matrix (eigenvalue {eigenvalue:e})")]
    SingularLog { eigenvalue: f64 },

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },

    #[error("malformed matrix file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, MatrixError>;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Spectral data of a Hermitian matrix: `basis * diag(eigenvalues) * basis^*`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub basis: CMatrix,
}

impl SpectralDecomposition {
    pub fn reconstruct(&self) -> CMatrix {
        let scaled = scale_columns(&self.basis, &self.eigenvalues);
        scaled * self.basis.adjoint()
    }

    /// Applies `f` to the spectrum: `basis * diag(f(lambda)) * basis^*`.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> CMatrix {
        let values: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        scale_columns(&self.basis, &values) * self.basis.adjoint()
    }
}

/// Full singular value decomposition `x = u * diag(sigma) * v_adj`.
///
/// Both unitaries are square (`n x n` and `m x m`); `singular_values` has
/// `min(n, m)` entries in descending order.
#[derive(Debug, Clone)]
pub struct SvdDecomposition {
    pub u: CMatrix,
    pub singular_values: Vec<f64>,
    pub v_adj: CMatrix,
}

impl SvdDecomposition {
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.u.nrows();
        let m = self.v_adj.nrows();
        let mut sigma = CMatrix::zeros(n, m);
        for (k, &s) in self.singular_values.iter().enumerate() {
            sigma[(k, k)] = c(s, 0.0);
        }
        &self.u * sigma * &self.v_adj
    }

    /// The right unitary `v` with `x = u diag(sigma) v^*`.
    pub fn v(&self) -> CMatrix {
        self.v_adj.adjoint()
    }

    /// Number of singular values above `RANK_TOL * sigma_max`.
    pub fn rank(&self) -> usize {
        numerical_rank(&self.singular_values)
    }
}

pub fn numerical_rank(descending: &[f64]) -> usize {
    let max = descending.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return 0;
    }
    descending.iter().filter(|&&s| s > RANK_TOL * max).count()
}

fn check_finite(m: &CMatrix) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(MatrixError::NonFinite)
    }
}

fn scale_columns(m: &CMatrix, values: &[f64]) -> CMatrix {
    let mut out = m.clone();
    for (j, &v) in values.iter().enumerate() {
        out.column_mut(j).scale_mut(v);
    }
    out
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entrywise deviation from Hermiticity, relative to `max(1, max|h_ij|)`.
pub fn hermitian_residual(h: &CMatrix) -> f64 {
    if !h.is_square() {
        return f64::INFINITY;
    }
    let diff = h - h.adjoint();
    max_abs(&diff) / max_abs(h).max(1.0)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues descending.
pub fn herm_eig(h: &CMatrix) -> Result<SpectralDecomposition> {
    check_finite(h)?;
    let residual = hermitian_residual(h);
    if residual > HERMITIAN_TOL {
        return Err(MatrixError::NotHermitian { residual });
    }
    let sym = (h + h.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps input order among ties
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let basis = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(SpectralDecomposition { eigenvalues, basis })
}

/// Completes the orthonormal columns of `q` (n x k) to an n x n unitary.
fn complete_unitary(q: &CMatrix) -> CMatrix {
    let n = q.nrows();
    let mut cols: Vec<CVector> = q.column_iter().map(|c| c.into_owned()).collect();
    for e in 0..n {
        if cols.len() == n {
            break;
        }
        let mut v = nalgebra::DVector::<C64>::zeros(n);
        v[e] = c(1.0, 0.0);
        for _ in 0..2 {
            for col in &cols {
                let proj = col.dotc(&v);
                v -= col * proj;
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            cols.push(v / c(norm, 0.0));
        }
    }
    CMatrix::from_columns(&cols)
}

/// Singular value decomposition with square unitaries, values descending.
pub fn svd(x: &CMatrix) -> Result<SvdDecomposition> {
    check_finite(x)?;
    let (n, m) = x.shape();
    let k = n.min(m);
    let dec = x.clone().svd(true, true);
    let u_thin = dec.u.expect("u requested");
    let vt_thin = dec.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&j| dec.singular_values[j].max(0.0)).collect();
    let u_sorted = CMatrix::from_fn(n, k, |i, j| u_thin[(i, order[j])]);
    let v_sorted = CMatrix::from_fn(m, k, |i, j| vt_thin[(order[j], i)].conj());
    let u = complete_unitary(&u_sorted);
    let v = complete_unitary(&v_sorted);
    Ok(SvdDecomposition {
        u,
        singular_values,
        v_adj: v.adjoint(),
    })
}

/// Kronecker product in row-major lexicographic order: row `(i1, i2) -> i1 * n2 + i2`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceSide {
    First,
    Second,
}

/// Partial trace of `m`, a `(n1*n2) x (m1*m2)` matrix on a tensor-product
/// index pair with factor shapes `n1 x m1` and `n2 x m2`. The traced factor
/// must be square.
pub fn partial_trace(m: &CMatrix, side: TraceSide, dims: (usize, usize, usize, usize)) -> Result<CMatrix> {
    let (n1, m1, n2, m2) = dims;
    if m.nrows() != n1 * n2 || m.ncols() != m1 * m2 {
        return Err(MatrixError::DimensionMismatch {
            dims,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    match side {
        TraceSide::Second => {
            if n2 != m2 {
                return Err(MatrixError::TracedFactorNotSquare(n2, m2));
            }
            Ok(CMatrix::from_fn(n1, m1, |i, j| {
                (0..n2).map(|k| m[(i * n2 + k, j * m2 + k)]).sum()
            }))
        }
        TraceSide::First => {
            if n1 != m1 {
                return Err(MatrixError::TracedFactorNotSquare(n1, m1));
            }
            Ok(CMatrix::from_fn(n2, m2, |i, j| {
                (0..n1).map(|k| m[(k * n2 + i, k * m2 + j)]).sum()
            }))
        }
    }
}

/// Matrix logarithm of a Hermitian PSD matrix.
///
/// With `mask_kernel`, eigen-directions below the rank tolerance map to 0,
/// which realizes the `0 log 0 = 0` convention inside entropy-style traces.
pub fn log_psd(rho: &CMatrix, mask_kernel: bool) -> Result<CMatrix> {
    let eig = herm_eig(rho)?;
    if let Some(&low) = eig.eigenvalues.iter().find(|&&l| l < -PSD_TOL) {
        return Err(MatrixError::NotPsd { eigenvalue: low });
    }
    let max = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let cutoff = RANK_TOL * max;
    if !mask_kernel {
        if let Some(&low) = eig.eigenvalues.iter().find(|&&l| l <= cutoff) {
            return Err(MatrixError::SingularLog { eigenvalue: low });
        }
    }
    Ok(eig.map(|l| if l > cutoff { l.ln() } else { 0.0 }))
}

/// `-sum p log p` over a spectrum, with `0 log 0 = 0`.
pub fn spectral_entropy(p: &[f64]) -> f64 {
    // folding from +0 keeps a pure spectrum at +0 rather than -0
    p.iter().filter(|&&v| v > 0.0).fold(0.0, |acc, &v| acc - v * v.ln())
}

/// Von Neumann entropy of a Hermitian PSD matrix, in nats.
pub fn von_neumann_entropy(rho: &CMatrix) -> Result<f64> {
    let eig = herm_eig(rho)?;
    Ok(spectral_entropy(&eig.eigenvalues))
}

/// Hilbert-Schmidt inner product `Tr(A B^*)`.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> Result<C64> {
    if a.shape() != b.shape() {
        return Err(MatrixError::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum())
}

/// `hs_inner` for callers that already guarantee equal shapes.
#[inline]
pub(crate) fn inner(a: &CMatrix, b: &CMatrix) -> C64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum()
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace(a: &CMatrix) -> C64 {
    a.diagonal().iter().sum()
}

/// Real diagonal matrix with the given entries on the main diagonal.
pub fn real_diag(rows: usize, cols: usize, values: &[f64]) -> CMatrix {
    let mut out = CMatrix::zeros(rows, cols);
    for (k, &v) in values.iter().enumerate().take(rows.min(cols)) {
        out[(k, k)] = c(v, 0.0);
    }
    out
}

/// Matrix unit `E_ij` of the given shape.
pub fn unit(rows: usize, cols: usize, i: usize, j: usize) -> CMatrix {
    let mut out = CMatrix::zeros(rows, cols);
    out[(i, j)] = c(1.0, 0.0);
    out
}

/// JSON form `{"rows": n, "cols": m, "data": [[re, im], ...]}`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl From<&CMatrix> for MatrixJson {
    fn from(m: &CMatrix) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let z = m[(i, j)];
                data.push([z.re, z.im]);
            }
        }
        MatrixJson { rows, cols, data }
    }
}

impl TryFrom<&MatrixJson> for CMatrix {
    type Error = MatrixError;

    fn try_from(j: &MatrixJson) -> Result<Self> {
        if j.rows == 0 || j.cols == 0 {
            return Err(MatrixError::Format("rows and cols must be positive".into()));
        }
        if j.data.len() != j.rows * j.cols {
            return Err(MatrixError::Format(format!(
                "expected {} entries, found {}",
                j.rows * j.cols,
                j.data.len()
            )));
        }
        let m = CMatrix::from_fn(j.rows, j.cols, |i, k| {
            let [re, im] = j.data[i * j.cols + k];
            c(re, im)
        });
        check_finite(&m)?;
        Ok(m)
    }
}

pub fn matrix_from_json(text: &str) -> Result<CMatrix> {
    let parsed: MatrixJson = serde_json::from_str(text).map_err(|e| MatrixError::Format(e.to_string()))?;
    CMatrix::try_from(&parsed)
}

pub fn matrix_to_json(m: &CMatrix) -> String {
    serde_json::to_string(&MatrixJson::from(m)).expect("matrix serialization is infallible")
}
