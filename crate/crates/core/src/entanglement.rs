//! Entropy of entanglement `E(x) = -Tr(xx* log xx*)` and its directional
//! derivatives along the curve `t -> (x + t y) / sqrt(1 + t^2)`.
//!
//! All derivative formulas are evaluated in the Schmidt frame of `x`: the
//! state is transposed when it has more rows than columns, then rotated by its
//! singular vectors so that it becomes `[diag(sigma) 0]`. The same frame
//! handles full-rank and rank-deficient states; in the latter case the
//! second derivative is either `+inf` (the direction has weight in the
//! kernel-kernel block) or given by a closed form.

use crate::divided_diff::{self, NegEntropy};
use crate::matrix::{self, c, CMatrix, MatrixError, SvdDecomposition, C64};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Directions whose kernel-kernel block has squared norm above this are divergent.
pub const TAU_K: f64 = 1e-12;

/// Unit-norm tolerance for states.
pub const NORM_TOL: f64 = 1e-12;

/// Tolerance on `|<x, y>|` for tangent directions.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

/// Half-width of the window around `r = +-1` where the Phi functions switch
/// to their series.
const PHI_SERIES_WINDOW: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntanglementError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    DividedDiff(#[from] divided_diff::DividedDiffError),
    #[error("state is not normalized: Tr(xx*) = {0}")]
    NotNormalized(f64),
    #[error("zero matrix cannot be normalized")]
    ZeroMatrix,
    #[error("direction shape {direction:?} does not match state shape {state:?}")]
    ShapeMismatch {
        state: (usize, usize),
        direction: (usize, usize),
    },
    #[error("direction is not orthogonal to the state: |<x, y>| = {0:e}")]
    NotOrthogonal(f64),
    #[error("direction is not unit norm: |y| = {0}")]
    DirectionNorm(f64),
    #[error("operation needs a full-rank state; rank {rank} < {full}")]
    SingularState { rank: usize, full: usize },
    #[error("operation needs a rank-deficient state")]
    NotSingular,
    #[error("operation needs a square state, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("argument must be nonzero")]
    ZeroArgument,
    #[error("regularization parameter must lie in (0, 1), got {0}")]
    Epsilon(f64),
    #[error("probe grid must be nonempty with positive steps")]
    ProbeGrid,
}

pub type Result<T> = std::result::Result<T, EntanglementError>;

/// Schmidt frame of a state: `x' = u_adj * x_or * v = [diag(sigma) 0]`
/// where `x_or` is `x` or its transpose so that `rows <= cols`.
#[derive(Debug, Clone)]
struct Frame {
    transposed: bool,
    u_adj: CMatrix,
    v: CMatrix,
    u: CMatrix,
    v_adj: CMatrix,
    rows: usize,
    cols: usize,
    rank: usize,
    /// Nonzero Schmidt values, descending.
    sigma: Vec<f64>,
    p: Vec<f64>,
    log_p: Vec<f64>,
    entropy: f64,
}

impl Frame {
    fn new(x: &CMatrix) -> Result<Self> {
        let transposed = x.nrows() > x.ncols();
        let oriented = if transposed { x.transpose() } else { x.clone() };
        let svd = matrix::svd(&oriented)?;
        let rank = svd.rank();
        let sigma: Vec<f64> = svd.singular_values[..rank].to_vec();
        let p: Vec<f64> = sigma.iter().map(|s| s * s).collect();
        let log_p: Vec<f64> = p.iter().map(|v| v.ln()).collect();
        // renormalized so that product states give exactly zero
        let total: f64 = p.iter().sum();
        let entropy = matrix::spectral_entropy(&p.iter().map(|v| v / total).collect::<Vec<_>>());
        Ok(Frame {
            transposed,
            u_adj: svd.u.adjoint(),
            v: svd.v(),
            u: svd.u,
            v_adj: svd.v_adj,
            rows: oriented.nrows(),
            cols: oriented.ncols(),
            rank,
            sigma,
            p,
            log_p,
            entropy,
        })
    }

    fn is_singular(&self) -> bool {
        self.rank < self.rows
    }

    fn rotate(&self, y: &CMatrix) -> CMatrix {
        if self.transposed {
            &self.u_adj * y.transpose() * &self.v
        } else {
            &self.u_adj * y * &self.v
        }
    }

    fn unrotate(&self, yt: &CMatrix) -> CMatrix {
        let back = &self.u * yt * &self.v_adj;
        if self.transposed {
            back.transpose()
        } else {
            back
        }
    }

    /// Squared norm of the kernel-kernel block.
    fn kernel_weight(&self, yt: &CMatrix) -> f64 {
        let r = self.rank;
        let mut k = 0.0;
        for i in r..self.rows {
            for j in r..self.cols {
                k += yt[(i, j)].norm_sqr();
            }
        }
        k
    }

    /// Range block of `x' y'^* + y' x'^*`.
    fn gamma0_range(&self, yt: &CMatrix) -> CMatrix {
        let r = self.rank;
        CMatrix::from_fn(r, r, |i, j| {
            yt[(j, i)].conj() * self.sigma[i] + yt[(i, j)] * self.sigma[j]
        })
    }

    fn first(&self, yt: &CMatrix) -> f64 {
        -2.0 * (0..self.rank)
            .map(|i| self.sigma[i] * self.log_p[i] * yt[(i, i)].re)
            .sum::<f64>()
    }

    /// `Tr(x' y'^* log rho)` restricted to the range.
    fn criticality(&self, yt: &CMatrix) -> f64 {
        (0..self.rank)
            .map(|i| yt[(i, i)].conj() * (self.sigma[i] * self.log_p[i]))
            .sum::<C64>()
            .norm()
    }

    /// Homogenized second derivative ignoring the kernel-kernel block.
    ///
    /// For full rank this is `2(Tr Q(gamma0) - Tr[y y^* log rho] - |y|^2 E)`;
    /// for rank-deficient states the range-kernel blocks enter through the
    /// `log rho_11` weights on both the rows and the columns of the range.
    fn second_finite(&self, yt: &CMatrix) -> f64 {
        let r = self.rank;
        let g0 = self.gamma0_range(yt);
        let tq = divided_diff::trace_q_unchecked(&NegEntropy, &self.p, &g0);
        let mut weighted = 0.0;
        for i in 0..r {
            let mut w = 0.0;
            for k in 0..self.cols {
                w += yt[(i, k)].norm_sqr();
            }
            for k in r..self.rows {
                w += yt[(k, i)].norm_sqr();
            }
            weighted += self.log_p[i] * w;
        }
        let norm2: f64 = yt.iter().map(|z| z.norm_sqr()).sum();
        2.0 * (tq - weighted - norm2 * self.entropy)
    }

    fn second(&self, yt: &CMatrix) -> SecondDerivative {
        let norm2: f64 = yt.iter().map(|z| z.norm_sqr()).sum();
        if self.is_singular() && self.kernel_weight(yt) > TAU_K * norm2.max(f64::MIN_POSITIVE) {
            SecondDerivative::Infinite
        } else {
            SecondDerivative::Finite(self.second_finite(yt))
        }
    }
}

/// A unit-norm `n x m` matrix with its Schmidt data.
#[derive(Debug, Clone)]
pub struct StateMatrix {
    x: CMatrix,
    frame: Frame,
}

impl StateMatrix {
    /// Wraps `x`, which must satisfy `Tr(xx*) = 1` to within `1e-12`.
    pub fn new(x: CMatrix) -> Result<Self> {
        let norm2: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        if !norm2.is_finite() {
            return Err(MatrixError::NonFinite.into());
        }
        if (norm2 - 1.0).abs() > NORM_TOL {
            return Err(EntanglementError::NotNormalized(norm2));
        }
        let frame = Frame::new(&x)?;
        Ok(StateMatrix { x, frame })
    }

    /// Scales `x` to unit Frobenius norm first.
    pub fn normalized(x: CMatrix) -> Result<Self> {
        let norm = matrix::frobenius(&x);
        if norm == 0.0 {
            return Err(EntanglementError::ZeroMatrix);
        }
        if !norm.is_finite() {
            return Err(MatrixError::NonFinite.into());
        }
        Self::new(x.unscale(norm))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.x
    }

    pub fn into_matrix(self) -> CMatrix {
        self.x
    }

    pub fn shape(&self) -> (usize, usize) {
        self.x.shape()
    }

    /// Schmidt values above the rank tolerance, descending.
    pub fn schmidt_values(&self) -> &[f64] {
        &self.frame.sigma
    }

    /// Squared Schmidt values: the nonzero spectrum of `xx*`.
    pub fn probabilities(&self) -> &[f64] {
        &self.frame.p
    }

    pub fn rank(&self) -> usize {
        self.frame.rank
    }

    /// Rank below `min(n, m)`.
    pub fn is_singular(&self) -> bool {
        self.frame.is_singular()
    }

    fn check_direction(&self, y: &CMatrix) -> Result<()> {
        if y.shape() != self.x.shape() {
            return Err(EntanglementError::ShapeMismatch {
                state: self.x.shape(),
                direction: y.shape(),
            });
        }
        Ok(())
    }

    fn require_full_rank(&self) -> Result<()> {
        if self.is_singular() {
            Err(EntanglementError::SingularState {
                rank: self.frame.rank,
                full: self.frame.rows,
            })
        } else {
            Ok(())
        }
    }
}

/// A tangent direction `y` at `x` with the derived perturbation matrices.
#[derive(Debug, Clone)]
pub struct DirectionPair {
    pub y: CMatrix,
    /// `xy* + yx*`
    pub gamma0: CMatrix,
    /// `yy* - xx*`
    pub gamma1: CMatrix,
}

impl DirectionPair {
    /// Validates `|y| = 1` and `<x, y> = 0` to within `1e-10`.
    pub fn new(x: &StateMatrix, y: CMatrix) -> Result<Self> {
        x.check_direction(&y)?;
        let norm = matrix::frobenius(&y);
        if (norm - 1.0).abs() > ORTHOGONALITY_TOL {
            return Err(EntanglementError::DirectionNorm(norm));
        }
        let overlap = matrix::inner(x.matrix(), &y).norm();
        if overlap > ORTHOGONALITY_TOL {
            return Err(EntanglementError::NotOrthogonal(overlap));
        }
        let xm = x.matrix();
        let xy = xm * y.adjoint();
        let gamma0 = &xy + xy.adjoint();
        let gamma1 = &y * y.adjoint() - xm * xm.adjoint();
        Ok(DirectionPair { y, gamma0, gamma1 })
    }

    /// Hermitian part `(y + y*)/2`; square directions only.
    pub fn w(&self) -> Option<CMatrix> {
        self.y.is_square().then(|| (&self.y + self.y.adjoint()).scale(0.5))
    }

    /// `i(y - y*)/2`, so that `y = w - i z`; square directions only.
    pub fn z(&self) -> Option<CMatrix> {
        self.y.is_square().then(|| (&self.y - self.y.adjoint()) * c(0.0, 0.5))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondDerivative {
    Finite(f64),
    Infinite,
}

impl SecondDerivative {
    pub fn finite(self) -> Option<f64> {
        match self {
            SecondDerivative::Finite(v) => Some(v),
            SecondDerivative::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, SecondDerivative::Infinite)
    }

    /// Display value: the finite number or `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Nonsingular,
    SingularFinite,
    SingularDivergent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub d1: f64,
    pub d2: SecondDerivative,
    /// Only for square full-rank states.
    pub m: Option<f64>,
    pub gamma: Option<f64>,
    pub branch: Branch,
    /// `|Tr(x y* log xx*)|`.
    pub criticality_residual: f64,
}

/// `E(x)` in nats.
pub fn entropy(x: &StateMatrix) -> f64 {
    x.frame.entropy
}

/// Entropy of `m / |m|` for any nonzero matrix.
pub fn entropy_of(m: &CMatrix) -> Result<f64> {
    let norm2: f64 = m.iter().map(|z| z.norm_sqr()).sum();
    if norm2 == 0.0 {
        return Err(EntanglementError::ZeroMatrix);
    }
    let s = matrix::svd(m)?;
    let p: Vec<f64> = s.singular_values.iter().map(|v| v * v / norm2).collect();
    Ok(matrix::spectral_entropy(&p))
}

/// `E((x + t y)/|x + t y|)`.
pub fn curve_entropy(x: &StateMatrix, y: &CMatrix, t: f64) -> Result<f64> {
    x.check_direction(y)?;
    entropy_of(&(x.matrix() + y.scale(t)))
}

/// Returns `(S(rho + t g0 + t^2 g1), S(rho + t g0) - t^2 Tr[g1 log rho])`.
pub fn affine_split_check(x: &StateMatrix, y: &CMatrix, t: f64) -> Result<(f64, f64)> {
    x.require_full_rank()?;
    let pair = DirectionPair::new(x, y.clone())?;
    let xm = x.matrix();
    let rho = if x.frame.transposed {
        xm.transpose() * xm.transpose().adjoint()
    } else {
        xm * xm.adjoint()
    };
    let (g0, g1) = if x.frame.transposed {
        let yt = y.transpose();
        let xt = xm.transpose();
        let xy = &xt * yt.adjoint();
        (&xy + xy.adjoint(), &yt * yt.adjoint() - &rho)
    } else {
        (pair.gamma0.clone(), pair.gamma1.clone())
    };
    let log_rho = matrix::log_psd(&rho, false)?;
    let lhs = matrix::von_neumann_entropy(&(&rho + g0.scale(t) + g1.scale(t * t)))?;
    let sigma_t = matrix::von_neumann_entropy(&(&rho + g0.scale(t)))?;
    let correction = matrix::trace(&(&g1 * log_rho)).re;
    Ok((lhs, sigma_t - t * t * correction))
}

/// First derivative `-Tr(gamma0 log rho) = -2 Re Tr(x y* log xx*)`.
///
/// Kernel directions of `xx*` are masked, so this is finite at rank-deficient
/// states as well.
pub fn d1(x: &StateMatrix, y: &CMatrix) -> Result<f64> {
    x.check_direction(y)?;
    Ok(x.frame.first(&x.frame.rotate(y)))
}

/// Euclidean gradient `G = -2 log(xx*) x` with `d1(x, y) = Re <y, G>`.
pub fn gradient_matrix(x: &StateMatrix) -> CMatrix {
    let f = &x.frame;
    let mut gt = CMatrix::zeros(f.rows, f.cols);
    for i in 0..f.rank {
        gt[(i, i)] = c(-2.0 * f.sigma[i] * f.log_p[i], 0.0);
    }
    f.unrotate(&gt)
}

/// `|Tr(x y* log xx*)|`; zero for every tangent `y` exactly at critical points.
pub fn criticality_residual(x: &StateMatrix, y: &CMatrix) -> Result<f64> {
    x.check_direction(y)?;
    Ok(x.frame.criticality(&x.frame.rotate(y)))
}

/// Second derivative at a full-rank state.
pub fn d2_nonsingular(x: &StateMatrix, y: &CMatrix) -> Result<f64> {
    x.require_full_rank()?;
    x.check_direction(y)?;
    Ok(x.frame.second_finite(&x.frame.rotate(y)))
}

/// `Phi(r) = (1/2) (r+1)/(r-1) log r^2`, with `Phi(1) = 2`.
pub fn phi(r: f64) -> f64 {
    let u = r - 1.0;
    if u.abs() < PHI_SERIES_WINDOW {
        return 2.0 + u * u / 6.0;
    }
    let v = r + 1.0;
    if v.abs() < PHI_SERIES_WINDOW {
        return v * v / 2.0;
    }
    let log_abs = if u.abs() < 0.5 { u.ln_1p() } else { r.abs().ln() };
    (r + 1.0) * log_abs / u
}

/// `Phi~(r) = (1/2) (r^2+1)/(r^2-1) log r^2`, with `Phi~(+-1) = 1`.
pub fn phi_tilde(r: f64) -> f64 {
    let v = r * r - 1.0;
    if v.abs() < PHI_SERIES_WINDOW {
        return 1.0 + v * v / 12.0;
    }
    0.5 * (v + 2.0) * v.ln_1p() / v
}

/// Hadamard multipliers built from the Schmidt spectrum.
#[derive(Debug, Clone)]
pub struct PhiData {
    /// `r_jk = sqrt(p_j / p_k)`
    pub ratios: DMatrix<f64>,
    pub phi_plus: DMatrix<f64>,
    pub phi_minus: DMatrix<f64>,
    pub phi_tilde: DMatrix<f64>,
}

pub fn phi_values(p: &[f64]) -> Result<PhiData> {
    if let Some(&bad) = p.iter().find(|&&v| v.is_nan() || v <= 0.0) {
        return Err(divided_diff::DividedDiffError::OutOfDomain(bad).into());
    }
    let n = p.len();
    let sq: Vec<f64> = p.iter().map(|v| v.sqrt()).collect();
    let ratios = DMatrix::from_fn(n, n, |j, k| if j == k { 1.0 } else { sq[j] / sq[k] });
    Ok(PhiData {
        phi_plus: ratios.map(phi),
        phi_minus: ratios.map(|r| phi(-r)),
        phi_tilde: ratios.map(phi_tilde),
        ratios,
    })
}

/// The two pieces of the second derivative of a square full-rank state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MGamma {
    pub m: f64,
    pub gamma: f64,
    pub d2: f64,
}

/// `M = sum |w_jk|^2 Phi(r_jk) + |z_jk|^2 Phi(-r_jk)` and
/// `Gamma = -E |y|^2 - (1/2) Tr[(y*y + yy*) log rho]` in the Schmidt frame,
/// with `D2 = 2(Gamma - M)`.
pub fn via_m_gamma(x: &StateMatrix, y: &CMatrix) -> Result<MGamma> {
    let (n, m) = x.shape();
    if n != m {
        return Err(EntanglementError::NotSquare(n, m));
    }
    x.require_full_rank()?;
    x.check_direction(y)?;
    let f = &x.frame;
    let yt = f.rotate(y);
    let phi = phi_values(&f.p)?;
    let mut m_val = 0.0;
    let mut weighted = 0.0;
    for j in 0..n {
        for k in 0..n {
            let a = yt[(j, k)];
            let b = yt[(k, j)].conj();
            let w = (a + b) * 0.5;
            let z = (a - b) * c(0.0, 0.5);
            m_val += w.norm_sqr() * phi.phi_plus[(j, k)] + z.norm_sqr() * phi.phi_minus[(j, k)];
            // (yy*)_jj and (y*y)_jj both collect |y_jk|^2 and |y_kj|^2
            weighted += f.log_p[j] * (a.norm_sqr() + yt[(k, j)].norm_sqr());
        }
    }
    let norm2: f64 = yt.iter().map(|z| z.norm_sqr()).sum();
    let gamma = -f.entropy * norm2 - 0.5 * weighted;
    Ok(MGamma {
        m: m_val,
        gamma,
        d2: 2.0 * (gamma - m_val),
    })
}

/// Necessary conditions for a non-degenerate minimum, evaluated along `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NecessaryConditions {
    /// `Tr[y* Phi~(y)] = sum |y_jk|^2 Phi~(r_jk)`
    pub phi_tilde_trace: f64,
    pub gamma: f64,
    /// `phi_tilde_trace < gamma`
    pub phi_condition: bool,
    /// `E(y) - E(x)`
    pub entropy_gap: f64,
    /// `S(yy* || xx*)` in the Schmidt frame.
    pub relative_entropy_left: f64,
    /// `S(y*y || x*x)` in the Schmidt frame.
    pub relative_entropy_right: f64,
    /// `E(y) - E(x) >= 1 - (left + right)/2`
    pub relative_entropy_condition: bool,
}

pub fn necessary_conditions(x: &StateMatrix, y: &CMatrix) -> Result<NecessaryConditions> {
    let mg = via_m_gamma(x, y)?;
    let f = &x.frame;
    let yt = f.rotate(y);
    let n = f.rows;
    let phi = phi_values(&f.p)?;
    let mut phi_tilde_trace = 0.0;
    let mut left = 0.0;
    let mut right = 0.0;
    for j in 0..n {
        for k in 0..n {
            phi_tilde_trace += yt[(j, k)].norm_sqr() * phi.phi_tilde[(j, k)];
            left += f.log_p[j] * yt[(j, k)].norm_sqr();
            right += f.log_p[j] * yt[(k, j)].norm_sqr();
        }
    }
    let e_y = entropy_of(y)?;
    let s_left = -e_y - left;
    let s_right = -e_y - right;
    let entropy_gap = e_y - f.entropy;
    Ok(NecessaryConditions {
        phi_tilde_trace,
        gamma: mg.gamma,
        phi_condition: phi_tilde_trace < mg.gamma,
        entropy_gap,
        relative_entropy_left: s_left,
        relative_entropy_right: s_right,
        relative_entropy_condition: entropy_gap >= 1.0 - 0.5 * (s_left + s_right),
    })
}

/// `Phi~(r) + Phi~(s) - Phi(rs)`, nonnegative with equality iff `r = s`.
pub fn phi_gap(r: f64, s: f64) -> Result<f64> {
    if r == 0.0 || s == 0.0 {
        return Err(EntanglementError::ZeroArgument);
    }
    Ok(phi_tilde(r) + phi_tilde(s) - phi(r * s))
}

/// `x` and `y` in the singular-vector basis of `x`, split into range and
/// kernel blocks.
#[derive(Debug, Clone)]
pub struct BlockPartition {
    pub rank: usize,
    pub x11: CMatrix,
    pub y11: CMatrix,
    pub y12: CMatrix,
    pub y21: CMatrix,
    pub y22: CMatrix,
    /// `Tr(y22 y22*)`
    pub k: f64,
    /// Left and right unitaries with `x = u [[x11, 0], [0, 0]] v_adj`.
    pub u: CMatrix,
    pub v_adj: CMatrix,
}

pub fn block_partition(x: &StateMatrix, y: &CMatrix) -> Result<BlockPartition> {
    x.check_direction(y)?;
    let svd = matrix::svd(x.matrix())?;
    Ok(partition_with(&svd, y))
}

fn partition_with(svd: &SvdDecomposition, y: &CMatrix) -> BlockPartition {
    let (n, m) = (svd.u.nrows(), svd.v_adj.nrows());
    let r = svd.rank();
    let yt = svd.u.adjoint() * y * svd.v();
    let y22 = yt.view((r, r), (n - r, m - r)).into_owned();
    BlockPartition {
        rank: r,
        x11: matrix::real_diag(r, r, &svd.singular_values[..r]),
        y11: yt.view((0, 0), (r, r)).into_owned(),
        y12: yt.view((0, r), (r, m - r)).into_owned(),
        y21: yt.view((r, 0), (n - r, r)).into_owned(),
        k: y22.iter().map(|z| z.norm_sqr()).sum(),
        y22,
        u: svd.u.clone(),
        v_adj: svd.v_adj.clone(),
    }
}

/// `x_eps = u [[x11, 0], [0, eps I]] v_adj / sqrt(1 + k eps^2)` where `k` is
/// the number of vanishing Schmidt values.
pub fn regularize(x: &StateMatrix, eps: f64) -> Result<StateMatrix> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(EntanglementError::Epsilon(eps));
    }
    if !x.is_singular() {
        return Err(EntanglementError::NotSingular);
    }
    let svd = matrix::svd(x.matrix())?;
    let r = svd.rank();
    let full = svd.singular_values.len();
    let mut values = svd.singular_values.clone();
    for v in values.iter_mut().skip(r) {
        *v = eps;
    }
    let (n, m) = x.shape();
    let sigma = matrix::real_diag(n, m, &values);
    let scale = (1.0 + (full - r) as f64 * eps * eps).sqrt();
    StateMatrix::new((&svd.u * sigma * &svd.v_adj).unscale(scale))
}

/// Total second-derivative evaluation: picks the full-rank formula, the
/// divergent verdict, or the rank-deficient closed form.
pub fn d2_dispatch(x: &StateMatrix, y: &CMatrix) -> Result<DerivativeReport> {
    let pair = DirectionPair::new(x, y.clone())?;
    let f = &x.frame;
    let yt = f.rotate(&pair.y);
    let d1 = f.first(&yt);
    let criticality_residual = f.criticality(&yt);
    if !f.is_singular() {
        let d2 = f.second_finite(&yt);
        let (m, gamma) = if x.x.is_square() {
            let mg = via_m_gamma(x, y)?;
            (Some(mg.m), Some(mg.gamma))
        } else {
            (None, None)
        };
        return Ok(DerivativeReport {
            d1,
            d2: SecondDerivative::Finite(d2),
            m,
            gamma,
            branch: Branch::Nonsingular,
            criticality_residual,
        });
    }
    let d2 = f.second(&yt);
    let branch = if d2.is_infinite() {
        Branch::SingularDivergent
    } else {
        Branch::SingularFinite
    };
    Ok(DerivativeReport {
        d1,
        d2,
        m: None,
        gamma: None,
        branch,
        criticality_residual,
    })
}

/// `Q(y) = |y|^2 D2_{y/|y|}`, a real quadratic form on the tangent space.
pub fn quadratic_form(x: &StateMatrix, y: &CMatrix) -> Result<SecondDerivative> {
    x.check_direction(y)?;
    Ok(x.frame.second(&x.frame.rotate(y)))
}

/// Precomputed second-derivative machinery at a fixed state, for repeated
/// evaluation over many directions.
#[derive(Debug, Clone)]
pub struct QuadraticForm<'a> {
    state: &'a StateMatrix,
}

impl<'a> QuadraticForm<'a> {
    pub fn new(state: &'a StateMatrix) -> Self {
        QuadraticForm { state }
    }

    /// Direction expressed in the Schmidt frame.
    pub fn rotate(&self, y: &CMatrix) -> CMatrix {
        self.state.frame.rotate(y)
    }

    /// Kernel-kernel weight `K` of a rotated direction.
    pub fn kernel_weight(&self, yt: &CMatrix) -> f64 {
        self.state.frame.kernel_weight(yt)
    }

    /// Kernel-kernel block of a rotated direction, row-major.
    pub fn kernel_block(&self, yt: &CMatrix) -> Vec<C64> {
        let f = &self.state.frame;
        let mut out = Vec::with_capacity((f.rows - f.rank) * (f.cols - f.rank));
        for i in f.rank..f.rows {
            for j in f.rank..f.cols {
                out.push(yt[(i, j)]);
            }
        }
        out
    }

    /// Finite part of `Q` on a rotated direction.
    pub fn finite(&self, yt: &CMatrix) -> f64 {
        self.state.frame.second_finite(yt)
    }

    pub fn evaluate_rotated(&self, yt: &CMatrix) -> SecondDerivative {
        self.state.frame.second(yt)
    }

    /// Bilinear form by polarization of the finite part.
    pub fn polar(&self, at: &CMatrix, bt: &CMatrix) -> f64 {
        0.25 * (self.finite(&(at + bt)) - self.finite(&(at - bt)))
    }
}

/// Second-difference quotients of the curve entropy near a singular state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceProbe {
    pub k: f64,
    /// `(t, [E(t) - 2E(0) + E(-t)] / t^2)`
    pub quotients: Vec<(f64, f64)>,
    /// Least-squares slope of the quotient against `log10(1/t)`.
    pub slope_per_decade: f64,
}

pub fn divergence_probe(x: &StateMatrix, y: &CMatrix, t_grid: &[f64]) -> Result<DivergenceProbe> {
    x.check_direction(y)?;
    if t_grid.len() < 2 || t_grid.iter().any(|&t| !t.is_finite() || t <= 0.0) {
        return Err(EntanglementError::ProbeGrid);
    }
    let yt = x.frame.rotate(y);
    let k = x.frame.kernel_weight(&yt);
    let e0 = entropy(x);
    let mut quotients = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let ep = curve_entropy(x, y, t)?;
        let em = curve_entropy(x, y, -t)?;
        quotients.push((t, (ep - 2.0 * e0 + em) / (t * t)));
    }
    let xs: Vec<f64> = quotients.iter().map(|(t, _)| -t.log10()).collect();
    let ys: Vec<f64> = quotients.iter().map(|(_, q)| *q).collect();
    Ok(DivergenceProbe {
        k,
        slope_per_decade: least_squares_slope(&xs, &ys),
        quotients,
    })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{frobenius, max_abs, real_diag, unit};
    use crate::random::{complex_gaussian_matrix, random_unitary, rng_from_seed, Rng64};

    fn random_state(rng: &mut Rng64, n: usize, m: usize) -> StateMatrix {
        StateMatrix::normalized(complex_gaussian_matrix(rng, n, m)).unwrap()
    }

    fn random_tangent(rng: &mut Rng64, x: &StateMatrix) -> CMatrix {
        let (n, m) = x.shape();
        let g = complex_gaussian_matrix(rng, n, m);
        let overlap = matrix::inner(&g, x.matrix());
        let y = g - x.matrix() * overlap;
        let norm = frobenius(&y);
        y.unscale(norm)
    }

    fn fd1(x: &StateMatrix, y: &CMatrix, h: f64) -> f64 {
        (curve_entropy(x, y, h).unwrap() - curve_entropy(x, y, -h).unwrap()) / (2.0 * h)
    }

    fn fd2(x: &StateMatrix, y: &CMatrix, h: f64) -> f64 {
        (curve_entropy(x, y, h).unwrap() - 2.0 * entropy(x) + curve_entropy(x, y, -h).unwrap()) / (h * h)
    }

    #[test]
    fn entropy_examples() {
        let prod = StateMatrix::new(unit(3, 2, 1, 0)).unwrap();
        assert_eq!(entropy(&prod), 0.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = StateMatrix::new(real_diag(2, 2, &[s, s])).unwrap();
        assert!((entropy(&bell) - 2f64.ln()).abs() < 1e-15);

        let mut rng = rng_from_seed(1);
        let x = random_state(&mut rng, 4, 4);
        let u = random_unitary(&mut rng, 4);
        let v = random_unitary(&mut rng, 4);
        let uxv = StateMatrix::normalized(&u * x.matrix() * &v).unwrap();
        assert!((entropy(&x) - entropy(&uxv)).abs() < 1e-13);
        assert!(entropy(&x) <= 4f64.ln());
    }

    #[test]
    fn state_validation() {
        assert!(matches!(
            StateMatrix::new(real_diag(2, 2, &[1.0, 1.0])),
            Err(EntanglementError::NotNormalized(_))
        ));
        assert!(matches!(
            StateMatrix::normalized(CMatrix::zeros(2, 2)),
            Err(EntanglementError::ZeroMatrix)
        ));
        let mut rng = rng_from_seed(2);
        let x = random_state(&mut rng, 3, 5);
        assert!((x.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn direction_pair_invariants() {
        let mut rng = rng_from_seed(3);
        let x = random_state(&mut rng, 3, 3);
        let y = random_tangent(&mut rng, &x);
        let pair = DirectionPair::new(&x, y.clone()).unwrap();
        assert!(matrix::trace(&pair.gamma0).norm() < 1e-11);
        assert!(matrix::trace(&pair.gamma1).norm() < 1e-11);
        let w = pair.w().unwrap();
        let z = pair.z().unwrap();
        assert!(max_abs(&(w - z * c(0.0, 1.0) - &y)) < 1e-12);
        assert!(matches!(
            DirectionPair::new(&x, x.matrix().clone()),
            Err(EntanglementError::NotOrthogonal(_))
        ));
    }

    #[test]
    fn curve_entropy_symmetries() {
        let mut rng = rng_from_seed(4);
        let x = random_state(&mut rng, 3, 4);
        let y = random_tangent(&mut rng, &x);
        assert!((curve_entropy(&x, &y, 0.0).unwrap() - entropy(&x)).abs() < 1e-14);
        let a = curve_entropy(&x, &y, 0.3).unwrap();
        let b = curve_entropy(&x, &(-&y), -0.3).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn d1_diagonal_example() {
        let p: f64 = 0.75;
        let x = StateMatrix::new(real_diag(2, 2, &[p.sqrt(), (1.0 - p).sqrt()])).unwrap();
        let y = real_diag(2, 2, &[(1.0 - p).sqrt(), -p.sqrt()]);
        let expected = -2.0 * (p * (1.0 - p)).sqrt() * (p / (1.0 - p)).ln();
        let got = d1(&x, &y).unwrap();
        assert!((got - expected).abs() < 1e-14);
        assert!((got - (-0.951426150896346)).abs() < 1e-12);
        assert!((fd1(&x, &y, 1e-5) - got).abs() < 1e-8);
        // off-diagonal direction
        let off = (unit(2, 2, 0, 1) + unit(2, 2, 1, 0)).unscale(2f64.sqrt());
        assert!(d1(&x, &off).unwrap().abs() < 1e-15);
    }

    #[test]
    fn d1_is_real_linear_and_matches_gradient_matrix() {
        let mut rng = rng_from_seed(5);
        let x = random_state(&mut rng, 3, 5);
        let a = random_tangent(&mut rng, &x);
        let b = random_tangent(&mut rng, &x);
        let lin = d1(&x, &(a.scale(0.3) + b.scale(-1.7))).unwrap();
        assert!((lin - (0.3 * d1(&x, &a).unwrap() - 1.7 * d1(&x, &b).unwrap())).abs() < 1e-13);
        let g = gradient_matrix(&x);
        assert!((matrix::inner(&a, &g).re - d1(&x, &a).unwrap()).abs() < 1e-13);
        // the gradient agrees with the log formula
        let rho = x.matrix() * x.matrix().adjoint();
        let direct = matrix::log_psd(&rho, false).unwrap() * x.matrix() * c(-2.0, 0.0);
        assert!(max_abs(&(direct - g)) < 1e-12);
    }

    #[test]
    fn d1_and_d2_match_finite_differences() {
        let mut rng = rng_from_seed(6);
        for (n, m) in [(2, 2), (3, 3), (2, 4), (4, 3), (5, 5)] {
            let x = random_state(&mut rng, n, m);
            for _ in 0..3 {
                let y = random_tangent(&mut rng, &x);
                let a = d1(&x, &y).unwrap();
                assert!((a - fd1(&x, &y, 1e-5)).abs() / a.abs().max(1.0) < 1e-6);
                let b = d2_nonsingular(&x, &y).unwrap();
                assert!(
                    (b - fd2(&x, &y, 1e-3)).abs() / b.abs().max(1.0) < 1e-4,
                    "{n}x{m}: {b} vs {}",
                    fd2(&x, &y, 1e-3)
                );
            }
        }
    }

    #[test]
    fn m_gamma_form_agrees_with_divided_differences() {
        let mut rng = rng_from_seed(7);
        for n in 2..=6 {
            let x = random_state(&mut rng, n, n);
            let y = random_tangent(&mut rng, &x);
            let mg = via_m_gamma(&x, &y).unwrap();
            let direct = d2_nonsingular(&x, &y).unwrap();
            assert!((mg.d2 - direct).abs() < 1e-10, "n = {n}: {} vs {direct}", mg.d2);
        }
        assert!(matches!(
            via_m_gamma(&random_state(&mut rng, 2, 3), &CMatrix::zeros(2, 3)),
            Err(EntanglementError::NotSquare(2, 3))
        ));
    }

    #[test]
    fn maximally_entangled_state() {
        let mut rng = rng_from_seed(8);
        let n = 3;
        let x = StateMatrix::new(CMatrix::identity(n, n).unscale((n as f64).sqrt())).unwrap();
        for _ in 0..5 {
            let y = random_tangent(&mut rng, &x);
            let mg = via_m_gamma(&x, &y).unwrap();
            assert!(mg.gamma.abs() < 1e-13);
            assert!((mg.d2 + 2.0 * mg.m).abs() < 1e-12);
            assert!(mg.d2 <= 0.0);
        }
    }

    #[test]
    fn m_with_hermitian_direction() {
        let mut rng = rng_from_seed(9);
        let x = StateMatrix::new(real_diag(3, 3, &[0.8f64.sqrt(), 0.15f64.sqrt(), 0.05f64.sqrt()])).unwrap();
        let h = crate::random::random_hermitian(&mut rng, 3);
        // make it orthogonal to x, which is real diagonal, then normalize
        let ov = matrix::inner(&h, x.matrix()).re;
        let y = h - x.matrix().scale(ov);
        let y = y.unscale(frobenius(&y));
        let mg = via_m_gamma(&x, &y).unwrap();
        let phi = phi_values(x.probabilities()).unwrap();
        let mut expected = 0.0;
        for j in 0..3 {
            for k in 0..3 {
                expected += y[(j, k)].norm_sqr() * phi.phi_plus[(j, k)];
            }
        }
        assert!((mg.m - expected).abs() < 1e-13);
    }

    #[test]
    fn phi_reference_values() {
        assert_eq!(phi(1.0), 2.0);
        assert_eq!(phi(-1.0), 0.0);
        assert_eq!(phi_tilde(1.0), 1.0);
        assert_eq!(phi_tilde(-1.0), 1.0);
        assert!((phi(2.0) - 3.0 * 2f64.ln()).abs() < 1e-15);
        assert!((phi(2.0) - 2.0794415416798357).abs() < 1e-15);
        assert!((phi_tilde(2.0) - 1.1552453009332422).abs() < 1e-15);
        // continuity across the series windows
        for r in [1.0f64 + 9e-7, 1.0 + 1.1e-6, -1.0 + 9e-7, -1.0 - 1.1e-6] {
            let closed = 0.5 * (r + 1.0) / (r - 1.0) * (r * r).ln();
            assert!((phi(r) - closed).abs() < 1e-8, "{r}");
        }
        let d = phi_values(&[0.5, 0.3, 0.2]).unwrap();
        for j in 0..3 {
            assert_eq!(d.phi_plus[(j, j)], 2.0);
            assert_eq!(d.phi_minus[(j, j)], 0.0);
            assert_eq!(d.phi_tilde[(j, j)], 1.0);
            for k in 0..3 {
                let avg = 0.5 * (d.phi_plus[(j, k)] + d.phi_minus[(j, k)]);
                assert!((avg - d.phi_tilde[(j, k)]).abs() < 1e-12);
            }
        }
        assert!(phi_values(&[0.5, 0.0]).is_err());
    }

    #[test]
    fn averaging_identity() {
        let mut rng = rng_from_seed(10);
        for n in [2, 3, 5] {
            let x = random_state(&mut rng, n, n);
            let y = random_tangent(&mut rng, &x);
            let iy = &y * c(0.0, 1.0);
            let lhs = 0.5 * (via_m_gamma(&x, &y).unwrap().m + via_m_gamma(&x, &iy).unwrap().m);
            let rhs = necessary_conditions(&x, &y).unwrap().phi_tilde_trace;
            assert!((lhs - rhs).abs() < 1e-11);
        }
    }

    #[test]
    fn relative_entropy_equality_case() {
        // y has the same reduced state as x
        let x = StateMatrix::new(real_diag(3, 3, &[0.7f64.sqrt(), 0.2f64.sqrt(), 0.1f64.sqrt()])).unwrap();
        let mut y = CMatrix::zeros(3, 3);
        y[(0, 1)] = c(0.7f64.sqrt(), 0.0);
        y[(1, 2)] = c(0.2f64.sqrt(), 0.0);
        y[(2, 0)] = c(0.1f64.sqrt(), 0.0);
        let nc = necessary_conditions(&x, &y).unwrap();
        assert!(nc.relative_entropy_left.abs() < 1e-14);
        assert!(nc.entropy_gap.abs() < 1e-14);
        assert!(!nc.relative_entropy_condition);
    }

    #[test]
    fn phi_gap_examples() {
        for r in [0.1, 0.7, 1.0, 3.0, -2.0] {
            assert!(phi_gap(r, r).unwrap().abs() < 1e-12);
        }
        assert_eq!(phi_gap(1.0, 1.0).unwrap(), 0.0);
        assert!(phi_gap(2.0, 0.5).unwrap() > 1e-3);
        assert!(phi_gap(0.0, 1.0).is_err());
    }

    #[test]
    fn block_partition_examples() {
        let x = StateMatrix::new(unit(2, 2, 0, 0)).unwrap();
        assert_eq!(block_partition(&x, &unit(2, 2, 1, 1)).unwrap().k, 1.0);
        assert_eq!(block_partition(&x, &unit(2, 2, 0, 1)).unwrap().k, 0.0);
    }

    #[test]
    fn regularize_example() {
        let x = StateMatrix::new(unit(2, 2, 0, 0)).unwrap();
        let xe = regularize(&x, 0.1).unwrap();
        let expected = real_diag(2, 2, &[1.0, 0.1]).unscale(1.01f64.sqrt());
        // the kernel singular vectors are fixed only up to a common phase
        assert!((xe.matrix()[(0, 0)] - expected[(0, 0)]).norm() < 1e-15);
        assert!((xe.matrix()[(1, 1)].norm() - expected[(1, 1)].re).abs() < 1e-15);
        assert!(regularize(&x, 0.0).is_err());
        let full = StateMatrix::new(real_diag(2, 2, &[0.6, 0.8])).unwrap();
        assert!(matches!(regularize(&full, 0.1), Err(EntanglementError::NotSingular)));
    }

    #[test]
    fn dispatch_examples() {
        let x = StateMatrix::new(unit(2, 2, 0, 0)).unwrap();
        let r = d2_dispatch(&x, &unit(2, 2, 1, 1)).unwrap();
        assert_eq!(r.branch, Branch::SingularDivergent);
        assert!(r.d2.is_infinite());
        let r = d2_dispatch(&x, &unit(2, 2, 0, 1)).unwrap();
        assert_eq!(r.branch, Branch::SingularFinite);
        assert_eq!(r.d2, SecondDerivative::Finite(0.0));
    }

    #[test]
    fn singular_closed_form_matches_curve() {
        let mut rng = rng_from_seed(11);
        for (n, m) in [(3, 3), (2, 3), (4, 3)] {
            // rank n-1 (or m-1) state
            let r = n.min(m) - 1;
            let a = complex_gaussian_matrix(&mut rng, n, r);
            let b = complex_gaussian_matrix(&mut rng, r, m);
            let x = StateMatrix::normalized(a * b).unwrap();
            assert!(x.is_singular());
            let y = random_tangent(&mut rng, &x);
            // remove the kernel-kernel block
            let part = block_partition(&x, &y).unwrap();
            let mut yt = part.u.adjoint() * &y * part.v_adj.adjoint();
            for i in part.rank..n {
                for j in part.rank..m {
                    yt[(i, j)] = c(0.0, 0.0);
                }
            }
            let y = &part.u * yt * &part.v_adj;
            let y = y.unscale(frobenius(&y));
            let rep = d2_dispatch(&x, &y).unwrap();
            assert_eq!(rep.branch, Branch::SingularFinite);
            let closed = rep.d2.finite().unwrap();
            let fd = fd2(&x, &y, 1e-4);
            assert!(
                (closed - fd).abs() < 1e-2 * closed.abs().max(1.0),
                "{n}x{m}: {closed} vs {fd}"
            );
        }
    }

    #[test]
    fn divergence_probe_slope() {
        let x = StateMatrix::new(unit(2, 2, 0, 0)).unwrap();
        let grid: Vec<f64> = (0..=12).map(|k| 10f64.powf(-2.0 - 0.25 * k as f64)).collect();
        let probe = divergence_probe(&x, &unit(2, 2, 1, 1), &grid).unwrap();
        assert_eq!(probe.k, 1.0);
        let target = 4.0 * 10f64.ln();
        assert!((probe.slope_per_decade - target).abs() < 0.1 * target);
        let doubled = divergence_probe(&x, &unit(2, 2, 1, 1).scale(2.0), &grid).unwrap();
        assert!((doubled.slope_per_decade / probe.slope_per_decade - 4.0).abs() < 0.1);
        let flat = divergence_probe(&x, &unit(2, 2, 0, 1), &grid).unwrap();
        assert!(flat.slope_per_decade.abs() < 1e-3);
        assert!(divergence_probe(&x, &unit(2, 2, 1, 1), &[0.0, 1e-3]).is_err());
    }

    #[test]
    fn affine_split_is_cubic() {
        let mut rng = rng_from_seed(12);
        let x = random_state(&mut rng, 3, 3);
        let y = random_tangent(&mut rng, &x);
        let (l0, r0) = affine_split_check(&x, &y, 0.0).unwrap();
        assert!((l0 - entropy(&x)).abs() < 1e-14 && (r0 - entropy(&x)).abs() < 1e-14);
        let res = |t: f64| {
            let (l, r) = affine_split_check(&x, &y, t).unwrap();
            (l - r).abs()
        };
        let ratio = res(1e-2) / res(5e-3);
        assert!(ratio > 6.0 && ratio < 10.0, "{ratio}");
    }
}
