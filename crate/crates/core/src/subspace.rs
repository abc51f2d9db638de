//! Subspaces of `C^{n x m}` with orthonormal bases under `<A, B> = Tr(A B*)`.

use crate::entanglement::StateMatrix;
use crate::matrix::{self, c, CMatrix, MatrixError, MatrixJson, C64};
use crate::random::{complex_gaussian_matrix, rng_from_seed};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gram matrices of bases must match the identity to this tolerance.
pub const GRAM_TOL: f64 = 1e-11;

/// Membership tolerance for `x in K`.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

/// Kraus completeness tolerance.
pub const KRAUS_TOL: f64 = 1e-8;

/// Relative norm below which Gram-Schmidt treats a vector as dependent.
const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubspaceError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("input spans only the zero matrix")]
    Empty,
    #[error("matrix shape {found:?} differs from {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("basis is not orthonormal (Gram residual {0:e})")]
    NotOrthonormal(f64),
    #[error("matrix is not in the subspace (residual {0:e})")]
    NotInSubspace(f64),
    #[error("subspace dimension {d} outside 1..={max}")]
    DimensionOutOfRange { d: usize, max: usize },
    #[error("direction is not orthogonal to the product state (overlap {0:e})")]
    NotOrthogonal(f64),
    #[error("state has full Schmidt rank")]
    NotSingular,
    #[error("declared dimensions {dims:?} do not factor a {rows}x{cols} matrix")]
    Dimensions {
        dims: (usize, usize, usize, usize),
        rows: usize,
        cols: usize,
    },
    #[error("Kraus operators violate completeness (residual {0:e})")]
    Kraus(f64),
    #[error("malformed subspace file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, SubspaceError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    n: usize,
    m: usize,
    basis: Vec<CMatrix>,
}

impl Subspace {
    /// Accepts a basis that is already orthonormal.
    pub fn from_orthonormal(n: usize, m: usize, basis: Vec<CMatrix>) -> Result<Self> {
        for b in &basis {
            if b.shape() != (n, m) {
                return Err(SubspaceError::ShapeMismatch {
                    expected: (n, m),
                    found: b.shape(),
                });
            }
        }
        let out = Subspace { n, m, basis };
        let residual = out.gram_residual();
        if residual > GRAM_TOL {
            return Err(SubspaceError::NotOrthonormal(residual));
        }
        Ok(out)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn basis(&self) -> &[CMatrix] {
        &self.basis
    }

    /// `max |<B_a, B_b> - delta_ab|`.
    pub fn gram_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, ba) in self.basis.iter().enumerate() {
            for (b, bb) in self.basis.iter().enumerate().skip(a) {
                let target = if a == b { c(1.0, 0.0) } else { c(0.0, 0.0) };
                worst = worst.max((matrix::inner(ba, bb) - target).norm());
            }
        }
        worst
    }

    fn check_shape(&self, x: &CMatrix) -> Result<()> {
        if x.shape() != (self.n, self.m) {
            return Err(SubspaceError::ShapeMismatch {
                expected: (self.n, self.m),
                found: x.shape(),
            });
        }
        Ok(())
    }

    /// Coordinates `c_a = <x, B_a>` of the orthogonal projection of `x`.
    pub fn coefficients(&self, x: &CMatrix) -> Result<DVector<C64>> {
        self.check_shape(x)?;
        Ok(DVector::from_iterator(
            self.dim(),
            self.basis.iter().map(|b| matrix::inner(x, b)),
        ))
    }

    /// `sum_a c_a B_a`.
    pub fn element(&self, coeffs: &DVector<C64>) -> CMatrix {
        let mut out = CMatrix::zeros(self.n, self.m);
        for (b, &ca) in self.basis.iter().zip(coeffs.iter()) {
            out += b * ca;
        }
        out
    }

    /// Frobenius distance from `x` to its projection onto the subspace.
    pub fn projection_residual(&self, x: &CMatrix) -> Result<f64> {
        let coeffs = self.coefficients(x)?;
        Ok(matrix::frobenius(&(x - self.element(&coeffs))))
    }

    pub fn contains(&self, x: &CMatrix) -> bool {
        self.projection_residual(x).map(|r| r < MEMBERSHIP_TOL).unwrap_or(false)
    }

    pub fn to_json(&self) -> String {
        let file = SubspaceJson {
            n: self.n,
            m: self.m,
            basis: self.basis.iter().map(MatrixJson::from).collect(),
        };
        serde_json::to_string(&file).expect("subspace serialization is infallible")
    }

    /// Parses `{"n", "m", "basis": [matrix, ...]}` and re-orthonormalizes the basis.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SubspaceJson = serde_json::from_str(text).map_err(|e| SubspaceError::Format(e.to_string()))?;
        let basis = file
            .basis
            .iter()
            .map(CMatrix::try_from)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let out = orthonormalize(&basis)?;
        if out.shape() != (file.n, file.m) {
            return Err(SubspaceError::ShapeMismatch {
                expected: (file.n, file.m),
                found: out.shape(),
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SubspaceJson {
    n: usize,
    m: usize,
    basis: Vec<MatrixJson>,
}

/// Gram-Schmidt with one re-orthogonalization pass. Returns the vectors
/// that survive, normalized, in input order.
fn gram_schmidt<T, F>(candidates: &[T], inner: F) -> Vec<T>
where
    T: Clone + std::ops::SubAssign + std::ops::Mul<C64, Output = T>,
    for<'a> &'a T: std::ops::Mul<C64, Output = T>,
    F: Fn(&T, &T) -> C64,
{
    let mut out: Vec<T> = Vec::new();
    for v in candidates {
        let original = inner(v, v).re.sqrt();
        if original == 0.0 {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &out {
                let proj = inner(&w, q);
                w -= q * proj;
            }
        }
        let norm = inner(&w, &w).re.sqrt();
        if norm > DEPENDENCE_TOL * original {
            out.push(w * c(1.0 / norm, 0.0));
        }
    }
    out
}

fn orthonormalize_vectors(candidates: &[DVector<C64>]) -> Vec<DVector<C64>> {
    gram_schmidt(candidates, |a, b| b.dotc(a))
}

/// Orthonormal basis of the span of `list`, preserving input order.
pub fn orthonormalize(list: &[CMatrix]) -> Result<Subspace> {
    let first = list.first().ok_or(SubspaceError::Empty)?;
    let shape = first.shape();
    for b in list {
        if b.shape() != shape {
            return Err(SubspaceError::ShapeMismatch {
                expected: shape,
                found: b.shape(),
            });
        }
    }
    let basis = gram_schmidt(list, matrix::inner);
    if basis.is_empty() {
        return Err(SubspaceError::Empty);
    }
    Ok(Subspace {
        n: shape.0,
        m: shape.1,
        basis,
    })
}

/// Standard basis vector `e_a` of `C^d`.
fn standard_vector(d: usize, a: usize) -> DVector<C64> {
    let mut v = DVector::zeros(d);
    v[a] = c(1.0, 0.0);
    v
}

/// Orthonormal basis of `{y in K : <x, y> = 0}`; empty when `dim K = 1`.
pub fn complement(k: &Subspace, x: &StateMatrix) -> Result<Subspace> {
    let coeffs = complement_coefficients(k, x.matrix())?;
    Ok(Subspace {
        n: k.n,
        m: k.m,
        basis: coeffs.iter().map(|v| k.element(v)).collect(),
    })
}

/// Coordinates (in `K`'s basis) of an orthonormal basis of `x^perp` in `K`.
pub fn complement_coefficients(k: &Subspace, x: &CMatrix) -> Result<Vec<DVector<C64>>> {
    let residual = k.projection_residual(x)?;
    if residual > MEMBERSHIP_TOL {
        return Err(SubspaceError::NotInSubspace(residual));
    }
    let cx = k.coefficients(x)?;
    let d = k.dim();
    let mut candidates = vec![cx];
    candidates.extend((0..d).map(|a| standard_vector(d, a)));
    let mut out = orthonormalize_vectors(&candidates);
    out.remove(0);
    Ok(out)
}

/// Span of all `A (x) B` with `A` in `K1` and `B` in `K2`; basis element
/// `a * dim(K2) + b` is `kron(K1_a, K2_b)`.
pub fn tensor(k1: &Subspace, k2: &Subspace) -> Subspace {
    let mut basis = Vec::with_capacity(k1.dim() * k2.dim());
    for a in &k1.basis {
        for b in &k2.basis {
            basis.push(matrix::kron(a, b));
        }
    }
    Subspace {
        n: k1.n * k2.n,
        m: k1.m * k2.m,
        basis,
    }
}

/// `y = sum_l c_l A_l (x) B_l` with orthonormal `{A_l}` and `{B_l}`.
#[derive(Debug, Clone)]
pub struct OperatorSchmidt {
    pub coefficients: Vec<f64>,
    pub first: Vec<CMatrix>,
    pub second: Vec<CMatrix>,
}

impl OperatorSchmidt {
    pub fn reassemble(&self) -> Option<CMatrix> {
        let mut iter = self
            .coefficients
            .iter()
            .zip(self.first.iter().zip(&self.second))
            .map(|(&cl, (a, b))| matrix::kron(a, b).scale(cl));
        let first = iter.next()?;
        Some(iter.fold(first, |acc, t| acc + t))
    }
}

fn check_dims(y: &CMatrix, dims: (usize, usize, usize, usize)) -> Result<()> {
    let (n1, m1, n2, m2) = dims;
    if y.nrows() != n1 * n2 || y.ncols() != m1 * m2 {
        return Err(SubspaceError::Dimensions {
            dims,
            rows: y.nrows(),
            cols: y.ncols(),
        });
    }
    Ok(())
}

/// Operator Schmidt decomposition through the realignment
/// `R[(i1, j1), (i2, j2)] = y[(i1, i2), (j1, j2)]`.
///
/// Each first factor is rotated so its leading nonzero entry is real and
/// positive; the compensating phase goes into the second factor.
pub fn operator_schmidt(y: &CMatrix, dims: (usize, usize, usize, usize)) -> Result<OperatorSchmidt> {
    check_dims(y, dims)?;
    let (n1, m1, n2, m2) = dims;
    let realigned = CMatrix::from_fn(n1 * m1, n2 * m2, |a, b| {
        let (i1, j1) = (a / m1, a % m1);
        let (i2, j2) = (b / m2, b % m2);
        y[(i1 * n2 + i2, j1 * m2 + j2)]
    });
    let svd = matrix::svd(&realigned)?;
    let keep = if matrix::max_abs(y) == 0.0 { 0 } else { svd.rank() };
    let mut out = OperatorSchmidt {
        coefficients: Vec::with_capacity(keep),
        first: Vec::with_capacity(keep),
        second: Vec::with_capacity(keep),
    };
    for l in 0..keep {
        let mut a = CMatrix::from_fn(n1, m1, |i, j| svd.u[(i * m1 + j, l)]);
        let mut b = CMatrix::from_fn(n2, m2, |i, j| svd.v_adj[(l, i * m2 + j)]);
        if let Some(lead) = a.iter().find(|z| z.norm() > 1e-12).copied() {
            let phase = lead / lead.norm();
            a *= phase.conj();
            b *= phase;
        }
        out.coefficients.push(svd.singular_values[l]);
        out.first.push(a);
        out.second.push(b);
    }
    Ok(out)
}

/// `y = c1 x1 (x) y2 + c2 y1 (x) x2 + c3 y'` with `y2 perp x2`, `y1 perp x1`
/// and `y'` in `x1^perp (x) x2^perp`.
#[derive(Debug, Clone)]
pub struct DirectionDecomposition {
    pub coefficients: [f64; 3],
    /// Unit `y2`, the partner of `x1`; zero when `c1 = 0`.
    pub y2: CMatrix,
    /// Unit `y1`, the partner of `x2`; zero when `c2 = 0`.
    pub y1: CMatrix,
    /// Unit cross term; zero when `c3 = 0`.
    pub cross: CMatrix,
    pub cross_schmidt: OperatorSchmidt,
}

impl DirectionDecomposition {
    pub fn reassemble(&self, x1: &CMatrix, x2: &CMatrix) -> CMatrix {
        let [c1, c2, c3] = self.coefficients;
        matrix::kron(x1, &self.y2).scale(c1) + matrix::kron(&self.y1, x2).scale(c2) + self.cross.scale(c3)
    }
}

fn unit_or_zero(m: CMatrix) -> (f64, CMatrix) {
    let norm = matrix::frobenius(&m);
    if norm < 1e-14 {
        (0.0, CMatrix::zeros(m.nrows(), m.ncols()))
    } else {
        (norm, m.unscale(norm))
    }
}

/// Splits a direction at the product state `x1 (x) x2` (both unit norm).
/// The coefficients are the component norms, so they square-sum to `|y|^2`.
pub fn split_direction(y: &CMatrix, x1: &CMatrix, x2: &CMatrix) -> Result<DirectionDecomposition> {
    let (n1, m1) = x1.shape();
    let (n2, m2) = x2.shape();
    let dims = (n1, m1, n2, m2);
    check_dims(y, dims)?;
    let overlap = matrix::inner(y, &matrix::kron(x1, x2)).norm();
    if overlap > MEMBERSHIP_TOL {
        return Err(SubspaceError::NotOrthogonal(overlap));
    }
    // contract the first factor with x1, the second with x2
    let mut from_first = CMatrix::zeros(n2, m2);
    let mut from_second = CMatrix::zeros(n1, m1);
    for i1 in 0..n1 {
        for j1 in 0..m1 {
            for i2 in 0..n2 {
                for j2 in 0..m2 {
                    let v = y[(i1 * n2 + i2, j1 * m2 + j2)];
                    from_first[(i2, j2)] += x1[(i1, j1)].conj() * v;
                    from_second[(i1, j1)] += x2[(i2, j2)].conj() * v;
                }
            }
        }
    }
    let cross = y - matrix::kron(x1, &from_first) - matrix::kron(&from_second, x2);
    let (c1, y2) = unit_or_zero(from_first);
    let (c2, y1) = unit_or_zero(from_second);
    let (c3, cross) = unit_or_zero(cross);
    let cross_schmidt = operator_schmidt(&cross, dims)?;
    Ok(DirectionDecomposition {
        coefficients: [c1, c2, c3],
        y2,
        y1,
        cross,
        cross_schmidt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockTag {
    /// Supported on the range-range block only.
    X,
    /// Zero below the range rows.
    Y,
    /// Zero kernel-kernel block.
    Z,
    W,
}

/// Basis of `K` adapted to the block structure of a rank-deficient state.
#[derive(Debug, Clone)]
pub struct BlockwiseBasis {
    pub elements: Vec<CMatrix>,
    pub coefficients: Vec<DVector<C64>>,
    pub tags: Vec<BlockTag>,
    /// `(p, q, r, s)`
    pub counts: (usize, usize, usize, usize),
    /// Rank of the state.
    pub rank: usize,
    /// `x = u [[x11, 0], [0, 0]] v_adj`.
    pub u: CMatrix,
    pub v_adj: CMatrix,
}

/// Null space (coordinates) of the linear map sending `c` to the entries of
/// `sum_a c_a B'_a` listed in `positions`.
fn null_space(rotated: &[CMatrix], positions: &[(usize, usize)]) -> Result<Vec<DVector<C64>>> {
    let d = rotated.len();
    if positions.is_empty() {
        return Ok((0..d).map(|a| standard_vector(d, a)).collect());
    }
    let a = CMatrix::from_fn(positions.len(), d, |row, col| rotated[col][positions[row]]);
    let svd = matrix::svd(&a)?;
    let rank = svd.singular_values.iter().filter(|&&s| s > DEPENDENCE_TOL).count();
    let v = svd.v();
    Ok((rank..d).map(|j| v.column(j).into_owned()).collect())
}

/// Nested orthonormal bases: `x`-type elements live in the range-range
/// block, `y`-type extend them by the range-kernel block, `z`-type by the
/// kernel-range block, and `w`-type complete `K`. The first element is `x`.
pub fn blockwise_basis(k: &Subspace, x: &StateMatrix) -> Result<BlockwiseBasis> {
    if !x.is_singular() {
        return Err(SubspaceError::NotSingular);
    }
    let residual = k.projection_residual(x.matrix())?;
    if residual > MEMBERSHIP_TOL {
        return Err(SubspaceError::NotInSubspace(residual));
    }
    let svd = matrix::svd(x.matrix())?;
    let r = svd.rank();
    let (n, m) = k.shape();
    let v = svd.v();
    let rotated: Vec<CMatrix> = k.basis.iter().map(|b| svd.u.adjoint() * b * &v).collect();

    let block = |rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| -> Vec<(usize, usize)> {
        rows.flat_map(|i| cols.clone().map(move |j| (i, j))).collect()
    };
    let b12 = block(0..r, r..m);
    let b21 = block(r..n, 0..r);
    let b22 = block(r..n, r..m);
    let only_11: Vec<_> = b12.iter().chain(&b21).chain(&b22).copied().collect();
    let top_rows: Vec<_> = b21.iter().chain(&b22).copied().collect();

    let stages = [
        null_space(&rotated, &only_11)?,
        null_space(&rotated, &top_rows)?,
        null_space(&rotated, &b22)?,
        (0..k.dim()).map(|a| standard_vector(k.dim(), a)).collect(),
    ];
    let mut candidates = vec![k.coefficients(x.matrix())?];
    let mut coefficients: Vec<DVector<C64>> = Vec::new();
    let mut counts = [0usize; 4];
    for (s, stage) in stages.iter().enumerate() {
        candidates.extend(stage.iter().cloned());
        let before = coefficients.len();
        let mut all = coefficients.clone();
        all.append(&mut candidates);
        coefficients = orthonormalize_vectors(&all);
        counts[s] = coefficients.len() - before;
    }
    let tags = [BlockTag::X, BlockTag::Y, BlockTag::Z, BlockTag::W]
        .iter()
        .zip(counts)
        .flat_map(|(&t, n)| std::iter::repeat_n(t, n))
        .collect();
    Ok(BlockwiseBasis {
        elements: coefficients.iter().map(|cf| k.element(cf)).collect(),
        coefficients,
        tags,
        counts: (counts[0], counts[1], counts[2], counts[3]),
        rank: r,
        u: svd.u.clone(),
        v_adj: svd.v_adj.clone(),
    })
}

/// Span of `d` independent standard complex Gaussian `n x m` matrices.
pub fn random_subspace(n: usize, m: usize, d: usize, seed: u64) -> Result<Subspace> {
    if d == 0 || d > n * m {
        return Err(SubspaceError::DimensionOutOfRange { d, max: n * m });
    }
    let mut rng = rng_from_seed(seed);
    let list: Vec<CMatrix> = (0..d).map(|_| complex_gaussian_matrix(&mut rng, n, m)).collect();
    orthonormalize(&list)
}

/// Stinespring isometry `V[(o, e), j] = K_e[o, j]` of a Kraus list.
#[derive(Debug, Clone)]
pub struct ChannelIsometry {
    pub v: CMatrix,
    pub kraus: Vec<CMatrix>,
    pub d_in: usize,
    pub d_out: usize,
    pub d_env: usize,
}

impl ChannelIsometry {
    pub fn from_kraus(kraus: Vec<CMatrix>) -> Result<Self> {
        let first = kraus.first().ok_or(SubspaceError::Empty)?;
        let (d_out, d_in) = first.shape();
        for k in &kraus {
            if k.shape() != (d_out, d_in) {
                return Err(SubspaceError::ShapeMismatch {
                    expected: (d_out, d_in),
                    found: k.shape(),
                });
            }
        }
        let d_env = kraus.len();
        let mut completeness = -CMatrix::identity(d_in, d_in);
        for k in &kraus {
            completeness += k.adjoint() * k;
        }
        let residual = matrix::max_abs(&completeness);
        if residual > KRAUS_TOL {
            return Err(SubspaceError::Kraus(residual));
        }
        let v = CMatrix::from_fn(d_out * d_env, d_in, |row, j| kraus[row % d_env][(row / d_env, j)]);
        Ok(ChannelIsometry {
            v,
            kraus,
            d_in,
            d_out,
            d_env,
        })
    }

    /// Parses a JSON array of Kraus matrices.
    pub fn from_json(text: &str) -> Result<Self> {
        let list: Vec<MatrixJson> = serde_json::from_str(text).map_err(|e| SubspaceError::Format(e.to_string()))?;
        let kraus = list
            .iter()
            .map(CMatrix::try_from)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_kraus(kraus)
    }

    /// `N(psi psi*) = sum_e K_e psi psi* K_e*`.
    pub fn output_state(&self, psi: &DVector<C64>) -> CMatrix {
        let mut out = CMatrix::zeros(self.d_out, self.d_out);
        for k in &self.kraus {
            let phi = k * psi;
            out += &phi * phi.adjoint();
        }
        out
    }

    /// The input vector whose image under `V` is the subspace element `x`.
    pub fn input_for(&self, x: &CMatrix) -> DVector<C64> {
        let flat = DVector::from_fn(self.d_out * self.d_env, |row, _| {
            x[(row / self.d_env, row % self.d_env)]
        });
        self.v.adjoint() * flat
    }
}

/// Output subspace `{V psi}` viewed as `d_out x d_env` matrices.
pub fn channel_to_subspace(channel: &ChannelIsometry) -> Result<Subspace> {
    let (d_out, d_env) = (channel.d_out, channel.d_env);
    let columns: Vec<CMatrix> = (0..channel.d_in)
        .map(|j| CMatrix::from_fn(d_out, d_env, |o, e| channel.v[(o * d_env + e, j)]))
        .collect();
    orthonormalize(&columns)
}
