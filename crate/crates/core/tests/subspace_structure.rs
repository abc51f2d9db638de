use entroscope_core::entanglement::StateMatrix;
use entroscope_core::matrix::{self, c, kron, real_diag, CMatrix, C64};
use entroscope_core::random::{complex_gaussian, complex_gaussian_matrix, rng_from_seed, Rng64};
use entroscope_core::subspace::{blockwise_basis, orthonormalize, random_subspace, BlockTag, BlockwiseBasis};
use nalgebra::DMatrix;

#[test]
fn random_subspace_projector_is_isotropic_on_average() {
    let (n, m, d) = (3, 3, 3);
    let dim = n * m;
    let seeds = 1000;
    let mut mean = DMatrix::<C64>::zeros(dim, dim);
    for seed in 0..seeds {
        let k = random_subspace(n, m, d, seed).unwrap();
        for b in k.basis() {
            let v: Vec<C64> = (0..dim).map(|a| b[(a / m, a % m)]).collect();
            for i in 0..dim {
                for j in 0..dim {
                    mean[(i, j)] += v[i] * v[j].conj();
                }
            }
        }
    }
    mean /= c(seeds as f64, 0.0);
    let target = DMatrix::<C64>::identity(dim, dim) * c(d as f64 / dim as f64, 0.0);
    let rel = (&mean - &target).norm() / target.norm();
    assert!(rel < 0.05, "relative deviation {rel}");
}

/// `n x n` matrix with the listed entries forced to zero.
fn masked(rng: &mut Rng64, n: usize, zero: impl Fn(usize, usize) -> bool) -> CMatrix {
    CMatrix::from_fn(
        n,
        n,
        |i, j| if zero(i, j) { c(0.0, 0.0) } else { complex_gaussian(rng) },
    )
}

/// Subspace containing `x` plus one element of each block pattern.
fn structured(rng: &mut Rng64, x: &CMatrix, r: usize) -> Vec<CMatrix> {
    let n = x.nrows();
    vec![
        x.clone(),
        masked(rng, n, |i, _| i >= r),
        masked(rng, n, |i, j| i >= r && j >= r),
        complex_gaussian_matrix(rng, n, n),
    ]
}

fn rotated(b: &BlockwiseBasis) -> Vec<CMatrix> {
    let v = b.v_adj.adjoint();
    b.elements.iter().map(|e| b.u.adjoint() * e * &v).collect()
}

#[test]
fn tensor_elements_without_kernel_blocks_avoid_w_type_factors() {
    let mut rng = rng_from_seed(42);
    let x1 = real_diag(3, 3, &[0.8, 0.6]);
    let x2 = real_diag(2, 2, &[1.0]);
    let (r1, r2) = (2, 1);
    let k1 = orthonormalize(&structured(&mut rng, &x1, r1)).unwrap();
    let k2 = orthonormalize(&structured(&mut rng, &x2, r2)).unwrap();
    let b1 = blockwise_basis(&k1, &StateMatrix::new(x1).unwrap()).unwrap();
    let b2 = blockwise_basis(&k2, &StateMatrix::new(x2).unwrap()).unwrap();
    let (f, g) = (rotated(&b1), rotated(&b2));
    let (n1, n2) = (3, 2);

    let touches_kernel = |idx: usize| idx / n2 >= r1 || idx % n2 >= r2;
    let forbidden: Vec<(usize, usize)> = (0..n1 * n2)
        .flat_map(|i| (0..n1 * n2).map(move |j| (i, j)))
        .filter(|&(i, j)| touches_kernel(i) && touches_kernel(j))
        .collect();
    let products: Vec<(usize, usize, CMatrix)> = (0..f.len())
        .flat_map(|a| (0..g.len()).map(move |b| (a, b)))
        .map(|(a, b)| (a, b, kron(&f[a], &g[b])))
        .collect();
    let map = CMatrix::from_fn(forbidden.len(), products.len(), |row, col| {
        products[col].2[forbidden[row]]
    });
    let svd = matrix::svd(&map).unwrap();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10).count();
    let v = svd.v();
    let null: Vec<_> = (rank..products.len()).map(|j| v.column(j).into_owned()).collect();
    assert!(null.len() >= 2, "only {} elements", null.len());

    let mut mixed_support = false;
    for trial in 0..5 {
        let mut alpha = nalgebra::DVector::<C64>::zeros(products.len());
        for (j, nv) in null.iter().enumerate() {
            alpha += nv * c((trial + j) as f64 * 0.37 + 0.1, 0.2 * j as f64 - 0.3);
        }
        let scale = alpha.norm();
        for (col, (a, b, _)) in products.iter().enumerate() {
            let w_type = b1.tags[*a] == BlockTag::W || b2.tags[*b] == BlockTag::W;
            if w_type {
                assert!(alpha[col].norm() < 1e-9 * scale, "w-type term {a},{b}: {}", alpha[col]);
            } else if (*a, *b) != (0, 0) && alpha[col].norm() > 1e-6 * scale {
                mixed_support = true;
            }
        }
    }
    assert!(mixed_support);
}
