use entroscope_core::entanglement::{self, StateMatrix};
use entroscope_core::matrix::{c, frobenius, kron, unit, CMatrix};
use entroscope_core::optimizer::{classify, gradient, minimize, tangent_frame, Classification, MinimizeOptions};
use entroscope_core::par::Execution;
use entroscope_core::subspace::{orthonormalize, random_subspace, split_direction, tensor, Subspace};

fn tensor_point(k1: &Subspace, k2: &Subspace, x1: &CMatrix, x2: &CMatrix) -> (Subspace, StateMatrix) {
    let k = tensor(k1, k2);
    let x = StateMatrix::normalized(kron(x1, x2)).unwrap();
    assert!(k.contains(x.matrix()));
    (k, x)
}

#[test]
fn criticality_carries_over_to_tensor_points() {
    let opts = MinimizeOptions {
        restarts: 4,
        ..Default::default()
    };
    let mut checked = 0;
    for trial in 0..4u64 {
        let k1 = random_subspace(3, 3, 3, 100 + 2 * trial).unwrap();
        let k2 = random_subspace(3, 3, 3, 101 + 2 * trial).unwrap();
        let r1 = minimize(&k1, trial, &opts).unwrap();
        let r2 = minimize(&k2, trial + 50, &opts).unwrap();
        if !(r1.classification.is_critical() && r2.classification.is_critical()) {
            continue;
        }
        let (k, x) = tensor_point(&k1, &k2, &r1.x_star, &r2.x_star);
        assert!((entanglement::entropy(&x) - r1.value - r2.value).abs() < 1e-10);
        let frame = tangent_frame(&k, &x).unwrap();
        let g = gradient(&x, &frame);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-7, "trial {trial}: {norm}");
        checked += 1;
        if r1.classification == Classification::NondegenerateMin
            && r2.classification == Classification::NondegenerateMin
        {
            let report = classify(&k, &x, 1e-7).unwrap();
            assert!(
                report.hessian_spectrum[0] > 1e-9,
                "trial {trial}: {:?}",
                report.hessian_spectrum
            );
            assert_eq!(report.classification, Classification::NondegenerateMin);
        }
    }
    assert!(checked > 0);
}

#[test]
fn degenerate_factor_gives_degenerate_tensor_minimum() {
    // every element of span{E11, E12} is a product state
    let k1 = orthonormalize(&[unit(2, 2, 0, 0), unit(2, 2, 0, 1)]).unwrap();
    let x1 = unit(2, 2, 0, 0);
    let r1 = classify(&k1, &StateMatrix::new(x1.clone()).unwrap(), 1e-9).unwrap();
    assert_eq!(r1.classification, Classification::DegenerateMin);

    let k2 = random_subspace(3, 3, 3, 7).unwrap();
    let r2 = minimize(&k2, 3, &MinimizeOptions::default()).unwrap();
    assert_eq!(r2.classification, Classification::NondegenerateMin);

    let (k, x) = tensor_point(&k1, &k2, &x1, &r2.x_star);
    let report = classify(&k, &x, 1e-9).unwrap();
    assert_eq!(report.classification, Classification::DegenerateMin);
    assert!(!report.soft_directions.is_empty());
    for y in &report.soft_directions {
        // soft directions are y1 (x) x2
        let split = split_direction(y, &x1, &r2.x_star).unwrap();
        assert!((split.coefficients[1] - 1.0).abs() < 1e-8, "{:?}", split.coefficients);
        let along = entanglement::curve_entropy(&x, y, 0.05).unwrap();
        assert!((along - r2.value).abs() < 1e-10);
    }
}

#[test]
fn maximally_entangled_pencil_is_reproducible_across_seeds() {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let id = CMatrix::identity(2, 2).scale(s);
    let mut flip = CMatrix::zeros(2, 2);
    flip[(0, 1)] = c(s, 0.0);
    flip[(1, 0)] = c(s, 0.0);
    let k = orthonormalize(&[id, flip]).unwrap();
    let opts = MinimizeOptions {
        restarts: 3,
        ..Default::default()
    };
    let values: Vec<f64> = (0..5).map(|seed| minimize(&k, seed, &opts).unwrap().value).collect();
    for v in &values {
        assert!((v - values[0]).abs() < 1e-9, "{values:?}");
    }
}

#[test]
fn restarts_are_deterministic_across_execution_modes() {
    let k = random_subspace(3, 4, 4, 11).unwrap();
    let par = MinimizeOptions {
        restarts: 6,
        execution: Execution::Parallel,
        ..Default::default()
    };
    let seq = MinimizeOptions {
        execution: Execution::Sequential,
        ..par
    };
    let a = minimize(&k, 5, &par).unwrap();
    let b = minimize(&k, 5, &seq).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a.restart, b.restart);
    assert_eq!(a.hessian_spectrum, b.hessian_spectrum);
    for (la, lb) in a.local.iter().zip(&b.local) {
        assert_eq!(la.value.to_bits(), lb.value.to_bits());
    }
    assert!(frobenius(&(a.x_star - b.x_star)) == 0.0);
}

#[test]
fn large_subspaces_contain_product_states() {
    let opts = MinimizeOptions {
        restarts: 10,
        ..Default::default()
    };
    let k = random_subspace(3, 3, 5, 21).unwrap();
    let res = minimize(&k, 21, &opts).unwrap();
    assert!(res.value < 1e-6, "{}", res.value);
    assert!(
        res.classification.is_critical(),
        "{:?} {}",
        res.classification,
        res.grad_norm
    );
}

#[test]
fn every_restart_is_reported() {
    let k = random_subspace(2, 3, 3, 4).unwrap();
    let opts = MinimizeOptions {
        restarts: 5,
        ..Default::default()
    };
    let res = minimize(&k, 8, &opts).unwrap();
    assert_eq!(res.local.len(), 5);
    let best = res.local.iter().map(|l| l.value).fold(f64::INFINITY, f64::min);
    assert_eq!(best, res.value);
    assert!(res.local.iter().enumerate().all(|(i, l)| l.restart == i));
}
