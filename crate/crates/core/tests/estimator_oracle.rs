use cpls_core::bases::BasisFamily;
use cpls_core::design::{DesignSystem, DimPair};
use cpls_core::estimator::{contrast, solve_constrained};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_system<R: Rng>(rng: &mut R, dim: usize) -> DesignSystem {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let gram = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5;
    let zvec = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
    let m1 = rng.random_range(0..dim);
    let mut dvec = DVector::zeros(dim);
    for k in m1..dim {
        dvec[k] = rng.random_range(-1.5..1.5);
    }
    if dvec.iter().all(|&v| v == 0.0) {
        dvec[dim - 1] = 1.0;
    }
    DesignSystem {
        dims: DimPair::new(m1, dim - m1),
        gram,
        zvec,
        dvec,
        t0: 0.0,
        horizon: 1.0,
        t_norm: 1.0,
        n_paths: 100,
        phi: BasisFamily::Hermite,
        psi: BasisFamily::Hermite,
    }
}

/// Minimizes the contrast over `{theta : <theta, d> = 0}` through an
/// orthonormal basis of the hyperplane.
fn null_space_solution(sys: &DesignSystem) -> DVector<f64> {
    let dim = sys.gram.nrows();
    let d = &sys.dvec;
    let projector = DMatrix::identity(dim, dim) - d * d.transpose() / d.norm_squared();
    let eig = projector.symmetric_eigen();
    let keep: Vec<usize> = (0..dim).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
    assert_eq!(keep.len(), dim - 1);
    let basis = DMatrix::from_fn(dim, dim - 1, |r, c| eig.eigenvectors[(r, keep[c])]);
    let reduced = basis.transpose() * &sys.gram * &basis;
    let rhs = basis.transpose() * &sys.zvec;
    let w = reduced.lu().solve(&rhs).expect("reduced system is nonsingular");
    basis * w
}

#[test]
fn closed_form_matches_null_space_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..500 {
        let dim = rng.random_range(2..=12);
        let sys = random_system(&mut rng, dim);
        let fit = solve_constrained(&sys).unwrap();
        let brute = null_space_solution(&sys);
        for k in 0..dim {
            assert!(
                (fit.theta[k] - brute[k]).abs() < 1e-8,
                "case {case} coordinate {k}: {} vs {}",
                fit.theta[k],
                brute[k]
            );
        }
    }
}

#[test]
fn kkt_conditions_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let dim = rng.random_range(2..=12);
        let sys = random_system(&mut rng, dim);
        let fit = solve_constrained(&sys).unwrap();
        let r = fit.residuals(&sys);
        assert!(r.max() < 1e-10, "{r:?}");
        // gamma_N equals the contrast at the optimum
        let c = contrast(&sys, &fit.theta);
        assert!((c - fit.gamma_value).abs() < 1e-9 * (1.0 + c.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feasible_perturbations_do_not_improve(seed in any::<u64>(), step in -1.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.random_range(2..=10);
        let sys = random_system(&mut rng, dim);
        let fit = solve_constrained(&sys).unwrap();
        let mut dir = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let proj = dir.dot(&sys.dvec) / sys.dvec.norm_squared();
        dir -= &sys.dvec * proj;
        let base = contrast(&sys, &fit.theta);
        let moved = contrast(&sys, &(&fit.theta + dir * step));
        prop_assert!(moved >= base - 1e-10 * (1.0 + base.abs()));
    }

    #[test]
    fn zero_constraint_reduces_to_plain_least_squares(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.random_range(1..=8);
        let mut sys = random_system(&mut rng, dim.max(2));
        sys.dvec.fill(0.0);
        let fit = solve_constrained(&sys).unwrap();
        let plain = sys.gram.clone().cholesky().unwrap().solve(&sys.zvec);
        prop_assert!((fit.theta - plain).amax() < 1e-10);
        prop_assert_eq!(fit.lambda_multiplier, 0.0);
    }
}
