//! Numerical properties: derivatives, symmetry, integrator order, quantiles
//! and the coverage of the sampled bounds.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rssa_core::bounds::{build_ellipsoid_bound, build_polytope_bound, lie_bounds_at, BoundBuilder, BoundKind, UncertaintyBound};
use rssa_core::dynamics::{sample_dynamics, ScaraModel, SegwayModel, UncertainSystem};
use rssa_core::experiments::rk4_step;
use rssa_core::safety_index::{constraint_index, grad_phi, gamma, parametric_branch, phi, SafetyIndexParams};
use rssa_core::stats::chi_square_quantile;
use rssa_core::types::{ConvexSet, StateVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn random_state<M: UncertainSystem>(model: &M, rng: &mut ChaCha8Rng) -> StateVector {
    let b = model.state_box();
    StateVector::new((0..b.dim()).map(|i| rng.random_range(b.lower()[i]..b.upper()[i])).collect())
}

fn central_difference<F: Fn(&StateVector) -> f64>(f: F, x: &StateVector, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut a = x.as_slice().to_vec();
        let mut b = a.clone();
        a[i] += h;
        b[i] -= h;
        (f(&StateVector::new(a)) - f(&StateVector::new(b))) / (2.0 * h)
    })
}

fn check_gradients<M: UncertainSystem>(model: &M, params: &SafetyIndexParams, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for _ in 0..1000 {
        let x = random_state(model, &mut rng);
        let idx = constraint_index(params, model, &x);
        let fd = central_difference(|s| parametric_branch(params, model, s), &x, 1e-6);
        let rel = (&idx.grad - &fd).norm() / idx.grad.norm().max(1e-3);
        assert!(rel < 1e-5, "branch gradient at {:?}: rel err {rel:e}", x.as_slice());
        if let Ok(g) = grad_phi(params, model, &x) {
            let fd = central_difference(|s| phi(params, model, s), &x, 1e-6);
            // finite differences straddling the switching surface are not informative
            let near_switch = (phi(params, model, &x) - parametric_branch(params, model, &x)).abs() < 1e-4
                && phi(params, model, &x) != parametric_branch(params, model, &x);
            if !near_switch {
                let rel = (&g - &fd).norm() / g.norm().max(1e-3);
                assert!(rel < 1e-5, "phi gradient at {:?}: rel err {rel:e}", x.as_slice());
            }
        }
        checked += 1;
    }
    checked
}

#[test]
fn scara_gradients_match_finite_differences() {
    let model = ScaraModel::default();
    for params in [SafetyIndexParams::learned_scara(), SafetyIndexParams::hand_designed(), SafetyIndexParams::user_index()] {
        assert_eq!(check_gradients(&model, &params, 1), 1000);
    }
}

#[test]
fn segway_gradients_match_finite_differences() {
    let model = SegwayModel::default();
    assert_eq!(check_gradients(&model, &SafetyIndexParams::segway(), 2), 1000);
}

#[test]
fn mass_matrices_are_symmetric() {
    let scara = ScaraModel::default();
    let segway = SegwayModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let m = scara.mass_matrix(rng.random_range(-3.2..3.2), rng.random_range(0.1..5.0));
        assert!((m[(0, 1)] - m[(1, 0)]).abs() <= 1e-10);
        let m = segway.mass_matrix(rng.random_range(-1.0..1.0));
        assert!((m[(0, 1)] - m[(1, 0)]).abs() <= 1e-10);
    }
}

#[test]
fn rk4_is_fourth_order() {
    let model = ScaraModel::default();
    let x0 = DVector::from_vec(vec![-1.2, 0.7, 0.8, -0.5]);
    let u = DVector::from_vec(vec![1.5, -0.7]);
    let run = |h: f64| {
        let steps = (0.4 / h).round() as usize;
        let mut x = x0.clone();
        for _ in 0..steps {
            x = rk4_step(&model, 1.0, &x, &u, h).unwrap();
        }
        x
    };
    let (a, b, c) = (run(0.02), run(0.01), run(0.005));
    let ratio = (&a - &b).norm() / (&b - &c).norm();
    let order = ratio.log2();
    assert!((order - 4.0).abs() < 0.3, "observed order {order}");
}

#[test]
fn chi_square_quantiles_match_reference() {
    for dof in 1..=30 {
        let reference = ChiSquared::new(dof as f64).unwrap();
        for p in [0.01, 0.5, 0.9, 0.95, 0.99, 0.999] {
            let ours = chi_square_quantile(dof as f64, p).unwrap();
            let theirs = reference.inverse_cdf(p);
            assert!((ours - theirs).abs() <= 1e-8 * theirs.max(1.0), "dof {dof} p {p}: {ours} vs {theirs}");
        }
    }
}

#[test]
fn polytope_bound_covers_its_samples_after_projection() {
    let model = ScaraModel::default();
    let params = SafetyIndexParams::learned_scara();
    let builder = BoundBuilder::new(&model, BoundKind::Polytope, 50, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let x = random_state(&model, &mut rng);
        let bound = builder.build(&model, &x).unwrap();
        let lie = lie_bounds_at(&model, &params, &x, &bound).unwrap();
        let grad = constraint_index(&params, &model, &x).grad;
        let (ConvexSet::Polytope(vf), ConvexSet::Polytope(vg)) = (&lie.v_f, &lie.v_g) else {
            panic!("polytope bound projects to polytopes");
        };
        for s in builder.samples(&model, &x).unwrap() {
            assert!(vf.contains(&DVector::from_element(1, grad.dot(s.f())), 1e-9));
            assert!(vg.contains(&(s.g().transpose() * &grad), 1e-9));
        }
        // c is -gamma(phi) - max V_f on the constrained branch
        let branch = constraint_index(&params, &model, &x).value;
        let top = vf.support(&DVector::from_element(1, 1.0)).0;
        assert!((lie.c - (-gamma(&params, branch) - top)).abs() < 1e-9);
    }
}

#[test]
fn ellipsoid_fit_covers_fresh_samples() {
    // with one scalar parameter the fitted ellipsoid is very conservative, so
    // coverage of fresh draws stays at or above the nominal level
    let model = SegwayModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..20 {
        let x = random_state(&model, &mut rng);
        let fit = sample_dynamics(&model, &x, trial, 50).unwrap();
        let UncertaintyBound::Ellipsoid { sigma_f, sigma_g, .. } = build_ellipsoid_bound(&fit, 0.95).unwrap() else {
            panic!("ellipsoid bound expected");
        };
        let fresh = sample_dynamics(&model, &x, 1000 + trial, 2000).unwrap();
        let covered = fresh
            .iter()
            .filter(|s| sigma_f.contains(s.f(), 1e-9) && sigma_g.contains(s.g_flat(), 1e-9))
            .count();
        assert!(covered as f64 / fresh.len() as f64 >= 0.95, "coverage {covered}/2000");
    }
}

#[test]
fn analytic_ellipsoid_matches_monte_carlo_coverage() {
    let model = SegwayModel::default();
    let builder = BoundBuilder::new(&model, BoundKind::AnalyticEllipsoid { confidence: 0.9 }, 1, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_state(&model, &mut rng);
    let UncertaintyBound::Ellipsoid { sigma_g, .. } = builder.build(&model, &x).unwrap() else {
        panic!("ellipsoid bound expected");
    };
    let draws = sample_dynamics(&model, &x, 77, 20000).unwrap();
    let inside = draws.iter().filter(|s| sigma_g.contains(s.g_flat(), 1e-9)).count() as f64 / 20000.0;
    // one-degree-of-freedom quantile on a one-parameter family: nominal coverage,
    // up to sampling noise (standard error about 0.002)
    assert!((inside - 0.9).abs() < 0.01, "coverage {inside}");
}

#[test]
fn polytope_hull_of_one_sample_is_that_sample() {
    let model = ScaraModel::default();
    let x = StateVector::from_slice(&[-1.0, 0.5, 0.3, -0.2]);
    let s = sample_dynamics(&model, &x, 0, 1).unwrap();
    let UncertaintyBound::Polytope { sigma_f, .. } = build_polytope_bound(&s).unwrap() else {
        panic!("polytope bound expected");
    };
    assert!(sigma_f.distance(s[0].f()) < 1e-12);
}
