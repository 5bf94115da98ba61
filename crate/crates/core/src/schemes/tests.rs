use super::*;
use crate::noise::NoiseKind;
use crate::phi::PhiMethod;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn h1(n: usize) -> NoiseSpec {
    NoiseSpec::new(NoiseKind::PowerLaw { r: 1.0 }, 1.0, n).unwrap()
}

fn node_grid(n: usize) -> Grid {
    Grid::unit_square(n, n, Layout::NodeCentered).unwrap()
}

fn dense() -> PhiConfig {
    PhiConfig::with_method(PhiMethod::Dense)
}

/// Linear problem whose operator is replaced by `diag(a)`.
fn diagonal_problem(a: Vec<f64>, f: Nonlinearity) -> Problem {
    let mut p = Problem::linear(node_grid(2), 1.0, 0.0, h1(2), Some(vec![1.0; 4]), 1.0)
        .unwrap()
        .with_nonlinearity(f);
    p.operator = Stencil::from_diagonal(2, 2, a).unwrap();
    p
}

#[test]
fn setd1_scalar_oracle() {
    let p = diagonal_problem(vec![-1.0; 4], Nonlinearity::LinearReaction { lambda: 1.0 });
    let phi = PhiEvaluator::new(&p.operator, dense()).unwrap();
    let x = step_setd1(&[1.0; 4], &p, 0.1, &phi, &[0.0; 4]).unwrap();
    let want = 1.0 - 0.2 * (1.0 - (-0.1f64).exp()) / 0.1;
    for v in x {
        assert!((v - want).abs() < 1e-14, "{v} vs {want}");
    }
}

#[test]
fn setd0_scalar_oracle() {
    let p = diagonal_problem(vec![-1.0; 4], Nonlinearity::LinearReaction { lambda: 1.0 });
    let phi = PhiEvaluator::new(&p.operator, dense()).unwrap();
    let x = step_setd0(&[1.0; 4], &p, 0.1, &phi, &[0.0; 4]).unwrap();
    let want = (-0.1f64).exp() * 0.9;
    for v in x {
        assert!((v - want).abs() < 1e-14);
    }
}

#[test]
fn semi_implicit_scalar_oracle() {
    let p = diagonal_problem(vec![-1.0; 4], Nonlinearity::Zero);
    let x = step_semi_implicit(&[1.0; 4], &p, 0.5, &[0.0; 4]).unwrap();
    for v in x {
        assert!((v - 1.0 / 1.5).abs() < 1e-10);
    }
    // resolvent per eigencomponent for small dt
    let dt = 1e-3;
    let x = step_semi_implicit(&[1.0; 4], &p, dt, &[0.0; 4]).unwrap();
    assert!((x[0] - 1.0 / (1.0 + dt)).abs() < 1e-12);
}

#[test]
fn zero_is_a_fixed_point() {
    let p = Problem::linear(node_grid(9), 1.0, 1.0, h1(8), None, 1.0).unwrap();
    let phi = PhiEvaluator::new(&p.operator, PhiConfig::default()).unwrap();
    let z = vec![0.0; p.grid.len()];
    for kind in SchemeKind::ALL {
        let x = step(kind, &z, &p, 0.1, &phi, &z).unwrap();
        assert!(x.iter().all(|&v| v == 0.0), "{kind}");
    }
}

#[test]
fn setd_semigroup_on_diagonal_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a: Vec<f64> = (0..4).map(|_| -rng.random_range(0.0..30.0)).collect();
    let p = diagonal_problem(a.clone(), Nonlinearity::Zero);
    let x0: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (dt, m) = (0.05, 20);
    for method in [PhiMethod::Dense, PhiMethod::Krylov, PhiMethod::Leja] {
        let cfg = PhiConfig::with_method(method);
        let phi = PhiEvaluator::new(&p.operator, cfg).unwrap();
        let tol = if method == PhiMethod::Dense { 1e-12 } else { 10.0 * cfg.tol };
        for kind in [SchemeKind::Setd1, SchemeKind::Setd0] {
            let mut x = x0.clone();
            for _ in 0..m {
                x = step(kind, &x, &p, dt, &phi, &[0.0; 4]).unwrap();
            }
            for k in 0..4 {
                let want = (m as f64 * dt * a[k]).exp() * x0[k];
                assert!((x[k] - want).abs() < tol, "{method:?} {kind}: {} vs {want}", x[k]);
            }
        }
    }
}

#[test]
fn noise_only_setd_schemes_coincide() {
    let p = Problem::linear(node_grid(9), 1.0, 0.0, h1(8), None, 1.0)
        .unwrap()
        .with_nonlinearity(Nonlinearity::Zero);
    let phi = PhiEvaluator::new(&p.operator, PhiConfig::default()).unwrap();
    let z = vec![0.0; p.grid.len()];
    let noise: Vec<f64> = (0..z.len()).map(|k| (k as f64 * 0.37).sin()).collect();
    let a = step_setd1(&z, &p, 0.1, &phi, &noise).unwrap();
    let b = step_setd0(&z, &p, 0.1, &phi, &noise).unwrap();
    assert_eq!(a, b);
}

#[test]
fn std_and_modified_agree_without_noise() {
    let mut p = Problem::linear(node_grid(9), 1.0, 1.0, h1(8), None, 1.0).unwrap();
    p.initial = p.grid.sample(|x, y| (3.0 * x).cos() + y);
    p.q = Modes::zeros(8);
    let phi = PhiEvaluator::new(&p.operator, PhiConfig::default()).unwrap();
    let run = |kind| {
        let cfg = SchemeConfig::new(kind, 1.0, 10, PhiConfig::default()).unwrap();
        integrate(&p, &cfg, &phi, 1, 0, 1, &[]).unwrap().final_state
    };
    assert_eq!(
        run(SchemeKind::SemiImplicitStd),
        run(SchemeKind::SemiImplicitModified)
    );
}

#[test]
fn deterministic_integration() {
    let p = Problem::linear(node_grid(17), 1.0, 1.0, h1(16), None, 1.0).unwrap();
    let phi = PhiEvaluator::new(&p.operator, PhiConfig::default()).unwrap();
    for kind in SchemeKind::ALL {
        let cfg = SchemeConfig::new(kind, 1.0, 8, PhiConfig::default()).unwrap();
        let a = integrate(&p, &cfg, &phi, 42, 3, 2, &[0, 4]).unwrap();
        let b = integrate(&p, &cfg, &phi, 42, 3, 2, &[0, 4]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.snapshots.len(), 2);
        assert_eq!(a.snapshots[0].1, p.initial);
        let c = integrate(&p, &cfg, &phi, 42, 4, 2, &[]).unwrap();
        assert_ne!(a.final_state, c.final_state);
    }
}

#[test]
fn deterministic_decay_matches_spectral_solution() {
    let (d, lam) = (0.1, 1.0);
    let pi = std::f64::consts::PI;
    let mut p = Problem::linear(node_grid(33), d, lam, h1(8), None, 1.0).unwrap();
    p.initial = p.grid.sample(|x, _| (pi * x).cos());
    p.q = Modes::zeros(8);
    let decay = (-(d * pi * pi + lam)).exp();
    let want = p.grid.sample(|x, _| decay * (pi * x).cos());
    let phi = PhiEvaluator::new(&p.operator, PhiConfig::default()).unwrap();
    let err = |kind, steps| {
        let cfg = SchemeConfig::new(kind, 1.0, steps, PhiConfig::default()).unwrap();
        let x = integrate(&p, &cfg, &phi, 0, 0, 1, &[]).unwrap().final_state;
        let diff: Vec<f64> = x.iter().zip(&want).map(|(a, b)| a - b).collect();
        p.grid.l2_norm(&diff).unwrap()
    };
    for kind in SchemeKind::ALL {
        let (e1, e2) = (err(kind, 10), err(kind, 40));
        // first order in time down to the O(h^2) spatial floor
        assert!(e1 < 0.05, "{kind}: {e1}");
        assert!(e2 < 0.5 * e1 || e2 < 2e-4, "{kind}: {e1} -> {e2}");
    }
}

#[test]
fn exact_reference_deterministic_decay() {
    let (d, lam) = (0.5, 1.0);
    let mut p = Problem::linear(node_grid(17), d, lam, h1(6), None, 1.0).unwrap();
    p.q = Modes::zeros(6);
    let basis = p.basis.clone();
    p.initial = p.grid.sample(|x, y| {
        basis.eigenfunction_x(1, x) * basis.eigenfunction_y(0, y)
            - 0.5 * basis.eigenfunction_x(2, x) * basis.eigenfunction_y(3, y)
    });
    let mut acc = ExactAccumulator::new(&p, 0.1).unwrap();
    let fine = vec![Modes::zeros(6); 3];
    for _ in 0..10 {
        acc.push(&fine);
    }
    let m = acc.modes();
    let e = |i, j| (-(d * basis.eigenvalue(i, j).unwrap() + lam)).exp();
    assert!((m.get(1, 0) - e(1, 0)).abs() < 1e-13);
    assert!((m.get(2, 3) + 0.5 * e(2, 3)).abs() < 1e-13);
    assert!(m.get(0, 0).abs() < 1e-13);
}

#[test]
fn exact_channel_equals_scheme_channel_without_reaction() {
    let p = Problem::linear(node_grid(9), 1.0, 0.0, h1(8), None, 1.0).unwrap();
    let s = p.sampler(0.01, 5).unwrap();
    let mut out = vec![Modes::zeros(8); 3];
    s.sample(2, 7, &mut out);
    for (a, b) in out[0].as_slice().iter().zip(out[2].as_slice()) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
    }
}

#[test]
fn exact_reference_mode_variance() {
    let (d, lam, t) = (1.0, 1.0, 0.5);
    let p = Problem::linear(node_grid(3), d, lam, h1(2), None, t).unwrap();
    let steps = 5;
    let s = p.sampler(t / steps as f64, 11).unwrap();
    let reps = 100_000;
    let mut fine = vec![Modes::zeros(2); 3];
    let mut sums = [0.0; 4];
    for r in 0..reps {
        let mut acc = ExactAccumulator::new(&p, t / steps as f64).unwrap();
        for k in 0..steps {
            s.sample(r, k, &mut fine);
            acc.push(&fine);
        }
        for (s, v) in sums.iter_mut().zip(acc.modes().as_slice()) {
            *s += v * v;
        }
    }
    for (k, (i, j)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
        let q = p.spectrum().get(i, j);
        let c = d * p.basis.eigenvalue(i, j).unwrap() + lam;
        let want = q * (1.0 - (-2.0 * c * t).exp()) / (2.0 * c);
        let var = sums[k] / reps as f64;
        // chi-square with reps degrees of freedom, normal approximation
        let half = 3.0 * want * (2.0 / reps as f64).sqrt();
        assert!((var - want).abs() <= half.max(1e-300), "({i},{j}) {var} vs {want}");
    }
}

#[test]
fn exact_reference_rejects_transport_problem() {
    let g = transport_grid(8, 0.0, 0.0).unwrap();
    let v = VelocityField::uniform(8, 8, 0.1, 0.0);
    let p = Problem::advection(g, 0.01, &v, h1(8), None, 1.0).unwrap();
    assert!(matches!(
        exact_linear_reference(&p, 0.1, 10, 0, 0),
        Err(Error::Unsupported(_))
    ));
    assert_eq!(p.channel_rates().len(), 2);
}

#[test]
fn path_coupling_under_refinement() {
    // with discrete rates the cosine modes diagonalise A exactly, so the
    // aggregated coarse noise reproduces the fine run
    let p = Problem::linear(node_grid(9), 1.0, 0.0, h1(8), None, 1.0)
        .unwrap()
        .with_nonlinearity(Nonlinearity::Zero)
        .with_rate_model(RateModel::Discrete);
    let phi = PhiEvaluator::new(&p.operator, dense()).unwrap();
    let coarse = SchemeConfig::new(SchemeKind::Setd0, 1.0, 5, dense()).unwrap();
    let fine = SchemeConfig::new(SchemeKind::Setd0, 1.0, 10, dense()).unwrap();
    let a = integrate(&p, &coarse, &phi, 9, 1, 2, &[]).unwrap().final_state;
    let b = integrate(&p, &fine, &phi, 9, 1, 1, &[]).unwrap().final_state;
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(scale > 0.0);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-10 * scale.max(1.0), "{x} vs {y}");
    }
}

#[test]
fn two_phi_form_matches_rewrite() {
    let p = Problem::linear(node_grid(17), 1.0, 1.0, h1(16), None, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..p.grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noise = vec![0.0; x.len()];
    for method in [PhiMethod::Krylov, PhiMethod::Leja] {
        let cfg = PhiConfig::with_method(method);
        let phi = PhiEvaluator::new(&p.operator, cfg).unwrap();
        for dt in [0.001, 0.01, 0.1] {
            let a = step_setd1(&x, &p, dt, &phi, &noise).unwrap();
            let b = step_setd1_two_phi(&x, &p, dt, &phi, &noise).unwrap();
            let dev = a.iter().zip(&b).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
            assert!(dev <= 10.0 * cfg.tol, "{method:?} dt={dt}: {dev}");
        }
    }
}

#[test]
fn transport_problem_runs() {
    let g = transport_grid(12, 1.0, 0.0).unwrap();
    let v = VelocityField::uniform(12, 12, 0.2, 0.0);
    let p = Problem::advection(g, 0.01, &v, h1(11), None, 1.0).unwrap();
    let phi = PhiEvaluator::new(&p.operator, PhiConfig::default()).unwrap();
    for kind in SchemeKind::ALL {
        let cfg = SchemeConfig::new(kind, 1.0, 10, PhiConfig::default()).unwrap();
        let x = integrate(&p, &cfg, &phi, 1, 0, 1, &[]).unwrap().final_state;
        assert!(x.iter().all(|v| v.is_finite()), "{kind}");
        // inflow of 1 through the west edge raises the mean
        assert!(x.iter().sum::<f64>() > 0.0);
    }
}

#[test]
fn config_validation_and_parsing() {
    assert!(SchemeConfig::new(SchemeKind::Setd1, 1.0, 0, PhiConfig::default()).is_err());
    let c = SchemeConfig::new(SchemeKind::Setd1, 1.0, 320, PhiConfig::default()).unwrap();
    assert_eq!(c.dt * 320.0, 1.0);
    let mut bad = c;
    bad.dt = 0.01;
    assert!(bad.validate(1.0).is_err());
    for k in SchemeKind::ALL {
        assert_eq!(k.name().parse::<SchemeKind>().unwrap(), k);
    }
    assert!("rk4".parse::<SchemeKind>().unwrap_err().is_config());
}

#[test]
fn monod_guard() {
    assert_eq!(monod(0.0), 0.0);
    assert!((monod(1.0) - 0.5).abs() < 1e-15);
    for u in [-1.0, -1.0 - 1e-9, -5.0, f64::MAX, 1e300] {
        assert!(monod(u).is_finite(), "{u}");
    }
}

proptest! {
    #[test]
    fn linear_reaction_is_lipschitz(lambda in 0.0f64..10.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Nonlinearity::LinearReaction { lambda };
        let u: Vec<f64> = (0..16).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..16).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (mut fu, mut fv) = (vec![0.0; 16], vec![0.0; 16]);
        f.eval(&u, &mut fu);
        f.eval(&v, &mut fv);
        let nrm = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(nrm(&fu, &fv) <= lambda * nrm(&u, &v) * (1.0 + 1e-12));
    }

    #[test]
    fn monod_finite_on_nonnegative(u in 0.0f64..1e12) {
        let m = monod(u);
        prop_assert!(m.is_finite() && (0.0..1.0).contains(&m));
    }
}
