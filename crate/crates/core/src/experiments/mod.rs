//! Strong-error studies, order fits, benchmarks and report files.

mod bench;
mod config;
mod report;
mod study;

pub use bench::{
    run_darcy, run_phi_bench, write_darcy_report, write_phi_bench, DarcyReport, PhiBenchConfig,
    PhiBenchRow, BENCH_DENSE_LIMIT,
};
pub use config::{
    parse_grid, parse_ladder, parse_noise, parse_seed, DarcyFile, MediumConfig, ProblemKind,
    RawConfig, SeedValue, StudyConfig, DEFAULT_LADDER,
};
pub use report::{
    fit_order, footer_slope, plateau_flags, read_reports, read_reports_file, rms_error,
    write_reports, write_reports_file, ConvergenceReport, Fit,
};
pub use study::{run_convergence_study, Study};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schemes::SchemeKind;

    fn small_linear() -> StudyConfig {
        StudyConfig {
            nx: 17,
            ny: 17,
            noise: crate::noise::NoiseSpec {
                n: 16,
                ..StudyConfig::linear_default().noise
            },
            ladder_steps: vec![4, 8, 16, 32],
            realizations: 4,
            ..StudyConfig::linear_default()
        }
    }

    #[test]
    fn study_is_deterministic() {
        let cfg = small_linear();
        let a = run_convergence_study(&cfg).unwrap();
        let b = run_convergence_study(&cfg).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_reports(&mut x, &a).unwrap();
        write_reports(&mut y, &b).unwrap();
        assert_eq!(x, y);
        assert_eq!(a.len(), 4);
        for r in &a {
            assert!(r.rms_error.iter().all(|e| e.is_some_and(|v| v > 0.0 && v.is_finite())));
            assert!(r.wall_s.is_none());
        }
    }

    #[test]
    fn noiseless_linear_study_converges() {
        let mut cfg = small_linear();
        cfg.nx = 33;
        cfg.ny = 33;
        cfg.noise.n = 8;
        cfg.noise.gamma = 1e-200;
        cfg.diffusivity = 0.1;
        cfg.schemes = vec![SchemeKind::Setd1];
        cfg.realizations = 1;
        let mut problem = cfg.build_problem().unwrap();
        let pi = std::f64::consts::PI;
        problem.initial = problem.grid.sample(|x, _| (pi * x).cos());
        let r = &Study::new(&cfg, &problem).unwrap().run().unwrap()[0];
        assert!(r.fit().unwrap().slope >= 0.9, "{r:?}");
    }

    #[test]
    fn single_cell_ladder_has_no_slope() {
        let mut cfg = small_linear();
        cfg.ladder_steps = vec![8];
        cfg.schemes = vec![SchemeKind::Setd0];
        cfg.realizations = 1;
        let r = run_convergence_study(&cfg).unwrap();
        assert!(r[0].fit().is_none());
    }

    #[test]
    fn setd1_error_decreases_along_ladder() {
        let mut cfg = small_linear();
        cfg.schemes = vec![SchemeKind::Setd1];
        cfg.realizations = 8;
        let r = &run_convergence_study(&cfg).unwrap()[0];
        let e: Vec<f64> = r.rms_error.iter().map(|v| v.unwrap()).collect();
        for w in e.windows(2) {
            assert!(w[1] <= 1.2 * w[0], "{e:?}");
        }
        assert!(r.fit().unwrap().slope > 0.5);
    }

    #[test]
    fn transport_study_runs() {
        let mut cfg = StudyConfig::advection_default();
        cfg.nx = 12;
        cfg.ny = 12;
        cfg.noise.n = 11;
        cfg.ladder_steps = vec![4, 8];
        cfg.realizations = 2;
        cfg.timing = true;
        let r = run_convergence_study(&cfg).unwrap();
        assert_eq!(r.len(), 2);
        for rep in &r {
            assert!(rep.rms_error.iter().all(|e| e.is_some()));
            assert!(rep.wall_s.as_ref().unwrap().iter().all(|&w| w > 0.0));
        }
    }
}
