//! Monte-Carlo strong-error study over a dt ladder.
//!
//! Each realization samples one fine noise path and streams it through every
//! (scheme, dt) run at once; coarse increments are aggregated on the fly, so
//! all runs and the reference see the same Brownian path.

use std::time::Instant;

use rayon::prelude::*;

use super::config::{ProblemKind, StudyConfig};
use super::report::{sq_distance, ConvergenceReport};
use crate::error::Result;
use crate::noise::CoupledSampler;
use crate::phi::PhiEvaluator;
use crate::schemes::{step, Channel, ExactAccumulator, LevelNoise, Problem, SchemeKind};
use crate::spectral::Modes;

struct Runner {
    kind: SchemeKind,
    x: Vec<f64>,
    failed: Option<String>,
    wall: f64,
}

struct Level {
    dt: f64,
    noise: LevelNoise,
    channels: Vec<Channel>,
    runners: Vec<Runner>,
    steps_done: usize,
}

impl Level {
    fn new(
        problem: &Problem,
        kinds: &[SchemeKind],
        dt: f64,
        dt_fine: f64,
        ratio: usize,
        cfg: &StudyConfig,
    ) -> Result<Self> {
        let mut channels: Vec<Channel> = kinds.iter().map(|k| k.channel()).collect();
        channels.sort_by_key(|c| *c as usize);
        channels.dedup();
        Ok(Level {
            dt,
            noise: LevelNoise::new(problem, &channels, dt_fine, ratio, cfg.convention)?,
            channels,
            runners: kinds
                .iter()
                .map(|&kind| Runner {
                    kind,
                    x: problem.initial.clone(),
                    failed: None,
                    wall: 0.0,
                })
                .collect(),
            steps_done: 0,
        })
    }

    fn push(
        &mut self,
        fine: &[Modes],
        problem: &Problem,
        phi: &PhiEvaluator,
        fields: &mut [Vec<f64>],
        timing: bool,
    ) -> Result<()> {
        let Some(incs) = self.noise.push(fine) else {
            return Ok(());
        };
        for (slot, (_, inc)) in incs.iter().enumerate() {
            problem.synthesizer().synthesize_into(inc, &mut fields[slot])?;
        }
        let m = self.steps_done;
        self.steps_done += 1;
        for r in self.runners.iter_mut().filter(|r| r.failed.is_none()) {
            let slot = self
                .channels
                .iter()
                .position(|&c| c == r.kind.channel())
                .expect("channel registered");
            let t0 = timing.then(Instant::now);
            match step(r.kind, &r.x, problem, self.dt, phi, &fields[slot]) {
                Ok(x) if x.iter().all(|v| v.is_finite()) => r.x = x,
                Ok(_) => r.failed = Some(format!("step {m}: non-finite state")),
                Err(e) => r.failed = Some(e.at_step(m).to_string()),
            }
            if let Some(t0) = t0 {
                r.wall += t0.elapsed().as_secs_f64();
            }
        }
        Ok(())
    }
}

enum Reference {
    Exact(ExactAccumulator),
    Scheme(Box<Level>),
}

/// Per realization: squared error (or failure message) and wall time for
/// every `[scheme][level]` cell.
type Cells = Vec<Vec<(std::result::Result<f64, String>, f64)>>;

/// Shared, read-only state of a study.
pub struct Study<'a> {
    pub cfg: &'a StudyConfig,
    pub problem: &'a Problem,
    phi: PhiEvaluator<'a>,
    sampler: CoupledSampler,
    dt_fine: f64,
}

impl<'a> Study<'a> {
    pub fn new(cfg: &'a StudyConfig, problem: &'a Problem) -> Result<Self> {
        cfg.validate()?;
        let dt_fine = cfg.t_final / cfg.fine_steps() as f64;
        Ok(Study {
            cfg,
            problem,
            phi: PhiEvaluator::new(&problem.operator, cfg.phi)?,
            sampler: problem.sampler(dt_fine, cfg.seed)?,
            dt_fine,
        })
    }

    fn realization(&self, r: u64) -> Result<Cells> {
        let (cfg, problem) = (self.cfg, self.problem);
        let fine_steps = cfg.fine_steps();
        let mut levels = cfg
            .ladder_steps
            .iter()
            .map(|&s| {
                Level::new(
                    problem,
                    &cfg.schemes,
                    cfg.t_final / s as f64,
                    self.dt_fine,
                    fine_steps / s,
                    cfg,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut reference = match cfg.problem {
            ProblemKind::Linear => Reference::Exact(ExactAccumulator::new(problem, self.dt_fine)?),
            ProblemKind::Advection => Reference::Scheme(Box::new(Level::new(
                problem,
                &[SchemeKind::Setd1],
                self.dt_fine,
                self.dt_fine,
                1,
                cfg,
            )?)),
        };
        let n = problem.basis.n();
        let mut fine = vec![Modes::zeros(n); self.sampler.channels()];
        let mut fields = vec![vec![0.0; problem.grid.len()]; 2];
        for k in 0..fine_steps {
            self.sampler.sample(r, k as u64, &mut fine);
            match &mut reference {
                Reference::Exact(acc) => acc.push(&fine),
                Reference::Scheme(level) => level.push(&fine, problem, &self.phi, &mut fields, false)?,
            }
            for level in levels.iter_mut() {
                level.push(&fine, problem, &self.phi, &mut fields, cfg.timing)?;
            }
        }
        let reference: std::result::Result<Vec<f64>, String> = match reference {
            Reference::Exact(acc) => Ok(acc.finish(problem)?),
            Reference::Scheme(level) => {
                let r = &level.runners[0];
                match &r.failed {
                    None => Ok(r.x.clone()),
                    Some(msg) => Err(format!("reference run failed: {msg}")),
                }
            }
        };
        let mut cells: Cells = vec![Vec::with_capacity(levels.len()); cfg.schemes.len()];
        for level in &levels {
            for (s, runner) in level.runners.iter().enumerate() {
                let err = match (&reference, &runner.failed) {
                    (Err(msg), _) => Err(msg.clone()),
                    (_, Some(msg)) => Err(msg.clone()),
                    (Ok(x_ref), None) => Ok(sq_distance(&runner.x, x_ref, &problem.grid)?),
                };
                cells[s].push((err, runner.wall));
            }
        }
        Ok(cells)
    }

    /// Runs all realizations (in parallel) and reduces them in index order.
    pub fn run(&self) -> Result<Vec<ConvergenceReport>> {
        let cfg = self.cfg;
        let per: Vec<Cells> = (0..cfg.realizations as u64)
            .into_par_iter()
            .map(|r| self.realization(r))
            .collect::<Result<_>>()?;
        let ladder = cfg.ladder_dt();
        let rr = cfg.realizations as f64;
        let mut reports = Vec::new();
        for (s, &kind) in cfg.schemes.iter().enumerate() {
            let mut errors = Vec::with_capacity(ladder.len());
            let mut walls = Vec::with_capacity(ladder.len());
            let mut failures = Vec::new();
            for (l, &dt) in ladder.iter().enumerate() {
                let mut acc = 0.0;
                let mut wall = 0.0;
                let mut fail = None;
                for cells in &per {
                    let (e, w) = &cells[s][l];
                    wall += w;
                    match e {
                        Ok(v) => acc += v,
                        Err(m) => {
                            fail.get_or_insert_with(|| m.clone());
                        }
                    }
                }
                match fail {
                    Some(m) => {
                        errors.push(None);
                        failures.push((dt, m));
                    }
                    None => errors.push(Some((acc / rr).sqrt())),
                }
                walls.push(wall / rr);
            }
            let mut rep = ConvergenceReport::new(kind, ladder.clone(), errors, cfg.realizations, cfg.seed);
            rep.failures = failures;
            if cfg.timing {
                rep.wall_s = Some(walls);
            }
            reports.push(rep);
        }
        Ok(reports)
    }
}

/// Builds the problem from `cfg` and runs the study.
pub fn run_convergence_study(cfg: &StudyConfig) -> Result<Vec<ConvergenceReport>> {
    let problem = cfg.build_problem()?;
    Study::new(cfg, &problem)?.run()
}
