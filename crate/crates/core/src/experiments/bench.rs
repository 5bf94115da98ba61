//! Phi-evaluator timing table and the Darcy flow report.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::StudyConfig;
use crate::error::{Error, Result};
use crate::grid::{Grid, Layout};
use crate::operators::{assemble_diffusion, VelocityField};
use crate::phi::{PhiConfig, PhiEvaluator, PhiIndex, PhiMethod};

/// Largest dimension compared against the dense oracle.
pub const BENCH_DENSE_LIMIT: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct PhiBenchConfig {
    /// Grid points per side of the Neumann diffusion operator.
    pub sizes: Vec<usize>,
    pub dts: Vec<f64>,
    pub methods: Vec<PhiMethod>,
    pub diffusivity: f64,
    pub tol: f64,
    pub reps: usize,
    pub seed: u64,
}

impl Default for PhiBenchConfig {
    fn default() -> Self {
        PhiBenchConfig {
            sizes: vec![20, 50, 100],
            dts: vec![0.01],
            methods: vec![PhiMethod::Krylov, PhiMethod::Leja],
            diffusivity: 1.0,
            tol: 1e-6,
            reps: 3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiBenchRow {
    pub n: usize,
    pub dim: usize,
    pub dt: f64,
    pub index: PhiIndex,
    pub method: PhiMethod,
    pub mean_wall_s: f64,
    pub max_deviation: f64,
    /// Method the deviation is measured against.
    pub reference: PhiMethod,
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Times each method on `D Laplacian` over the configured grids and
/// reports the max-norm deviation from the dense oracle when the dimension
/// allows, otherwise from the other methods' first entry.
pub fn run_phi_bench(cfg: &PhiBenchConfig) -> Result<Vec<PhiBenchRow>> {
    if cfg.methods.is_empty() || cfg.sizes.is_empty() || cfg.dts.is_empty() || cfg.reps == 0 {
        return Err(Error::Config("phi bench needs sizes, dts, methods and reps".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let grid = Grid::unit_square(n, n, Layout::NodeCentered)?;
        let (op, _) = assemble_diffusion(&grid, cfg.diffusivity)?;
        let dim = grid.len();
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let reference = if dim <= BENCH_DENSE_LIMIT {
            PhiMethod::Dense
        } else {
            *cfg.methods
                .iter()
                .find(|m| **m != PhiMethod::Dense)
                .unwrap_or(&PhiMethod::Krylov)
        };
        let make = |m: PhiMethod| {
            PhiEvaluator::new(
                &op,
                PhiConfig {
                    tol: cfg.tol,
                    ..PhiConfig::with_method(m)
                },
            )
        };
        let ref_eval = make(reference)?;
        for &dt in &cfg.dts {
            for idx in [PhiIndex::Phi0, PhiIndex::Phi1] {
                let want = ref_eval.apply(idx, dt, &v)?;
                for &method in &cfg.methods {
                    if method == PhiMethod::Dense && dim > BENCH_DENSE_LIMIT {
                        continue;
                    }
                    let eval = make(method)?;
                    // warm-up builds per-dt caches outside the timed loop
                    let mut got = eval.apply(idx, dt, &v)?;
                    let t0 = Instant::now();
                    for _ in 0..cfg.reps {
                        got = eval.apply(idx, dt, &v)?;
                    }
                    let wall = t0.elapsed().as_secs_f64() / cfg.reps as f64;
                    rows.push(PhiBenchRow {
                        n,
                        dim,
                        dt,
                        index: idx,
                        method,
                        mean_wall_s: wall,
                        max_deviation: max_dev(&got, &want),
                        reference,
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn method_name(m: PhiMethod) -> &'static str {
    match m {
        PhiMethod::Dense => "dense",
        PhiMethod::Krylov => "krylov",
        PhiMethod::Leja => "leja",
        PhiMethod::Auto => "auto",
    }
}

pub fn write_phi_bench(mut w: impl Write, rows: &[PhiBenchRow]) -> Result<()> {
    writeln!(w, "n,dim,dt,phi,method,mean_wall_s,max_deviation,reference")?;
    for r in rows {
        let phi = match r.index {
            PhiIndex::Phi0 => "phi0",
            PhiIndex::Phi1 => "phi1",
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.n,
            r.dim,
            r.dt,
            phi,
            method_name(r.method),
            r.mean_wall_s,
            r.max_deviation,
            method_name(r.reference)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DarcyReport {
    pub max_abs_divergence: f64,
    pub q_max: f64,
    pub inflow: f64,
    pub outflow: f64,
    pub peclet: f64,
}

/// Solves for the transport velocity of `cfg` and summarises it.
pub fn run_darcy(cfg: &StudyConfig) -> Result<(VelocityField, DarcyReport)> {
    let grid = cfg.grid()?;
    let v = cfg.velocity()?;
    let div = v.cell_divergence(&grid)?;
    let (inflow, outflow) = v.edge_fluxes(&grid)?;
    let report = DarcyReport {
        max_abs_divergence: div.iter().fold(0.0, |m, d| m.max(d.abs())),
        q_max: v.max_abs(),
        inflow,
        outflow,
        peclet: v.peclet(grid.lx(), cfg.diffusivity),
    };
    Ok((v, report))
}

pub fn write_darcy_report(path: &Path, r: &DarcyReport) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "quantity,value")?;
    writeln!(f, "max_abs_divergence,{}", r.max_abs_divergence)?;
    writeln!(f, "q_max,{}", r.q_max)?;
    writeln!(f, "inflow,{}", r.inflow)?;
    writeln!(f, "outflow,{}", r.outflow)?;
    writeln!(f, "peclet,{}", r.peclet)?;
    Ok(())
}
