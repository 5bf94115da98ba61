//! Time stepping for `dX = (A X + F(X) + b) dt + dW`: the exponential schemes
//! SETD1 and SETD0 and two semi-implicit Euler variants, all fed from one
//! coupled noise pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::{Boundary, EdgeCondition, Grid, Layout};
use crate::noise::{CoupledSampler, LevelAccumulator, NoiseSpec, OuConvention};
use crate::operators::{
    assemble_diffusion, bicgstab, cg, upwind_advection, write_raster, BoundaryVector,
    LinearOperator, Stencil, VelocityField,
};
use crate::phi::{PhiConfig, PhiEvaluator, PhiIndex};
use crate::spectral::{Modes, SpectralBasis, Synthesizer};

/// Lower clamp on `u + 1` in the Monod-type reaction `u / (u + 1)`.
pub const REACTION_EPS: f64 = 1e-6;

/// Relative residual for the semi-implicit linear solves.
pub const SOLVE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum Nonlinearity {
    Zero,
    /// `F(u) = -lambda u`.
    LinearReaction { lambda: f64 },
    /// `F(u) = G u + g - u / (u + 1)` with the upwind transport `G u + g`.
    AdvectionReaction { advection: Stencil, inflow: Vec<f64> },
}

impl Nonlinearity {
    pub fn eval(&self, u: &[f64], out: &mut [f64]) {
        match self {
            Nonlinearity::Zero => out.fill(0.0),
            Nonlinearity::LinearReaction { lambda } => {
                for (o, x) in out.iter_mut().zip(u) {
                    *o = -lambda * x;
                }
            }
            Nonlinearity::AdvectionReaction { advection, inflow } => {
                advection.apply(u, out);
                for ((o, x), g) in out.iter_mut().zip(u).zip(inflow) {
                    *o += g - monod(*x);
                }
            }
        }
    }
}

/// `u / (u + 1)` with the denominator held at or above [`REACTION_EPS`].
#[inline]
pub fn monod(u: f64) -> f64 {
    u / (u + 1.0).max(REACTION_EPS)
}

/// Which per-mode decay rates the OU noise channel uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `D lambda_ij` from the continuous Laplacian.
    #[default]
    Continuous,
    /// Eigenvalues of the five-point Neumann operator, for which the cosine
    /// modes are exact eigenvectors.
    Discrete,
}

/// Noise channels sampled jointly on one Brownian path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    /// OU integral at the scheme rates.
    Ou = 0,
    /// Plain Brownian increment.
    Brownian = 1,
    /// OU integral at the exact linear rates (linear problem only).
    Exact = 2,
}

/// A discretised SPDE together with its noise model.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: Grid,
    pub operator: Stencil,
    pub boundary: BoundaryVector,
    pub nonlinearity: Nonlinearity,
    pub noise: NoiseSpec,
    pub basis: SpectralBasis,
    pub diffusivity: f64,
    pub initial: Vec<f64>,
    pub t_final: f64,
    pub rate_model: RateModel,
    synth: Synthesizer,
    q: Modes,
}

impl Problem {
    #[allow(clippy::too_many_arguments)]
    fn build(
        grid: Grid,
        diffusivity: f64,
        nonlinearity: Nonlinearity,
        noise: NoiseSpec,
        initial: Option<Vec<f64>>,
        t_final: f64,
        rate_model: RateModel,
    ) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::invalid(format!("final time must be positive, got {t_final}")));
        }
        let (operator, boundary) = assemble_diffusion(&grid, diffusivity)?;
        let basis = SpectralBasis::for_grid(noise.n, &grid)?;
        let synth = basis.synthesizer(&grid)?;
        let initial = initial.unwrap_or_else(|| vec![0.0; grid.len()]);
        check_len("initial field", grid.len(), initial.len())?;
        let q = noise.spectrum(&basis);
        Ok(Problem {
            grid,
            operator,
            boundary,
            nonlinearity,
            noise,
            basis,
            diffusivity,
            initial,
            t_final,
            rate_model,
            synth,
            q,
        })
    }

    /// `dX = (D Laplacian X - lambda X) dt + dW` with zero-flux edges.
    pub fn linear(
        grid: Grid,
        diffusivity: f64,
        reaction: f64,
        noise: NoiseSpec,
        initial: Option<Vec<f64>>,
        t_final: f64,
    ) -> Result<Self> {
        if !(reaction >= 0.0 && reaction.is_finite()) {
            return Err(Error::invalid(format!("reaction rate must be >= 0, got {reaction}")));
        }
        Problem::build(
            grid,
            diffusivity,
            Nonlinearity::LinearReaction { lambda: reaction },
            noise,
            initial,
            t_final,
            RateModel::Continuous,
        )
    }

    /// `dX = (D Laplacian X - div(q X) - X / (X + 1)) dt + dW` on a
    /// cell-centred grid. Dirichlet edges of the grid fix `X` there; the west
    /// value is what inflow carries in.
    pub fn advection(
        grid: Grid,
        diffusivity: f64,
        velocity: &VelocityField,
        noise: NoiseSpec,
        initial: Option<Vec<f64>>,
        t_final: f64,
    ) -> Result<Self> {
        if grid.layout() != Layout::CellCentered {
            return Err(Error::Unsupported("transport needs a cell-centred grid".into()));
        }
        let inflow_value = match grid.boundary().west {
            EdgeCondition::Dirichlet(v) => v,
            EdgeCondition::Neumann => 0.0,
        };
        let (advection, inflow) = upwind_advection(&grid, velocity, inflow_value)?;
        Problem::build(
            grid,
            diffusivity,
            Nonlinearity::AdvectionReaction { advection, inflow },
            noise,
            initial,
            t_final,
            RateModel::Continuous,
        )
    }

    pub fn with_nonlinearity(mut self, f: Nonlinearity) -> Self {
        self.nonlinearity = f;
        self
    }

    pub fn with_rate_model(mut self, model: RateModel) -> Self {
        self.rate_model = model;
        self
    }

    pub fn synthesizer(&self) -> &Synthesizer {
        &self.synth
    }

    /// Noise eigenvalues `q_ij`.
    pub fn spectrum(&self) -> &Modes {
        &self.q
    }

    /// Decay rates of the OU channel.
    pub fn scheme_rates(&self) -> Modes {
        match self.rate_model {
            RateModel::Continuous => self.basis.rates(|l| self.diffusivity * l),
            RateModel::Discrete => {
                let n = self.basis.n();
                let axis = |h: f64, len: f64, i: usize| {
                    2.0 / (h * h) * (1.0 - (i as f64 * std::f64::consts::PI * h / len).cos())
                };
                let g = &self.grid;
                Modes::from_fn(n, |i, j| {
                    self.diffusivity * (axis(g.dx(), g.lx(), i) + axis(g.dy(), g.ly(), j))
                })
            }
        }
    }

    /// Reaction rate of the linear problem, if this is one.
    pub fn linear_reaction(&self) -> Option<f64> {
        match self.nonlinearity {
            Nonlinearity::LinearReaction { lambda } => Some(lambda),
            Nonlinearity::Zero => Some(0.0),
            Nonlinearity::AdvectionReaction { .. } => None,
        }
    }

    /// Rates of every channel, in [`Channel`] order. The exact channel is
    /// present only for linear problems on all-Neumann grids.
    pub fn channel_rates(&self) -> Vec<Modes> {
        let ou = self.scheme_rates();
        let mut rates = vec![ou, Modes::zeros(self.basis.n())];
        if let (Some(r), true) = (self.linear_reaction(), self.grid.boundary().is_pure_neumann()) {
            rates.push(self.basis.rates(|l| self.diffusivity * l + r));
        }
        rates
    }

    /// Joint sampler of all channels at fine step `dt`.
    pub fn sampler(&self, dt: f64, seed: u64) -> Result<CoupledSampler> {
        CoupledSampler::new(&self.q, &self.channel_rates(), dt, seed)
    }

    fn rhs_forcing(&self, x: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; x.len()];
        self.nonlinearity.eval(x, &mut f);
        for (fk, bk) in f.iter_mut().zip(&self.boundary.0) {
            *fk += bk;
        }
        f
    }
}

/// Unit-square grid with Dirichlet values on the west/east edges, the
/// transport layout.
pub fn transport_grid(n: usize, west: f64, east: f64) -> Result<Grid> {
    Grid::new(n, n, 1.0, 1.0, Layout::CellCentered, Boundary::dirichlet_x(west, east))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeKind {
    #[serde(rename = "SETD1")]
    Setd1,
    #[serde(rename = "SETD0")]
    Setd0,
    #[serde(rename = "SemiImplicitStd")]
    SemiImplicitStd,
    #[serde(rename = "SemiImplicitModified")]
    SemiImplicitModified,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [
        SchemeKind::Setd1,
        SchemeKind::Setd0,
        SchemeKind::SemiImplicitStd,
        SchemeKind::SemiImplicitModified,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Setd1 => "SETD1",
            SchemeKind::Setd0 => "SETD0",
            SchemeKind::SemiImplicitStd => "SemiImplicitStd",
            SchemeKind::SemiImplicitModified => "SemiImplicitModified",
        }
    }

    /// Noise channel the scheme adds each step.
    pub fn channel(self) -> Channel {
        match self {
            SchemeKind::SemiImplicitStd => Channel::Brownian,
            _ => Channel::Ou,
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "setd1" => Ok(SchemeKind::Setd1),
            "setd0" => Ok(SchemeKind::Setd0),
            "semiimplicitstd" | "std" | "implicit" => Ok(SchemeKind::SemiImplicitStd),
            "semiimplicitmodified" | "modified" => Ok(SchemeKind::SemiImplicitModified),
            _ => Err(Error::Config(format!("unknown scheme '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub dt: f64,
    pub steps: usize,
    pub phi: PhiConfig,
    pub convention: OuConvention,
}

impl SchemeConfig {
    /// `steps` steps of size `t_final / steps`.
    pub fn new(kind: SchemeKind, t_final: f64, steps: usize, phi: PhiConfig) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("scheme needs at least one step"));
        }
        let cfg = SchemeConfig {
            kind,
            dt: t_final / steps as f64,
            steps,
            phi,
            convention: OuConvention::default(),
        };
        cfg.validate(t_final)?;
        Ok(cfg)
    }

    pub fn with_convention(mut self, convention: OuConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn validate(&self, t_final: f64) -> Result<()> {
        self.phi.validate()?;
        let span = self.dt * self.steps as f64;
        if !(self.dt > 0.0) || (span - t_final).abs() > 4.0 * f64::EPSILON * t_final {
            return Err(Error::invalid(format!(
                "dt * steps = {span} does not reach T = {t_final}"
            )));
        }
        Ok(())
    }
}

/// `X + dt phi_1(dt A)(A X + F(X) + b) + noise`.
pub fn step_setd1(
    x: &[f64],
    problem: &Problem,
    dt: f64,
    phi: &PhiEvaluator,
    noise: &[f64],
) -> Result<Vec<f64>> {
    check_len("state", problem.grid.len(), x.len())?;
    let mut v = problem.rhs_forcing(x);
    let mut ax = vec![0.0; x.len()];
    problem.operator.apply(x, &mut ax);
    for (vk, a) in v.iter_mut().zip(&ax) {
        *vk += a;
    }
    let p = phi.apply(PhiIndex::Phi1, dt, &v)?;
    Ok(x.iter()
        .zip(&p)
        .zip(noise)
        .map(|((xk, pk), nk)| xk + dt * pk + nk)
        .collect())
}

/// `phi_0(dt A) X + dt phi_1(dt A)(F(X) + b) + noise`, algebraically equal
/// to [`step_setd1`] but with two phi actions.
pub fn step_setd1_two_phi(
    x: &[f64],
    problem: &Problem,
    dt: f64,
    phi: &PhiEvaluator,
    noise: &[f64],
) -> Result<Vec<f64>> {
    check_len("state", problem.grid.len(), x.len())?;
    let f = problem.rhs_forcing(x);
    let e = phi.apply(PhiIndex::Phi0, dt, x)?;
    let p = phi.apply(PhiIndex::Phi1, dt, &f)?;
    Ok(e.iter()
        .zip(&p)
        .zip(noise)
        .map(|((ek, pk), nk)| ek + dt * pk + nk)
        .collect())
}

/// `phi_0(dt A)(X + dt (F(X) + b)) + noise`.
pub fn step_setd0(
    x: &[f64],
    problem: &Problem,
    dt: f64,
    phi: &PhiEvaluator,
    noise: &[f64],
) -> Result<Vec<f64>> {
    check_len("state", problem.grid.len(), x.len())?;
    let mut y = problem.rhs_forcing(x);
    for (yk, xk) in y.iter_mut().zip(x) {
        *yk = xk + dt * *yk;
    }
    let mut out = phi.apply(PhiIndex::Phi0, dt, &y)?;
    for (o, nk) in out.iter_mut().zip(noise) {
        *o += nk;
    }
    Ok(out)
}

/// Solves `(I - dt A) X+ = X + dt (F(X) + b) + noise`. Which increment
/// `noise` holds is the caller's choice.
pub fn step_semi_implicit(x: &[f64], problem: &Problem, dt: f64, noise: &[f64]) -> Result<Vec<f64>> {
    check_len("state", problem.grid.len(), x.len())?;
    let op = &problem.operator;
    let mut rhs = problem.rhs_forcing(x);
    for ((r, xk), nk) in rhs.iter_mut().zip(x).zip(noise) {
        *r = xk + dt * *r + nk;
    }
    let apply = |v: &[f64], out: &mut [f64]| {
        op.apply(v, out);
        for (o, vk) in out.iter_mut().zip(v) {
            *o = vk - dt * *o;
        }
    };
    let mut sol = x.to_vec();
    let max_iter = 20 * x.len() + 100;
    match op.self_adjoint_weights() {
        Some(w) => {
            let diag: Vec<f64> = op.diagonal().iter().map(|d| 1.0 - dt * d).collect();
            cg(apply, &rhs, &mut sol, Some(w), Some(&diag), SOLVE_TOL, max_iter)?;
        }
        None => {
            bicgstab(apply, &rhs, &mut sol, SOLVE_TOL, max_iter)?;
        }
    }
    Ok(sol)
}

/// Advances one step of `kind` with a ready physical-space noise field.
pub fn step(
    kind: SchemeKind,
    x: &[f64],
    problem: &Problem,
    dt: f64,
    phi: &PhiEvaluator,
    noise: &[f64],
) -> Result<Vec<f64>> {
    match kind {
        SchemeKind::Setd1 => step_setd1(x, problem, dt, phi, noise),
        SchemeKind::Setd0 => step_setd0(x, problem, dt, phi, noise),
        SchemeKind::SemiImplicitStd | SchemeKind::SemiImplicitModified => {
            step_semi_implicit(x, problem, dt, noise)
        }
    }
}

/// Accumulates coarse increments of several channels from a fine sampler.
#[derive(Debug, Clone)]
pub struct LevelNoise {
    channels: Vec<(Channel, LevelAccumulator)>,
}

impl LevelNoise {
    /// `ratio` fine steps of `dt_fine` per coarse step. The OU channel uses
    /// `convention`; the other channels are always exact integrals.
    pub fn new(
        problem: &Problem,
        channels: &[Channel],
        dt_fine: f64,
        ratio: usize,
        convention: OuConvention,
    ) -> Result<Self> {
        let rates = problem.channel_rates();
        let mut out = Vec::with_capacity(channels.len());
        for &ch in channels {
            let r = rates.get(ch as usize).cloned().ok_or_else(|| {
                Error::Unsupported(format!("channel {ch:?} not available for this problem"))
            })?;
            let conv = if ch == Channel::Ou {
                convention
            } else {
                OuConvention::ItoIsometry
            };
            out.push((ch, LevelAccumulator::new(r, dt_fine, ratio, conv)?));
        }
        Ok(LevelNoise { channels: out })
    }

    /// Feeds one fine step (all channels, [`Channel`] order); returns the
    /// coarse increments, in construction order, when a coarse step completes.
    pub fn push(&mut self, fine: &[Modes]) -> Option<Vec<(Channel, Modes)>> {
        let mut done = Vec::new();
        for (ch, acc) in self.channels.iter_mut() {
            if let Some(m) = acc.push(&fine[*ch as usize]) {
                done.push((*ch, m));
            }
        }
        if done.is_empty() {
            None
        } else {
            Some(done)
        }
    }
}

/// Trajectory output of [`integrate`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub final_state: Vec<f64>,
    /// `(step, state)` for each requested snapshot step.
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

/// Runs one realization with noise sampled at `dt / substeps` and aggregated
/// to `dt`. Records the states at the listed step indices (0 is the
/// initial field).
pub fn integrate(
    problem: &Problem,
    scheme: &SchemeConfig,
    phi: &PhiEvaluator,
    seed: u64,
    realization: u64,
    substeps: usize,
    snapshot_steps: &[usize],
) -> Result<Trajectory> {
    scheme.validate(problem.t_final)?;
    if substeps == 0 {
        return Err(Error::invalid("substeps must be at least 1"));
    }
    let dt_fine = scheme.dt / substeps as f64;
    let sampler = problem.sampler(dt_fine, seed)?;
    let ch = scheme.kind.channel();
    let mut level = LevelNoise::new(problem, &[ch], dt_fine, substeps, scheme.convention)?;
    let mut fine = vec![Modes::zeros(problem.basis.n()); sampler.channels()];
    let mut field = vec![0.0; problem.grid.len()];
    let mut x = problem.initial.clone();
    let mut traj = Trajectory::default();
    if snapshot_steps.contains(&0) {
        traj.snapshots.push((0, x.clone()));
    }
    let mut fine_step = 0u64;
    for m in 0..scheme.steps {
        let inc = loop {
            sampler.sample(realization, fine_step, &mut fine);
            fine_step += 1;
            if let Some(mut v) = level.push(&fine) {
                break v.remove(0).1;
            }
        };
        problem.synth.synthesize_into(&inc, &mut field)?;
        x = step(scheme.kind, &x, problem, scheme.dt, phi, &field).map_err(|e| e.at_step(m))?;
        if snapshot_steps.contains(&(m + 1)) {
            traj.snapshots.push((m + 1, x.clone()));
        }
    }
    traj.final_state = x;
    Ok(traj)
}

/// Exact spectral solution of the linear problem at `T = dt_fine * steps`,
/// driven by the same fine Brownian path as the schemes.
pub fn exact_linear_reference(
    problem: &Problem,
    dt_fine: f64,
    steps: usize,
    seed: u64,
    realization: u64,
) -> Result<Vec<f64>> {
    let sampler = problem.sampler(dt_fine, seed)?;
    let mut acc = ExactAccumulator::new(problem, dt_fine)?;
    let mut fine = vec![Modes::zeros(problem.basis.n()); sampler.channels()];
    for k in 0..steps {
        sampler.sample(realization, k as u64, &mut fine);
        acc.push(&fine);
    }
    acc.finish(problem)
}

/// Running spectral state of the exact linear solution.
#[derive(Debug, Clone)]
pub struct ExactAccumulator {
    modes: Modes,
    decay: Vec<f64>,
}

impl ExactAccumulator {
    pub fn new(problem: &Problem, dt_fine: f64) -> Result<Self> {
        if problem.linear_reaction().is_none() || !problem.grid.boundary().is_pure_neumann() {
            return Err(Error::Unsupported(
                "exact reference needs the linear problem with Neumann edges".into(),
            ));
        }
        let rates = &problem.channel_rates()[Channel::Exact as usize];
        Ok(ExactAccumulator {
            modes: problem.synth.analyze(&problem.initial)?,
            decay: rates.as_slice().iter().map(|c| (-c * dt_fine).exp()).collect(),
        })
    }

    pub fn push(&mut self, fine: &[Modes]) {
        let inc = fine[Channel::Exact as usize].as_slice();
        for ((m, d), i) in self.modes.as_mut_slice().iter_mut().zip(&self.decay).zip(inc) {
            *m = d * *m + i;
        }
    }

    pub fn modes(&self) -> &Modes {
        &self.modes
    }

    pub fn finish(&self, problem: &Problem) -> Result<Vec<f64>> {
        problem.synth.synthesize(&self.modes)
    }
}

/// Writes each snapshot as `<prefix>_<step>.csv` in `dir`.
pub fn write_snapshots(dir: &Path, prefix: &str, grid: &Grid, traj: &Trajectory) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (step, field) in &traj.snapshots {
        write_raster(&dir.join(format!("{prefix}_{step:06}.csv")), grid, field)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
