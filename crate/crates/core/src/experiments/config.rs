//! Study configuration: a flat key-value file format whose keys mirror the
//! command-line flags, plus the resolved [`StudyConfig`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Layout};
use crate::noise::{NoiseKind, NoiseSpec, OuConvention};
use crate::operators::{
    darcy_solve, load_raster, permeability_streaks, VelocityField, DEFAULT_STREAKS,
};
use crate::phi::{PhiConfig, PhiMethod};
use crate::schemes::{transport_grid, Problem, RateModel, SchemeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Linear,
    Advection,
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ProblemKind::Linear),
            "advection" => Ok(ProblemKind::Advection),
            _ => Err(Error::Config(format!("unknown problem '{s}'"))),
        }
    }
}

/// Seed given as an integer or as a decimal / `0x` hex string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedValue {
    Int(u64),
    Text(String),
}

impl SeedValue {
    pub fn resolve(&self) -> Result<u64> {
        match self {
            SeedValue::Int(v) => Ok(*v),
            SeedValue::Text(s) => parse_seed(s),
        }
    }
}

pub fn parse_seed(s: &str) -> Result<u64> {
    let t = s.trim();
    let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => t.parse(),
    };
    parsed.map_err(|_| Error::Config(format!("bad seed '{s}'")))
}

/// Darcy / medium settings for the transport problem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DarcyFile {
    pub tol: Option<f64>,
    pub background: Option<f64>,
    pub streak: Option<f64>,
    pub mu: Option<f64>,
    pub peclet: Option<f64>,
    pub permeability: Option<String>,
}

/// Every setting as optional; file values are overridden by flag values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawConfig {
    pub problem: Option<String>,
    pub schemes: Option<String>,
    pub dt_ladder: Option<String>,
    pub realizations: Option<usize>,
    pub seed: Option<SeedValue>,
    pub grid: Option<String>,
    pub noise: Option<String>,
    pub gamma: Option<f64>,
    pub phi: Option<String>,
    pub phi_tol: Option<f64>,
    pub out: Option<String>,
    pub modes: Option<usize>,
    pub diffusivity: Option<f64>,
    pub reaction: Option<f64>,
    pub t_final: Option<f64>,
    pub convention: Option<String>,
    pub rates: Option<String>,
    pub reference_refine: Option<usize>,
    pub inflow: Option<f64>,
    pub outflow: Option<f64>,
    pub timing: Option<bool>,
    pub darcy: DarcyFile,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RawConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RawConfig::from_toml(&text)
    }

    /// `self` with every value set in `flags` replaced.
    pub fn overlay(mut self, flags: &RawConfig) -> Self {
        overlay!(
            self, flags, problem, schemes, dt_ladder, realizations, seed, grid, noise, gamma, phi,
            phi_tol, out, modes, diffusivity, reaction, t_final, convention, rates,
            reference_refine, inflow, outflow, timing
        );
        overlay!(self.darcy, flags.darcy, tol, background, streak, mu, peclet, permeability);
        self
    }
}

/// Medium for the transport problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumConfig {
    pub background: f64,
    pub streak: f64,
    pub mu: f64,
    pub tol: f64,
    /// Velocity is rescaled so that `max|q| L / D` equals this value.
    pub peclet: Option<f64>,
    pub permeability: Option<PathBuf>,
}

impl Default for MediumConfig {
    fn default() -> Self {
        MediumConfig {
            background: 1.0,
            streak: 100.0,
            mu: 1.0,
            tol: 1e-12,
            peclet: Some(16.58),
            permeability: None,
        }
    }
}

/// Fully resolved convergence-study settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub problem: ProblemKind,
    pub schemes: Vec<SchemeKind>,
    /// Steps per run for each ladder entry, `dt = t_final / steps`.
    pub ladder_steps: Vec<usize>,
    pub realizations: usize,
    pub seed: u64,
    pub nx: usize,
    pub ny: usize,
    pub noise: NoiseSpec,
    pub diffusivity: f64,
    pub reaction: f64,
    pub t_final: f64,
    pub phi: PhiConfig,
    pub convention: OuConvention,
    pub rate_model: RateModel,
    /// Fine steps per finest-ladder step; the transport reference runs at
    /// this resolution.
    pub reference_refine: usize,
    pub inflow: f64,
    pub outflow: f64,
    pub medium: MediumConfig,
    pub timing: bool,
    pub out: Option<PathBuf>,
}

pub const DEFAULT_LADDER: [usize; 6] = [10, 20, 40, 80, 160, 320];

impl StudyConfig {
    /// Defaults for the linear reaction-diffusion study.
    pub fn linear_default() -> Self {
        StudyConfig {
            problem: ProblemKind::Linear,
            schemes: SchemeKind::ALL.to_vec(),
            ladder_steps: DEFAULT_LADDER.to_vec(),
            realizations: 20,
            seed: 2024,
            nx: 51,
            ny: 51,
            noise: NoiseSpec {
                kind: NoiseKind::PowerLaw { r: 1.0 },
                gamma: 1.0,
                n: 50,
            },
            diffusivity: 1.0,
            reaction: 1.0,
            t_final: 1.0,
            phi: PhiConfig::default(),
            convention: OuConvention::ItoIsometry,
            rate_model: RateModel::Continuous,
            reference_refine: 1,
            inflow: 0.0,
            outflow: 0.0,
            medium: MediumConfig::default(),
            timing: false,
            out: None,
        }
    }

    /// Defaults for the transport study in the streaked medium.
    pub fn advection_default() -> Self {
        StudyConfig {
            problem: ProblemKind::Advection,
            schemes: vec![SchemeKind::Setd1, SchemeKind::Setd0],
            nx: 41,
            ny: 41,
            noise: NoiseSpec {
                kind: NoiseKind::PowerLaw { r: 2.0 },
                gamma: 0.01,
                n: 40,
            },
            diffusivity: 0.01,
            reaction: 0.0,
            reference_refine: 8,
            ..StudyConfig::linear_default()
        }
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let problem = match &raw.problem {
            Some(p) => p.parse()?,
            None => ProblemKind::Linear,
        };
        let mut c = match problem {
            ProblemKind::Linear => StudyConfig::linear_default(),
            ProblemKind::Advection => StudyConfig::advection_default(),
        };
        if let Some(s) = &raw.schemes {
            c.schemes = parse_list(s)?
                .iter()
                .map(|t| t.parse())
                .collect::<Result<_>>()?;
        }
        if let Some(v) = raw.t_final {
            c.t_final = v;
        }
        if let Some(s) = &raw.dt_ladder {
            c.ladder_steps = parse_ladder(s, c.t_final)?;
        }
        if let Some(v) = raw.realizations {
            c.realizations = v;
        }
        if let Some(s) = &raw.seed {
            c.seed = s.resolve()?;
        }
        if let Some(s) = &raw.grid {
            let (nx, ny) = parse_grid(s)?;
            c.nx = nx;
            c.ny = ny;
            // follow the grid unless the truncation is given explicitly
            c.noise.n = nx.min(ny) - 1;
        }
        if let Some(v) = raw.modes {
            c.noise.n = v;
        }
        if let Some(s) = &raw.noise {
            c.noise.kind = parse_noise(s)?;
        }
        if let Some(v) = raw.gamma {
            c.noise.gamma = v;
        }
        if let Some(s) = &raw.phi {
            c.phi.method = s.parse::<PhiMethod>()?;
        }
        if let Some(v) = raw.phi_tol {
            c.phi.tol = v;
        }
        if let Some(v) = raw.diffusivity {
            c.diffusivity = v;
        }
        if let Some(v) = raw.reaction {
            c.reaction = v;
        }
        if let Some(s) = &raw.convention {
            c.convention = match s.to_ascii_lowercase().as_str() {
                "ito" | "ito_isometry" | "isometry" => OuConvention::ItoIsometry,
                "paper" | "prefactor" | "paper_prefactor" => OuConvention::PaperPrefactor,
                _ => return Err(Error::Config(format!("unknown convention '{s}'"))),
            };
        }
        if let Some(s) = &raw.rates {
            c.rate_model = match s.to_ascii_lowercase().as_str() {
                "continuous" => RateModel::Continuous,
                "discrete" => RateModel::Discrete,
                _ => return Err(Error::Config(format!("unknown rate model '{s}'"))),
            };
        }
        if let Some(v) = raw.reference_refine {
            c.reference_refine = v;
        }
        if let Some(v) = raw.inflow {
            c.inflow = v;
        }
        if let Some(v) = raw.outflow {
            c.outflow = v;
        }
        if let Some(v) = raw.timing {
            c.timing = v;
        }
        if let Some(s) = &raw.out {
            c.out = Some(PathBuf::from(s));
        }
        let d = &raw.darcy;
        if let Some(v) = d.tol {
            c.medium.tol = v;
        }
        if let Some(v) = d.background {
            c.medium.background = v;
        }
        if let Some(v) = d.streak {
            c.medium.streak = v;
        }
        if let Some(v) = d.mu {
            c.medium.mu = v;
        }
        if let Some(v) = d.peclet {
            c.medium.peclet = if v > 0.0 { Some(v) } else { None };
        }
        if let Some(p) = &d.permeability {
            c.medium.permeability = Some(PathBuf::from(p));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schemes.is_empty() {
            return bad("no schemes selected".into());
        }
        if self.ladder_steps.is_empty() {
            return bad("empty dt ladder".into());
        }
        if self.ladder_steps.windows(2).any(|w| w[1] <= w[0]) {
            return bad("dt ladder must be strictly decreasing".into());
        }
        if self.ladder_steps.contains(&0) {
            return bad("dt ladder entries must be positive".into());
        }
        if self.realizations == 0 {
            return bad("need at least one realization".into());
        }
        if self.reference_refine == 0 {
            return bad("reference_refine must be at least 1".into());
        }
        let fine = self.fine_steps();
        if let Some(s) = self.ladder_steps.iter().find(|&&s| fine % s != 0) {
            return bad(format!(
                "ladder entry with {s} steps does not divide the {fine} fine steps"
            ));
        }
        if !(self.t_final > 0.0) {
            return bad(format!("t_final must be positive, got {}", self.t_final));
        }
        if self.problem == ProblemKind::Advection && self.reference_refine < 2 {
            return bad("transport reference must be finer than the ladder".into());
        }
        NoiseSpec::new(self.noise.kind, self.noise.gamma, self.noise.n)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.phi.validate()
    }

    /// Number of fine steps on which noise is sampled.
    pub fn fine_steps(&self) -> usize {
        self.ladder_steps.iter().copied().max().unwrap_or(1) * self.reference_refine
    }

    pub fn ladder_dt(&self) -> Vec<f64> {
        self.ladder_steps
            .iter()
            .map(|&s| self.t_final / s as f64)
            .collect()
    }

    pub fn grid(&self) -> Result<Grid> {
        match self.problem {
            ProblemKind::Linear => Grid::new(
                self.nx,
                self.ny,
                1.0,
                1.0,
                Layout::NodeCentered,
                crate::grid::Boundary::neumann(),
            ),
            ProblemKind::Advection => {
                if self.nx != self.ny {
                    return Err(Error::Config("transport grid must be square".into()));
                }
                transport_grid(self.nx, self.inflow, self.outflow)
            }
        }
    }

    /// Darcy velocity on the transport grid, rescaled to the target Peclet
    /// number when one is set.
    pub fn velocity(&self) -> Result<VelocityField> {
        let grid = self.grid()?;
        let m = &self.medium;
        let k = match &m.permeability {
            Some(p) => load_raster(p, &grid)?,
            None => permeability_streaks(&grid, m.background, m.streak, &DEFAULT_STREAKS)?,
        };
        let v = darcy_solve(&grid, &k, m.mu, 1.0, 0.0, m.tol)?;
        Ok(match m.peclet {
            Some(pe) => {
                let now = v.peclet(grid.lx(), self.diffusivity);
                v.scaled(pe / now)
            }
            None => v,
        })
    }

    pub fn build_problem(&self) -> Result<Problem> {
        let grid = self.grid()?;
        let p = match self.problem {
            ProblemKind::Linear => Problem::linear(
                grid,
                self.diffusivity,
                self.reaction,
                self.noise,
                None,
                self.t_final,
            )?,
            ProblemKind::Advection => {
                let v = self.velocity()?;
                Problem::advection(grid, self.diffusivity, &v, self.noise, None, self.t_final)?
            }
        };
        Ok(p.with_rate_model(self.rate_model))
    }
}

fn parse_list(s: &str) -> Result<Vec<String>> {
    let v: Vec<String> = s
        .split(',')
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect();
    if v.is_empty() {
        return Err(Error::Config(format!("empty list '{s}'")));
    }
    Ok(v)
}

/// Parses `1/10,1/20` or `0.1,0.05` into step counts for horizon `t_final`.
pub fn parse_ladder(s: &str, t_final: f64) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for tok in parse_list(s)? {
        let dt = match tok.split_once('/') {
            Some((a, b)) => {
                let a: f64 = a.trim().parse().map_err(|_| Error::Config(format!("bad dt '{tok}'")))?;
                let b: f64 = b.trim().parse().map_err(|_| Error::Config(format!("bad dt '{tok}'")))?;
                a / b
            }
            None => tok.parse().map_err(|_| Error::Config(format!("bad dt '{tok}'")))?,
        };
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("bad dt '{tok}'")));
        }
        let steps = (t_final / dt).round();
        if steps < 1.0 || (steps * dt - t_final).abs() > 1e-9 * t_final {
            return Err(Error::Config(format!(
                "dt {tok} does not divide the horizon {t_final}"
            )));
        }
        out.push(steps as usize);
    }
    Ok(out)
}

pub fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let v = parse_list(s)?;
    let num = |t: &str| {
        t.parse::<usize>()
            .map_err(|_| Error::Config(format!("bad grid '{s}'")))
    };
    match v.as_slice() {
        [n] => Ok((num(n)?, num(n)?)),
        [a, b] => Ok((num(a)?, num(b)?)),
        _ => Err(Error::Config(format!("bad grid '{s}'"))),
    }
}

/// `power:r` or `expcov:b1,b2`.
pub fn parse_noise(s: &str) -> Result<NoiseKind> {
    let bad = || Error::Config(format!("bad noise '{s}'"));
    let (kind, args) = s.split_once(':').ok_or_else(bad)?;
    let nums: Vec<f64> = args
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    match (kind.trim().to_ascii_lowercase().as_str(), nums.as_slice()) {
        ("power", [r]) => Ok(NoiseKind::PowerLaw { r: *r }),
        ("expcov", [b]) => Ok(NoiseKind::ExpCovariance { b1: *b, b2: *b }),
        ("expcov", [b1, b2]) => Ok(NoiseKind::ExpCovariance { b1: *b1, b2: *b2 }),
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_parsing() {
        assert_eq!(
            parse_ladder("1/10, 1/20,0.025", 1.0).unwrap(),
            vec![10, 20, 40]
        );
        assert!(parse_ladder("0.3", 1.0).is_err());
        assert!(parse_ladder("x", 1.0).unwrap_err().is_config());
        assert_eq!(parse_ladder("0.5", 2.0).unwrap(), vec![4]);
    }

    #[test]
    fn noise_and_grid_parsing() {
        assert_eq!(parse_noise("power:2").unwrap(), NoiseKind::PowerLaw { r: 2.0 });
        assert_eq!(
            parse_noise("expcov:0.2,0.3").unwrap(),
            NoiseKind::ExpCovariance { b1: 0.2, b2: 0.3 }
        );
        assert!(parse_noise("white").is_err());
        assert_eq!(parse_grid("51,41").unwrap(), (51, 41));
        assert_eq!(parse_grid("33").unwrap(), (33, 33));
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn seeds() {
        assert_eq!(parse_seed("0xff").unwrap(), 255);
        assert_eq!(parse_seed("17").unwrap(), 17);
        assert!(parse_seed("-1").is_err());
    }

    #[test]
    fn file_then_flags() {
        let file = RawConfig::from_toml(
            r#"
            problem = "linear"
            schemes = "SETD1,SETD0"
            dt_ladder = "1/10,1/20"
            realizations = 3
            seed = "0x10"
            grid = "17,17"
            noise = "expcov:0.2,0.2"
            gamma = 2.0
            [darcy]
            tol = 1e-11
            "#,
        )
        .unwrap();
        let flags = RawConfig {
            realizations: Some(5),
            seed: Some(SeedValue::Int(9)),
            ..RawConfig::default()
        };
        let c = StudyConfig::from_raw(&file.overlay(&flags)).unwrap();
        assert_eq!(c.realizations, 5);
        assert_eq!(c.seed, 9);
        assert_eq!(c.schemes, vec![SchemeKind::Setd1, SchemeKind::Setd0]);
        assert_eq!(c.ladder_steps, vec![10, 20]);
        assert_eq!((c.nx, c.noise.n), (17, 16));
        assert_eq!(c.noise.gamma, 2.0);
        assert_eq!(c.medium.tol, 1e-11);
        assert!(RawConfig::from_toml("bogus = 1").unwrap_err().is_config());
    }

    #[test]
    fn validation() {
        let mut c = StudyConfig::linear_default();
        c.ladder_steps = vec![20, 10];
        assert!(c.validate().is_err());
        c.ladder_steps = vec![10, 15];
        assert!(c.validate().is_err());
        c.ladder_steps = vec![10, 20];
        c.validate().unwrap();
        c.schemes.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn transport_velocity_hits_peclet() {
        let mut c = StudyConfig::advection_default();
        c.nx = 20;
        c.ny = 20;
        c.noise.n = 19;
        let v = c.velocity().unwrap();
        assert!((v.peclet(1.0, c.diffusivity) - 16.58).abs() < 1e-9);
        let p = c.build_problem().unwrap();
        assert_eq!(p.grid.len(), 400);
    }
}
