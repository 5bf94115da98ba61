use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spde_expint::experiments::{
    parse_seed, run_convergence_study, run_darcy, run_phi_bench, write_darcy_report,
    write_phi_bench, write_reports, write_reports_file, PhiBenchConfig, RawConfig, SeedValue,
    StudyConfig,
};
use spde_expint::phi::{PhiConfig, PhiEvaluator, PhiMethod};
use spde_expint::schemes::{integrate, write_snapshots, SchemeConfig, SchemeKind};
use spde_expint::{Error, Result};

/// Exponential integrators for SPDEs with additive noise.
#[derive(Parser)]
#[command(name = "setd", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Strong-error study over a dt ladder.
    Converge(ProblemArgs),
    /// One trajectory with raster snapshots.
    Run(RunArgs),
    /// Darcy velocity field and divergence report.
    Darcy(ProblemArgs),
    /// Timing and accuracy of the phi evaluators.
    PhiBench(BenchArgs),
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// Key-value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// linear | advection
    #[arg(long)]
    problem: Option<String>,
    /// Comma-separated: SETD1,SETD0,SemiImplicitStd,SemiImplicitModified
    #[arg(long)]
    schemes: Option<String>,
    /// e.g. 1/10,1/20,1/40
    #[arg(long)]
    dt_ladder: Option<String>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Decimal or 0x-prefixed hex.
    #[arg(long)]
    seed: Option<String>,
    /// nx,ny
    #[arg(long)]
    grid: Option<String>,
    /// power:r or expcov:b1,b2
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Truncation N of the noise expansion.
    #[arg(long)]
    modes: Option<usize>,
    /// krylov | leja | dense | auto
    #[arg(long)]
    phi: Option<String>,
    #[arg(long)]
    phi_tol: Option<f64>,
    #[arg(long)]
    diffusivity: Option<f64>,
    #[arg(long)]
    reaction: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    /// ito | paper
    #[arg(long)]
    convention: Option<String>,
    /// continuous | discrete
    #[arg(long)]
    rates: Option<String>,
    /// Fine steps per finest ladder step.
    #[arg(long)]
    reference_refine: Option<usize>,
    /// Record wall-clock seconds per ladder cell.
    #[arg(long)]
    timing: bool,
    /// Target Peclet number for the transport velocity (0 keeps the raw field).
    #[arg(long)]
    peclet: Option<f64>,
    /// Permeability raster (rows = y index).
    #[arg(long)]
    permeability: Option<String>,
    #[arg(long)]
    darcy_tol: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ProblemArgs {
    fn raw(&self) -> Result<RawConfig> {
        let file = match &self.config {
            Some(p) => RawConfig::load(p)?,
            None => RawConfig::default(),
        };
        let mut flags = RawConfig {
            problem: self.problem.clone(),
            schemes: self.schemes.clone(),
            dt_ladder: self.dt_ladder.clone(),
            realizations: self.realizations,
            seed: self.seed.clone().map(SeedValue::Text),
            grid: self.grid.clone(),
            noise: self.noise.clone(),
            gamma: self.gamma,
            phi: self.phi.clone(),
            phi_tol: self.phi_tol,
            out: self.out.as_ref().map(|p| p.display().to_string()),
            modes: self.modes,
            diffusivity: self.diffusivity,
            reaction: self.reaction,
            t_final: self.t_final,
            convention: self.convention.clone(),
            rates: self.rates.clone(),
            reference_refine: self.reference_refine,
            timing: self.timing.then_some(true),
            ..RawConfig::default()
        };
        flags.darcy.peclet = self.peclet;
        flags.darcy.permeability = self.permeability.clone();
        flags.darcy.tol = self.darcy_tol;
        Ok(file.overlay(&flags))
    }

    fn study(&self) -> Result<StudyConfig> {
        StudyConfig::from_raw(&self.raw()?)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value = "SETD1")]
    scheme: String,
    /// Step size; must divide the horizon.
    #[arg(long, default_value = "1/100")]
    dt: String,
    #[arg(long, default_value_t = 0)]
    realization: u64,
    /// Comma-separated step indices to write (0 is the initial field).
    #[arg(long)]
    snapshots: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    /// Grid points per side, comma-separated.
    #[arg(long, default_value = "20,50,100")]
    sizes: String,
    #[arg(long, default_value = "0.01")]
    dts: String,
    #[arg(long, default_value = "krylov,leja")]
    methods: String,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1.0)]
    diffusivity: f64,
    #[arg(long, default_value = "1")]
    seed: String,
    /// CSV output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Config(format!("bad {what} '{t}'")))
        })
        .collect()
}

fn converge(args: &ProblemArgs) -> Result<()> {
    let cfg = args.study()?;
    let reports = run_convergence_study(&cfg)?;
    match &cfg.out {
        Some(dir) => {
            let path = dir.join("convergence.csv");
            write_reports_file(&path, &reports)?;
            eprintln!("wrote {}", path.display());
        }
        None => write_reports(std::io::stdout().lock(), &reports)?,
    }
    for r in &reports {
        match r.fit() {
            Some(f) => eprintln!("{:<22} order {:.3}", r.scheme.name(), f.slope),
            None => eprintln!("{:<22} order n/a", r.scheme.name()),
        }
    }
    if reports.iter().any(|r| !r.failures.is_empty()) {
        return Err(Error::Numerical("some ladder cells failed; see report".into()));
    }
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = args.problem.study()?;
    let problem = cfg.build_problem()?;
    let kind: SchemeKind = args.scheme.parse()?;
    let steps = spde_expint::experiments::parse_ladder(&args.dt, cfg.t_final)?[0];
    let scheme = SchemeConfig::new(kind, cfg.t_final, steps, cfg.phi)
        .map_err(|e| Error::Config(e.to_string()))?
        .with_convention(cfg.convention);
    let snaps: Vec<usize> = match &args.snapshots {
        Some(s) => list(s, "snapshot step")?,
        None => vec![steps],
    };
    let phi = PhiEvaluator::new(&problem.operator, cfg.phi)?;
    let traj = integrate(&problem, &scheme, &phi, cfg.seed, args.realization, 1, &snaps)?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    write_snapshots(&dir, &format!("{}_r{}", kind.name(), args.realization), &problem.grid, &traj)?;
    eprintln!("wrote {} snapshots to {}", traj.snapshots.len(), dir.display());
    Ok(())
}

fn darcy(args: &ProblemArgs) -> Result<()> {
    let mut raw = args.raw()?;
    raw.problem = Some("advection".into());
    let cfg = StudyConfig::from_raw(&raw)?;
    let (v, report) = run_darcy(&cfg)?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    v.write_csv(&dir.join("velocity.csv"))?;
    write_darcy_report(&dir.join("darcy_report.csv"), &report)?;
    eprintln!(
        "max |div q| = {:e}, inflow = {}, outflow = {}, Pe = {}",
        report.max_abs_divergence, report.inflow, report.outflow, report.peclet
    );
    Ok(())
}

fn phi_bench(args: &BenchArgs) -> Result<()> {
    let cfg = PhiBenchConfig {
        sizes: list(&args.sizes, "size")?,
        dts: list(&args.dts, "dt")?,
        methods: list::<PhiMethod>(&args.methods, "method")?,
        diffusivity: args.diffusivity,
        tol: args.tol,
        reps: args.reps,
        seed: parse_seed(&args.seed)?,
    };
    PhiConfig {
        tol: cfg.tol,
        ..PhiConfig::default()
    }
    .validate()?;
    let rows = run_phi_bench(&cfg)?;
    match &args.out {
        Some(p) => write_phi_bench(std::fs::File::create(p)?, &rows)?,
        None => write_phi_bench(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Command::Converge(a) => converge(a),
        Command::Run(a) => run(a),
        Command::Darcy(a) => darcy(a),
        Command::PhiBench(a) => phi_bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
