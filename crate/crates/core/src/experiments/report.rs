//! Convergence reports, order fits and their CSV form.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::schemes::SchemeKind;

/// Least-squares line through `(log dt, log error)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// Root of the summed squared residuals in log space.
    pub residual: f64,
    pub points: usize,
}

pub fn fit_order(pairs: &[(f64, f64)]) -> Result<Fit> {
    if pairs.len() < 2 {
        return Err(Error::invalid("order fit needs at least two points"));
    }
    if pairs.iter().any(|&(d, e)| !(d > 0.0 && e > 0.0 && d.is_finite() && e.is_finite())) {
        return Err(Error::invalid("order fit needs positive finite values"));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("order fit needs distinct dt values"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(Fit {
        slope,
        intercept,
        residual,
        points: pairs.len(),
    })
}

/// `sqrt(mean_r ||numeric_r - reference_r||^2)`.
pub fn rms_error(numeric: &[Vec<f64>], reference: &[Vec<f64>], grid: &Grid) -> Result<f64> {
    if numeric.len() != reference.len() || numeric.is_empty() {
        return Err(Error::invalid(format!(
            "rms error needs matching nonempty sets, got {} and {}",
            numeric.len(),
            reference.len()
        )));
    }
    let mut acc = 0.0;
    for (a, b) in numeric.iter().zip(reference) {
        acc += sq_distance(a, b, grid)?;
    }
    Ok((acc / numeric.len() as f64).sqrt())
}

pub(crate) fn sq_distance(a: &[f64], b: &[f64], grid: &Grid) -> Result<f64> {
    crate::error::check_len("rms error", a.len(), b.len())?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(grid.l2_norm(&d)?.powi(2))
}

/// Results of one scheme over the dt ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub scheme: SchemeKind,
    /// Strictly decreasing.
    pub dt: Vec<f64>,
    /// `None` where some realization failed.
    pub rms_error: Vec<Option<f64>>,
    /// Mean wall-clock seconds per realization, when timing was requested.
    pub wall_s: Option<Vec<f64>>,
    pub realizations: usize,
    pub seed: u64,
    /// Cells after which the error stopped decreasing.
    pub plateau: Vec<bool>,
    pub failures: Vec<(f64, String)>,
}

impl ConvergenceReport {
    pub fn new(
        scheme: SchemeKind,
        dt: Vec<f64>,
        rms_error: Vec<Option<f64>>,
        realizations: usize,
        seed: u64,
    ) -> Self {
        let plateau = plateau_flags(&rms_error);
        ConvergenceReport {
            scheme,
            dt,
            rms_error,
            wall_s: None,
            realizations,
            seed,
            plateau,
            failures: Vec::new(),
        }
    }

    fn pairs(&self, upto: usize) -> Vec<(f64, f64)> {
        self.dt[..upto]
            .iter()
            .zip(&self.rms_error[..upto])
            .filter_map(|(&d, e)| e.map(|e| (d, e)))
            .collect()
    }

    /// Fit over every successful cell; `None` with fewer than two.
    pub fn fit(&self) -> Option<Fit> {
        fit_order(&self.pairs(self.dt.len())).ok()
    }

    /// Number of leading cells before the first plateau flag.
    pub fn decreasing_len(&self) -> usize {
        self.plateau
            .iter()
            .position(|&p| p)
            .unwrap_or(self.plateau.len())
    }

    /// Fit over the leading cells where the error still decreases.
    pub fn fit_decreasing(&self) -> Option<Fit> {
        fit_order(&self.pairs(self.decreasing_len())).ok()
    }

    /// `log2(e_k / e_{k+1})` for consecutive successful cells.
    pub fn local_orders(&self) -> Vec<Option<f64>> {
        self.rms_error
            .windows(2)
            .zip(self.dt.windows(2))
            .map(|(e, d)| match (e[0], e[1]) {
                (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).ln() / (d[0] / d[1]).ln()),
                _ => None,
            })
            .collect()
    }
}

/// Flags the cells finer than the one with the smallest error: past that
/// point the error has stopped decreasing.
pub fn plateau_flags(errors: &[Option<f64>]) -> Vec<bool> {
    let mut best: Option<(usize, f64)> = None;
    for (k, e) in errors.iter().enumerate() {
        if let Some(v) = *e {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((k, v));
            }
        }
    }
    let cut = best.map_or(errors.len(), |(k, _)| k + 1);
    (0..errors.len()).map(|k| k >= cut).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `scheme,dt,rms_error,wall_s` rows followed by `#` summary lines.
pub fn write_reports(mut w: impl Write, reports: &[ConvergenceReport]) -> Result<()> {
    writeln!(w, "scheme,dt,rms_error,wall_s")?;
    for r in reports {
        for (k, dt) in r.dt.iter().enumerate() {
            let wall = r.wall_s.as_ref().map(|v| v[k]);
            writeln!(
                w,
                "{},{},{},{}",
                r.scheme,
                dt,
                fmt_opt(r.rms_error[k]),
                fmt_opt(wall)
            )?;
        }
    }
    for r in reports {
        writeln!(
            w,
            "# run scheme={} realizations={} seed={}",
            r.scheme, r.realizations, r.seed
        )?;
        match r.fit() {
            Some(f) => writeln!(
                w,
                "# order scheme={} slope={} intercept={} residual={} points={}",
                r.scheme, f.slope, f.intercept, f.residual, f.points
            )?,
            None => writeln!(w, "# order scheme={} insufficient", r.scheme)?,
        }
        if r.plateau.iter().any(|&p| p) {
            let cells: Vec<String> = r
                .dt
                .iter()
                .zip(&r.plateau)
                .filter(|(_, &p)| p)
                .map(|(d, _)| d.to_string())
                .collect();
            writeln!(w, "# plateau scheme={} dt={}", r.scheme, cells.join(";"))?;
            match r.fit_decreasing() {
                Some(f) => writeln!(
                    w,
                    "# order_decreasing scheme={} slope={} intercept={} residual={} points={}",
                    r.scheme, f.slope, f.intercept, f.residual, f.points
                )?,
                None => writeln!(w, "# order_decreasing scheme={} insufficient", r.scheme)?,
            }
        }
        for (dt, msg) in &r.failures {
            writeln!(
                w,
                "# failed scheme={} dt={} error={}",
                r.scheme,
                dt,
                msg.replace('\n', " ")
            )?;
        }
    }
    Ok(())
}

pub fn write_reports_file(path: &Path, reports: &[ConvergenceReport]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let f = std::fs::File::create(path)?;
    let mut buf = std::io::BufWriter::new(f);
    write_reports(&mut buf, reports)?;
    buf.flush()?;
    Ok(())
}

fn footer_fields(line: &str) -> Vec<(&str, &str)> {
    line.split_whitespace()
        .filter_map(|t| t.split_once('='))
        .collect()
}

/// Parses the output of [`write_reports`].
pub fn read_reports(r: impl BufRead) -> Result<Vec<ConvergenceReport>> {
    let bad = |m: String| Error::Config(format!("report parse: {m}"));
    let mut text = String::new();
    let mut footers = Vec::new();
    for line in r.lines() {
        let line = line?;
        match line.strip_prefix('#') {
            Some(f) => footers.push(f.trim().to_string()),
            None => {
                text.push_str(&line);
                text.push('\n');
            }
        }
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut reports: Vec<ConvergenceReport> = Vec::new();
    let mut walls: Vec<Vec<Option<f64>>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let scheme: SchemeKind = rec.get(0).unwrap_or("").parse()?;
        let num = |i: usize| -> Result<Option<f64>> {
            match rec.get(i).unwrap_or("") {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(format!("bad number '{s}'"))),
            }
        };
        let dt = num(1)?.ok_or_else(|| bad("missing dt".into()))?;
        let idx = match reports.iter().position(|r| r.scheme == scheme) {
            Some(i) => i,
            None => {
                reports.push(ConvergenceReport::new(scheme, vec![], vec![], 0, 0));
                walls.push(Vec::new());
                reports.len() - 1
            }
        };
        reports[idx].dt.push(dt);
        reports[idx].rms_error.push(num(2)?);
        walls[idx].push(num(3)?);
    }
    for (r, w) in reports.iter_mut().zip(walls) {
        r.plateau = plateau_flags(&r.rms_error);
        if !w.is_empty() && w.iter().all(|v| v.is_some()) {
            r.wall_s = Some(w.into_iter().flatten().collect());
        }
    }
    for f in footers {
        let (tag, rest) = f.split_once(' ').unwrap_or((f.as_str(), ""));
        let fields = footer_fields(rest);
        let get = |k: &str| fields.iter().find(|(a, _)| *a == k).map(|(_, v)| *v);
        let Some(scheme) = get("scheme") else { continue };
        let scheme: SchemeKind = scheme.parse()?;
        let Some(r) = reports.iter_mut().find(|r| r.scheme == scheme) else {
            continue;
        };
        match tag {
            "run" => {
                r.realizations = get("realizations")
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("run line".into()))?;
                r.seed = get("seed")
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("run line".into()))?;
            }
            "failed" => {
                let dt = get("dt").and_then(|v| v.parse().ok()).unwrap_or(f64::NAN);
                let msg = rest.split_once("error=").map(|x| x.1).unwrap_or("").to_string();
                r.failures.push((dt, msg));
            }
            _ => {}
        }
    }
    Ok(reports)
}

pub fn read_reports_file(path: &Path) -> Result<Vec<ConvergenceReport>> {
    read_reports(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Parses the `slope` of the `order` footer for `scheme` from report text.
pub fn footer_slope(text: &str, scheme: SchemeKind) -> Option<f64> {
    text.lines()
        .filter_map(|l| l.strip_prefix("# order "))
        .map(footer_fields)
        .find(|f| f.iter().any(|(k, v)| *k == "scheme" && *v == scheme.name()))
        .and_then(|f| f.iter().find(|(k, _)| *k == "slope").and_then(|(_, v)| v.parse().ok()))
}
