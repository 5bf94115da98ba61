//! Actions of `phi_0(dt A) = exp(dt A)` and `phi_1(dt A) = (dt A)^{-1}(exp(dt A) - I)`
//! on vectors, by a dense Taylor oracle, Arnoldi projection, or Newton
//! interpolation at real fast Leja points.

mod dense;
mod krylov;
mod leja;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub use dense::{dense_phi, dense_phi_pair, DENSE_LIMIT};
pub use krylov::{arnoldi, krylov_phi_apply, Arnoldi};
pub use leja::{divided_differences, fast_leja_points, leja_phi_apply, LejaEvaluator, LejaPlan};

/// Matrix-free linear operator with the row information needed for spectral
/// bounds.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn diagonal(&self) -> Vec<f64>;

    /// `sum_{l != k} |a_kl|` for each row `k`.
    fn offdiag_abs_row_sums(&self) -> Vec<f64>;

    fn is_symmetric(&self) -> bool {
        false
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            e[j] = 0.0;
            m.column_mut(j).copy_from_slice(&col);
        }
        m
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.nrows();
        y.fill(0.0);
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for (yi, a) in y.iter_mut().zip(self.column(j).iter()) {
                    *yi += a * xj;
                }
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows()).map(|k| self[(k, k)]).collect()
    }

    fn offdiag_abs_row_sums(&self) -> Vec<f64> {
        (0..self.nrows())
            .map(|k| {
                (0..self.ncols())
                    .filter(|&l| l != k)
                    .map(|l| self[(k, l)].abs())
                    .sum()
            })
            .collect()
    }

    fn is_symmetric(&self) -> bool {
        self == &self.transpose()
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.clone()
    }
}

/// `s A` for a borrowed operator.
pub(crate) struct Scaled<'a> {
    pub op: &'a dyn LinearOperator,
    pub s: f64,
}

impl LinearOperator for Scaled<'_> {
    fn dim(&self) -> usize {
        self.op.dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.op.apply(x, y);
        for v in y.iter_mut() {
            *v *= self.s;
        }
    }
    fn diagonal(&self) -> Vec<f64> {
        self.op.diagonal().into_iter().map(|d| d * self.s).collect()
    }
    fn offdiag_abs_row_sums(&self) -> Vec<f64> {
        let s = self.s.abs();
        self.op.offdiag_abs_row_sums().into_iter().map(|r| r * s).collect()
    }
    fn is_symmetric(&self) -> bool {
        self.op.is_symmetric()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhiIndex {
    Phi0,
    Phi1,
}

impl PhiIndex {
    pub fn eval(self, z: f64) -> f64 {
        match self {
            PhiIndex::Phi0 => z.exp(),
            PhiIndex::Phi1 => {
                if z == 0.0 {
                    1.0
                } else {
                    z.exp_m1() / z
                }
            }
        }
    }
}

/// Real interval `[alpha, beta]` containing every Gershgorin disc centre plus
/// radius.
pub fn gershgorin_interval(op: &dyn LinearOperator) -> (f64, f64) {
    let d = op.diagonal();
    let r = op.offdiag_abs_row_sums();
    d.iter().zip(&r).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (d, r)| {
        (lo.min(d - r), hi.max(d + r))
    })
}

pub(crate) fn gershgorin_norm(op: &dyn LinearOperator) -> f64 {
    let d = op.diagonal();
    let r = op.offdiag_abs_row_sums();
    d.iter().zip(&r).map(|(d, r)| d.abs() + r).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovConfig {
    pub m: usize,
    pub tol: f64,
    /// Step rejections tolerated per substep.
    pub max_restarts: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig {
            m: 6,
            tol: 1e-6,
            max_restarts: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LejaConfig {
    pub max_degree: usize,
    pub tol: f64,
    pub interval_pad: f64,
    /// Upper bound on the half-width scale `gamma` of one substep's interval.
    pub substep_gamma: f64,
}

impl Default for LejaConfig {
    fn default() -> Self {
        LejaConfig {
            max_degree: 100,
            tol: 1e-6,
            interval_pad: 0.0,
            substep_gamma: 25.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiMethod {
    Dense,
    Krylov,
    #[default]
    Leja,
    /// Krylov for `phi_1`, Leja for `phi_0`.
    Auto,
}

impl std::str::FromStr for PhiMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(PhiMethod::Dense),
            "krylov" => Ok(PhiMethod::Krylov),
            "leja" => Ok(PhiMethod::Leja),
            "auto" => Ok(PhiMethod::Auto),
            _ => Err(Error::Config(format!("unknown phi method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhiConfig {
    pub method: PhiMethod,
    pub tol: f64,
    pub krylov_m: usize,
    pub leja_max_degree: usize,
    pub leja_substep_gamma: f64,
    pub leja_interval_pad: f64,
}

impl Default for PhiConfig {
    fn default() -> Self {
        PhiConfig {
            method: PhiMethod::default(),
            tol: 1e-6,
            krylov_m: 6,
            leja_max_degree: 100,
            leja_substep_gamma: 25.0,
            leja_interval_pad: 0.0,
        }
    }
}

impl PhiConfig {
    pub fn with_method(method: PhiMethod) -> Self {
        PhiConfig {
            method,
            ..Default::default()
        }
    }

    pub fn krylov(&self) -> KrylovConfig {
        KrylovConfig {
            m: self.krylov_m,
            tol: self.tol,
            ..Default::default()
        }
    }

    pub fn leja(&self) -> LejaConfig {
        LejaConfig {
            max_degree: self.leja_max_degree,
            tol: self.tol,
            interval_pad: self.leja_interval_pad,
            substep_gamma: self.leja_substep_gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config("phi.tol must be positive".into()));
        }
        if self.krylov_m == 0 || self.leja_max_degree == 0 {
            return Err(Error::Config(
                "phi.krylov_m and phi.leja_max_degree must be at least 1".into(),
            ));
        }
        if !(self.leja_substep_gamma > 0.0) || !(self.leja_interval_pad >= 0.0) {
            return Err(Error::Config("invalid Leja interval settings".into()));
        }
        Ok(())
    }
}

type DenseKey = (u64, PhiIndex);

/// Configured evaluator bound to one operator; per-`dt` data (Leja plans,
/// dense matrices) is computed on first use and shared afterwards.
pub struct PhiEvaluator<'a> {
    op: &'a dyn LinearOperator,
    cfg: PhiConfig,
    leja: LejaEvaluator<'a>,
    dense: Mutex<HashMap<DenseKey, Arc<DMatrix<f64>>>>,
}

impl<'a> PhiEvaluator<'a> {
    pub fn new(op: &'a dyn LinearOperator, cfg: PhiConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.method == PhiMethod::Dense && op.dim() > DENSE_LIMIT {
            return Err(Error::Unsupported(format!(
                "dense phi limited to dimension {DENSE_LIMIT}, operator has {}",
                op.dim()
            )));
        }
        Ok(PhiEvaluator {
            op,
            cfg,
            leja: LejaEvaluator::new(op, cfg.leja())?,
            dense: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &PhiConfig {
        &self.cfg
    }

    pub fn operator(&self) -> &dyn LinearOperator {
        self.op
    }

    pub fn method_for(&self, idx: PhiIndex) -> PhiMethod {
        match (self.cfg.method, idx) {
            (PhiMethod::Auto, PhiIndex::Phi0) => PhiMethod::Leja,
            (PhiMethod::Auto, PhiIndex::Phi1) => PhiMethod::Krylov,
            (m, _) => m,
        }
    }

    pub fn apply(&self, idx: PhiIndex, dt: f64, v: &[f64]) -> Result<Vec<f64>> {
        check_len("phi input", self.op.dim(), v.len())?;
        match self.method_for(idx) {
            PhiMethod::Krylov => krylov_phi_apply(self.op, v, dt, idx, &self.cfg.krylov()),
            PhiMethod::Leja | PhiMethod::Auto => self.leja.apply(v, dt, idx),
            PhiMethod::Dense => {
                if !(dt > 0.0) {
                    return Err(Error::invalid("phi needs dt > 0"));
                }
                let m = self.dense_matrix(idx, dt)?;
                let mut out = vec![0.0; v.len()];
                m.as_ref().apply(v, &mut out);
                Ok(out)
            }
        }
    }

    fn dense_matrix(&self, idx: PhiIndex, dt: f64) -> Result<Arc<DMatrix<f64>>> {
        let key = (dt.to_bits(), idx);
        if let Some(m) = self.dense.lock().expect("phi cache poisoned").get(&key) {
            return Ok(m.clone());
        }
        let (e, p) = dense_phi_pair(&(self.op.to_dense() * dt))?;
        let mut cache = self.dense.lock().expect("phi cache poisoned");
        let e = cache
            .entry((dt.to_bits(), PhiIndex::Phi0))
            .or_insert_with(|| Arc::new(e))
            .clone();
        let p = cache
            .entry((dt.to_bits(), PhiIndex::Phi1))
            .or_insert_with(|| Arc::new(p))
            .clone();
        Ok(match idx {
            PhiIndex::Phi0 => e,
            PhiIndex::Phi1 => p,
        })
    }
}
