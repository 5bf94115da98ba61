use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;

use super::dense::taylor_phi_pair;
use super::{gershgorin_interval, LejaConfig, LinearOperator, PhiIndex};
use crate::error::{check_len, Error, Result};

/// Fast Leja points on `[-2, 2]`, starting `2, -2, 0`.
///
/// Candidates are the midpoints of adjacent accepted points; each new point is
/// the candidate maximising the product of distances to all accepted points
/// (ties go to the leftmost candidate).
pub fn fast_leja_points(count: usize) -> Vec<f64> {
    let mut pts = vec![2.0, -2.0, 0.0];
    pts.truncate(count);
    if count <= 3 {
        return pts;
    }
    let logdist = |x: f64, pts: &[f64]| pts.iter().map(|p| (x - p).abs().ln()).sum::<f64>();
    // (position, left neighbour, right neighbour, log-product)
    let mut cands: Vec<(f64, f64, f64, f64)> = [(-2.0, 0.0), (0.0, 2.0)]
        .iter()
        .map(|&(a, b)| {
            let x = 0.5 * (a + b);
            (x, a, b, logdist(x, &pts))
        })
        .collect();
    while pts.len() < count {
        let mut best = 0;
        for (k, c) in cands.iter().enumerate() {
            let b = &cands[best];
            if c.3 > b.3 || (c.3 == b.3 && c.0 < b.0) {
                best = k;
            }
        }
        let (x, a, b, _) = cands.swap_remove(best);
        for c in cands.iter_mut() {
            c.3 += (c.0 - x).abs().ln();
        }
        pts.push(x);
        for (l, r) in [(a, x), (x, b)] {
            let m = 0.5 * (l + r);
            cands.push((m, l, r, logdist(m, &pts)));
        }
    }
    pts
}

/// Newton divided differences of `phi_i(c + gamma z)` at the nodes `points`,
/// taken as the first column of `phi_i(c I + gamma L)` with `L` bidiagonal
/// (nodes on the diagonal, ones below).
pub fn divided_differences(points: &[f64], idx: PhiIndex, c: f64, gamma: f64) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::invalid("no interpolation points"));
    }
    for (k, p) in points.iter().enumerate() {
        if points[..k].contains(p) {
            return Err(Error::invalid(format!("repeated interpolation point {p}")));
        }
    }
    let n = points.len();
    let mut l = DMatrix::zeros(n, n);
    for k in 0..n {
        l[(k, k)] = c + gamma * points[k];
        if k + 1 < n {
            l[(k + 1, k)] = gamma;
        }
    }
    let (e, p) = taylor_phi_pair(&l, 30)?;
    let m = match idx {
        PhiIndex::Phi0 => e,
        PhiIndex::Phi1 => p,
    };
    Ok(m.column(0).iter().copied().collect())
}

/// Interpolation data for `phi_i(h A)` with `h = dt / substeps`.
#[derive(Debug, Clone)]
pub struct LejaPlan {
    pub dt: f64,
    pub substeps: usize,
    pub c: f64,
    pub gamma: f64,
    pub dd0: Vec<f64>,
    pub dd1: Vec<f64>,
}

/// Leja interpolation bound to one operator, with the point table and the
/// operator's Gershgorin interval computed once.
pub struct LejaEvaluator<'a> {
    op: &'a dyn LinearOperator,
    cfg: LejaConfig,
    points: Arc<Vec<f64>>,
    alpha: f64,
    beta: f64,
    plans: Mutex<HashMap<u64, Arc<LejaPlan>>>,
}

const MAX_DOUBLINGS: usize = 12;
const GROWTH_LIMIT: usize = 10;
/// Largest `h beta` allowed per substep.
const MAX_RIGHT_END: f64 = 1.0;

enum Newton {
    Done(Vec<f64>),
    Failed,
}

impl<'a> LejaEvaluator<'a> {
    pub fn new(op: &'a dyn LinearOperator, cfg: LejaConfig) -> Result<Self> {
        if cfg.max_degree == 0 || !(cfg.tol > 0.0) || !(cfg.substep_gamma > 0.0) {
            return Err(Error::invalid("invalid Leja configuration"));
        }
        let (a, b) = gershgorin_interval(op);
        let pad = cfg.interval_pad * (b - a);
        Ok(LejaEvaluator {
            op,
            cfg,
            points: Arc::new(fast_leja_points(cfg.max_degree + 1)),
            alpha: a - pad,
            beta: b + pad,
            plans: Mutex::new(HashMap::new()),
        })
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.alpha, self.beta)
    }

    pub fn plan(&self, dt: f64) -> Result<Arc<LejaPlan>> {
        if let Some(p) = self.plans.lock().expect("leja cache poisoned").get(&dt.to_bits()) {
            return Ok(p.clone());
        }
        let width = dt * (self.beta - self.alpha) / 4.0;
        // a loose Gershgorin bound can reach far into Re > 0, where the
        // interpolated exponential is huge and the Newton sum cancels
        let right = dt * self.beta.max(0.0) / MAX_RIGHT_END;
        let s = (width / self.cfg.substep_gamma).max(right).ceil().max(1.0) as usize;
        let plan = Arc::new(self.build_plan(dt, s)?);
        self.remember(plan.clone());
        Ok(plan)
    }

    fn remember(&self, plan: Arc<LejaPlan>) {
        self.plans
            .lock()
            .expect("leja cache poisoned")
            .insert(plan.dt.to_bits(), plan);
    }

    fn build_plan(&self, dt: f64, substeps: usize) -> Result<LejaPlan> {
        let h = dt / substeps as f64;
        let (a, b) = (h * self.alpha, h * self.beta);
        let c = 0.5 * (a + b);
        let scale = c.abs().max(1.0);
        let gamma = ((b - a) / 4.0).max(1e-8 * scale);
        Ok(LejaPlan {
            dt,
            substeps,
            c,
            gamma,
            dd0: divided_differences(&self.points, PhiIndex::Phi0, c, gamma)?,
            dd1: divided_differences(&self.points, PhiIndex::Phi1, c, gamma)?,
        })
    }

    /// `phi_i(dt A) v`, doubling the substep count when the Newton series
    /// stalls or diverges.
    pub fn apply(&self, v: &[f64], dt: f64, idx: PhiIndex) -> Result<Vec<f64>> {
        check_len("leja input", self.op.dim(), v.len())?;
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("phi needs dt > 0, got {dt}")));
        }
        if v.iter().all(|&x| x == 0.0) {
            return Ok(vec![0.0; v.len()]);
        }
        let mut plan = self.plan(dt)?;
        let mut achieved = f64::INFINITY;
        for attempt in 0..=MAX_DOUBLINGS {
            match self.apply_plan(&plan, v, idx)? {
                Some(y) => {
                    if attempt > 0 {
                        self.remember(plan);
                    }
                    return Ok(y);
                }
                None if attempt < MAX_DOUBLINGS => {
                    plan = Arc::new(self.build_plan(dt, plan.substeps * 2)?);
                }
                None => achieved = plan.substeps as f64,
            }
        }
        Err(Error::NonConvergence {
            method: "leja",
            detail: format!("no convergence with {} substeps", achieved),
            achieved,
        })
    }

    fn apply_plan(&self, plan: &LejaPlan, v: &[f64], idx: PhiIndex) -> Result<Option<Vec<f64>>> {
        let s = plan.substeps;
        let tol = self.cfg.tol / s as f64;
        let h = plan.dt / s as f64;
        match idx {
            PhiIndex::Phi0 => {
                let mut y = v.to_vec();
                for _ in 0..s {
                    match self.newton(plan, &plan.dd0, h, &y, tol) {
                        Newton::Done(z) => y = z,
                        Newton::Failed => return Ok(None),
                    }
                }
                Ok(Some(y))
            }
            PhiIndex::Phi1 => {
                // phi_1(s X) = (1/s) sum_{k<s} exp(k X) phi_1(X)
                let mut cur = match self.newton(plan, &plan.dd1, h, v, tol) {
                    Newton::Done(z) => z,
                    Newton::Failed => return Ok(None),
                };
                let mut acc = cur.clone();
                for _ in 1..s {
                    cur = match self.newton(plan, &plan.dd0, h, &cur, tol) {
                        Newton::Done(z) => z,
                        Newton::Failed => return Ok(None),
                    };
                    for (a, c) in acc.iter_mut().zip(&cur) {
                        *a += c;
                    }
                }
                let inv = 1.0 / s as f64;
                acc.iter_mut().for_each(|a| *a *= inv);
                Ok(Some(acc))
            }
        }
    }

    fn newton(&self, plan: &LejaPlan, dd: &[f64], h: f64, v: &[f64], tol: f64) -> Newton {
        let n = v.len();
        let mut p: Vec<f64> = v.iter().map(|x| dd[0] * x).collect();
        let mut w = v.to_vec();
        let mut aw = vec![0.0; n];
        let (c, g) = (plan.c, plan.gamma);
        let mut small = 0;
        let mut growth = 0;
        let mut prev = f64::INFINITY;
        for j in 0..self.cfg.max_degree {
            self.op.apply(&w, &mut aw);
            let xi = self.points[j];
            for (wk, ak) in w.iter_mut().zip(&aw) {
                *wk = (h * ak - c * *wk) / g - xi * *wk;
            }
            let d = dd[j + 1];
            let mut tn = 0.0;
            for (pk, wk) in p.iter_mut().zip(&w) {
                let t = d * wk;
                *pk += t;
                tn += t * t;
            }
            let tn = tn.sqrt();
            if !tn.is_finite() {
                return Newton::Failed;
            }
            if tn < tol {
                small += 1;
                if small >= 2 {
                    return Newton::Done(p);
                }
            } else {
                small = 0;
            }
            if tn > prev {
                growth += 1;
                if growth >= GROWTH_LIMIT {
                    return Newton::Failed;
                }
            } else {
                growth = 0;
            }
            prev = tn;
        }
        Newton::Failed
    }
}

/// One-shot Leja evaluation of `phi_i(dt A) v`.
pub fn leja_phi_apply(
    op: &dyn LinearOperator,
    v: &[f64],
    dt: f64,
    idx: PhiIndex,
    cfg: &LejaConfig,
) -> Result<Vec<f64>> {
    LejaEvaluator::new(op, *cfg)?.apply(v, dt, idx)
}
