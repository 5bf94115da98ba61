use nalgebra::DMatrix;

use super::dense::taylor_phi_pair;
use super::{gershgorin_norm, KrylovConfig, LinearOperator, PhiIndex, Scaled};
use crate::error::{check_len, Error, Result};

/// Arnoldi factorisation `A V_k = V_{k+1} H`.
#[derive(Debug, Clone)]
pub struct Arnoldi {
    /// `k + 1` orthonormal vectors, or `k` after a breakdown.
    pub basis: Vec<Vec<f64>>,
    /// `(k + 1) x k` upper Hessenberg matrix; the last row is zero after a
    /// breakdown.
    pub h: DMatrix<f64>,
    pub beta: f64,
    pub breakdown: bool,
}

impl Arnoldi {
    pub fn k(&self) -> usize {
        self.h.ncols()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Modified Gram-Schmidt Arnoldi with one reorthogonalisation pass.
pub fn arnoldi(op: &dyn LinearOperator, v: &[f64], m: usize) -> Result<Arnoldi> {
    arnoldi_with_norm(op, v, m, gershgorin_norm(op))
}

pub(crate) fn arnoldi_with_norm(
    op: &dyn LinearOperator,
    v: &[f64],
    m: usize,
    anorm: f64,
) -> Result<Arnoldi> {
    let n = op.dim();
    check_len("arnoldi start vector", n, v.len())?;
    if m == 0 {
        return Err(Error::invalid("arnoldi needs m >= 1"));
    }
    let beta = norm(v);
    if beta == 0.0 {
        return Err(Error::invalid("arnoldi start vector is zero"));
    }
    let m = m.min(n);
    let mut basis = vec![v.iter().map(|x| x / beta).collect::<Vec<f64>>()];
    let mut h = DMatrix::zeros(m + 1, m);
    let threshold = 1e-14 * anorm.max(f64::MIN_POSITIVE);
    let mut w = vec![0.0; n];
    for j in 0..m {
        op.apply(&basis[j], &mut w);
        for _pass in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let c = dot(q, &w);
                h[(i, j)] += c;
                for (wk, qk) in w.iter_mut().zip(q) {
                    *wk -= c * qk;
                }
            }
        }
        let hn = norm(&w);
        if hn <= threshold {
            let h = h.view((0, 0), (j + 2, j + 1)).into_owned();
            return Ok(Arnoldi {
                basis,
                h,
                beta,
                breakdown: true,
            });
        }
        h[(j + 1, j)] = hn;
        basis.push(w.iter().map(|x| x / hn).collect());
    }
    Ok(Arnoldi {
        basis,
        h,
        beta,
        breakdown: false,
    })
}

/// Krylov approximation of `phi_i(dt A) v`.
///
/// Integrates `y' = dt A y + u` over `[0, 1]` with adaptive substeps; each
/// substep advances `y <- y + tau phi_1(tau dt A)(dt A y + u)` on a fresh
/// Krylov space. `phi_0` uses `y(0) = v, u = 0`; `phi_1` uses `y(0) = 0,
/// u = v`. The local error estimate and step control follow the classical
/// a posteriori scheme with the corrected `(m + 1)`-term approximation.
pub fn krylov_phi_apply(
    op: &dyn LinearOperator,
    v: &[f64],
    dt: f64,
    idx: PhiIndex,
    cfg: &KrylovConfig,
) -> Result<Vec<f64>> {
    check_len("krylov input", op.dim(), v.len())?;
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("phi needs dt > 0, got {dt}")));
    }
    if cfg.m == 0 || !(cfg.tol > 0.0) {
        return Err(Error::invalid("krylov needs m >= 1 and tol > 0"));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Ok(vec![0.0; v.len()]);
    }
    let b = Scaled { op, s: dt };
    match idx {
        PhiIndex::Phi0 => integrate(&b, v.to_vec(), None, cfg),
        PhiIndex::Phi1 => integrate(&b, vec![0.0; v.len()], Some(v), cfg),
    }
}

const GAMMA: f64 = 0.9;
const DELTA: f64 = 1.2;
const MAX_SUBSTEPS: usize = 100_000;

fn round2(t: f64) -> f64 {
    let s = 10f64.powf(t.log10().floor() - 1.0);
    (t / s).ceil() * s
}

fn integrate(
    b: &dyn LinearOperator,
    mut w: Vec<f64>,
    u: Option<&[f64]>,
    cfg: &KrylovConfig,
) -> Result<Vec<f64>> {
    let n = b.dim();
    let m = cfg.m.min(n);
    let tol = cfg.tol;
    let anorm = gershgorin_norm(b);
    let mut p = vec![0.0; n];
    let mut av = vec![0.0; n];
    let mut t_now = 0.0f64;
    let mut t_new: Option<f64> = None;
    let mut substeps = 0usize;

    while t_now < 1.0 {
        substeps += 1;
        if substeps > MAX_SUBSTEPS {
            return Err(Error::NonConvergence {
                method: "krylov",
                detail: format!("substep budget exhausted at t = {t_now}"),
                achieved: t_now,
            });
        }
        b.apply(&w, &mut p);
        if let Some(u) = u {
            for (pk, uk) in p.iter_mut().zip(u) {
                *pk += uk;
            }
        }
        let beta = norm(&p);
        if beta == 0.0 {
            break;
        }
        let t_proposed = *t_new.get_or_insert_with(|| {
            if anorm == 0.0 {
                return 1.0;
            }
            let mf = (m + 1) as f64;
            let fact = (mf / std::f64::consts::E).powf(mf) * (2.0 * std::f64::consts::PI * mf).sqrt();
            round2((1.0 / anorm) * ((fact * tol) / (4.0 * beta * anorm)).powf(1.0 / m as f64))
        });
        let arn = arnoldi_with_norm(b, &p, m, anorm)?;
        let k = arn.k();
        let happy = arn.breakdown;
        let mx = if happy { k } else { k + 1 };
        let avnorm = if happy {
            0.0
        } else {
            b.apply(&arn.basis[k], &mut av);
            norm(&av)
        };

        let mut t_step = t_proposed.min(1.0 - t_now);
        let mut rejections = 0usize;
        let (coeffs, err, xm) = loop {
            let mut big = DMatrix::zeros(mx + 2, mx + 2);
            for i in 0..mx {
                for j in 0..k {
                    big[(i, j)] = t_step * arn.h[(i, j)];
                }
            }
            big[(0, mx)] = t_step;
            big[(mx, mx + 1)] = 1.0;
            let (f, _) = taylor_phi_pair(&big, 18)?;
            let coeffs: Vec<f64> = (0..mx).map(|i| beta * f[(i, mx)]).collect();
            if happy {
                break (coeffs, 0.0, 1.0 / m as f64);
            }
            let phi1 = (beta * f[(k, mx)]).abs();
            let phi2 = (beta * f[(k, mx + 1)]).abs() * avnorm;
            let (err, xm) = if phi1 > 10.0 * phi2 {
                (phi2, 1.0 / m as f64)
            } else if phi1 > phi2 {
                (phi1 * phi2 / (phi1 - phi2), 1.0 / m as f64)
            } else {
                (phi1, 1.0 / (m.max(2) - 1) as f64)
            };
            if err <= DELTA * t_step * tol {
                break (coeffs, err, xm);
            }
            rejections += 1;
            if rejections > cfg.max_restarts {
                return Err(Error::NonConvergence {
                    method: "krylov",
                    detail: format!("step rejected {rejections} times at t = {t_now}"),
                    achieved: err,
                });
            }
            t_step = round2(GAMMA * t_step * (t_step * tol / err).powf(xm));
        };
        for (c, q) in coeffs.iter().zip(&arn.basis) {
            for (wk, qk) in w.iter_mut().zip(q) {
                *wk += c * qk;
            }
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("krylov iterate became non-finite".into()));
        }
        t_now += t_step;
        t_new = Some(if happy || err == 0.0 {
            1.0
        } else {
            round2(GAMMA * t_step * (t_step * tol / err).powf(xm))
        });
        // guard against a last sliver below rounding
        if 1.0 - t_now < 1e-14 {
            break;
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::super::dense::dense_phi;
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5
    }

    fn random_nsd(n: usize, seed: u64, scale: f64) -> DMatrix<f64> {
        let a = random_symmetric(n, seed);
        -(&a * a.transpose()) * scale
    }

    fn relation_residual(a: &DMatrix<f64>, arn: &Arnoldi) -> f64 {
        let k = arn.k();
        let n = a.nrows();
        let vk = DMatrix::from_fn(n, k, |i, j| arn.basis[j][i]);
        let rows = arn.basis.len();
        let vk1 = DMatrix::from_fn(n, rows, |i, j| arn.basis[j][i]);
        let lhs = a * &vk;
        let rhs = vk1 * arn.h.view((0, 0), (rows, k));
        (lhs - rhs).amax() / a.amax()
    }

    #[test]
    fn arnoldi_relation_and_orthogonality() {
        let a = random_symmetric(100, 1);
        let v: Vec<f64> = (0..100).map(|k| (k as f64).cos()).collect();
        let arn = arnoldi(&a, &v, 6).unwrap();
        assert!(!arn.breakdown);
        assert_eq!(arn.basis.len(), 7);
        assert!(relation_residual(&a, &arn) < 1e-10);
        for i in 0..7 {
            for j in 0..7 {
                let d = dot(&arn.basis[i], &arn.basis[j]) - if i == j { 1.0 } else { 0.0 };
                assert!(d.abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn arnoldi_full_dimension_eigenvalues() {
        let n = 30;
        let a = random_symmetric(n, 2);
        let v = vec![1.0; n];
        let arn = arnoldi(&a, &v, n).unwrap();
        let hk = arn.h.view((0, 0), (n, n)).into_owned();
        let hs = (&hk + hk.transpose()) * 0.5;
        let mut e1: Vec<f64> = SymmetricEigen::new(hs).eigenvalues.iter().copied().collect();
        let mut e2: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
        e1.sort_by(f64::total_cmp);
        e2.sort_by(f64::total_cmp);
        for (x, y) in e1.iter().zip(&e2) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn arnoldi_breakdown_on_eigenvector() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[-1.0, -2.0, -3.0]));
        let arn = arnoldi(&a, &[0.0, 2.0, 0.0], 3).unwrap();
        assert!(arn.breakdown);
        assert_eq!(arn.k(), 1);
        assert_eq!(arn.h[(0, 0)], -2.0);
        assert!(arnoldi(&a, &[0.0; 3], 3).is_err());
    }

    #[test]
    fn diagonal_basis_vector_exact() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[-1.0, -20.0, -300.0]));
        let cfg = KrylovConfig::default();
        for k in 0..3 {
            let mut v = vec![0.0; 3];
            v[k] = 1.0;
            let y = krylov_phi_apply(&a, &v, 0.1, PhiIndex::Phi0, &cfg).unwrap();
            let expect = (0.1 * a[(k, k)]).exp();
            assert!((y[k] - expect).abs() < 1e-13);
            let y = krylov_phi_apply(&a, &v, 0.1, PhiIndex::Phi1, &cfg).unwrap();
            assert!((y[k] - PhiIndex::Phi1.eval(0.1 * a[(k, k)])).abs() < 1e-13);
        }
        assert_eq!(
            krylov_phi_apply(&a, &[0.0; 3], 0.1, PhiIndex::Phi1, &cfg).unwrap(),
            vec![0.0; 3]
        );
        assert!(krylov_phi_apply(&a, &[1.0; 3], 0.0, PhiIndex::Phi1, &cfg).is_err());
    }

    #[test]
    fn random_nsd_against_dense() {
        let a = random_nsd(200, 3, 0.5);
        let v: Vec<f64> = (0..200).map(|k| ((k * 7) as f64).sin()).collect();
        let cfg = KrylovConfig::default();
        for dt in [1e-3, 1e-2, 1e-1] {
            for idx in [PhiIndex::Phi0, PhiIndex::Phi1] {
                let y = krylov_phi_apply(&a, &v, dt, idx, &cfg).unwrap();
                let oracle = dense_phi(&(&a * dt), idx).unwrap() * nalgebra::DVector::from_row_slice(&v);
                let dev = y.iter().zip(oracle.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(dev <= 1e-6, "dt {dt} {idx:?}: {dev}");
            }
        }
    }
}
