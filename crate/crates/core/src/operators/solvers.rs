//! Krylov solvers for the linear systems of the semi-implicit schemes and the
//! pressure equation.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final residual norm relative to the right-hand side.
    pub relative_residual: f64,
}

fn wdot(a: &[f64], b: &[f64], w: Option<&[f64]>) -> f64 {
    match w {
        Some(w) => a.iter().zip(b).zip(w).map(|((x, y), w)| w * x * y).sum(),
        None => a.iter().zip(b).map(|(x, y)| x * y).sum(),
    }
}

/// Preconditioned conjugate gradients for `M x = b`, where `M` is
/// self-adjoint and positive definite in the inner product weighted by `w`
/// (Euclidean when `w` is `None`). `precond` is an optional Jacobi diagonal.
#[allow(clippy::too_many_arguments)]
pub fn cg(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    w: Option<&[f64]>,
    precond: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let bnorm = wdot(b, b, w).sqrt();
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (rk, bk) in r.iter_mut().zip(b) {
        *rk = bk - *rk;
    }
    let prec = |r: &[f64], z: &mut [f64]| match precond {
        Some(d) => z.iter_mut().zip(r).zip(d).for_each(|((z, r), d)| *z = r / d),
        None => z.copy_from_slice(r),
    };
    let mut z = vec![0.0; n];
    prec(&r, &mut z);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = wdot(&r, &z, w);
    let mut res = wdot(&r, &r, w).sqrt() / bnorm;
    for it in 0..max_iter {
        if res <= tol {
            return Ok(SolveStats {
                iterations: it,
                relative_residual: res,
            });
        }
        apply(&p, &mut q);
        let pq = wdot(&p, &q, w);
        if !(pq > 0.0) {
            return Err(Error::Numerical(format!(
                "cg lost positive definiteness (p'Mp = {pq:e})"
            )));
        }
        let alpha = rz / pq;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * q[k];
        }
        prec(&r, &mut z);
        let rz_new = wdot(&r, &z, w);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
        res = wdot(&r, &r, w).sqrt() / bnorm;
    }
    if res <= tol {
        return Ok(SolveStats {
            iterations: max_iter,
            relative_residual: res,
        });
    }
    Err(Error::NonConvergence {
        method: "cg",
        detail: format!("{max_iter} iterations"),
        achieved: res,
    })
}

/// Unpreconditioned BiCGSTAB for general nonsingular `M x = b`.
pub fn bicgstab(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let bnorm = wdot(b, b, None).sqrt();
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (rk, bk) in r.iter_mut().zip(b) {
        *rk = bk - *rk;
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = wdot(&r, &r, None).sqrt() / bnorm;
    for it in 0..max_iter {
        if res <= tol {
            return Ok(SolveStats {
                iterations: it,
                relative_residual: res,
            });
        }
        let rho_new = wdot(&r0, &r, None);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(Error::Numerical("bicgstab breakdown".into()));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        apply(&p, &mut v);
        alpha = rho / wdot(&r0, &v, None);
        for k in 0..n {
            s[k] = r[k] - alpha * v[k];
        }
        apply(&s, &mut t);
        let tt = wdot(&t, &t, None);
        omega = if tt == 0.0 { 0.0 } else { wdot(&t, &s, None) / tt };
        for k in 0..n {
            x[k] += alpha * p[k] + omega * s[k];
            r[k] = s[k] - omega * t[k];
        }
        res = wdot(&r, &r, None).sqrt() / bnorm;
        if !res.is_finite() {
            return Err(Error::Numerical("bicgstab residual became non-finite".into()));
        }
    }
    if res <= tol {
        return Ok(SolveStats {
            iterations: max_iter,
            relative_residual: res,
        });
    }
    Err(Error::NonConvergence {
        method: "bicgstab",
        detail: format!("{max_iter} iterations"),
        achieved: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn spd(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                4.0 + i as f64 * 0.1
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn cg_matches_direct_solve() {
        let m = spd(50);
        let b = DVector::from_fn(50, |i, _| (i as f64).sin());
        let exact = m.clone().lu().solve(&b).unwrap();
        let mut x = vec![0.0; 50];
        let apply = |v: &[f64], y: &mut [f64]| {
            y.copy_from_slice((&m * DVector::from_row_slice(v)).as_slice())
        };
        let diag: Vec<f64> = (0..50).map(|i| m[(i, i)]).collect();
        let st = cg(apply, b.as_slice(), &mut x, None, Some(&diag), 1e-12, 200).unwrap();
        assert!(st.relative_residual <= 1e-12);
        for (a, e) in x.iter().zip(exact.iter()) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn weighted_cg_on_weight_symmetric_matrix() {
        // M = W^{-1} S with S symmetric positive definite is self-adjoint in <.,.>_W
        let s = spd(30);
        let w: Vec<f64> = (0..30).map(|i| 1.0 + (i % 3) as f64).collect();
        let m = DMatrix::from_fn(30, 30, |i, j| s[(i, j)] / w[i]);
        let b = DVector::from_fn(30, |i, _| 1.0 + i as f64);
        let exact = m.clone().lu().solve(&b).unwrap();
        let mut x = vec![0.0; 30];
        let apply = |v: &[f64], y: &mut [f64]| {
            y.copy_from_slice((&m * DVector::from_row_slice(v)).as_slice())
        };
        cg(apply, b.as_slice(), &mut x, Some(&w), None, 1e-12, 200).unwrap();
        for (a, e) in x.iter().zip(exact.iter()) {
            assert!((a - e).abs() < 1e-9 * e.abs().max(1.0));
        }
    }

    #[test]
    fn bicgstab_nonsymmetric() {
        let n = 40;
        let m = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                3.0
            } else if j + 1 == i {
                -1.5
            } else if i + 1 == j {
                -0.5
            } else {
                0.0
            }
        });
        let b = DVector::from_fn(n, |i, _| (i as f64 * 0.2).cos());
        let exact = m.clone().lu().solve(&b).unwrap();
        let mut x = vec![0.0; n];
        let apply = |v: &[f64], y: &mut [f64]| {
            y.copy_from_slice((&m * DVector::from_row_slice(v)).as_slice())
        };
        bicgstab(apply, b.as_slice(), &mut x, 1e-12, 500).unwrap();
        for (a, e) in x.iter().zip(exact.iter()) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_rhs_and_budget() {
        let m = spd(10);
        let apply = |v: &[f64], y: &mut [f64]| {
            y.copy_from_slice((&m * DVector::from_row_slice(v)).as_slice())
        };
        let mut x = vec![1.0; 10];
        cg(&apply, &[0.0; 10], &mut x, None, None, 1e-12, 10).unwrap();
        assert_eq!(x, vec![0.0; 10]);
        let mut x = vec![0.0; 10];
        let err = cg(&apply, &[1.0; 10], &mut x, None, None, 1e-15, 1).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }
}
