use nalgebra::DMatrix;

use super::PhiIndex;
use crate::error::{Error, Result};

/// Largest dimension accepted by the dense evaluator.
pub const DENSE_LIMIT: usize = 1024;

const DENSE_DEGREE: usize = 18;

/// `phi_i(M)` by Taylor expansion with scaling and squaring.
pub fn dense_phi(m: &DMatrix<f64>, idx: PhiIndex) -> Result<DMatrix<f64>> {
    let (e, p) = dense_phi_pair(m)?;
    Ok(match idx {
        PhiIndex::Phi0 => e,
        PhiIndex::Phi1 => p,
    })
}

/// `(phi_0(M), phi_1(M))` in one pass.
pub fn dense_phi_pair(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !m.is_square() {
        return Err(Error::invalid("phi of a non-square matrix"));
    }
    if m.nrows() > DENSE_LIMIT {
        return Err(Error::Unsupported(format!(
            "dense phi limited to dimension {DENSE_LIMIT}, got {}",
            m.nrows()
        )));
    }
    taylor_phi_pair(m, DENSE_DEGREE)
}

/// The pair is the exponential of the block matrix `[[M, I], [0, 0]]`:
/// top-left `exp(M)`, top-right `phi_1(M)`. Squaring uses
/// `exp(2X) = exp(X)^2` and `phi_1(2X) = (exp(X) + I) phi_1(X) / 2`.
pub(crate) fn taylor_phi_pair(
    m: &DMatrix<f64>,
    degree: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let norm1 = (0..n)
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if !norm1.is_finite() {
        return Err(Error::Numerical("non-finite matrix passed to phi".into()));
    }
    let squarings = if norm1 > 0.5 {
        (norm1 / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let a = m * 2f64.powi(-squarings);

    // 1/(k+1)! for k = 0..=degree
    let mut coef = vec![1.0; degree + 1];
    for k in 1..=degree {
        coef[k] = coef[k - 1] / (k + 1) as f64;
    }
    let mut p = DMatrix::zeros(n, n);
    add_diag(&mut p, coef[degree]);
    for k in (0..degree).rev() {
        p = &a * &p;
        add_diag(&mut p, coef[k]);
    }
    let mut e = &a * &p;
    add_diag(&mut e, 1.0);

    for _ in 0..squarings {
        let mut half = e.clone();
        add_diag(&mut half, 1.0);
        p = (&half * &p) * 0.5;
        e = &e * &e;
    }
    if e.iter().chain(p.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("overflow in phi scaling and squaring".into()));
    }
    Ok((e, p))
}

fn add_diag(m: &mut DMatrix<f64>, c: f64) {
    for i in 0..m.nrows() {
        m[(i, i)] += c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_cases() {
        let z = DMatrix::<f64>::zeros(3, 3);
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(dense_phi(&z, PhiIndex::Phi0).unwrap(), id);
        assert_eq!(dense_phi(&z, PhiIndex::Phi1).unwrap(), id);
        let d = DMatrix::<f64>::identity(3, 3) * -2.0;
        let p = dense_phi(&d, PhiIndex::Phi1).unwrap();
        for i in 0..3 {
            assert!((p[(i, i)] - 0.432_332_358_381_693_6).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_scalar_functions_on_diagonal() {
        let vals = [-700.0, -35.0, -1.0, -1e-9, 0.0, 0.3, 4.0];
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&vals));
        let (e, p) = dense_phi_pair(&m).unwrap();
        for (k, &z) in vals.iter().enumerate() {
            let (ee, pe) = (PhiIndex::Phi0.eval(z), PhiIndex::Phi1.eval(z));
            assert!((e[(k, k)] - ee).abs() <= 5e-12 * ee + 1e-300, "{z}");
            assert!((p[(k, k)] - pe).abs() <= 5e-12 * pe, "{z}: {} vs {pe}", p[(k, k)]);
        }
    }

    #[test]
    fn rotation_generator() {
        // exp of [[0, t], [-t, 0]] is a rotation; phi_1 has the integral form
        let t = 3.0f64;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, t, -t, 0.0]);
        let (e, p) = dense_phi_pair(&m).unwrap();
        assert!((e[(0, 0)] - t.cos()).abs() < 1e-13);
        assert!((e[(0, 1)] - t.sin()).abs() < 1e-13);
        assert!((p[(0, 0)] - t.sin() / t).abs() < 1e-13);
        assert!((p[(0, 1)] - (1.0 - t.cos()) / t).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(dense_phi(&DMatrix::zeros(2, 3), PhiIndex::Phi0).is_err());
        let big = DMatrix::<f64>::identity(2, 2) * 1e6;
        assert!(matches!(dense_phi(&big, PhiIndex::Phi0), Err(Error::Numerical(_))));
    }
}
