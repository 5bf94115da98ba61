//! One-dimensional cosine sums evaluated with FFTs.
//!
//! Node-centred axes need `y_p = sum_k a_k cos(pi k p / (n - 1))` (a DCT-I,
//! which is its own transpose). Cell-centred axes need the DCT-III
//! `y_p = sum_k a_k cos(pi k (2p + 1) / 2n)` for synthesis and its transpose,
//! the DCT-II, for analysis.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::grid::Layout;

#[derive(Clone)]
pub(crate) struct CosineAxis {
    n: usize,
    layout: Layout,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CosineAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CosineAxis")
            .field("n", &self.n)
            .field("layout", &self.layout)
            .finish()
    }
}

impl CosineAxis {
    pub(crate) fn new(n: usize, layout: Layout) -> Self {
        let len = match layout {
            Layout::NodeCentered => 2 * (n - 1),
            Layout::CellCentered => 2 * n,
        };
        let mut planner = FftPlanner::new();
        CosineAxis {
            n,
            layout,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    /// Angle of mode `k` at point `p`.
    pub(crate) fn angle(&self, k: usize, p: usize) -> f64 {
        use std::f64::consts::PI;
        match self.layout {
            Layout::NodeCentered => PI * (k * p) as f64 / (self.n - 1) as f64,
            Layout::CellCentered => PI * (k * (2 * p + 1)) as f64 / (2 * self.n) as f64,
        }
    }

    /// `out[p] = sum_k coeffs[k] cos(angle(k, p))`, `coeffs.len() <= n`.
    pub(crate) fn synthesize(&self, coeffs: &[f64], out: &mut [f64], buf: &mut Vec<Complex<f64>>) {
        debug_assert!(coeffs.len() <= self.n && out.len() == self.n);
        match self.layout {
            Layout::NodeCentered => self.dct1(coeffs, out, buf),
            Layout::CellCentered => {
                use std::f64::consts::PI;
                let m = 2 * self.n;
                buf.clear();
                buf.resize(m, Complex::new(0.0, 0.0));
                for (k, &a) in coeffs.iter().enumerate() {
                    buf[k] = Complex::from_polar(a, PI * k as f64 / m as f64);
                }
                self.inverse.process(buf);
                for (o, z) in out.iter_mut().zip(buf.iter()) {
                    *o = z.re;
                }
            }
        }
    }

    /// Transpose of [`synthesize`]: `out[k] = sum_p values[p] cos(angle(k, p))`
    /// for `k < out.len()`.
    pub(crate) fn analyze(&self, values: &[f64], out: &mut [f64], buf: &mut Vec<Complex<f64>>) {
        debug_assert!(values.len() == self.n && out.len() <= self.n);
        match self.layout {
            Layout::NodeCentered => {
                let mut full = vec![0.0; self.n];
                self.dct1(values, &mut full, buf);
                out.copy_from_slice(&full[..out.len()]);
            }
            Layout::CellCentered => {
                use std::f64::consts::PI;
                let m = 2 * self.n;
                buf.clear();
                buf.resize(m, Complex::new(0.0, 0.0));
                for (p, &g) in values.iter().enumerate() {
                    buf[p] = Complex::new(g, 0.0);
                }
                self.forward.process(buf);
                for (k, o) in out.iter_mut().enumerate() {
                    *o = (buf[k] * Complex::from_polar(1.0, -PI * k as f64 / m as f64)).re;
                }
            }
        }
    }

    fn dct1(&self, input: &[f64], out: &mut [f64], buf: &mut Vec<Complex<f64>>) {
        let n = self.n;
        let m = 2 * (n - 1);
        buf.clear();
        buf.resize(m, Complex::new(0.0, 0.0));
        for (k, &a) in input.iter().enumerate() {
            if k == 0 || k == n - 1 {
                buf[k].re += a;
            } else {
                buf[k].re += 0.5 * a;
                buf[m - k].re += 0.5 * a;
            }
        }
        self.forward.process(buf);
        for (o, z) in out.iter_mut().zip(buf.iter()) {
            *o = z.re;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(axis: &CosineAxis, coeffs: &[f64]) -> Vec<f64> {
        (0..axis.n)
            .map(|p| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a * axis.angle(k, p).cos())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_direct_sums() {
        let mut buf = Vec::new();
        for layout in [Layout::NodeCentered, Layout::CellCentered] {
            for n in [2usize, 3, 8, 13, 64] {
                let axis = CosineAxis::new(n, layout);
                let coeffs: Vec<f64> = (0..n).map(|k| ((k * 7 + 3) % 11) as f64 - 5.0).collect();
                let mut out = vec![0.0; n];
                axis.synthesize(&coeffs, &mut out, &mut buf);
                for (a, b) in out.iter().zip(brute(&axis, &coeffs)) {
                    assert!((a - b).abs() < 1e-11, "{layout:?} n={n}");
                }
                // transpose
                let mut back = vec![0.0; n];
                axis.analyze(&coeffs, &mut back, &mut buf);
                for (k, b) in back.iter().enumerate() {
                    let direct: f64 = (0..n).map(|p| coeffs[p] * axis.angle(k, p).cos()).sum();
                    assert!((b - direct).abs() < 1e-11);
                }
            }
        }
    }
}
