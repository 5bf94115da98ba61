//! Neumann Laplacian eigenpairs on a rectangle and the cosine transforms that
//! move fields between modal coefficients and grid values.
//!
//! Eigenfunctions are `e_0 = sqrt(1/L)` and `e_i = sqrt(2/L) cos(i pi x / L)`
//! per axis, with `-d^2/dx^2` eigenvalues `(i pi / L)^2`. Mode `(i, j)` of the
//! rectangle is the product `e_i(x) e_j(y)`.

mod dct;

use rustfft::num_complex::Complex;

use crate::error::{check_len, Error, Result};
use crate::grid::Grid;
use crate::noise::{ou_increment_std, OuConvention};
use dct::CosineAxis;

/// Coefficients indexed by mode pair `(i, j)`, `i` along x.
#[derive(Debug, Clone, PartialEq)]
pub struct Modes {
    n: usize,
    data: Vec<f64>,
}

impl Modes {
    pub fn zeros(n: usize) -> Self {
        Modes {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Modes::zeros(n);
        for j in 0..n {
            for i in 0..n {
                m.data[j * n + i] = f(i, j);
            }
        }
        m
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        check_len("mode coefficients", n * n, data.len())?;
        Ok(Modes { n, data })
    }

    /// Modes per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.n + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.n + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Which route [`Synthesizer`] uses for the per-axis cosine sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransformPath {
    #[default]
    Fast,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    n: usize,
    lx: f64,
    ly: f64,
    lambda1: Vec<f64>,
    lambda2: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(n: usize, lx: f64, ly: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("spectral truncation must be at least 1"));
        }
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::invalid("domain lengths must be positive"));
        }
        use std::f64::consts::PI;
        let lambda1 = (0..n).map(|i| (i as f64 * PI / lx).powi(2)).collect();
        let lambda2 = (0..n).map(|j| (j as f64 * PI / ly).powi(2)).collect();
        Ok(SpectralBasis {
            n,
            lx,
            ly,
            lambda1,
            lambda2,
        })
    }

    pub fn for_grid(n: usize, grid: &Grid) -> Result<Self> {
        SpectralBasis::new(n, grid.lx(), grid.ly())
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }

    /// Per-axis wavenumber `i pi / Lx`.
    pub fn wavenumber_x(&self, i: usize) -> f64 {
        self.lambda1[i].sqrt()
    }

    pub fn wavenumber_y(&self, j: usize) -> f64 {
        self.lambda2[j].sqrt()
    }

    /// Eigenvalue of `-Laplacian` for mode `(i, j)`.
    pub fn eigenvalue(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.n || j >= self.n {
            return Err(Error::invalid(format!(
                "mode ({i}, {j}) outside truncation {}",
                self.n
            )));
        }
        Ok(self.lambda1[i] + self.lambda2[j])
    }

    #[inline]
    pub(crate) fn eig(&self, i: usize, j: usize) -> f64 {
        self.lambda1[i] + self.lambda2[j]
    }

    /// Per-mode field `f(lambda_ij)` built from eigenvalues.
    pub fn rates(&self, f: impl Fn(f64) -> f64) -> Modes {
        Modes::from_fn(self.n, |i, j| f(self.eig(i, j)))
    }

    pub fn eigenfunction_x(&self, i: usize, x: f64) -> f64 {
        eigenfunction(i, self.lx, x)
    }

    pub fn eigenfunction_y(&self, j: usize, y: f64) -> f64 {
        eigenfunction(j, self.ly, y)
    }

    pub fn synthesizer(&self, grid: &Grid) -> Result<Synthesizer> {
        Synthesizer::new(self, grid, TransformPath::Fast)
    }

    /// Evaluates `sum coeffs[i,j] e_i(x) e_j(y)` at the grid points.
    pub fn synthesize(&self, coeffs: &Modes, grid: &Grid) -> Result<Vec<f64>> {
        self.synthesizer(grid)?.synthesize(coeffs)
    }

    /// Quadrature projections `(field, e_i e_j)` normalised by the discrete Gram
    /// diagonal, so that `analyze(synthesize(c)) == c` for `N <= nx, ny`.
    pub fn analyze(&self, field: &[f64], grid: &Grid) -> Result<Modes> {
        self.synthesizer(grid)?.analyze(field)
    }

    /// Advances every mode of the linear test problem by `dt` exactly.
    ///
    /// The per-mode rate is `D lambda_ij + reaction`; `draws` are standard
    /// normals and `q` the noise spectrum.
    pub fn exact_linear_step(
        &self,
        coeffs: &Modes,
        diffusivity: f64,
        reaction: f64,
        dt: f64,
        draws: &Modes,
        q: &Modes,
    ) -> Result<Modes> {
        if !(dt >= 0.0) {
            return Err(Error::invalid(format!("negative time step {dt}")));
        }
        for m in [coeffs, draws, q] {
            check_len("exact linear step", self.n, m.n())?;
        }
        let mut out = Modes::zeros(self.n);
        for j in 0..self.n {
            for i in 0..self.n {
                let c = diffusivity * self.eig(i, j) + reaction;
                let std = if dt == 0.0 {
                    0.0
                } else {
                    ou_increment_std(c, q.get(i, j), dt, OuConvention::ItoIsometry)?
                };
                out.set(
                    i,
                    j,
                    (-c * dt).exp() * coeffs.get(i, j) + std * draws.get(i, j),
                );
            }
        }
        Ok(out)
    }
}

fn eigenfunction(i: usize, l: f64, x: f64) -> f64 {
    if i == 0 {
        (1.0 / l).sqrt()
    } else {
        (2.0 / l).sqrt() * (i as f64 * std::f64::consts::PI * x / l).cos()
    }
}

/// A basis bound to a grid, with transform plans prepared once.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    n: usize,
    nx: usize,
    ny: usize,
    path: TransformPath,
    axis_x: CosineAxis,
    axis_y: CosineAxis,
    norm_x: Vec<f64>,
    norm_y: Vec<f64>,
    wx: Vec<f64>,
    wy: Vec<f64>,
    gram_x: Vec<f64>,
    gram_y: Vec<f64>,
    // dense cosine tables, [mode * n_points + point]
    table_x: Vec<f64>,
    table_y: Vec<f64>,
}

impl Synthesizer {
    pub fn new(basis: &SpectralBasis, grid: &Grid, path: TransformPath) -> Result<Self> {
        let (nx, ny, n) = (grid.nx(), grid.ny(), basis.n());
        if n > nx.min(ny) {
            return Err(Error::invalid(format!(
                "truncation {n} exceeds grid resolution {nx}x{ny}"
            )));
        }
        if (grid.lx() - basis.lx()).abs() > 1e-12 * basis.lx()
            || (grid.ly() - basis.ly()).abs() > 1e-12 * basis.ly()
        {
            return Err(Error::invalid("basis and grid cover different rectangles"));
        }
        let axis_x = CosineAxis::new(nx, grid.layout());
        let axis_y = CosineAxis::new(ny, grid.layout());
        let norms = |l: f64| -> Vec<f64> {
            (0..n)
                .map(|k| if k == 0 { (1.0 / l).sqrt() } else { (2.0 / l).sqrt() })
                .collect()
        };
        let table = |axis: &CosineAxis, np: usize| -> Vec<f64> {
            let mut t = Vec::with_capacity(n * np);
            for k in 0..n {
                for p in 0..np {
                    t.push(axis.angle(k, p).cos());
                }
            }
            t
        };
        let table_x = table(&axis_x, nx);
        let table_y = table(&axis_y, ny);
        let norm_x = norms(grid.lx());
        let norm_y = norms(grid.ly());
        let wx = grid.weights_x();
        let wy = grid.weights_y();
        let gram = |tab: &[f64], norm: &[f64], w: &[f64]| -> Vec<f64> {
            let np = w.len();
            (0..n)
                .map(|k| {
                    let row = &tab[k * np..(k + 1) * np];
                    row.iter().zip(w).map(|(c, w)| w * c * c).sum::<f64>() * norm[k] * norm[k]
                })
                .collect()
        };
        let gram_x = gram(&table_x, &norm_x, &wx);
        let gram_y = gram(&table_y, &norm_y, &wy);
        Ok(Synthesizer {
            n,
            nx,
            ny,
            path,
            axis_x,
            axis_y,
            norm_x,
            norm_y,
            wx,
            wy,
            gram_x,
            gram_y,
            table_x,
            table_y,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn path(&self) -> TransformPath {
        self.path
    }

    pub fn synthesize(&self, coeffs: &Modes) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.nx * self.ny];
        self.synthesize_into(coeffs, &mut out)?;
        Ok(out)
    }

    pub fn synthesize_into(&self, coeffs: &Modes, out: &mut [f64]) -> Result<()> {
        check_len("synthesis", self.n, coeffs.n())?;
        check_len("synthesis output", self.nx * self.ny, out.len())?;
        let (n, nx, ny) = (self.n, self.nx, self.ny);
        let mut buf: Vec<Complex<f64>> = Vec::new();
        // pass 1: x-transform of every y-mode row -> tmp[j * nx + p]
        let mut tmp = vec![0.0; n * nx];
        let mut row = vec![0.0; n];
        for j in 0..n {
            for (i, r) in row.iter_mut().enumerate() {
                *r = coeffs.get(i, j) * self.norm_x[i] * self.norm_y[j];
            }
            let dst = &mut tmp[j * nx..(j + 1) * nx];
            match self.path {
                TransformPath::Fast => self.axis_x.synthesize(&row, dst, &mut buf),
                TransformPath::Dense => dense_synth(&self.table_x, &row, dst),
            }
        }
        // pass 2: y-transform of every x column
        let mut col = vec![0.0; n];
        let mut res = vec![0.0; ny];
        for p in 0..nx {
            for (j, c) in col.iter_mut().enumerate() {
                *c = tmp[j * nx + p];
            }
            match self.path {
                TransformPath::Fast => self.axis_y.synthesize(&col, &mut res, &mut buf),
                TransformPath::Dense => dense_synth(&self.table_y, &col, &mut res),
            }
            for (q, v) in res.iter().enumerate() {
                out[q * nx + p] = *v;
            }
        }
        Ok(())
    }

    pub fn analyze(&self, field: &[f64]) -> Result<Modes> {
        check_len("analysis", self.nx * self.ny, field.len())?;
        let (n, nx, ny) = (self.n, self.nx, self.ny);
        let mut buf: Vec<Complex<f64>> = Vec::new();
        // pass 1: x-analysis of every weighted row -> tmp[q * n + i]
        let mut tmp = vec![0.0; ny * n];
        let mut row = vec![0.0; nx];
        for q in 0..ny {
            for (p, r) in row.iter_mut().enumerate() {
                *r = field[q * nx + p] * self.wx[p] * self.wy[q];
            }
            let dst = &mut tmp[q * n..(q + 1) * n];
            match self.path {
                TransformPath::Fast => self.axis_x.analyze(&row, dst, &mut buf),
                TransformPath::Dense => dense_analyze(&self.table_x, &row, dst),
            }
        }
        let mut out = Modes::zeros(n);
        let mut col = vec![0.0; ny];
        let mut res = vec![0.0; n];
        for i in 0..n {
            for (q, c) in col.iter_mut().enumerate() {
                *c = tmp[q * n + i];
            }
            match self.path {
                TransformPath::Fast => self.axis_y.analyze(&col, &mut res, &mut buf),
                TransformPath::Dense => dense_analyze(&self.table_y, &col, &mut res),
            }
            for (j, v) in res.iter().enumerate() {
                let scale = self.norm_x[i] * self.norm_y[j] / (self.gram_x[i] * self.gram_y[j]);
                out.set(i, j, v * scale);
            }
        }
        Ok(out)
    }
}

fn dense_synth(table: &[f64], coeffs: &[f64], out: &mut [f64]) {
    let np = out.len();
    out.fill(0.0);
    for (k, &a) in coeffs.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (o, c) in out.iter_mut().zip(&table[k * np..(k + 1) * np]) {
            *o += a * c;
        }
    }
}

fn dense_analyze(table: &[f64], values: &[f64], out: &mut [f64]) {
    let np = values.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = table[k * np..(k + 1) * np]
            .iter()
            .zip(values)
            .map(|(c, v)| c * v)
            .sum();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Boundary, Layout};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_modes(n: usize, seed: u64) -> Modes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Modes::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn eigenvalues() {
        let b = SpectralBasis::new(4, 1.0, 1.0).unwrap();
        assert_eq!(b.eigenvalue(0, 0).unwrap(), 0.0);
        assert!((b.eigenvalue(1, 0).unwrap() - PI * PI).abs() < 1e-12);
        assert!((b.eigenvalue(2, 3).unwrap() - 13.0 * PI * PI).abs() < 1e-12);
        assert!(b.eigenvalue(4, 0).is_err());
        let b = SpectralBasis::new(5, 2.0, 0.5).unwrap();
        for i in 1..5 {
            assert!(b.eig(i, 0) > b.eig(i - 1, 0));
            assert!(b.eig(0, i) > b.eig(0, i - 1));
        }
    }

    #[test]
    fn eigenfunctions_orthonormal_by_quadrature() {
        let g = Grid::unit_square(401, 401, Layout::NodeCentered).unwrap();
        let b = SpectralBasis::for_grid(4, &g).unwrap();
        let wx = g.weights_x();
        for a in 0..4 {
            for c in 0..4 {
                let s: f64 = (0..g.nx())
                    .map(|p| wx[p] * b.eigenfunction_x(a, g.x(p)) * b.eigenfunction_x(c, g.x(p)))
                    .sum();
                let expect = if a == c { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn synthesize_simple_fields() {
        let g = Grid::unit_square(9, 9, Layout::CellCentered).unwrap();
        let b = SpectralBasis::for_grid(5, &g).unwrap();
        let zero = b.synthesize(&Modes::zeros(5), &g).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let mut delta = Modes::zeros(5);
        delta.set(0, 0, 1.0);
        let one = b.synthesize(&delta, &g).unwrap();
        assert!(one.iter().all(|&v| (v - 1.0).abs() < 1e-14));
        let back = b.analyze(&one, &g).unwrap();
        for j in 0..5 {
            for i in 0..5 {
                let e = if (i, j) == (0, 0) { 1.0 } else { 0.0 };
                assert!((back.get(i, j) - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn fast_matches_dense_double_sum() {
        for layout in [Layout::NodeCentered, Layout::CellCentered] {
            let g = Grid::new(64, 64, 1.0, 2.0, layout, Boundary::neumann()).unwrap();
            let b = SpectralBasis::for_grid(40, &g).unwrap();
            let c = random_modes(40, 7);
            let fast = b.synthesize(&c, &g).unwrap();
            // oracle: the full double sum at each point
            let mut max_diff: f64 = 0.0;
            let mut max_val: f64 = 0.0;
            for q in 0..g.ny() {
                for p in 0..g.nx() {
                    let (x, y) = (g.x(p), g.y(q));
                    let mut s = 0.0;
                    for j in 0..40 {
                        let ey = b.eigenfunction_y(j, y);
                        for i in 0..40 {
                            s += c.get(i, j) * b.eigenfunction_x(i, x) * ey;
                        }
                    }
                    max_diff = max_diff.max((s - fast[g.index(p, q)]).abs());
                    max_val = max_val.max(s.abs());
                }
            }
            assert!(max_diff <= 1e-12 * max_val.max(1.0), "{layout:?}: {max_diff}");
            let dense = Synthesizer::new(&b, &g, TransformPath::Dense)
                .unwrap()
                .synthesize(&c)
                .unwrap();
            for (a, d) in fast.iter().zip(&dense) {
                assert!((a - d).abs() <= 1e-12 * max_val.max(1.0));
            }
        }
    }

    #[test]
    fn analysis_inverts_synthesis() {
        for layout in [Layout::NodeCentered, Layout::CellCentered] {
            // N equal to the grid size exercises the node-centred Nyquist mode
            let g = Grid::unit_square(17, 17, layout).unwrap();
            let b = SpectralBasis::for_grid(17, &g).unwrap();
            let c = random_modes(17, 3);
            let f = b.synthesize(&c, &g).unwrap();
            for path in [TransformPath::Fast, TransformPath::Dense] {
                let back = Synthesizer::new(&b, &g, path).unwrap().analyze(&f).unwrap();
                for (x, y) in back.as_slice().iter().zip(c.as_slice()) {
                    assert!((x - y).abs() < 1e-10, "{layout:?} {path:?}");
                }
            }
        }
    }

    #[test]
    fn analyze_single_mode() {
        let g = Grid::unit_square(33, 33, Layout::NodeCentered).unwrap();
        let b = SpectralBasis::for_grid(8, &g).unwrap();
        let f = g.sample(|x, _| 2f64.sqrt() * (PI * x).cos());
        let c = b.analyze(&f, &g).unwrap();
        for j in 0..8 {
            for i in 0..8 {
                let e = if (i, j) == (1, 0) { 1.0 } else { 0.0 };
                assert!((c.get(i, j) - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn parseval() {
        let g = Grid::unit_square(256, 256, Layout::CellCentered).unwrap();
        let b = SpectralBasis::for_grid(32, &g).unwrap();
        let c = random_modes(32, 11);
        let f = b.synthesize(&c, &g).unwrap();
        assert!((g.l2_norm(&f).unwrap() - c.frobenius()).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_shapes() {
        let g = Grid::unit_square(8, 8, Layout::NodeCentered).unwrap();
        let b = SpectralBasis::for_grid(9, &g).unwrap();
        assert!(b.synthesizer(&g).is_err());
        let b = SpectralBasis::for_grid(4, &g).unwrap();
        assert!(b.synthesize(&Modes::zeros(5), &g).is_err());
        assert!(b.analyze(&[0.0; 3], &g).is_err());
        let other = Grid::new(8, 8, 2.0, 1.0, Layout::NodeCentered, Boundary::neumann()).unwrap();
        assert!(b.synthesizer(&other).is_err());
    }

    #[test]
    fn exact_step_deterministic_decay_and_semigroup() {
        let b = SpectralBasis::new(6, 1.0, 1.0).unwrap();
        let c = random_modes(6, 5);
        let zero = Modes::zeros(6);
        let (d, r) = (0.3, 1.0);
        let one = b.exact_linear_step(&c, d, r, 0.05, &zero, &zero).unwrap();
        for j in 0..6 {
            for i in 0..6 {
                let rate = d * b.eig(i, j) + r;
                assert!((one.get(i, j) - (-rate * 0.05f64).exp() * c.get(i, j)).abs() < 1e-15);
            }
        }
        let two = b.exact_linear_step(&one, d, r, 0.02, &zero, &zero).unwrap();
        let direct = b.exact_linear_step(&c, d, r, 0.07, &zero, &zero).unwrap();
        for (x, y) in two.as_slice().iter().zip(direct.as_slice()) {
            assert!((x - y).abs() < 1e-13);
        }
        assert!(b.exact_linear_step(&c, d, r, -1.0, &zero, &zero).is_err());
    }

    #[test]
    fn exact_step_zero_rate_mode_variance() {
        // c = 0 for mode (0,0) with no reaction: increment std is sqrt(q dt)
        let b = SpectralBasis::new(2, 1.0, 1.0).unwrap();
        let mut q = Modes::zeros(2);
        q.set(0, 0, 2.0);
        let mut draws = Modes::zeros(2);
        draws.set(0, 0, 1.0);
        let out = b
            .exact_linear_step(&Modes::zeros(2), 1.0, 0.0, 0.1, &draws, &q)
            .unwrap();
        assert!((out.get(0, 0) - (2.0f64 * 0.1).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn stationary_variance_and_mean() {
        // OU stationary variance q / 2c, estimated from independent chains
        let b = SpectralBasis::new(1, 1.0, 1.0).unwrap();
        let q = Modes::from_vec(1, vec![0.8]).unwrap();
        let rate = 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let normal = rand_distr_normal;
        let samples = 100_000;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for _ in 0..samples {
            let mut x = Modes::zeros(1);
            for _ in 0..8 {
                let z = Modes::from_vec(1, vec![normal(&mut rng)]).unwrap();
                x = b.exact_linear_step(&x, 0.0, rate, 0.5, &z, &q).unwrap();
            }
            s1 += x.get(0, 0);
            s2 += x.get(0, 0).powi(2);
        }
        let mean = s1 / samples as f64;
        let var = s2 / samples as f64 - mean * mean;
        let target = 0.8 / (2.0 * rate) * (1.0 - (-2.0 * rate * 4.0f64).exp());
        let sigma = target.sqrt();
        assert!(mean.abs() < 4.0 * sigma / (samples as f64).sqrt());
        // variance of the variance estimator is ~ 2 sigma^4 / n
        assert!((var - target).abs() < 4.0 * target * (2.0 / samples as f64).sqrt());
    }

    fn rand_distr_normal(rng: &mut ChaCha8Rng) -> f64 {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}
