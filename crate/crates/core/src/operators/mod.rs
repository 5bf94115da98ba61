//! Five-point spatial operators on a [`Grid`]: diffusion, first-order upwind
//! advection, and the Darcy pressure solve that provides the velocity field.

pub mod solvers;

use std::path::Path;

use crate::error::{check_len, Error, Result};
use crate::grid::{EdgeCondition, Grid, Layout};
pub use crate::phi::LinearOperator;
pub use solvers::{bicgstab, cg, SolveStats};

/// Matrix-free five-point operator, one coefficient per row and direction.
///
/// Neighbour coefficients on the domain edge are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    nx: usize,
    ny: usize,
    center: Vec<f64>,
    west: Vec<f64>,
    east: Vec<f64>,
    south: Vec<f64>,
    north: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl Stencil {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        let z = vec![0.0; nx * ny];
        Stencil {
            nx,
            ny,
            center: z.clone(),
            west: z.clone(),
            east: z.clone(),
            south: z.clone(),
            north: z,
            weights: None,
        }
    }

    /// Diagonal operator, self-adjoint in the Euclidean product.
    pub fn from_diagonal(nx: usize, ny: usize, diag: Vec<f64>) -> Result<Self> {
        check_len("diagonal stencil", nx * ny, diag.len())?;
        let mut s = Stencil::zeros(nx, ny);
        s.center = diag;
        s.weights = Some(vec![1.0; nx * ny]);
        Ok(s)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Weights `w` with `diag(w) A` symmetric, when known.
    pub fn self_adjoint_weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Coefficients `(center, west, east, south, north)` of row `k`.
    pub fn row(&self, k: usize) -> [f64; 5] {
        [
            self.center[k],
            self.west[k],
            self.east[k],
            self.south[k],
            self.north[k],
        ]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.center.len())
            .map(|k| self.row(k).iter().sum())
            .collect()
    }

    /// Entrywise sum; self-adjointness is kept only when both operands share
    /// the same weights.
    pub fn add(&self, other: &Stencil) -> Result<Stencil> {
        check_len("stencil sum", self.center.len(), other.center.len())?;
        check_len("stencil sum", self.nx, other.nx)?;
        let sum = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Ok(Stencil {
            nx: self.nx,
            ny: self.ny,
            center: sum(&self.center, &other.center),
            west: sum(&self.west, &other.west),
            east: sum(&self.east, &other.east),
            south: sum(&self.south, &other.south),
            north: sum(&self.north, &other.north),
            weights: match (&self.weights, &other.weights) {
                (Some(a), Some(b)) if a == b => Some(a.clone()),
                _ => None,
            },
        })
    }

    pub fn scaled(&self, s: f64) -> Stencil {
        let sc = |a: &[f64]| a.iter().map(|x| s * x).collect();
        Stencil {
            nx: self.nx,
            ny: self.ny,
            center: sc(&self.center),
            west: sc(&self.west),
            east: sc(&self.east),
            south: sc(&self.south),
            north: sc(&self.north),
            weights: self.weights.clone(),
        }
    }
}

impl LinearOperator for Stencil {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        for j in 0..ny {
            let row = j * nx;
            for i in 0..nx {
                let k = row + i;
                let mut v = self.center[k] * x[k];
                if i > 0 {
                    v += self.west[k] * x[k - 1];
                }
                if i + 1 < nx {
                    v += self.east[k] * x[k + 1];
                }
                if j > 0 {
                    v += self.south[k] * x[k - nx];
                }
                if j + 1 < ny {
                    v += self.north[k] * x[k + nx];
                }
                y[k] = v;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.center.clone()
    }

    fn offdiag_abs_row_sums(&self) -> Vec<f64> {
        (0..self.center.len())
            .map(|k| {
                self.west[k].abs() + self.east[k].abs() + self.south[k].abs() + self.north[k].abs()
            })
            .collect()
    }

    fn is_symmetric(&self) -> bool {
        let (nx, ny) = (self.nx, self.ny);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-14 * a.abs().max(b.abs());
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                if i + 1 < nx && !close(self.east[k], self.west[k + 1]) {
                    return false;
                }
                if j + 1 < ny && !close(self.north[k], self.south[k + nx]) {
                    return false;
                }
            }
        }
        true
    }
}

/// Constant source produced by Dirichlet data, added to `A x`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryVector(pub Vec<f64>);

impl BoundaryVector {
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

/// `D * Laplacian` with the grid's boundary tags.
///
/// Neumann edges use a mirrored ghost value. Dirichlet edges (cell-centred
/// grids only) place the boundary value on the face, half a cell away; its
/// coefficient goes into the returned [`BoundaryVector`].
pub fn assemble_diffusion(grid: &Grid, d: f64) -> Result<(Stencil, BoundaryVector)> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::invalid(format!("diffusivity must be positive, got {d}")));
    }
    let bc = grid.boundary();
    if grid.layout() == Layout::NodeCentered && !bc.is_pure_neumann() {
        return Err(Error::Unsupported(
            "Dirichlet edges need a cell-centred grid".into(),
        ));
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    let cx = d / (grid.dx() * grid.dx());
    let cy = d / (grid.dy() * grid.dy());
    let mut s = Stencil::zeros(nx, ny);
    let mut b = vec![0.0; nx * ny];
    let node = grid.layout() == Layout::NodeCentered;
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            axis_terms(i, nx, cx, node, bc.west, bc.east, &mut s.center[k], &mut s.west[k], &mut s.east[k], &mut b[k]);
            axis_terms(j, ny, cy, node, bc.south, bc.north, &mut s.center[k], &mut s.south[k], &mut s.north[k], &mut b[k]);
        }
    }
    s.weights = Some(grid.weights());
    Ok((s, BoundaryVector(b)))
}

#[allow(clippy::too_many_arguments)]
fn axis_terms(
    i: usize,
    n: usize,
    c: f64,
    node: bool,
    lo: EdgeCondition,
    hi: EdgeCondition,
    center: &mut f64,
    minus: &mut f64,
    plus: &mut f64,
    b: &mut f64,
) {
    for (has, edge, slot) in [(i > 0, lo, &mut *minus), (i + 1 < n, hi, &mut *plus)] {
        if has {
            *slot += c;
            *center -= c;
        } else {
            match edge {
                EdgeCondition::Neumann => {}
                EdgeCondition::Dirichlet(g) => {
                    *center -= 2.0 * c;
                    *b += 2.0 * c * g;
                }
            }
        }
    }
    if node {
        // mirrored ghost doubles the single interior neighbour on the edge
        if i == 0 {
            *plus += c;
            *center -= c;
        }
        if i + 1 == n {
            *minus += c;
            *center -= c;
        }
    }
}

/// Face-normal velocities on a cell-centred grid: `qx` on the `(nx + 1) x ny`
/// vertical faces, `qy` on the `nx x (ny + 1)` horizontal faces, both stored
/// `x` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub nx: usize,
    pub ny: usize,
    pub qx: Vec<f64>,
    pub qy: Vec<f64>,
}

impl VelocityField {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        VelocityField {
            nx,
            ny,
            qx: vec![0.0; (nx + 1) * ny],
            qy: vec![0.0; nx * (ny + 1)],
        }
    }

    /// Uniform velocity `(ux, uy)` on every face.
    pub fn uniform(nx: usize, ny: usize, ux: f64, uy: f64) -> Self {
        VelocityField {
            nx,
            ny,
            qx: vec![ux; (nx + 1) * ny],
            qy: vec![uy; nx * (ny + 1)],
        }
    }

    #[inline]
    pub fn qx_at(&self, i: usize, j: usize) -> f64 {
        self.qx[j * (self.nx + 1) + i]
    }

    #[inline]
    pub fn qy_at(&self, i: usize, j: usize) -> f64 {
        self.qy[j * self.nx + i]
    }

    pub fn max_abs(&self) -> f64 {
        self.qx.iter().chain(&self.qy).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        VelocityField {
            nx: self.nx,
            ny: self.ny,
            qx: self.qx.iter().map(|v| s * v).collect(),
            qy: self.qy.iter().map(|v| s * v).collect(),
        }
    }

    /// `max |q| L / D`.
    pub fn peclet(&self, length: f64, d: f64) -> f64 {
        self.max_abs() * length / d
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        if grid.layout() != Layout::CellCentered {
            return Err(Error::Unsupported("face velocities need a cell-centred grid".into()));
        }
        check_len("velocity nx", grid.nx(), self.nx)?;
        check_len("velocity ny", grid.ny(), self.ny)?;
        check_len("velocity x-faces", (self.nx + 1) * self.ny, self.qx.len())?;
        check_len("velocity y-faces", self.nx * (self.ny + 1), self.qy.len())
    }

    /// Discrete divergence `(qE - qW)/dx + (qN - qS)/dy` per cell.
    pub fn cell_divergence(&self, grid: &Grid) -> Result<Vec<f64>> {
        self.check(grid)?;
        let (dx, dy) = (grid.dx(), grid.dy());
        let mut div = vec![0.0; self.nx * self.ny];
        for j in 0..self.ny {
            for i in 0..self.nx {
                div[j * self.nx + i] = (self.qx_at(i + 1, j) - self.qx_at(i, j)) / dx
                    + (self.qy_at(i, j + 1) - self.qy_at(i, j)) / dy;
            }
        }
        Ok(div)
    }

    /// Volumetric flux entering through the west edge and leaving through the
    /// east edge (per unit depth).
    pub fn edge_fluxes(&self, grid: &Grid) -> Result<(f64, f64)> {
        self.check(grid)?;
        let dy = grid.dy();
        let inflow = (0..self.ny).map(|j| self.qx_at(0, j) * dy).sum();
        let outflow = (0..self.ny).map(|j| self.qx_at(self.nx, j) * dy).sum();
        Ok((inflow, outflow))
    }

    /// Writes `face,i,j,q` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["face", "i", "j", "q"])?;
        for j in 0..self.ny {
            for i in 0..=self.nx {
                w.write_record(["x", &i.to_string(), &j.to_string(), &format!("{:e}", self.qx_at(i, j))])?;
            }
        }
        for j in 0..=self.ny {
            for i in 0..self.nx {
                w.write_record(["y", &i.to_string(), &j.to_string(), &format!("{:e}", self.qy_at(i, j))])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// First-order upwind discretisation of `-div(q u)`, returned as a stencil
/// `G` and a constant vector `g` so that the term is `G u + g`.
///
/// Inflow through a Dirichlet edge carries `inflow_value`; other boundary
/// faces are closed unless the velocity points outward, in which case the
/// cell value leaves the domain.
pub fn upwind_advection(grid: &Grid, vel: &VelocityField, inflow_value: f64) -> Result<(Stencil, Vec<f64>)> {
    vel.check(grid)?;
    let (nx, ny) = (grid.nx(), grid.ny());
    let (dx, dy) = (grid.dx(), grid.dy());
    let bc = grid.boundary();
    let mut s = Stencil::zeros(nx, ny);
    let mut g = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            // face flux out of the cell = q * upwind value; contributes -flux/h
            let faces = [
                (vel.qx_at(i, j), -1.0, dx, i > 0, bc.west, 1usize),
                (vel.qx_at(i + 1, j), 1.0, dx, i + 1 < nx, bc.east, 2),
                (vel.qy_at(i, j), -1.0, dy, j > 0, bc.south, 3),
                (vel.qy_at(i, j + 1), 1.0, dy, j + 1 < ny, bc.north, 4),
            ];
            for (q, sign, h, interior, edge, slot) in faces {
                let outward = sign * q;
                if outward > 0.0 {
                    s.center[k] -= outward / h;
                } else if outward < 0.0 {
                    if interior {
                        let c = -outward / h;
                        match slot {
                            1 => s.west[k] += c,
                            2 => s.east[k] += c,
                            3 => s.south[k] += c,
                            _ => s.north[k] += c,
                        }
                    } else if edge.is_dirichlet() {
                        g[k] += -outward / h * inflow_value;
                    }
                }
            }
        }
    }
    Ok((s, g))
}

/// Solves `div((k / mu) grad p) = 0` on a cell-centred grid with `p = p_left`
/// on the west edge, `p = p_right` on the east edge and no flow elsewhere, and
/// returns the Darcy fluxes `q = -(k / mu) grad p` on every face. Face
/// permeabilities are harmonic means of the adjacent cells.
pub fn darcy_solve(
    grid: &Grid,
    permeability: &[f64],
    mu: f64,
    p_left: f64,
    p_right: f64,
    tol: f64,
) -> Result<VelocityField> {
    if grid.layout() != Layout::CellCentered {
        return Err(Error::Unsupported("darcy solve needs a cell-centred grid".into()));
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    check_len("permeability", nx * ny, permeability.len())?;
    if permeability.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
        return Err(Error::invalid("permeability must be positive and finite"));
    }
    if !(mu > 0.0) {
        return Err(Error::invalid("viscosity must be positive"));
    }
    let (dx, dy) = (grid.dx(), grid.dy());
    let kk = |i: usize, j: usize| permeability[j * nx + i];
    let harm = |a: f64, b: f64| 2.0 * a * b / (a + b);
    // transmissibilities: tx on x-faces, ty on y-faces (flux = -t * jump)
    let mut tx = vec![0.0; (nx + 1) * ny];
    let mut ty = vec![0.0; nx * (ny + 1)];
    for j in 0..ny {
        tx[j * (nx + 1)] = kk(0, j) / mu / (0.5 * dx);
        tx[j * (nx + 1) + nx] = kk(nx - 1, j) / mu / (0.5 * dx);
        for i in 1..nx {
            tx[j * (nx + 1) + i] = harm(kk(i - 1, j), kk(i, j)) / mu / dx;
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            ty[j * nx + i] = harm(kk(i, j - 1), kk(i, j)) / mu / dy;
        }
    }
    // positive definite system M p = r, scaled by cell area
    let mut m = Stencil::zeros(nx, ny);
    let mut rhs = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            let (tw, te) = (tx[j * (nx + 1) + i] * dy, tx[j * (nx + 1) + i + 1] * dy);
            let (ts, tn) = (ty[j * nx + i] * dx, ty[(j + 1) * nx + i] * dx);
            m.center[k] = tw + te + ts + tn;
            if i > 0 {
                m.west[k] = -tw;
            } else {
                rhs[k] += tw * p_left;
            }
            if i + 1 < nx {
                m.east[k] = -te;
            } else {
                rhs[k] += te * p_right;
            }
            if j > 0 {
                m.south[k] = -ts;
            }
            if j + 1 < ny {
                m.north[k] = -tn;
            }
        }
    }
    let diag = m.diagonal();
    let mut p: Vec<f64> = (0..nx * ny)
        .map(|k| {
            let x = grid.x(k % nx) / grid.lx();
            p_left + (p_right - p_left) * x
        })
        .collect();
    cg(
        |x: &[f64], y: &mut [f64]| m.apply(x, y),
        &rhs,
        &mut p,
        None,
        Some(&diag),
        tol,
        20 * nx * ny,
    )?;

    let mut vel = VelocityField::zeros(nx, ny);
    for j in 0..ny {
        for i in 0..=nx {
            let f = j * (nx + 1) + i;
            let left = if i == 0 { p_left } else { p[j * nx + i - 1] };
            let right = if i == nx { p_right } else { p[j * nx + i] };
            vel.qx[f] = -tx[f] * (right - left);
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let f = j * nx + i;
            vel.qy[f] = -ty[f] * (p[j * nx + i] - p[(j - 1) * nx + i]);
        }
    }
    Ok(vel)
}

/// Default streak bands in `y`.
pub const DEFAULT_STREAKS: [(f64, f64); 3] = [(0.2, 0.25), (0.475, 0.525), (0.75, 0.8)];

/// Piecewise-constant permeability: `streak` in cells whose centre lies in
/// one of the horizontal `bands`, `background` elsewhere.
pub fn permeability_streaks(grid: &Grid, background: f64, streak: f64, bands: &[(f64, f64)]) -> Result<Vec<f64>> {
    if !(background > 0.0 && streak >= background) {
        return Err(Error::invalid("need streak >= background > 0"));
    }
    let mut sorted = bands.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (k, &(lo, hi)) in sorted.iter().enumerate() {
        if !(lo >= 0.0 && hi <= grid.ly() && lo < hi) {
            return Err(Error::invalid(format!("band [{lo}, {hi}] outside the domain")));
        }
        if k > 0 && lo < sorted[k - 1].1 {
            return Err(Error::invalid("permeability bands overlap"));
        }
    }
    Ok(grid.sample(|_, y| {
        if bands.iter().any(|&(lo, hi)| y >= lo && y <= hi) {
            streak
        } else {
            background
        }
    }))
}

/// Reads a raster with one line per `y` index and comma-separated values
/// along `x`.
pub fn load_raster(path: &Path, grid: &Grid) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut out = Vec::with_capacity(grid.len());
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        check_len("raster row length", grid.nx(), rec.len())?;
        for v in rec.iter() {
            out.push(
                v.parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad raster value `{v}`: {e}")))?,
            );
        }
        rows += 1;
    }
    check_len("raster rows", grid.ny(), rows)?;
    Ok(out)
}

/// Writes a field in the [`load_raster`] format.
pub fn write_raster(path: &Path, grid: &Grid, field: &[f64]) -> Result<()> {
    check_len("raster field", grid.len(), field.len())?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in field.chunks(grid.nx()) {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}
