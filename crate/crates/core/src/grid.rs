//! Uniform rectangular grids on `[0, Lx] x [0, Ly]`.
//!
//! Two layouts are supported. `NodeCentered` places unknowns on the mesh
//! vertices (the lumped P1 finite element picture), `CellCentered` places them
//! at control-volume centres (finite volumes). Fields are stored row-major with
//! `x` fastest: `k = j * nx + i`.

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    NodeCentered,
    CellCentered,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeCondition {
    Neumann,
    Dirichlet(f64),
}

impl EdgeCondition {
    pub fn is_dirichlet(&self) -> bool {
        matches!(self, EdgeCondition::Dirichlet(_))
    }
}

/// Boundary tags for the four edges of the rectangle.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Boundary {
    pub west: EdgeCondition,
    pub east: EdgeCondition,
    pub south: EdgeCondition,
    pub north: EdgeCondition,
}

impl Boundary {
    pub fn neumann() -> Self {
        Boundary {
            west: EdgeCondition::Neumann,
            east: EdgeCondition::Neumann,
            south: EdgeCondition::Neumann,
            north: EdgeCondition::Neumann,
        }
    }

    /// Dirichlet on the west/east edges, zero-flux on south/north.
    pub fn dirichlet_x(west: f64, east: f64) -> Self {
        Boundary {
            west: EdgeCondition::Dirichlet(west),
            east: EdgeCondition::Dirichlet(east),
            south: EdgeCondition::Neumann,
            north: EdgeCondition::Neumann,
        }
    }

    pub fn is_pure_neumann(&self) -> bool {
        [self.west, self.east, self.south, self.north]
            .iter()
            .all(|e| !e.is_dirichlet())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    dx: f64,
    dy: f64,
    layout: Layout,
    boundary: Boundary,
}

impl Grid {
    pub fn new(
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        layout: Layout,
        boundary: Boundary,
    ) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::invalid(format!(
                "grid needs at least 2 points per axis, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::invalid(format!(
                "domain lengths must be positive, got {lx}x{ly}"
            )));
        }
        let (dx, dy) = match layout {
            Layout::NodeCentered => (lx / (nx - 1) as f64, ly / (ny - 1) as f64),
            Layout::CellCentered => (lx / nx as f64, ly / ny as f64),
        };
        Ok(Grid {
            nx,
            ny,
            lx,
            ly,
            dx,
            dy,
            layout,
            boundary,
        })
    }

    /// Unit square with the given resolution and all-Neumann edges.
    pub fn unit_square(nx: usize, ny: usize, layout: Layout) -> Result<Self> {
        Grid::new(nx, ny, 1.0, 1.0, layout, Boundary::neumann())
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dy(&self) -> f64 {
        self.dy
    }
    pub fn layout(&self) -> Layout {
        self.layout
    }
    pub fn boundary(&self) -> &Boundary {
        &self.boundary
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest element edge length.
    pub fn h(&self) -> f64 {
        self.dx.max(self.dy)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    pub fn x(&self, i: usize) -> f64 {
        match self.layout {
            Layout::NodeCentered => i as f64 * self.dx,
            Layout::CellCentered => (i as f64 + 0.5) * self.dx,
        }
    }

    pub fn y(&self, j: usize) -> f64 {
        match self.layout {
            Layout::NodeCentered => j as f64 * self.dy,
            Layout::CellCentered => (j as f64 + 0.5) * self.dy,
        }
    }

    /// One-dimensional quadrature weights along x (trapezoid for nodes).
    pub fn weights_x(&self) -> Vec<f64> {
        axis_weights(self.nx, self.dx, self.layout)
    }

    pub fn weights_y(&self) -> Vec<f64> {
        axis_weights(self.ny, self.dy, self.layout)
    }

    /// Quadrature weight of every unknown; these sum to `Lx * Ly`.
    pub fn weights(&self) -> Vec<f64> {
        let wx = self.weights_x();
        let wy = self.weights_y();
        let mut w = Vec::with_capacity(self.len());
        for &b in &wy {
            for &a in &wx {
                w.push(a * b);
            }
        }
        w
    }

    /// Samples `f(x, y)` at every unknown.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            let y = self.y(j);
            for i in 0..self.nx {
                out.push(f(self.x(i), y));
            }
        }
        out
    }

    /// Discrete L2 inner product.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        check_len("grid inner product", self.len(), u.len())?;
        check_len("grid inner product", self.len(), v.len())?;
        let wx = self.weights_x();
        let wy = self.weights_y();
        let mut acc = 0.0;
        for (j, wyj) in wy.iter().enumerate() {
            let row = j * self.nx;
            let mut racc = 0.0;
            for (i, wxi) in wx.iter().enumerate() {
                racc += wxi * u[row + i] * v[row + i];
            }
            acc += wyj * racc;
        }
        Ok(acc)
    }

    /// Discrete L2 norm `sqrt(sum_k w_k f_k^2)`.
    pub fn l2_norm(&self, field: &[f64]) -> Result<f64> {
        Ok(self.inner(field, field)?.sqrt())
    }
}

fn axis_weights(n: usize, h: f64, layout: Layout) -> Vec<f64> {
    let mut w = vec![h; n];
    if layout == Layout::NodeCentered {
        w[0] *= 0.5;
        w[n - 1] *= 0.5;
    }
    w
}
