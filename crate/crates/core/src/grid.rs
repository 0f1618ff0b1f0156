//! Uniform 2D sampling grids with trapezoidal quadrature.

use crate::error::{Error, Result};

/// Uniform grid; samples at `x0 + i·dx`, `y0 + j·dy` (endpoints included).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2 {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub dx: f64,
    pub y0: f64,
    pub dy: f64,
}

impl Grid2 {
    /// `nx × ny` samples spanning `[x_lo, x_hi] × [y_lo, y_hi]` inclusive.
    pub fn spanning(nx: usize, ny: usize, x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> Self {
        Grid2 {
            nx,
            ny,
            x0: x_lo,
            dx: (x_hi - x_lo) / (nx - 1) as f64,
            y0: y_lo,
            dy: (y_hi - y_lo) / (ny - 1) as f64,
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + self.dx * i as f64
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y0 + self.dy * j as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trapezoid weight of sample `(i, j)` (includes the cell area).
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let wx = if i == 0 || i + 1 == self.nx { 0.5 } else { 1.0 };
        let wy = if j == 0 || j + 1 == self.ny { 0.5 } else { 1.0 };
        wx * wy * self.dx * self.dy
    }

    pub fn check_same(&self, other: &Grid2) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{}x{} grid (pitch {:.4}, {:.4}) vs {}x{} grid (pitch {:.4}, {:.4})",
                self.nx, self.ny, self.dx, self.dy, other.nx, other.ny, other.dx, other.dy
            )))
        }
    }
}

/// Real samples on a [`Grid2`], stored row by row (`data[j·nx + i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct RealGrid {
    pub grid: Grid2,
    pub data: Vec<f64>,
}

impl RealGrid {
    pub fn from_fn(grid: Grid2, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            let y = grid.y(j);
            for i in 0..grid.nx {
                data.push(f(grid.x(i), y));
            }
        }
        RealGrid { grid, data }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.grid.nx + i]
    }

    /// Trapezoidal ∬ f dA.
    pub fn integrate(&self) -> f64 {
        self.weighted_sum(|v| v)
    }

    pub fn weighted_sum(&self, f: impl Fn(f64) -> f64) -> f64 {
        let g = &self.grid;
        let mut total = 0.0;
        for j in 0..g.ny {
            let mut row = 0.0;
            for i in 0..g.nx {
                let w = if i == 0 || i + 1 == g.nx { 0.5 } else { 1.0 };
                row += w * f(self.data[j * g.nx + i]);
            }
            let w = if j == 0 || j + 1 == g.ny { 0.5 } else { 1.0 };
            total += w * row;
        }
        total * g.dx * g.dy
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealGrid {
        RealGrid {
            grid: self.grid,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Scale so that ∬ |f|² dA = 1.
    pub fn normalize_power(&mut self) -> f64 {
        let norm = self.weighted_sum(|v| v * v).sqrt();
        if norm > 0.0 {
            for v in &mut self.data {
                *v /= norm;
            }
        }
        norm
    }
}
