use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A continuous position on the ground plane, in grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn add(self, other: Point) -> Point {
        Point::new(self.x + other.x, self.y + other.y)
    }

    pub fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Discretized ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundGrid {
    width: usize,
    height: usize,
    cell_size_m: f64,
}

impl GroundGrid {
    pub const DEFAULT_CELL_SIZE_M: f64 = 0.20;

    pub fn new(width: usize, height: usize) -> Result<Self> {
        Self::with_cell_size(width, height, Self::DEFAULT_CELL_SIZE_M)
    }

    pub fn with_cell_size(width: usize, height: usize, cell_size_m: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGrid(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if !(cell_size_m > 0.0 && cell_size_m.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "cell size must be positive, got {cell_size_m}"
            )));
        }
        Ok(Self {
            width,
            height,
            cell_size_m,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size_m(&self) -> f64 {
        self.cell_size_m
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    /// True when `p` lies in `[0, w) x [0, h)`.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }

    /// Index of the cell whose center is nearest to `p`, clamped to the grid.
    pub fn nearest_cell(&self, p: Point) -> usize {
        let x = p.x.round().clamp(0.0, (self.width - 1) as f64) as usize;
        let y = p.y.round().clamp(0.0, (self.height - 1) as f64) as usize;
        self.index(x, y)
    }

    pub(crate) fn check_same(&self, other: &GroundGrid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Bilinear interpolation weights at a continuous point, clamped to the
    /// border cells. Derivatives along a clamped axis are zero.
    pub fn bilinear_stencil(&self, x: f64, y: f64) -> BilinearStencil {
        let (x0, x1, fx, gx) = axis_stencil(x, self.width);
        let (y0, y1, fy, gy) = axis_stencil(y, self.height);
        BilinearStencil {
            idx: [
                self.index(x0, y0),
                self.index(x1, y0),
                self.index(x0, y1),
                self.index(x1, y1),
            ],
            w: [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
            dwx: [-(1.0 - fy) * gx, (1.0 - fy) * gx, -fy * gx, fy * gx],
            dwy: [-(1.0 - fx) * gy, -fx * gy, (1.0 - fx) * gy, fx * gy],
        }
    }
}

// (lower index, upper index, fraction, derivative gate)
fn axis_stencil(v: f64, n: usize) -> (usize, usize, f64, f64) {
    if n == 1 {
        return (0, 0, 0.0, 0.0);
    }
    let max = (n - 1) as f64;
    let gate = if v > 0.0 && v < max { 1.0 } else { 0.0 };
    let c = v.clamp(0.0, max);
    let lo = (c.floor() as usize).min(n - 2);
    (lo, lo + 1, c - lo as f64, gate)
}

/// Corner indices, weights and weight derivatives of a bilinear sample.
#[derive(Debug, Clone, Copy)]
pub struct BilinearStencil {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    pub dwx: [f64; 4],
    pub dwy: [f64; 4],
}

impl BilinearStencil {
    pub fn apply(&self, values: &[f64]) -> f64 {
        (0..4).map(|k| self.w[k] * values[self.idx[k]]).sum()
    }

    /// `(d/dx, d/dy)` of the interpolated value.
    pub fn gradient(&self, values: &[f64]) -> (f64, f64) {
        let mut gx = 0.0;
        let mut gy = 0.0;
        for k in 0..4 {
            gx += self.dwx[k] * values[self.idx[k]];
            gy += self.dwy[k] * values[self.idx[k]];
        }
        (gx, gy)
    }
}

/// Probability-of-presence map over the ground grid; every value is in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    grid: GroundGrid,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(grid: GroundGrid, values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len())?;
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::ValueOutOfRange { index, value });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GroundGrid) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &GroundGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[self.grid.index(x, y)]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Per-cell displacement, in cells per frame interval.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    grid: GroundGrid,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl OffsetField {
    pub fn new(grid: GroundGrid, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        grid.check_len(dx.len())?;
        grid.check_len(dy.len())?;
        if let Some(i) = dx
            .iter()
            .zip(&dy)
            .position(|(a, b)| !a.is_finite() || !b.is_finite())
        {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, dx, dy })
    }

    pub fn zeros(grid: GroundGrid) -> Self {
        Self {
            dx: vec![0.0; grid.len()],
            dy: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn constant(grid: GroundGrid, d: Point) -> Self {
        Self {
            dx: vec![d.x; grid.len()],
            dy: vec![d.y; grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &GroundGrid {
        &self.grid
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    pub fn at(&self, index: usize) -> Point {
        Point::new(self.dx[index], self.dy[index])
    }

    pub fn get(&self, x: usize, y: usize) -> Point {
        self.at(self.grid.index(x, y))
    }

    /// Bilinear sample at a continuous position, border-clamped.
    pub fn sample(&self, p: Point) -> Point {
        let s = self.grid.bilinear_stencil(p.x, p.y);
        Point::new(s.apply(&self.dx), s.apply(&self.dy))
    }

    /// Largest displacement norm over all cells.
    pub fn max_norm(&self) -> f64 {
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.dx, self.dy)
    }
}
