use crate::error::{Error, Result};

/// Axis-aligned square region of the packed unit square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChartRect {
    pub origin: [f64; 2],
    pub size: f64,
}

impl ChartRect {
    /// Maps chart-local `[0,1]²` into the rectangle.
    pub fn pack(&self, local: [f64; 2]) -> [f64; 2] {
        [
            self.origin[0] + self.size * local[0].clamp(0.0, 1.0),
            self.origin[1] + self.size * local[1].clamp(0.0, 1.0),
        ]
    }

    /// Inverse of [`ChartRect::pack`] (unclamped).
    pub fn unpack(&self, uv: [f64; 2]) -> [f64; 2] {
        [(uv[0] - self.origin[0]) / self.size, (uv[1] - self.origin[1]) / self.size]
    }

    pub fn contains(&self, uv: [f64; 2], tol: f64) -> bool {
        (0..2).all(|k| uv[k] >= self.origin[k] - tol && uv[k] <= self.origin[k] + self.size + tol)
    }

    fn overlaps(&self, other: &ChartRect) -> bool {
        (0..2).all(|k| {
            self.origin[k] < other.origin[k] + other.size && other.origin[k] < self.origin[k] + self.size
        })
    }
}

/// Square charts on a `grid × grid` lattice of the unit square.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartLayout {
    pub grid: usize,
    /// One rectangle per chart; cells past `n` stay empty.
    pub cells: Vec<ChartRect>,
    /// Texture resolution the gutter was sized for.
    pub texture_res: usize,
}

impl ChartLayout {
    /// Index of the chart whose rectangle contains `uv`, if any.
    pub fn chart_at(&self, uv: [f64; 2]) -> Option<usize> {
        self.cells.iter().position(|r| r.contains(uv, 0.0))
    }

    pub fn is_disjoint(&self) -> bool {
        self.cells
            .iter()
            .enumerate()
            .all(|(i, a)| self.cells[i + 1..].iter().all(|b| !a.overlaps(b)))
    }
}

/// Grid packing with `g = ceil(sqrt(n))`; chart `i` sits in column `i mod g`,
/// row `i div g`. Neighbouring cells are separated by a 2-texel gutter at
/// `texture_res` (1 texel trimmed from each side of every cell).
pub fn pack_atlas(n: usize, texture_res: usize) -> Result<ChartLayout> {
    if n == 0 {
        return Err(Error::contract("pack_atlas needs at least one chart"));
    }
    if texture_res == 0 {
        return Err(Error::contract("texture resolution must be positive"));
    }
    let mut g = (n as f64).sqrt().ceil() as usize;
    // guard the float sqrt near perfect squares
    while g * g < n {
        g += 1;
    }
    while g > 1 && (g - 1) * (g - 1) >= n {
        g -= 1;
    }
    let cell = 1.0 / g as f64;
    let inset = if g > 1 { 1.0 / texture_res as f64 } else { 0.0 };
    let size = cell - 2.0 * inset;
    if size <= 0.0 {
        return Err(Error::contract(format!(
            "texture resolution {texture_res} too small for a {g}x{g} chart grid"
        )));
    }
    let cells = (0..n)
        .map(|i| ChartRect {
            origin: [(i % g) as f64 * cell + inset, (i / g) as f64 * cell + inset],
            size,
        })
        .collect();
    Ok(ChartLayout {
        grid: g,
        cells,
        texture_res,
    })
}
