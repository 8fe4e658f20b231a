use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{check_dim, Error, Result};
use crate::targets::Target;

/// Regular grid of `nx * ny` nodes over a rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Node spacing `h` in both directions.
    pub fn with_spacing(x_range: (f64, f64), y_range: (f64, f64), h: f64) -> Self {
        let nx = ((x_range.1 - x_range.0) / h).round() as usize + 1;
        let ny = ((y_range.1 - y_range.0) / h).round() as usize + 1;
        Self { x_range, y_range, nx, ny }
    }

    fn coord(&self, i: usize, j: usize) -> [f64; 2] {
        let hx = (self.x_range.1 - self.x_range.0) / (self.nx - 1) as f64;
        let hy = (self.y_range.1 - self.y_range.0) / (self.ny - 1) as f64;
        [self.x_range.0 + i as f64 * hx, self.y_range.0 + j as f64 * hy]
    }

    fn nearest(&self, p: &[f64]) -> Result<(usize, usize)> {
        let inside = |v: f64, r: (f64, f64)| v >= r.0 && v <= r.1;
        if !inside(p[0], self.x_range) || !inside(p[1], self.y_range) {
            return Err(Error::InvalidArgument(format!("point {p:?} outside the grid")));
        }
        let fx = (p[0] - self.x_range.0) / (self.x_range.1 - self.x_range.0) * (self.nx - 1) as f64;
        let fy = (p[1] - self.y_range.0) / (self.y_range.1 - self.y_range.0) * (self.ny - 1) as f64;
        Ok((fx.round() as usize, fy.round() as usize))
    }
}

/// Barrier `min over paths of max U along the path - U(a)` for a 2-d
/// potential, on an 8-neighbour grid, by Dijkstra with the bottleneck
/// (running maximum) path cost. Non-finite potential values are impassable.
pub fn energy_barrier_grid(
    potential: impl Fn(&[f64]) -> f64,
    a: &[f64],
    b: &[f64],
    grid: &GridSpec,
) -> Result<f64> {
    check_dim(2, a.len())?;
    check_dim(2, b.len())?;
    if grid.nx < 2 || grid.ny < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 nodes per axis".into()));
    }
    let u_a = potential(a);
    if a == b {
        return Ok(0.0);
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let idx = |i: usize, j: usize| j * nx + i;
    let values: Vec<f64> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .map(|(i, j)| potential(&grid.coord(i, j)))
        .collect();
    let (si, sj) = grid.nearest(a)?;
    let (ti, tj) = grid.nearest(b)?;
    let start = idx(si, sj);
    let goal = idx(ti, tj);

    let mut best = vec![f64::INFINITY; nx * ny];
    let mut heap = BinaryHeap::new();
    let start_cost = values[start].max(u_a).max(potential(b));
    if !start_cost.is_finite() {
        return Err(Error::InvalidArgument("potential not finite at an endpoint".into()));
    }
    best[start] = start_cost;
    heap.push(Reverse((Cost(start_cost), start)));
    while let Some(Reverse((Cost(c), node))) = heap.pop() {
        if node == goal {
            return Ok(c - u_a);
        }
        if c > best[node] {
            continue;
        }
        let (i, j) = ((node % nx) as isize, (node / nx) as isize);
        for di in -1..=1isize {
            for dj in -1..=1isize {
                let (ni, nj) = (i + di, j + dj);
                if (di == 0 && dj == 0) || ni < 0 || nj < 0 || ni >= nx as isize || nj >= ny as isize {
                    continue;
                }
                let next = idx(ni as usize, nj as usize);
                let v = values[next];
                if !v.is_finite() {
                    continue;
                }
                let nc = c.max(v);
                if nc < best[next] {
                    best[next] = nc;
                    heap.push(Reverse((Cost(nc), next)));
                }
            }
        }
    }
    Err(Error::InvalidArgument("endpoints are not connected on the grid".into()))
}

/// [`energy_barrier_grid`] for `U = -log pi / temperature`.
pub fn energy_barrier(target: &dyn Target, temperature: f64, a: &[f64], b: &[f64], grid: &GridSpec) -> Result<f64> {
    check_dim(2, target.dim())?;
    energy_barrier_grid(
        |x| target.log_density(x).map(|l| -l / temperature).unwrap_or(f64::INFINITY),
        a,
        b,
        grid,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cost(f64);

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
