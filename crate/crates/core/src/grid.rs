//! Radial finite-volume grids.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::unit_sphere_area;

/// Cells `[R_i, R_{i+1})` with `R_0 = 0`. Uniform grids have `R_i = i dr`;
/// non-uniform ones come out of rearrangement and resampling.
#[derive(Clone, Debug)]
pub struct RadialGrid {
    dim: usize,
    dr: Option<f64>,
    edges: Arc<[f64]>,
    volumes: Arc<[f64]>,
}

impl PartialEq for RadialGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && (Arc::ptr_eq(&self.edges, &other.edges) || self.edges == other.edges)
    }
}

impl RadialGrid {
    pub fn uniform(dr: f64, n: usize, dim: usize) -> Result<Self> {
        if !(dr > 0.0 && dr.is_finite()) || n == 0 {
            return Err(Error::InvalidParams(format!(
                "grid needs dr > 0 and n > 0 (dr = {dr}, n = {n})"
            )));
        }
        if dim < 1 {
            return Err(Error::InvalidParams("dimension must be positive".into()));
        }
        let edges: Vec<f64> = (0..=n).map(|i| i as f64 * dr).collect();
        // (i+1)^d - i^d expanded binomially: no cancellation for large i.
        let binom = binomials(dim);
        let scale = unit_sphere_area(dim) * dr.powi(dim as i32) / dim as f64;
        let volumes: Vec<f64> = (0..n)
            .map(|i| {
                let x = i as f64;
                let mut s = 0.0;
                let mut xp = 1.0;
                for c in binom.iter().take(dim) {
                    s += c * xp;
                    xp *= x;
                }
                scale * s
            })
            .collect();
        Ok(Self {
            dim,
            dr: Some(dr),
            edges: edges.into(),
            volumes: volumes.into(),
        })
    }

    /// Grid covering `[0, radius]` with `n` equal cells.
    pub fn with_radius(radius: f64, n: usize, dim: usize) -> Result<Self> {
        Self::uniform(radius / n as f64, n, dim)
    }

    pub fn from_edges(edges: Vec<f64>, dim: usize) -> Result<Self> {
        if edges.len() < 2 || edges[0] != 0.0 {
            return Err(Error::InvalidParams(
                "edges must start at 0 and contain at least one cell".into(),
            ));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParams("edges must be strictly increasing".into()));
        }
        let c = unit_sphere_area(dim) / dim as f64;
        let volumes: Vec<f64> = edges
            .windows(2)
            .map(|w| c * (w[1].powi(dim as i32) - w[0].powi(dim as i32)))
            .collect();
        Ok(Self {
            dim,
            dr: None,
            edges: edges.into(),
            volumes: volumes.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.volumes.len()
    }

    /// Cell width of a uniform grid.
    pub fn dr(&self) -> Option<f64> {
        self.dr
    }

    /// Largest cell width (equals `dr` on uniform grids).
    pub fn max_width(&self) -> f64 {
        self.dr.unwrap_or_else(|| {
            self.edges
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(0.0, f64::max)
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn radius(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    pub fn center(&self, i: usize) -> f64 {
        match self.dr {
            Some(dr) => (i as f64 + 0.5) * dr,
            None => 0.5 * (self.edges[i] + self.edges[i + 1]),
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.center(i)).collect()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    /// Index of the cell containing `r`, clamped to the grid.
    pub fn cell_of(&self, r: f64) -> usize {
        let n = self.n();
        if r <= 0.0 {
            return 0;
        }
        if let Some(dr) = self.dr {
            return ((r / dr) as usize).min(n - 1);
        }
        match self.edges.partition_point(|&e| e <= r) {
            0 => 0,
            k => (k - 1).min(n - 1),
        }
    }

    pub fn total_volume(&self) -> f64 {
        unit_sphere_area(self.dim) * self.radius().powi(self.dim as i32) / self.dim as f64
    }

    pub(crate) fn same_edges(&self, other: &Self) -> bool {
        self == other
    }
}

fn binomials(d: usize) -> Vec<f64> {
    let mut c = vec![1.0; d + 1];
    for k in 1..=d {
        c[k] = c[k - 1] * (d - k + 1) as f64 / k as f64;
    }
    c
}
