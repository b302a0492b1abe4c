//! Square-QAM constellation geometry.
//!
//! Index layout is row-major over the √M×√M lattice: symbol `j` sits at grid
//! row `r = j / side`, column `c = j % side`, and maps to the complex-plane
//! point `(x, y) = (levels[c], levels[r])` where `levels` are the per-axis
//! amplitudes in ascending order. Per-axis levels are the usual odd-integer
//! grid `±1, ±3, …` scaled so the average symbol energy is exactly 1.
//!
//! Decision regions are axis-aligned rectangles with midpoint boundaries, so
//! minimum-distance detection factorizes into two independent per-axis
//! nearest-level searches. Boundary ties go to the lower index — a
//! measure-zero event under any continuous noise, fixed for determinism.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct Constellation {
    order: usize,
    side: usize,
    /// Per-axis amplitude levels, ascending.
    levels: Vec<f64>,
    /// Symbol points (x, y) in index order.
    points: Vec<[f64; 2]>,
    /// Average symbol energy (1.0 by construction).
    power: f64,
    /// Index layout tag, recorded for reproducibility.
    grid: &'static str,
}

impl Constellation {
    /// Square QAM of the given order (a perfect square ≥ 4: 4, 16, 64, …).
    pub fn square_qam(order: usize) -> Result<Self> {
        let side = (order as f64).sqrt().round() as usize;
        if side < 2 || side * side != order {
            return Err(Error::InvalidArgument(format!(
                "order {order} is not a perfect square >= 4"
            )));
        }
        // Odd-integer amplitudes ±1, ±3, …, ±(side-1), normalized to unit
        // average energy: per-axis mean square of that grid is (side²-1)/3,
        // and the two axes contribute independently.
        let scale = (3.0 / (2.0 * (side as f64 * side as f64 - 1.0))).sqrt();
        let levels: Vec<f64> = (0..side)
            .map(|i| (2.0 * i as f64 - (side as f64 - 1.0)) * scale)
            .collect();
        let points = (0..order)
            .map(|j| [levels[j % side], levels[j / side]])
            .collect();
        Ok(Self {
            order,
            side,
            levels,
            points,
            power: 1.0,
            grid: "row-major",
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn point(&self, j: usize) -> [f64; 2] {
        self.points[j]
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Stable identity string for artifact-consistency checks.
    pub fn content_key(&self) -> String {
        format!("qam{}:{}:p={}", self.order, self.grid, self.power)
    }

    /// Nearest level index along one axis; ties go to the lower index.
    fn detect_axis(&self, v: f64) -> usize {
        let mut best = 0;
        let mut best_d = (v - self.levels[0]).abs();
        for (i, &l) in self.levels.iter().enumerate().skip(1) {
            let d = (v - l).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Minimum-distance detection of a received point.
    ///
    /// Equivalent to the global nearest-symbol search because the lattice is
    /// separable; the per-axis lowest-index tie-break reproduces the global
    /// lowest-index rule since the tied set is a Cartesian product.
    pub fn detect(&self, x: f64, y: f64) -> usize {
        let c = self.detect_axis(x);
        let r = self.detect_axis(y);
        r * self.side + c
    }

    /// Up/down/left/right lattice neighbors of symbol `j`, ascending.
    pub fn grid_neighbors(&self, j: usize) -> Vec<usize> {
        let (r, c) = (j / self.side, j % self.side);
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push((r - 1) * self.side + c);
        }
        if c > 0 {
            out.push(r * self.side + c - 1);
        }
        if c + 1 < self.side {
            out.push(r * self.side + c + 1);
        }
        if r + 1 < self.side {
            out.push((r + 1) * self.side + c);
        }
        out
    }

    /// Manhattan distance on the symbol lattice.
    pub fn grid_distance(&self, i: usize, j: usize) -> usize {
        let (ri, ci) = (i / self.side, i % self.side);
        let (rj, cj) = (j / self.side, j % self.side);
        ri.abs_diff(rj) + ci.abs_diff(cj)
    }
}
