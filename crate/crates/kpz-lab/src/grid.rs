//! Periodic grids and sampled fields.
//!
//! A [`TorusGrid`] discretises the circle of a given period with `n` evenly
//! spaced nodes `x_j = -period/2 + j * spacing`, so `x = 0` sits on the grid
//! whenever `n` is even. Fields are plain value vectors over those nodes;
//! space-time fields stack frames on a uniform time mesh.

use crate::error::{Error, Result};

/// Even grid on the circle `R / (period Z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusGrid {
    n_points: usize,
    period: f64,
}

impl TorusGrid {
    /// Grid with `n_points` nodes on the unit torus.
    pub fn new(n_points: usize) -> Result<Self> {
        Self::with_period(n_points, 1.0)
    }

    /// Grid with `n_points` nodes on a torus of the given period.
    /// `n_points` must be an even power of two so the sharp spectral cutoff
    /// and the FFT agree on mode bookkeeping.
    pub fn with_period(n_points: usize, period: f64) -> Result<Self> {
        if !n_points.is_power_of_two() || n_points < 4 {
            return Err(Error::InvalidParameter(format!(
                "n_points must be a power of two >= 4, got {n_points}"
            )));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "period must be positive and finite, got {period}"
            )));
        }
        Ok(Self { n_points, period })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn spacing(&self) -> f64 {
        self.period / self.n_points as f64
    }

    /// Node position, `x_0 = -period/2`.
    pub fn point(&self, j: usize) -> f64 {
        -0.5 * self.period + j as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.point(j)).collect()
    }

    /// Representative of `x` in `[-period/2, period/2)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let p = self.period;
        let y = x - p * (x / p + 0.5).floor();
        // Guard the half-open convention against rounding at the seam.
        if y >= 0.5 * p {
            y - p
        } else {
            y
        }
    }

    /// Geodesic distance on the torus.
    pub fn torus_distance(&self, a: f64, b: f64) -> f64 {
        self.wrap(a - b).abs()
    }

    /// Index of the node nearest to `x` (ties to the lower index).
    pub fn nearest_index(&self, x: f64) -> usize {
        let u = (x + 0.5 * self.period) / self.spacing();
        let i = u.round() as i64;
        i.rem_euclid(self.n_points as i64) as usize
    }
}

/// Scalar field sampled on a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct TorusField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl TorusField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::MeshMismatch(format!(
                "field has {} values for a grid of {} points",
                values.len(),
                grid.n_points()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_points()],
        }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n_points()).map(|j| f(grid.point(j))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        crate::stats::pairwise_sum(&self.values) / self.values.len() as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Linear interpolation on the torus.
    pub fn sample_at(&self, x: f64) -> f64 {
        let n = self.grid.n_points();
        let u = (x + 0.5 * self.grid.period()) / self.grid.spacing();
        let i = u.floor();
        let frac = u - i;
        let i0 = (i as i64).rem_euclid(n as i64) as usize;
        let i1 = (i0 + 1) % n;
        (1.0 - frac) * self.values[i0] + frac * self.values[i1]
    }
}

/// Field on a uniform time mesh `t_i = i * dt`, one frame per node.
///
/// Frames are stored flat, frame-major. Time lookups use the frame whose
/// mesh time is nearest below or at the query (left-continuous), which makes
/// evaluation exact for queries on the mesh itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    grid: TorusGrid,
    dt: f64,
    n_frames: usize,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn new(grid: TorusGrid, dt: f64, n_frames: usize, values: Vec<f64>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive and finite, got {dt}"
            )));
        }
        if n_frames == 0 {
            return Err(Error::InvalidParameter(
                "a space-time field needs at least one frame".into(),
            ));
        }
        if values.len() != n_frames * grid.n_points() {
            return Err(Error::MeshMismatch(format!(
                "expected {} values for {} frames of {} points, got {}",
                n_frames * grid.n_points(),
                n_frames,
                grid.n_points(),
                values.len()
            )));
        }
        Ok(Self {
            grid,
            dt,
            n_frames,
            values,
        })
    }

    pub fn zeros(grid: TorusGrid, dt: f64, n_frames: usize) -> Result<Self> {
        Self::new(grid, dt, n_frames, vec![0.0; n_frames * grid.n_points()])
    }

    /// Build from per-frame closures of `(frame_index, x)`.
    pub fn from_frames(grid: TorusGrid, dt: f64, frames: Vec<Vec<f64>>) -> Result<Self> {
        let n_frames = frames.len();
        let mut values = Vec::with_capacity(n_frames * grid.n_points());
        for f in &frames {
            if f.len() != grid.n_points() {
                return Err(Error::MeshMismatch(format!(
                    "frame has {} values for a grid of {} points",
                    f.len(),
                    grid.n_points()
                )));
            }
            values.extend_from_slice(f);
        }
        Self::new(grid, dt, n_frames, values)
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    /// Largest mesh time, `(n_frames - 1) * dt`.
    pub fn t_max(&self) -> f64 {
        (self.n_frames - 1) as f64 * self.dt
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.grid.n_points();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.grid.n_points();
        &mut self.values[i * n..(i + 1) * n]
    }

    pub fn frame_field(&self, i: usize) -> TorusField {
        TorusField {
            grid: self.grid,
            values: self.frame(i).to_vec(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index of the frame used for queries at time `s`.
    pub fn frame_index_at(&self, s: f64) -> usize {
        // Nudge by a relative epsilon so s = k * dt lands on frame k even
        // when the product rounds down.
        let u = (s / self.dt + 1e-9).floor();
        (u.max(0.0) as usize).min(self.n_frames - 1)
    }

    /// Evaluate at `(s, x)`: left-continuous in time, linear in space.
    pub fn eval(&self, s: f64, x: f64) -> f64 {
        let i = self.frame_index_at(s);
        let n = self.grid.n_points();
        let u = (x + 0.5 * self.grid.period()) / self.grid.spacing();
        let fl = u.floor();
        let frac = u - fl;
        let i0 = (fl as i64).rem_euclid(n as i64) as usize;
        let i1 = (i0 + 1) % n;
        let f = self.frame(i);
        (1.0 - frac) * f[i0] + frac * f[i1]
    }

    /// Reverse the frames covering `[0, t]`: the result's frame at time `s`
    /// is this field's frame at `t - s`. `t` must lie on the time mesh.
    pub fn time_reversed_through(&self, t: f64) -> Result<SpaceTimeField> {
        let steps = (t / self.dt).round() as usize;
        if (t - steps as f64 * self.dt).abs() > 1e-9 * self.dt.max(t) {
            return Err(Error::MeshMismatch(format!(
                "horizon {t} is not a multiple of dt = {}",
                self.dt
            )));
        }
        if steps + 1 > self.n_frames {
            return Err(Error::MeshMismatch(format!(
                "horizon {t} needs {} frames but the field has {}",
                steps + 1,
                self.n_frames
            )));
        }
        let n = self.grid.n_points();
        let mut values = Vec::with_capacity((steps + 1) * n);
        for i in (0..=steps).rev() {
            values.extend_from_slice(self.frame(i));
        }
        SpaceTimeField::new(self.grid, self.dt, steps + 1, values)
    }

    /// Sup norm over all frames.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
