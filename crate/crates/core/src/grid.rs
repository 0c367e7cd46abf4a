//! Uniform rectangular grids over a boxed configuration space, the scalar,
//! density, wave and vector fields that live on them, and the quadrature,
//! log-gradient and interpolation primitives shared by every solver.
//!
//! Every axis is cell-centred: node `i` sits at `min + (i + 1/2) dx` with
//! `dx = (max - min) / points`, so node `i` is also the centre of the
//! finite-volume cell `[min + i dx, min + (i + 1) dx)`. Fields are stored
//! row-major (last axis fastest).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIMS: usize = 3;
pub const MIN_POINTS: usize = 8;
/// Upper bound on the number of nodes a single grid may address.
pub const MAX_TOTAL_POINTS: usize = 1 << 28;

/// A position in configuration space. Components beyond `Grid::dims()` are
/// ignored and kept at zero.
pub type Point = [f64; MAX_DIMS];

/// Builds a [`Point`] from up to three coordinates.
pub fn point(coords: &[f64]) -> Point {
    let mut p = [0.0; MAX_DIMS];
    p[..coords.len()].copy_from_slice(coords);
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    Reflecting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    pub boundary: Boundary,
}

impl Axis {
    pub fn new(min: f64, max: f64, points: usize, boundary: Boundary) -> Self {
        Self {
            min,
            max,
            points,
            boundary,
        }
    }

    pub fn length(&self) -> f64 {
        self.max - self.min
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / self.points as f64
    }

    /// Coordinate of node `i`. Computed about the axis midpoint so that
    /// symmetric extents give bit-exact mirror pairs `x_i == -x_{n-1-i}`.
    pub fn coord(&self, i: usize) -> f64 {
        let mid = 0.5 * (self.min + self.max);
        mid + (i as f64 + 0.5 - 0.5 * self.points as f64) * self.spacing()
    }

    /// Maps `x` back into `[min, max]`: periodic axes wrap, reflecting axes
    /// fold about the walls.
    pub fn fold(&self, x: f64) -> f64 {
        let len = self.length();
        match self.boundary {
            Boundary::Periodic => {
                let y = self.min + (x - self.min).rem_euclid(len);
                // rem_euclid can round up to exactly `len`
                if y >= self.max {
                    self.min
                } else {
                    y
                }
            }
            Boundary::Reflecting => {
                if x >= self.min && x <= self.max {
                    return x;
                }
                let period = 2.0 * len;
                let u = (x - self.min).rem_euclid(period);
                let y = if u <= len { u } else { period - u };
                (self.min + y).clamp(self.min, self.max)
            }
        }
    }

    /// Cell index containing `x`, clamped into range; the flag reports
    /// whether clamping was necessary.
    pub fn cell_of(&self, x: f64) -> (usize, bool) {
        let u = ((x - self.min) / self.spacing()).floor();
        if u < 0.0 {
            (0, true)
        } else if u >= self.points as f64 {
            // x == max is inside the closed box and belongs to the last cell
            (self.points - 1, x > self.max)
        } else {
            (u as usize, false)
        }
    }

    /// Interpolation bracket `(i0, i1, frac)` for an already folded `x`.
    fn bracket(&self, x: f64) -> (usize, usize, f64) {
        let n = self.points;
        let dx = self.spacing();
        let u = (x - self.coord(0)) / dx;
        let (mut i0, mut i1, mut f) = match self.boundary {
            Boundary::Periodic => {
                let fl = u.floor();
                let i0 = (fl as i64).rem_euclid(n as i64) as usize;
                (i0, (i0 + 1) % n, u - fl)
            }
            Boundary::Reflecting => {
                if u <= 0.0 {
                    (0, 0, 0.0)
                } else if u >= (n - 1) as f64 {
                    (n - 1, n - 1, 0.0)
                } else {
                    let fl = u.floor();
                    let i0 = fl as usize;
                    (i0, i0 + 1, u - fl)
                }
            }
        };
        // Snap queries that sit on a node so stored values come back exactly.
        const SNAP: f64 = 1e-12;
        if f < SNAP {
            f = 0.0;
        } else if f > 1.0 - SNAP {
            i0 = i1;
            f = 0.0;
        }
        if f == 0.0 {
            i1 = i0;
        }
        (i0, i1, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > MAX_DIMS {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1..={MAX_DIMS}, got {}",
                axes.len()
            )));
        }
        let mut total: usize = 1;
        for (k, a) in axes.iter().enumerate() {
            if !(a.min.is_finite() && a.max.is_finite()) || a.max <= a.min {
                return Err(Error::InvalidGrid(format!(
                    "axis {k}: extent [{}, {}] must be finite with max > min",
                    a.min, a.max
                )));
            }
            if a.points < MIN_POINTS {
                return Err(Error::InvalidGrid(format!(
                    "axis {k}: need at least {MIN_POINTS} points, got {}",
                    a.points
                )));
            }
            if !(a.spacing() > 0.0) {
                return Err(Error::InvalidGrid(format!("axis {k}: spacing underflows")));
            }
            total = total
                .checked_mul(a.points)
                .filter(|&t| t <= MAX_TOTAL_POINTS)
                .ok_or_else(|| {
                    Error::InvalidGrid(format!(
                        "total point count exceeds the addressable limit of {MAX_TOTAL_POINTS}"
                    ))
                })?;
        }
        Ok(Self { axes })
    }

    pub fn line(min: f64, max: f64, points: usize, boundary: Boundary) -> Result<Self> {
        Self::new(vec![Axis::new(min, max, points, boundary)])
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    pub fn volume(&self) -> f64 {
        self.axes.iter().map(Axis::length).product()
    }

    pub fn is_periodic(&self) -> bool {
        self.axes.iter().all(|a| a.boundary == Boundary::Periodic)
    }

    /// Flat-index stride of axis `k`.
    pub fn stride(&self, k: usize) -> usize {
        self.axes[k + 1..].iter().map(|a| a.points).product()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.points + i)
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; MAX_DIMS] {
        let mut idx = [0; MAX_DIMS];
        for k in (0..self.dims()).rev() {
            let n = self.axes[k].points;
            idx[k] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn node(&self, flat: usize) -> Point {
        let idx = self.multi_index(flat);
        let mut p = [0.0; MAX_DIMS];
        for (k, a) in self.axes.iter().enumerate() {
            p[k] = a.coord(idx[k]);
        }
        p
    }

    pub fn nodes(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.axes
            .iter()
            .enumerate()
            .all(|(k, a)| x[k] >= a.min && x[k] <= a.max)
    }

    /// Applies each axis' boundary rule in place.
    pub fn fold_point(&self, x: &mut Point) {
        for (k, a) in self.axes.iter().enumerate() {
            x[k] = a.fold(x[k]);
        }
    }

    /// Flat cell index containing `x`, plus whether any coordinate had to be
    /// clamped into the box.
    pub fn cell_of(&self, x: &Point) -> (usize, bool) {
        let mut flat = 0;
        let mut clamped = false;
        for (k, a) in self.axes.iter().enumerate() {
            let (i, c) = a.cell_of(x[k]);
            clamped |= c;
            flat = flat * a.points + i;
        }
        (flat, clamped)
    }

    /// Same extents and boundaries with `factor` times fewer points per axis.
    pub fn coarsen(&self, factor: usize) -> Result<Grid> {
        if factor == 0 {
            return Err(Error::InvalidArgument("coarsening factor must be >= 1".into()));
        }
        let axes = self
            .axes
            .iter()
            .enumerate()
            .map(|(k, a)| {
                if a.points % factor != 0 {
                    return Err(Error::InvalidGrid(format!(
                        "axis {k}: {} points not divisible by {factor}",
                        a.points
                    )));
                }
                Ok(Axis {
                    points: a.points / factor,
                    ..*a
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Grid::new(axes)
    }

    pub(crate) fn ensure_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{what}: grids differ")));
        }
        Ok(())
    }

    /// Multilinear interpolation weights for `x` (folded first).
    pub(crate) fn stencil(&self, x: &Point) -> Stencil {
        let dims = self.dims();
        let mut brackets = [(0usize, 0usize, 0.0f64); MAX_DIMS];
        for (k, a) in self.axes.iter().enumerate() {
            brackets[k] = a.bracket(a.fold(x[k]));
        }
        let mut st = Stencil {
            idx: [0; 8],
            weight: [0.0; 8],
            len: 1 << dims,
        };
        for c in 0..st.len {
            let mut flat = 0;
            let mut w = 1.0;
            for (k, &(i0, i1, f)) in brackets.iter().enumerate().take(dims) {
                let upper = (c >> (dims - 1 - k)) & 1 == 1;
                let i = if upper { i1 } else { i0 };
                flat = flat * self.axes[k].points + i;
                w *= if upper { f } else { 1.0 - f };
            }
            st.idx[c] = flat;
            st.weight[c] = w;
        }
        st
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    idx: [usize; 8],
    weight: [f64; 8],
    len: usize,
}

impl Stencil {
    pub(crate) fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx[..self.len]
            .iter()
            .copied()
            .zip(self.weight[..self.len].iter().copied())
    }
}

fn check_len(grid: &Grid, len: usize, per_point: usize) -> Result<()> {
    if len != grid.len() * per_point {
        return Err(Error::InvalidField(format!(
            "expected {} values, got {len}",
            grid.len() * per_point
        )));
    }
    Ok(())
}

/// Complex Ψ values on a grid at simulation time `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    grid: Grid,
    values: Vec<Complex64>,
    time: f64,
}

impl WaveField {
    pub fn new(grid: Grid, values: Vec<Complex64>, time: f64) -> Result<Self> {
        check_len(&grid, values.len(), 1)?;
        let field = Self { grid, values, time };
        field.check()?;
        Ok(field)
    }

    pub fn from_fn(grid: Grid, time: f64, f: impl Fn(&Point) -> Complex64) -> Result<Self> {
        let values = grid.nodes().map(|p| f(&p)).collect();
        Self::new(grid, values, time)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::InvalidField(format!("non-finite Ψ value at node {i}")));
        }
        if !(self.norm_squared() > 0.0) {
            return Err(Error::InvalidField("Ψ has zero squared norm".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub(crate) fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    /// ∫|Ψ|² over the box.
    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    /// Pointwise |Ψ|², unnormalised.
    pub fn density(&self) -> DensityField {
        DensityField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.norm_sqr()).collect(),
            time: self.time,
        }
    }

    pub fn scaled(&self, c: Complex64) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.values.iter().map(|v| v * c).collect(),
            self.time,
        )
    }

    pub fn normalized(&self) -> Self {
        let s = 1.0 / self.norm_squared().sqrt();
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
            time: self.time,
        }
    }

    /// ⟨x_k⟩ under |Ψ|².
    pub fn mean_position(&self, k: usize) -> f64 {
        self.density().mean(k)
    }
}

/// Real, signed values on a grid (potentials, log-densities).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    time: f64,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>, time: f64) -> Result<Self> {
        check_len(&grid, values.len(), 1)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite scalar value".into()));
        }
        Ok(Self { grid, values, time })
    }

    pub fn from_fn(grid: Grid, time: f64, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let values = grid.nodes().map(|p| f(&p)).collect();
        Self::new(grid, values, time)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn interpolate(&self, x: &Point) -> f64 {
        self.grid
            .stencil(x)
            .iter()
            .map(|(i, w)| w * self.values[i])
            .sum()
    }
}

/// Nonnegative values on a grid: p(X,t), |Ψ|², or an empirical histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Grid,
    values: Vec<f64>,
    time: f64,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>, time: f64) -> Result<Self> {
        check_len(&grid, values.len(), 1)?;
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidField(format!(
                "density must be finite and nonnegative; node {i} holds {}",
                values[i]
            )));
        }
        Ok(Self { grid, values, time })
    }

    pub fn from_fn(grid: Grid, time: f64, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let values = grid.nodes().map(|p| f(&p)).collect();
        Self::new(grid, values, time)
    }

    pub fn zeros(grid: Grid, time: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![0.0; n],
            time,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = t;
        self
    }

    pub fn integral(&self) -> f64 {
        integrate(self)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Rescaled copy integrating to one.
    pub fn normalized(&self) -> Result<Self> {
        let z = self.integral();
        if !(z > 0.0) {
            return Err(Error::InvalidField("cannot normalise a density with zero mass".into()));
        }
        Ok(Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v / z).collect(),
            time: self.time,
        })
    }

    pub fn mean(&self, k: usize) -> f64 {
        let z: f64 = self.values.iter().sum();
        self.grid
            .nodes()
            .zip(&self.values)
            .map(|(p, v)| p[k] * v)
            .sum::<f64>()
            / z
    }

    pub fn variance(&self, k: usize) -> f64 {
        let m = self.mean(k);
        let z: f64 = self.values.iter().sum();
        self.grid
            .nodes()
            .zip(&self.values)
            .map(|(p, v)| (p[k] - m).powi(2) * v)
            .sum::<f64>()
            / z
    }

    /// Cell-averaged density on a grid `factor` times coarser per axis; the
    /// mass in each coarse cell equals the summed mass of its fine cells.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let coarse = self.grid.coarsen(factor)?;
        let mut values = vec![0.0; coarse.len()];
        let dims = self.grid.dims();
        for (flat, v) in self.values.iter().enumerate() {
            let idx = self.grid.multi_index(flat);
            let mut c = [0usize; MAX_DIMS];
            for k in 0..dims {
                c[k] = idx[k] / factor;
            }
            values[coarse.flat_index(&c[..dims])] += v;
        }
        let scale = 1.0 / (factor as f64).powi(dims as i32);
        values.iter_mut().for_each(|v| *v *= scale);
        Self::new(coarse, values, self.time)
    }

    pub fn interpolate(&self, x: &Point) -> f64 {
        self.grid
            .stencil(x)
            .iter()
            .map(|(i, w)| w * self.values[i])
            .sum()
    }
}

/// `dims` components per grid node, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    values: Vec<f64>,
    time: f64,
}

impl VectorField {
    pub fn new(grid: Grid, values: Vec<f64>, time: f64) -> Result<Self> {
        check_len(&grid, values.len(), grid.dims())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite vector component".into()));
        }
        Ok(Self { grid, values, time })
    }

    pub fn zeros(grid: Grid, time: f64) -> Self {
        let n = grid.len() * grid.dims();
        Self {
            grid,
            values: vec![0.0; n],
            time,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Interleaved components, `dims` per node.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn at(&self, flat: usize) -> Point {
        let d = self.grid.dims();
        point(&self.values[flat * d..(flat + 1) * d])
    }

    /// Largest Euclidean magnitude over all nodes.
    pub fn max_magnitude(&self) -> f64 {
        let d = self.grid.dims();
        self.values
            .chunks_exact(d)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn interpolate(&self, x: &Point) -> Point {
        let d = self.grid.dims();
        let mut out = [0.0; MAX_DIMS];
        for (i, w) in self.grid.stencil(x).iter() {
            for k in 0..d {
                out[k] += w * self.values[i * d + k];
            }
        }
        out
    }
}

/// Midpoint quadrature of the field over the box (exact for constants).
pub fn integrate(field: &DensityField) -> f64 {
    field.values.iter().sum::<f64>() * field.grid.cell_volume()
}

/// Central-difference gradient of `ln(values + epsilon)`.
///
/// Periodic axes wrap; reflecting axes use the second-order one-sided
/// stencil on the first and last node.
pub fn gradient_log(field: &DensityField, epsilon: f64) -> Result<VectorField> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    let log: Vec<f64> = field.values.iter().map(|v| (v + epsilon).ln()).collect();
    Ok(gradient_of(&field.grid, &log, field.time))
}

/// Gradient of arbitrary nodal values with the same stencils as [`gradient_log`].
pub(crate) fn gradient_of(grid: &Grid, f: &[f64], time: f64) -> VectorField {
    let d = grid.dims();
    let mut out = VectorField::zeros(grid.clone(), time);
    let vals = out.values_mut();
    for flat in 0..grid.len() {
        let idx = grid.multi_index(flat);
        for k in 0..d {
            let a = grid.axis(k);
            let n = a.points;
            let s = grid.stride(k);
            let i = idx[k];
            let base = flat - i * s;
            let at = |j: usize| f[base + j * s];
            let h = a.spacing();
            let g = match a.boundary {
                Boundary::Periodic => (at((i + 1) % n) - at((i + n - 1) % n)) / (2.0 * h),
                Boundary::Reflecting => {
                    if i == 0 {
                        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
                    } else if i == n - 1 {
                        (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h)
                    } else {
                        (at(i + 1) - at(i - 1)) / (2.0 * h)
                    }
                }
            };
            vals[flat * d + k] = g;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_line(points: usize, boundary: Boundary) -> Grid {
        Grid::line(0.0, 1.0, points, boundary).unwrap()
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(Grid::line(0.0, 1.0, 7, Boundary::Periodic).is_err());
        assert!(Grid::line(1.0, 1.0, 16, Boundary::Periodic).is_err());
        assert!(Grid::new(vec![]).is_err());
        let a = Axis::new(0.0, 1.0, 8, Boundary::Periodic);
        assert!(Grid::new(vec![a; 4]).is_err());
        let huge = Axis::new(0.0, 1.0, 1 << 20, Boundary::Periodic);
        assert!(Grid::new(vec![huge; 2]).is_err());
    }

    #[test]
    fn integrate_constant_is_exact() {
        let g = unit_line(100, Boundary::Reflecting);
        let f = DensityField::from_fn(g, 0.0, |_| 1.0).unwrap();
        assert!((integrate(&f) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn integrate_gaussian() {
        let g = Grid::line(-10.0, 10.0, 512, Boundary::Periodic).unwrap();
        let f = DensityField::from_fn(g, 0.0, |p| (-p[0] * p[0] / 2.0).exp().powi(2)).unwrap();
        assert!((integrate(&f) - std::f64::consts::PI.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn integrate_zero_field() {
        let f = DensityField::zeros(unit_line(32, Boundary::Periodic), 0.0);
        assert_eq!(integrate(&f), 0.0);
    }

    #[test]
    fn normalize_on_demand() {
        let g = Grid::line(-3.0, 5.0, 77, Boundary::Reflecting).unwrap();
        let f = DensityField::from_fn(g, 0.0, |p| 3.0 + p[0].sin()).unwrap();
        assert!((f.normalized().unwrap().integral() - 1.0).abs() < 1e-12);
        assert!(DensityField::zeros(unit_line(8, Boundary::Periodic), 0.0)
            .normalized()
            .is_err());
    }

    #[test]
    fn density_rejects_negative_values() {
        let g = unit_line(8, Boundary::Periodic);
        assert!(DensityField::new(g.clone(), vec![-1.0; 8], 0.0).is_err());
        assert!(DensityField::new(g, vec![f64::NAN; 8], 0.0).is_err());
    }

    fn gaussian_density() -> DensityField {
        let g = Grid::line(-8.0, 8.0, 320, Boundary::Periodic).unwrap();
        DensityField::from_fn(g, 0.0, |p| (-p[0] * p[0]).exp()).unwrap()
    }

    #[test]
    fn gradient_log_of_gaussian() {
        let f = gaussian_density();
        let g = gradient_log(&f, 1e-12).unwrap();
        assert!(g.interpolate(&point(&[0.0]))[0].abs() < 1e-10);
        assert!((g.interpolate(&point(&[0.5]))[0] + 1.0).abs() < 2e-3);
    }

    #[test]
    fn gradient_log_of_zero_field_vanishes() {
        let f = DensityField::zeros(unit_line(16, Boundary::Reflecting), 0.0);
        let g = gradient_log(&f, 1e-12).unwrap();
        assert!(g.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_log_rejects_nonpositive_epsilon() {
        let f = gaussian_density();
        assert!(gradient_log(&f, 0.0).is_err());
        assert!(gradient_log(&f, -1.0).is_err());
    }

    fn max_gradient_error(points: usize) -> f64 {
        // ln(2 + sin x) on a reflecting box exercises both one-sided stencils
        let g = Grid::line(0.0, 3.0, points, Boundary::Reflecting).unwrap();
        let f = DensityField::from_fn(g.clone(), 0.0, |p| 2.0 + p[0].sin()).unwrap();
        let grad = gradient_log(&f, 1e-300).unwrap();
        g.nodes()
            .enumerate()
            .map(|(i, p)| (grad.at(i)[0] - p[0].cos() / (2.0 + p[0].sin())).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradient_converges_at_second_order() {
        let e = [64, 128, 256].map(max_gradient_error);
        for w in e.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 1.8 && order < 2.3, "order {order}, errors {e:?}");
        }
    }

    #[test]
    fn interpolation_is_exact_for_linear_fields() {
        let g = unit_line(100, Boundary::Reflecting);
        let f = ScalarField::from_fn(g, 0.0, |p| 3.0 * p[0]).unwrap();
        assert!((f.interpolate(&point(&[0.37])) - 1.11).abs() < 1e-12);
    }

    #[test]
    fn interpolation_on_nodes_is_bit_exact() {
        let g = Grid::new(vec![
            Axis::new(-1.3, 2.9, 17, Boundary::Periodic),
            Axis::new(0.0, 1.0, 9, Boundary::Reflecting),
        ])
        .unwrap();
        let f = DensityField::from_fn(g.clone(), 0.0, |p| (p[0] * 1.7).cos() + 2.0 + p[1]).unwrap();
        for (i, p) in g.nodes().enumerate() {
            assert_eq!(f.interpolate(&p), f.values()[i]);
        }
    }

    #[test]
    fn periodic_query_wraps() {
        let g = unit_line(20, Boundary::Periodic);
        let f = ScalarField::from_fn(g.clone(), 0.0, |p| (2.0 * std::f64::consts::PI * p[0]).sin()).unwrap();
        let dx = g.axis(0).spacing();
        let a = f.interpolate(&point(&[1.0 + 0.1 * dx]));
        let b = f.interpolate(&point(&[0.1 * dx]));
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn reflecting_query_folds_back() {
        let g = unit_line(10, Boundary::Reflecting);
        let f = ScalarField::from_fn(g, 0.0, |p| p[0]).unwrap();
        let outside = f.interpolate(&point(&[1.2]));
        let mirror = f.interpolate(&point(&[0.8]));
        assert!((outside - mirror).abs() < 1e-12);
    }

    #[test]
    fn symmetric_grid_nodes_mirror_exactly() {
        let a = Axis::new(-7.5, 7.5, 300, Boundary::Periodic);
        for i in 0..300 {
            assert_eq!(a.coord(i), -a.coord(299 - i));
        }
    }

    #[test]
    fn coarsen_preserves_mass() {
        let g = Grid::new(vec![
            Axis::new(-2.0, 2.0, 32, Boundary::Reflecting),
            Axis::new(-1.0, 3.0, 48, Boundary::Periodic),
        ])
        .unwrap();
        let f = DensityField::from_fn(g, 0.0, |p| (-p[0] * p[0] - p[1]).exp()).unwrap();
        let c = f.coarsen(4).unwrap();
        assert_eq!(c.grid().axis(1).points, 12);
        assert!((c.integral() - f.integral()).abs() < 1e-12 * f.integral());
        assert!(f.coarsen(5).is_err());
    }

    #[test]
    fn cell_of_flags_outside_points() {
        let a = Axis::new(0.0, 1.0, 10, Boundary::Reflecting);
        assert_eq!(a.cell_of(0.05), (0, false));
        assert_eq!(a.cell_of(1.0), (9, false));
        assert_eq!(a.cell_of(1.5), (9, true));
        assert_eq!(a.cell_of(-0.1), (0, true));
    }
}
