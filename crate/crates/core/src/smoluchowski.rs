//! Finite-volume solver for the Smoluchowski equation
//!
//! ```text
//! ∂p/∂t = λ ∇·[∇V p + ∇p],   V = -ln(|Ψ|² + ε)
//! ```
//!
//! The default Chang–Cooper (Scharfetter–Gummel) face flux
//! `J = (λ/dx)[B(ΔV) p_i − B(−ΔV) p_{i+1}]`, `B(w) = w/(eʷ − 1)`, vanishes
//! exactly on `p ∝ e^{-V}`, so the discrete equilibrium is the regularised
//! |Ψ|² itself. Walls carry zero flux; periodic axes close the ring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Boundary, DensityField, Grid, WaveField};
use crate::guidance::{GuidanceParams, TemporalInterpolation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxScheme {
    #[default]
    ChangCooper,
    /// Centred drift weighting; not positivity preserving for large ΔV.
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepping {
    #[default]
    Explicit,
    /// Backward Euler, split by dimension in axis order.
    Implicit,
}

/// Bernoulli function `w / (eʷ − 1)`.
fn bernoulli(w: f64) -> f64 {
    if w == 0.0 {
        1.0
    } else {
        w / w.exp_m1()
    }
}

/// Discretised Smoluchowski operator on a fixed potential.
#[derive(Debug, Clone)]
pub struct FpOperator {
    grid: Grid,
    lambda: f64,
    scheme: FluxScheme,
    stepping: Stepping,
    potential: Vec<f64>,
    /// Per axis, per cell: rate carrying p_i forward across the +face.
    forward: Vec<Vec<f64>>,
    /// Per axis, per cell: rate carrying p_{i+1} back across the +face.
    backward: Vec<Vec<f64>>,
}

impl FpOperator {
    /// Operator for an explicit potential `V` sampled at the nodes.
    pub fn from_potential(grid: Grid, potential: Vec<f64>, lambda: f64, scheme: FluxScheme) -> Result<Self> {
        if potential.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "potential has {} values for {} nodes",
                potential.len(),
                grid.len()
            )));
        }
        if potential.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite potential".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
        }
        let mut op = Self {
            grid,
            lambda,
            scheme,
            stepping: Stepping::default(),
            potential,
            forward: Vec::new(),
            backward: Vec::new(),
        };
        op.build_rates();
        Ok(op)
    }

    /// `V = -ln(|Ψ|² + ε)` with ε resolved from `params`.
    pub fn from_wave(psi: &WaveField, params: &GuidanceParams, scheme: FluxScheme) -> Result<Self> {
        params.validate()?;
        let rho = psi.density();
        let eps = params.epsilon.resolve(rho.max());
        Self::from_density(&rho, params.lambda, eps, scheme)
    }

    /// `V = -ln(ρ + ε)`.
    pub fn from_density(rho: &DensityField, lambda: f64, epsilon: f64, scheme: FluxScheme) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        let v = rho.values().iter().map(|r| -(r + epsilon).ln()).collect();
        Self::from_potential(rho.grid().clone(), v, lambda, scheme)
    }

    /// Pure diffusion.
    pub fn free(grid: Grid, lambda: f64) -> Result<Self> {
        let n = grid.len();
        Self::from_potential(grid, vec![0.0; n], lambda, FluxScheme::ChangCooper)
    }

    pub fn with_stepping(mut self, stepping: Stepping) -> Self {
        self.stepping = stepping;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn scheme(&self) -> FluxScheme {
        self.scheme
    }

    pub fn stepping(&self) -> Stepping {
        self.stepping
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    /// Neighbour of `flat` one cell up along `axis`, if a face exists.
    fn up(&self, flat: usize, axis: usize) -> Option<usize> {
        let ax = self.grid.axis(axis);
        let stride = self.grid.stride(axis);
        let i = (flat / stride) % ax.points;
        if i + 1 < ax.points {
            Some(flat + stride)
        } else if ax.boundary == Boundary::Periodic {
            Some(flat + stride - ax.points * stride)
        } else {
            None
        }
    }

    fn build_rates(&mut self) {
        let dims = self.grid.dims();
        let n = self.grid.len();
        self.forward = vec![vec![0.0; n]; dims];
        self.backward = vec![vec![0.0; n]; dims];
        for k in 0..dims {
            let dx = self.grid.axis(k).spacing();
            let c = self.lambda / (dx * dx);
            for i in 0..n {
                let Some(j) = self.up(i, k) else { continue };
                let dv = self.potential[j] - self.potential[i];
                let (f, g) = match self.scheme {
                    FluxScheme::ChangCooper => (bernoulli(dv), bernoulli(-dv)),
                    FluxScheme::Central => (1.0 - 0.5 * dv, 1.0 + 0.5 * dv),
                };
                self.forward[k][i] = c * f;
                self.backward[k][i] = c * g;
            }
        }
    }

    /// Total outflow rate of every cell.
    fn outflow(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        self.for_each_face(|i, j, f, g| {
            out[i] += f;
            out[j] += g;
        });
        out
    }

    /// Largest explicit step that keeps every update a convex combination.
    pub fn stable_dt(&self) -> f64 {
        let m = self.outflow().into_iter().fold(0.0, f64::max);
        if m > 0.0 {
            1.0 / m
        } else {
            f64::INFINITY
        }
    }

    /// Normalised discrete equilibrium `e^{-V} / Z`.
    pub fn equilibrium(&self) -> Result<DensityField> {
        let vmin = self.potential.iter().copied().fold(f64::INFINITY, f64::min);
        let v = self.potential.iter().map(|v| (vmin - v).exp()).collect();
        DensityField::new(self.grid.clone(), v, 0.0)?.normalized()
    }

    /// Calls `f(i, j, F, G)` for every face between cell `i` and its upper
    /// neighbour `j`.
    fn for_each_face(&self, mut f: impl FnMut(usize, usize, f64, f64)) {
        for k in 0..self.grid.dims() {
            for i in 0..self.grid.len() {
                if let Some(j) = self.up(i, k) {
                    f(i, j, self.forward[k][i], self.backward[k][i]);
                }
            }
        }
    }

    /// Largest face flux magnitude for `p`; zero at equilibrium.
    pub fn flux_residual(&self, p: &DensityField) -> Result<f64> {
        self.grid.ensure_same(p.grid(), "flux residual")?;
        let v = p.values();
        let mut worst: f64 = 0.0;
        for k in 0..self.grid.dims() {
            let dx = self.grid.axis(k).spacing();
            for i in 0..self.grid.len() {
                if let Some(j) = self.up(i, k) {
                    let flux = (self.forward[k][i] * v[i] - self.backward[k][i] * v[j]) * dx;
                    worst = worst.max(flux.abs());
                }
            }
        }
        Ok(worst)
    }

    /// `L p`, the right-hand side.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; p.len()];
        self.for_each_face(|i, j, f, g| {
            let flux = f * p[i] - g * p[j];
            out[i] -= flux;
            out[j] += flux;
        });
        out
    }

    fn explicit(&self, p: &[f64], dt: f64) -> Vec<f64> {
        let mut out = p.to_vec();
        self.for_each_face(|i, j, f, g| {
            let flux = dt * (f * p[i] - g * p[j]);
            out[i] -= flux;
            out[j] += flux;
        });
        out
    }

    fn implicit(&self, p: &[f64], dt: f64) -> Vec<f64> {
        let mut cur = p.to_vec();
        let dims = self.grid.dims();
        for k in 0..dims {
            let ax = self.grid.axis(k);
            let m = ax.points;
            let stride = self.grid.stride(k);
            let periodic = ax.boundary == Boundary::Periodic;
            let (fw, bw) = (&self.forward[k], &self.backward[k]);
            let mut lower = vec![0.0; m];
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for start in 0..self.grid.len() {
                if (start / stride) % m != 0 {
                    continue;
                }
                let idx = |i: usize| start + i * stride;
                for i in 0..m {
                    // face below cell i connects (i-1, i); for i == 0 it exists only when periodic
                    let below = if i > 0 {
                        Some(idx(i - 1))
                    } else if periodic {
                        Some(idx(m - 1))
                    } else {
                        None
                    };
                    let (f_below, g_below) = below.map_or((0.0, 0.0), |b| (fw[b], bw[b]));
                    diag[i] = 1.0 + dt * (fw[idx(i)] + g_below);
                    upper[i] = -dt * bw[idx(i)];
                    lower[i] = -dt * f_below;
                    rhs[i] = cur[idx(i)];
                }
                let x = if periodic {
                    solve_cyclic(&lower, &diag, &upper, &rhs)
                } else {
                    solve_tridiagonal(&lower, &diag, &upper, &rhs)
                };
                for (i, v) in x.into_iter().enumerate() {
                    cur[idx(i)] = v.max(0.0);
                }
            }
        }
        cur
    }
}

/// Thomas algorithm; `lower[0]` and `upper[n-1]` are ignored.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Cyclic tridiagonal solve by Sherman–Morrison; `lower[0]` couples to the
/// last unknown and `upper[n-1]` to the first.
fn solve_cyclic(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let alpha = upper[n - 1];
    let beta = lower[0];
    let gamma = -diag[0];
    let mut b = diag.to_vec();
    b[0] -= gamma;
    b[n - 1] -= alpha * beta / gamma;
    let x = solve_tridiagonal(lower, &b, upper, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(lower, &b, upper, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

/// Advances `p` by `dt` with the operator's stepping mode.
pub fn fp_step(p: &DensityField, op: &FpOperator, dt: f64) -> Result<DensityField> {
    op.grid.ensure_same(p.grid(), "Smoluchowski step")?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {dt}")));
    }
    let next = match op.stepping {
        Stepping::Explicit => {
            let limit = op.stable_dt();
            if dt > limit * (1.0 + 1e-12) {
                return Err(Error::Unstable {
                    dt,
                    suggested_dt: 0.9 * limit,
                });
            }
            op.explicit(p.values(), dt)
        }
        Stepping::Implicit => op.implicit(p.values(), dt),
    };
    // explicit steps inside the bound are convex; clip the round-off
    let next = next.into_iter().map(|v| v.max(0.0)).collect();
    DensityField::new(p.grid().clone(), next, p.time() + dt)
}

/// How `fp_evolve` discretises the equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpOptions {
    pub dt: f64,
    #[serde(default)]
    pub scheme: FluxScheme,
    #[serde(default)]
    pub stepping: Stepping,
    /// Potential between Ψ snapshots.
    #[serde(default)]
    pub interpolation: TemporalInterpolation,
}

impl FpOptions {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            scheme: FluxScheme::default(),
            stepping: Stepping::default(),
            interpolation: TemporalInterpolation::default(),
        }
    }

    pub fn with_stepping(mut self, stepping: Stepping) -> Self {
        self.stepping = stepping;
        self
    }

    pub fn with_interpolation(mut self, mode: TemporalInterpolation) -> Self {
        self.interpolation = mode;
        self
    }
}

/// Evolves `p0` (starting at `p0.time()`) under the potential of a Ψ
/// sequence and returns the density at each of `output_times`.
///
/// A single snapshot is treated as static for all times. With several, the
/// run must stay inside the snapshot interval; the potential follows
/// `opts.interpolation` and is evaluated at the start of each step.
pub fn fp_evolve(
    p0: &DensityField,
    snapshots: &[WaveField],
    params: &GuidanceParams,
    opts: &FpOptions,
    output_times: &[f64],
) -> Result<Vec<DensityField>> {
    if snapshots.is_empty() {
        return Err(Error::InvalidArgument("Smoluchowski run needs a Ψ snapshot".into()));
    }
    if !(opts.dt > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {}", opts.dt)));
    }
    params.validate()?;
    for s in snapshots {
        p0.grid().ensure_same(s.grid(), "Smoluchowski snapshot")?;
    }
    let t0 = p0.time();
    if output_times.windows(2).any(|w| w[1] < w[0]) || output_times.first().is_some_and(|&t| t < t0) {
        return Err(Error::InvalidArgument("output times must be ascending and not before p0".into()));
    }
    let potentials: Vec<Vec<f64>> = snapshots
        .iter()
        .map(|psi| {
            let rho = psi.density();
            let eps = params.epsilon.resolve(rho.max());
            rho.values().iter().map(|r| -(r + eps).ln()).collect()
        })
        .collect();
    let times: Vec<f64> = snapshots.iter().map(WaveField::time).collect();
    if times.len() > 1 {
        let (a, b) = (times[0], *times.last().expect("non-empty"));
        let tol = 1e-9 * a.abs().max(b.abs()).max(1.0);
        let end = output_times.last().copied().unwrap_or(t0);
        if t0 < a - tol || end > b + tol {
            return Err(Error::OutOfBracket { t: end, start: a, end: b });
        }
    }

    let grid = p0.grid().clone();
    let build = |v: Vec<f64>| -> Result<FpOperator> {
        Ok(FpOperator::from_potential(grid.clone(), v, params.lambda, opts.scheme)?.with_stepping(opts.stepping))
    };
    let static_op = if times.len() == 1 { Some(build(potentials[0].clone())?) } else { None };
    // operator of the snapshot in force, reused while piecewise constant
    let mut held: Option<(usize, FpOperator)> = None;

    let mut p = p0.clone();
    let mut out = Vec::with_capacity(output_times.len());
    for &target in output_times {
        let span = target - p.time();
        let steps = if span > 0.0 { ((span / opts.dt) - 1e-9).ceil().max(1.0) as usize } else { 0 };
        let start = p.time();
        for s in 1..=steps {
            let t_next = if s == steps { target } else { start + s as f64 * opts.dt };
            let t = p.time();
            let h = t_next - t;
            p = match &static_op {
                Some(op) => fp_step(&p, op, h)?,
                None => {
                    let j = times.partition_point(|&s| s <= t).saturating_sub(1).min(times.len() - 2);
                    let w = ((t - times[j]) / (times[j + 1] - times[j])).clamp(0.0, 1.0);
                    if opts.interpolation == TemporalInterpolation::Linear && w > 0.0 && w < 1.0 {
                        let v = potentials[j]
                            .iter()
                            .zip(&potentials[j + 1])
                            .map(|(a, b)| a + w * (b - a))
                            .collect();
                        fp_step(&p, &build(v)?, h)?
                    } else {
                        let jj = if w >= 1.0 { j + 1 } else { j };
                        if held.as_ref().map(|(k, _)| *k) != Some(jj) {
                            held = Some((jj, build(potentials[jj].clone())?));
                        }
                        fp_step(&p, &held.as_ref().expect("just set").1, h)?
                    }
                }
            };
            p = p.with_time(t_next);
        }
        out.push(p.clone());
    }
    Ok(out)
}
