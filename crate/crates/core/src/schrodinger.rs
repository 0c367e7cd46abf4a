//! Ψ-field evolution under `iħ ∂Ψ/∂t = [-(ħ²/2m)∇² + U(X)] Ψ` with a
//! Strang split-step Fourier propagator, plus the analytic and numerically
//! diagonalised initial states used by the scenarios.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid, Point, ScalarField, WaveField, MAX_DIMS};

/// Largest grid the dense eigensolver will accept.
pub const MAX_DENSE_POINTS: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    pub hbar: f64,
    /// One mass per dimension.
    pub mass: Vec<f64>,
    potential: Option<ScalarField>,
}

impl HamiltonianSpec {
    /// ħ = m = 1, U = 0.
    pub fn free(dims: usize) -> Self {
        Self {
            hbar: 1.0,
            mass: vec![1.0; dims],
            potential: None,
        }
    }

    /// Separable oscillator `U = Σ_k ½ m_k ω_k² x_k²` with unit masses.
    pub fn harmonic(grid: &Grid, omega: &[f64]) -> Result<Self> {
        if omega.len() != grid.dims() {
            return Err(Error::InvalidArgument(format!(
                "need {} frequencies, got {}",
                grid.dims(),
                omega.len()
            )));
        }
        let u = ScalarField::from_fn(grid.clone(), 0.0, |p| {
            omega.iter().enumerate().map(|(k, w)| 0.5 * w * w * p[k] * p[k]).sum()
        })?;
        Self::free(grid.dims()).with_potential(u)
    }

    pub fn with_potential(mut self, u: ScalarField) -> Result<Self> {
        if u.grid().dims() != self.mass.len() {
            return Err(Error::GridMismatch("potential dimension differs from mass vector".into()));
        }
        self.potential = Some(u);
        Ok(self)
    }

    pub fn with_hbar(mut self, hbar: f64) -> Self {
        self.hbar = hbar;
        self
    }

    pub fn with_mass(mut self, mass: Vec<f64>) -> Self {
        self.mass = mass;
        self
    }

    pub fn potential(&self) -> Option<&ScalarField> {
        self.potential.as_ref()
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return Err(Error::InvalidArgument(format!("hbar must be positive, got {}", self.hbar)));
        }
        if self.mass.len() != grid.dims() {
            return Err(Error::InvalidArgument(format!(
                "need one mass per dimension ({}), got {}",
                grid.dims(),
                self.mass.len()
            )));
        }
        if let Some(m) = self.mass.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidArgument(format!("masses must be positive, got {m}")));
        }
        if let Some(u) = &self.potential {
            grid.ensure_same(u.grid(), "external potential")?;
        }
        Ok(())
    }

    fn potential_values(&self, grid: &Grid) -> Vec<f64> {
        match &self.potential {
            Some(u) => u.values().to_vec(),
            None => vec![0.0; grid.len()],
        }
    }

    /// Kinetic energy ħ²k²/2m summed over axes at every Fourier mode.
    fn kinetic_diagonal(&self, grid: &Grid) -> Vec<f64> {
        let ks: Vec<Vec<f64>> = grid.axes().iter().map(|a| wavenumbers(a.points, a.length())).collect();
        (0..grid.len())
            .map(|flat| {
                let idx = grid.multi_index(flat);
                ks.iter()
                    .enumerate()
                    .map(|(k, kk)| self.hbar * self.hbar * kk[idx[k]].powi(2) / (2.0 * self.mass[k]))
                    .sum()
            })
            .collect()
    }
}

/// Angular wavenumbers in FFT order for `n` samples over length `len`.
fn wavenumbers(n: usize, len: f64) -> Vec<f64> {
    (0..n)
        .map(|m| {
            let s = if m < n.div_ceil(2) { m as f64 } else { m as f64 - n as f64 };
            2.0 * PI * s / len
        })
        .collect()
}

/// Separable N-d FFT over row-major data; the inverse is unnormalised.
struct NdFft {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    line: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl NdFft {
    fn new(grid: &Grid) -> Self {
        let mut planner = FftPlanner::new();
        let shape: Vec<usize> = grid.axes().iter().map(|a| a.points).collect();
        let forward: Vec<_> = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse: Vec<_> = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let scratch_len = forward
            .iter()
            .chain(&inverse)
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        let max_n = shape.iter().copied().max().unwrap_or(0);
        Self {
            shape,
            forward,
            inverse,
            line: vec![Complex64::default(); max_n],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    fn transform(&mut self, data: &mut [Complex64], inverse: bool) {
        let dims = self.shape.len();
        let total = data.len();
        for k in 0..dims {
            let n = self.shape[k];
            let stride: usize = self.shape[k + 1..].iter().product();
            let fft = if inverse { &self.inverse[k] } else { &self.forward[k] };
            if stride == 1 {
                fft.process_with_scratch(data, &mut self.scratch);
                continue;
            }
            let line = &mut self.line[..n];
            for block in 0..total / (n * stride) {
                for j in 0..stride {
                    let start = block * n * stride + j;
                    for (i, v) in line.iter_mut().enumerate() {
                        *v = data[start + i * stride];
                    }
                    fft.process_with_scratch(line, &mut self.scratch);
                    for (i, v) in line.iter().enumerate() {
                        data[start + i * stride] = *v;
                    }
                }
            }
        }
    }
}

/// Precomputed Strang step `e^{-iU dt/2ħ} F⁻¹ e^{-iK dt/ħ} F e^{-iU dt/2ħ}`.
pub struct SplitStepPropagator {
    grid: Grid,
    dt: f64,
    half_potential: Vec<Complex64>,
    /// Kinetic phase with the 1/N inverse-FFT normalisation folded in.
    kinetic: Vec<Complex64>,
    fft: NdFft,
}

impl SplitStepPropagator {
    pub fn new(grid: &Grid, h: &HamiltonianSpec, dt: f64) -> Result<Self> {
        if let Some(k) = grid.axes().iter().position(|a| a.boundary != Boundary::Periodic) {
            return Err(Error::UnsupportedPropagator(format!(
                "split-step Fourier needs periodic axes; axis {k} is reflecting"
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        h.validate(grid)?;
        let hbar = h.hbar;
        let half_potential = h
            .potential_values(grid)
            .into_iter()
            .map(|u| Complex64::from_polar(1.0, -u * dt / (2.0 * hbar)))
            .collect();
        let inv_n = 1.0 / grid.len() as f64;
        let kinetic = h
            .kinetic_diagonal(grid)
            .into_iter()
            .map(|e| Complex64::from_polar(inv_n, -e * dt / hbar))
            .collect();
        Ok(Self {
            grid: grid.clone(),
            dt,
            half_potential,
            kinetic,
            fft: NdFft::new(grid),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `psi` in place by one step (time included).
    pub fn step(&mut self, psi: &mut WaveField) -> Result<()> {
        self.grid.ensure_same(psi.grid(), "split-step propagation")?;
        self.apply(psi.values_mut());
        psi.set_time(psi.time() + self.dt);
        Ok(())
    }

    fn apply(&mut self, data: &mut [Complex64]) {
        for (v, p) in data.iter_mut().zip(&self.half_potential) {
            *v *= p;
        }
        self.fft.transform(data, false);
        for (v, k) in data.iter_mut().zip(&self.kinetic) {
            *v *= k;
        }
        self.fft.transform(data, true);
        for (v, p) in data.iter_mut().zip(&self.half_potential) {
            *v *= p;
        }
    }
}

/// One split-step of length `dt`.
pub fn step_splitstep(psi: &WaveField, h: &HamiltonianSpec, dt: f64) -> Result<WaveField> {
    let mut prop = SplitStepPropagator::new(psi.grid(), h, dt)?;
    let mut out = psi.clone();
    prop.step(&mut out)?;
    out.check()?;
    Ok(out)
}

/// Propagates `psi` from its own time to `t_final`, returning snapshots at
/// every `stride`-th step plus the initial and final states.
pub fn evolve(
    psi: &WaveField,
    h: &HamiltonianSpec,
    t_final: f64,
    dt: f64,
    stride: usize,
) -> Result<Vec<WaveField>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("snapshot stride must be >= 1".into()));
    }
    let t0 = psi.time();
    let span = t_final - t0;
    if span < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "t_final {t_final} precedes the initial time {t0}"
        )));
    }
    if span == 0.0 {
        return Ok(vec![psi.clone()]);
    }
    let steps = (span / dt).round();
    if !(dt > 0.0) || (steps * dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "dt={dt} does not divide the interval {span}"
        )));
    }
    let steps = steps as usize;
    let mut prop = SplitStepPropagator::new(psi.grid(), h, dt)?;
    let mut cur = psi.clone();
    let mut out = Vec::with_capacity(steps.div_ceil(stride) + 1);
    out.push(psi.clone());
    for s in 1..=steps {
        prop.apply(cur.values_mut());
        cur.set_time(if s == steps { t_final } else { t0 + s as f64 * dt });
        if s % stride == 0 || s == steps {
            cur.check()?;
            out.push(cur.clone());
        }
    }
    Ok(out)
}

/// ⟨ℋ⟩ / ⟨Ψ|Ψ⟩ with the kinetic part evaluated spectrally.
pub fn energy(psi: &WaveField, h: &HamiltonianSpec) -> Result<f64> {
    let grid = psi.grid();
    h.validate(grid)?;
    let mut fft = NdFft::new(grid);
    let mut spec = psi.values().to_vec();
    fft.transform(&mut spec, false);
    let kin = h.kinetic_diagonal(grid);
    let w_k: f64 = spec.iter().map(|c| c.norm_sqr()).sum();
    let kinetic: f64 = spec.iter().zip(&kin).map(|(c, e)| c.norm_sqr() * e).sum::<f64>() / w_k;
    let w_x: f64 = psi.values().iter().map(|c| c.norm_sqr()).sum();
    let potential: f64 = psi
        .values()
        .iter()
        .zip(h.potential_values(grid))
        .map(|(c, u)| c.norm_sqr() * u)
        .sum::<f64>()
        / w_x;
    Ok(kinetic + potential)
}

/// Mean of the spectral momentum density ħk along axis `axis`.
pub fn mean_momentum(psi: &WaveField, hbar: f64, axis: usize) -> f64 {
    let grid = psi.grid();
    let a = grid.axis(axis);
    let ks = wavenumbers(a.points, a.length());
    let mut fft = NdFft::new(grid);
    let mut spec = psi.values().to_vec();
    fft.transform(&mut spec, false);
    let mut num = 0.0;
    let mut den = 0.0;
    for (flat, c) in spec.iter().enumerate() {
        let w = c.norm_sqr();
        num += w * hbar * ks[grid.multi_index(flat)[axis]];
        den += w;
    }
    num / den
}

/// Two Gaussians of width `a` centred at ±b (1-D).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleGaussianParams {
    pub a: f64,
    pub b: f64,
}

impl DoubleGaussianParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "double-Gaussian needs a > 0 and b > 0, got a={a}, b={b}"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn ratio(&self) -> f64 {
        self.b / self.a
    }

    /// b/a ≥ 2: the barrier is high enough for well localisation.
    pub fn is_localized(&self) -> bool {
        self.ratio() >= 2.0
    }

    pub fn eval(&self, x: f64) -> f64 {
        let s = 2.0 * self.a * self.a;
        (-(x - self.b).powi(2) / s).exp() + (-(x + self.b).powi(2) / s).exp()
    }
}

/// Ψ(x) = exp{-(x-b)²/2a²} + exp{-(x+b)²/2a²}, unnormalised and real.
pub fn make_double_gaussian(grid: &Grid, p: DoubleGaussianParams) -> Result<WaveField> {
    if grid.dims() != 1 {
        return Err(Error::InvalidArgument("double-Gaussian state is one-dimensional".into()));
    }
    let p = DoubleGaussianParams::new(p.a, p.b)?;
    let ax = grid.axis(0);
    let need = p.b + 6.0 * p.a;
    if ax.min > -need || ax.max < need {
        return Err(Error::InvalidArgument(format!(
            "extent [{}, {}] must cover [-{need}, {need}] (b + 6a)",
            ax.min, ax.max
        )));
    }
    WaveField::from_fn(grid.clone(), 0.0, |x| Complex64::new(p.eval(x[0]), 0.0))
}

/// Gaussian packet `exp(-|x-c|²/2w² + i k·x)`.
pub fn make_packet(grid: &Grid, center: &[f64], width: f64, momentum: &[f64]) -> Result<WaveField> {
    let d = grid.dims();
    if center.len() != d || momentum.len() != d {
        return Err(Error::InvalidArgument(format!(
            "center and momentum need {d} components"
        )));
    }
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::InvalidArgument(format!("packet width must be positive, got {width}")));
    }
    let c: Point = crate::grid::point(center);
    let k: Point = crate::grid::point(momentum);
    WaveField::from_fn(grid.clone(), 0.0, |x| {
        let mut r2 = 0.0;
        let mut phase = 0.0;
        for j in 0..d {
            r2 += (x[j] - c[j]).powi(2);
            phase += k[j] * x[j];
        }
        Complex64::from_polar((-r2 / (2.0 * width * width)).exp(), phase)
    })
}

/// Lowest eigenpairs of the Fourier-grid Hamiltonian (the same discrete
/// kinetic operator the split-step propagator uses).
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub energies: Vec<f64>,
    pub states: Vec<WaveField>,
}

pub fn grid_spectrum(grid: &Grid, h: &HamiltonianSpec, count: usize) -> Result<Spectrum> {
    h.validate(grid)?;
    if !grid.is_periodic() {
        return Err(Error::UnsupportedPropagator(
            "the Fourier-grid Hamiltonian needs periodic axes".into(),
        ));
    }
    let n = grid.len();
    if n > MAX_DENSE_POINTS {
        return Err(Error::InvalidArgument(format!(
            "dense diagonalisation limited to {MAX_DENSE_POINTS} nodes, grid has {n}"
        )));
    }
    if count == 0 || count > n {
        return Err(Error::InvalidArgument(format!("requested {count} states from {n} nodes")));
    }
    // Circulant kinetic kernel per axis: t(m) = (1/n) Σ_q K(k_q) cos(k_q m dx).
    let kernels: Vec<Vec<f64>> = grid
        .axes()
        .iter()
        .enumerate()
        .map(|(ax, a)| {
            let np = a.points;
            let ks = wavenumbers(np, a.length());
            let dx = a.spacing();
            (0..np)
                .map(|m| {
                    ks.iter()
                        .map(|k| h.hbar * h.hbar * k * k / (2.0 * h.mass[ax]) * (k * m as f64 * dx).cos())
                        .sum::<f64>()
                        / np as f64
                })
                .collect()
        })
        .collect();
    let u = h.potential_values(grid);
    let mut mat = DMatrix::<f64>::zeros(n, n);
    for row in 0..n {
        let idx = grid.multi_index(row);
        mat[(row, row)] += u[row];
        for (ax, ker) in kernels.iter().enumerate() {
            let np = grid.axis(ax).points;
            let s = grid.stride(ax);
            let base = row - idx[ax] * s;
            for j in 0..np {
                let m = (idx[ax] + np - j) % np;
                mat[(row, base + j * s)] += ker[m];
            }
        }
    }
    let eig = SymmetricEigen::new(mat);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = 1.0 / grid.cell_volume().sqrt();
    let mut energies = Vec::with_capacity(count);
    let mut states = Vec::with_capacity(count);
    for &c in order.iter().take(count) {
        let col = eig.eigenvectors.column(c);
        let pivot = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let values = col.iter().map(|v| Complex64::new(sign * scale * v, 0.0)).collect();
        energies.push(eig.eigenvalues[c]);
        states.push(WaveField::new(grid.clone(), values, 0.0)?);
    }
    Ok(Spectrum { energies, states })
}

/// Σ cₙ φₙ over numerically computed eigenstates of ℋ.
pub fn make_superposition(
    grid: &Grid,
    h: &HamiltonianSpec,
    terms: &[(Complex64, usize)],
) -> Result<WaveField> {
    if terms.is_empty() || terms.iter().all(|(c, _)| c.norm_sqr() == 0.0) {
        return Err(Error::InvalidArgument("superposition has no nonzero coefficient".into()));
    }
    if let Some((c, _)) = terms.iter().find(|(c, _)| !(c.re.is_finite() && c.im.is_finite())) {
        return Err(Error::InvalidArgument(format!("non-finite coefficient {c}")));
    }
    let top = terms.iter().map(|(_, n)| *n).max().unwrap_or(0);
    if top >= grid.len() {
        return Err(Error::InvalidArgument(format!(
            "eigenindex {top} outside the {}-state spectrum",
            grid.len()
        )));
    }
    let spec = grid_spectrum(grid, h, top + 1)?;
    let mut values = vec![Complex64::default(); grid.len()];
    for (c, n) in terms {
        for (v, phi) in values.iter_mut().zip(spec.states[*n].values()) {
            *v += c * phi;
        }
    }
    WaveField::new(grid.clone(), values, 0.0)
}

/// Coherent state of the unit-frequency, unit-mass oscillator: its ground
/// state displaced by `displacement`.
pub fn make_coherent_state(grid: &Grid, displacement: &[f64]) -> Result<WaveField> {
    let d = grid.dims();
    let zero = [0.0; MAX_DIMS];
    make_packet(grid, displacement, 1.0, &zero[..d])
}
