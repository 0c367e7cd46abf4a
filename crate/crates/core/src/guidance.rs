//! From Ψ to the Particle's guidance: the potential `V = -ln(|Ψ|² + ε)` and
//! the drift `λ ∇ ln(|Ψ|² + ε)`, with node regularisation, an optional
//! magnitude cap, and space-time interpolation between snapshots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient_log, DensityField, Grid, Point, ScalarField, VectorField, WaveField, MAX_DIMS};

/// ε added to |Ψ|² before taking logarithms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRegularizer {
    /// ε = value · max|Ψ|²
    Relative(f64),
    Absolute(f64),
}

impl Default for NodeRegularizer {
    fn default() -> Self {
        NodeRegularizer::Relative(1e-12)
    }
}

impl NodeRegularizer {
    pub fn value(&self) -> f64 {
        match *self {
            NodeRegularizer::Relative(v) | NodeRegularizer::Absolute(v) => v,
        }
    }

    /// Absolute ε for a field whose largest |Ψ|² is `max_density`.
    pub fn resolve(&self, max_density: f64) -> f64 {
        match *self {
            NodeRegularizer::Relative(r) => r * max_density,
            NodeRegularizer::Absolute(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceParams {
    /// Diffusion constant λ (length²/time).
    pub lambda: f64,
    #[serde(default)]
    pub epsilon: NodeRegularizer,
    /// Largest permitted drift magnitude, if any.
    #[serde(default)]
    pub drift_cap: Option<f64>,
}

impl GuidanceParams {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            epsilon: NodeRegularizer::default(),
            drift_cap: None,
        }
    }

    pub fn with_epsilon(mut self, epsilon: NodeRegularizer) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_drift_cap(mut self, cap: f64) -> Self {
        self.drift_cap = Some(cap);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {}", self.lambda)));
        }
        let e = self.epsilon.value();
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {e}")));
        }
        if let Some(c) = self.drift_cap {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("drift cap must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// λ expressed through a configuration-space length and a diffusion time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub length_scale: f64,
    pub time_scale: f64,
}

impl DiffusionSpec {
    pub fn new(length_scale: f64, time_scale: f64) -> Result<Self> {
        if !(length_scale > 0.0 && length_scale.is_finite() && time_scale > 0.0 && time_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "length and time scales must be positive, got l={length_scale}, tau={time_scale}"
            )));
        }
        Ok(Self {
            length_scale,
            time_scale,
        })
    }
}

/// λ = l² / τ.
pub fn diffusion_constant(spec: &DiffusionSpec) -> f64 {
    spec.length_scale * spec.length_scale / spec.time_scale
}

/// |Ψ|² + ε with ε resolved against the field, returned with ε.
pub fn regularized_density(psi: &WaveField, params: &GuidanceParams) -> (DensityField, f64) {
    let rho = psi.density();
    let eps = params.epsilon.resolve(rho.max());
    let values = rho.values().iter().map(|v| v + eps).collect();
    let out = DensityField::new(psi.grid().clone(), values, psi.time()).expect("|Ψ|²+ε is a valid density");
    (out, eps)
}

/// V = -ln(|Ψ|² + ε), pointwise.
pub fn potential_field(psi: &WaveField, params: &GuidanceParams) -> ScalarField {
    let (rho, _) = regularized_density(psi, params);
    let values = rho.values().iter().map(|v| -v.ln()).collect();
    ScalarField::new(psi.grid().clone(), values, psi.time()).expect("ln of a positive density is finite")
}

/// Drift vectors λ∇ln(|Ψ|²+ε) on the grid of one Ψ snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftField {
    field: VectorField,
    params: GuidanceParams,
    epsilon: f64,
}

impl DriftField {
    pub fn vectors(&self) -> &VectorField {
        &self.field
    }

    pub fn grid(&self) -> &Grid {
        self.field.grid()
    }

    pub fn time(&self) -> f64 {
        self.field.time()
    }

    pub fn params(&self) -> &GuidanceParams {
        &self.params
    }

    /// The absolute ε used for this snapshot.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn at_node(&self, flat: usize) -> Point {
        self.field.at(flat)
    }

    pub fn interpolate(&self, x: &Point) -> Point {
        self.field.interpolate(x)
    }

    pub fn max_magnitude(&self) -> f64 {
        self.field.max_magnitude()
    }
}

pub fn drift_field(psi: &WaveField, params: &GuidanceParams) -> Result<DriftField> {
    params.validate()?;
    let rho = psi.density();
    let eps = params.epsilon.resolve(rho.max());
    let mut field = gradient_log(&rho, eps)?;
    let d = psi.grid().dims();
    let vals = field.values_mut();
    for v in vals.iter_mut() {
        *v *= params.lambda;
    }
    if let Some(cap) = params.drift_cap {
        for chunk in vals.chunks_exact_mut(d) {
            let mag = chunk.iter().map(|c| c * c).sum::<f64>().sqrt();
            if mag > cap {
                let s = cap / mag * (1.0 - f64::EPSILON);
                chunk.iter_mut().for_each(|c| *c *= s);
            }
        }
    }
    Ok(DriftField {
        field,
        params: *params,
        epsilon: eps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalInterpolation {
    #[default]
    PiecewiseConstant,
    Linear,
}

/// Drift at an off-grid point and a time bracketed by two snapshots.
pub fn drift_at(
    field_t0: &DriftField,
    field_t1: Option<&DriftField>,
    x: &Point,
    t: f64,
    mode: TemporalInterpolation,
) -> Result<Point> {
    let Some(f1) = field_t1 else {
        return Ok(field_t0.interpolate(x));
    };
    field_t0.grid().ensure_same(f1.grid(), "drift bracket")?;
    let (t0, t1) = (field_t0.time(), f1.time());
    let tol = 1e-12 * t0.abs().max(t1.abs()).max(1.0);
    if t < t0 - tol || t > t1 + tol || t1 < t0 {
        return Err(Error::OutOfBracket { t, start: t0, end: t1 });
    }
    match mode {
        TemporalInterpolation::PiecewiseConstant => Ok(field_t0.interpolate(x)),
        TemporalInterpolation::Linear => {
            let w = if t1 > t0 { ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 0.0 };
            let a = field_t0.interpolate(x);
            let b = f1.interpolate(x);
            let mut out = [0.0; MAX_DIMS];
            for k in 0..MAX_DIMS {
                out[k] = a[k] + w * (b[k] - a[k]);
            }
            Ok(out)
        }
    }
}

/// A registered node surface: the hyperplane `x[axis] = position`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodePlane {
    pub axis: usize,
    pub position: f64,
}

/// Criteria for calling a minimum of |Ψ|² a node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeDetection {
    /// Minimum |Ψ|² relative to the local maximum.
    pub relative_depth: f64,
    /// Half-width, in nodes, of the window defining the local maximum.
    pub window: usize,
    /// Local maxima below `floor · max|Ψ|²` are ignored (tails).
    pub floor: f64,
}

impl Default for NodeDetection {
    fn default() -> Self {
        Self {
            relative_depth: 1e-3,
            window: 16,
            floor: 1e-3,
        }
    }
}

/// Locates nodes of a 1-D Ψ from the complex-linear interpolant on every
/// grid segment: a segment holds a node when the interpolant's interior
/// minimum of |Ψ|² is deep relative to the surrounding maximum.
pub fn detect_nodes(psi: &WaveField, opts: &NodeDetection) -> Result<Vec<NodePlane>> {
    let grid = psi.grid();
    if grid.dims() != 1 {
        return Err(Error::InvalidArgument("node detection is implemented for 1-D fields".into()));
    }
    let ax = grid.axis(0);
    let n = ax.points;
    let periodic = ax.boundary == crate::grid::Boundary::Periodic;
    let v = psi.values();
    let dens: Vec<f64> = v.iter().map(|c| c.norm_sqr()).collect();
    let global = dens.iter().copied().fold(0.0, f64::max);
    let segments = if periodic { n } else { n - 1 };
    let mut out = Vec::new();
    for i in 0..segments {
        let j = (i + 1) % n;
        let a = v[i];
        let d = v[j] - a;
        let dd = d.norm_sqr();
        if dd == 0.0 {
            continue;
        }
        let u = -(a.conj() * d).re / dd;
        if !(u > 0.0 && u < 1.0) {
            continue;
        }
        let m = (a + d * u).norm_sqr();
        let local = (0..=2 * opts.window + 1)
            .filter_map(|o| {
                let k = i as i64 + o as i64 - opts.window as i64;
                if periodic {
                    Some(dens[k.rem_euclid(n as i64) as usize])
                } else if (0..n as i64).contains(&k) {
                    Some(dens[k as usize])
                } else {
                    None
                }
            })
            .fold(0.0, f64::max);
        if local < opts.floor * global || m > opts.relative_depth * local {
            continue;
        }
        let x = ax.fold(ax.coord(i) + u * ax.spacing());
        out.push(NodePlane { axis: 0, position: x });
    }
    out.sort_by(|p, q| p.position.total_cmp(&q.position));
    Ok(out)
}
