//! Scenario configuration: a JSON document overlaid on per-scenario
//! defaults, validated in full so that every problem is reported at once.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{ConfigIssue, Error, Result};
use crate::grid::{Axis, Boundary, Grid};
use crate::guidance::{DiffusionSpec, NodeDetection, NodeRegularizer, TemporalInterpolation};
use crate::langevin::PathRecording;
use crate::smoluchowski::{FluxScheme, Stepping};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    DoubleWell,
    Interference,
    HarmonicGround,
    AdiabaticTracking,
    ProductSeparation,
    FreePacket,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::DoubleWell,
        ScenarioKind::Interference,
        ScenarioKind::HarmonicGround,
        ScenarioKind::AdiabaticTracking,
        ScenarioKind::ProductSeparation,
        ScenarioKind::FreePacket,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::DoubleWell => "double_well",
            ScenarioKind::Interference => "interference",
            ScenarioKind::HarmonicGround => "harmonic_ground",
            ScenarioKind::AdiabaticTracking => "adiabatic_tracking",
            ScenarioKind::ProductSeparation => "product_separation",
            ScenarioKind::FreePacket => "free_packet",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    fn dims(self) -> usize {
        match self {
            ScenarioKind::ProductSeparation => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum PotentialSpec {
    Free,
    /// `U = Σ ½ m_k ω_k² x_k²`.
    Harmonic { omega: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianConfig {
    pub hbar: f64,
    pub mass: Vec<f64>,
    pub potential: PotentialSpec,
}

/// Exactly one of `lambda` and `diffusion` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    pub lambda: Option<f64>,
    pub diffusion: Option<DiffusionSpec>,
    pub epsilon: NodeRegularizer,
    pub drift_cap: Option<f64>,
}

/// Parameters of the initial Ψ; which ones apply depends on the scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    /// Double-Gaussian width.
    pub a: Option<f64>,
    /// Double-Gaussian half separation.
    pub b: Option<f64>,
    /// Packet width (standard deviation of the amplitude).
    pub width: Option<f64>,
    /// Interference: packets start at ±separation.
    pub separation: Option<f64>,
    /// Packet wavenumber; interference packets move towards each other.
    pub momentum: Option<Vec<f64>>,
    /// Interference: phase of the right packet relative to the left
    /// (0 when absent; π gives a permanent node at the origin).
    pub phase: Option<f64>,
    pub center: Option<Vec<f64>>,
    /// Coherent-state displacement from the oscillator centre.
    pub displacement: Option<Vec<f64>>,
    /// Product state: Gaussian width along y.
    pub y_width: Option<f64>,
    /// Double well: wells are `x ≤ -edge·b` and `x ≥ edge·b`.
    pub well_edge: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum InitialConfig {
    /// Sample from |Ψ(·,0)|².
    PsiDensity,
    Point { x: Vec<f64> },
    Gaussian { center: Vec<f64>, width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpConfig {
    pub enabled: bool,
    /// Step; chosen from the stability bound when absent.
    pub dt: Option<f64>,
    pub stepping: Stepping,
    pub scheme: FluxScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfptConfig {
    pub trajectories: usize,
    /// Censoring cap as a multiple of the Kramers estimate.
    pub t_max_factor: f64,
    /// Escape when `x` reaches `target_fraction · b` on the far side.
    pub target_fraction: f64,
    pub dt_langevin: Option<f64>,
}

/// Pass/fail thresholds evaluated after a run; absent ones are not checked.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Final histogram against |Ψ(t_final)|²/Z.
    pub tv_equilibrium_max: Option<f64>,
    /// Largest histogram-to-|Ψ|²/Z distance over checkpoints and the end.
    pub tv_residual_max: Option<f64>,
    /// Largest histogram-to-Smoluchowski distance.
    pub tv_fp_max: Option<f64>,
    pub norm_drift_max: Option<f64>,
    pub start_well_mass_min: Option<f64>,
    pub no_jump_fraction_min: Option<f64>,
    pub zero_crossing_fraction_min: Option<f64>,
    /// `|ρ|·√n` for x/y increments.
    pub increment_z_max: Option<f64>,
    /// `max(T/T_K, T_K/T)`.
    pub mfpt_factor_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub grid: Vec<Axis>,
    pub hamiltonian: HamiltonianConfig,
    pub guidance: GuidanceConfig,
    pub state: StateConfig,
    pub initial: InitialConfig,
    /// Evolve Ψ in time; otherwise Ψ(·,0) is frozen.
    pub psi_evolution: bool,
    /// Ψ time step.
    pub dt: f64,
    /// Langevin time step.
    pub dt_langevin: f64,
    pub t_final: f64,
    /// Ψ steps between stored snapshots.
    pub snapshot_stride: usize,
    pub interpolation: TemporalInterpolation,
    pub checkpoints: Vec<f64>,
    pub trajectories: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Histogram cells merge this many grid cells per axis.
    pub histogram_coarsen: usize,
    pub fp: FpConfig,
    pub node_detection: Option<NodeDetection>,
    pub mfpt: Option<MfptConfig>,
    pub record_paths: Option<PathRecording>,
    pub write_snapshots: bool,
    pub thresholds: Thresholds,
}

fn axis(min: f64, max: f64, points: usize, boundary: Boundary) -> Axis {
    Axis::new(min, max, points, boundary)
}

impl ScenarioConfig {
    /// The documented defaults for one scenario.
    pub fn defaults(kind: ScenarioKind) -> Self {
        let base = ScenarioConfig {
            scenario: kind,
            grid: vec![axis(-10.0, 10.0, 256, Boundary::Periodic)],
            hamiltonian: HamiltonianConfig {
                hbar: 1.0,
                mass: vec![1.0],
                potential: PotentialSpec::Free,
            },
            guidance: GuidanceConfig {
                lambda: Some(1.0),
                diffusion: None,
                epsilon: NodeRegularizer::default(),
                drift_cap: None,
            },
            state: StateConfig::default(),
            initial: InitialConfig::PsiDensity,
            psi_evolution: false,
            dt: 1e-3,
            dt_langevin: 1e-3,
            t_final: 1.0,
            snapshot_stride: 1,
            interpolation: TemporalInterpolation::PiecewiseConstant,
            checkpoints: Vec::new(),
            trajectories: 1000,
            master_seed: 0,
            output_dir: PathBuf::from(format!("runs/{}", kind.name())),
            histogram_coarsen: 4,
            fp: FpConfig {
                enabled: true,
                dt: None,
                stepping: Stepping::Explicit,
                scheme: FluxScheme::ChangCooper,
            },
            node_detection: None,
            mfpt: None,
            record_paths: None,
            write_snapshots: true,
            thresholds: Thresholds::default(),
        };
        match kind {
            ScenarioKind::DoubleWell => ScenarioConfig {
                grid: vec![axis(-10.0, 10.0, 400, Boundary::Reflecting)],
                state: StateConfig {
                    a: Some(1.0),
                    b: Some(3.0),
                    well_edge: Some(1.0),
                    ..StateConfig::default()
                },
                initial: InitialConfig::Point { x: vec![-3.0] },
                dt: 0.01,
                dt_langevin: 0.01,
                t_final: 27.0,
                checkpoints: vec![9.0, 18.0],
                trajectories: 10_000,
                histogram_coarsen: 8,
                thresholds: Thresholds {
                    tv_fp_max: Some(0.05),
                    start_well_mass_min: Some(0.95),
                    no_jump_fraction_min: Some(0.95),
                    ..Thresholds::default()
                },
                ..base
            },
            ScenarioKind::Interference => ScenarioConfig {
                grid: vec![axis(-40.0, 40.0, 1024, Boundary::Periodic)],
                guidance: GuidanceConfig {
                    lambda: Some(10.0),
                    ..base.guidance.clone()
                },
                state: StateConfig {
                    width: Some(2.0),
                    separation: Some(10.0),
                    momentum: Some(vec![1.0]),
                    ..StateConfig::default()
                },
                psi_evolution: true,
                dt: 0.01,
                dt_langevin: 0.001,
                t_final: 10.0,
                snapshot_stride: 1,
                interpolation: TemporalInterpolation::Linear,
                trajectories: 10_000,
                node_detection: Some(NodeDetection {
                    relative_depth: 1e-6,
                    ..NodeDetection::default()
                }),
                thresholds: Thresholds {
                    tv_equilibrium_max: Some(0.15),
                    zero_crossing_fraction_min: Some(0.99),
                    norm_drift_max: Some(1e-9),
                    ..Thresholds::default()
                },
                ..base
            },
            ScenarioKind::HarmonicGround => ScenarioConfig {
                grid: vec![axis(-8.0, 8.0, 128, Boundary::Periodic)],
                hamiltonian: HamiltonianConfig {
                    potential: PotentialSpec::Harmonic { omega: vec![1.0] },
                    ..base.hamiltonian.clone()
                },
                guidance: GuidanceConfig {
                    lambda: Some(10.0),
                    ..base.guidance.clone()
                },
                psi_evolution: true,
                t_final: 1.0,
                checkpoints: vec![0.5],
                trajectories: 1000,
                thresholds: Thresholds {
                    tv_equilibrium_max: Some(0.08),
                    tv_fp_max: Some(0.08),
                    norm_drift_max: Some(1e-9),
                    ..Thresholds::default()
                },
                ..base
            },
            ScenarioKind::AdiabaticTracking => ScenarioConfig {
                grid: vec![axis(-10.0, 10.0, 256, Boundary::Periodic)],
                hamiltonian: HamiltonianConfig {
                    potential: PotentialSpec::Harmonic { omega: vec![1.0] },
                    ..base.hamiltonian.clone()
                },
                guidance: GuidanceConfig {
                    lambda: Some(10.0),
                    ..base.guidance.clone()
                },
                state: StateConfig {
                    displacement: Some(vec![2.0]),
                    ..StateConfig::default()
                },
                psi_evolution: true,
                dt: 1e-3,
                dt_langevin: 5e-4,
                t_final: 3.2,
                interpolation: TemporalInterpolation::Linear,
                checkpoints: vec![0.8, 1.6, 2.4],
                trajectories: 20_000,
                thresholds: Thresholds {
                    tv_residual_max: Some(0.1),
                    tv_fp_max: Some(0.05),
                    norm_drift_max: Some(1e-9),
                    ..Thresholds::default()
                },
                ..base
            },
            ScenarioKind::ProductSeparation => ScenarioConfig {
                grid: vec![
                    axis(-9.0, 9.0, 144, Boundary::Reflecting),
                    axis(-6.0, 6.0, 96, Boundary::Reflecting),
                ],
                hamiltonian: HamiltonianConfig {
                    mass: vec![1.0, 1.0],
                    ..base.hamiltonian.clone()
                },
                state: StateConfig {
                    a: Some(1.0),
                    b: Some(2.0),
                    y_width: Some(1.0),
                    ..StateConfig::default()
                },
                dt: 0.01,
                dt_langevin: 0.01,
                t_final: 5.0,
                checkpoints: vec![2.5],
                trajectories: 10_000,
                histogram_coarsen: 12,
                record_paths: Some(PathRecording {
                    stride: 1,
                    streams: 1000,
                }),
                thresholds: Thresholds {
                    increment_z_max: Some(3.0),
                    tv_fp_max: Some(0.08),
                    ..Thresholds::default()
                },
                ..base
            },
            ScenarioKind::FreePacket => ScenarioConfig {
                grid: vec![axis(-20.0, 20.0, 512, Boundary::Periodic)],
                guidance: GuidanceConfig {
                    lambda: Some(20.0),
                    ..base.guidance.clone()
                },
                state: StateConfig {
                    width: Some(1.0),
                    center: Some(vec![-4.0]),
                    momentum: Some(vec![1.0]),
                    ..StateConfig::default()
                },
                psi_evolution: true,
                t_final: 4.0,
                interpolation: TemporalInterpolation::Linear,
                checkpoints: vec![1.0, 2.0, 3.0],
                trajectories: 10_000,
                thresholds: Thresholds {
                    tv_residual_max: Some(0.1),
                    norm_drift_max: Some(1e-9),
                    ..Thresholds::default()
                },
                ..base
            },
        }
    }

    pub fn dims(&self) -> usize {
        self.grid.len()
    }

    pub fn build_grid(&self) -> Result<Grid> {
        Grid::new(self.grid.clone())
    }

    /// λ, either given directly or as l²/τ.
    pub fn lambda(&self) -> f64 {
        match (&self.guidance.lambda, &self.guidance.diffusion) {
            (Some(l), _) => *l,
            (None, Some(d)) => crate::guidance::diffusion_constant(d),
            (None, None) => 0.0,
        }
    }

    /// Stored Ψ snapshot spacing.
    pub fn snapshot_spacing(&self) -> f64 {
        self.dt * self.snapshot_stride as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ConfigIssue {
            path: path.into(),
            message: message.into(),
        });
    }
}

/// Enum-valued keys: a user value replaces the default instead of merging.
const REPLACED: [&str; 3] = ["hamiltonian.potential", "guidance.epsilon", "initial"];

/// Overlays `user` on `defaults`, reporting keys that have no default.
fn merge(defaults: &mut Value, user: &Value, path: &str, issues: &mut Issues) {
    match (defaults, user) {
        (Value::Object(d), Value::Object(u)) => {
            for (k, v) in u {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match d.get_mut(k) {
                    Some(slot @ Value::Object(_)) if v.is_object() && !REPLACED.contains(&p.as_str()) => {
                        merge(slot, v, &p, issues)
                    }
                    Some(slot) => *slot = v.clone(),
                    None => issues.push(p, "unknown key"),
                }
            }
        }
        (d, u) => *d = u.clone(),
    }
}

fn field<T: DeserializeOwned>(obj: &Map<String, Value>, key: &str, issues: &mut Issues) -> Option<T> {
    let v = obj.get(key)?;
    match serde_json::from_value(v.clone()) {
        Ok(t) => Some(t),
        Err(e) => {
            issues.push(key, e.to_string());
            None
        }
    }
}

fn valid_names() -> String {
    ScenarioKind::ALL.map(ScenarioKind::name).join(", ")
}

/// Parses and validates a configuration, filling every omitted key from the
/// scenario's defaults. All problems are collected before returning.
pub fn validate_config(text: &str) -> Result<ScenarioConfig, Vec<ConfigIssue>> {
    let mut issues = Issues(Vec::new());
    let user: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => {
            issues.push("$", format!("not valid JSON: {e}"));
            return Err(issues.0);
        }
    };
    let Some(obj) = user.as_object() else {
        issues.push("$", "configuration must be a JSON object");
        return Err(issues.0);
    };
    let kind = match obj.get("scenario") {
        None => {
            issues.push("scenario", format!("required; one of {}", valid_names()));
            None
        }
        Some(Value::String(s)) => {
            let k = ScenarioKind::from_name(s);
            if k.is_none() {
                issues.push("scenario", format!("unknown scenario {s:?}; valid names: {}", valid_names()));
            }
            k
        }
        Some(other) => {
            issues.push("scenario", format!("expected a string, got {other}; valid names: {}", valid_names()));
            None
        }
    };

    // keep checking the remaining keys against some schema even when the
    // scenario name is bad
    let schema_kind = kind.unwrap_or(ScenarioKind::HarmonicGround);
    let mut merged = serde_json::to_value(ScenarioConfig::defaults(schema_kind)).expect("defaults serialise");
    let mut user_rest = user.clone();
    if let Value::Object(m) = &mut user_rest {
        m.remove("scenario");
    }
    merge(&mut merged, &user_rest, "", &mut issues);
    // giving only `diffusion` implies dropping the default `lambda`
    let user_guidance = user_rest.get("guidance").and_then(Value::as_object);
    if user_guidance.is_some_and(|g| g.contains_key("diffusion") && !g.contains_key("lambda")) {
        merged["guidance"]["lambda"] = Value::Null;
    }
    let m = merged.as_object().expect("object");

    let grid: Option<Vec<Axis>> = field(m, "grid", &mut issues);
    let hamiltonian: Option<HamiltonianConfig> = field(m, "hamiltonian", &mut issues);
    let guidance: Option<GuidanceConfig> = field(m, "guidance", &mut issues);
    let state: Option<StateConfig> = field(m, "state", &mut issues);
    let initial: Option<InitialConfig> = field(m, "initial", &mut issues);
    let psi_evolution: Option<bool> = field(m, "psi_evolution", &mut issues);
    let dt: Option<f64> = field(m, "dt", &mut issues);
    let dt_langevin: Option<f64> = field(m, "dt_langevin", &mut issues);
    let t_final: Option<f64> = field(m, "t_final", &mut issues);
    let snapshot_stride: Option<usize> = field(m, "snapshot_stride", &mut issues);
    let interpolation: Option<TemporalInterpolation> = field(m, "interpolation", &mut issues);
    let checkpoints: Option<Vec<f64>> = field(m, "checkpoints", &mut issues);
    let trajectories: Option<usize> = field(m, "trajectories", &mut issues);
    let master_seed: Option<u64> = field(m, "master_seed", &mut issues);
    let output_dir: Option<PathBuf> = field(m, "output_dir", &mut issues);
    let histogram_coarsen: Option<usize> = field(m, "histogram_coarsen", &mut issues);
    let fp: Option<FpConfig> = field(m, "fp", &mut issues);
    let node_detection: Option<Option<NodeDetection>> = field(m, "node_detection", &mut issues);
    let mfpt: Option<Option<MfptConfig>> = field(m, "mfpt", &mut issues);
    let record_paths: Option<Option<PathRecording>> = field(m, "record_paths", &mut issues);
    let write_snapshots: Option<bool> = field(m, "write_snapshots", &mut issues);
    let thresholds: Option<Thresholds> = field(m, "thresholds", &mut issues);

    let (
        Some(kind),
        Some(grid),
        Some(hamiltonian),
        Some(guidance),
        Some(state),
        Some(initial),
        Some(psi_evolution),
        Some(dt),
        Some(dt_langevin),
        Some(t_final),
        Some(snapshot_stride),
        Some(interpolation),
        Some(checkpoints),
        Some(trajectories),
        Some(master_seed),
        Some(output_dir),
        Some(histogram_coarsen),
        Some(fp),
        Some(node_detection),
        Some(mfpt),
        Some(record_paths),
        Some(write_snapshots),
        Some(thresholds),
    ) = (
        kind,
        grid,
        hamiltonian,
        guidance,
        state,
        initial,
        psi_evolution,
        dt,
        dt_langevin,
        t_final,
        snapshot_stride,
        interpolation,
        checkpoints,
        trajectories,
        master_seed,
        output_dir,
        histogram_coarsen,
        fp,
        node_detection,
        mfpt,
        record_paths,
        write_snapshots,
        thresholds,
    )
    else {
        return Err(issues.0);
    };
    let cfg = ScenarioConfig {
        scenario: kind,
        grid,
        hamiltonian,
        guidance,
        state,
        initial,
        psi_evolution,
        dt,
        dt_langevin,
        t_final,
        snapshot_stride,
        interpolation,
        checkpoints,
        trajectories,
        master_seed,
        output_dir,
        histogram_coarsen,
        fp,
        node_detection,
        mfpt,
        record_paths,
        write_snapshots,
        thresholds,
    };
    check_semantics(&cfg, &mut issues);
    if issues.0.is_empty() {
        Ok(cfg)
    } else {
        Err(issues.0)
    }
}

/// `validate_config` with the issue list folded into an [`Error`].
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    validate_config(text).map_err(Error::Config)
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

fn check_semantics(c: &ScenarioConfig, issues: &mut Issues) {
    let dims = c.dims();
    let grid = match Grid::new(c.grid.clone()) {
        Ok(g) => Some(g),
        Err(e) => {
            issues.push("grid", e.to_string());
            None
        }
    };
    if dims != c.scenario.dims() {
        issues.push(
            "grid",
            format!("{} needs a {}-D grid, got {dims} axes", c.scenario, c.scenario.dims()),
        );
    }

    if !positive(c.dt) {
        issues.push("dt", format!("must be positive, got {}", c.dt));
    }
    if !positive(c.dt_langevin) {
        issues.push("dt_langevin", format!("must be positive, got {}", c.dt_langevin));
    }
    if c.dt_langevin > c.dt {
        issues.push(
            "dt_langevin",
            format!("dt_langevin ({}) must not exceed dt ({})", c.dt_langevin, c.dt),
        );
    }
    if !positive(c.t_final) {
        issues.push("t_final", format!("must be positive, got {}", c.t_final));
    }
    if c.snapshot_stride == 0 {
        issues.push("snapshot_stride", "must be at least 1");
    }
    if c.trajectories == 0 {
        issues.push("trajectories", "must be at least 1");
    }

    // Hamiltonian
    let h = &c.hamiltonian;
    if !positive(h.hbar) {
        issues.push("hamiltonian.hbar", format!("must be positive, got {}", h.hbar));
    }
    if h.mass.len() != dims {
        issues.push("hamiltonian.mass", format!("need {dims} masses, got {}", h.mass.len()));
    }
    if h.mass.iter().any(|m| !positive(*m)) {
        issues.push("hamiltonian.mass", "masses must be positive");
    }
    match &h.potential {
        PotentialSpec::Harmonic { omega } => {
            if omega.len() != dims {
                issues.push("hamiltonian.potential.omega", format!("need {dims} frequencies, got {}", omega.len()));
            }
            if omega.iter().any(|w| !positive(*w)) {
                issues.push("hamiltonian.potential.omega", "frequencies must be positive");
            }
        }
        PotentialSpec::Free => {
            if matches!(c.scenario, ScenarioKind::HarmonicGround | ScenarioKind::AdiabaticTracking) {
                issues.push("hamiltonian.potential", format!("{} needs a harmonic potential", c.scenario));
            }
        }
    }

    // guidance
    let g = &c.guidance;
    match (&g.lambda, &g.diffusion) {
        (Some(_), Some(_)) => issues.push("guidance", "give either lambda or diffusion, not both"),
        (None, None) => issues.push("guidance", "one of lambda or diffusion is required"),
        (Some(l), None) if !(*l >= 0.0 && l.is_finite()) => {
            issues.push("guidance.lambda", format!("must be nonnegative, got {l}"))
        }
        (None, Some(d)) if DiffusionSpec::new(d.length_scale, d.time_scale).is_err() => {
            issues.push("guidance.diffusion", "length_scale and time_scale must be positive")
        }
        _ => {}
    }
    if !positive(g.epsilon.value()) {
        issues.push("guidance.epsilon", "must be positive");
    }
    if let Some(cap) = g.drift_cap {
        if !positive(cap) {
            issues.push("guidance.drift_cap", format!("must be positive, got {cap}"));
        }
    }

    // Ψ evolution
    if c.psi_evolution {
        if let Some(grid) = &grid {
            if !grid.is_periodic() {
                issues.push("psi_evolution", "the spectral propagator needs periodic boundaries on every axis");
            }
        }
        if positive(c.dt) && positive(c.t_final) {
            let steps = c.t_final / c.dt;
            if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
                issues.push("dt", format!("dt ({}) must divide t_final ({})", c.dt, c.t_final));
            } else if c.snapshot_stride > 0 && (steps.round() as usize) % c.snapshot_stride != 0 {
                issues.push("snapshot_stride", "must divide the number of Ψ steps");
            }
        }
        if c.dt_langevin > c.snapshot_spacing() {
            issues.push(
                "dt_langevin",
                format!("dt_langevin ({}) exceeds the snapshot spacing dt·snapshot_stride", c.dt_langevin),
            );
        }
    }

    // checkpoints
    if c.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        issues.push("checkpoints", "must be strictly increasing");
    }
    if c.checkpoints.iter().any(|t| !(*t > 0.0 && *t < c.t_final)) {
        issues.push("checkpoints", "must lie strictly between 0 and t_final");
    }
    if c.psi_evolution && positive(c.dt) && c.snapshot_stride > 0 {
        let spacing = c.snapshot_spacing();
        for (i, t) in c.checkpoints.iter().enumerate() {
            let r = t / spacing;
            if (r - r.round()).abs() > 1e-9 * r.max(1.0) {
                issues.push(format!("checkpoints[{i}]"), "must fall on a stored Ψ snapshot time");
            }
        }
    }

    // histogram
    if c.histogram_coarsen == 0 {
        issues.push("histogram_coarsen", "must be at least 1");
    } else if let Some(grid) = &grid {
        if let Err(e) = grid.coarsen(c.histogram_coarsen) {
            issues.push("histogram_coarsen", e.to_string());
        }
    }

    // initial ensemble
    match &c.initial {
        InitialConfig::PsiDensity => {}
        InitialConfig::Point { x } => {
            if x.len() != dims {
                issues.push("initial.x", format!("need {dims} coordinates, got {}", x.len()));
            } else if let Some(grid) = &grid {
                if !grid.contains(&crate::grid::point(x)) {
                    issues.push("initial.x", "outside the grid");
                }
            }
        }
        InitialConfig::Gaussian { center, width } => {
            if center.len() != dims {
                issues.push("initial.center", format!("need {dims} coordinates, got {}", center.len()));
            }
            if !positive(*width) {
                issues.push("initial.width", "must be positive");
            }
        }
    }

    check_state(c, issues);

    if let Some(fp_dt) = c.fp.dt {
        if !positive(fp_dt) {
            issues.push("fp.dt", "must be positive");
        }
    }
    if let Some(m) = &c.mfpt {
        if c.scenario != ScenarioKind::DoubleWell {
            issues.push("mfpt", "first-passage campaigns are defined for double_well only");
        }
        if !matches!(c.initial, InitialConfig::Point { .. }) {
            issues.push("mfpt", "needs a point initial condition");
        }
        if m.trajectories == 0 {
            issues.push("mfpt.trajectories", "must be at least 1");
        }
        if !positive(m.t_max_factor) {
            issues.push("mfpt.t_max_factor", "must be positive");
        }
        if !positive(m.target_fraction) {
            issues.push("mfpt.target_fraction", "must be positive");
        }
        if m.dt_langevin.is_some_and(|d| !positive(d)) {
            issues.push("mfpt.dt_langevin", "must be positive");
        }
    }
    if c.node_detection.is_some() && dims != 1 {
        issues.push("node_detection", "node registration is implemented for 1-D scenarios");
    }
    if let Some(r) = &c.record_paths {
        if r.stride == 0 {
            issues.push("record_paths.stride", "must be at least 1");
        }
    }
    if c.thresholds.increment_z_max.is_some() && c.record_paths.is_none() {
        issues.push("thresholds.increment_z_max", "needs record_paths");
    }
}

fn require(issues: &mut Issues, key: &str, v: Option<f64>) -> Option<f64> {
    match v {
        Some(x) if positive(x) => Some(x),
        Some(x) => {
            issues.push(format!("state.{key}"), format!("must be positive, got {x}"));
            None
        }
        None => {
            issues.push(format!("state.{key}"), "required for this scenario");
            None
        }
    }
}

fn require_vec(issues: &mut Issues, key: &str, v: &Option<Vec<f64>>, dims: usize) {
    match v {
        Some(x) if x.len() == dims => {}
        Some(x) => issues.push(format!("state.{key}"), format!("need {dims} components, got {}", x.len())),
        None => issues.push(format!("state.{key}"), "required for this scenario"),
    }
}

fn check_state(c: &ScenarioConfig, issues: &mut Issues) {
    let s = &c.state;
    let dims = c.dims();
    match c.scenario {
        ScenarioKind::DoubleWell | ScenarioKind::ProductSeparation => {
            let a = require(issues, "a", s.a);
            let b = require(issues, "b", s.b);
            if c.scenario == ScenarioKind::ProductSeparation {
                require(issues, "y_width", s.y_width);
            } else if let Some(e) = s.well_edge {
                if !positive(e) {
                    issues.push("state.well_edge", "must be positive");
                }
            }
            if let (Some(a), Some(b), Some(ax)) = (a, b, c.grid.first()) {
                let need = b + 6.0 * a;
                if ax.min > -need || ax.max < need {
                    issues.push("grid", format!("x extent must cover ±(b + 6a) = ±{need}"));
                }
            }
        }
        ScenarioKind::Interference => {
            require(issues, "width", s.width);
            require(issues, "separation", s.separation);
            require_vec(issues, "momentum", &s.momentum, dims);
            if s.momentum.as_ref().is_some_and(|k| k.iter().any(|v| !positive(*v))) {
                issues.push("state.momentum", "must be positive (packets approach each other)");
            }
        }
        ScenarioKind::HarmonicGround => {}
        ScenarioKind::AdiabaticTracking => require_vec(issues, "displacement", &s.displacement, dims),
        ScenarioKind::FreePacket => {
            require(issues, "width", s.width);
            require_vec(issues, "center", &s.center, dims);
            require_vec(issues, "momentum", &s.momentum, dims);
        }
    }
}

/// Per-scenario defaults, as JSON, for documentation.
pub fn defaults_table() -> BTreeMap<&'static str, Value> {
    ScenarioKind::ALL
        .into_iter()
        .map(|k| (k.name(), serde_json::to_value(ScenarioConfig::defaults(k)).expect("defaults serialise")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        for kind in ScenarioKind::ALL {
            let cfg = validate_config(&format!(r#"{{"scenario": "{kind}"}}"#))
                .unwrap_or_else(|e| panic!("{kind}: {e:?}"));
            assert_eq!(cfg, ScenarioConfig::defaults(kind));
        }
    }

    #[test]
    fn overrides_are_applied() {
        let cfg = validate_config(
            r#"{"scenario": "double_well", "state": {"b": 2.5}, "master_seed": 9, "guidance": {"lambda": 2}}"#,
        )
        .unwrap();
        assert_eq!(cfg.state.b, Some(2.5));
        assert_eq!(cfg.state.a, Some(1.0));
        assert_eq!(cfg.master_seed, 9);
        assert_eq!(cfg.lambda(), 2.0);
    }

    #[test]
    fn langevin_step_larger_than_psi_step_names_both_keys() {
        let issues = validate_config(r#"{"scenario": "harmonic_ground", "dt": 0.001, "dt_langevin": 0.01}"#)
            .unwrap_err();
        let hit = issues.iter().find(|i| i.path == "dt_langevin").expect("dt_langevin issue");
        assert!(hit.message.contains("dt_langevin") && hit.message.contains("dt ("), "{hit}");
    }

    #[test]
    fn unknown_scenario_lists_valid_names() {
        let issues = validate_config(r#"{"scenario": "cat_state"}"#).unwrap_err();
        let msg = &issues[0].message;
        for k in ScenarioKind::ALL {
            assert!(msg.contains(k.name()), "{msg}");
        }
    }

    #[test]
    fn every_violation_is_reported() {
        let issues = validate_config(
            r#"{"scenario": "nope", "trajectories": 0, "dt": -1, "colour": "blue", "fp": {"stepp": 1}}"#,
        )
        .unwrap_err();
        let paths: Vec<&str> = issues.iter().map(|i| i.path.as_str()).collect();
        for p in ["scenario", "colour", "fp.stepp"] {
            assert!(paths.contains(&p), "{paths:?}");
        }
        let issues = validate_config(r#"{"scenario": "free_packet", "trajectories": 0, "dt": -1}"#).unwrap_err();
        let paths: Vec<&str> = issues.iter().map(|i| i.path.as_str()).collect();
        assert!(paths.contains(&"trajectories") && paths.contains(&"dt"), "{paths:?}");
    }

    #[test]
    fn tagged_values_replace_defaults() {
        let cfg = validate_config(
            r#"{"scenario": "harmonic_ground", "guidance": {"epsilon": {"absolute": 1e-10}},
                "initial": {"kind": "point", "x": [0.5]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.guidance.epsilon, NodeRegularizer::Absolute(1e-10));
        assert_eq!(cfg.initial, InitialConfig::Point { x: vec![0.5] });
        let cfg = validate_config(
            r#"{"scenario": "free_packet", "guidance": {"diffusion": {"length_scale": 2, "time_scale": 0.5}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.lambda(), 8.0);
    }

    #[test]
    fn type_errors_are_addressed() {
        let issues = validate_config(r#"{"scenario": "free_packet", "t_final": "soon"}"#).unwrap_err();
        assert_eq!(issues[0].path, "t_final");
    }

    #[test]
    fn round_trips_losslessly() {
        for kind in ScenarioKind::ALL {
            let mut cfg = ScenarioConfig::defaults(kind);
            cfg.master_seed = u64::MAX - 3;
            cfg.guidance.epsilon = NodeRegularizer::Absolute(1.0e-13 / 3.0);
            let text = cfg.to_json().unwrap();
            assert_eq!(validate_config(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn reflecting_grid_cannot_evolve_psi() {
        let issues = validate_config(
            r#"{"scenario": "free_packet", "grid": [{"min": -20, "max": 20, "points": 512, "boundary": "reflecting"}]}"#,
        )
        .unwrap_err();
        assert!(issues.iter().any(|i| i.path == "psi_evolution"));
    }

    #[test]
    fn malformed_json_is_one_issue() {
        assert_eq!(validate_config("{").unwrap_err().len(), 1);
        assert_eq!(validate_config("[1]").unwrap_err()[0].path, "$");
    }
}
