use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64;

use crate::analysis::{
    independence_test, kramers_prediction, mfpt_estimate, residual_point,
    write_mfpt_csv, write_residual_csv, MfptRow, Region, ResidualPoint,
};
use crate::error::{Error, Result};
use crate::grid::{point, DensityField, Grid, ScalarField, WaveField};
use crate::guidance::{detect_nodes, drift_field, regularized_density, GuidanceParams, NodePlane};
use crate::langevin::{
    first_passage_campaign, run_ensemble, write_paths_csv, DriftSchedule, DriftSource, EnsembleConfig,
    EnsembleResult, InitialSampler, PassageCampaign, StaticDrift, StopPredicate,
};
use crate::schrodinger::{evolve, make_double_gaussian, make_packet, DoubleGaussianParams, HamiltonianSpec};
use crate::smoluchowski::{fp_evolve, FpOperator, FpOptions, Stepping};
use crate::snapshot;

use super::config::{InitialConfig, PotentialSpec, ScenarioConfig, ScenarioKind};
use super::manifest::{file_entry, Check, Relation, RunManifest, RunMode};

/// At most this many recorded paths go to `paths.csv`; all of them feed
/// the statistics.
pub const PATHS_CSV_LIMIT: usize = 32;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `config.output_dir` without changing the config echo.
    pub out_dir: Option<PathBuf>,
    /// Worker threads for the ensemble; 0 means one per core.
    pub workers: usize,
    pub mode: RunMode,
}

/// Everything a scenario computes, before anything is written.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub mode: RunMode,
    pub params: GuidanceParams,
    /// Ψ at the stored snapshot times (one entry for a static Ψ).
    pub snapshots: Vec<WaveField>,
    pub histogram_grid: Grid,
    pub ensemble: Option<EnsembleResult>,
    /// Smoluchowski densities at the checkpoints and `t_final`.
    pub fp: Option<Vec<DensityField>>,
    /// Langevin histogram against (|Ψ|²+ε)/Z.
    pub residuals: Vec<ResidualPoint>,
    /// Langevin histogram against the Smoluchowski density.
    pub fp_residuals: Vec<ResidualPoint>,
    /// Smoluchowski density against (|Ψ|²+ε)/Z.
    pub oracle: Vec<ResidualPoint>,
    pub mfpt: Vec<MfptRow>,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

impl ScenarioRun {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed != Some(false))
    }

    /// Normalised (|Ψ|²+ε) at the stored snapshot nearest `t`, on the
    /// histogram grid.
    pub fn reference_at(&self, t: f64) -> Result<DensityField> {
        reference(&self.snapshots, &self.params, t, Some(&self.histogram_grid), self.config.histogram_coarsen)
    }
}

pub fn build_hamiltonian(config: &ScenarioConfig, grid: &Grid) -> Result<HamiltonianSpec> {
    let h = &config.hamiltonian;
    let spec = HamiltonianSpec::free(grid.dims())
        .with_hbar(h.hbar)
        .with_mass(h.mass.clone());
    match &h.potential {
        PotentialSpec::Free => Ok(spec),
        PotentialSpec::Harmonic { omega } => {
            let u = ScalarField::from_fn(grid.clone(), 0.0, |x| {
                omega
                    .iter()
                    .zip(&h.mass)
                    .enumerate()
                    .map(|(k, (w, m))| 0.5 * m * w * w * x[k] * x[k])
                    .sum()
            })?;
            spec.with_potential(u)
        }
    }
}

fn oscillator_widths(config: &ScenarioConfig) -> Vec<f64> {
    let h = &config.hamiltonian;
    match &h.potential {
        PotentialSpec::Harmonic { omega } => omega.iter().zip(&h.mass).map(|(w, m)| (h.hbar / (m * w)).sqrt()).collect(),
        PotentialSpec::Free => vec![1.0; config.dims()],
    }
}

fn missing(key: &str) -> Error {
    Error::InvalidArgument(format!("state.{key} is required for this scenario"))
}

/// Normalised Ψ(·, 0) for the configured scenario.
pub fn initial_wave(config: &ScenarioConfig, grid: &Grid) -> Result<WaveField> {
    let s = &config.state;
    let psi = match config.scenario {
        ScenarioKind::DoubleWell => {
            let p = DoubleGaussianParams::new(s.a.ok_or_else(|| missing("a"))?, s.b.ok_or_else(|| missing("b"))?)?;
            make_double_gaussian(grid, p)?
        }
        ScenarioKind::Interference => {
            let w = s.width.ok_or_else(|| missing("width"))?;
            let d = s.separation.ok_or_else(|| missing("separation"))?;
            let k = s.momentum.clone().ok_or_else(|| missing("momentum"))?;
            let minus_k: Vec<f64> = k.iter().map(|v| -v).collect();
            let dims = grid.dims();
            let left = make_packet(grid, &vec![-d; dims], w, &k)?;
            let right = make_packet(grid, &vec![d; dims], w, &minus_k)?;
            let rot = Complex64::from_polar(1.0, s.phase.unwrap_or(0.0));
            let values = left.values().iter().zip(right.values()).map(|(a, b)| a + rot * b).collect();
            WaveField::new(grid.clone(), values, 0.0)?
        }
        ScenarioKind::HarmonicGround | ScenarioKind::AdiabaticTracking => {
            let widths = oscillator_widths(config);
            let shift = match config.scenario {
                ScenarioKind::AdiabaticTracking => s.displacement.clone().ok_or_else(|| missing("displacement"))?,
                _ => vec![0.0; grid.dims()],
            };
            WaveField::from_fn(grid.clone(), 0.0, |x| {
                let e: f64 = (0..grid.dims()).map(|k| (x[k] - shift[k]).powi(2) / (2.0 * widths[k] * widths[k])).sum();
                Complex64::new((-e).exp(), 0.0)
            })?
        }
        ScenarioKind::ProductSeparation => {
            let p = DoubleGaussianParams::new(s.a.ok_or_else(|| missing("a"))?, s.b.ok_or_else(|| missing("b"))?)?;
            let wy = s.y_width.ok_or_else(|| missing("y_width"))?;
            WaveField::from_fn(grid.clone(), 0.0, |x| {
                Complex64::new(p.eval(x[0]) * (-x[1] * x[1] / (2.0 * wy * wy)).exp(), 0.0)
            })?
        }
        ScenarioKind::FreePacket => {
            let w = s.width.ok_or_else(|| missing("width"))?;
            let c = s.center.clone().ok_or_else(|| missing("center"))?;
            let k = s.momentum.clone().ok_or_else(|| missing("momentum"))?;
            make_packet(grid, &c, w, &k)?
        }
    };
    Ok(psi.normalized())
}

pub fn guidance_params(config: &ScenarioConfig) -> GuidanceParams {
    let mut p = GuidanceParams::new(config.lambda()).with_epsilon(config.guidance.epsilon);
    if let Some(cap) = config.guidance.drift_cap {
        p = p.with_drift_cap(cap);
    }
    p
}

/// Initial Particle density on the simulation grid: a one-cell spike for a
/// point start, |Ψ(·,0)|², or a normalised Gaussian.
pub fn initial_density(config: &ScenarioConfig, grid: &Grid, psi0: &WaveField) -> Result<DensityField> {
    match &config.initial {
        InitialConfig::PsiDensity => psi0.density().normalized(),
        InitialConfig::Point { x } => {
            let (cell, _) = grid.cell_of(&point(x));
            let mut values = vec![0.0; grid.len()];
            values[cell] = 1.0 / grid.cell_volume();
            DensityField::new(grid.clone(), values, 0.0)
        }
        InitialConfig::Gaussian { center, width } => DensityField::from_fn(grid.clone(), 0.0, |x| {
            let r2: f64 = center.iter().enumerate().map(|(k, c)| (x[k] - c).powi(2)).sum();
            (-r2 / (2.0 * width * width)).exp()
        })?
        .normalized(),
    }
}

fn sampler(config: &ScenarioConfig, p0: &DensityField) -> Result<InitialSampler> {
    match &config.initial {
        InitialConfig::Point { x } => Ok(InitialSampler::Point(point(x))),
        _ => InitialSampler::density(p0),
    }
}

fn nearest_snapshot(snapshots: &[WaveField], t: f64) -> &WaveField {
    snapshots
        .iter()
        .min_by(|a, b| (a.time() - t).abs().total_cmp(&(b.time() - t).abs()))
        .expect("at least one snapshot")
}

fn reference(
    snapshots: &[WaveField],
    params: &GuidanceParams,
    t: f64,
    coarse: Option<&Grid>,
    factor: usize,
) -> Result<DensityField> {
    let (rho, _) = regularized_density(nearest_snapshot(snapshots, t), params);
    let rho = rho.normalized()?.with_time(t);
    match coarse {
        Some(_) if factor > 1 => rho.coarsen(factor),
        _ => Ok(rho),
    }
}

fn on_grid(p: &DensityField, factor: usize) -> Result<DensityField> {
    if factor > 1 {
        p.coarsen(factor)
    } else {
        Ok(p.clone())
    }
}

fn wells(config: &ScenarioConfig, grid: &Grid) -> Option<Vec<Region>> {
    if config.scenario != ScenarioKind::DoubleWell {
        return None;
    }
    let edge = config.state.well_edge.unwrap_or(1.0) * config.state.b?;
    let ax = grid.axis(0);
    Some(vec![
        Region { axis: 0, lo: ax.min, hi: -edge },
        Region { axis: 0, lo: edge, hi: ax.max },
    ])
}

fn registered_nodes(config: &ScenarioConfig, snapshots: &[WaveField]) -> Result<Vec<Vec<NodePlane>>> {
    match &config.node_detection {
        Some(opts) => snapshots.iter().map(|psi| detect_nodes(psi, opts)).collect(),
        None => Ok(vec![Vec::new(); snapshots.len()]),
    }
}

fn drift_source(
    config: &ScenarioConfig,
    snapshots: &[WaveField],
    params: &GuidanceParams,
    nodes: Vec<Vec<NodePlane>>,
) -> Result<Box<dyn DriftSource>> {
    if snapshots.len() == 1 {
        let field = drift_field(&snapshots[0], params)?;
        let nodes = nodes.into_iter().next().unwrap_or_default();
        return Ok(Box::new(StaticDrift { field, nodes }));
    }
    Ok(Box::new(
        DriftSchedule::from_waves(snapshots, params, config.interpolation)?.with_nodes(nodes)?,
    ))
}

fn fp_step_size(config: &ScenarioConfig, snapshots: &[WaveField], params: &GuidanceParams) -> Result<f64> {
    if let Some(dt) = config.fp.dt {
        return Ok(dt);
    }
    match config.fp.stepping {
        Stepping::Explicit => {
            // outflow rates are convex in ΔV, so linear interpolation between
            // snapshots never exceeds the larger endpoint rate
            let mut limit = f64::INFINITY;
            for psi in snapshots {
                limit = limit.min(FpOperator::from_wave(psi, params, config.fp.scheme)?.stable_dt());
            }
            Ok(0.9 * limit)
        }
        Stepping::Implicit => {
            let cap = config.t_final / 1000.0;
            Ok(if snapshots.len() > 1 { cap.min(config.snapshot_spacing()) } else { cap })
        }
    }
}

fn fraction(count: usize, n: usize) -> f64 {
    count as f64 / n as f64
}

/// Runs the configured scenario in memory on the current rayon pool.
pub fn simulate(config: &ScenarioConfig, mode: RunMode) -> Result<ScenarioRun> {
    let grid = config.build_grid()?;
    let params = guidance_params(config);
    params.validate()?;
    let hist_grid = grid.coarsen(config.histogram_coarsen)?;
    let factor = config.histogram_coarsen;
    let mut metrics = BTreeMap::new();
    metrics.insert("lambda".to_string(), params.lambda);

    let psi0 = initial_wave(config, &grid)?;
    let snapshots = if config.psi_evolution {
        let h = build_hamiltonian(config, &grid)?;
        log::info!("evolving Ψ to t={} with dt={}", config.t_final, config.dt);
        evolve(&psi0, &h, config.t_final, config.dt, config.snapshot_stride)?
    } else {
        vec![psi0.clone()]
    };
    let n0 = psi0.norm_squared();
    let drift = snapshots
        .iter()
        .map(|s| (s.norm_squared() / n0 - 1.0).abs())
        .fold(0.0, f64::max);
    metrics.insert("psi_norm_drift".to_string(), drift);

    let nodes = registered_nodes(config, &snapshots)?;
    if config.node_detection.is_some() {
        let total: usize = nodes.iter().map(Vec::len).sum();
        let with = nodes.iter().filter(|n| !n.is_empty()).count();
        metrics.insert("node_planes_mean".to_string(), total as f64 / nodes.len() as f64);
        metrics.insert("node_snapshot_fraction".to_string(), fraction(with, nodes.len()));
    }

    let p0 = initial_density(config, &grid, &psi0)?;
    let mut times = config.checkpoints.clone();
    times.push(config.t_final);

    let ensemble = if mode == RunMode::FpOnly {
        None
    } else {
        let source = drift_source(config, &snapshots, &params, nodes.clone())?;
        let cfg = EnsembleConfig {
            n: config.trajectories,
            sampler: sampler(config, &p0)?,
            params,
            dt: config.dt_langevin,
            t_start: 0.0,
            t_final: config.t_final,
            checkpoints: config.checkpoints.clone(),
            histogram_grid: hist_grid.clone(),
            master_seed: config.master_seed,
            record_paths: config.record_paths,
            wells: wells(config, &grid),
        };
        log::info!("running {} trajectories with dt={}", cfg.n, cfg.dt);
        Some(run_ensemble(&cfg, source.as_ref())?)
    };

    let fp = if mode == RunMode::EnsembleOnly || !config.fp.enabled {
        None
    } else {
        let dt = fp_step_size(config, &snapshots, &params)?;
        let opts = FpOptions {
            dt,
            scheme: config.fp.scheme,
            stepping: config.fp.stepping,
            interpolation: config.interpolation,
        };
        log::info!("Smoluchowski solve with dt={dt}");
        Some(fp_evolve(&p0, &snapshots, &params, &opts, &times)?)
    };

    let mut residuals = Vec::new();
    let mut fp_residuals = Vec::new();
    let mut oracle = Vec::new();
    if let Some(ens) = &ensemble {
        let hists = ens.checkpoints.iter().map(|c| &c.histogram).chain(std::iter::once(&ens.histogram));
        for (t, h) in times.iter().zip(hists) {
            let r = reference(&snapshots, &params, *t, Some(&hist_grid), factor)?;
            residuals.push(residual_point(*t, h, &r)?);
            if let Some(fp) = &fp {
                let j = times.iter().position(|s| s == t).expect("same times");
                fp_residuals.push(residual_point(*t, h, &on_grid(&fp[j], factor)?)?);
            }
        }
        let last = residuals.last().expect("final residual");
        metrics.insert("tv_equilibrium".to_string(), last.tv);
        metrics.insert(
            "tv_residual_max".to_string(),
            residuals.iter().map(|r| r.tv).fold(0.0, f64::max),
        );
        if !fp_residuals.is_empty() {
            metrics.insert(
                "tv_fp_max".to_string(),
                fp_residuals.iter().map(|r| r.tv).fold(0.0, f64::max),
            );
        }
        metrics.insert("clamped_points".to_string(), ens.clamped as f64);
        let n = ens.final_states.len();
        if config.node_detection.is_some() {
            let crossings = ens.crossings();
            metrics.insert(
                "zero_crossing_fraction".to_string(),
                fraction(crossings.iter().filter(|&&c| c == 0).count(), n),
            );
            metrics.insert(
                "crossings_mean".to_string(),
                crossings.iter().sum::<u64>() as f64 / n as f64,
            );
        }
        if let Some(jumps) = &ens.jumps {
            metrics.insert("no_jump_fraction".to_string(), fraction(jumps.iter().filter(|&&j| j == 0).count(), n));
            metrics.insert("jumps_mean".to_string(), jumps.iter().sum::<usize>() as f64 / n as f64);
        }
        if let (ScenarioKind::DoubleWell, InitialConfig::Point { x }) = (config.scenario, &config.initial) {
            let side = x[0].signum();
            let stayed = ens.final_states.iter().filter(|s| s.x[0] * side > 0.0).count();
            metrics.insert("start_well_mass".to_string(), fraction(stayed, n));
        }
        if !ens.paths.is_empty() && grid.dims() == 2 {
            let report = independence_test(&ens.paths, [0.0, 0.0])?;
            if let Some(c) = report.increments {
                metrics.insert("increment_rho".to_string(), c.rho);
                metrics.insert("increment_z".to_string(), c.z.abs());
                metrics.insert("increment_samples".to_string(), c.samples as f64);
            }
            if let Some(c) = report.occupancy {
                metrics.insert("occupancy_rho".to_string(), c.rho);
            }
        }
    }
    if let Some(fp) = &fp {
        let m0 = p0.integral();
        let mut mass = 0.0f64;
        for (t, p) in times.iter().zip(fp) {
            mass = mass.max((p.integral() - m0).abs());
            let r = reference(&snapshots, &params, *t, None, 1)?;
            oracle.push(residual_point(*t, p, &r)?);
        }
        metrics.insert("fp_mass_error".to_string(), mass);
        metrics.insert("fp_tv_equilibrium".to_string(), oracle.last().expect("final").tv);
    }

    let mut mfpt = Vec::new();
    if let (Some(m), InitialConfig::Point { x }) = (&config.mfpt, &config.initial) {
        if mode != RunMode::FpOnly {
            let p = DoubleGaussianParams::new(
                config.state.a.ok_or_else(|| missing("a"))?,
                config.state.b.ok_or_else(|| missing("b"))?,
            )?;
            let predicted = kramers_prediction(&p, params.lambda);
            let side = x[0].signum();
            let source = drift_source(config, &snapshots, &params, nodes.clone())?;
            let campaign = PassageCampaign {
                n: m.trajectories,
                start: point(x),
                params,
                dt: m.dt_langevin.unwrap_or(config.dt_langevin),
                predicate: StopPredicate::Reaches {
                    axis: 0,
                    threshold: -side * m.target_fraction * p.b,
                    above: side < 0.0,
                },
                t_max: m.t_max_factor * predicted,
                master_seed: config.master_seed,
            };
            log::info!("first-passage campaign: {} runs, cap {}", campaign.n, campaign.t_max);
            let results = first_passage_campaign(&campaign, source.as_ref())?;
            let est = mfpt_estimate(&results, Some(predicted));
            metrics.insert("kramers_prediction".to_string(), predicted);
            metrics.insert("mfpt_censored_fraction".to_string(), est.censored_fraction);
            if let Some(v) = est.mean {
                metrics.insert("mfpt_mean".to_string(), v);
            }
            if let Some(v) = est.standard_error {
                metrics.insert("mfpt_standard_error".to_string(), v);
            }
            if let Some(r) = est.prediction_ratio {
                metrics.insert("mfpt_ratio".to_string(), r);
                metrics.insert("mfpt_factor".to_string(), r.max(1.0 / r));
            }
            mfpt.push(MfptRow {
                a: p.a,
                b: p.b,
                lambda: params.lambda,
                predicted,
                mean: est.mean,
                standard_error: est.standard_error,
                ratio: est.prediction_ratio,
                censored_fraction: est.censored_fraction,
            });
        }
    }

    let checks = evaluate_checks(config, &metrics);
    Ok(ScenarioRun {
        config: config.clone(),
        mode,
        params,
        snapshots,
        histogram_grid: hist_grid,
        ensemble,
        fp,
        residuals,
        fp_residuals,
        oracle,
        mfpt,
        metrics,
        checks,
    })
}

/// The configured thresholds, each evaluated against its metric.
pub fn evaluate_checks(config: &ScenarioConfig, metrics: &BTreeMap<String, f64>) -> Vec<Check> {
    let t = &config.thresholds;
    let table = [
        ("tv_equilibrium", "tv_equilibrium", Relation::Below, t.tv_equilibrium_max),
        ("tv_residual", "tv_residual_max", Relation::Below, t.tv_residual_max),
        ("tv_fp", "tv_fp_max", Relation::Below, t.tv_fp_max),
        ("norm_drift", "psi_norm_drift", Relation::Below, t.norm_drift_max),
        ("start_well_mass", "start_well_mass", Relation::Above, t.start_well_mass_min),
        ("no_jump_fraction", "no_jump_fraction", Relation::AtLeast, t.no_jump_fraction_min),
        ("zero_crossing_fraction", "zero_crossing_fraction", Relation::AtLeast, t.zero_crossing_fraction_min),
        ("increment_correlation", "increment_z", Relation::Below, t.increment_z_max),
        ("mfpt_factor", "mfpt_factor", Relation::AtMost, t.mfpt_factor_max),
    ];
    table
        .into_iter()
        .filter_map(|(name, metric, rel, thr)| {
            thr.map(|thr| Check::evaluate(name, metric, metrics.get(metric).copied(), rel, thr))
        })
        .collect()
}

struct Outputs {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.root.join(name);
        self.written.push(p.clone());
        p
    }

    fn lines(&mut self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(&path, e);
        writeln!(w, "{header}").map_err(io)?;
        for r in rows {
            writeln!(w, "{r}").map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn coord_header(dims: usize) -> String {
    ["x", "y", "z"][..dims].join(",")
}

fn write_outputs(run: &ScenarioRun, out: &mut Outputs) -> Result<()> {
    let fmt_opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    out.lines(
        "metrics.csv",
        "metric,value",
        run.metrics.iter().map(|(k, v)| format!("{k},{v}")),
    )?;
    out.lines(
        "checks.csv",
        "name,metric,value,relation,threshold,passed",
        run.checks.iter().map(|c| {
            let passed = c.passed.map_or_else(|| "skipped".to_string(), |p| p.to_string());
            let rel = serde_json::to_value(c.relation).ok().and_then(|v| v.as_str().map(str::to_string));
            format!(
                "{},{},{},{},{},{passed}",
                c.name,
                c.metric,
                fmt_opt(c.value),
                rel.unwrap_or_default(),
                c.threshold
            )
        }),
    )?;
    if !run.residuals.is_empty() {
        let p = out.path("residuals.csv");
        write_residual_csv(&p, &run.residuals)?;
    }
    if !run.fp_residuals.is_empty() {
        let p = out.path("fp_residuals.csv");
        write_residual_csv(&p, &run.fp_residuals)?;
    }
    if !run.oracle.is_empty() {
        let p = out.path("oracle.csv");
        write_residual_csv(&p, &run.oracle)?;
    }
    if !run.mfpt.is_empty() {
        let p = out.path("mfpt.csv");
        write_mfpt_csv(&p, &run.mfpt)?;
    }
    if let Some(ens) = &run.ensemble {
        if let Some(jumps) = &ens.jumps {
            out.lines(
                "jumps.csv",
                "stream_id,jumps",
                jumps.iter().enumerate().map(|(i, j)| format!("{i},{j}")),
            )?;
        }
        if run.config.node_detection.is_some() {
            out.lines(
                "crossings.csv",
                "stream_id,crossings",
                ens.final_states.iter().map(|s| format!("{},{}", s.noise.stream_id, s.crossings)),
            )?;
        }
        if !ens.paths.is_empty() {
            let p = out.path("paths.csv");
            write_paths_csv(&p, &ens.paths[..ens.paths.len().min(PATHS_CSV_LIMIT)])?;
        }
        let reference = run.reference_at(run.config.t_final)?;
        let fp_final = match &run.fp {
            Some(fp) => Some(on_grid(fp.last().expect("final"), run.config.histogram_coarsen)?),
            None => None,
        };
        let dims = run.histogram_grid.dims();
        let mut header = coord_header(dims);
        header.push_str(",langevin,psi");
        if fp_final.is_some() {
            header.push_str(",fp");
        }
        let rows = (0..run.histogram_grid.len()).map(|i| {
            let x = run.histogram_grid.node(i);
            let coords: Vec<String> = x[..dims].iter().map(f64::to_string).collect();
            let mut row = format!("{},{},{}", coords.join(","), ens.histogram.values()[i], reference.values()[i]);
            if let Some(f) = &fp_final {
                row.push_str(&format!(",{}", f.values()[i]));
            }
            row
        });
        out.lines("density_final.csv", &header, rows)?;
    }
    if run.config.write_snapshots {
        let dir = out.root.join("snapshots");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let first = &run.snapshots[0];
        let last = run.snapshots.last().expect("non-empty");
        out.written.extend(snapshot::write_wave(&dir.join("psi_initial"), first)?);
        out.written.extend(snapshot::write_wave(&dir.join("psi_final"), last)?);
        out.written
            .extend(snapshot::write_drift(&dir.join("drift_initial"), drift_field(first, &run.params)?.vectors())?);
        if let Some(ens) = &run.ensemble {
            out.written.extend(snapshot::write_density(&dir.join("density_final"), &ens.histogram)?);
        }
        if let Some(fp) = &run.fp {
            out.written.extend(snapshot::write_density(&dir.join("fp_final"), fp.last().expect("final"))?);
        }
    }
    Ok(())
}

fn jump_counts(run: &ScenarioRun) -> Vec<(usize, usize)> {
    let Some(jumps) = run.ensemble.as_ref().and_then(|e| e.jumps.as_ref()) else {
        return Vec::new();
    };
    let mut counts = BTreeMap::new();
    for &j in jumps {
        *counts.entry(j).or_insert(0usize) += 1;
    }
    counts.into_iter().collect()
}

/// Runs a scenario, writes every artifact plus `manifest.json` into the
/// output directory, and returns the manifest.
pub fn run_scenario(config: &ScenarioConfig, opts: &RunOptions) -> Result<RunManifest> {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let run = pool.install(|| simulate(config, opts.mode))?;

    let root = opts.out_dir.clone().unwrap_or_else(|| config.output_dir.clone());
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let mut out = Outputs {
        root: root.clone(),
        written: Vec::new(),
    };
    write_outputs(&run, &mut out)?;
    let files = out
        .written
        .iter()
        .map(|p| file_entry(&root, p))
        .collect::<Result<Vec<_>>>()?;

    let manifest = RunManifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: config.scenario,
        mode: opts.mode,
        config: config.clone(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        files,
        jump_counts: jump_counts(&run),
        passed: run.passed(),
        metrics: run.metrics,
        mfpt: run.mfpt,
        checks: run.checks,
    };
    manifest.write(&root)?;
    Ok(manifest)
}
