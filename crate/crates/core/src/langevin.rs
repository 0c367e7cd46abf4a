//! Euler–Maruyama integration of the guided Langevin equation
//!
//! ```text
//! dX = λ ∇ ln(|Ψ|² + ε) dt + √(2λ) dW
//! ```
//!
//! for single trajectories, parallel ensembles and first-passage campaigns.
//! Every trajectory draws from its own ChaCha stream keyed by
//! `(master_seed, stream_id)`, so results do not depend on how work is
//! scheduled across threads.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{histogram, OccupancyTracker, Region};
use crate::error::{Error, Result};
use crate::grid::{Boundary, DensityField, Grid, Point, MAX_DIMS};
use crate::guidance::{drift_field, DriftField, GuidanceParams, NodePlane, TemporalInterpolation};
use crate::grid::WaveField;

/// Identity of one white-noise stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl NoiseSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub fn stream(&self) -> NoiseStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        NoiseStream { rng }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryState {
    pub x: Point,
    pub t: f64,
    pub noise: NoiseSpec,
    /// Signed passages through registered node planes.
    pub crossings: u64,
    stream: NoiseStream,
}

impl TrajectoryState {
    pub fn new(x: Point, t: f64, noise: NoiseSpec) -> Self {
        Self {
            x,
            t,
            noise,
            crossings: 0,
            stream: noise.stream(),
        }
    }

    pub fn stream_mut(&mut self) -> &mut NoiseStream {
        &mut self.stream
    }
}

impl PartialEq for TrajectoryState {
    fn eq(&self, other: &Self) -> bool {
        self.x == other.x && self.t == other.t && self.noise == other.noise && self.crossings == other.crossings
    }
}

/// Anything that can supply the drift at a point and time.
pub trait DriftSource: Sync {
    fn grid(&self) -> &Grid;

    fn drift(&self, x: &Point, t: f64) -> Point;

    /// Node planes in effect at time `t`.
    fn nodes(&self, _t: f64) -> &[NodePlane] {
        &[]
    }

    /// Time interval over which the source is defined, if bounded.
    fn time_span(&self) -> Option<(f64, f64)> {
        None
    }

    /// Smallest spacing between successive snapshots, if time-dependent.
    fn min_spacing(&self) -> Option<f64> {
        None
    }
}

impl DriftSource for DriftField {
    fn grid(&self) -> &Grid {
        DriftField::grid(self)
    }

    fn drift(&self, x: &Point, _t: f64) -> Point {
        self.interpolate(x)
    }
}

/// Spatially uniform drift, for tests and free diffusion.
#[derive(Debug, Clone)]
pub struct ConstantDrift {
    pub grid: Grid,
    pub velocity: Point,
}

impl DriftSource for ConstantDrift {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn drift(&self, _x: &Point, _t: f64) -> Point {
        self.velocity
    }
}

/// A static drift field with node planes attached.
#[derive(Debug, Clone)]
pub struct StaticDrift {
    pub field: DriftField,
    pub nodes: Vec<NodePlane>,
}

impl DriftSource for StaticDrift {
    fn grid(&self) -> &Grid {
        self.field.grid()
    }

    fn drift(&self, x: &Point, _t: f64) -> Point {
        self.field.interpolate(x)
    }

    fn nodes(&self, _t: f64) -> &[NodePlane] {
        &self.nodes
    }
}

/// Drift fields built from a time-ordered sequence of Ψ snapshots.
#[derive(Debug, Clone)]
pub struct DriftSchedule {
    fields: Vec<DriftField>,
    times: Vec<f64>,
    mode: TemporalInterpolation,
    nodes: Vec<Vec<NodePlane>>,
}

impl DriftSchedule {
    pub fn new(fields: Vec<DriftField>, mode: TemporalInterpolation) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InvalidArgument("drift schedule needs at least one snapshot".into()));
        }
        for w in fields.windows(2) {
            w[0].grid().ensure_same(w[1].grid(), "drift schedule")?;
            if !(w[1].time() > w[0].time()) {
                return Err(Error::InvalidArgument("drift snapshots must have increasing times".into()));
            }
        }
        let times = fields.iter().map(DriftField::time).collect();
        let nodes = vec![Vec::new(); fields.len()];
        Ok(Self {
            fields,
            times,
            mode,
            nodes,
        })
    }

    pub fn from_waves(snapshots: &[WaveField], params: &GuidanceParams, mode: TemporalInterpolation) -> Result<Self> {
        let fields = snapshots
            .iter()
            .map(|psi| drift_field(psi, params))
            .collect::<Result<Vec<_>>>()?;
        Self::new(fields, mode)
    }

    /// Attaches one node list per snapshot.
    pub fn with_nodes(mut self, nodes: Vec<Vec<NodePlane>>) -> Result<Self> {
        if nodes.len() != self.fields.len() {
            return Err(Error::InvalidArgument(format!(
                "{} node lists for {} snapshots",
                nodes.len(),
                self.fields.len()
            )));
        }
        self.nodes = nodes;
        Ok(self)
    }

    pub fn fields(&self) -> &[DriftField] {
        &self.fields
    }

    pub fn mode(&self) -> TemporalInterpolation {
        self.mode
    }

    fn bracket(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t).saturating_sub(1)
    }
}

impl DriftSource for DriftSchedule {
    fn grid(&self) -> &Grid {
        self.fields[0].grid()
    }

    fn drift(&self, x: &Point, t: f64) -> Point {
        let j = self.bracket(t);
        let a = self.fields[j].interpolate(x);
        if self.mode == TemporalInterpolation::PiecewiseConstant || j + 1 == self.fields.len() {
            return a;
        }
        let w = ((t - self.times[j]) / (self.times[j + 1] - self.times[j])).clamp(0.0, 1.0);
        if w == 0.0 {
            return a;
        }
        let b = self.fields[j + 1].interpolate(x);
        let mut out = [0.0; MAX_DIMS];
        for k in 0..MAX_DIMS {
            out[k] = a[k] + w * (b[k] - a[k]);
        }
        out
    }

    fn nodes(&self, t: f64) -> &[NodePlane] {
        &self.nodes[self.bracket(t)]
    }

    fn time_span(&self) -> Option<(f64, f64)> {
        Some((self.times[0], *self.times.last().expect("non-empty")))
    }

    fn min_spacing(&self) -> Option<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).reduce(f64::min)
    }
}

/// Number of periodic images of `plane` strictly between `a` and `b`.
fn plane_passages(a: f64, b: f64, plane: f64, period: Option<f64>) -> u64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    match period {
        None => u64::from(lo < plane && plane < hi),
        Some(l) => {
            // integers m with lo < plane + m l < hi
            let first = ((lo - plane) / l).floor() as i64 + 1;
            let last = ((hi - plane) / l).ceil() as i64 - 1;
            (last - first + 1).max(0) as u64
        }
    }
}

/// One Euler–Maruyama step of length `dt`: `ΔX = v dt + √(2λ dt) η`.
pub fn step_em<S: DriftSource + ?Sized>(
    state: &mut TrajectoryState,
    source: &S,
    params: &GuidanceParams,
    dt: f64,
) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("Langevin step must be positive, got {dt}")));
    }
    if !(params.lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {}", params.lambda)));
    }
    let grid = source.grid();
    let dims = grid.dims();
    let v = source.drift(&state.x, state.t);
    let amp = (2.0 * params.lambda * dt).sqrt();
    let mut prop = state.x;
    for k in 0..dims {
        let eta = state.stream.normal();
        prop[k] = state.x[k] + v[k] * dt + amp * eta;
    }
    if prop[..dims].iter().any(|c| !c.is_finite()) {
        return Err(Error::IntegratorFailure {
            stream_id: state.noise.stream_id,
            x: state.x,
            t: state.t,
        });
    }
    for plane in source.nodes(state.t) {
        let ax = grid.axis(plane.axis);
        let period = (ax.boundary == Boundary::Periodic).then(|| ax.length());
        state.crossings += plane_passages(state.x[plane.axis], prop[plane.axis], plane.position, period);
    }
    grid.fold_point(&mut prop);
    state.x = prop;
    state.t += dt;
    Ok(())
}

/// Positions recorded along one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub stream_id: u64,
    pub dims: usize,
    pub times: Vec<f64>,
    pub points: Vec<Point>,
}

impl PathRecord {
    fn new(state: &TrajectoryState, dims: usize) -> Self {
        Self {
            stream_id: state.noise.stream_id,
            dims,
            times: vec![state.t],
            points: vec![state.x],
        }
    }

    fn push(&mut self, state: &TrajectoryState) {
        self.times.push(state.t);
        self.points.push(state.x);
    }
}

/// Writes `stream_id,t,x1..xN` rows.
pub fn write_paths_csv(path: &Path, records: &[PathRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let dims = records.first().map_or(1, |r| r.dims);
    let mut header = String::from("stream_id,t");
    for k in 1..=dims {
        header.push_str(&format!(",x{k}"));
    }
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for r in records {
        for (t, p) in r.times.iter().zip(&r.points) {
            write!(w, "{},{}", r.stream_id, t).map_err(io)?;
            for c in &p[..r.dims] {
                write!(w, ",{c}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn check_source_window<S: DriftSource + ?Sized>(source: &S, dt: f64, t_start: f64, t_end: f64) -> Result<()> {
    if let Some(spacing) = source.min_spacing() {
        if dt > spacing * (1.0 + 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "Langevin step {dt} exceeds the snapshot spacing {spacing}"
            )));
        }
    }
    if let Some((a, b)) = source.time_span() {
        let tol = 1e-9 * a.abs().max(b.abs()).max(1.0);
        if t_start < a - tol || t_end > b + tol {
            return Err(Error::OutOfBracket { t: t_end, start: a, end: b });
        }
    }
    Ok(())
}

/// Steps from `state.t` to exactly `t_target` in increments of `dt` (the
/// last one shortened), calling `observe` after every step.
fn advance_to<S: DriftSource + ?Sized>(
    state: &mut TrajectoryState,
    source: &S,
    params: &GuidanceParams,
    dt: f64,
    t_target: f64,
    observe: &mut dyn FnMut(&TrajectoryState),
) -> Result<usize> {
    let t0 = state.t;
    let span = t_target - t0;
    if span < -1e-12 * t0.abs().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "cannot integrate backwards from {t0} to {t_target}"
        )));
    }
    if span <= 0.0 {
        return Ok(0);
    }
    let steps = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
    for s in 1..=steps {
        let t_next = if s == steps { t_target } else { t0 + s as f64 * dt };
        step_em(state, source, params, t_next - state.t)?;
        state.t = t_next;
        observe(state);
    }
    Ok(steps)
}

/// Integrates one trajectory to `t_final`, optionally recording every
/// `record_stride`-th step (plus the first and last points).
pub fn simulate_trajectory<S: DriftSource + ?Sized>(
    initial: TrajectoryState,
    source: &S,
    params: &GuidanceParams,
    dt: f64,
    t_final: f64,
    record_stride: Option<usize>,
) -> Result<(TrajectoryState, Option<PathRecord>)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("Langevin step must be positive, got {dt}")));
    }
    check_source_window(source, dt, initial.t, t_final)?;
    let dims = source.grid().dims();
    let mut state = initial;
    let mut record = record_stride.map(|_| PathRecord::new(&state, dims));
    let stride = record_stride.unwrap_or(1).max(1);
    let mut count = 0usize;
    let steps = advance_to(&mut state, source, params, dt, t_final, &mut |s| {
        count += 1;
        if let Some(r) = record.as_mut() {
            if count % stride == 0 {
                r.push(s);
            }
        }
    })?;
    if let Some(r) = record.as_mut() {
        if steps % stride != 0 {
            r.push(&state);
        }
    }
    Ok((state, record))
}

/// Inverse-CDF sampler over the cells of a density, uniform inside a cell.
#[derive(Debug, Clone)]
pub struct DensitySampler {
    grid: Grid,
    cdf: Vec<f64>,
}

impl DensitySampler {
    pub fn new(p: &DensityField) -> Result<Self> {
        let mut acc = 0.0;
        let cdf: Vec<f64> = p
            .values()
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        if !(acc > 0.0) {
            return Err(Error::InvalidField("cannot sample from a density with zero mass".into()));
        }
        Ok(Self {
            grid: p.grid().clone(),
            cdf,
        })
    }

    pub fn sample(&self, stream: &mut NoiseStream) -> Point {
        let total = *self.cdf.last().expect("non-empty");
        let u = stream.uniform() * total;
        let cell = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let idx = self.grid.multi_index(cell);
        let mut x = [0.0; MAX_DIMS];
        for (k, a) in self.grid.axes().iter().enumerate() {
            let lo = a.min + idx[k] as f64 * a.spacing();
            x[k] = lo + stream.uniform() * a.spacing();
        }
        x
    }
}

#[derive(Debug, Clone)]
pub enum InitialSampler {
    /// Every trajectory starts at the same point.
    Point(Point),
    /// Positions drawn from a density on the grid.
    Density(DensitySampler),
}

impl InitialSampler {
    pub fn density(p: &DensityField) -> Result<Self> {
        Ok(InitialSampler::Density(DensitySampler::new(p)?))
    }

    fn draw(&self, stream: &mut NoiseStream) -> Point {
        match self {
            InitialSampler::Point(p) => *p,
            InitialSampler::Density(s) => s.sample(stream),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathRecording {
    pub stride: usize,
    /// Record streams `0..streams`.
    pub streams: usize,
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub n: usize,
    pub sampler: InitialSampler,
    pub params: GuidanceParams,
    pub dt: f64,
    pub t_start: f64,
    pub t_final: f64,
    /// Extra times (inside the run) at which positions are captured.
    pub checkpoints: Vec<f64>,
    pub histogram_grid: Grid,
    pub master_seed: u64,
    pub record_paths: Option<PathRecording>,
    /// Well regions for on-line occupancy tracking.
    pub wells: Option<Vec<Region>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetadata {
    pub n: usize,
    pub lambda: f64,
    pub dt: f64,
    pub steps: usize,
    pub master_seed: u64,
    pub t_start: f64,
    pub t_final: f64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub time: f64,
    pub positions: Vec<Point>,
    pub histogram: DensityField,
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub final_states: Vec<TrajectoryState>,
    pub histogram: DensityField,
    pub checkpoints: Vec<Checkpoint>,
    pub paths: Vec<PathRecord>,
    /// Well-to-well transitions per trajectory, when wells were given.
    pub jumps: Option<Vec<usize>>,
    /// Positions that fell outside the histogram grid.
    pub clamped: usize,
    pub metadata: EnsembleMetadata,
}

impl EnsembleResult {
    pub fn final_positions(&self) -> Vec<Point> {
        self.final_states.iter().map(|s| s.x).collect()
    }

    pub fn crossings(&self) -> Vec<u64> {
        self.final_states.iter().map(|s| s.crossings).collect()
    }
}

struct TrajectoryOutcome {
    state: TrajectoryState,
    checkpoints: Vec<Point>,
    path: Option<PathRecord>,
    jumps: Option<usize>,
    steps: usize,
}

fn run_one<S: DriftSource + ?Sized>(cfg: &EnsembleConfig, source: &S, stream_id: u64) -> Result<TrajectoryOutcome> {
    let dims = source.grid().dims();
    let noise = NoiseSpec::new(cfg.master_seed, stream_id);
    let mut state = TrajectoryState::new([0.0; MAX_DIMS], cfg.t_start, noise);
    state.x = cfg.sampler.draw(state.stream_mut());
    source.grid().fold_point(&mut state.x);

    let mut tracker = cfg.wells.as_ref().map(|w| OccupancyTracker::new(w.clone()));
    if let Some(t) = tracker.as_mut() {
        t.observe(state.t, &state.x);
    }
    let mut path = cfg
        .record_paths
        .filter(|r| (stream_id as usize) < r.streams)
        .map(|r| (r.stride.max(1), PathRecord::new(&state, dims)));
    let mut count = 0usize;
    let mut observe = |s: &TrajectoryState| {
        count += 1;
        if let Some(t) = tracker.as_mut() {
            t.observe(s.t, &s.x);
        }
        if let Some((stride, rec)) = path.as_mut() {
            if count % *stride == 0 {
                rec.push(s);
            }
        }
    };
    let mut captured = Vec::with_capacity(cfg.checkpoints.len());
    let mut steps = 0;
    for &tc in &cfg.checkpoints {
        steps += advance_to(&mut state, source, &cfg.params, cfg.dt, tc, &mut observe)?;
        captured.push(state.x);
    }
    steps += advance_to(&mut state, source, &cfg.params, cfg.dt, cfg.t_final, &mut observe)?;
    let jumps = tracker.map(|t| t.finish().jumps);
    let path = path.map(|(stride, mut rec)| {
        if steps % stride != 0 {
            rec.push(&state);
        }
        rec
    });
    Ok(TrajectoryOutcome {
        state,
        checkpoints: captured,
        path,
        jumps,
        steps,
    })
}

/// Runs `cfg.n` independent trajectories (stream ids `0..n`) on the current
/// rayon pool and aggregates them in stream order.
pub fn run_ensemble<S: DriftSource + ?Sized>(cfg: &EnsembleConfig, source: &S) -> Result<EnsembleResult> {
    if cfg.n == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one trajectory".into()));
    }
    if !(cfg.dt > 0.0) {
        return Err(Error::InvalidArgument(format!("Langevin step must be positive, got {}", cfg.dt)));
    }
    if cfg.t_final < cfg.t_start {
        return Err(Error::InvalidArgument("t_final precedes t_start".into()));
    }
    if cfg.checkpoints.windows(2).any(|w| w[1] < w[0])
        || cfg.checkpoints.iter().any(|&c| c < cfg.t_start || c > cfg.t_final)
    {
        return Err(Error::InvalidArgument(
            "checkpoints must be ascending and inside [t_start, t_final]".into(),
        ));
    }
    check_source_window(source, cfg.dt, cfg.t_start, cfg.t_final)?;

    let outcomes: Vec<Result<TrajectoryOutcome>> = (0..cfg.n as u64)
        .into_par_iter()
        .map(|id| run_one(cfg, source, id))
        .collect();
    let mut done = Vec::with_capacity(cfg.n);
    for o in outcomes {
        done.push(o?);
    }

    let finals: Vec<Point> = done.iter().map(|o| o.state.x).collect();
    let (hist, mut clamped) = histogram(&finals, &cfg.histogram_grid)?;
    let hist = hist.with_time(cfg.t_final);
    let mut checkpoints = Vec::with_capacity(cfg.checkpoints.len());
    for (j, &tc) in cfg.checkpoints.iter().enumerate() {
        let positions: Vec<Point> = done.iter().map(|o| o.checkpoints[j]).collect();
        let (h, c) = histogram(&positions, &cfg.histogram_grid)?;
        clamped += c;
        checkpoints.push(Checkpoint {
            time: tc,
            positions,
            histogram: h.with_time(tc),
        });
    }
    let steps = done.first().map_or(0, |o| o.steps);
    let jumps = cfg.wells.as_ref().map(|_| done.iter().map(|o| o.jumps.unwrap_or(0)).collect());
    let mut paths = Vec::new();
    let mut final_states = Vec::with_capacity(cfg.n);
    for o in done {
        if let Some(p) = o.path {
            paths.push(p);
        }
        final_states.push(o.state);
    }
    Ok(EnsembleResult {
        final_states,
        histogram: hist,
        checkpoints,
        paths,
        jumps,
        clamped,
        metadata: EnsembleMetadata {
            n: cfg.n,
            lambda: cfg.params.lambda,
            dt: cfg.dt,
            steps,
            master_seed: cfg.master_seed,
            t_start: cfg.t_start,
            t_final: cfg.t_final,
        },
    })
}

/// Stopping rule for first-passage runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StopPredicate {
    /// `x[axis] >= threshold` (or `<=` when `above` is false).
    Reaches { axis: usize, threshold: f64, above: bool },
    /// Inside the closed box `[lo, hi]` on the first `dims` axes.
    EntersBox { lo: Point, hi: Point },
}

impl StopPredicate {
    pub fn holds(&self, x: &Point, dims: usize) -> bool {
        match *self {
            StopPredicate::Reaches { axis, threshold, above } => {
                if above {
                    x[axis] >= threshold
                } else {
                    x[axis] <= threshold
                }
            }
            StopPredicate::EntersBox { lo, hi } => (0..dims).all(|k| x[k] >= lo[k] && x[k] <= hi[k]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstPassage {
    /// Elapsed time until the predicate first held.
    Escaped(f64),
    /// Predicate never held before the cap.
    Censored(f64),
}

impl FirstPassage {
    pub fn time(&self) -> f64 {
        match *self {
            FirstPassage::Escaped(t) | FirstPassage::Censored(t) => t,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, FirstPassage::Censored(_))
    }
}

/// Elapsed time until `predicate` first holds, checked after every step.
pub fn first_passage_time<S: DriftSource + ?Sized>(
    initial: TrajectoryState,
    source: &S,
    params: &GuidanceParams,
    dt: f64,
    predicate: &StopPredicate,
    t_max: f64,
) -> Result<FirstPassage> {
    if !(dt > 0.0) || !(t_max > 0.0) {
        return Err(Error::InvalidArgument("dt and t_max must be positive".into()));
    }
    let dims = source.grid().dims();
    let mut state = initial;
    let t0 = state.t;
    if predicate.holds(&state.x, dims) {
        return Ok(FirstPassage::Escaped(0.0));
    }
    let steps = (t_max / dt).ceil() as u64;
    for s in 1..=steps {
        step_em(&mut state, source, params, dt)?;
        state.t = t0 + s as f64 * dt;
        if predicate.holds(&state.x, dims) {
            return Ok(FirstPassage::Escaped(state.t - t0));
        }
    }
    Ok(FirstPassage::Censored(t_max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassageCampaign {
    pub n: usize,
    pub start: Point,
    pub params: GuidanceParams,
    pub dt: f64,
    pub predicate: StopPredicate,
    pub t_max: f64,
    pub master_seed: u64,
}

/// `n` first-passage runs from the same start, one noise stream each.
pub fn first_passage_campaign<S: DriftSource + ?Sized>(
    campaign: &PassageCampaign,
    source: &S,
) -> Result<Vec<FirstPassage>> {
    let results: Vec<Result<FirstPassage>> = (0..campaign.n as u64)
        .into_par_iter()
        .map(|id| {
            let st = TrajectoryState::new(campaign.start, 0.0, NoiseSpec::new(campaign.master_seed, id));
            first_passage_time(st, source, &campaign.params, campaign.dt, &campaign.predicate, campaign.t_max)
        })
        .collect();
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{point, Axis};

    fn box_1d(boundary: Boundary) -> Grid {
        Grid::line(-100.0, 100.0, 64, boundary).unwrap()
    }

    fn still(grid: Grid) -> ConstantDrift {
        ConstantDrift {
            grid,
            velocity: [0.0; MAX_DIMS],
        }
    }

    #[test]
    fn no_noise_no_drift_stays_put() {
        let src = still(box_1d(Boundary::Periodic));
        let mut s = TrajectoryState::new(point(&[1.25]), 0.0, NoiseSpec::new(1, 2));
        let params = GuidanceParams::new(0.0);
        for _ in 0..100 {
            step_em(&mut s, &src, &params, 0.01).unwrap();
        }
        assert_eq!(s.x[0], 1.25);
        assert!((s.t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_drift_limit() {
        let src = ConstantDrift {
            grid: box_1d(Boundary::Reflecting),
            velocity: point(&[2.5]),
        };
        let mut s = TrajectoryState::new(point(&[0.5]), 0.0, NoiseSpec::new(0, 0));
        step_em(&mut s, &src, &GuidanceParams::new(0.0), 0.1).unwrap();
        assert_eq!(s.x[0], 0.5 + 2.5 * 0.1);
    }

    #[test]
    fn increments_match_white_noise_moments() {
        let g = Grid::new(vec![Axis::new(-1e6, 1e6, 8, Boundary::Periodic); 2]).unwrap();
        let src = still(g);
        let lambda = 0.7;
        let dt = 0.01;
        let params = GuidanceParams::new(lambda);
        let mut s = TrajectoryState::new([0.0; MAX_DIMS], 0.0, NoiseSpec::new(99, 5));
        let n = 100_000;
        let mut dx = Vec::with_capacity(n);
        let mut dy = Vec::with_capacity(n);
        for _ in 0..n {
            let before = s.x;
            step_em(&mut s, &src, &params, dt).unwrap();
            dx.push(s.x[0] - before[0]);
            dy.push(s.x[1] - before[1]);
        }
        let var = 2.0 * lambda * dt;
        let sd = var.sqrt();
        let nf = n as f64;
        for d in [&dx, &dy] {
            let mean = d.iter().sum::<f64>() / nf;
            let v = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            assert!(mean.abs() < 3.0 * sd / nf.sqrt());
            assert!((v / var - 1.0).abs() < 0.03, "var ratio {}", v / var);
        }
        let cov = dx.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>() / nf;
        assert!(cov.abs() < 3.0 * var / nf.sqrt());
    }

    #[test]
    fn same_noise_spec_same_path() {
        let g = Grid::line(-6.0, 6.0, 128, Boundary::Periodic).unwrap();
        let psi = crate::schrodinger::make_packet(&g, &[0.0], 1.0, &[0.0]).unwrap();
        let params = GuidanceParams::new(1.0);
        let d = drift_field(&psi, &params).unwrap();
        let start = TrajectoryState::new(point(&[0.3]), 0.0, NoiseSpec::new(7, 3));
        let (a, pa) = simulate_trajectory(start.clone(), &d, &params, 0.01, 5.0, Some(1)).unwrap();
        let (b, pb) = simulate_trajectory(start.clone(), &d, &params, 0.01, 5.0, Some(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(pa.unwrap().points.len(), 501);
        let (c, _) = simulate_trajectory(start, &d, &params, 0.01, 0.0, None).unwrap();
        assert_eq!(c.x[0], 0.3);
        assert_eq!(c.t, 0.0);
    }

    #[test]
    fn different_streams_differ() {
        let src = still(box_1d(Boundary::Periodic));
        let params = GuidanceParams::new(1.0);
        let mut a = TrajectoryState::new([0.0; MAX_DIMS], 0.0, NoiseSpec::new(1, 0));
        let mut b = TrajectoryState::new([0.0; MAX_DIMS], 0.0, NoiseSpec::new(1, 1));
        step_em(&mut a, &src, &params, 1.0).unwrap();
        step_em(&mut b, &src, &params, 1.0).unwrap();
        assert_ne!(a.x, b.x);
    }

    #[test]
    fn reflecting_walls_fold_back() {
        let g = Grid::line(0.0, 1.0, 16, Boundary::Reflecting).unwrap();
        let src = ConstantDrift {
            grid: g,
            velocity: point(&[3.0]),
        };
        let mut s = TrajectoryState::new(point(&[0.9]), 0.0, NoiseSpec::new(0, 0));
        step_em(&mut s, &src, &GuidanceParams::new(0.0), 0.1).unwrap();
        assert!((s.x[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn periodic_walls_wrap() {
        let g = Grid::line(0.0, 1.0, 16, Boundary::Periodic).unwrap();
        let src = ConstantDrift {
            grid: g,
            velocity: point(&[3.0]),
        };
        let mut s = TrajectoryState::new(point(&[0.9]), 0.0, NoiseSpec::new(0, 0));
        step_em(&mut s, &src, &GuidanceParams::new(0.0), 0.1).unwrap();
        assert!((s.x[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn blowup_is_reported_with_stream() {
        let src = ConstantDrift {
            grid: box_1d(Boundary::Periodic),
            velocity: point(&[f64::INFINITY]),
        };
        let mut s = TrajectoryState::new(point(&[0.0]), 0.0, NoiseSpec::new(0, 42));
        match step_em(&mut s, &src, &GuidanceParams::new(1.0), 0.1) {
            Err(Error::IntegratorFailure { stream_id, .. }) => assert_eq!(stream_id, 42),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn node_crossings_are_counted() {
        let field = DriftField::clone(
            &drift_field(
                &WaveField::from_fn(Grid::line(0.0, 1.0, 16, Boundary::Periodic).unwrap(), 0.0, |_| {
                    num_complex::Complex64::new(1.0, 0.0)
                })
                .unwrap(),
                &GuidanceParams::new(1.0),
            )
            .unwrap(),
        );
        let src = StaticDrift {
            field,
            nodes: vec![NodePlane { axis: 0, position: 0.5 }],
        };
        let mut s = TrajectoryState::new(point(&[0.45]), 0.0, NoiseSpec::new(0, 0));
        // zero-λ walk across the node and once around the torus
        let params = GuidanceParams::new(0.0);
        let src2 = ConstantDrift {
            grid: src.field.grid().clone(),
            velocity: point(&[1.1]),
        };
        struct WithNodes<'a>(&'a ConstantDrift, &'a [NodePlane]);
        impl DriftSource for WithNodes<'_> {
            fn grid(&self) -> &Grid {
                &self.0.grid
            }
            fn drift(&self, x: &Point, t: f64) -> Point {
                self.0.drift(x, t)
            }
            fn nodes(&self, _t: f64) -> &[NodePlane] {
                self.1
            }
        }
        let w = WithNodes(&src2, &src.nodes);
        step_em(&mut s, &w, &params, 0.1).unwrap();
        assert_eq!(s.crossings, 1);
        step_em(&mut s, &w, &params, 1.0).unwrap();
        assert_eq!(s.crossings, 2);
        assert_eq!(plane_passages(0.0, 2.5, 0.5, Some(1.0)), 2);
        assert_eq!(plane_passages(0.2, 0.4, 0.5, Some(1.0)), 0);
        assert_eq!(plane_passages(0.6, -0.6, 0.5, Some(1.0)), 2);
    }

    #[test]
    fn schedule_rejects_coarse_steps_and_late_times() {
        let g = Grid::line(-5.0, 5.0, 64, Boundary::Periodic).unwrap();
        let params = GuidanceParams::new(1.0);
        let waves: Vec<WaveField> = (0..3)
            .map(|j| {
                let mut p = crate::schrodinger::make_packet(&g, &[0.1 * j as f64], 1.0, &[0.0]).unwrap();
                p.set_time(0.1 * j as f64);
                p
            })
            .collect();
        let sched = DriftSchedule::from_waves(&waves, &params, TemporalInterpolation::Linear).unwrap();
        let st = TrajectoryState::new(point(&[0.0]), 0.0, NoiseSpec::new(0, 0));
        assert!(simulate_trajectory(st.clone(), &sched, &params, 0.2, 0.2, None).is_err());
        assert!(simulate_trajectory(st.clone(), &sched, &params, 0.01, 0.3, None).is_err());
        assert!(simulate_trajectory(st, &sched, &params, 0.01, 0.2, None).is_ok());
    }

    #[test]
    fn density_sampler_stays_in_support() {
        let g = Grid::line(0.0, 4.0, 8, Boundary::Reflecting).unwrap();
        let mut vals = vec![0.0; 8];
        vals[5] = 1.0;
        let s = DensitySampler::new(&DensityField::new(g, vals, 0.0).unwrap()).unwrap();
        let mut stream = NoiseSpec::new(3, 3).stream();
        for _ in 0..1000 {
            let x = s.sample(&mut stream)[0];
            assert!((2.5..3.0).contains(&x));
        }
    }

    #[test]
    fn single_member_ensemble_matches_trajectory() {
        let g = Grid::line(-6.0, 6.0, 96, Boundary::Periodic).unwrap();
        let psi = crate::schrodinger::make_packet(&g, &[0.0], 1.0, &[0.0]).unwrap();
        let params = GuidanceParams::new(2.0);
        let d = drift_field(&psi, &params).unwrap();
        let cfg = EnsembleConfig {
            n: 1,
            sampler: InitialSampler::Point(point(&[1.0])),
            params,
            dt: 0.005,
            t_start: 0.0,
            t_final: 3.0,
            checkpoints: vec![],
            histogram_grid: g.clone(),
            master_seed: 11,
            record_paths: None,
            wells: None,
        };
        let ens = run_ensemble(&cfg, &d).unwrap();
        let (single, _) = simulate_trajectory(
            TrajectoryState::new(point(&[1.0]), 0.0, NoiseSpec::new(11, 0)),
            &d,
            &params,
            0.005,
            3.0,
            None,
        )
        .unwrap();
        assert_eq!(ens.final_states[0], single);
        assert!((ens.histogram.integral() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn first_passage_at_start_is_zero() {
        let src = still(box_1d(Boundary::Reflecting));
        let pred = StopPredicate::Reaches {
            axis: 0,
            threshold: 0.0,
            above: true,
        };
        let st = TrajectoryState::new(point(&[0.0]), 0.0, NoiseSpec::new(0, 0));
        let fp = first_passage_time(st, &src, &GuidanceParams::new(1.0), 0.01, &pred, 10.0).unwrap();
        assert_eq!(fp, FirstPassage::Escaped(0.0));
    }

    #[test]
    fn unreachable_target_is_censored() {
        let src = still(box_1d(Boundary::Reflecting));
        let pred = StopPredicate::EntersBox {
            lo: point(&[50.0]),
            hi: point(&[60.0]),
        };
        let st = TrajectoryState::new(point(&[0.0]), 0.0, NoiseSpec::new(0, 0));
        let fp = first_passage_time(st, &src, &GuidanceParams::new(0.01), 0.1, &pred, 5.0).unwrap();
        assert_eq!(fp, FirstPassage::Censored(5.0));
    }
}
