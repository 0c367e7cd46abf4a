//! Statistics over ensembles and densities: histograms, total-variation
//! residuals, the Kramers escape-time predictor, MFPT estimates, well
//! occupancy, relaxation fits and increment-correlation tests.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid, Point};
use crate::langevin::{FirstPassage, PathRecord};
use crate::schrodinger::DoubleGaussianParams;

/// Normalised histogram of `points` on the cells of `grid`.
///
/// Points outside the box are counted in the nearest boundary cell; the
/// second value is how many needed that.
pub fn histogram(points: &[Point], grid: &Grid) -> Result<(DensityField, usize)> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("histogram needs at least one point".into()));
    }
    let mut counts = vec![0u64; grid.len()];
    let mut clamped = 0;
    for p in points {
        let (cell, c) = grid.cell_of(p);
        counts[cell] += 1;
        clamped += usize::from(c);
    }
    let scale = 1.0 / (points.len() as f64 * grid.cell_volume());
    let values = counts.into_iter().map(|c| c as f64 * scale).collect();
    Ok((DensityField::new(grid.clone(), values, 0.0)?, clamped))
}

/// `½ Σ |p − q| · cell volume`. Both inputs are expected to be normalised.
pub fn total_variation(p: &DensityField, q: &DensityField) -> Result<f64> {
    p.grid().ensure_same(q.grid(), "total variation")?;
    let s: f64 = p.values().iter().zip(q.values()).map(|(a, b)| (a - b).abs()).sum();
    Ok(0.5 * s * p.grid().cell_volume())
}

/// `max |p − q|` over the nodes.
pub fn max_norm(p: &DensityField, q: &DensityField) -> Result<f64> {
    p.grid().ensure_same(q.grid(), "max norm")?;
    Ok(p.values()
        .iter()
        .zip(q.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Escape time `(a³ / λb) · exp((b/a)²)` from one well of the
/// double-Gaussian. Only an order-of-magnitude estimate, and only for
/// well-separated wells; a warning is logged when b/a < 2.
pub fn kramers_prediction(p: &DoubleGaussianParams, lambda: f64) -> f64 {
    if !p.is_localized() {
        log::warn!(
            "Kramers estimate requested at b/a = {:.3}, outside its range of validity",
            p.ratio()
        );
    }
    p.a.powi(3) / (lambda * p.b) * (p.b / p.a).powi(2).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeTimeEstimate {
    /// Mean over escaped runs; `None` when every run was censored.
    pub mean: Option<f64>,
    /// Sample standard deviation over √(escaped runs); needs two escapes.
    pub standard_error: Option<f64>,
    pub censored_fraction: f64,
    pub n: usize,
    pub escaped: usize,
    /// `mean / prediction`, when a prediction was supplied.
    pub prediction_ratio: Option<f64>,
}

impl EscapeTimeEstimate {
    pub fn all_censored(&self) -> bool {
        self.mean.is_none()
    }
}

pub fn mfpt_estimate(results: &[FirstPassage], prediction: Option<f64>) -> EscapeTimeEstimate {
    let times: Vec<f64> = results
        .iter()
        .filter_map(|r| match r {
            FirstPassage::Escaped(t) => Some(*t),
            FirstPassage::Censored(_) => None,
        })
        .collect();
    let k = times.len();
    let mean = (k > 0).then(|| times.iter().sum::<f64>() / k as f64);
    let standard_error = match mean {
        Some(m) if k >= 2 => {
            let var = times.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (k - 1) as f64;
            Some((var / k as f64).sqrt())
        }
        _ => None,
    };
    let n = results.len();
    EscapeTimeEstimate {
        mean,
        standard_error,
        censored_fraction: if n == 0 { 0.0 } else { (n - k) as f64 / n as f64 },
        n,
        escaped: k,
        prediction_ratio: mean.zip(prediction).map(|(m, p)| m / p),
    }
}

/// Pearson correlation with its null z-score `ρ √n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    pub z: f64,
    pub samples: usize,
}

impl Correlation {
    /// `|ρ| < 3/√n`.
    pub fn is_null_consistent(&self) -> bool {
        self.rho.abs() < 3.0 / (self.samples as f64).sqrt()
    }
}

/// `None` when either series has zero variance or the lengths differ.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<Correlation> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return None;
    }
    let nf = n as f64;
    let ma = a.iter().sum::<f64>() / nf;
    let mb = b.iter().sum::<f64>() / nf;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    let rho = (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0);
    Some(Correlation {
        rho,
        z: rho * nf.sqrt(),
        samples: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub increments: Option<Correlation>,
    pub occupancy: Option<Correlation>,
    /// Some series had zero variance.
    pub degenerate: bool,
}

/// Correlation between x- and y-increments pooled over all paths, and
/// between the indicators `x > split[0]` and `y > split[1]`.
pub fn independence_test(paths: &[PathRecord], split: [f64; 2]) -> Result<IndependenceReport> {
    if paths.iter().any(|p| p.dims < 2) {
        return Err(Error::InvalidArgument("independence test needs 2-D paths".into()));
    }
    let (mut dx, mut dy, mut ox, mut oy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for p in paths {
        for w in p.points.windows(2) {
            dx.push(w[1][0] - w[0][0]);
            dy.push(w[1][1] - w[0][1]);
        }
        for x in &p.points {
            ox.push(f64::from(u8::from(x[0] > split[0])));
            oy.push(f64::from(u8::from(x[1] > split[1])));
        }
    }
    let increments = pearson(&dx, &dy);
    let occupancy = pearson(&ox, &oy);
    Ok(IndependenceReport {
        degenerate: increments.is_none() || occupancy.is_none(),
        increments,
        occupancy,
    })
}

/// Interval `lo ≤ x[axis] ≤ hi` labelling one well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub axis: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Region {
    pub fn contains(&self, x: &Point) -> bool {
        x[self.axis] >= self.lo && x[self.axis] <= self.hi
    }
}

fn label_of(wells: &[Region], x: &Point) -> Option<usize> {
    wells.iter().position(|r| r.contains(x))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OccupancySummary {
    /// Completed and final dwell durations, in time units.
    pub dwells: Vec<f64>,
    /// Moves from one well into a different one; passing through a gap
    /// does not end a dwell.
    pub jumps: usize,
}

/// Streaming occupancy bookkeeping for a single trajectory.
#[derive(Debug, Clone)]
pub struct OccupancyTracker {
    wells: Vec<Region>,
    current: Option<usize>,
    entered: f64,
    last_t: f64,
    summary: OccupancySummary,
}

impl OccupancyTracker {
    pub fn new(wells: Vec<Region>) -> Self {
        Self {
            wells,
            current: None,
            entered: 0.0,
            last_t: 0.0,
            summary: OccupancySummary::default(),
        }
    }

    /// Feeds one sample; returns its raw label (`None` in a gap).
    pub fn observe(&mut self, t: f64, x: &Point) -> Option<usize> {
        let label = label_of(&self.wells, x);
        if let Some(l) = label {
            match self.current {
                None => self.entered = t,
                Some(c) if c != l => {
                    self.summary.jumps += 1;
                    self.summary.dwells.push(t - self.entered);
                    self.entered = t;
                }
                _ => {}
            }
            self.current = Some(l);
        }
        self.last_t = t;
        label
    }

    pub fn jumps(&self) -> usize {
        self.summary.jumps
    }

    pub fn finish(mut self) -> OccupancySummary {
        if self.current.is_some() {
            self.summary.dwells.push(self.last_t - self.entered);
        }
        self.summary
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub labels: Vec<Option<usize>>,
    pub summary: OccupancySummary,
}

pub fn well_occupancy(path: &PathRecord, wells: &[Region]) -> Occupancy {
    let mut tracker = OccupancyTracker::new(wells.to_vec());
    let labels = path
        .times
        .iter()
        .zip(&path.points)
        .map(|(t, x)| tracker.observe(*t, x))
        .collect();
    Occupancy {
        labels,
        summary: tracker.finish(),
    }
}

/// Counts of `values` in `bins` equal-width bins over `[0, max]`.
pub fn dwell_histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let bins = bins.max(1);
    let top = values.iter().copied().fold(0.0, f64::max);
    let width = if top > 0.0 { top / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        counts[((v / width) as usize).min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i as f64 * width, (i + 1) as f64 * width, c))
        .collect()
}

/// Decay time τ of a least-squares fit `y ≈ A e^{-t/τ}` over the positive
/// samples. `None` without at least two of them or a decaying trend.
pub fn relaxation_time(times: &[f64], values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    if stt == 0.0 {
        return None;
    }
    let slope = sty / stt;
    (slope < 0.0).then(|| -1.0 / slope)
}

/// One row of a residual curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub t: f64,
    pub tv: f64,
    pub maxnorm: f64,
}

pub fn residual_point(t: f64, p: &DensityField, q: &DensityField) -> Result<ResidualPoint> {
    Ok(ResidualPoint {
        t,
        tv: total_variation(p, q)?,
        maxnorm: max_norm(p, q)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfptRow {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub predicted: f64,
    pub mean: Option<f64>,
    pub standard_error: Option<f64>,
    pub ratio: Option<f64>,
    pub censored_fraction: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn write_lines(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for r in rows {
        writeln!(w, "{r}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_residual_csv(path: &Path, rows: &[ResidualPoint]) -> Result<()> {
    write_lines(
        path,
        "t,tv,maxnorm",
        rows.iter().map(|r| format!("{},{},{}", r.t, r.tv, r.maxnorm)),
    )
}

pub fn write_mfpt_csv(path: &Path, rows: &[MfptRow]) -> Result<()> {
    write_lines(
        path,
        "a,b,lambda,predicted,mean,se,ratio,censored_fraction",
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                r.a,
                r.b,
                r.lambda,
                r.predicted,
                opt(r.mean),
                opt(r.standard_error),
                opt(r.ratio),
                r.censored_fraction
            )
        }),
    )
}
