//! Shared fixtures for the solver benchmarks.

use psiwalk::guidance::drift_field;
use psiwalk::schrodinger::{make_double_gaussian, make_packet};
use psiwalk::{Boundary, DoubleGaussianParams, DriftField, Grid, GuidanceParams, WaveField};

pub fn periodic_line(points: usize) -> Grid {
    Grid::line(-20.0, 20.0, points, Boundary::Periodic).expect("valid grid")
}

pub fn packet(points: usize) -> WaveField {
    make_packet(&periodic_line(points), &[-4.0], 1.0, &[1.0]).expect("valid packet")
}

pub fn double_well(points: usize) -> WaveField {
    let grid = Grid::line(-10.0, 10.0, points, Boundary::Reflecting).expect("valid grid");
    make_double_gaussian(&grid, DoubleGaussianParams::new(1.0, 2.5).expect("valid params")).expect("fits grid")
}

pub fn double_well_drift(points: usize, lambda: f64) -> DriftField {
    drift_field(&double_well(points), &GuidanceParams::new(lambda)).expect("finite drift")
}
