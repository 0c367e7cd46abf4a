//! Stochastic Particle dynamics guided by a classical Ψ-field.
//!
//! A wave function evolved by the Schrödinger equation defines a potential
//! `-ln|Ψ|²`; a Particle performs overdamped Brownian motion in it with
//! diffusion constant λ. This crate provides the Ψ propagator, the guidance
//! drift, a Langevin ensemble engine, a Smoluchowski (Fokker–Planck) solver
//! used as its deterministic counterpart, statistics, and a scenario runner
//! that writes reproducible artifacts.

pub mod analysis;
pub mod error;
pub mod grid;
pub mod guidance;
pub mod langevin;
pub mod scenario;
pub mod schrodinger;
pub mod smoluchowski;
pub mod snapshot;

pub use error::{ConfigIssue, Error, Result};
pub use grid::{Axis, Boundary, DensityField, Grid, Point, ScalarField, VectorField, WaveField};
pub use guidance::{DriftField, GuidanceParams, NodeRegularizer};
pub use langevin::{EnsembleResult, NoiseSpec, TrajectoryState};
pub use schrodinger::{DoubleGaussianParams, HamiltonianSpec};
pub use scenario::{RunManifest, ScenarioConfig, ScenarioKind};
pub use smoluchowski::FpOperator;
