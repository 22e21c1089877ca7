//! Classical mean-field dynamics of a protected Z2 lattice gauge theory on the
//! honeycomb lattice, with surface-growth analysis, an analytic single-spin
//! reduction, and small-system exact quantum benchmarks.

pub mod analytic;
pub mod dynamics;
pub mod error;
pub mod lattice;
pub mod observables;
pub mod ode;
pub mod quantum;
pub mod runner;
pub mod state;
pub mod surface;

pub use dynamics::{ModelParams, TrajectoryRecord, Variant};
pub use error::{Error, Result};
pub use lattice::{build_honeycomb, Boundary, SpinLattice};
pub use state::{DisorderField, SeededRng, SpinConfiguration};
