//! Sum-weight gossip averaging over sensor networks: update-matrix
//! families, a simulation engine with per-tick error diagnostics,
//! spectral convergence-rate analysis, and Monte Carlo experiment drivers.

pub mod engine;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod models;
pub mod spectral;

pub use engine::{Mode, RunConfig, SumWeightState, Trace, TraceRecord, WindowDiagnostics};
pub use error::{Error, Result};
pub use graph::Graph;
pub use models::{AssumptionReport, SetKind, UpdateMatrixSet};
pub use spectral::{KempeClosedForms, SpectralReport};
