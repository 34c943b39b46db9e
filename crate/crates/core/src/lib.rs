//! Micro-macro solver for compressible Oldroyd-type polymeric flows.

pub mod assumptions;
pub mod closure;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod init;
pub mod io;
pub mod linsolve;
pub mod params;
pub mod potential;
pub mod qbasis;
pub mod quadrature;
pub mod state;
pub mod stepper;
pub mod xgrid;

pub use assumptions::{validate_assumptions, AssumptionReport, SampleSpec};
pub use dynamics::{Model, Rhs};
pub use error::{Error, Result};
pub use potential::{Potential, SpringLaw, Support};
pub use qbasis::{build_basis, PoincareReport, QBasis};
pub use xgrid::TorusGrid;
pub use params::ModelParams;
pub use state::{EnergyReport, FlowState};
pub use stepper::{simulate, Scheme, StepConfig, TrajectoryRecord};
pub use config::{parse_config, RunConfig};
