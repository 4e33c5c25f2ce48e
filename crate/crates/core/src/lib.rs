//! Simulation of heat exchange driven by initial quantum correlations
//! between two qubits, each optionally coupled to its own thermal bath.

pub mod closed;
pub mod error;
pub mod heom;
pub mod pump;
pub mod qstate;
pub mod thermo;

pub use closed::{CorrelationMatrix, GibbsWeights, PairConfig, SedTrace};
pub use heom::{BathSpec, CouplingOperator, HeatLedger, Heom, HeomOptions, HierarchyState};
pub use pump::{ChiMode, CycleRecord, CycleSchedule, TauConnect};
pub use thermo::{CopReport, ThermoSnapshot};
pub use error::{Error, Result};
pub use qstate::{DensityOperator, HermitianObservable, Subsystem, C64};
