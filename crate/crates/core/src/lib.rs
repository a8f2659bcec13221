//! Evolutionary dataset optimisation: a genetic search over datasets whose
//! columns are drawn from parametrised distribution families, plus the
//! clustering fitness suite and shape analysis used to study the results.

pub mod clustering;
pub mod dataset;
pub mod distributions;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod history;

pub use dataset::{ColumnLimits, Dataset, FamilyColumns, FitnessValue, Individual, RowLimits};
pub use distributions::{DistributionInstance, FamilySpec, Interval, SearchSpace, Subtype};
pub use error::{ConfigError, DataError};
pub use evolution::{run, EdoConfig, EdoRng, Fitness, RunError, RunOutcome, StopReason};
pub use history::{Archive, GenerationRecord, GenerationSink, MemoryHistory, Retention};
