//! Physical network, path sets, the aggregated time-space indexing and path
//! attribute computation.
//!
//! Everything here is immutable after construction and safe to share
//! read-only across concurrent workers.

mod network;
mod path;
mod tables;
mod time;

pub use network::{NetworkModel, Platform, PlatformIdx, Station, StationIdx};
pub use path::{
    commonality_factor, validate_network, AttrVector, BetaVector, Diagnostics, DistanceMode,
    OdIdx, OdPaths, Path, PathLeg, PathSet, PathSetFile, RawPath, RawPathLeg, BETA_DIM,
};
pub use tables::{DelayRateTable, EntryExitFlowTable, EntryFlowTable, ShareTable};
pub use time::{build_time_grid, ClockTime, TimeGrid};
