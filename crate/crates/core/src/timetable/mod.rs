//! Timetable domain model, ingestion and derived observables.

mod bundle;
mod gtfs;
mod model;
mod observables;
mod synthetic;

pub use bundle::{parse_bundle_dir, parse_timetable, write_bundle, write_bundle_dir, BundleSources};
pub use gtfs::{import_gtfs_dir, import_gtfs_subset, GtfsOptions};
pub use model::{
    Category, Leg, Minutes, PassengerRoute, Segment, Station, Timetable, TrainRun,
    DEFAULT_DAY_LENGTH,
};
pub use observables::{
    buffering_times, derive_transfers, passenger_buffering_times, station_events, station_rank,
    station_sizes, EventKind, EventList, EventRef, StationEvent, TransferOpportunity,
    DEFAULT_TRANSFER_WINDOW,
};
pub use synthetic::{generate_synthetic, SyncBand, SyntheticParams};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TimetableError {
    #[error("{file}:{line}: column `{column}`: {message}")]
    Field {
        file: String,
        line: u64,
        column: String,
        message: String,
    },
    #[error("{file}: missing required column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{file}: {message}")]
    Csv { file: String, message: String },
    #[error("duplicate {kind} id `{id}`")]
    Duplicate { kind: &'static str, id: String },
    #[error("{context}: unknown station `{station}`")]
    UnknownStation { context: String, station: String },
    #[error("{context}: unknown train `{train}`")]
    UnknownTrain { context: String, train: String },
    #[error("train `{train}` segment {index}: arrival {arr} must be after departure {dep} (and both non-negative)")]
    SegmentTimes {
        train: String,
        index: usize,
        dep: Minutes,
        arr: Minutes,
    },
    #[error("train `{train}` segment {index}: departs before the previous arrival")]
    NonMonotone { train: String, index: usize },
    #[error("train `{train}` segment {index}: starts at `{found}` but the previous segment ends at `{expected}`")]
    Discontinuous {
        train: String,
        index: usize,
        expected: String,
        found: String,
    },
    #[error("route `{route}`: {reason}")]
    InvalidRoute { route: String, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error("infeasible generator parameters: {0}")]
    Infeasible(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
