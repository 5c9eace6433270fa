//! Timetable analytics: phase synchronization of arrival/departure events,
//! delay propagation through a time-expanded dependency graph, periodic event
//! scheduling checks and a threshold avalanche model on random graphs.
//!
//! The crate is organised bottom-up:
//!
//! * [`timetable`]: domain types, ingestion (native CSV bundle, GTFS subset),
//!   derived observables and a synthetic timetable generator.
//! * [`pesp`]: feasibility checks for (periodic) event-scheduling constraints.
//! * [`sync`]: phases, synchronization indices and random null baselines.
//! * [`depgraph`]: dependency graph, delay propagation, rerouting and the
//!   secondary-delay sweep.
//! * [`avalanche`]: threshold cascade model with periodic/stochastic drivers.
//! * [`report`]: joins buffering times, secondary delays and synchronization.

pub mod avalanche;
pub mod depgraph;
pub mod pesp;
pub mod report;
pub mod rng;
pub mod stats;
pub mod sync;
pub mod timetable;

pub use timetable::{Minutes, Timetable};
