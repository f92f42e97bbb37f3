//! Metro train localization from phone inertial, magnetic, and pressure sensors.
//!
//! The pipeline has two phases. Building: sensor recordings are segmented
//! into stop and running events ([`detect`]), overlapping trips are merged
//! into a pattern graph, and the graph is anchored onto the metro topology
//! ([`builder`]). Locating: running events from a new recording are matched
//! against the anchored per-tunnel patterns ([`locator`]). [`sim`] generates
//! labeled synthetic recordings, [`io`] and [`eval`] cover files and scoring.

pub mod builder;
pub mod detect;
pub mod error;
pub mod eval;
pub mod io;
pub mod locator;
pub mod matching;
pub mod model;
pub mod par;
pub mod signal;
pub mod sim;

#[cfg(test)]
mod testutil;
