//! Hierarchical balancing-market simulator.
//!
//! Distribution system operators (DSOs) collect load-reduction offers from
//! responsive loads on their radial feeders, aggregate them into stepped
//! bids, and a transmission system operator clears a DC-power-flow
//! constrained real-time market against wind forecast error. Cleared DSO
//! quantities are then dispatched back onto the feeders, trading bid cost
//! against feeder losses.
//!
//! Module map:
//!
//! * [`grid`] – network, feeder, bid and config types; loading and validation.
//! * [`lp`] – bounded-variable primal simplex used by the central market.
//! * [`flow`] – DC angles and branch flows; one-pass radial feeder losses.
//! * [`local`] – per-DSO bid aggregation and post-clearing RL dispatch.
//! * [`central`] – TSO clearing LP and settlement.
//! * [`scenario`] – wind scenario and the hourly orchestration loop.
//! * [`report`] – results JSON, CSV series and run summary.

pub mod central;
mod dense;
pub mod error;
pub mod flow;
pub mod grid;
pub mod local;
pub mod lp;
pub mod report;
pub mod scenario;

pub use error::{Error, Result};

/// Absolute tolerance used when comparing reported MW and currency values.
pub const REPORT_TOL: f64 = 1e-6;

/// Directory holding the bundled 5-bus / 13-node dataset.
pub fn bundled_data_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}
