//! Command implementations behind the `clearseg` binary. Each `run_*`
//! function takes a [`RunConfig`], writes its artifacts into the configured
//! output directory and returns the in-memory results.

pub mod commands;
pub mod config;
pub mod error;
pub mod fixture;
pub mod io;
pub mod model;

pub use commands::{
    average_records, run_ablate, run_eval, run_segment, run_stats, stats_csv, AblationGrid,
    AblationRow, SegmentEntry,
};
pub use config::{build_surgery, RunConfig, SurgeryOverrides, SCHEMA_VERSION};
pub use error::{CliError, Result};
pub use fixture::{fixture_ground_truth, fixture_image, gen_fixture, FixtureOptions, FixturePaths};
pub use model::Model;
