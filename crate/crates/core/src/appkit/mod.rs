//! CLI plumbing: run configs, branch CSV emission, binary point snapshots,
//! SVG/CSV plot output, and the stage runner that strings library calls into
//! reproducible batch runs.

pub mod branchcsv;
pub mod config;
pub mod plots;
pub mod runner;
pub mod snapshot;

pub use config::{RunConfig, Stage};
pub use runner::{cli_run, RunError};
pub use snapshot::{load_point, save_point, SavedOrbit, SavedPoint, SavedSteady};

/// Output root override honored by the runner.
pub const OUT_ROOT_ENV: &str = "PDECONT_OUT";
