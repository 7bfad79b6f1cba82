//! File formats, run configuration, manifests and the pipeline commands.

pub mod bundle;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod schema;

pub use bundle::ParamsBundle;
pub use commands::{
    cmd_counterfactual, cmd_curves, cmd_did, cmd_estimate, cmd_simulate, RunContext, RunReport,
};
pub use config::RunConfig;
pub use manifest::{sha256_hex, RunManifest, MANIFEST_FILE};
