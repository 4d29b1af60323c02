//! Configuration, ensemble orchestration, persistence and reporting for `shelab-core`.
//!
//! Every command writes into one output directory: CSV data files, a `verdicts.csv` where
//! tests ran, and a `manifest.json` that records the configuration, its hash, the replica
//! seeds and a checksum of every file.

pub mod commands;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod manifest;
pub mod report;

use std::path::{Path, PathBuf};

pub use commands::{simulate, sweep, verify, CommandOptions, Outcome, VerifySource};
pub use config::{RunConfig, Suite};
pub use error::HarnessError;
pub use manifest::RunManifest;
pub use report::report;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "SHELAB_OUTPUT_ROOT";
const FALLBACK_ROOT: &str = "shelab-out";

/// `--out` if given, else the config's `output.dir`, else `<root>/<command>-<hash prefix>`
/// with the root taken from [`OUTPUT_ROOT_ENV`].
pub fn output_dir(explicit: Option<&Path>, cfg: Option<&RunConfig>, command: &str, hash: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(dir) = cfg.and_then(|c| c.output.dir.clone()) {
        return dir;
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(FALLBACK_ROOT));
    let tag: String = hash.chars().take(12).collect();
    if tag.is_empty() {
        root.join(command)
    } else {
        root.join(format!("{command}-{tag}"))
    }
}
