//! Run directory layout: `<root>/<timestamp>-<confighash>/`, where the root
//! comes from `--out-root`, the `SCHEDSYNTH_RUNS` environment variable or
//! `./runs`. `--out` bypasses the layout entirely.

use std::path::PathBuf;

use crate::manifest::Manifest;
use crate::Cli;

pub fn prepare_dir(cli: &Cli, manifest: &Manifest) -> anyhow::Result<PathBuf> {
    let dir = match &cli.out {
        Some(dir) => dir.clone(),
        None => {
            let root = cli
                .out_root
                .clone()
                .or_else(|| std::env::var_os("SCHEDSYNTH_RUNS").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs"));
            let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
            root.join(format!("{stamp}-{}", manifest.config_hash))
        }
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
