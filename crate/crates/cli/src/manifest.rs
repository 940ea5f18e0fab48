//! Run manifests: every effective parameter of a command, without
//! timestamps, so identical invocations write identical files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use mixfpca::pipeline::substream;

pub const SUBSTREAMS: [&str; 4] = ["kendall", "fit", "sampler", "sim"];

#[derive(Debug, Serialize)]
pub struct Manifest<P: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub status: &'static str,
    pub seed: u64,
    pub substreams: BTreeMap<&'static str, u64>,
    pub threads: Option<usize>,
    pub parameters: P,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl<P: Serialize> Manifest<P> {
    pub fn new(command: &'static str, seed: u64, threads: Option<usize>, parameters: P) -> Self {
        Self {
            tool: "mixfpca",
            version: env!("CARGO_PKG_VERSION"),
            command,
            status: "ok",
            seed,
            substreams: SUBSTREAMS.iter().map(|&name| (name, substream(seed, name))).collect(),
            threads,
            parameters,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}
