use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lattice_chaos::chaos::ChaosStats;
use lattice_chaos::config::RunConfig;
use lattice_chaos::ensemble::{DiffusionEstimate, SweepFlag};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Diagnostics of one momentum bin of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinDiagnostic {
    pub index: usize,
    pub p: f64,
    pub ok: bool,
    pub error: Option<String>,
    pub flags: Vec<SweepFlag>,
    pub chaos: Option<ChaosStats>,
    pub diffusion: Option<DiffusionEstimate>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub explicit: bool,
    pub implied_gamma: f64,
    pub implied_omega_r: f64,
    pub gamma_mismatch: f64,
    pub omega_r_mismatch: f64,
}

/// Everything needed to regenerate the files of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub config: RunConfig,
    pub constants: ConstantsReport,
    pub bins: Vec<BinDiagnostic>,
    pub files: Vec<OutputFile>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, threads: usize) -> Self {
        let c = config.physical_constants();
        let (dg, dw) = c.mismatch(&config.params);
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed(),
            threads,
            config: config.clone(),
            constants: ConstantsReport {
                explicit: config.constants.is_some(),
                implied_gamma: c.implied_gamma(),
                implied_omega_r: c.implied_omega_r(),
                gamma_mismatch: dg,
                omega_r_mismatch: dw,
            },
            bins: Vec::new(),
            files: Vec::new(),
            wall_seconds: 0.0,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes output files and remembers their checksums.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(OutputFile {
            name: name.into(),
            bytes: contents.len() as u64,
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(name, &text)
    }

    /// Writes the manifest last; it is not listed among its own files.
    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest> {
        manifest.files = self.files;
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        let path = self.root.join(MANIFEST_NAME);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}
