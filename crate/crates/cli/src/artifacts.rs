//! Fit files and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sievi::{Fidelity, SingleIndexFit};

use crate::error::{CliError, Result};
use crate::ingest::Standardization;

pub const FIT_SCHEMA: &str = "sievi-fit/1";
pub const SIGN_CONVENTION: &str = "gamma = exp(-alpha)";
pub const MANIFEST_NAME: &str = "manifest.json";

/// Everything needed to predict from a fit without the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub schema: String,
    pub sign_convention: String,
    pub response: String,
    pub covariates: Vec<String>,
    pub standardization: Option<Standardization>,
    pub fidelity: Fidelity,
    /// Fitting interval of the spline basis, repeated for readers.
    pub interval: (f64, f64),
    pub fit: SingleIndexFit,
}

impl FitFile {
    pub fn new(
        fit: SingleIndexFit,
        response: &str,
        covariates: Vec<String>,
        standardization: Option<Standardization>,
        fidelity: Fidelity,
    ) -> Self {
        Self {
            schema: FIT_SCHEMA.to_string(),
            sign_convention: SIGN_CONVENTION.to_string(),
            response: response.to_string(),
            covariates,
            standardization,
            fidelity,
            interval: fit.basis.interval(),
            fit,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: FitFile = serde_json::from_str(text)?;
        if file.schema != FIT_SCHEMA {
            return Err(CliError::Schema(file.schema));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| CliError::io(path, e))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub rng: String,
    pub timestamp: String,
    pub version: String,
    /// SHA-256 of each input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>, inputs: &[&Path]) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self {
            command: command.to_string(),
            config,
            seed,
            rng: sievi::numerics::RandomStream::ALGORITHM.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs,
        })
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(MANIFEST_NAME);
        write_file(&path, &(serde_json::to_string_pretty(self)? + "\n"))?;
        Ok(path)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}
