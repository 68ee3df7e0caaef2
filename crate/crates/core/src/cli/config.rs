//! Config files and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;

/// Optional per-subcommand sections; command-line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub gen_dataset: Option<GenSection>,
    pub fit_tabular: Option<FitSection>,
    pub sample: Option<SampleSection>,
    pub eval: Option<EvalSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSection {
    pub count: Option<usize>,
    pub depth_min: Option<usize>,
    pub depth_max: Option<usize>,
    pub dedup: Option<bool>,
    pub min_edges: Option<usize>,
    pub coordinates: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub epochs: Option<usize>,
    pub time_buckets: Option<usize>,
    pub schedule: Option<String>,
    pub sigma_max: Option<f64>,
    pub noise_scale: Option<f64>,
    pub steps: Option<usize>,
    pub eval_records: Option<usize>,
    pub z_c: Option<f64>,
    pub w_pair: Option<f64>,
    pub w_slddt: Option<f64>,
    pub w_bond: Option<f64>,
    pub pair_cutoff: Option<f64>,
    pub bond_time_threshold: Option<f64>,
    pub slddt_cutoff: Option<f64>,
    pub auxiliary: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub steps: Option<usize>,
    pub schedule: Option<String>,
    pub sigma_max: Option<f64>,
    pub anneal_coeff: Option<f64>,
    pub noise_scale: Option<f64>,
    pub velocity: Option<String>,
    pub constraints: Option<bool>,
    pub z_c: Option<f64>,
    pub n_blocks: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub tau: Option<f64>,
    pub kde_points: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Everything needed to rerun a command: resolved settings and input digests.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub threads: Option<usize>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, InputDigest>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &'static str, seed: u64, threads: Option<usize>, config: serde_json::Value) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            threads,
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        let digest = InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        };
        self.inputs.insert(role.to_string(), digest);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let ok: ConfigFile = toml::from_str("[sample]\nsteps = 20\n").unwrap();
        assert_eq!(ok.sample.unwrap().steps, Some(20));
        assert!(toml::from_str::<ConfigFile>("[sample]\nstpes = 20\n").is_err());
        assert!(toml::from_str::<ConfigFile>("[sampler]\n").is_err());
    }
}
