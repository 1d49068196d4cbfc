use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use prefopt_core::io_util::write_atomic;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    pub path: String,
    /// Hex SHA-256 of the file; absent until the file exists.
    pub sha256: Option<String>,
}

/// Record of one command invocation. It is written with status `started`
/// before any work and rewritten as `complete` with output hashes at the end.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    #[serde(skip)]
    path: PathBuf,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

impl RunManifest {
    /// Hashes the inputs and writes the `started` manifest.
    pub fn start(
        path: &Path,
        command: &str,
        seed: Option<u64>,
        config: &BTreeMap<String, String>,
        inputs: &[&Path],
        outputs: &[&Path],
    ) -> Result<Self, CliError> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(Artifact {
                    path: p.display().to_string(),
                    sha256: Some(sha256_file(p)?),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let outputs = outputs
            .iter()
            .map(|p| Artifact {
                path: p.display().to_string(),
                sha256: None,
            })
            .collect();
        let m = Self {
            command: command.to_string(),
            status: "started".into(),
            seed,
            config: config.clone(),
            inputs,
            outputs,
            path: path.to_path_buf(),
        };
        m.write()?;
        Ok(m)
    }

    fn write(&self) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&self.path, text.as_bytes())
            .map_err(|e| CliError::Io(format!("{}: {e}", self.path.display())))
    }

    /// Adds outputs discovered while running, such as sweep cell files.
    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(Artifact {
            path: path.display().to_string(),
            sha256: None,
        });
    }

    /// Hashes every output that exists and marks the run complete.
    pub fn finish(mut self) -> Result<(), CliError> {
        for out in &mut self.outputs {
            let p = Path::new(&out.path);
            out.sha256 = if p.exists() {
                Some(sha256_file(p)?)
            } else {
                None
            };
        }
        self.status = "complete".into();
        self.write()
    }
}

/// `<path>.<suffix>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}
