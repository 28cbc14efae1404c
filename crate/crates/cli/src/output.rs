//! Output directories and their run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub metrics: Value,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: Option<u64>, config: Value) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            metrics: Value::Null,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.into(), path.display().to_string());
    }

    pub fn read(dir: &Path) -> Option<RunManifest> {
        let text = fs::read_to_string(dir.join(MANIFEST)).ok()?;
        serde_json::from_str(&text).ok()
    }
}

/// A prepared output directory. The manifest is written last, so a directory
/// without one is a partial run.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn prepare(root: &Path, force: bool) -> Result<OutDir, CliError> {
        if root.exists() {
            let non_empty = fs::read_dir(root)
                .map_err(|e| io(root, e))?
                .next()
                .is_some();
            if non_empty {
                if !force {
                    let state = if root.join(MANIFEST).exists() {
                        "holds a previous run"
                    } else {
                        "holds a partial run"
                    };
                    return Err(CliError::Usage(format!(
                        "output directory {} {state}; pass --force to replace it",
                        root.display()
                    )));
                }
                fs::remove_dir_all(root).map_err(|e| io(root, e))?;
            }
        }
        fs::create_dir_all(root).map_err(|e| io(root, e))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Records a file or directory written by the caller.
    pub fn record(&mut self, rel: &str) {
        self.written.push(rel.to_owned());
    }

    pub fn write(&mut self, rel: &str, contents: &str) -> Result<(), CliError> {
        let p = self.path(rel);
        fs::write(&p, contents).map_err(|e| io(&p, e))?;
        self.record(rel);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        self.write(rel, &to_json(value))
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> Result<(), CliError> {
        self.written.sort();
        manifest.outputs = self.written.clone();
        let p = self.path(MANIFEST);
        fs::write(&p, to_json(&manifest)).map_err(|e| io(&p, e))
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable value");
    s.push('\n');
    s
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(oodsplit_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
