//! Run directories, CSV tables and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const MANIFEST_NAME: &str = "manifest.txt";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub artifacts: Vec<Artifact>,
    pub phases: Vec<(String, Duration)>,
    /// Scalar results such as NFE or report checksums.
    pub metrics: Vec<(String, String)>,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kacflow-manifest {MANIFEST_VERSION}");
        let _ = writeln!(s, "tool {}", self.tool_version);
        let _ = writeln!(s, "command {}", self.command);
        let _ = writeln!(s, "config_hash {}", self.config_hash);
        for a in &self.artifacts {
            let _ = writeln!(s, "artifact {} {} {}", a.sha256, a.bytes, a.path);
        }
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "metric {k} {v}");
        }
        for (name, d) in &self.phases {
            let _ = writeln!(s, "phase {name} {:.3}", d.as_secs_f64());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: &str| CliError::Config(format!("malformed manifest line '{line}'"));
        let mut lines = text.lines();
        if lines.next() != Some(&format!("kacflow-manifest {MANIFEST_VERSION}")) {
            return Err(CliError::Config("not a kacflow manifest".into()));
        }
        let mut m = RunManifest {
            command: String::new(),
            tool_version: String::new(),
            config_hash: String::new(),
            artifacts: Vec::new(),
            phases: Vec::new(),
            metrics: Vec::new(),
        };
        for line in lines {
            let (tag, rest) = line.split_once(' ').ok_or_else(|| bad(line))?;
            match tag {
                "tool" => m.tool_version = rest.to_string(),
                "command" => m.command = rest.to_string(),
                "config_hash" => m.config_hash = rest.to_string(),
                "artifact" => {
                    let mut parts = rest.splitn(3, ' ');
                    let (sha, bytes, path) = (parts.next(), parts.next(), parts.next());
                    match (sha, bytes.and_then(|b| b.parse().ok()), path) {
                        (Some(sha), Some(bytes), Some(path)) => m.artifacts.push(Artifact {
                            path: path.to_string(),
                            sha256: sha.to_string(),
                            bytes,
                        }),
                        _ => return Err(bad(line)),
                    }
                }
                "metric" => {
                    let (k, v) = rest.split_once(' ').ok_or_else(|| bad(line))?;
                    m.metrics.push((k.to_string(), v.to_string()));
                }
                "phase" => {
                    let (k, v) = rest.split_once(' ').ok_or_else(|| bad(line))?;
                    let secs: f64 = v.parse().map_err(|_| bad(line))?;
                    m.phases.push((k.to_string(), Duration::from_secs_f64(secs)));
                }
                _ => return Err(bad(line)),
            }
        }
        Ok(m)
    }

    pub fn metric(&self, key: &str) -> Option<&str> {
        self.metrics.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn artifact(&self, path: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

/// An output directory that records what is written into it.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    artifacts: Vec<Artifact>,
    phases: Vec<(String, Duration)>,
    metrics: Vec<(String, String)>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
            phases: Vec::new(),
            metrics: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.retain(|a| a.path != name);
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(contents)),
            bytes: contents.len() as u64,
        });
        Ok(path)
    }

    pub fn write_csv(&mut self, name: &str, table: Table) -> Result<PathBuf> {
        let bytes = table.into_bytes(name)?;
        self.write(name, &bytes)
    }

    pub fn metric(&mut self, key: &str, value: impl ToString) {
        self.metrics.push((key.to_string(), value.to_string()));
    }

    /// Runs `f` and records its wall-clock time under `name`.
    pub fn phase<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self);
        self.phases.push((name.to_string(), start.elapsed()));
        out
    }

    /// Writes the config copy and the manifest.
    pub fn finish(mut self, command: &str, cfg: &ExperimentConfig) -> Result<RunManifest> {
        self.write("config.txt", cfg.to_text().as_bytes())?;
        let manifest = RunManifest {
            command: command.to_string(),
            tool_version: format!("kacflow {}", env!("CARGO_PKG_VERSION")),
            config_hash: cfg.hash(),
            artifacts: self.artifacts,
            phases: self.phases,
            metrics: self.metrics,
        };
        let path = self.root.join(MANIFEST_NAME);
        std::fs::write(&path, manifest.to_text()).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

/// A CSV table with a fixed header.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn into_bytes(self, name: &str) -> Result<Vec<u8>> {
        let fail = |e: csv::Error| CliError::Core(kacflow_core::Error::Internal(format!("{name}: {e}")));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(fail)?;
        for r in &self.rows {
            w.write_record(r).map_err(fail)?;
        }
        w.into_inner()
            .map_err(|e| CliError::Core(kacflow_core::Error::Internal(format!("{name}: {e}"))))
    }
}
