//! Output directory with write-then-rename files and a run manifest.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{RunConfig, Seeds};
use super::CliError;

pub const MANIFEST: &str = "manifest.toml";

/// Files written by one command, all inside `root`.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: BTreeSet<String>,
}

impl OutputDir {
    /// Creates `root` (and its parents) when missing.
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeSet::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `name` through a temporary sibling that is renamed into place.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        if name.contains('/') || name.contains('\\') || name.starts_with('.') {
            return Err(CliError::Runtime(format!("refusing to write '{name}' outside the output directory")));
        }
        let target = self.root.join(name);
        let tmp = self.root.join(format!(".{name}.tmp"));
        let io = |e: std::io::Error| CliError::Runtime(format!("cannot write {}: {e}", target.display()));
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(bytes).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, &target).map_err(io)?;
        self.files.insert(name.to_string());
        Ok(())
    }

    /// Renders with `f` into memory, then writes atomically.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn files(&self) -> Vec<String> {
        self.files.iter().cloned().collect()
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    status: &'a str,
    completed_stages: &'a [String],
    files: Vec<String>,
    seeds: Seeds,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Records what a command did; written last, and also on failure.
#[derive(Debug)]
pub struct RunRecord {
    command: String,
    stages: Vec<String>,
}

impl RunRecord {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            stages: Vec::new(),
        }
    }

    pub fn stage(&mut self, name: &str) {
        log::info!("{}: {name} done", self.command);
        self.stages.push(name.into());
    }

    pub fn stages(&self) -> &[String] {
        &self.stages
    }

    pub fn write(&self, out: &mut OutputDir, config: &RunConfig, error: Option<&CliError>) -> Result<(), CliError> {
        let mut files = out.files();
        files.retain(|f| f != MANIFEST);
        files.push("config.toml".into());
        files.sort();
        let manifest = Manifest {
            command: &self.command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: config.hash(),
            status: if error.is_some() { "failed" } else { "ok" },
            completed_stages: &self.stages,
            files,
            seeds: config.seeds(),
            error: error.map(|e| e.to_string()),
        };
        out.write("config.toml", config.canonical().as_bytes())?;
        let text = toml::to_string(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        out.write(MANIFEST, text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_creates_dirs_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("a/b");
        let mut out = OutputDir::create(&root).unwrap();
        out.write("x.csv", b"1\n").unwrap();
        assert_eq!(fs::read_to_string(root.join("x.csv")).unwrap(), "1\n");
        let names: Vec<_> = fs::read_dir(&root).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
        assert!(out.write("../escape.csv", b"").is_err());
    }

    #[test]
    fn manifest_lists_files_and_stages() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write("b.csv", b"").unwrap();
        let mut rec = RunRecord::new("synth");
        rec.stage("generate");
        let cfg = RunConfig::default();
        rec.write(&mut out, &cfg, None).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(text.contains("config_hash = \""));
        assert!(text.contains(&cfg.hash()));
        assert!(text.contains("\"generate\""));
        assert!(text.contains("\"b.csv\""));
    }
}
