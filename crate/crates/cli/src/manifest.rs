use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub command: String,
    pub argv: Vec<String>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub finished_unix_s: u64,
}

/// `manifest.json` of a run directory: one entry per completed command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub steps: Vec<Step>,
}

fn collect(root: &Path, p: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if p.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(p)
            .with_context(|| format!("listing {}", p.display()))?
            .collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            collect(root, &e.path(), out)?;
        }
    } else if p.is_file() {
        out.push(p.to_path_buf());
    }
    Ok(())
}

/// Hash every file under each path (files or directories).
pub fn hash_paths(run_dir: &Path, paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    let mut files = Vec::new();
    for p in paths {
        collect(run_dir, p, &mut files)?;
    }
    files
        .into_iter()
        .map(|f| {
            let bytes = fs::read(&f).with_context(|| format!("reading {}", f.display()))?;
            let rel = f.strip_prefix(run_dir).unwrap_or(&f);
            Ok(FileHash { path: rel.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) })
        })
        .collect()
}

pub fn record(run_dir: &Path, command: &str, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
    let path = run_dir.join("manifest.json");
    let mut m: RunManifest = if path.exists() {
        serde_json::from_slice(&fs::read(&path)?).with_context(|| format!("parsing {}", path.display()))?
    } else {
        RunManifest::default()
    };
    m.steps.push(Step {
        command: command.to_string(),
        argv: std::env::args().collect(),
        inputs: hash_paths(run_dir, inputs)?,
        outputs: hash_paths(run_dir, outputs)?,
        finished_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    });
    fs::write(&path, serde_json::to_vec_pretty(&m)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
