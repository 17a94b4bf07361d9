//! Artifact layout, content hashing, manifests, and the error-to-exit-code
//! mapping.
//!
//! Every subcommand writes into a fixed tree under the output directory and
//! records a manifest naming its inputs and outputs by sha256. Manifests
//! carry no timestamps, so a re-run with the same seed is byte-identical
//! end to end.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Process exit codes. Clap owns code 2 for usage errors (unknown flag or
/// subcommand); the rest are ours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Usage = 2,
    Config = 3,
    MissingArtifact = 4,
    Failure = 5,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("missing upstream artifact: {0} (run `{1}` first)")]
    MissingArtifact(PathBuf, &'static str),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::Config,
            CliError::MissingArtifact(..) => ExitCode::MissingArtifact,
            CliError::Failure(_) => ExitCode::Failure,
        }
    }

    pub fn failure(err: impl std::fmt::Display) -> CliError {
        CliError::Failure(err.to_string())
    }
}

/// Resolved paths of the artifact tree.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn data_split(&self, split: &str) -> PathBuf {
        self.root.join("data").join(split)
    }

    pub fn sequence_dir(&self, split: &str, index: usize) -> PathBuf {
        self.data_split(split).join(format!("seq{index:05}"))
    }

    pub fn trial_dir(&self, split: &str, unit: usize, trial: usize) -> PathBuf {
        self.data_split(split)
            .join(format!("unit{unit:02}"))
            .join(format!("trial{trial:03}"))
    }

    pub fn encoded(&self, split: &str) -> PathBuf {
        self.root.join("encoded").join(format!("{split}.windows.jsonl"))
    }

    pub fn encoded_stats(&self, split: &str) -> PathBuf {
        self.root.join("encoded").join(format!("{split}.stats.json"))
    }

    pub fn surface_dump_dir(&self, split: &str) -> PathBuf {
        self.root.join("encoded").join("surfaces").join(split)
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.evgm"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn manifest(&self, subcommand: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{subcommand}.json"))
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Failure(format!("cannot hash {}: {e}", path.display())))?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader
            .read(&mut buf)
            .map_err(|e| CliError::Failure(format!("cannot hash {}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Recursively hash every file under `dir`, keyed by path relative to the
/// artifact root. Sorted map, so the manifest is deterministic.
pub fn hash_tree(root: &Path, dir: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        let entries = fs::read_dir(&current)
            .map_err(|e| CliError::Failure(format!("cannot list {}: {e}", current.display())))?;
        for entry in entries {
            let path = entry
                .map_err(|e| CliError::Failure(e.to_string()))?
                .path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap_or(&path)
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, sha256_file(&path)?);
            }
        }
    }
    Ok(out)
}

/// What a subcommand consumed and produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn write(&self, layout: &Layout) -> Result<(), CliError> {
        let path = layout.manifest(&self.subcommand);
        write_json(&path, self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Failure(format!("cannot create {}: {e}", parent.display())))?;
    }
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Failure(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Failure(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Failure(format!("cannot parse {}: {e}", path.display())))
}

/// Require an upstream artifact to exist before a stage runs.
pub fn require(path: &Path, producer: &'static str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(path.to_path_buf(), producer))
    }
}

/// Minimal NPY v1.0 writer for the optional raw surface dump.
pub fn write_npy(path: &Path, shape: &[usize], data: &[f32]) -> Result<(), CliError> {
    assert_eq!(shape.iter().product::<usize>(), data.len());
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Failure(format!("cannot create {}: {e}", parent.display())))?;
    }
    let dims = shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    let shape_txt = if shape.len() == 1 {
        format!("({dims},)")
    } else {
        format!("({dims})")
    };
    let mut header = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': {shape_txt}, }}"
    );
    // Pad with spaces so magic + length + header is 64-byte aligned, ending
    // in a newline, per the NPY v1.0 layout.
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat(unpadded.div_ceil(64) * 64 - unpadded));
    header.push('\n');
    let mut out = File::create(path)
        .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))?;
    let mut write = |bytes: &[u8]| {
        out.write_all(bytes)
            .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
    };
    write(b"\x93NUMPY\x01\x00")?;
    write(&(header.len() as u16).to_le_bytes())?;
    write(header.as_bytes())?;
    for v in data {
        write(&v.to_le_bytes())?;
    }
    Ok(())
}
