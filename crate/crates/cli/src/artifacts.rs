use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tkre_core::config::ExperimentConfig;
use tkre_core::trainloop::CHECKPOINT_VERSION;

use crate::error::{CliError, EXIT_IO};

pub const GOLDEN: &str = "golden.jsonl";
pub const EXPLANATIONS: &str = "explanations.jsonl";
pub const SYNTHETIC: &str = "synthetic.jsonl";
pub const GENERATION_REPORT: &str = "generation_report.json";
pub const PRETRAIN_CKPT: &str = "pretrain.ckpt";
pub const PRETRAIN_LOG: &str = "pretrain_log.jsonl";
pub const PRETRAIN_SUMMARY: &str = "pretrain_summary.json";
pub const MODEL_CKPT: &str = "model.ckpt";
pub const FINETUNE_LOG: &str = "finetune_log.jsonl";
pub const FINETUNE_SUMMARY: &str = "finetune_summary.json";
pub const EVAL: &str = "eval.json";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_TXT: &str = "ablation.txt";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const MANIFEST: &str = "manifest.json";
pub const LOCK: &str = ".tkre.lock";

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
    Ok(sha256_bytes(&bytes))
}

/// Exclusive writer lock on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock(PathBuf);

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::new(
                EXIT_IO,
                format!(
                    "{} is locked by another tkre process; remove {} if that process is gone",
                    dir.display(),
                    path.display()
                ),
            )),
            Err(e) => Err(CliError::io(path.display(), e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub command: String,
    pub config_fingerprint: String,
    pub seed: u64,
    /// Full resolved configuration; enough to replay the command.
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub commands: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }
}

/// A locked output directory plus the manifest entry being assembled.
pub struct OutDir {
    root: PathBuf,
    entry: ManifestEntry,
    _lock: DirLock,
}

impl OutDir {
    pub fn open(cfg: &ExperimentConfig, command: &str) -> Result<Self, CliError> {
        let root = cfg.output_dir.clone();
        fs::create_dir_all(&root).map_err(|e| CliError::io(root.display(), e))?;
        let lock = DirLock::acquire(&root)?;
        let versions = BTreeMap::from([
            ("tkre".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("checkpoint_format".to_string(), CHECKPOINT_VERSION.to_string()),
        ]);
        Ok(OutDir {
            root,
            entry: ManifestEntry {
                command: command.into(),
                config_fingerprint: cfg.fingerprint(),
                seed: cfg.seed,
                config: serde_json::to_value(cfg).expect("config serializes"),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                versions,
            },
            _lock: lock,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Record an external input file by hash.
    pub fn input(&mut self, path: &Path) -> Result<PathBuf, CliError> {
        let hash = sha256_file(path)?;
        self.entry.inputs.insert(path.display().to_string(), hash);
        Ok(path.to_path_buf())
    }

    /// Path of an upstream artifact, recorded as an input.
    pub fn require(&mut self, name: &str, producer: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        if !p.is_file() {
            return Err(CliError::data(format!(
                "missing artifact {}; run `tkre {producer}` with the same config first",
                p.display()
            )));
        }
        let hash = sha256_file(&p)?;
        self.entry.inputs.insert(name.to_string(), hash);
        Ok(p)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(name);
        let tmp = self.path(&format!("{name}.partial"));
        fs::write(&tmp, bytes).map_err(|e| CliError::io(tmp.display(), e))?;
        fs::rename(&tmp, &p).map_err(|e| CliError::io(p.display(), e))?;
        self.entry.outputs.insert(name.to_string(), sha256_bytes(bytes));
        Ok(())
    }

    /// Merge this command's entry into `manifest.json`.
    pub fn finish(self) -> Result<ManifestEntry, CliError> {
        let path = self.path(MANIFEST);
        let mut manifest = Manifest::load(&path)?;
        manifest.commands.insert(self.entry.command.clone(), self.entry.clone());
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(|e| CliError::io(path.display(), e))?;
        Ok(self.entry)
    }
}

pub fn to_json(value: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}
