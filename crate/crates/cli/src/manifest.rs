//! Run directory bookkeeping: the stored configuration and the manifest of
//! completed stages with the hashes of everything they read and wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use biasmeta::hash::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::config::Settings;

pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Stages this one was built from.
    pub after: Vec<String>,
    /// File (run-relative, or external as given) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_sha256: String,
    pub stages: BTreeMap<String, StageRecord>,
}

/// A predecessor's artifact no longer matches what the manifest recorded.
#[derive(Debug)]
pub struct StaleArtifact {
    pub path: String,
    pub stage: String,
}

impl std::fmt::Display for StaleArtifact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "stale artifact {}: it no longer matches the run manifest; re-run `biasmeta {}` and the stages after it",
            self.path, self.stage
        )
    }
}

impl std::error::Error for StaleArtifact {}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// An open run directory.
pub struct Run {
    pub dir: PathBuf,
    pub settings: Settings,
    pub manifest: RunManifest,
}

impl Run {
    /// Opens or creates `dir`. A directory created with a different
    /// resolved configuration is refused.
    pub fn open(dir: &Path, settings: Settings) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let text = settings.to_text();
        let config_path = dir.join(CONFIG_FILE);
        if config_path.exists() {
            let stored = fs::read_to_string(&config_path)?;
            if stored != text {
                bail!(
                    "the configuration differs from the one stored in {}; a run's configuration is fixed once started, so use a new --out directory",
                    config_path.display()
                );
            }
        } else {
            fs::write(&config_path, &text)?;
        }
        let config_sha256 = sha256_hex(text.as_bytes());
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = if manifest_path.exists() {
            let m: RunManifest = serde_json::from_slice(&fs::read(&manifest_path)?)
                .with_context(|| format!("parsing {}", manifest_path.display()))?;
            if m.config_sha256 != config_sha256 {
                bail!("{} belongs to a different configuration", manifest_path.display());
            }
            m
        } else {
            RunManifest {
                run_id: config_sha256[..16].to_string(),
                config_sha256,
                stages: BTreeMap::new(),
            }
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            settings,
            manifest,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Inputs named `ext:<path>` live outside the run directory.
    fn resolve_input(&self, name: &str) -> PathBuf {
        match name.strip_prefix("ext:") {
            Some(p) => PathBuf::from(p),
            None => self.dir.join(name),
        }
    }

    /// Checks that `stage` completed and that it and all its ancestors
    /// still match their recorded hashes.
    pub fn require(&self, stage: &str) -> Result<()> {
        let Some(record) = self.manifest.stages.get(stage) else {
            bail!("stage {stage} has not been run in {}; run `biasmeta {stage}` first", self.dir.display());
        };
        for dep in &record.after {
            self.require(dep)?;
        }
        for (name, hash) in record.outputs.iter().chain(&record.inputs) {
            let current = self.resolve_input(name);
            let ok = current.exists() && &file_sha256(&current)? == hash;
            if !ok {
                return Err(StaleArtifact {
                    path: name.clone(),
                    stage: stage.split('/').next().unwrap_or(stage).to_string(),
                }
                .into());
            }
        }
        Ok(())
    }

    /// Hashes the given input files.
    pub fn hash_inputs(&self, names: &[String]) -> Result<BTreeMap<String, String>> {
        names
            .iter()
            .map(|n| Ok((n.clone(), file_sha256(&self.resolve_input(n))?)))
            .collect()
    }

    /// Whether `stage` already ran on exactly these inputs and its outputs
    /// are intact.
    pub fn up_to_date(&self, stage: &str, inputs: &BTreeMap<String, String>) -> bool {
        match self.manifest.stages.get(stage) {
            Some(rec) if &rec.inputs == inputs => rec.outputs.iter().all(|(name, hash)| {
                let p = self.path(name);
                p.exists() && file_sha256(&p).map(|h| &h == hash).unwrap_or(false)
            }),
            _ => false,
        }
    }

    /// Records `stage` as complete and saves the manifest.
    pub fn complete(
        &mut self,
        stage: &str,
        after: &[&str],
        inputs: BTreeMap<String, String>,
        outputs: &[String],
    ) -> Result<()> {
        let outputs = outputs
            .iter()
            .map(|o| Ok((o.clone(), file_sha256(&self.path(o))?)))
            .collect::<Result<_>>()?;
        self.manifest.stages.insert(
            stage.to_string(),
            StageRecord {
                after: after.iter().map(|s| s.to_string()).collect(),
                inputs,
                outputs,
            },
        );
        self.save()
    }

    pub fn save(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(self.path(MANIFEST_FILE), text)?;
        Ok(())
    }

    /// Writes `contents` to the run-relative path, creating directories.
    pub fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> Settings {
        Settings::default()
    }

    #[test]
    fn stage_chain_detects_edits() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = Run::open(dir.path(), settings()).unwrap();
        run.write("a/out.txt", "one").unwrap();
        run.complete("first", &[], BTreeMap::new(), &["a/out.txt".into()]).unwrap();
        let inputs = run.hash_inputs(&["a/out.txt".into()]).unwrap();
        run.write("b/out.txt", "two").unwrap();
        run.complete("second", &["first"], inputs.clone(), &["b/out.txt".into()]).unwrap();
        run.require("second").unwrap();
        assert!(run.up_to_date("second", &inputs));

        run.write("a/out.txt", "changed").unwrap();
        let err = run.require("second").unwrap_err();
        let stale = err.downcast_ref::<StaleArtifact>().expect("stale artifact");
        assert_eq!(stale.path, "a/out.txt");
        assert!(err.to_string().contains("stale artifact"));
        assert!(!run.up_to_date("second", &run.hash_inputs(&["a/out.txt".into()]).unwrap()));
    }

    #[test]
    fn missing_stage_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let run = Run::open(dir.path(), settings()).unwrap();
        assert!(run.require("mine").unwrap_err().to_string().contains("biasmeta mine"));
    }

    #[test]
    fn configuration_is_fixed_per_run() {
        let dir = tempfile::tempdir().unwrap();
        Run::open(dir.path(), settings()).unwrap().save().unwrap();
        let reopened = Run::open(dir.path(), settings()).unwrap();
        assert_eq!(reopened.manifest.run_id.len(), 16);
        let mut other = settings();
        other.seed += 1;
        assert!(Run::open(dir.path(), other).is_err());
    }
}
