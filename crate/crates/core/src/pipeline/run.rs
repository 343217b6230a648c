//! File layout of a run directory.

use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_snapshot(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn lock(&self) -> PathBuf {
        self.root.join(".lock")
    }

    pub fn features(&self) -> PathBuf {
        self.root.join("features")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }

    pub fn stage1_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("stage1.json")
    }

    pub fn stage1_loss(&self) -> PathBuf {
        self.root.join("stage1_loss.csv")
    }

    pub fn tokens(&self) -> PathBuf {
        self.root.join("style_tokens.csv")
    }

    pub fn prune_report(&self) -> PathBuf {
        self.root.join("prune_report.json")
    }

    pub fn pairs(&self) -> PathBuf {
        self.root.join("stage2_pairs.jsonl")
    }

    pub fn adaptation_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("adaptation.json")
    }

    pub fn stage2_loss(&self) -> PathBuf {
        self.root.join("stage2_loss.csv")
    }

    pub fn synth(&self) -> PathBuf {
        self.root.join("synth")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
}
