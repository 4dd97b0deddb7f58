//! Where each stage reads and writes inside the work directory.

use std::path::{Path, PathBuf};

use persona_attr::{Split, Task};

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn samples(&self, task: Task, split: Split) -> PathBuf {
        self.root.join("data").join(task.as_str()).join(format!("{split}.jsonl"))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn generator(&self, task: Task, seed: u64) -> PathBuf {
        self.model_dir(task, seed).join("generator")
    }

    pub fn reranker(&self, task: Task, seed: u64) -> PathBuf {
        self.model_dir(task, seed).join("reranker")
    }

    fn model_dir(&self, task: Task, seed: u64) -> PathBuf {
        self.root.join("models").join(task.as_str()).join(format!("seed{seed}"))
    }

    pub fn run_dir(&self, task: Task, seed: u64) -> PathBuf {
        self.root.join("runs").join(task.as_str()).join(format!("seed{seed}"))
    }

    pub fn candidates(&self, task: Task, seed: u64, split: Split, free: bool) -> PathBuf {
        let stem = if free { "candidates-free" } else { "candidates" };
        self.run_dir(task, seed).join(format!("{stem}.{split}.jsonl"))
    }

    pub fn predictions(&self, task: Task, seed: u64, split: Split, top1: bool) -> PathBuf {
        let stem = if top1 { "predictions-top1" } else { "predictions" };
        self.run_dir(task, seed).join(format!("{stem}.{split}.jsonl"))
    }

    pub fn ablation(&self, task: Task, split: Split, ext: &str) -> PathBuf {
        self.root.join("runs").join(task.as_str()).join(format!("ablation.{split}.{ext}"))
    }

    pub fn analysis(&self) -> PathBuf {
        self.root.join("analysis")
    }
}

/// The raw corpus file for `split` in `dir`, under any of the usual names.
pub fn raw_split_file(dir: &Path, split: Split) -> Option<PathBuf> {
    let s = split.as_str();
    [
        format!("{s}.jsonl"),
        format!("{s}.json"),
        format!("dialogue_nli_{s}.jsonl"),
        format!("dialogue_nli_{s}.json"),
    ]
    .into_iter()
    .map(|name| dir.join(name))
    .find(|p| p.is_file())
}
