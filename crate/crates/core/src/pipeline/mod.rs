//! Stage orchestration: each stage reads the previous stage's artifacts from
//! the output directory and writes its own, so any stage can be rerun alone.
//! A stage whose inputs and configuration are unchanged is skipped unless
//! forced.

mod config;
pub mod io;
mod stages;
mod summary;

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub use config::{
    fraction_label, AugmentConfig, DataConfig, InferenceConfig, NetworkConfig, PipelineConfig, SplitMode,
    TrainingConfig,
};
pub use stages::{load_test_sets, Manifest, SampleRecord, SplitRecord};
pub use summary::{ExperimentSummary, FractionRow, Orderings, Table1Row};

use crate::error::{Error, Result};

/// Version strings of every on-disk format, as printed by `--version`.
pub const FORMAT_VERSIONS: &[(&str, &str)] = &[
    ("volume", "PSVOL1"),
    ("points", "PSPTS1"),
    ("pca", "PSPCA1"),
    ("network", "PSNET1"),
    ("manifest", "1"),
];

pub const OUT_DIR_ENV: &str = "PROBSHAPE_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Augment,
    Train,
    Infer,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Generate,
        Stage::Augment,
        Stage::Train,
        Stage::Infer,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Augment => "augment",
            Stage::Train => "train",
            Stage::Infer => "infer",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    fn upstream(self) -> Option<Stage> {
        let i = Stage::ALL.iter().position(|&s| s == self).unwrap();
        i.checked_sub(1).map(|j| Stage::ALL[j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

/// Holds the output-directory lock for its lifetime.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(out: &Path) -> Result<Self> {
        io::ensure_dir(out)?;
        let path = out.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::io(
                &path,
                std::io::Error::new(
                    e.kind(),
                    "another command holds this output directory; delete the lock file if no run is active",
                ),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

pub struct Pipeline {
    cfg: PipelineConfig,
    out: PathBuf,
    force: bool,
    verbose: bool,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            out: out.into(),
            force: false,
            verbose: false,
        })
    }

    pub fn force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    /// Progress lines on stderr.
    pub fn verbose(mut self, verbose: bool) -> Self {
        self.verbose = verbose;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn done_path(&self, stage: Stage) -> PathBuf {
        self.stage_dir(stage).join("stage.done")
    }

    /// Hash of the config sections a stage reads, chained with its upstream
    /// fingerprint.
    fn fingerprint(&self, stage: Stage) -> Result<String> {
        let mut h = Sha256::new();
        let c = &self.cfg;
        let section = match stage {
            Stage::Generate => serde_json::json!([c.seed, c.data, c.imaging]),
            Stage::Augment => serde_json::json!(c.augment),
            Stage::Train => serde_json::json!([c.network, c.training]),
            Stage::Infer => serde_json::json!(c.inference),
            Stage::Evaluate | Stage::Report => serde_json::Value::Null,
        };
        h.update(section.to_string().as_bytes());
        h.update(stage.name().as_bytes());
        if let Some(up) = stage.upstream() {
            let path = self.done_path(up);
            if !path.exists() {
                return Err(Error::MissingInput {
                    path,
                    hint: format!("run `probshape {}` first", up.name()),
                });
            }
            h.update(io::read_text(&path)?.as_bytes());
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Runs one stage unless it already completed with the same inputs.
    pub fn run_stage(&self, stage: Stage) -> Result<StageOutcome> {
        let _lock = DirLock::acquire(&self.out)?;
        self.write_config()?;
        self.run_stage_locked(stage)
    }

    fn write_config(&self) -> Result<()> {
        io::write_text(&self.out.join("config.toml"), &self.cfg.to_toml())
    }

    fn run_stage_locked(&self, stage: Stage) -> Result<StageOutcome> {
        let print = self.fingerprint(stage)?;
        let done = self.done_path(stage);
        if !self.force && done.exists() && io::read_text(&done)? == print {
            self.log(format!("{}: up to date", stage.name()));
            return Ok(StageOutcome::Skipped);
        }
        let dir = self.stage_dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        io::ensure_dir(&dir)?;
        self.log(format!("{}: running", stage.name()));
        match stage {
            Stage::Generate => stages::generate(self)?,
            Stage::Augment => stages::augment(self)?,
            Stage::Train => stages::train(self)?,
            Stage::Infer => stages::infer(self)?,
            Stage::Evaluate => stages::evaluate(self)?,
            Stage::Report => stages::report(self)?,
        }
        io::write_text(&done, &print)?;
        Ok(StageOutcome::Ran)
    }

    /// Every stage in order; returns the experiment summary.
    pub fn run_all(&self) -> Result<ExperimentSummary> {
        let _lock = DirLock::acquire(&self.out)?;
        self.write_config()?;
        for stage in Stage::ALL {
            self.run_stage_locked(stage)?;
        }
        ExperimentSummary::read(&self.stage_dir(Stage::Report).join("summary.json"))
    }
}
