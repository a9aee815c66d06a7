//! Run-directory layout and guarded output writing.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub const CONFIG: &str = "config.toml";
pub const EVENTS: &str = "events.jsonl";
pub const POPULATION: &str = "population.csv";
pub const GRAPH: &str = "graph.csv";
pub const ENGAGEMENT: &str = "engagement.json";
pub const EXAMPLES: &str = "examples.csv";
pub const MODEL: &str = "model.json";
pub const EVAL_REPORT: &str = "eval_report.csv";
pub const SNAPSHOT: &str = "snapshot.csv";
pub const SWEEP: &str = "sweep.csv";
pub const CURVE: &str = "creation_curve.csv";
pub const BOXES: &str = "sensitivity_box.csv";
pub const TRADEOFF: &str = "alpha_tradeoff.csv";

/// An output file exists and `--overwrite` was not given.
#[derive(Debug)]
pub struct OutputExists(pub PathBuf);

impl fmt::Display for OutputExists {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} already exists (pass --overwrite to replace it)", self.0.display())
    }
}

impl std::error::Error for OutputExists {}

/// A required input file is missing.
#[derive(Debug)]
pub struct MissingInput(pub PathBuf);

impl fmt::Display for MissingInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing input {}; run the stage that produces it first", self.0.display())
    }
}

impl std::error::Error for MissingInput {}

pub struct RunDir {
    root: PathBuf,
    overwrite: bool,
}

impl RunDir {
    pub fn new(root: &Path, overwrite: bool) -> Self {
        Self { root: root.to_path_buf(), overwrite }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    pub fn read(&self, name: &str) -> Result<String> {
        let p = self.path(name);
        if !p.is_file() {
            return Err(MissingInput(p).into());
        }
        std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
    }

    pub fn open(&self, name: &str) -> Result<BufReader<File>> {
        let p = self.path(name);
        if !p.is_file() {
            return Err(MissingInput(p).into());
        }
        Ok(BufReader::new(File::open(&p).with_context(|| format!("opening {}", p.display()))?))
    }

    /// Fails before anything is written if any output is already present.
    pub fn claim(&self, names: &[&str]) -> Result<()> {
        std::fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))?;
        if !self.overwrite {
            if let Some(n) = names.iter().find(|n| self.exists(n)) {
                return Err(OutputExists(self.path(n)).into());
            }
        }
        Ok(())
    }

    pub fn write_with<F>(&self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let p = self.path(name);
        let mut w = BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?);
        f(&mut w)?;
        w.flush()?;
        log::info!("wrote {}", p.display());
        Ok(())
    }

    pub fn write_str(&self, name: &str, text: &str) -> Result<()> {
        self.write_with(name, |w| Ok(w.write_all(text.as_bytes())?))
    }
}
