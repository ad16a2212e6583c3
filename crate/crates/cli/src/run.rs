//! Output directory bookkeeping: artifacts, seed sidecar and run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use shearmod::io::{self, FieldData};
use shearmod::phantoms::SeedRecord;
use shearmod::Result;

pub struct Run {
    pub subcommand: &'static str,
    out: PathBuf,
    config_path: PathBuf,
    config_text: String,
    config: Value,
    seed: Option<u64>,
    seeds: Vec<SeedRecord>,
    outputs: Vec<String>,
    quiet: bool,
    start: Instant,
}

impl Run {
    pub fn new<C: Serialize>(subcommand: &'static str, out: &Path, config_path: &Path, config_text: String, config: &C, seed: Option<u64>, quiet: bool) -> Result<Self> {
        std::fs::create_dir_all(out)?;
        Ok(Self {
            subcommand,
            out: out.to_path_buf(),
            config_path: config_path.to_path_buf(),
            config_text,
            config: serde_json::to_value(config).expect("config serializes"),
            seed,
            seeds: vec![],
            outputs: vec![],
            quiet,
            start: Instant::now(),
        })
    }

    pub fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("[{}] {}", self.subcommand, msg.as_ref());
        }
    }

    pub fn seed(&mut self, generator: &str, seed: u64) {
        self.seeds.push(SeedRecord::new(generator, seed));
    }

    pub fn text(&mut self, name: &str, content: &str) -> Result<()> {
        std::fs::write(self.out.join(name), content)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let s = serde_json::to_string_pretty(value).expect("value serializes");
        self.text(name, &(s + "\n"))
    }

    /// Writes `<stem>.vtk` and `<stem>.csv`.
    pub fn field(&mut self, stem: &str, field: FieldData) -> Result<()> {
        self.text(&format!("{stem}.vtk"), &io::vtk_string(&field, stem))?;
        self.text(&format!("{stem}.csv"), &io::csv_string(&field, stem))
    }

    pub fn finish(mut self, results: Value) -> Result<()> {
        if !self.seeds.is_empty() {
            let seeds = std::mem::take(&mut self.seeds);
            self.json("seeds.json", &seeds)?;
        }
        let manifest = json!({
            "subcommand": self.subcommand,
            "config_path": self.config_path.display().to_string(),
            "config": self.config,
            "config_text": self.config_text,
            "seed": self.seed,
            "versions": {
                "shearmod": shearmod::VERSION,
                "shearmod-cli": env!("CARGO_PKG_VERSION"),
            },
            "parallel": shearmod::par::is_parallel(),
            "elapsed_seconds": self.start.elapsed().as_secs_f64(),
            "outputs": self.outputs,
            "results": results,
        });
        let s = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(self.out.join("manifest.json"), s + "\n")?;
        self.note(format!("wrote {} artifacts to {}", self.outputs.len() + 1, self.out.display()));
        Ok(())
    }
}
