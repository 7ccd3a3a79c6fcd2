//! Config-driven experiment runner.
//!
//! A run validates its config, executes one task and leaves behind, in
//! its output directory, the task's artifacts plus `resolved_config.toml`
//! (enough to repeat the run) and `run.json` (seed, version, wall time,
//! status). A failed task keeps whatever it had written and adds a
//! `FAILED` marker holding the error.

mod config;
mod sweep;
mod tasks;

use std::time::Instant;

use serde::Serialize;

pub use config::{
    known_keys, validate_config, AttackSection, DataConfig, DataSource, EvalSection, ExplainSection, MiningSection,
    ModelConfig, Normalization, ReidSection, RunConfig, Task, VerifSection, SCHEMA,
};
pub use sweep::{expand_sweep, SweepAxis};
pub use tasks::pair_meta;

use crate::error::{Error, Result};

#[derive(Serialize)]
struct RunRecord<'a> {
    task: &'a str,
    seed: u64,
    version: &'a str,
    parallel: bool,
    wall_time_secs: f64,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Executes `config.task`, writing the run record whether or not the task
/// succeeds.
pub fn run(config: &RunConfig) -> Result<()> {
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let marker = tasks::output_path(config, "FAILED");
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    tasks::write(&tasks::output_path(config, "resolved_config.toml"), config.to_toml())?;
    let start = Instant::now();
    let result = tasks::dispatch(config);
    let record = RunRecord {
        task: config.task.name(),
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION"),
        parallel: cfg!(feature = "parallel"),
        wall_time_secs: start.elapsed().as_secs_f64(),
        status: if result.is_ok() { "ok" } else { "failed" },
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    let text = serde_json::to_string_pretty(&record).expect("serializable") + "\n";
    tasks::write(&tasks::output_path(config, "run.json"), text)?;
    if let Err(e) = &result {
        tasks::write(&marker, format!("{e}\n"))?;
    }
    result
}
