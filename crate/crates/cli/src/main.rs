//! `reid-bench <task> --config <file> [--seed N] [--out DIR]`
//!
//! Exit status: 0 on success, 2 when the configuration is invalid, 1 when
//! the task itself fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use reid_core::experiment::{expand_sweep, run, validate_config, SweepAxis, Task};
use reid_core::Error;

#[derive(Parser, Debug)]
#[command(name = "reid-bench", version, about = "Patient verification and re-identification experiments")]
struct Cli {
    /// One of split, mine, synth, train-verif, train-reid, eval-verif,
    /// eval-reid, attack, explain; or `sweep` to expand a base config.
    task: String,

    /// TOML run configuration (for `sweep`, the base config).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Sweep axis `section.key=v1,v2,...`; repeatable (sweep only).
    #[arg(long = "set", value_name = "AXIS")]
    axes: Vec<String>,
}

enum Failure {
    Validation(Error),
    Task(Error),
}

fn read_config(cli: &Cli) -> Result<String, Failure> {
    match &cli.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Failure::Validation(Error::Config(vec![format!("cannot read {}: {e}", path.display())]))),
        None => Ok(String::new()),
    }
}

fn sweep(cli: &Cli) -> Result<(), Failure> {
    let base = read_config(cli)?;
    let axes = cli
        .axes
        .iter()
        .map(|a| SweepAxis::parse(a))
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::Validation)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("sweep"));
    let runs = expand_sweep(&base, &axes, &out).map_err(Failure::Validation)?;
    std::fs::create_dir_all(&out).map_err(|e| Failure::Task(Error::Io { path: out.clone(), source: e }))?;
    for (name, text) in &runs {
        let path = out.join(format!("{name}.toml"));
        std::fs::write(&path, text).map_err(|e| Failure::Task(Error::Io { path, source: e }))?;
    }
    println!("wrote {} configs to {}", runs.len(), out.display());
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    if cli.task == "sweep" {
        return sweep(cli);
    }
    let task: Task = cli.task.parse().map_err(Failure::Validation)?;
    let text = read_config(cli)?;
    let mut config = validate_config(&text, Some(task)).map_err(Failure::Validation)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    run(&config).map_err(Failure::Task)?;
    println!("{} finished; artifacts in {}", task, config.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Task(e)) => {
            eprintln!("task failed: {e}");
            ExitCode::from(1)
        }
    }
}
