//! Runs an experiment's (method, seed) grid and writes its artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{error, info, warn};
use matl_core::policy::GaussianPolicy;
use matl_core::trainer::{pretrain_simulator, Systems, Trainer};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Cell, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::records::{metrics_sink, CellPaths, CsvSink, UpdateRow, UPDATE_COLUMNS};

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Replaces the config's `output_dir`.
    pub out: Option<PathBuf>,
    pub workers: usize,
    /// Forces a single worker.
    pub deterministic: bool,
    pub seed_offset: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            out: None,
            workers: 1,
            deterministic: false,
            seed_offset: 0,
        }
    }
}

impl RunOptions {
    pub fn effective_workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.workers.max(1)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub method: String,
    pub seed: u64,
    pub lambda: f64,
    pub iterations_completed: usize,
    pub target_steps: usize,
    /// Set when the run stopped early.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    /// The parsed config, echoed with all defaults filled in.
    pub config: serde_json::Value,
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub seed_offset: u64,
    pub workers: usize,
    pub wall_clock_seconds: f64,
    pub cells: Vec<CellOutcome>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn experiment_dir(config: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    opts.out.clone().unwrap_or_else(|| config.output_dir.clone()).join(&config.experiment)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(CliError::io(path))
}

/// Run every cell of the grid. Cells whose training hits a numeric failure
/// keep their partial CSVs; the call then fails with
/// [`CliError::RunsFailed`] after the manifest is written.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<Manifest> {
    let started = Instant::now();
    config.validate()?;
    let dir = experiment_dir(config, opts);
    create_dir(&dir)?;
    let train = config.train_config();
    let systems = config.env.build(train.horizon)?;
    let workers = opts.effective_workers();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))?;
    let cells = config.cells(opts.seed_offset);

    let pretrained: BTreeMap<u64, std::result::Result<GaussianPolicy, String>> = if config.needs_pretraining() {
        let pre_dir = dir.join("pretrained");
        create_dir(&pre_dir)?;
        let mut seeds: Vec<u64> = cells.iter().filter(|c| c.variant.needs_pretrained()).map(|c| c.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        pool.install(|| {
            seeds
                .par_iter()
                .map(|&seed| {
                    let outcome = pretrain_simulator(&systems, &train, seed).map_err(|e| e.to_string()).and_then(|(policy, returns)| {
                        info!("pretrained seed {seed}: {} iterations, final return {:.3}", returns.len(), returns.last().copied().unwrap_or(f64::NAN));
                        policy.save(&pre_dir.join(format!("{seed}.bin"))).map_err(|e| e.to_string())?;
                        Ok(policy)
                    });
                    (seed, outcome)
                })
                .collect()
        })
    } else {
        BTreeMap::new()
    };

    for label in cells.iter().map(|c| c.label.as_str()).collect::<std::collections::BTreeSet<_>>() {
        create_dir(&dir.join(label))?;
    }
    let outcomes: Vec<CellOutcome> = pool.install(|| cells.par_iter().map(|cell| run_cell(config, &systems, cell, &dir, &pretrained)).collect());

    let manifest = Manifest {
        experiment: config.experiment.clone(),
        config: serde_json::to_value(config).expect("config serializes"),
        config_hash: config.hash(),
        versions: BTreeMap::from([
            ("matl-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("csv_schema".to_string(), crate::records::SCHEMA_VERSION.to_string()),
        ]),
        seed_offset: opts.seed_offset,
        workers,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        cells: outcomes,
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(CliError::io(&path))?;

    let failed: Vec<&CellOutcome> = manifest.cells.iter().filter(|c| c.error.is_some()).collect();
    if let Some(first) = failed.first() {
        return Err(CliError::RunsFailed {
            failed: failed.len(),
            total: manifest.cells.len(),
            first: format!("{} seed {}: {}", first.method, first.seed, first.error.as_deref().unwrap_or_default()),
        });
    }
    Ok(manifest)
}

fn run_cell(
    config: &ExperimentConfig,
    systems: &Systems,
    cell: &Cell,
    dir: &Path,
    pretrained: &BTreeMap<u64, std::result::Result<GaussianPolicy, String>>,
) -> CellOutcome {
    let mut outcome = CellOutcome {
        method: cell.label.clone(),
        seed: cell.seed,
        lambda: cell.lambda,
        iterations_completed: 0,
        target_steps: 0,
        error: None,
    };
    let paths = CellPaths::new(&dir.join(&cell.label), cell.seed);
    if let Err(e) = train_cell(config, systems, cell, &paths, pretrained, &mut outcome) {
        error!("{} seed {}: {e}", cell.label, cell.seed);
        outcome.error = Some(e.to_string());
    }
    outcome
}

fn train_cell(
    config: &ExperimentConfig,
    systems: &Systems,
    cell: &Cell,
    paths: &CellPaths,
    pretrained: &BTreeMap<u64, std::result::Result<GaussianPolicy, String>>,
    outcome: &mut CellOutcome,
) -> Result<()> {
    let mut train = config.train_config();
    train.alignment.lambda = cell.lambda;
    let init = if cell.variant.needs_pretrained() {
        match pretrained.get(&cell.seed) {
            Some(Ok(p)) => Some(p),
            Some(Err(e)) => return Err(CliError::Core(matl_core::Error::Numeric(format!("pretraining failed: {e}")))),
            None => unreachable!("every transfer seed is pretrained"),
        }
    } else {
        None
    };
    let mut trainer = Trainer::new(cell.variant, train, systems.clone(), cell.seed, init)?;
    let mut sink = metrics_sink(&paths.metrics)?;
    let mut write_error = None;
    let result = trainer.run(|row| {
        if write_error.is_none() {
            write_error = sink.write(row).err();
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    outcome.iterations_completed = trainer.history().len();
    outcome.target_steps = trainer.target_steps();
    let mut updates = CsvSink::create(&paths.updates, &UPDATE_COLUMNS)?;
    for u in trainer.updates() {
        updates.write(&UpdateRow::from(u))?;
    }
    trainer.robot_policy().save(&paths.policy)?;
    if let Err(e) = result {
        warn!("{} seed {} stopped after {} iterations", cell.label, cell.seed, outcome.iterations_completed);
        return Err(e.into());
    }
    Ok(())
}
