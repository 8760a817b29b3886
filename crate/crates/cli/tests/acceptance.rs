//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! Experiments run into a fresh temporary directory. Set
//! `MATL_ACCEPTANCE_DIR` to keep the results; a later run with the same
//! directory reuses every experiment whose manifest matches its config hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use matl_cli::config::ExperimentConfig;
use matl_cli::records::{read_metrics, read_updates};
use matl_cli::runner::{experiment_dir, run_experiment, Manifest, RunOptions, MANIFEST_FILE};
use matl_core::discriminator::{AlignmentConfig, Discriminator, LossKind, SequenceConfig, System};
use matl_core::rng::stream;
use matl_core::trainer::IterationMetrics;
use rand::RngExt;
use rand_distr::{Distribution, Normal};

type Check = Result<(bool, String), String>;

struct Suite {
    root: PathBuf,
    out: PathBuf,
    reuse: bool,
    workers: usize,
    _scratch: Option<tempfile::TempDir>,
    /// Every experiment run so far, for the cross-experiment criteria.
    ran: Vec<(ExperimentConfig, PathBuf)>,
    /// Wall-clock seconds per experiment name.
    seconds: BTreeMap<String, f64>,
}

impl Suite {
    fn new() -> Suite {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
        let (out, reuse, scratch) = match std::env::var_os("MATL_ACCEPTANCE_DIR") {
            Some(dir) => (PathBuf::from(dir), true, None),
            None => {
                let t = tempfile::tempdir().expect("temp dir");
                (t.path().to_path_buf(), false, Some(t))
            }
        };
        Suite {
            root,
            out,
            reuse,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            _scratch: scratch,
            ran: Vec::new(),
            seconds: BTreeMap::new(),
        }
    }

    fn preset(&self, name: &str) -> Result<ExperimentConfig, String> {
        ExperimentConfig::load(&self.root.join("configs").join(format!("{name}.json"))).map_err(|e| e.to_string())
    }

    fn cached(&self, config: &ExperimentConfig, dir: &Path) -> Option<f64> {
        if !self.reuse {
            return None;
        }
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        let m: Manifest = serde_json::from_str(&text).ok()?;
        (m.config_hash == config.hash() && m.cells.iter().all(|c| c.error.is_none())).then_some(m.wall_clock_seconds)
    }

    /// Run (or reuse) an experiment and return its directory.
    fn run(&mut self, config: ExperimentConfig) -> Result<PathBuf, String> {
        let opts = RunOptions {
            out: Some(self.out.clone()),
            workers: self.workers,
            deterministic: false,
            seed_offset: 0,
        };
        let dir = experiment_dir(&config, &opts);
        let seconds = match self.cached(&config, &dir) {
            Some(s) => {
                println!("  reusing {}", dir.display());
                s
            }
            None => {
                println!("  running {} ({} runs)", config.experiment, config.cells(0).len());
                run_experiment(&config, &opts).map_err(|e| format!("{}: {e}", config.experiment))?.wall_clock_seconds
            }
        };
        self.seconds.insert(config.experiment.clone(), seconds);
        self.ran.push((config, dir.clone()));
        Ok(dir)
    }

    fn minutes(&self, experiment: &str) -> f64 {
        self.seconds.get(experiment).copied().unwrap_or(f64::NAN) / 60.0
    }
}

// Independent statistics helpers; the library versions are what is under test.

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn ks_p_value(a: &[f64], b: &[f64]) -> (f64, f64) {
    let cdf = |xs: &[f64], t: f64| xs.iter().filter(|&&x| x <= t).count() as f64 / xs.len() as f64;
    let d = a.iter().chain(b).map(|&t| (cdf(a, t) - cdf(b, t)).abs()).fold(0.0, f64::max);
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    if lambda < 1e-3 {
        return (d, 1.0);
    }
    let p: f64 = (1..=200).map(|j| {
        let j = j as f64;
        2.0 * if j as u64 % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * j * j * lambda * lambda).exp()
    }).sum();
    (d, p.clamp(0.0, 1.0))
}

/// Per-method `eval_metric` curves, one per seed, read straight from the CSVs.
fn curves(dir: &Path) -> Result<BTreeMap<String, Vec<Vec<f64>>>, String> {
    let mut out = BTreeMap::new();
    for (method, runs) in runs(dir)? {
        out.insert(method, runs.iter().map(|r| r.iter().map(|m| m.eval_metric).collect()).collect());
    }
    Ok(out)
}

fn runs(dir: &Path) -> Result<BTreeMap<String, Vec<Vec<IterationMetrics>>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if !path.is_dir() || path.file_name().is_some_and(|n| n == "pretrained") {
            continue;
        }
        let mut seeds: Vec<(u64, PathBuf)> = std::fs::read_dir(&path)
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .filter_map(|p| p.file_stem()?.to_str()?.parse().ok().map(|s| (s, p.clone())))
            .collect();
        seeds.sort();
        let rows = seeds.iter().map(|(_, p)| read_metrics(p).map_err(|e| e.to_string())).collect::<Result<Vec<_>, _>>()?;
        out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), rows);
    }
    Ok(out)
}

fn finals(curves: &BTreeMap<String, Vec<Vec<f64>>>, method: &str) -> Result<Vec<f64>, String> {
    curves
        .get(method)
        .ok_or_else(|| format!("no runs for {method}"))?
        .iter()
        .map(|c| c.last().copied().ok_or_else(|| format!("{method} has an empty run")))
        .collect()
}

fn c1_gradients() -> Check {
    let start = Instant::now();
    let reports = matl_core::gradcheck::run(50, 20_260_101).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst = reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    let all = reports.iter().all(|r| r.cases >= 50 && r.passed(1e-5));
    let names: Vec<String> = reports.iter().map(|r| format!("{} {:.1e}", r.component, r.max_relative_error)).collect();
    Ok((all && secs < 30.0, format!("max rel err {worst:.2e} [{}] in {secs:.1}s", names.join(", "))))
}

fn c3_reward_identities() -> Check {
    let mut rng = stream(3, &[3]);
    let losses = [LossKind::Confusion, LossKind::Wasserstein { clip: 0.05, critic_updates: 5 }];
    let mut checked = 0;
    for (k, loss) in losses.into_iter().enumerate() {
        let config = AlignmentConfig {
            loss,
            seq: SequenceConfig::pair(4),
            ..AlignmentConfig::default()
        };
        let d = Discriminator::new(5, &config, &mut rng).map_err(|e| e.to_string())?;
        for i in 0..10_000 {
            let zeta: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
            let r = d.aux_reward(&zeta, System::Robot).map_err(|e| e.to_string())?;
            let s = d.aux_reward(&zeta, System::Simulator).map_err(|e| e.to_string())?;
            if r != -s || !r.is_finite() {
                return Ok((false, format!("loss {k} sequence {i}: robot {r} vs simulator {s}")));
            }
            checked += 1;
        }
    }
    let config = AlignmentConfig {
        seq: SequenceConfig::pair(4),
        ..AlignmentConfig::default()
    };
    let mut d = Discriminator::new(5, &config, &mut rng).map_err(|e| e.to_string())?;
    d.set_values(vec![0.0; d.params().len()]).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let zeta: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let r = d.aux_reward(&zeta, System::Robot).map_err(|e| e.to_string())?;
        worst = worst.max((r - (-std::f64::consts::LN_2)).abs());
    }
    Ok((worst <= 1e-6, format!("{checked} antisymmetric pairs exact; at D = 0.5 max |rho_R - ln 0.5| = {worst:.1e}")))
}

fn c4_discriminator() -> Check {
    let start = Instant::now();
    let mut rng = stream(4, &[4]);
    let sample = |mu: f64, n: usize, rng: &mut matl_core::rng::StreamRng| -> Vec<Vec<f64>> {
        let dist = Normal::new(mu, 1.0).unwrap();
        (0..n).map(|_| vec![dist.sample(rng)]).collect()
    };
    let config = AlignmentConfig::default();
    let mut separable = Discriminator::new(1, &config, &mut rng).map_err(|e| e.to_string())?;
    let mut identical = Discriminator::new(1, &config, &mut rng).map_err(|e| e.to_string())?;
    for _ in 0..30 {
        let (s, r) = (sample(3.0, 500, &mut rng), sample(-3.0, 500, &mut rng));
        separable.update(&s, &r, &mut rng).map_err(|e| e.to_string())?;
        let (a, b) = (sample(0.0, 500, &mut rng), sample(0.0, 500, &mut rng));
        identical.update(&a, &b, &mut rng).map_err(|e| e.to_string())?;
    }
    let sep = separable.accuracy(&sample(3.0, 2000, &mut rng), &sample(-3.0, 2000, &mut rng)).map_err(|e| e.to_string())?;
    let same = identical.accuracy(&sample(0.0, 2000, &mut rng), &sample(0.0, 2000, &mut rng)).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    Ok((sep >= 0.95 && (0.4..=0.6).contains(&same) && secs < 60.0, format!("held-out accuracy: separable {sep:.3}, identical {same:.3}, {secs:.1}s")))
}

fn c5_cartpole(suite: &mut Suite) -> Check {
    let config = suite.preset("cartpole-balance")?;
    let horizon = config.train.horizon.unwrap_or(200) as f64;
    let alive = config.env.target_reward.alive_bonus;
    let target = 0.95 * horizon * alive;
    let seeds = config.seeds.len();
    let dir = suite.run(config)?;
    let curves = curves(&dir)?;
    let runs = curves.get("independent").ok_or("no independent runs")?;
    let firsts: Vec<Option<usize>> = runs.iter().map(|c| c.iter().take(100).position(|&v| v >= target)).collect();
    let per_seed = suite.minutes("cartpole-balance") / seeds as f64;
    let ok = runs.len() == 5 && firsts.iter().all(Option::is_some) && per_seed < 5.0;
    Ok((ok, format!("first iteration >= {target:.0}: {firsts:?}; {per_seed:.2} min per seed")))
}

fn c6_sparse(suite: &mut Suite) -> Check {
    let config = suite.preset("sparse-pointmass")?;
    let n = config.train.iterations;
    let dir = suite.run(config)?;
    let curves = curves(&dir)?;
    let medians: Vec<Vec<f64>> = curves
        .values()
        .map(|runs| (0..runs[0].len()).map(|i| median(&runs.iter().map(|c| c[i]).collect::<Vec<_>>())).collect())
        .collect();
    let lo = medians.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = medians.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok((false, format!("median curves are flat at {lo}")));
    }
    let to_threshold = |method: &str| -> Result<f64, String> {
        let runs = curves.get(method).ok_or_else(|| format!("no runs for {method}"))?;
        let its: Vec<f64> = runs
            .iter()
            .map(|c| c.iter().position(|&v| (v - lo) / (hi - lo) >= 0.8).unwrap_or(n) as f64)
            .collect();
        Ok(median(&its))
    };
    let (matl, indep, matl_f, ft) = (to_threshold("matl")?, to_threshold("independent")?, to_threshold("matl_f")?, to_threshold("fine_tuning")?);
    let minutes = suite.minutes("sparse-pointmass");
    Ok((
        matl < indep && matl_f <= ft && minutes < 20.0,
        format!("median iterations to 0.8: matl {matl} vs independent {indep}; matl_f {matl_f} vs fine_tuning {ft} (censored at {n}); {minutes:.1} min"),
    ))
}

fn c7_uninformative(suite: &mut Suite) -> Check {
    let config = suite.preset("uninformative-hopper")?;
    let dir = suite.run(config)?;
    let curves = curves(&dir)?;
    let (matl, indep) = (median(&finals(&curves, "matl")?), median(&finals(&curves, "independent")?));
    let minutes = suite.minutes("uninformative-hopper");
    Ok((
        matl > 0.0 && matl >= 2.0 * indep.abs() && minutes < 40.0,
        format!("median final forward distance: matl {matl:.3} m, independent {indep:.3} m; {minutes:.1} min"),
    ))
}

fn c8_no_env_reward(suite: &mut Suite) -> Check {
    let full = suite.preset("sparse-pointmass")?;
    let full_dir = suite.run(full)?;
    let reference = median(&finals(&curves(&full_dir)?, "matl")?);
    let dir = suite.run(suite.preset("no-env-reward")?)?;
    let finals = finals(&curves(&dir)?, "matl")?;
    if !(reference > 0.0) {
        return Ok((false, format!("full-reward matl has no positive final performance ({reference})")));
    }
    let ratio = median(&finals) / reference;
    Ok((ratio >= 0.5, format!("median final without target reward / full-reward matl = {:.2} / {reference:.2} = {ratio:.3}", median(&finals))))
}

fn c9_lambda(suite: &mut Suite) -> Check {
    let config = suite.preset("lambda-sweep")?;
    let sweep = config.lambda_sweep.clone();
    let dir = suite.run(config)?;
    let curves = curves(&dir)?;
    let mut points = Vec::new();
    for l in &sweep {
        points.push(median(&finals(&curves, &format!("matl_lambda{l}"))?));
    }
    let up = points.windows(2).any(|w| w[1] > w[0]);
    let down = points.windows(2).any(|w| w[1] < w[0]);
    let zero = finals(&curves, "matl_lambda0")?;
    let (d, p) = ks_p_value(&zero, &finals(&curves, "independent")?);
    let shown: Vec<String> = sweep.iter().zip(&points).map(|(l, v)| format!("{l}: {v:.3}")).collect();
    Ok((up && down && p > 0.05, format!("median final distance by weight [{}]; KS(lambda 0, independent) D = {d:.2}, p = {p:.3}", shown.join(", "))))
}

fn c10_judge(dir: &Path) -> Result<(bool, String), String> {
    let curves = curves(dir)?;
    let (ind, ft, matl) = (median(&finals(&curves, "independent")?), median(&finals(&curves, "fine_tuning")?), median(&finals(&curves, "matl")?));
    let seeds = curves["independent"].len();
    Ok((ind > ft && matl >= ind, format!("{seeds} seeds: independent {ind:.3}, fine_tuning {ft:.3}, matl {matl:.3}")))
}

fn c10_contact(suite: &mut Suite) -> Check {
    let mut config = suite.preset("contact-transfer")?;
    let dir = suite.run(config.clone())?;
    let (ok, first) = c10_judge(&dir)?;
    if ok {
        return Ok((true, first));
    }
    config.experiment.push_str("-20seeds");
    config.seeds = (0..20).collect();
    let dir = suite.run(config)?;
    let (ok, second) = c10_judge(&dir)?;
    Ok((ok, format!("{first}; re-run {second}")))
}

fn c11_determinism(suite: &Suite) -> Check {
    let mut config: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(suite.root.join("configs/sparse-pointmass.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    config["experiment"] = "determinism".into();
    config["methods"] = serde_json::json!(["independent", "direct_transfer", "fine_tuning", "matl_u", "matl", "matl_f"]);
    config["seeds"] = serde_json::json!([0, 1]);
    config["train"]["iterations"] = 3.into();
    config["train"]["pretrain"]["max_iterations"] = 3.into();
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = scratch.path().join("determinism.json");
    std::fs::write(&path, config.to_string()).map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for k in 0..2 {
        let out = scratch.path().join(format!("out{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_matl"))
            .args(["run", "--deterministic", "--config"])
            .arg(&path)
            .arg("--out")
            .arg(&out)
            .env("RUST_LOG", "warn")
            .env_remove("MATL_SEED_OFFSET")
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Ok((false, format!("run {k} exited with {status}")));
        }
        trees.push(csv_files(&out.join("determinism"))?);
    }
    let differing: Vec<&String> = trees[0].iter().filter(|(k, v)| trees[1].get(*k) != Some(v)).map(|(k, _)| k).collect();
    let same_names = trees[0].keys().eq(trees[1].keys());
    Ok((
        same_names && differing.is_empty() && trees[0].len() >= 24,
        format!("{} CSV files compared, {} differ", trees[0].len(), differing.len()),
    ))
}

fn csv_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = entry.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                let key = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(key, std::fs::read(&p).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

fn c2_trust_region(suite: &Suite) -> Check {
    let (mut accepted, mut violations, mut worst_ratio) = (0usize, 0usize, 0.0f64);
    for (config, dir) in &suite.ran {
        let max_kl = config.train.agent.trpo.max_kl;
        for entry in walk(dir)? {
            if !entry.to_string_lossy().ends_with(".updates.csv") {
                continue;
            }
            for u in read_updates(&entry).map_err(|e| e.to_string())?.into_iter().filter(|u| u.accepted) {
                accepted += 1;
                worst_ratio = worst_ratio.max(u.kl / max_kl);
                if !(u.kl <= 1.5 * max_kl) {
                    violations += 1;
                }
            }
        }
    }
    Ok((accepted >= 1000 && violations == 0, format!("{accepted} accepted updates, {violations} over 1.5 max_kl, worst KL / max_kl = {worst_ratio:.3}")))
}

fn walk(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = entry.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn c12_accounting(suite: &Suite) -> Check {
    let mut experiments = 0;
    for (config, dir) in &suite.ran {
        let per_batch = config.train.episodes_per_batch * config.train.horizon.unwrap_or(config.env.family.default_horizon());
        let runs = runs(dir)?;
        for (method, seeds) in &runs {
            for rows in seeds {
                if rows.len() != config.train.iterations {
                    return Ok((false, format!("{}: {method} has {} of {} iterations", config.experiment, rows.len(), config.train.iterations)));
                }
                if let Some(r) = rows.iter().find(|r| r.target_steps != (r.iteration + 1) * per_batch) {
                    return Ok((false, format!("{}: {method} iteration {} used {} target steps, expected {}", config.experiment, r.iteration, r.target_steps, (r.iteration + 1) * per_batch)));
                }
            }
        }
        experiments += 1;
    }
    Ok((experiments > 0, format!("{experiments} experiments, every run at (iteration + 1) x steps-per-batch target steps")))
}

fn main() -> ExitCode {
    let mut suite = Suite::new();
    println!("acceptance results under {}", suite.out.display());
    let mut results: Vec<(u8, &str, Check, Duration)> = Vec::new();
    let mut record = |id: u8, name: &'static str, f: &mut dyn FnMut() -> Check| {
        println!("criterion {id}: {name} ...");
        let start = Instant::now();
        let r = f();
        let took = start.elapsed();
        let line = line(id, name, &r);
        println!("{line}");
        results.push((id, name, r, took));
    };
    record(1, "gradient integrity", &mut c1_gradients);
    record(3, "reward identities", &mut c3_reward_identities);
    record(4, "discriminator sanity", &mut c4_discriminator);
    record(5, "baseline competence", &mut || c5_cartpole(&mut suite));
    record(6, "sparse-reward transfer", &mut || c6_sparse(&mut suite));
    record(7, "uninformative-reward guidance", &mut || c7_uninformative(&mut suite));
    record(8, "no target reward", &mut || c8_no_env_reward(&mut suite));
    record(9, "weight sensitivity", &mut || c9_lambda(&mut suite));
    record(10, "contact-model transfer", &mut || c10_contact(&mut suite));
    record(11, "determinism", &mut || c11_determinism(&suite));
    record(2, "trust-region constraint", &mut || c2_trust_region(&suite));
    record(12, "sample accounting", &mut || c12_accounting(&suite));

    results.sort_by_key(|r| r.0);
    println!("\nacceptance summary");
    let mut failed = 0;
    for (id, name, r, took) in &results {
        failed += usize::from(!matches!(r, Ok((true, _))));
        println!("{}  ({:.0}s)", line(*id, name, r), took.as_secs_f64());
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn line(id: u8, name: &str, r: &Check) -> String {
    match r {
        Ok((true, detail)) => format!("PASS {id:>2} {name}: {detail}"),
        Ok((false, detail)) => format!("FAIL {id:>2} {name}: {detail}"),
        Err(e) => format!("FAIL {id:>2} {name}: error: {e}"),
    }
}
