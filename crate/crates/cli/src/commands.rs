//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use gaware::estimate::{
    build_table, matched_variance_table, split_for_inference, BuildDiagnostics, BuildOptions, Estimator,
    TypeKey, VarianceMode,
};
use gaware::forest::{fit_forest, oob_scores, predict_with_scores, ForestOptions};
use gaware::inference::{prune_partition_set, Centering};
use gaware::io::{load_tree, read_estimate_table, read_raw_study, save_tree, write_atomic, write_estimate_table};
use gaware::regression::RidgeCv;
use gaware::reward::sigma_frontier;
use gaware::simbench::{generate_dgp, replication_seed, run_benchmark, summarize, Method, SimConfig};
use gaware::{fit_gaware_tree, EstimateTable, SearchConfig, SplitRule};

use crate::cli::*;
use crate::config::{parse_grid, FileConfig};
use crate::Invalid;

/// What a subcommand did, for the manifest.
struct Outcome {
    config: Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    version: String,
    seed: Option<u64>,
    config: Value,
    /// SHA-256 of each input file.
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    wall_time_s: f64,
}

pub fn run(cli: Cli) -> Result<()> {
    let start = Instant::now();
    let cfg = FileConfig::load(cli.config.as_deref())?;
    if let Some(n) = cfg.opt(cli.threads, "threads")? {
        if n == 0 {
            return Err(Invalid("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    let outcome = match &cli.command {
        Command::BuildEstimates(a) => build_estimates(&cfg, a)?,
        Command::Fit(a) => fit(&cfg, a)?,
        Command::Sweep(a) => sweep(&cfg, a)?,
        Command::Infer(a) => infer(&cfg, a)?,
        Command::Forest(a) => forest(&cfg, a)?,
        Command::Simulate(a) => simulate(&cfg, a)?,
    };
    let mut inputs = BTreeMap::new();
    for p in &outcome.inputs {
        inputs.insert(p.display().to_string(), hash_file(p)?);
    }
    let manifest = RunManifest {
        subcommand: cli.command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: outcome.seed,
        config: outcome.config,
        inputs,
        outputs: outcome.outputs.iter().map(|p| p.display().to_string()).collect(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let primary = outcome.outputs.first().context("no outputs written")?;
    let path = suffixed(primary, ".manifest.json");
    write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(())
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// `dir/name.csv` becomes `dir/name.<tag>.csv`.
fn tagged(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{tag}.csv"))
}

fn report_warnings(d: &BuildDiagnostics) {
    for w in &d.warnings {
        eprintln!("warning: {w}");
    }
    if d.fallback_fits > 0 {
        eprintln!("warning: {} regression fits fell back to arm means", d.fallback_fits);
    }
    if d.negative_variances_floored > 0 {
        eprintln!("warning: {} negative variances floored at zero", d.negative_variances_floored);
    }
}

fn csv_bytes(header: Vec<String>, rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)
}

fn serialize_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)
}

fn build_estimates(cfg: &FileConfig, a: &BuildArgs) -> Result<Outcome> {
    let input = cfg.path(a.input.clone(), "input")?;
    let out = cfg.path(a.out.clone(), "out")?;
    let kind = cfg.get(a.estimator, "estimator", EstimatorKind::Ipw)?;
    let folds = cfg.get(a.folds, "folds", 5usize)?;
    let match_size = cfg.get(a.match_size, "match-size", 2usize)?;
    let seed = cfg.get(a.seed, "seed", 0u64)?;
    let split = cfg.flag(a.split, "split")?;
    let key = cfg.get(a.key, "key", KeyKind::Env)?;
    let variance = cfg.get(a.variance, "variance", VarianceKind::PerType)?;
    let model_variance = cfg.flag(a.model_variance, "model-variance")?;
    let resolved = json!({
        "input": input, "out": out, "estimator": kind, "folds": folds, "match-size": match_size,
        "seed": seed, "split": split, "key": key, "variance": variance, "model-variance": model_variance,
    });

    let study = read_raw_study(&input)?;
    let opts = BuildOptions {
        key: match key {
            KeyKind::Env => TypeKey::EnvAndCovariates,
            KeyKind::Unit => TypeKey::Unit,
        },
        variance: match variance {
            VarianceKind::PerType => VarianceMode::PerType,
            VarianceKind::Pooled => VarianceMode::PooledWithinEnv,
        },
        seed,
    };
    let oracle = RidgeCv::default();
    let estimator = match kind {
        EstimatorKind::Ipw | EstimatorKind::Match => Estimator::Ipw,
        EstimatorKind::Dr => Estimator::DoublyRobust { oracle: &oracle, folds },
        EstimatorKind::Param => Estimator::Parametric {
            oracle: &oracle,
            folds,
            model_variance,
        },
    };
    let outputs = if split {
        if kind == EstimatorKind::Match {
            return Err(Invalid("--split is not available with the match estimator".into()).into());
        }
        let pair = split_for_inference(&study, estimator, &opts)?;
        report_warnings(&pair.diagnostics);
        if !pair.excluded.is_empty() {
            eprintln!(
                "warning: {} types with fewer than 4 units left out of both halves",
                pair.excluded.len()
            );
        }
        let main = tagged(&out, "main");
        let holdout = tagged(&out, "holdout");
        write_estimate_table(&pair.main, &main)?;
        write_estimate_table(&pair.holdout, &holdout)?;
        println!("wrote {} main and {} holdout types", pair.main.len(), pair.holdout.len());
        vec![main, holdout]
    } else {
        let built = if kind == EstimatorKind::Match {
            matched_variance_table(&study, &oracle, folds, match_size, seed)?
        } else {
            build_table(&study, estimator, &opts)?
        };
        report_warnings(&built.diagnostics);
        write_estimate_table(&built.table, &out)?;
        println!("wrote {} types from {} units", built.table.len(), study.len());
        vec![out]
    };
    Ok(Outcome {
        config: resolved,
        seed: Some(seed),
        inputs: vec![input],
        outputs,
    })
}

#[derive(Debug, Clone, Serialize)]
struct SearchSettings {
    sigma2: f64,
    depth: usize,
    splits: usize,
    min_leaf: usize,
    groups: usize,
    split_rule: RuleKind,
}

impl SearchSettings {
    fn resolve(cfg: &FileConfig, a: &SearchArgs) -> Result<Self> {
        Ok(Self {
            sigma2: cfg.get(a.sigma2, "sigma2", 1.5)?,
            depth: cfg.get(a.depth, "depth", 2)?,
            splits: cfg.get(a.splits, "splits", 5)?,
            min_leaf: cfg.get(a.min_leaf, "min-leaf", 1)?,
            groups: cfg.get(a.groups, "groups", 5)?,
            split_rule: cfg.get(a.split_rule, "split-rule", RuleKind::Equal)?,
        })
    }

    fn config(&self, sigma2: f64) -> SearchConfig {
        SearchConfig::new(self.depth, self.splits, self.groups, sigma2)
            .with_min_leaf(self.min_leaf)
            .with_split_rule(match self.split_rule {
                RuleKind::Equal => SplitRule::Equal,
                RuleKind::Quantile => SplitRule::Quantile,
            })
    }
}

fn merge(mut base: Value, extra: &impl Serialize) -> Result<Value> {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, serde_json::to_value(extra)?) {
        b.extend(e);
    }
    Ok(base)
}

fn prediction_cells(p: Option<&[f64]>, q: usize, missing: &str) -> Vec<String> {
    match p {
        Some(v) => v.iter().map(|x| x.to_string()).collect(),
        None => vec![missing.to_string(); q],
    }
}

fn fit(cfg: &FileConfig, a: &FitArgs) -> Result<Outcome> {
    let input = cfg.path(a.input.clone(), "input")?;
    let out = cfg.get(a.out.clone(), "out", PathBuf::from("model.json"))?;
    let report = cfg.get(a.report.clone(), "report", PathBuf::from("report.csv"))?;
    let s = SearchSettings::resolve(cfg, &a.search)?;
    let table = read_estimate_table(&input)?;
    let result = fit_gaware_tree(&table, &s.config(s.sigma2))?;
    save_tree(&result.tree, &out)?;

    let q = table.num_outcomes();
    let mut header = vec!["type_id".to_string(), "leaf".into(), "label".into()];
    header.extend(table.outcome_names().iter().map(|n| format!("prediction_{n}")));
    let rows = table.rows().iter().enumerate().map(|(i, row)| {
        let mut r = vec![
            row.type_id.clone(),
            result.tree.leaf_index(&row.covariates).to_string(),
            result.partition.label(i).to_string(),
        ];
        r.extend(prediction_cells(result.tree.predict(&row.covariates), q, "IGNORANCE"));
        r
    });
    write_atomic(&report, &csv_bytes(header, rows)?)?;

    let b = &result.breakdown;
    println!(
        "objective {:.6}  archetypes {}  basin mass {:.4}  epsilon {:.3e}",
        b.total,
        b.num_archetypes(),
        b.ignorance_mass,
        result.epsilon
    );
    let resolved = merge(json!({"input": input, "out": out, "report": report}), &s)?;
    Ok(Outcome {
        config: resolved,
        seed: None,
        inputs: vec![input],
        outputs: vec![out, report],
    })
}

fn sweep(cfg: &FileConfig, a: &SweepArgs) -> Result<Outcome> {
    let input = cfg.path(a.input.clone(), "input")?;
    let out = cfg.get(a.out.clone(), "out", PathBuf::from("frontier.csv"))?;
    let grid_text = cfg.get(a.sigma2_grid.clone(), "sigma2-grid", "0.5:5.5:1.0".to_string())?;
    let grid = parse_grid(&grid_text)?;
    let s = SearchSettings::resolve(cfg, &a.search)?;
    let table = read_estimate_table(&input)?;
    let rows = sigma_frontier(&table, &grid, s.groups, |sigma2| {
        fit_gaware_tree(&table, &s.config(sigma2)).map(|f| f.partition)
    })?;
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("warning: sigma2 = {}: {}", r.sigma2, r.error.as_deref().unwrap_or_default());
    }
    write_atomic(&out, &serialize_csv(&rows)?)?;
    println!("wrote {} frontier rows", rows.len());
    let resolved = merge(json!({"input": input, "out": out, "sigma2-grid": grid}), &s)?;
    Ok(Outcome {
        config: resolved,
        seed: None,
        inputs: vec![input],
        outputs: vec![out],
    })
}

fn candidate_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("cannot read {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .filter(|p| !p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Invalid(format!("no .json candidates in {}", path.display())).into());
    }
    Ok(files)
}

fn infer(cfg: &FileConfig, a: &InferArgs) -> Result<Outcome> {
    let main_path = cfg.path(a.main.clone(), "main")?;
    let holdout_path = cfg.path(a.holdout.clone(), "holdout")?;
    let cand_path = cfg.path(a.candidates.clone(), "candidates")?;
    let out = cfg.get(a.out.clone(), "out", PathBuf::from("tests.csv"))?;
    let gamma = cfg.get(a.gamma, "gamma", 0.1)?;
    let centering = cfg.get(a.centering, "centering", CenteringKind::Global)?;
    let s = SearchSettings::resolve(cfg, &a.search)?;
    let main = read_estimate_table(&main_path)?;
    let holdout = read_estimate_table(&holdout_path)?;
    let files = candidate_files(&cand_path)?;
    let mut candidates = Vec::with_capacity(files.len());
    for f in &files {
        let tree = load_tree(f)?;
        let problems = tree.validate_against(&main);
        if !problems.is_empty() {
            return Err(Invalid(format!("{}: {}", f.display(), problems.join("; "))).into());
        }
        let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        candidates.push((id, tree.partition(&main)));
    }
    let result = prune_partition_set(
        &main,
        &holdout,
        &candidates,
        gamma,
        &s.config(s.sigma2),
        match centering {
            CenteringKind::Global => Centering::Global,
            CenteringKind::PerGroup => Centering::PerGroup,
        },
    )?;
    for w in &result.alpha_o.warnings {
        eprintln!("warning: {w}");
    }
    write_atomic(&out, &serialize_csv(&result.reports)?)?;
    println!("retained {} of {}: {}", result.retained.len(), candidates.len(), result.retained.join(", "));
    let resolved = merge(
        json!({"main": main_path, "holdout": holdout_path, "candidates": cand_path,
               "out": out, "gamma": gamma, "centering": centering}),
        &s,
    )?;
    let mut inputs = vec![main_path, holdout_path];
    inputs.extend(files);
    Ok(Outcome {
        config: resolved,
        seed: None,
        inputs,
        outputs: vec![out],
    })
}

fn forest(cfg: &FileConfig, a: &ForestArgs) -> Result<Outcome> {
    let input = cfg.path(a.input.clone(), "input")?;
    let out = cfg.get(a.out.clone(), "out", PathBuf::from("forest.json"))?;
    let scores_path = cfg.get(a.scores.clone(), "scores", PathBuf::from("scores.csv"))?;
    let s = SearchSettings::resolve(cfg, &a.search)?;
    let table: EstimateTable = read_estimate_table(&input)?;
    let bootstrap = !cfg.flag(a.no_bootstrap, "no-bootstrap")?;
    let oob = cfg.flag(a.oob, "oob")?;
    let default_vars = table.num_covariates().saturating_sub(usize::from(bootstrap)).max(1);
    let opts = ForestOptions {
        trees: cfg.get(a.trees, "trees", 100)?,
        vars: cfg.get(a.vars, "vars", default_vars)?,
        seed: cfg.get(a.seed, "seed", 0)?,
        bootstrap,
    };
    if oob && !bootstrap {
        return Err(Invalid("--oob needs bootstrap resampling".into()).into());
    }
    let model = fit_forest(&table, &s.config(s.sigma2), &opts)?;
    write_atomic(&out, model.to_json()?.as_bytes())?;
    let preds = if oob {
        oob_scores(&model, &table)
    } else {
        predict_with_scores(&model, &table)?
    };
    let q = table.num_outcomes();
    let mut header = vec!["type_id".to_string(), "score".into()];
    header.extend(table.outcome_names().iter().map(|n| format!("prediction_{n}")));
    let rows = preds.iter().map(|p| {
        let mut r = vec![p.type_id.clone(), p.score.to_string()];
        r.extend(prediction_cells(p.prediction.as_deref(), q, "NA"));
        r
    });
    write_atomic(&scores_path, &csv_bytes(header, rows)?)?;
    println!("fitted {} trees", model.trees.len());
    let resolved = merge(
        json!({"input": input, "out": out, "scores": scores_path, "trees": opts.trees,
               "vars": opts.vars, "seed": opts.seed, "bootstrap": bootstrap, "oob": oob}),
        &s,
    )?;
    Ok(Outcome {
        config: resolved,
        seed: Some(opts.seed),
        inputs: vec![input],
        outputs: vec![out, scores_path],
    })
}

fn simulate(cfg: &FileConfig, a: &SimulateArgs) -> Result<Outcome> {
    let out = cfg.get(a.out.clone(), "out", PathBuf::from("bench.csv"))?;
    let summary_path = cfg.get(a.summary.clone(), "summary", PathBuf::from("summary.json"))?;
    let study_out = cfg.opt(a.study_out.clone(), "study-out")?;
    let scales = parse_grid(&cfg.get(a.scales.clone(), "scales", "0.1,0.5,1,2,3".to_string())?)?;
    let grid = parse_grid(&cfg.get(a.sigma2_grid.clone(), "sigma2-grid", "0.1,0.5,1,1.5,2".to_string())?)?;
    let defaults = SimConfig::default();
    let sim = SimConfig {
        n_types: cfg.get(a.n, "n", defaults.n_types)?,
        reps: cfg.get(a.reps, "reps", defaults.reps)?,
        units_per_type: cfg.get(a.units_per_type, "units-per-type", defaults.units_per_type)?,
        seed: cfg.get(a.seed, "seed", defaults.seed)?,
        depth: cfg.get(a.depth, "depth", defaults.depth)?,
        splits: cfg.get(a.splits, "splits", defaults.splits)?,
        min_leaf: cfg.get(a.min_leaf, "min-leaf", defaults.min_leaf)?,
        groups: cfg.get(a.groups, "groups", defaults.groups)?,
        ..defaults
    };
    let report = run_benchmark(&sim, &scales, &Method::standard_set(&grid))?;
    let max_sigma2 = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let summary = summarize(&report, max_sigma2);
    write_atomic(&out, &serialize_csv(&report.rows)?)?;
    let summary_json = json!({"config": sim, "scales": scales, "sigma2_grid": grid, "summary": summary});
    write_atomic(&summary_path, serde_json::to_string_pretty(&summary_json)?.as_bytes())?;
    for h in &summary.headlines {
        println!(
            "scale {}: best gaware {:?} (sigma2 {:?}), plain tree {:?}, ratio {:?}",
            h.scale, h.best_gaware_error, h.best_sigma2, h.plain_tree_error, h.ratio
        );
    }
    let mut outputs = vec![out, summary_path];
    if let Some(p) = study_out {
        let first = SimConfig {
            scale: scales[0],
            ..sim.clone()
        };
        let data = generate_dgp(&first, replication_seed(sim.seed, 0))?;
        gaware::io::write_raw_study(&data.study, &p)?;
        outputs.push(p);
    }
    let resolved = json!({"sim": sim, "scales": scales, "sigma2-grid": grid, "outputs": outputs});
    Ok(Outcome {
        config: resolved,
        seed: Some(sim.seed),
        inputs: vec![],
        outputs,
    })
}
