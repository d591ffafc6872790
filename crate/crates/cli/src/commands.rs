use std::fs;
use std::path::{Path, PathBuf};

use axcgp_core::canonical::canonicalize_outputs;
use axcgp_core::report::{decile_csv, pvalue_csv, run_batch, run_seed, scatter_csv, Arm, BatchError};
use axcgp_core::search::{Clock, ConstrainedArea, SearchError, RUN_LOG_HEADER};
use axcgp_core::{
    default_columns, epsilon_abs, evolve, seed_multiplier, Chromosome, Evaluator, Mode, MutationModel, RunLog,
    SearchConfig, SeedKind,
};
use axcgp_neural::{ModelConfig, Transformer};
use axcgp_train::dataset::{load_or_compute_labels, MANIFEST};
use axcgp_train::{
    attractiveness_of, filter_valid, generate_dataset, read_dataset, trace_csv, train, write_dataset, DatasetError,
    GenConfig, LossWeights, TrainConfig, TrainError, TrainRecord,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::args::*;
use crate::manifest::{data, OutDir, RunManifest};
use crate::CliError;

fn snapshot<T: Serialize>(args: &T) -> Map<String, Value> {
    match serde_json::to_value(args) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("argument structs serialize to objects"),
    }
}

fn check_bits(bits: u32) -> Result<(), CliError> {
    if (2..=8).contains(&bits) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--bits {bits}: supported widths are 2..=8")))
    }
}

fn eps_abs(pct: f64, bits: u32) -> Result<u64, CliError> {
    if !(0.0..=100.0).contains(&pct) {
        return Err(CliError::Usage(format!("--epsilon-pct {pct}: must lie in [0, 100]")));
    }
    Ok(epsilon_abs(pct, bits))
}

fn clock(c: ClockArg) -> Clock {
    match c {
        ClockArg::Virtual => Clock::VIRTUAL_DEFAULT,
        ClockArg::Wall => Clock::Wall,
    }
}

fn search_config(s: &SearchArgs, mode: Mode, time: Option<f64>) -> Result<SearchConfig, CliError> {
    check_bits(s.bits)?;
    Ok(SearchConfig {
        lambda: s.lambda,
        max_generations: s.gens.unwrap_or(if time.is_some() { u64::MAX } else { 100_000 }),
        time_budget: time,
        eps_abs: eps_abs(s.epsilon_pct, s.bits)?,
        stag_max: s.stag_max,
        mode,
        rng_seed: s.rng,
        clock: clock(s.clock),
    })
}

fn seed_kinds(names: &[String]) -> Result<Vec<SeedKind>, CliError> {
    if names.is_empty() {
        return Ok(SeedKind::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| n.parse().map_err(|e| CliError::Usage(format!("--seed-kind: {e}"))))
        .collect()
}

fn builtin_seed(kind: SeedKind, s: &SearchArgs) -> Result<Chromosome, CliError> {
    let columns = s.columns.unwrap_or_else(|| default_columns(s.bits));
    seed_multiplier(kind, s.bits, columns).map_err(|e| CliError::Usage(e.to_string()))
}

fn load_model(path: &Path, bits: u32, columns: usize) -> Result<Transformer, CliError> {
    let m = Transformer::load(path).map_err(|e| data(path, e))?;
    let params = axcgp_core::CircuitParams::multiplier(bits, columns);
    m.check(&params).map_err(|e| data(path, e))?;
    Ok(m)
}

fn search_error(e: SearchError) -> CliError {
    match e {
        SearchError::Config(_) | SearchError::MissingModel => CliError::Usage(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

pub fn evolve_cmd(a: &EvolveArgs) -> Result<RunManifest, CliError> {
    let s = &a.search;
    let mut m = RunManifest::new("evolve", snapshot(a));
    m.seeds.insert("rng".into(), s.rng);
    let mode = match a.mode {
        ModeArg::Standard => Mode::Standard,
        ModeArg::Hybrid => Mode::Hybrid,
    };
    let cfg = search_config(s, mode, a.time_sec)?;
    if mode == Mode::Hybrid && a.model.is_none() {
        return Err(CliError::Usage("--mode hybrid requires --model".into()));
    }
    let mut seed = match &a.seed_file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| data(p, e))?;
            let c: Chromosome = text.parse().map_err(|e| data(p, e))?;
            if c.params().bits != s.bits {
                return Err(data(p, format!("{}-bit chromosome, --bits is {}", c.params().bits, s.bits)));
            }
            m.add_input(p)?;
            c
        }
        None => {
            let kind: SeedKind = a.seed_kind.parse().map_err(|e| CliError::Usage(format!("--seed-kind: {e}")))?;
            builtin_seed(kind, s)?
        }
    };
    let model = match (&a.model, mode) {
        (Some(p), Mode::Hybrid) => {
            m.add_input(p)?;
            seed = canonicalize_outputs(&seed).map_err(|e| CliError::Data(e.to_string()))?;
            Some(load_model(p, s.bits, seed.params().columns)?)
        }
        (Some(_), Mode::Standard) => {
            log::warn!("--model is ignored in standard mode");
            None
        }
        _ => None,
    };
    let evaluator = Evaluator::new(s.bits);
    let objective = ConstrainedArea {
        evaluator: &evaluator,
        eps_abs: cfg.eps_abs,
    };
    let dyn_model = model.as_ref().map(|t| t as &(dyn MutationModel + Sync));
    let (best, log) = evolve(&seed, &objective, &cfg, dyn_model).map_err(search_error)?;
    if let Some(e) = log.final_entry() {
        log::info!(
            "best area {} (seed {}, ratio {:.4}), wce {}, {} generations",
            e.area,
            seed.area(),
            e.area.um2() / seed.area().um2(),
            e.wce,
            log.generations
        );
    }
    let mut out = OutDir::create(&a.out)?;
    out.write("best.chr", best.to_text())?;
    out.write("run.csv", log.to_csv())?;
    out.finish(m)
}

pub fn gen_dataset_cmd(a: &GenDatasetArgs) -> Result<RunManifest, CliError> {
    let s = &a.search;
    let mut m = RunManifest::new("gen-dataset", snapshot(a));
    m.seeds.insert("rng".into(), s.rng);
    for r in 0..a.runs {
        m.seeds.insert(format!("run_{r:04}"), run_seed(s.rng, r));
    }
    if !(a.time_per_run >= 0.0) {
        return Err(CliError::Usage("--time-per-run must be non-negative".into()));
    }
    let search = search_config(s, Mode::Standard, Some(a.time_per_run))?;
    let kinds = seed_kinds(&a.seed_kinds)?;
    let columns = s.columns.unwrap_or_else(|| default_columns(s.bits));
    for &k in &kinds {
        builtin_seed(k, s)?;
    }
    let mut out = OutDir::create(&a.out)?;
    let evaluator = Evaluator::new(s.bits);
    let records = generate_dataset(
        &evaluator,
        &GenConfig {
            runs: a.runs,
            kinds,
            bits: s.bits,
            columns,
            search,
        },
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    log::info!("{} records", records.len());
    write_dataset(out.path(), &records).map_err(|e| CliError::Data(e.to_string()))?;
    out.record(MANIFEST);
    for r in &records {
        out.record(&format!("{}.chr", r.id));
    }
    out.finish(m)
}

pub fn train_cmd(a: &TrainArgs) -> Result<RunManifest, CliError> {
    let mut m = RunManifest::new("train", snapshot(a));
    m.seeds.insert("rng".into(), a.rng);
    m.seeds.insert("label_seed".into(), a.label_seed);
    if a.batch == 0 || a.label_trials == 0 {
        return Err(CliError::Usage("--batch and --label-trials must be positive".into()));
    }
    let records = read_dataset(&a.dataset).map_err(|e| CliError::Data(e.to_string()))?;
    let first = records
        .first()
        .ok_or_else(|| data(&a.dataset.join(MANIFEST), "dataset has no records"))?;
    let params = *first.chromosome.params();
    if let Some(r) = records.iter().find(|r| *r.chromosome.params() != params) {
        return Err(data(&a.dataset, format!("record {} has a different shape", r.id)));
    }
    m.add_input(&a.dataset.join(MANIFEST))?;
    for r in &records {
        m.add_input(&a.dataset.join(format!("{}.chr", r.id)))?;
    }

    let evaluator = Evaluator::new(params.bits);
    let eps = eps_abs(a.epsilon_pct, params.bits)?;
    let valid = filter_valid(&records, &evaluator, eps).map_err(|e| CliError::Data(e.to_string()))?;
    log::info!("{} of {} records within WCE {eps}", valid.len(), records.len());
    let attractiveness = attractiveness_of(&valid);
    let labels: Vec<Vec<Option<f64>>> = valid
        .par_iter()
        .map(|r| load_or_compute_labels(&a.dataset, r, &evaluator, a.label_trials, a.label_seed))
        .collect::<Result<_, DatasetError>>()
        .map_err(|e| CliError::Data(e.to_string()))?;
    let data_set: Vec<TrainRecord> = valid
        .iter()
        .zip(attractiveness)
        .zip(labels)
        .map(|((r, att), labels)| TrainRecord {
            chromosome: r.chromosome.clone(),
            attractiveness: att,
            labels,
        })
        .collect();

    let mc = ModelConfig {
        d_model: a.d_model,
        heads: a.heads,
        layers: a.layers,
        ffn_hidden: a.ffn_hidden,
        c_par: a.c_par,
        ..ModelConfig::new(&params)
    };
    let mut model =
        Transformer::init(mc, &mut ChaCha8Rng::seed_from_u64(a.rng)).map_err(|e| CliError::Usage(e.to_string()))?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        mask_start: a.mask_start,
        mask_end: a.mask_end,
        weights: LossWeights {
            c_op: a.c_op,
            c_in: a.c_in,
            c_sens: a.c_sens,
        },
        lr: a.lr,
        clip: a.clip,
        rng_seed: run_seed(a.rng, 0),
    };
    let trace = train(&mut model, &data_set, &tc, |_| {}).map_err(|e| match e {
        TrainError::Diverged { .. } => CliError::Other(e.to_string()),
        _ => CliError::Data(e.to_string()),
    })?;
    let mut out = OutDir::create(&a.out)?;
    let ckpt = out.path().join("model.ckpt");
    model.save(&ckpt).map_err(|e| data(&ckpt, e))?;
    out.record("model.ckpt");
    out.write("loss.csv", trace_csv(&trace))?;
    out.finish(m)
}

fn collect_logs(dir: &Path, found: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| data(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| data(dir, e))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_logs(&p, found)?;
        } else if p.extension().is_some_and(|x| x == "csv") {
            let text = fs::read_to_string(&p).map_err(|e| data(&p, e))?;
            if text.lines().next().map(str::trim) == Some(RUN_LOG_HEADER) {
                found.push(p);
            }
        }
    }
    Ok(())
}

/// Run logs below `dir` in path order.
pub fn find_logs(dir: &Path) -> Result<Vec<(PathBuf, RunLog)>, CliError> {
    let mut paths = Vec::new();
    collect_logs(dir, &mut paths)?;
    if paths.is_empty() {
        return Err(data(dir, "no run logs found"));
    }
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).map_err(|e| data(&p, e))?;
            let log = RunLog::from_csv(&text).map_err(|e| data(&p, format!("line {}: {}", e.line, e.msg)))?;
            Ok((p, log))
        })
        .collect()
}

fn write_reports(
    out: &mut OutDir,
    groups: &[(&str, Vec<&RunLog>)],
    checkpoints: &[f64],
) -> Result<(), CliError> {
    out.write("deciles.csv", decile_csv(groups, checkpoints))?;
    out.write("scatter.csv", scatter_csv(groups))?;
    if let [a, b] = groups {
        out.write("pvalues.csv", pvalue_csv((a.0, &a.1), (b.0, &b.1), checkpoints))?;
    }
    Ok(())
}

pub fn report_cmd(a: &ReportArgs) -> Result<RunManifest, CliError> {
    let mut m = RunManifest::new("report", snapshot(a));
    let mut sets = vec![(a.label.as_str(), find_logs(&a.runs_dir)?)];
    if let Some(dir) = &a.compare {
        sets.push((a.compare_label.as_str(), find_logs(dir)?));
    }
    for (_, logs) in &sets {
        for (p, _) in logs {
            m.add_input(p)?;
        }
    }
    let groups: Vec<(&str, Vec<&RunLog>)> = sets
        .iter()
        .map(|(label, logs)| (*label, logs.iter().map(|(_, l)| l).collect()))
        .collect();
    let mut out = OutDir::create(&a.out)?;
    write_reports(&mut out, &groups, &a.checkpoints)?;
    out.finish(m)
}

pub fn batch_cmd(a: &BatchArgs) -> Result<RunManifest, CliError> {
    let s = &a.search;
    let mut m = RunManifest::new("batch", snapshot(a));
    m.seeds.insert("rng".into(), s.rng);
    for r in 0..a.runs {
        m.seeds.insert(format!("run_{r:04}"), run_seed(s.rng, r));
    }
    if !(a.time_sec >= 0.0) {
        return Err(CliError::Usage("--time-sec must be non-negative".into()));
    }
    let standard = search_config(s, Mode::Standard, Some(a.time_sec))?;
    let seeds: Vec<(SeedKind, Chromosome)> = seed_kinds(&a.seed_kinds)?
        .into_iter()
        .map(|k| Ok((k, builtin_seed(k, s)?)))
        .collect::<Result<_, CliError>>()?;
    let columns = seeds[0].1.params().columns;
    let model = match &a.model {
        Some(p) => {
            m.add_input(p)?;
            Some(load_model(p, s.bits, columns)?)
        }
        None => None,
    };
    let mut arms = vec![Arm {
        label: "standard".into(),
        config: standard.clone(),
        model: None,
    }];
    if let Some(t) = &model {
        arms.push(Arm {
            label: "hybrid".into(),
            config: SearchConfig {
                mode: Mode::Hybrid,
                ..standard
            },
            model: Some(t),
        });
    }
    let evaluator = Evaluator::new(s.bits);
    let runs = run_batch(&arms, a.runs, &seeds, &evaluator, s.rng).map_err(|e| match e {
        BatchError::Run { source, .. } => search_error(source),
        e => CliError::Data(e.to_string()),
    })?;
    let mut out = OutDir::create(&a.out)?;
    for r in &runs {
        let label = &arms[r.arm].label;
        out.write(&format!("{label}/run_{:04}.csv", r.run), r.log.to_csv())?;
        out.write(&format!("{label}/run_{:04}.chr", r.run), r.best.to_text())?;
    }
    let groups: Vec<(&str, Vec<&RunLog>)> = arms
        .iter()
        .enumerate()
        .map(|(i, arm)| {
            (
                arm.label.as_str(),
                runs.iter().filter(|r| r.arm == i).map(|r| &r.log).collect(),
            )
        })
        .collect();
    write_reports(&mut out, &groups, &a.checkpoints)?;
    out.finish(m)
}
