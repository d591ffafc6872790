//! Training corpus: harvesting, validity filtering, and on-disk layout.
//!
//! A dataset directory holds `manifest.csv` (`id,wce,area,attractiveness`),
//! one `<id>.chr` chromosome file per record, and sensitivity label caches
//! `<id>.t<trials>-s<seed>.labels` written on first use.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use axcgp_core::canonical::{canonicalize_outputs, CanonicalizeError};
use axcgp_core::chromosome::ParseError;
use axcgp_core::report::run_seed;
use axcgp_core::search::{ConstrainedArea, SearchError};
use axcgp_core::{evolve_standard_observed, seed_multiplier, Area, Chromosome, Evaluator, SearchConfig, SeedKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::labels::sensitivity_labels;
use crate::pareto::{attractiveness, ParetoCurve, ATTRACTIVENESS_DECAY};

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    /// Transformer form.
    pub chromosome: Chromosome,
    pub wce: u64,
    pub area: Area,
    pub attractiveness: f64,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no valid circuits for WCE threshold {eps_abs} (of {total} records)")]
    Empty { eps_abs: u64, total: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Chromosome { path: PathBuf, source: ParseError },
    #[error(transparent)]
    Canonicalize(#[from] CanonicalizeError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("seed: {0}")]
    Seed(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Members with `wce ≤ eps_abs` and no error on zero-operand rows.
pub fn filter_valid<'a>(
    records: &'a [Record],
    evaluator: &Evaluator,
    eps_abs: u64,
) -> Result<Vec<&'a Record>, DatasetError> {
    let keep: Vec<&Record> = records
        .par_iter()
        .filter(|r| {
            let m = evaluator.metrics(&r.chromosome);
            m.wce <= eps_abs && m.wce_zr == 0
        })
        .collect();
    if keep.is_empty() {
        return Err(DatasetError::Empty {
            eps_abs,
            total: records.len(),
        });
    }
    Ok(keep)
}

/// Pareto curve over `(wce, area)` of the given records.
pub fn pareto_curve(records: &[&Record]) -> Option<ParetoCurve> {
    ParetoCurve::new(records.iter().map(|r| (r.wce as f64, r.area.um2())))
}

/// Attractiveness of each record relative to the front of the whole set.
pub fn attractiveness_of(records: &[&Record]) -> Vec<f64> {
    let Some(curve) = pareto_curve(records) else {
        return Vec::new();
    };
    records
        .iter()
        .map(|r| attractiveness(r.area.um2(), r.wce as f64, &curve, ATTRACTIVENESS_DECAY))
        .collect()
}

/// Harvesting plan for [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub runs: usize,
    pub kinds: Vec<SeedKind>,
    pub bits: u32,
    pub columns: usize,
    /// Per-run search settings; `rng_seed` is the base seed.
    pub search: SearchConfig,
}

/// Runs standard CGP from exact seeds (round-robin over `kinds`) and keeps
/// the seeds plus every strictly improved parent, without duplicates.
pub fn generate_dataset(evaluator: &Evaluator, cfg: &GenConfig) -> Result<Vec<Record>, DatasetError> {
    let seeds: Vec<Chromosome> = cfg
        .kinds
        .iter()
        .map(|&k| {
            let c = seed_multiplier(k, cfg.bits, cfg.columns).map_err(|e| DatasetError::Seed(e.to_string()))?;
            Ok(canonicalize_outputs(&c)?)
        })
        .collect::<Result<_, DatasetError>>()?;
    if seeds.is_empty() {
        return Err(DatasetError::Seed("no seed kinds given".into()));
    }
    let objective = ConstrainedArea {
        evaluator,
        eps_abs: cfg.search.eps_abs,
    };
    let harvested: Vec<Vec<Chromosome>> = (0..cfg.runs)
        .into_par_iter()
        .map(|r| {
            let search = SearchConfig {
                rng_seed: run_seed(cfg.search.rng_seed, r),
                ..cfg.search.clone()
            };
            let mut found = Vec::new();
            evolve_standard_observed(&seeds[r % seeds.len()], &objective, &search, &mut |c, _| {
                found.push(c.clone())
            })?;
            Ok(found)
        })
        .collect::<Result<_, SearchError>>()?;

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for c in seeds.into_iter().chain(harvested.into_iter().flatten()) {
        if !seen.insert(c.genes()) {
            continue;
        }
        let m = evaluator.metrics(&c);
        debug_assert!(m.wce <= cfg.search.eps_abs && m.wce_zr == 0);
        records.push(Record {
            id: format!("m{:05}", records.len()),
            area: c.area(),
            wce: m.wce,
            chromosome: c,
            attractiveness: 1.0,
        });
    }
    let a = attractiveness_of(&records.iter().collect::<Vec<_>>());
    for (r, a) in records.iter_mut().zip(a) {
        r.attractiveness = a;
    }
    Ok(records)
}

pub const MANIFEST: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "id,wce,area,attractiveness";

pub fn write_dataset(dir: &Path, records: &[Record]) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for r in records {
        let path = dir.join(format!("{}.chr", r.id));
        fs::write(&path, r.chromosome.to_text()).map_err(io_err(&path))?;
        manifest.push_str(&format!("{},{},{},{}\n", r.id, r.wce, r.area, r.attractiveness));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(io_err(&path))
}

pub fn read_dataset(dir: &Path) -> Result<Vec<Record>, DatasetError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let format = |msg: String| DatasetError::Format {
        path: path.clone(),
        msg,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
        return Err(format(format!("expected header {MANIFEST_HEADER:?}")));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.trim().split(',').collect();
        let bad = |what: &str| format(format!("line {}: bad {what}", i + 2));
        if f.len() != 4 {
            return Err(bad("field count"));
        }
        let chr = dir.join(format!("{}.chr", f[0]));
        let body = fs::read_to_string(&chr).map_err(io_err(&chr))?;
        let chromosome: Chromosome = body.parse().map_err(|source| DatasetError::Chromosome {
            path: chr.clone(),
            source,
        })?;
        let chromosome = canonicalize_outputs(&chromosome)?;
        records.push(Record {
            id: f[0].to_string(),
            wce: f[1].parse().map_err(|_| bad("wce"))?,
            area: axcgp_core::search::parse_area(f[2]).ok_or_else(|| bad("area"))?,
            attractiveness: f[3].parse().map_err(|_| bad("attractiveness"))?,
            chromosome,
        });
    }
    Ok(records)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn parse_labels(text: &str, columns: usize) -> Option<Vec<Option<f64>>> {
    let mut out = vec![None; columns];
    let mut lines = text.lines();
    if lines.next()? != "position,label" {
        return None;
    }
    for line in lines {
        let (p, v) = line.split_once(',')?;
        let p: usize = p.parse().ok()?;
        *out.get_mut(p)? = Some(v.parse().ok()?);
    }
    Some(out)
}

/// Cache file of the labels of record `id` computed with `trials` and `seed`.
pub fn label_cache_path(dir: &Path, id: &str, trials: usize, seed: u64) -> PathBuf {
    dir.join(format!("{id}.t{trials}-s{seed}.labels"))
}

/// Sensitivity labels for `record`, read from its cache file in `dir` or
/// computed (with a per-record RNG stream) and cached.
pub fn load_or_compute_labels(
    dir: &Path,
    record: &Record,
    evaluator: &Evaluator,
    trials: usize,
    seed: u64,
) -> Result<Vec<Option<f64>>, DatasetError> {
    let path = label_cache_path(dir, &record.id, trials, seed);
    let columns = record.chromosome.params().columns;
    if let Ok(text) = fs::read_to_string(&path) {
        if let Some(l) = parse_labels(&text, columns) {
            return Ok(l);
        }
        log::warn!("{}: unreadable label cache, recomputing", path.display());
    }
    let labels = compute_labels(record, evaluator, trials, seed);
    let mut text = String::from("position,label\n");
    for (p, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            text.push_str(&format!("{p},{l}\n"));
        }
    }
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(labels)
}

/// Labels computed in memory with the same RNG stream as the cache.
pub fn compute_labels(record: &Record, evaluator: &Evaluator, trials: usize, seed: u64) -> Vec<Option<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&record.id));
    sensitivity_labels(&record.chromosome, evaluator, trials, &mut rng)
}
