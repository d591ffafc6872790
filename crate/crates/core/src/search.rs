//! (1+λ) evolutionary search, standard and transformer-guided hybrid.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chromosome::{Chromosome, CircuitParams};
use crate::eval::{Evaluation, Evaluator, Fitness};
use crate::gate::Area;
use crate::mutation::{mutate_guided, mutate_uniform, MutationDistribution};

/// Scores a candidate; `parent_area` enables early area rejection.
pub trait Objective {
    fn evaluate(&self, c: &Chromosome, parent_area: Option<Area>) -> Evaluation;
}

impl<F> Objective for F
where
    F: Fn(&Chromosome, Option<Area>) -> Evaluation,
{
    fn evaluate(&self, c: &Chromosome, parent_area: Option<Area>) -> Evaluation {
        self(c, parent_area)
    }
}

/// WCE-constrained area objective.
#[derive(Debug, Clone, Copy)]
pub struct ConstrainedArea<'a> {
    pub evaluator: &'a Evaluator,
    pub eps_abs: u64,
}

impl Objective for ConstrainedArea<'_> {
    fn evaluate(&self, c: &Chromosome, parent_area: Option<Area>) -> Evaluation {
        self.evaluator.fitness(c, self.eps_abs, parent_area)
    }
}

#[derive(Debug, Clone, Error)]
#[error("{0}")]
pub struct ModelError(pub String);

/// Source of mutation distributions for the hybrid search.
pub trait MutationModel {
    /// Fails when the model cannot handle chromosomes of this shape.
    fn check(&self, params: &CircuitParams) -> Result<(), ModelError>;

    fn distribution(&self, c: &Chromosome) -> Result<MutationDistribution, ModelError>;
}

/// Model that always proposes uniform distributions.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformModel;

impl MutationModel for UniformModel {
    fn check(&self, _: &CircuitParams) -> Result<(), ModelError> {
        Ok(())
    }

    fn distribution(&self, c: &Chromosome) -> Result<MutationDistribution, ModelError> {
        Ok(MutationDistribution::uniform(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Standard,
    Hybrid,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(Mode::Standard),
            "hybrid" => Ok(Mode::Hybrid),
            _ => Err(format!("unknown mode {s:?} (standard|hybrid)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Standard => "standard",
            Mode::Hybrid => "hybrid",
        })
    }
}

/// How run time is measured against the time budget and in logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clock {
    Wall,
    /// Deterministic time charged per simulated row and per model
    /// inference, so time-budgeted runs are reproducible.
    Virtual {
        rows_per_sec: f64,
        sec_per_inference: f64,
    },
}

impl Clock {
    pub const VIRTUAL_DEFAULT: Clock = Clock::Virtual {
        rows_per_sec: 2.0e7,
        sec_per_inference: 0.05,
    };
}

struct Timer {
    clock: Clock,
    start: Instant,
}

impl Timer {
    fn seconds(&self, rows: u64, inferences: u64) -> f64 {
        match self.clock {
            Clock::Wall => self.start.elapsed().as_secs_f64(),
            Clock::Virtual {
                rows_per_sec,
                sec_per_inference,
            } => rows as f64 / rows_per_sec + inferences as f64 * sec_per_inference,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Offspring per generation.
    pub lambda: usize,
    pub max_generations: u64,
    /// Seconds; `None` means generations only.
    pub time_budget: Option<f64>,
    pub eps_abs: u64,
    /// Consecutive non-improving generations before falling back to uniform
    /// mutation in hybrid mode.
    pub stag_max: u64,
    pub mode: Mode,
    pub rng_seed: u64,
    pub clock: Clock,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            lambda: 4,
            max_generations: 100_000,
            time_budget: None,
            eps_abs: 0,
            stag_max: 50,
            mode: Mode::Standard,
            rng_seed: 0,
            clock: Clock::Wall,
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum SearchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("seed chromosome is infeasible at the requested error bound")]
    InfeasibleSeed,
    #[error("hybrid search needs a chromosome in transformer form")]
    NotTransformerForm,
    #[error("hybrid search needs a mutation model")]
    MissingModel,
    #[error("model: {0}")]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operator {
    Uniform,
    Guided,
}

impl Operator {
    pub fn name(self) -> &'static str {
        match self {
            Operator::Uniform => "uniform",
            Operator::Guided => "guided",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Event {
    Start,
    /// Strictly better offspring replaced the parent.
    Improve,
    /// Equal-fitness offspring replaced the parent. Logged once per
    /// plateau; `LogEntry::neutral` counts every such replacement.
    Neutral,
    /// Operator changed; `gen` is the first generation using it.
    Switch,
    End,
}

impl Event {
    pub fn name(self) -> &'static str {
        match self {
            Event::Start => "start",
            Event::Improve => "improve",
            Event::Neutral => "neutral",
            Event::Switch => "switch",
            Event::End => "end",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Event::Start, Event::Improve, Event::Neutral, Event::Switch, Event::End]
            .into_iter()
            .find(|e| e.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub gen: u64,
    pub t_sec: f64,
    pub fitness: Fitness,
    pub area: Area,
    pub wce: u64,
    pub operator: Operator,
    pub inferences: u64,
    /// Neutral replacements so far.
    pub neutral: u64,
    pub event: Event,
}

/// Best-fitness trajectory of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub entries: Vec<LogEntry>,
    pub generations: u64,
    pub evaluations: u64,
    pub rows_simulated: u64,
}

pub const RUN_LOG_HEADER: &str = "gen,t_sec,fitness,area,wce,operator,inferences,neutral,event";

#[derive(Debug, Clone, Error)]
#[error("run log line {line}: {msg}")]
pub struct LogParseError {
    pub line: usize,
    pub msg: String,
}

impl RunLog {
    pub fn final_entry(&self) -> Option<&LogEntry> {
        self.entries.last()
    }

    pub fn inferences(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.inferences)
    }

    pub fn count(&self, event: Event) -> usize {
        self.entries.iter().filter(|e| e.event == event).count()
    }

    /// Best fitness at time `t` (the last entry logged at or before `t`).
    pub fn fitness_at(&self, t: f64) -> Option<Fitness> {
        self.entries
            .iter()
            .take_while(|e| e.t_sec <= t)
            .last()
            .map(|e| e.fitness)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(RUN_LOG_HEADER);
        s.push('\n');
        for e in &self.entries {
            s.push_str(&format!(
                "{},{:.6},{},{},{},{},{},{},{}\n",
                e.gen,
                e.t_sec,
                e.fitness,
                e.area,
                e.wce,
                e.operator.name(),
                e.inferences,
                e.neutral,
                e.event.name()
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, LogParseError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == RUN_LOG_HEADER => {}
            _ => {
                return Err(LogParseError {
                    line: 1,
                    msg: format!("expected header {RUN_LOG_HEADER:?}"),
                })
            }
        }
        let mut log = RunLog::default();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| LogParseError {
                line: i + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(err("expected 9 fields"));
            }
            let area = parse_area(f[3]).ok_or_else(|| err("bad area"))?;
            let fitness = if f[2] == "inf" {
                Fitness::Infinite
            } else {
                Fitness::Finite(parse_area(f[2]).ok_or_else(|| err("bad fitness"))?)
            };
            let operator = match f[5] {
                "uniform" => Operator::Uniform,
                "guided" => Operator::Guided,
                _ => return Err(err("bad operator")),
            };
            log.entries.push(LogEntry {
                gen: f[0].parse().map_err(|_| err("bad gen"))?,
                t_sec: f[1].parse().map_err(|_| err("bad t_sec"))?,
                fitness,
                area,
                wce: f[4].parse().map_err(|_| err("bad wce"))?,
                operator,
                inferences: f[6].parse().map_err(|_| err("bad inferences"))?,
                neutral: f[7].parse().map_err(|_| err("bad neutral"))?,
                event: Event::parse(f[8]).ok_or_else(|| err("bad event"))?,
            });
        }
        log.generations = log.entries.last().map_or(0, |e| e.gen);
        Ok(log)
    }
}

/// Parses a two-decimal area such as `123.45` exactly.
pub fn parse_area(s: &str) -> Option<Area> {
    let (int, frac) = s.split_once('.').unwrap_or((s, "0"));
    let int: u64 = int.parse().ok()?;
    let frac: u64 = match frac.len() {
        1 => frac.parse::<u64>().ok()? * 10,
        2 => frac.parse().ok()?,
        _ => return None,
    };
    Some(Area(int * 100 + frac))
}

/// Outcome of (1+λ) selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Offspring strictly better than the parent (best, first on ties).
    Improved(usize),
    /// No improvement; first offspring with the parent's fitness.
    Neutral(usize),
    Parent,
}

pub fn select_best(parent: Fitness, offspring: &[Fitness]) -> Selection {
    let best = offspring
        .iter()
        .enumerate()
        .min_by_key(|(i, f)| (**f, *i))
        .map(|(i, f)| (i, *f));
    match best {
        Some((i, f)) if f < parent => Selection::Improved(i),
        _ => match offspring.iter().position(|f| *f == parent) {
            Some(i) => Selection::Neutral(i),
            None => Selection::Parent,
        },
    }
}

fn validate_config(cfg: &SearchConfig) -> Result<(), SearchError> {
    if cfg.lambda < 1 {
        return Err(SearchError::Config("lambda must be >= 1".into()));
    }
    if cfg.stag_max < 1 {
        return Err(SearchError::Config("stag_max must be >= 1".into()));
    }
    if cfg.time_budget.is_some_and(|t| !(t >= 0.0)) {
        return Err(SearchError::Config("time budget must be non-negative".into()));
    }
    Ok(())
}

/// Standard CGP: uniform point mutation only.
pub fn evolve_standard<O: Objective + ?Sized>(
    seed: &Chromosome,
    objective: &O,
    cfg: &SearchConfig,
) -> Result<(Chromosome, RunLog), SearchError> {
    run(seed, objective, cfg, None::<&UniformModel>, None)
}

/// Standard CGP that reports every improved parent to `observer`.
pub fn evolve_standard_observed<O: Objective + ?Sized>(
    seed: &Chromosome,
    objective: &O,
    cfg: &SearchConfig,
    observer: &mut dyn FnMut(&Chromosome, &Evaluation),
) -> Result<(Chromosome, RunLog), SearchError> {
    run(seed, objective, cfg, None::<&UniformModel>, Some(observer))
}

/// Hybrid search: guided mutation from a cached model distribution while
/// stagnation stays below `stag_max`, uniform mutation afterwards. The
/// distribution is recomputed only after a strict improvement.
pub fn evolve_hybrid<O: Objective + ?Sized, M: MutationModel + ?Sized>(
    seed: &Chromosome,
    objective: &O,
    cfg: &SearchConfig,
    model: &M,
) -> Result<(Chromosome, RunLog), SearchError> {
    if !seed.is_transformer_form() {
        return Err(SearchError::NotTransformerForm);
    }
    model.check(seed.params())?;
    run(seed, objective, cfg, Some(model), None)
}

/// Dispatches on `cfg.mode`.
pub fn evolve<O: Objective + ?Sized>(
    seed: &Chromosome,
    objective: &O,
    cfg: &SearchConfig,
    model: Option<&(dyn MutationModel + Sync)>,
) -> Result<(Chromosome, RunLog), SearchError> {
    match cfg.mode {
        Mode::Standard => evolve_standard(seed, objective, cfg),
        Mode::Hybrid => evolve_hybrid(seed, objective, cfg, model.ok_or(SearchError::MissingModel)?),
    }
}

fn run<O: Objective + ?Sized, M: MutationModel + ?Sized>(
    seed: &Chromosome,
    objective: &O,
    cfg: &SearchConfig,
    model: Option<&M>,
    mut observer: Option<&mut dyn FnMut(&Chromosome, &Evaluation)>,
) -> Result<(Chromosome, RunLog), SearchError> {
    validate_config(cfg)?;
    let timer = Timer {
        clock: cfg.clock,
        start: Instant::now(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut log = RunLog::default();

    let seed_eval = objective.evaluate(seed, None);
    log.evaluations += 1;
    log.rows_simulated += seed_eval.rows_simulated;
    let Fitness::Finite(_) = seed_eval.fitness else {
        return Err(SearchError::InfeasibleSeed);
    };
    let mut parent = seed.clone();
    let mut parent_fit = seed_eval.fitness;
    let mut parent_wce = seed_eval.metrics.map_or(0, |m| m.wce);

    let mut inferences = 0u64;
    let mut dist = match model {
        Some(m) => {
            inferences += 1;
            Some(m.distribution(&parent)?)
        }
        None => None,
    };
    let mut stag = 0u64;
    let operator_for = |stag: u64| {
        if model.is_some() && stag < cfg.stag_max {
            Operator::Guided
        } else {
            Operator::Uniform
        }
    };
    let mut operator = operator_for(0);

    let mut neutral = 0u64;
    let mut plateau_logged = false;
    let entry = |gen, t_sec, fit: Fitness, wce, operator, inferences, neutral, event| LogEntry {
        gen,
        t_sec,
        fitness: fit,
        area: fit.area().unwrap_or_default(),
        wce,
        operator,
        inferences,
        neutral,
        event,
    };
    log.entries.push(entry(0, 0.0, parent_fit, parent_wce, operator, inferences, 0, Event::Start));

    let mut offspring: Vec<(Chromosome, Evaluation)> = Vec::with_capacity(cfg.lambda);
    let mut gen = 0u64;
    while gen < cfg.max_generations {
        if let Some(budget) = cfg.time_budget {
            if timer.seconds(log.rows_simulated, inferences) >= budget {
                break;
            }
        }
        gen += 1;

        let op = operator_for(stag);
        if op != operator {
            operator = op;
            let t = timer.seconds(log.rows_simulated, inferences);
            log.entries.push(entry(gen, t, parent_fit, parent_wce, op, inferences, neutral, Event::Switch));
        }

        let parent_area = parent_fit.area();
        offspring.clear();
        for _ in 0..cfg.lambda {
            let (child, _) = match (op, &dist) {
                (Operator::Guided, Some(d)) => mutate_guided(&parent, d, &mut rng),
                _ => mutate_uniform(&parent, &mut rng),
            };
            let e = objective.evaluate(&child, parent_area);
            log.evaluations += 1;
            log.rows_simulated += e.rows_simulated;
            offspring.push((child, e));
        }
        let fits: Vec<Fitness> = offspring.iter().map(|(_, e)| e.fitness).collect();
        match select_best(parent_fit, &fits) {
            Selection::Improved(i) => {
                let (child, e) = offspring.swap_remove(i);
                if let Some(obs) = observer.as_mut() {
                    obs(&child, &e);
                }
                parent = child;
                parent_fit = e.fitness;
                parent_wce = e.metrics.map_or(parent_wce, |m| m.wce);
                stag = 0;
                plateau_logged = false;
                if let Some(m) = model {
                    inferences += 1;
                    dist = Some(m.distribution(&parent)?);
                }
                let t = timer.seconds(log.rows_simulated, inferences);
                log.entries.push(entry(gen, t, parent_fit, parent_wce, op, inferences, neutral, Event::Improve));
            }
            Selection::Neutral(i) => {
                let (child, e) = offspring.swap_remove(i);
                parent = child;
                parent_wce = e.metrics.map_or(parent_wce, |m| m.wce);
                stag += 1;
                neutral += 1;
                if !plateau_logged {
                    plateau_logged = true;
                    let t = timer.seconds(log.rows_simulated, inferences);
                    log.entries.push(entry(gen, t, parent_fit, parent_wce, op, inferences, neutral, Event::Neutral));
                }
            }
            Selection::Parent => stag += 1,
        }
    }
    log.generations = gen;
    let t = timer.seconds(log.rows_simulated, inferences);
    log.entries.push(entry(gen, t, parent_fit, parent_wce, operator, inferences, neutral, Event::End));
    Ok((parent, log))
}
