//! Command-line surface. Every argument struct also serializes into the
//! config snapshot of the run manifest; the output directory is excluded.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

const EVOLVE_SCHEMAS: &str = "\
Outputs (in --out):
  best.chr       best chromosome, text format
  run.csv        gen,t_sec,fitness,area,wce,operator,inferences,neutral,event
                 fitness and area in um^2 with two decimals (fitness 'inf'
                 when infeasible); operator is uniform|guided; inferences and
                 neutral are cumulative counts; event is
                 start|improve|neutral|switch|end
  manifest.json  config snapshot, seeds, version, input and output digests";

const GEN_SCHEMAS: &str = "\
Outputs (in --out):
  manifest.csv   id,wce,area,attractiveness (area in um^2)
  <id>.chr       one chromosome per record, transformer form
  manifest.json  config snapshot, seeds, version, output digests
Label caches <id>.t<trials>-s<seed>.labels (position,label) are added by the
train command.";

const TRAIN_SCHEMAS: &str = "\
Outputs (in --out):
  model.ckpt     checkpoint (magic line, JSON header line, little-endian f64)
  loss.csv       epoch,L_op,L_input,L_sens,P_conf_op,P_conf_in,L_total
                 (per-epoch means over samples)
  manifest.json  config snapshot, seeds, version, input and output digests";

const REPORT_SCHEMAS: &str = "\
Run logs are the *.csv files below the run directories whose header is the
run-log header. Outputs (in --out):
  deciles.csv    t_sec,label,n_runs,n_top,min,q1,median,q3,max
                 box statistics of the best 10% of run areas (um^2) at t_sec
  scatter.csv    label,run,wce,area (final best of every run)
  pvalues.csv    t_sec,label_a,label_b,n_a,n_b,u_b,p_b_less_a
                 one-sided Mann-Whitney U test that b's top decile is
                 smaller; only with --compare
  manifest.json  config snapshot, version, input and output digests";

const BATCH_SCHEMAS: &str = "\
Runs every arm (standard, plus hybrid when --model is given) with the same
per-run seeds. Outputs (in --out):
  <arm>/run_NNNN.csv, <arm>/run_NNNN.chr   run log and best chromosome
  deciles.csv, scatter.csv, pvalues.csv     as for the report command
  manifest.json";

#[derive(Debug, Parser)]
#[command(
    name = "axcgp",
    version,
    about = "Evolve approximate unsigned multipliers with CGP and a learned mutation model",
    after_help = "Flags override the [<command>] table of --config, which overrides the built-in \
                  defaults. AXCGP_THREADS sets the worker thread count. Exit codes: 0 ok, 2 usage \
                  error, 3 data error, 1 other failure."
)]
pub struct Cli {
    /// TOML file whose [<command>] table supplies flag defaults
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve one multiplier
    #[command(after_long_help = EVOLVE_SCHEMAS)]
    Evolve(EvolveArgs),
    /// Harvest a training corpus from standard CGP runs
    #[command(after_long_help = GEN_SCHEMAS)]
    GenDataset(GenDatasetArgs),
    /// Train the mutation model on a corpus
    #[command(after_long_help = TRAIN_SCHEMAS)]
    Train(TrainArgs),
    /// Summarize run logs
    #[command(after_long_help = REPORT_SCHEMAS)]
    Report(ReportArgs),
    /// Paired standard vs hybrid runs plus their report
    #[command(after_long_help = BATCH_SCHEMAS)]
    Batch(BatchArgs),
    /// Re-run the command recorded in a manifest
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Evolve(_) => "evolve",
            Command::GenDataset(_) => "gen-dataset",
            Command::Train(_) => "train",
            Command::Report(_) => "report",
            Command::Batch(_) => "batch",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Standard,
    Hybrid,
}

/// `virtual` charges fixed costs per simulated row and model inference,
/// which makes time-budgeted runs reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockArg {
    Virtual,
    Wall,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SearchArgs {
    /// Operand width
    #[arg(long, default_value_t = 8)]
    pub bits: u32,
    /// WCE threshold in percent of the output range
    #[arg(long, default_value_t = 5.0)]
    pub epsilon_pct: f64,
    /// Node budget; defaults to 600 at 8 bits, scaled quadratically
    #[arg(long)]
    pub columns: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub lambda: usize,
    /// Generation limit; unlimited when a time budget applies, else 100000
    #[arg(long)]
    pub gens: Option<u64>,
    #[arg(long, default_value_t = 50)]
    pub stag_max: u64,
    #[arg(long, value_enum, default_value_t = ClockArg::Virtual)]
    pub clock: ClockArg,
    /// Base RNG seed
    #[arg(long, default_value_t = 0)]
    pub rng: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvolveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub search: SearchArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Standard)]
    pub mode: ModeArg,
    /// Model checkpoint, required in hybrid mode
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// ripple-carry-array, carry-save-array-1, carry-save-array-2,
    /// wallace-1, wallace-2 or wallace-3
    #[arg(long, default_value = "ripple-carry-array")]
    pub seed_kind: String,
    /// Start from this chromosome file instead of a built-in seed
    #[arg(long)]
    pub seed_file: Option<PathBuf>,
    /// Time budget in seconds of the chosen clock
    #[arg(long)]
    pub time_sec: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDatasetArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub search: SearchArgs,
    #[arg(long, default_value_t = 12)]
    pub runs: usize,
    /// Time budget of each run in seconds of the chosen clock
    #[arg(long, default_value_t = 5.0)]
    pub time_per_run: f64,
    /// Seed kinds assigned round-robin to runs; all six by default
    #[arg(long, value_delimiter = ',')]
    pub seed_kinds: Vec<String>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory written by gen-dataset
    #[arg(long)]
    pub dataset: PathBuf,
    /// Records above this WCE threshold are dropped
    #[arg(long, default_value_t = 5.0)]
    pub epsilon_pct: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 0.05)]
    pub mask_start: f64,
    #[arg(long, default_value_t = 0.30)]
    pub mask_end: f64,
    #[arg(long, default_value_t = 0.1)]
    pub c_op: f64,
    #[arg(long, default_value_t = 0.2)]
    pub c_in: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c_sens: f64,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 6)]
    pub layers: usize,
    #[arg(long, default_value_t = 256)]
    pub ffn_hidden: usize,
    /// Parent attention bias
    #[arg(long, default_value_t = 0.2)]
    pub c_par: f64,
    /// Mutations per node when estimating sensitivity labels
    #[arg(long, default_value_t = 8)]
    pub label_trials: usize,
    #[arg(long, default_value_t = 0)]
    pub label_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub rng: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// Directory searched recursively for run logs
    #[arg(long)]
    pub runs_dir: PathBuf,
    /// Second directory, tested for smaller areas than --runs-dir
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long, default_value = "a")]
    pub label: String,
    #[arg(long, default_value = "b")]
    pub compare_label: String,
    /// Seconds at which deciles and p-values are taken
    #[arg(long, value_delimiter = ',', default_values_t = [150.0, 300.0])]
    pub checkpoints: Vec<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BatchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub search: SearchArgs,
    /// Paired runs per arm
    #[arg(long, default_value_t = 40)]
    pub runs: usize,
    #[arg(long, default_value_t = 300.0)]
    pub time_sec: f64,
    /// Model checkpoint; adds the hybrid arm
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub seed_kinds: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [150.0, 300.0])]
    pub checkpoints: Vec<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// manifest.json of an earlier run
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fail with a data error unless every output matches the recorded digest
    #[arg(long)]
    pub verify: bool,
}
