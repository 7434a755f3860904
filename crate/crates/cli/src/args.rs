use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use crossalign::dataio::{read_json, RunConfig, DEFAULT_TEST_FRACTION};
use crossalign::synthdata::NoiseModel;
use crossalign::{DType, Method, TaskMode};

#[derive(Debug, Parser)]
#[command(
    name = "crossalign",
    version,
    about = "Align images and neural responses contrastively and score discriminative encoding/decoding"
)]
pub struct Cli {
    /// Log progress (-v info, -vv debug); RUST_LOG overrides
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset container
    GenData(GenDataArgs),
    /// Train one method and write a checkpoint
    Train(TrainArgs),
    /// Score a checkpoint on the discriminative tasks
    Eval(EvalArgs),
    /// Train and evaluate all methods on identical tasks
    Compare(CompareArgs),
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: crossalign::Error| e.to_string())
}

fn parse_noise(s: &str) -> Result<NoiseModel, String> {
    s.parse().map_err(|e: crossalign::Error| e.to_string())
}

fn parse_dtype(s: &str) -> Result<DType, String> {
    s.parse()
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    /// Number of stimuli S
    #[arg(long)]
    pub stimuli: usize,
    /// Image channels c
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Simulated neurons n
    #[arg(long)]
    pub neurons: usize,
    /// Trials per stimulus T
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Trial noise level sigma >= 0, or `inf` for stimulus-independent responses
    #[arg(long, default_value = "0", value_parser = parse_noise, allow_hyphen_values = true)]
    pub noise: NoiseModel,
    /// Seed of the stimuli, forward model and trial noise
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep only this many randomly chosen neurons
    #[arg(long)]
    pub subsample: Option<usize>,
    /// Seed of the neuron subsample
    #[arg(long, default_value_t = 0)]
    pub subsample_seed: u64,
    /// Fraction of stimuli held out for evaluation
    #[arg(long, default_value_t = DEFAULT_TEST_FRACTION)]
    pub test_fraction: f64,
    /// Dataset name used in reports (default: output directory name)
    #[arg(long)]
    pub name: Option<String>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

/// Run settings shared by `train` and `compare`; flags override the
/// optional JSON config file, which overrides the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct RunOverrides {
    /// JSON run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Latent dimension d
    #[arg(long)]
    pub d: Option<usize>,
    /// Batch size N
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    /// Candidates per task K
    #[arg(long = "K", alias = "k")]
    pub k: Option<usize>,
    /// Adam learning rate
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// Passes over the training split
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training precision (f32 or f64)
    #[arg(long, value_parser = parse_dtype)]
    pub precision: Option<DType>,
    /// Regenerate responses at this noise level (needs a forward model)
    #[arg(long, value_parser = parse_noise, allow_hyphen_values = true)]
    pub noise: Option<NoiseModel>,
    /// Seed of the regenerated noise (default: the dataset's own)
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Keep only this many neurons
    #[arg(long)]
    pub subsample: Option<usize>,
    /// Seed of the neuron subsample
    #[arg(long)]
    pub subsample_seed: Option<u64>,
    /// Feed the image tower x - 0.5 instead of x
    #[arg(long)]
    pub center_images: bool,
    /// Contrastive logit temperature (off by default)
    #[arg(long)]
    pub temperature: Option<f64>,
}

impl RunOverrides {
    pub fn resolve(&self) -> crossalign::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => read_json::<RunConfig>(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field.clone() { c.$field = v; } )* };
        }
        set!(d, batch_size, k, learning_rate, epochs, precision, subsample_seed);
        if self.noise.is_some() {
            c.noise = self.noise;
        }
        if self.noise_seed.is_some() {
            c.noise_seed = self.noise_seed;
        }
        if self.subsample.is_some() {
            c.subsample = self.subsample;
        }
        if self.temperature.is_some() {
            c.temperature = self.temperature;
        }
        c.center_images |= self.center_images;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// vna, direct-encode or direct-decode (default: from --config, else vna)
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write
    #[arg(long)]
    pub out: PathBuf,
    /// Initialisation and shuffling seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from this checkpoint up to --epochs
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Training history JSON (default: <out>.history.json)
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Encoding,
    Decoding,
    Both,
}

impl ModeArg {
    pub fn modes(self) -> Vec<TaskMode> {
        match self {
            ModeArg::Encoding => vec![TaskMode::Encoding],
            ModeArg::Decoding => vec![TaskMode::Decoding],
            ModeArg::Both => TaskMode::BOTH.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    /// Candidates per task
    #[arg(long = "K", alias = "k", default_value_t = 400)]
    pub k: usize,
    /// Task sampling seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON report here
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write the CSV rows here
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Score with the dataset's ground-truth forward model instead of a checkpoint
    #[arg(long, hide = true)]
    pub oracle: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the JSON, CSV and table
    #[arg(long)]
    pub out: PathBuf,
    /// Training seeds, comma separated; every method trains once per seed
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Task sampling seed shared by all methods
    #[arg(long, default_value_t = 0)]
    pub task_seed: u64,
    /// Methods to compare, comma separated
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "vna,direct-encode,direct-decode")]
    pub methods: Vec<Method>,
    /// Also write each trained model's checkpoint into the output directory
    #[arg(long)]
    pub save_checkpoints: bool,
    #[command(flatten)]
    pub run: RunOverrides,
}
