use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mixedsn::network::{Profile, Widths};
use mixedsn::preprocess::PadMode;

#[derive(Debug, Parser)]
#[command(
    name = "mixedsn",
    version,
    about = "Mixed 3D/2D ResNeXt hyperspectral classifier"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic scene as an HSC container.
    Synth(SynthArgs),
    /// PCA-reduce a cube and report the retained variance.
    Pca(PcaArgs),
    /// Count labeled patches per class.
    Patch(PatchArgs),
    /// Per-class train/test counts of the stratified split.
    Split(SplitArgs),
    /// Train a network and write checkpoint, history and manifest.
    Train(TrainArgs),
    /// Evaluate a trained run: metrics JSON and confusion CSV.
    Eval(EvalArgs),
    /// Predict every pixel and write a PPM class map.
    PredictMap(PredictMapArgs),
    /// Per-layer shapes and parameter counts.
    Paramcount(ParamcountArgs),
    /// Finite-difference gradient checks of the differentiable ops.
    Gradcheck(GradcheckArgs),
    /// OA/AA/Kappa against the training fraction, mean±std over seeds.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Raw band-sequential f32 cube
    #[arg(long)]
    pub cube: Option<PathBuf>,
    /// Raw u16 label raster
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// HSC manifest; defaults to the one beside the cube
    #[arg(long)]
    pub hsc: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WidthPreset {
    Full,
    Halved,
    Quartered,
}

impl WidthPreset {
    pub fn widths(self) -> Widths {
        match self {
            WidthPreset::Full => Widths::default(),
            WidthPreset::Halved => Widths::default().divided(2),
            WidthPreset::Quartered => Widths::default().divided(4),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Ip,
    Pu,
    Sa,
    Bw,
    Custom,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Ip => Profile::Ip,
            ProfileArg::Pu => Profile::Pu,
            ProfileArg::Sa => Profile::Sa,
            ProfileArg::Bw => Profile::Bw,
            ProfileArg::Custom => Profile::Custom,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PadArg {
    Border,
    Interior,
}

impl From<PadArg> for PadMode {
    fn from(p: PadArg) -> Self {
        match p {
            PadArg::Border => PadMode::ZeroPadBorder,
            PadArg::Interior => PadMode::InteriorOnly,
        }
    }
}

/// Network and schedule options. Unset options come from the run manifest
/// when one is given, otherwise from the profile preset.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Dataset profile preset [default: custom]
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    /// Bands kept after PCA [default: profile preset, 30 for custom]
    #[arg(long)]
    pub bands: Option<usize>,
    /// Spatial window S [default: 25]
    #[arg(long)]
    pub window: Option<usize>,
    /// Channel width preset [default: full]
    #[arg(long, value_enum)]
    pub widths: Option<WidthPreset>,
    #[arg(long)]
    pub cardinality: Option<usize>,
    /// Dropout rate [default: 0.45 for bw, otherwise 0.40]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Patch border handling [default: border]
    #[arg(long, value_enum)]
    pub pad_mode: Option<PadArg>,
    /// Training fraction per class [default: 0.3]
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 64]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// L2 penalty [default: 1e-6]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Single-threaded kernels
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output stem; writes <stem>.hsc.json, <stem>.cube.f32, <stem>.labels.u16
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 8)]
    pub bands: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub blobs_per_class: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub mixing: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Components to keep
    #[arg(long)]
    pub bands: usize,
    /// Writes pca.json and the reduced cube as reduced.*
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PatchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 25)]
    pub window: usize,
    #[arg(long, value_enum, default_value = "border")]
    pub pad_mode: PadArg,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Class sizes instead of a dataset, e.g. 46,1428,830
    #[arg(long, value_delimiter = ',')]
    pub class_sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 25)]
    pub window: usize,
    #[arg(long, value_enum, default_value = "border")]
    pub pad_mode: PadArg,
    #[arg(long, default_value_t = 0.3)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Writes split.json with the sample indices
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Re-run the options and inputs recorded in a run manifest
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Record test accuracy after every epoch
    #[arg(long)]
    pub track_test: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitPart {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output directory of `train`
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Defaults to the inputs recorded in the run manifest
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitPart,
    /// Defaults to the run directory
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictMapArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Colour unlabeled pixels too instead of leaving them black
    #[arg(long)]
    pub all_pixels: bool,
    /// Defaults to <run-dir>/map.ppm
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParamcountArgs {
    #[arg(long, value_enum, default_value = "ip")]
    pub profile: ProfileArg,
    /// [default: profile preset, 30 for custom]
    #[arg(long)]
    pub bands: Option<usize>,
    /// [default: profile preset, 16 for custom]
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 25)]
    pub window: usize,
    #[arg(long, value_enum, default_value = "full")]
    pub widths: WidthPreset,
    #[arg(long, default_value_t = 4)]
    pub cardinality: usize,
    /// Print JSON instead of a table
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DTypeArg {
    F64,
    F32,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// `all` or a comma-separated list of op names
    #[arg(long, default_value = "all")]
    pub ops: String,
    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: DTypeArg,
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Training fractions, e.g. 0.1,0.2,0.3
    #[arg(long, value_delimiter = ',', required = true)]
    pub fractions: Vec<f64>,
    /// Runs per fraction, seeded seed, seed+1, ...
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    /// Writes sweep.csv; prints it otherwise
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}
