use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug, Serialize)]
#[command(name = "deadleaves", version, about = "Dead-leaves images and the exact ideal observer for small pixel sets")]
pub struct Cli {
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, env = "DEADLEAVES_THREADS", default_value_t = 0)]
    #[serde(skip)]
    pub threads: usize,

    /// Key-value file of default flags; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a scene and render its image.
    Generate(GenerateArgs),
    /// Prior of a partition, or of all partitions of a pixel set.
    Prior(PriorArgs),
    /// Log-likelihood of an image window under a partition.
    Likelihood(LikelihoodArgs),
    /// Full posterior sweep over the partitions of an image window.
    Observe(ObserveArgs),
    /// Monte Carlo and grid estimates checked against analytic values.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Count or list set partitions.
    Partitions(PartitionsArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct LawArgs {
    /// Smallest leaf radius.
    #[arg(long, default_value_t = 1.0)]
    pub rmin: f64,
    /// Largest leaf radius.
    #[arg(long, default_value_t = 2.0)]
    pub rmax: f64,
    /// Side of the frame of leaf centres, before the r_max margin; defaults to the pixel-set extent.
    #[arg(long)]
    pub frame: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize, Default)]
pub struct PixelArgs {
    /// Grid `WxH` of pixels at (0..W, 0..H).
    #[arg(long, value_name = "WxH", conflicts_with_all = ["window", "pixels"])]
    pub grid: Option<String>,
    /// Rectangle `x0,y0,w,h`; origin at the bottom-left.
    #[arg(long, value_name = "X0,Y0,W,H", conflicts_with = "pixels")]
    pub window: Option<String>,
    /// Explicit pixels `x,y;x,y;...`.
    #[arg(long, value_name = "LIST")]
    pub pixels: Option<String>,
}

#[derive(Args, Debug, Clone, Serialize, Default)]
pub struct PartitionArgs {
    /// Partition JSON file; block order is depth order, top first.
    #[arg(long, value_name = "FILE", conflicts_with = "labels")]
    pub partition: Option<PathBuf>,
    /// One label character per pixel in row-major order; label order is depth order.
    #[arg(long, value_name = "STRING")]
    pub labels: Option<String>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct GenerateArgs {
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 2.0)]
    pub rmin: f64,
    #[arg(long, default_value_t = 16.0)]
    pub rmax: f64,
    /// `gaussian:MU[,MU,MU]:SIGMA` or `uniform:LEVELS`.
    #[arg(long, default_value = "gaussian:0.5,0.5,0.5:0.1")]
    pub color: String,
    /// `gaussian:SIGMA` or `uniform:HALFWIDTH`.
    #[arg(long, default_value = "gaussian:0.05")]
    pub texture: String,
    /// Channels for uniform colours.
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scene JSON output.
    #[arg(long, default_value = "scene.json")]
    pub scene: PathBuf,
    /// Float image output (PFM).
    #[arg(long, default_value = "image.pfm")]
    pub image: PathBuf,
    /// Optional 16-bit PGM/PPM preview.
    #[arg(long)]
    pub preview: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct PriorArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub pixels: PixelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub law: LawArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub partition: PartitionArgs,
    /// Rank every partition of the pixel set.
    #[arg(long, conflicts_with_all = ["partition", "labels"])]
    pub all: bool,
    /// Keep only the best K partitions with `--all`.
    #[arg(long)]
    pub top: Option<usize>,
    /// Enumeration cap on the number of pixels.
    #[arg(long, default_value_t = deadleaves::partitions::DEFAULT_CAP)]
    pub cap: usize,
    /// Write the leaf-probability table of the full pixel set here.
    #[arg(long, value_name = "FILE")]
    pub tables: Option<PathBuf>,
    /// Output file; stdout by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    /// `model` to use `--color`/`--texture`, or `uniform:T` for a constant `1/T` per pixel and channel.
    #[arg(long, default_value = "model")]
    pub likelihood: String,
    /// `gaussian:MU[,MU,MU]:SIGMA` or `uniform:LEVELS`.
    #[arg(long, default_value = "gaussian:0.6:0.1")]
    pub color: String,
    /// `gaussian:SIGMA` or `uniform:HALFWIDTH`.
    #[arg(long, default_value = "gaussian:0.01")]
    pub texture: String,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct LikelihoodArgs {
    /// Float image (PFM).
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub pixels: PixelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub partition: PartitionArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct ObserveArgs {
    /// Float image (PFM).
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub pixels: PixelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub law: LawArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Rows in the CSV table and the summary.
    #[arg(long, default_value_t = 15)]
    pub top: usize,
    #[arg(long, default_value_t = deadleaves::partitions::DEFAULT_CAP)]
    pub cap: usize,
    /// Disable the prior memo.
    #[arg(long)]
    pub no_memo: bool,
    /// Two-pass streaming sweep keeping only the top records.
    #[arg(long)]
    pub stream: bool,
    /// Directory for `records.jsonl` and `top.csv`.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleCommand {
    /// Monte Carlo leaf probability of a subset.
    McLeaf(McLeafArgs),
    /// Grid approximation of a leaf probability.
    GridLeaf(GridLeafArgs),
    /// Monte Carlo frequency of a partition.
    McPrior(McPriorArgs),
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct McLeafArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub pixels: PixelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub law: LawArgs,
    /// Subset as a hex mask over pixel indices or `x,y;x,y;...`.
    #[arg(long)]
    pub subset: String,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct GridLeafArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub pixels: PixelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub law: LawArgs,
    #[arg(long)]
    pub subset: String,
    /// Positions per axis of the frame.
    #[arg(long, default_value_t = 1000)]
    pub resolution: usize,
    /// Geometric radius cells; exact radius integration when absent.
    #[arg(long)]
    pub radius_cells: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct McPriorArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub pixels: PixelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub law: LawArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub partition: PartitionArgs,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct PartitionsArgs {
    /// Number of partitions of an N-element set.
    #[arg(long, value_name = "N", conflicts_with = "list")]
    pub count: Option<usize>,
    /// Label strings of every partition of an N-element set.
    #[arg(long, value_name = "N")]
    pub list: Option<usize>,
    #[arg(long, default_value_t = deadleaves::partitions::DEFAULT_CAP)]
    pub cap: usize,
}
