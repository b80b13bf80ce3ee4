mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use noiseshield_core::{ChannelKind, RepeatFactors, Shape4};

#[derive(Parser)]
#[command(
    name = "noiseshield",
    version,
    about = "Latent-noise video watermarking and tamper localization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a fresh random key as JSON.
    Keygen {
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed a payload into initial noise.
    Embed(EmbedArgs),
    /// Recover the payload from a latent.
    Extract(ExtractArgs),
    /// Apply tampering and a channel to a latent, emitting ground truth.
    Simulate(SimulateArgs),
    /// Locate tampered frames and regions.
    Localize(LocalizeArgs),
    /// Derive a threshold table from synthetic samples.
    Calibrate(CalibrateArgs),
    /// Run a batch of simulated videos and report aggregate metrics.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct Geometry {
    /// Latent shape f,c,h,w.
    #[arg(long, default_value = "16,4,32,32")]
    pub shape: Shape4,
    /// Repetition factors kf,kc,kh,kw.
    #[arg(long, default_value = "8,1,4,4")]
    pub factors: RepeatFactors,
}

#[derive(Args)]
pub struct RegionArgs {
    /// Ground-truth region mask (VSBT, f x 1 x h x w).
    #[arg(long, conflicts_with_all = ["crop_ratio", "aligned_box"])]
    pub mask: Option<PathBuf>,
    /// Random rectangle covering this fraction of every frame.
    #[arg(long, conflicts_with = "aligned_box")]
    pub crop_ratio: Option<f64>,
    /// Random box with edges on multiples of this value.
    #[arg(long)]
    pub aligned_box: Option<usize>,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub geometry: Geometry,
    #[arg(long)]
    pub key: PathBuf,
    /// Existing payload (VSBT at the reduced shape); random when omitted.
    #[arg(long)]
    pub payload: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub latent: PathBuf,
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long, default_value = "8,1,4,4")]
    pub factors: RepeatFactors,
    /// Reference payload for bit accuracy.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Directory for extracted.vsbt.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub latent: PathBuf,
    #[arg(long, default_value = "identity")]
    pub channel: ChannelKind,
    /// Frame edits as a JSON array or a path to one.
    #[arg(long)]
    pub edits: Option<String>,
    #[command(flatten)]
    pub region: RegionArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub latent: PathBuf,
    #[arg(long)]
    pub key: PathBuf,
    /// Embedded payload (VSBT); fixes the template.
    #[arg(long)]
    pub payload: PathBuf,
    #[arg(long, default_value = "8,1,4,4")]
    pub factors: RepeatFactors,
    #[arg(long)]
    pub thresholds: PathBuf,
    /// Output mask scale relative to the latent.
    #[arg(long, default_value_t = 1)]
    pub upscale: usize,
    /// Ground-truth mask (VSBT) at latent or output resolution.
    #[arg(long)]
    pub gt_mask: Option<PathBuf>,
    /// Ground-truth positions JSON.
    #[arg(long)]
    pub gt_positions: Option<PathBuf>,
    /// Also write one P5 graymap per frame.
    #[arg(long)]
    pub pgm: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub geometry: Geometry,
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long, default_value = "identity")]
    pub channel: ChannelKind,
    #[arg(long, default_value_t = 100)]
    pub n_videos: usize,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long, default_value_t = 99.0)]
    pub k: f64,
    #[arg(long, default_value_t = 0.55)]
    pub t_temp: f64,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fail unless intervals are nested for k in {97, 98, 99, 100}.
    #[arg(long)]
    pub check_monotone: bool,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
    Both,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub geometry: Geometry,
    #[arg(long)]
    pub key: PathBuf,
    #[arg(long, default_value = "identity")]
    pub channel: ChannelKind,
    #[arg(long)]
    pub edits: Option<String>,
    #[arg(long, conflicts_with = "aligned_box")]
    pub crop_ratio: Option<f64>,
    #[arg(long)]
    pub aligned_box: Option<usize>,
    #[arg(long)]
    pub thresholds: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub upscale: usize,
    /// Batch size.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("NOISESHIELD_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!(
                "{}",
                serde_json::json!({ "error": msg.trim(), "kind": "usage" })
            );
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Keygen { out } => commands::keygen(out.as_deref()),
        Command::Embed(a) => commands::embed(&a),
        Command::Extract(a) => commands::extract(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Localize(a) => commands::localize(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}
