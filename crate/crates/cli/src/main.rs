mod ablate;
mod commands;
mod data;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Error class that maps to exit status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

#[derive(Parser)]
#[command(name = "freqct", version, about = "Sparse-view cone-beam CT: simulate, train, reconstruct, evaluate")]
#[command(after_help = "Exit status: 0 success, 2 usage or validation error, 1 runtime failure.\n\
Every command writes a run manifest (JSON) beside its output.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize a phantom and project it at K views uniformly spread over 180 degrees.
    ///
    /// Writes proj.raw/.json (f32le [K,H,W] + geometry), volume.raw/.json (f32le [D,H,W]) and run.json.
    Simulate(SimulateArgs),
    /// Train on a directory of simulated cases.
    ///
    /// Writes model.json/.bin (checkpoint), loss.csv (step,epoch,lr,loss) and run.json.
    Train(TrainArgs),
    /// Reconstruct a volume from projections with a trained checkpoint.
    Reconstruct(ReconstructArgs),
    /// SART baseline reconstruction.
    BaselineSart(SartArgs),
    /// Score a volume against ground truth.
    ///
    /// CSV columns: case_id,psnr_db,ssim_pct,w_psnr_db,w_ssim_pct. Infinite PSNR is written inf.
    Evaluate(EvaluateArgs),
    /// Per-layer spectral parameter counts, full complex weights vs factorized.
    ///
    /// CSV columns: layer,c_in,c_out,modes1,modes2,full_params,scf_params,ratio,ratio_pct.
    CountParams(CountArgs),
    /// Train and evaluate one model per value of a configuration knob.
    ///
    /// CSV columns: sweep,value,total_params,spectral_params,final_loss,psnr_db,ssim_pct,w_psnr_db,w_ssim_pct.
    Ablate(AblateArgs),
    /// Line plot of a loss log or metrics table.
    ///
    /// Writes <out>.png and <out>.csv (x,y resampled onto at most --points evenly spaced x values).
    Plot(PlotArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum Phantom {
    Shepp3d,
    RandomEllipsoids,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "random-ellipsoids")]
    pub phantom: Phantom,
    /// Volume edge in voxels; defaults to the geometry's volume shape.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, default_value_t = 6)]
    pub views: usize,
    /// Geometry JSON; its angles are replaced by the K uniform angles. Default: 64x64 detector, 1 mm voxels.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training configuration JSON (epochs, lr, batch_size, points_per_volume, seed, model).
    #[arg(long)]
    pub config: PathBuf,
    /// A case directory or a directory of case directories.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint every this many epochs (the last epoch is always saved).
    #[arg(long, default_value_t = 1)]
    pub ckpt_every: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub proj: PathBuf,
    /// Query points per batch; does not change the result.
    #[arg(long, default_value_t = 8192)]
    pub chunk: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SartArgs {
    #[arg(long)]
    pub proj: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Non-negative weight volume; uniform when omitted.
    #[arg(long)]
    pub roi: Option<PathBuf>,
    /// Row label; defaults to the prediction's file stem.
    #[arg(long)]
    pub case_id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CountArgs {
    /// Model or training configuration JSON.
    #[arg(long, conflicts_with = "layer")]
    pub config: Option<PathBuf>,
    /// Detector size H,W the configuration is instantiated for.
    #[arg(long, value_delimiter = ',', default_value = "256,256")]
    pub det_pixels: Vec<usize>,
    /// A single layer C_in,C_out,M1,M2 instead of a configuration.
    #[arg(long, value_delimiter = ',')]
    pub layer: Option<Vec<u64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Sweep {
    Lhif,
    Fusion,
    Qkv,
    Modes,
    Patch,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub sweep: Sweep,
    /// Override the swept values (modes/patch: integers; lhif: on,off; fusion: caff,spatial_ca,add,concat; qkv: spatial_query,frequency_query).
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<String>>,
    /// Training cases.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out cases; the training cases are scored when omitted.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PlotArgs {
    /// Loss log or metrics CSV.
    #[arg(long)]
    pub metrics: PathBuf,
    /// x column; default step for loss logs, views when present, else the row index.
    #[arg(long)]
    pub x: Option<String>,
    /// y column; default loss for loss logs, else psnr_db.
    #[arg(long)]
    pub y: Option<String>,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    #[arg(long, default_value_t = 640)]
    pub width: u32,
    #[arg(long, default_value_t = 400)]
    pub height: u32,
    /// Output prefix; .png and .csv are appended.
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_status(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<freqct::Error>() {
            return match e {
                freqct::Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
                freqct::Error::Io { .. } | freqct::Error::NonFinite { .. } => 1,
                _ => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::BaselineSart(a) => commands::baseline_sart(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::CountParams(a) => commands::count_params(a),
        Command::Ablate(a) => ablate::run(a),
        Command::Plot(a) => plot::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
