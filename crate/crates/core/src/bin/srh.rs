use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use srh_core::checkpoint::Checkpoint;
use srh_core::harness::metrics::aggregate_reports;
use srh_core::harness::png::load_rgb;
use srh_core::harness::profile::SweepAxisPoints;
use srh_core::harness::train::{evaluate_checkpoint, normalize_pair, total_steps};
use srh_core::harness::{
    load_dataset_dir, metrics_table, profile, render_disparity_png, save_pfm, save_sample, synth_rds, train,
    Precision, RenderMode, RunConfig, StereoSample, Sweep, SynthSpec,
};
use srh_core::model::StereoNet;
use srh_core::Real;

#[derive(Parser)]
#[command(name = "srh", version, about = "Recurrent stereo matching: train, infer, evaluate, profile")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from scratch and write a checkpoint.
    Train(TrainArgs),
    /// Predict disparity for one rectified pair.
    Infer(InferArgs),
    /// Score a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Measure peak activation memory and time across a sweep.
    Profile(ProfileArgs),
    /// Write random-dot stereo pairs with ground truth.
    Synth(SynthArgs),
}

/// Every run-configuration key, as `--key-name value`.
#[derive(Args, Clone, Debug, Default)]
struct ConfigArgs {
    /// key = value file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d_max: Option<usize>,
    #[arg(long, value_parser = ["srh", "stacked_gru"])]
    aggregator: Option<String>,
    #[arg(long)]
    w1: Option<f64>,
    #[arg(long)]
    w2: Option<f64>,
    #[arg(long, value_parser = ["f32", "f64"])]
    precision: Option<String>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    downsample: Option<usize>,
    #[arg(long)]
    feature_channels: Option<usize>,
    #[arg(long)]
    stem_channels: Option<usize>,
    #[arg(long)]
    trunk_channels: Option<usize>,
    #[arg(long)]
    hidden_channels: Option<usize>,
    #[arg(long)]
    hourglass_mid: Option<usize>,
    #[arg(long)]
    hourglass_bottleneck: Option<usize>,
    #[arg(long)]
    instance_norm: Option<bool>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    crop_height: Option<usize>,
    #[arg(long)]
    crop_width: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    prefetch: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
    /// One value or three comma-separated channel means.
    #[arg(long)]
    norm_mean: Option<String>,
    #[arg(long)]
    norm_std: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        macro_rules! push {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    out.push((stringify!($field), v.to_string()));
                }
            )*};
        }
        push!(
            seed,
            d_max,
            aggregator,
            w1,
            w2,
            precision,
            levels,
            downsample,
            feature_channels,
            stem_channels,
            trunk_channels,
            hidden_channels,
            hourglass_mid,
            hourglass_bottleneck,
            instance_norm,
            lr,
            beta1,
            beta2,
            eps,
            crop_height,
            crop_width,
            epochs,
            steps,
            prefetch,
            log_every,
            norm_mean,
            norm_std
        );
        out
    }

    fn resolve(&self) -> Result<RunConfig> {
        Ok(RunConfig::layered(self.config.as_deref(), self.overrides())?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset directory; without it, synthetic pairs are generated.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of synthetic pairs when no dataset is given.
    #[arg(long, default_value_t = 8)]
    synth_count: u64,
    /// Checkpoint path.
    #[arg(long, default_value = "model.srhc")]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    /// Fold slices into a running soft argmin instead of building the volume.
    #[arg(long)]
    streaming: bool,
    /// Disparity as PFM.
    #[arg(long, default_value = "disparity.pfm")]
    out: PathBuf,
    /// Also write a colour preview PNG.
    #[arg(long)]
    render: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    streaming: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Write the per-sample table here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Weights to profile; a seeded initialisation from the configuration
    /// otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// `d_max:64,128,192` or `height:64,128,256`.
    #[arg(long, default_value = "d_max:64,128,192")]
    sweep: String,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long)]
    streaming: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    count: u64,
    #[arg(long, default_value_t = 96)]
    height: usize,
    #[arg(long, default_value_t = 96)]
    width: usize,
    #[arg(long, default_value_t = 16)]
    d_max: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    /// Flat-colour patches per scene.
    #[arg(long, default_value_t = 0)]
    textureless: usize,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

fn synthetic_set(first_seed: u64, count: u64, config: &RunConfig) -> Result<Vec<StereoSample>> {
    (first_seed..first_seed + count)
        .map(|s| {
            let spec = SynthSpec::random(s, config.crop_height, config.crop_width, config.d_max, 3, 1);
            Ok(synth_rds(s, &spec)?)
        })
        .collect()
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let data = match &args.data {
        Some(dir) => load_dataset_dir(dir)?,
        None => synthetic_set(config.seed, args.synth_count, &config)?,
    };
    println!("samples={}", data.len());
    println!("steps={}", total_steps(&config, data.len()));
    let outcome = match config.precision {
        Precision::F32 => train::<f32>(&config, &data)?,
        Precision::F64 => train::<f64>(&config, &data)?,
    };
    outcome.checkpoint.save(&args.out)?;
    if let Some(last) = outcome.losses.last() {
        println!("final_loss={last:.6}");
    }
    println!("checkpoint={}", args.out.display());
    Ok(())
}

fn load_model<T: Real>(path: &Path, d_max: Option<usize>) -> Result<StereoNet<T>> {
    let ck = Checkpoint::load(path)?;
    let mut net = StereoNet::<T>::from_checkpoint(&ck)?;
    if let Some(d) = d_max {
        let mut config = net.config().clone();
        config.d_max = d;
        net = StereoNet::new(config, 0)?;
        net.load_weights(&ck)?;
    }
    Ok(net)
}

fn infer_as<T: Real>(args: &InferArgs, config: &RunConfig) -> Result<()> {
    let net = load_model::<T>(&args.checkpoint, args.config.d_max)?;
    let left = load_rgb(&args.left).with_context(|| format!("reading {}", args.left.display()))?;
    let right = load_rgb(&args.right).with_context(|| format!("reading {}", args.right.display()))?;
    let pair = normalize_pair::<T>(&left, &right, config.norm_mean, config.norm_std)?;
    let map = net.infer(&pair, args.streaming)?;
    save_pfm(&args.out, &map.values.cast())?;
    if let Some(path) = &args.render {
        render_disparity_png(&map.values, net.config().d_max as f64, path, RenderMode::Color)?;
    }
    println!("height={}", map.height());
    println!("width={}", map.width());
    println!("disparity={}", args.out.display());
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let data = load_dataset_dir(&args.data)?;
    let results = match config.precision {
        Precision::F32 => evaluate_checkpoint::<f32>(&ck, &data, &config, args.streaming, args.workers)?,
        Precision::F64 => evaluate_checkpoint::<f64>(&ck, &data, &config, args.streaming, args.workers)?,
    };
    let all: Vec<_> = results.iter().map(|r| r.all.clone()).collect();
    print!("samples={}\n{}", results.len(), aggregate_reports(&all)?.to_key_value_lines());
    let noc: Option<Vec<_>> = results.iter().map(|r| r.noc.clone()).collect();
    if let Some(noc) = noc {
        print!("{}", aggregate_reports(&noc)?.to_key_value_lines());
    }
    let rows = results
        .iter()
        .flat_map(|r| std::iter::once((r.name.as_str(), &r.all)).chain(r.noc.as_ref().map(|n| (r.name.as_str(), n))));
    let table = metrics_table(rows);
    println!();
    print!("{table}");
    if let Some(out) = &args.out {
        fs::write(out, &table).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn run_profile(args: &ProfileArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let ck = match &args.checkpoint {
        Some(p) => Checkpoint::load(p)?,
        None => StereoNet::<f32>::new(config.model_config(), config.seed)?.to_checkpoint(),
    };
    let SweepAxisPoints { axis, points } = args.sweep.parse()?;
    let sweep = Sweep {
        axis,
        points,
        height: args.height,
        width: args.width,
        d_max: config.d_max,
    };
    let report = match config.precision {
        Precision::F32 => profile::<f32>(&ck, &sweep, args.streaming)?,
        Precision::F64 => profile::<f64>(&ck, &sweep, args.streaming)?,
    };
    print!("{}\n{}", report.to_key_value_lines(), report.to_table());
    if let Some(out) = &args.out {
        fs::write(out, report.to_table()).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    if args.count == 0 {
        bail!("--count must be positive");
    }
    for (i, seed) in (args.seed..args.seed + args.count).enumerate() {
        let spec = SynthSpec::random(seed, args.height, args.width, args.d_max, args.layers, args.textureless);
        save_sample(&args.out, i, &synth_rds(seed, &spec)?)?;
    }
    println!("samples={}", args.count);
    println!("dir={}", args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(a) => run_train(&a),
        Command::Infer(a) => {
            let config = a.config.resolve()?;
            match config.precision {
                Precision::F32 => infer_as::<f32>(&a, &config),
                Precision::F64 => infer_as::<f64>(&a, &config),
            }
        }
        Command::Eval(a) => run_eval(&a),
        Command::Profile(a) => run_profile(&a),
        Command::Synth(a) => run_synth(&a),
    }
}
