//! Experiment front end: dataset generation, training, evaluation, sweep
//! studies, epoch timing, and figures, over the model families in the
//! `sigdyn` crate.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod ablate;
mod experiment;
mod plot;
mod run;
mod svg;
mod timing;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sigdyn::dde::dataset::{generate_dataset, load_dataset, save_dataset};
use sigdyn::models::ModelError;
use sigdyn::training::{evaluate_rmse, TrainError};

use crate::ablate::{cmd_ablate, AblateArgs, StudyArg};
use crate::experiment::{
    resolve_system, resolve_train_config, write_results_csv, DecoderArg, EncoderArg, ModelSpec,
    PartArg, PhiArg, PointModeArg, Profile, ResultsRow, TimingMode, TrainOverrides,
};
use crate::plot::{cmd_plot_loss, cmd_plot_trajectory, parse_group, TrajectoryArgs};
use crate::run::{record_outcome, run_cell};
use crate::timing::{cmd_bench_timing, TimingArgs};

/// Bad arguments or bad argument combinations; exits with code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "sigdyn",
    version,
    about = "Signature-encoder sequence models on delay-equation benchmarks"
)]
struct Cli {
    /// Base seed: dataset generation, and training where no seed list applies.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory; each command picks a default under ./out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Scale: desk (200 trajectories, 300 epochs, 3 seeds) or paper
    /// (1000 trajectories, 1000 epochs, 5 seeds).
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// wall records wall-clock columns; none zeroes them so re-runs are
    /// byte-identical.
    #[arg(long, global = true, value_enum, default_value_t = TimingMode::Wall)]
    timing: TimingMode,
    #[command(subcommand)]
    command: Commands,
}

#[derive(Args)]
struct ModelFlags {
    /// Encoder family.
    #[arg(long, value_enum)]
    encoder: EncoderArg,
    /// Decoder family.
    #[arg(long, value_enum)]
    decoder: DecoderArg,
    /// Signature truncation depth (sig encoder only).
    #[arg(long)]
    depth: Option<usize>,
    /// Sliding window length (sig encoder only).
    #[arg(long)]
    window: Option<usize>,
    /// Learned window lift on/off (sig encoder only).
    #[arg(long, value_enum)]
    phi: Option<PhiArg>,
    /// Latent width; pinned to the data dimension for node/anode decoders
    /// and point encoders.
    #[arg(long)]
    latent: Option<usize>,
    /// Which observed point anchors the point encoder.
    #[arg(long, value_enum)]
    point_mode: Option<PointModeArg>,
    /// Variational heads trained with the ELBO (sig and gru encoders).
    #[arg(long)]
    variational: bool,
}

impl ModelFlags {
    fn spec(&self) -> Result<ModelSpec, UsageError> {
        ModelSpec::new(
            self.encoder,
            self.decoder,
            self.depth,
            self.window,
            self.phi,
            self.latent,
            self.point_mode,
            self.variational,
        )
    }
}

#[derive(Args)]
struct TrainFlags {
    /// Training epochs; defaults to the profile's count.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Fraction of each trajectory the encoder observes.
    #[arg(long)]
    encode_fraction: Option<f64>,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long)]
    clip: Option<f64>,
}

impl TrainFlags {
    fn overrides(&self) -> TrainOverrides {
        TrainOverrides {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            encode_fraction: self.encode_fraction,
            clip: self.clip,
        }
    }
}

#[derive(Subcommand)]
enum Commands {
    /// Generate a benchmark dataset directory.
    Generate {
        /// System name: lotka_volterra, spiral, fitzhugh_nagumo, rossler.
        #[arg(long)]
        system: String,
        /// Trajectories to generate; defaults to the profile's count.
        #[arg(long)]
        n_traj: Option<usize>,
        /// Observation points per trajectory.
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Std of Gaussian noise for a corrupted input copy stored
        /// alongside the clean targets.
        #[arg(long)]
        noise: Option<f64>,
        /// System parameter overrides, e.g. --param gamma=1.5.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    /// Train one (encoder, decoder, seed) cell on a dataset directory.
    Train {
        /// Dataset directory from `generate`.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Report prediction RMSE of a checkpoint on one dataset split.
    Evaluate {
        /// Checkpoint directory from `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory from `generate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = PartArg::Test)]
        part: PartArg,
        /// Report in raw data units instead of normalized units.
        #[arg(long)]
        denormalize: bool,
        /// Also print one RMSE line per trajectory.
        #[arg(long)]
        per_trajectory: bool,
        #[arg(long, default_value_t = 0.5)]
        encode_fraction: f64,
    },
    /// Run a sweep study: cross product of sweep values, models, and seeds.
    Ablate {
        #[arg(long, value_enum)]
        study: StudyArg,
        /// System name; the coupling study defaults to fitzhugh_nagumo.
        #[arg(long)]
        system: Option<String>,
        /// Comma-separated sweep values; each study has a default grid.
        #[arg(long)]
        values: Option<String>,
        /// Shorthand for the phi study: sweep only the off setting.
        #[arg(long)]
        off: bool,
        /// Model pairs, e.g. sig+flow,gru+flow; defaults per study.
        #[arg(long)]
        models: Option<String>,
        /// Training seeds; defaults to the profile's list.
        #[arg(long)]
        seeds: Option<String>,
        /// Trajectories per dataset; defaults to the profile's count.
        #[arg(long)]
        n_traj: Option<usize>,
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Sliding window length for signature models.
        #[arg(long)]
        window: Option<usize>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Mean epoch duration per encoder on one dataset, one after another.
    BenchTiming {
        /// Dataset directory from `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Encoders to time, comma-separated.
        #[arg(long, default_value = "sig,gru")]
        encoders: String,
        #[arg(long, value_enum, default_value_t = DecoderArg::Flow)]
        decoder: DecoderArg,
        /// Total epochs including warm-up.
        #[arg(long, default_value_t = 23)]
        epochs: usize,
        /// Leading epochs excluded from the mean.
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Emit SVG figures.
    Plot {
        #[command(subcommand)]
        what: PlotCommands,
    },
}

#[derive(Subcommand)]
enum PlotCommands {
    /// Log-scale training-loss curves, averaged per group with min-max bands.
    Loss {
        /// label=run.csv[,run.csv...]; repeat for more curves.
        #[arg(long = "group", value_name = "LABEL=PATHS")]
        groups: Vec<String>,
        #[arg(long)]
        title: Option<String>,
    },
    /// Ground truth on the full span, predictions on the forecast half.
    Trajectory {
        /// Checkpoint directory from `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory from `generate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = PartArg::Test)]
        part: PartArg,
        /// Trajectory position within the split.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 0.5)]
        encode_fraction: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Clap handles --help/--version; everything else is usage.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Usage errors exit 1; runtime failures exit 2. Configuration rejections
/// from the library are argument problems, so they count as usage.
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    if let Some(te) = e.downcast_ref::<TrainError>() {
        if matches!(te, TrainError::Config(_) | TrainError::Model(ModelError::Config(_))) {
            return 1;
        }
    }
    if matches!(e.downcast_ref::<ModelError>(), Some(ModelError::Config(_))) {
        return 1;
    }
    2
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be positive".to_string()).into());
        }
        configure_threads(n)?;
    }
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| Path::new("out").join(default));
    match &cli.command {
        Commands::Generate { system, n_traj, points, noise, params } => cmd_generate(
            system,
            n_traj.unwrap_or_else(|| cli.profile.n_traj()),
            *points,
            *noise,
            params,
            cli.seed,
            &out("dataset"),
        ),
        Commands::Train { data, model, train } => {
            let spec = model.spec()?;
            let dir = out(&format!("train-{}", spec.slug()));
            cmd_train(data, &spec, train, &cli, &dir)
        }
        Commands::Evaluate { checkpoint, data, part, denormalize, per_trajectory, encode_fraction } => {
            cmd_evaluate(checkpoint, data, *part, *denormalize, *per_trajectory, *encode_fraction)
        }
        Commands::Ablate { study, system, values, off, models, seeds, n_traj, points, window, train } => {
            let args = AblateArgs {
                study: *study,
                system: system.clone(),
                values: values.clone(),
                off: *off,
                models: models.clone(),
                seeds: seeds.clone(),
                n_traj: *n_traj,
                points: *points,
                window: *window,
                overrides: train.overrides(),
            };
            let dir = out(match study {
                StudyArg::Depth => "depth",
                StudyArg::Phi => "phi",
                StudyArg::Noise => "noise",
                StudyArg::SeqLen => "seq_len",
                StudyArg::Coupling => "coupling",
            });
            std::fs::create_dir_all(&dir)?;
            cmd_ablate(&args, cli.profile, cli.seed, &dir, cli.timing)
        }
        Commands::BenchTiming { data, encoders, decoder, epochs, warmup, batch_size } => {
            let args = TimingArgs {
                data: data.clone(),
                encoders: encoders.clone(),
                decoder: *decoder,
                epochs: *epochs,
                warmup: *warmup,
                batch_size: *batch_size,
            };
            cmd_bench_timing(&args, cli.profile, cli.seed, &out("timing"), cli.timing)
        }
        Commands::Plot { what } => match what {
            PlotCommands::Loss { groups, title } => {
                let groups =
                    groups.iter().map(|g| parse_group(g)).collect::<Result<Vec<_>, _>>()?;
                cmd_plot_loss(&groups, title.as_deref(), &out("plots"))
            }
            PlotCommands::Trajectory { checkpoint, data, part, index, encode_fraction } => {
                let args = TrajectoryArgs {
                    checkpoint: checkpoint.clone(),
                    data: data.clone(),
                    part: *part,
                    index: *index,
                    encode_fraction: *encode_fraction,
                };
                cmd_plot_trajectory(&args, &out("plots"))
            }
        },
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot configure the worker pool")
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_n: usize) -> Result<()> {
    eprintln!("warning: built without the parallel feature; --threads has no effect");
    Ok(())
}

fn cmd_generate(
    system: &str,
    n_traj: usize,
    points: usize,
    noise: Option<f64>,
    params: &[String],
    seed: u64,
    out: &Path,
) -> Result<()> {
    let mut overrides = BTreeMap::new();
    for p in params {
        let (key, value) = p
            .split_once('=')
            .ok_or_else(|| UsageError(format!("bad --param `{p}`; expected KEY=VALUE")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| UsageError(format!("bad --param value `{value}` for `{key}`")))?;
        overrides.insert(key.to_string(), value);
    }
    if let Some(eps) = noise {
        if !eps.is_finite() || eps < 0.0 {
            return Err(UsageError(format!("--noise must be finite and nonnegative, got {eps}")).into());
        }
    }
    let system = resolve_system(system, &overrides)?;
    let mut ds = generate_dataset(&system, n_traj, points, seed)?;
    if let Some(eps) = noise {
        ds = ds.with_noise(eps, seed);
    }
    save_dataset(out, &ds)?;
    println!(
        "wrote {}: {} ({}D), {} trajectories x {} points, split {}/{}/{}, noise {}{}",
        out.display(),
        ds.system.name,
        ds.system.dim,
        ds.trajectories.len(),
        ds.n_points,
        ds.train_idx.len(),
        ds.val_idx.len(),
        ds.test_idx.len(),
        ds.noise_std,
        if ds.dropped_ics.is_empty() {
            String::new()
        } else {
            format!(", {} unstable trajectories dropped", ds.dropped_ics.len())
        }
    );
    Ok(())
}

fn cmd_train(
    data: &Path,
    spec: &ModelSpec,
    flags: &TrainFlags,
    cli: &Cli,
    dir: &Path,
) -> Result<()> {
    let ds = load_dataset(data).with_context(|| format!("cannot load dataset {}", data.display()))?;
    let tc = resolve_train_config(cli.profile, cli.seed, spec.encoder.variational, &flags.overrides());
    eprintln!(
        "[train] {} on {} ({} epochs, batch {}, lr {})",
        spec.slug(),
        ds.system.name,
        tc.epochs,
        tc.batch_size,
        tc.lr
    );
    let (result, mean_secs) = run_cell(&ds, spec, &tc, dir, cli.timing)?;
    let mut row = ResultsRow::describe(spec, &ds.system, ds.noise_std, None, cli.seed);
    record_outcome(&mut row, &result, mean_secs);
    write_results_csv(&dir.join("results.csv"), &[row])?;
    let s = result.record.summary();
    println!(
        "trained {} epochs; best epoch {} (val RMSE {}), test RMSE {}",
        s.epochs,
        s.best_epoch,
        s.best_val_rmse.map(|v| v.to_string()).unwrap_or_else(|| "n/a".to_string()),
        s.final_test_rmse
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_evaluate(
    checkpoint: &Path,
    data: &Path,
    part: PartArg,
    denormalize: bool,
    per_trajectory: bool,
    encode_fraction: f64,
) -> Result<()> {
    let (model, meta) = sigdyn::models::load_checkpoint(checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", checkpoint.display()))?;
    let ds = load_dataset(data).with_context(|| format!("cannot load dataset {}", data.display()))?;
    let report = evaluate_rmse(&model, &ds, part.part(), encode_fraction, denormalize)?;
    let units = if denormalize { "raw units" } else { "normalized units" };
    println!(
        "{} RMSE on {} ({} trajectories, {units}): {}",
        part.name(),
        ds.system.name,
        report.per_trajectory.len(),
        report.pooled
    );
    println!("checkpoint: best epoch {} of {}", meta.best_epoch, meta.epochs);
    if per_trajectory {
        for (i, r) in report.per_trajectory.iter().enumerate() {
            println!("trajectory {}: {}", ds.indices(part.part())[i], r);
        }
    }
    Ok(())
}
