//! Mean epoch duration per encoder. Encoders run strictly one after
//! another on the same dataset so their wall clocks never overlap; the
//! first few epochs are treated as warm-up and excluded.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use sigdyn::dde::dataset::load_dataset;
use sigdyn::training::train;

use crate::experiment::{
    parse_list, resolve_train_config, DecoderArg, EncoderArg, ModelSpec, Profile, TimingMode,
    TrainOverrides,
};
use crate::UsageError;

pub struct TimingArgs {
    pub data: std::path::PathBuf,
    pub encoders: String,
    pub decoder: DecoderArg,
    pub epochs: usize,
    pub warmup: usize,
    pub batch_size: Option<usize>,
}

/// Fewer measured epochs than this and the mean is mostly scheduler noise.
const MIN_MEASURED: usize = 5;

pub fn cmd_bench_timing(
    args: &TimingArgs,
    profile: Profile,
    seed: u64,
    out: &Path,
    timing: TimingMode,
) -> Result<()> {
    let measured = args.epochs.saturating_sub(args.warmup);
    if measured < MIN_MEASURED {
        return Err(UsageError(format!(
            "{} warm-up + {} measured epochs requested; at least {MIN_MEASURED} measured \
             epochs are needed, so pass --epochs {} or more",
            args.warmup,
            measured,
            args.warmup + MIN_MEASURED
        ))
        .into());
    }
    let encoders: Vec<EncoderArg> = parse_list::<String>(&args.encoders, "encoder")?
        .iter()
        .map(|s| {
            clap::ValueEnum::from_str(s, true)
                .map_err(|_| UsageError(format!("unknown encoder `{s}`; one of sig, gru, point")))
        })
        .collect::<Result<_, _>>()?;
    if encoders.is_empty() {
        return Err(UsageError("at least one encoder is required".to_string()).into());
    }
    let ds = load_dataset(&args.data)?;
    let overrides = TrainOverrides {
        epochs: Some(args.epochs),
        batch_size: args.batch_size,
        lr: None,
        encode_fraction: None,
        clip: None,
    };
    let tc = resolve_train_config(profile, seed, false, &overrides);

    let mut table = String::from(
        "encoder,decoder,warmup_epochs,measured_epochs,mean_epoch_seconds,std_epoch_seconds,test_rmse,val_rmse\n",
    );
    for enc in encoders {
        let spec = ModelSpec::new(enc, args.decoder, None, None, None, None, None, false)?;
        eprintln!("[timing] {} ({} epochs, batch {})", spec.slug(), tc.epochs, tc.batch_size);
        let result = train(spec.encoder.clone(), spec.decoder.clone(), &ds, &tc)?;
        let secs = &result.record.epoch_seconds[args.warmup..];
        let n = secs.len() as f64;
        let mean = secs.iter().sum::<f64>() / n;
        let var = secs.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        let (mean, std) = match timing {
            TimingMode::Wall => (mean, var.sqrt()),
            TimingMode::None => (0.0, 0.0),
        };
        let val = result.meta.best_val_rmse.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            table,
            "{},{},{},{},{},{},{},{}",
            enc.name(),
            args.decoder.name(),
            args.warmup,
            secs.len(),
            mean,
            std,
            result.record.final_test_rmse,
            val,
        )
        .expect("string writes cannot fail");
    }
    std::fs::create_dir_all(out)?;
    let path = out.join("timing.csv");
    std::fs::write(&path, &table)?;
    print!("{table}");
    println!("wrote {}", path.display());
    Ok(())
}
