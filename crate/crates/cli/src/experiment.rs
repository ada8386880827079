//! Shared vocabulary for the experiment commands: scale profiles, model
//! specifications, and the results-table row format.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use clap::ValueEnum;
use sigdyn::dde::{make_system, DdeError, DdeSystem};
use sigdyn::models::{DecoderConfig, EncoderConfig, PointMode};
use sigdyn::training::TrainConfig;

use crate::UsageError;

/// Scale knob: `desk` keeps a full study in the minutes-to-hours range,
/// `paper` reproduces the published protocol (1,000 trajectories, 1,000
/// epochs, 5 seeds).
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn n_traj(self) -> usize {
        match self {
            Profile::Desk => 200,
            Profile::Paper => 1000,
        }
    }

    pub fn epochs(self) -> usize {
        match self {
            Profile::Desk => 300,
            Profile::Paper => 1000,
        }
    }

    pub fn seeds(self) -> Vec<u64> {
        match self {
            Profile::Desk => vec![0, 1, 2],
            Profile::Paper => vec![0, 1, 2, 3, 4],
        }
    }
}

/// Whether exported tables carry wall-clock columns. `none` zeroes them so
/// re-runs are byte-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TimingMode {
    Wall,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PartArg {
    Train,
    Val,
    Test,
}

impl PartArg {
    pub fn part(self) -> sigdyn::dde::dataset::Part {
        match self {
            PartArg::Train => sigdyn::dde::dataset::Part::Train,
            PartArg::Val => sigdyn::dde::dataset::Part::Val,
            PartArg::Test => sigdyn::dde::dataset::Part::Test,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PartArg::Train => "train",
            PartArg::Val => "val",
            PartArg::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderArg {
    Sig,
    Gru,
    Point,
}

impl EncoderArg {
    pub fn name(self) -> &'static str {
        match self {
            EncoderArg::Sig => "sig",
            EncoderArg::Gru => "gru",
            EncoderArg::Point => "point",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecoderArg {
    Node,
    Anode,
    Flow,
}

impl DecoderArg {
    pub fn name(self) -> &'static str {
        match self {
            DecoderArg::Node => "node",
            DecoderArg::Anode => "anode",
            DecoderArg::Flow => "flow",
        }
    }

    pub fn config(self) -> DecoderConfig {
        match self {
            DecoderArg::Node => DecoderConfig::node(),
            DecoderArg::Anode => DecoderConfig::anode(),
            DecoderArg::Flow => DecoderConfig::flow(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhiArg {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PointModeArg {
    First,
    Last,
}

/// One (encoder, decoder) cell of the experiment matrix, with every knob the
/// CLI exposes resolved to concrete configs.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub encoder_arg: EncoderArg,
    pub decoder_arg: DecoderArg,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl ModelSpec {
    /// Applies per-encoder flags on top of the built-in defaults. Flags that
    /// only exist for the signature encoder are rejected elsewhere.
    pub fn new(
        encoder_arg: EncoderArg,
        decoder_arg: DecoderArg,
        depth: Option<usize>,
        window: Option<usize>,
        phi: Option<PhiArg>,
        latent: Option<usize>,
        point_mode: Option<PointModeArg>,
        variational: bool,
    ) -> Result<ModelSpec, UsageError> {
        if encoder_arg != EncoderArg::Sig {
            for (flag, given) in [
                ("--depth", depth.is_some()),
                ("--window", window.is_some()),
                ("--phi", phi.is_some()),
            ] {
                if given {
                    return Err(UsageError(format!(
                        "{flag} only applies to the signature encoder"
                    )));
                }
            }
        }
        if encoder_arg != EncoderArg::Point && point_mode.is_some() {
            return Err(UsageError(
                "--point-mode only applies to the point encoder".to_string(),
            ));
        }
        if encoder_arg == EncoderArg::Point && variational {
            return Err(UsageError(
                "the point encoder has no distribution heads; --variational needs sig or gru"
                    .to_string(),
            ));
        }
        let mut encoder = match encoder_arg {
            EncoderArg::Sig => EncoderConfig::signature(),
            EncoderArg::Gru => EncoderConfig::gru(),
            EncoderArg::Point => EncoderConfig::point(match point_mode {
                Some(PointModeArg::First) => PointMode::First,
                // Extrapolation anchored at the last observed value.
                Some(PointModeArg::Last) | None => PointMode::Last,
            }),
        };
        if let Some(n) = depth {
            encoder.depth = n;
        }
        if let Some(m) = window {
            encoder.window = m;
        }
        if phi == Some(PhiArg::Off) {
            // The "no lift" control: the signature sees only the raw value
            // and time pass-through channels.
            encoder.learned_features = 0;
        }
        if let Some(l) = latent {
            encoder.latent_dim = l;
        }
        encoder.variational = variational;
        Ok(ModelSpec {
            encoder_arg,
            decoder_arg,
            encoder,
            decoder: decoder_arg.config(),
        })
    }

    pub fn slug(&self) -> String {
        format!("{}-{}", self.encoder_arg.name(), self.decoder_arg.name())
    }
}

/// Parses "enc+dec" pairs, e.g. "sig+flow,gru+flow".
pub fn parse_model_list(s: &str) -> Result<Vec<(EncoderArg, DecoderArg)>, UsageError> {
    let mut out = Vec::new();
    for pair in s.split(',') {
        let (enc, dec) = pair.split_once('+').ok_or_else(|| {
            UsageError(format!(
                "bad model pair `{pair}`; expected encoder+decoder, e.g. sig+flow"
            ))
        })?;
        let enc = EncoderArg::from_str(enc, true)
            .map_err(|_| UsageError(format!("unknown encoder `{enc}`; one of sig, gru, point")))?;
        let dec = DecoderArg::from_str(dec, true)
            .map_err(|_| UsageError(format!("unknown decoder `{dec}`; one of node, anode, flow")))?;
        out.push((enc, dec));
    }
    Ok(out)
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, UsageError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| UsageError(format!("bad {what} value `{v}`")))
        })
        .collect()
}

/// Builds a benchmark system, translating an unknown name into a usage
/// error that lists what would have worked.
pub fn resolve_system(
    name: &str,
    overrides: &BTreeMap<String, f64>,
) -> Result<DdeSystem, UsageError> {
    make_system(name, overrides).map_err(|e| match e {
        DdeError::UnknownSystem(n) => UsageError(format!(
            "unknown system `{n}`; valid systems: lotka_volterra, spiral, fitzhugh_nagumo, \
             rossler (with or without a `_dde` suffix)"
        )),
        other => UsageError(other.to_string()),
    })
}

pub const RESULTS_HEADER: &str =
    "system,encoder,decoder,depth,window,phi,noise,seq_len,coupling,seed,test_rmse,val_rmse,best_epoch,epoch_seconds";

/// One line of the results table. Optional fields print as empty cells:
/// depth/window/phi only apply to signature encoders, seq_len only to
/// subsampled inputs, coupling only to systems with a `gamma` parameter,
/// and the result columns stay empty when the run failed.
#[derive(Debug, Clone)]
pub struct ResultsRow {
    pub system: String,
    pub encoder: &'static str,
    pub decoder: &'static str,
    pub depth: Option<usize>,
    pub window: Option<usize>,
    pub phi: Option<PhiArg>,
    pub noise: f64,
    pub seq_len: Option<usize>,
    pub coupling: Option<f64>,
    pub seed: u64,
    pub test_rmse: Option<f64>,
    pub val_rmse: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epoch_seconds: Option<f64>,
}

impl ResultsRow {
    /// Describes a run before its results are known; the result columns are
    /// filled in by the runner.
    pub fn describe(spec: &ModelSpec, system: &DdeSystem, noise: f64, seq_len: Option<usize>, seed: u64) -> ResultsRow {
        let sig = spec.encoder_arg == EncoderArg::Sig;
        ResultsRow {
            system: system.name.clone(),
            encoder: spec.encoder_arg.name(),
            decoder: spec.decoder_arg.name(),
            depth: sig.then_some(spec.encoder.depth),
            window: sig.then_some(spec.encoder.window),
            phi: sig.then_some(if spec.encoder.learned_features == 0 {
                PhiArg::Off
            } else {
                PhiArg::On
            }),
            noise,
            seq_len,
            coupling: system.params.get("gamma").copied(),
            seed,
            test_rmse: None,
            val_rmse: None,
            best_epoch: None,
            epoch_seconds: None,
        }
    }

    pub fn to_line(&self) -> String {
        fn cell<T: std::fmt::Display>(v: &Option<T>) -> String {
            v.as_ref().map(|x| x.to_string()).unwrap_or_default()
        }
        let phi = match self.phi {
            Some(PhiArg::On) => "on",
            Some(PhiArg::Off) => "off",
            None => "",
        };
        let mut line = String::new();
        write!(
            line,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.system,
            self.encoder,
            self.decoder,
            cell(&self.depth),
            cell(&self.window),
            phi,
            self.noise,
            cell(&self.seq_len),
            cell(&self.coupling),
            self.seed,
            cell(&self.test_rmse),
            cell(&self.val_rmse),
            cell(&self.best_epoch),
            cell(&self.epoch_seconds),
        )
        .expect("string writes cannot fail");
        line
    }

    /// Directory slug for the run's artifacts, unique within one study.
    pub fn slug(&self) -> String {
        let mut s = format!("{}-{}", self.encoder, self.decoder);
        if let Some(d) = self.depth {
            write!(s, "-depth{d}").unwrap();
        }
        if self.phi == Some(PhiArg::Off) {
            s.push_str("-phioff");
        }
        if self.noise > 0.0 {
            write!(s, "-noise{}", self.noise).unwrap();
        }
        if let Some(n) = self.seq_len {
            write!(s, "-seqlen{n}").unwrap();
        }
        if let Some(g) = self.coupling {
            write!(s, "-gamma{g}").unwrap();
        }
        write!(s, "-seed{}", self.seed).unwrap();
        s
    }
}

pub fn write_results_csv(path: &std::path::Path, rows: &[ResultsRow]) -> std::io::Result<()> {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Training configuration from profile defaults plus explicit overrides.
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub encode_fraction: Option<f64>,
    pub clip: Option<f64>,
}

pub fn resolve_train_config(
    profile: Profile,
    seed: u64,
    variational: bool,
    ov: &TrainOverrides,
) -> TrainConfig {
    let mut tc = TrainConfig {
        epochs: ov.epochs.unwrap_or_else(|| profile.epochs()),
        seed,
        ..TrainConfig::default()
    };
    if let Some(b) = ov.batch_size {
        tc.batch_size = b;
    }
    if let Some(lr) = ov.lr {
        tc.lr = lr;
    }
    if let Some(f) = ov.encode_fraction {
        tc.encode_fraction = f;
    }
    if let Some(c) = ov.clip {
        // 0 disables clipping; the trainer treats None as "no clip".
        tc.max_grad_norm = (c > 0.0).then_some(c);
    }
    if variational {
        tc.objective = sigdyn::training::Objective::Elbo;
    }
    tc
}
