//! Sweep studies over the experiment matrix: signature depth, the learned
//! lift, input noise, input sequence length, and the delay-coupling factor.
//! Each study runs (sweep values x models x seeds) cells against shared
//! read-only datasets and reports per-cell rows plus a mean/std summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use clap::ValueEnum;
use serde::Serialize;
use sigdyn::dde::dataset::{generate_dataset, DatasetSplit};
use sigdyn::parallel::map_indexed;
use sigdyn::rng::derive_seed;


use crate::experiment::{
    parse_list, parse_model_list, resolve_system, resolve_train_config, write_results_csv,
    DecoderArg, EncoderArg, ModelSpec, PhiArg, Profile, ResultsRow, TimingMode, TrainOverrides,
    RESULTS_HEADER,
};
use crate::run::{record_outcome, run_cell};
use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyArg {
    Depth,
    Phi,
    Noise,
    #[value(alias = "seq_len")]
    SeqLen,
    Coupling,
}

impl StudyArg {
    fn name(self) -> &'static str {
        match self {
            StudyArg::Depth => "depth",
            StudyArg::Phi => "phi",
            StudyArg::Noise => "noise",
            StudyArg::SeqLen => "seq_len",
            StudyArg::Coupling => "coupling",
        }
    }
}

/// One point on a study's sweep axis.
#[derive(Debug, Clone, Copy, PartialEq)]
enum SweepPoint {
    Depth(usize),
    Phi(PhiArg),
    Noise(f64),
    SeqLen(usize),
    Coupling(f64),
}

impl SweepPoint {
    fn label(self) -> String {
        match self {
            SweepPoint::Depth(v) => v.to_string(),
            SweepPoint::Phi(PhiArg::On) => "on".to_string(),
            SweepPoint::Phi(PhiArg::Off) => "off".to_string(),
            SweepPoint::Noise(v) | SweepPoint::Coupling(v) => v.to_string(),
            SweepPoint::SeqLen(v) => v.to_string(),
        }
    }
}

pub struct AblateArgs {
    pub study: StudyArg,
    pub system: Option<String>,
    pub values: Option<String>,
    pub off: bool,
    pub models: Option<String>,
    pub seeds: Option<String>,
    pub n_traj: Option<usize>,
    pub points: usize,
    pub window: Option<usize>,
    pub overrides: TrainOverrides,
}

/// Full plan written next to the results so any row can be reproduced
/// without the shell history.
#[derive(Serialize)]
struct PlanRecord {
    study: &'static str,
    system: String,
    values: Vec<String>,
    models: Vec<String>,
    seeds: Vec<u64>,
    n_traj: usize,
    points: usize,
    data_seed: u64,
    lr: f64,
    batch_size: usize,
    epochs: usize,
    encode_fraction: f64,
}

fn default_models(study: StudyArg) -> Vec<(EncoderArg, DecoderArg)> {
    match study {
        StudyArg::Depth | StudyArg::Phi => vec![(EncoderArg::Sig, DecoderArg::Flow)],
        StudyArg::Noise | StudyArg::SeqLen => vec![
            (EncoderArg::Point, DecoderArg::Node),
            (EncoderArg::Point, DecoderArg::Anode),
            (EncoderArg::Gru, DecoderArg::Flow),
            (EncoderArg::Sig, DecoderArg::Flow),
        ],
        StudyArg::Coupling => {
            vec![(EncoderArg::Sig, DecoderArg::Flow), (EncoderArg::Gru, DecoderArg::Flow)]
        }
    }
}

fn sweep_points(args: &AblateArgs) -> Result<Vec<SweepPoint>, UsageError> {
    let values = args.values.as_deref();
    match args.study {
        StudyArg::Depth => {
            let vs = match values {
                Some(s) => parse_list::<usize>(s, "depth")?,
                None => vec![1, 2, 3],
            };
            if vs.iter().any(|&v| v == 0) {
                return Err(UsageError("depth values must be at least 1".to_string()));
            }
            Ok(vs.into_iter().map(SweepPoint::Depth).collect())
        }
        StudyArg::Phi => {
            if args.off {
                return Ok(vec![SweepPoint::Phi(PhiArg::Off)]);
            }
            let vs = match values {
                Some(s) => s
                    .split(',')
                    .map(|v| {
                        PhiArg::from_str(v.trim(), true)
                            .map_err(|_| UsageError(format!("bad phi value `{v}`; on or off")))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                None => vec![PhiArg::On, PhiArg::Off],
            };
            Ok(vs.into_iter().map(SweepPoint::Phi).collect())
        }
        StudyArg::Noise => {
            let vs = match values {
                Some(s) => parse_list::<f64>(s, "noise")?,
                None => vec![0.0, 0.02, 0.05, 0.1],
            };
            if vs.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(UsageError("noise values must be finite and nonnegative".to_string()));
            }
            Ok(vs.into_iter().map(SweepPoint::Noise).collect())
        }
        StudyArg::SeqLen => {
            let vs = match values {
                Some(s) => parse_list::<usize>(s, "seq_len")?,
                None => vec![100, 80, 70, 50],
            };
            let half = args.points.div_ceil(2);
            for &v in &vs {
                if v < 2 || v > half {
                    return Err(UsageError(format!(
                        "seq_len {v} out of range: the encoding half of a {}-point trajectory \
                         holds {half} points, so values must lie in [2, {half}]",
                        args.points
                    )));
                }
            }
            Ok(vs.into_iter().map(SweepPoint::SeqLen).collect())
        }
        StudyArg::Coupling => {
            // No published grid to mirror; the default is just a convenient
            // spread around the nominal 1.0.
            let vs = match values {
                Some(s) => parse_list::<f64>(s, "coupling")?,
                None => vec![0.5, 1.0, 1.5, 2.0],
            };
            if vs.iter().any(|&v| !v.is_finite()) {
                return Err(UsageError("coupling values must be finite".to_string()));
            }
            Ok(vs.into_iter().map(SweepPoint::Coupling).collect())
        }
    }
}

pub fn cmd_ablate(
    args: &AblateArgs,
    profile: Profile,
    base_seed: u64,
    out: &Path,
    timing: TimingMode,
) -> Result<()> {
    let points = sweep_points(args)?;
    let system_name = match (&args.system, args.study) {
        (Some(name), _) => name.clone(),
        (None, StudyArg::Coupling) => "fitzhugh_nagumo_dde".to_string(),
        (None, study) => {
            return Err(UsageError(format!(
                "--system is required for the {} study",
                study.name()
            ))
            .into())
        }
    };
    let base_system = resolve_system(&system_name, &BTreeMap::new())?;
    if args.study == StudyArg::Coupling && !base_system.params.contains_key("gamma") {
        return Err(UsageError(format!(
            "the coupling study sweeps the `gamma` parameter, which {} does not have; \
             use fitzhugh_nagumo",
            base_system.name
        ))
        .into());
    }
    let model_args = match &args.models {
        Some(s) => parse_model_list(s)?,
        None => default_models(args.study),
    };
    let seeds = match &args.seeds {
        Some(s) => parse_list::<u64>(s, "seed")?,
        None => profile.seeds(),
    };
    if seeds.is_empty() {
        return Err(UsageError("at least one seed is required".to_string()).into());
    }
    let n_traj = args.n_traj.unwrap_or_else(|| profile.n_traj());

    // One dataset per sweep point, generated up front and shared read-only
    // by every cell. All points reuse the same generation seed so sweeps
    // compare like against like.
    eprintln!(
        "[{}] generating {} dataset(s): {} trajectories x {} points",
        args.study.name(),
        points.len(),
        n_traj,
        args.points
    );
    let base = match args.study {
        StudyArg::Coupling => None,
        _ => Some(generate_dataset(&base_system, n_traj, args.points, base_seed)?),
    };
    let mut datasets: Vec<DatasetSplit> = Vec::with_capacity(points.len());
    for (k, p) in points.iter().enumerate() {
        let ds = match *p {
            SweepPoint::Depth(_) | SweepPoint::Phi(_) => base.clone().expect("generated"),
            SweepPoint::Noise(eps) => base
                .clone()
                .expect("generated")
                .with_corruption(eps, None, derive_seed(base_seed, "sweep", k as u64)),
            SweepPoint::SeqLen(n) => base
                .clone()
                .expect("generated")
                .with_corruption(0.0, Some(n), derive_seed(base_seed, "sweep", k as u64)),
            SweepPoint::Coupling(gamma) => {
                let sys = resolve_system(
                    &system_name,
                    &BTreeMap::from([("gamma".to_string(), gamma)]),
                )?;
                generate_dataset(&sys, n_traj, args.points, base_seed)?
            }
        };
        datasets.push(ds);
    }

    // The cross product, seeds innermost so summary groups stay contiguous.
    struct Cell {
        point_ix: usize,
        spec: ModelSpec,
        seed: u64,
    }
    let mut cells = Vec::new();
    for (k, p) in points.iter().enumerate() {
        for &(enc, dec) in &model_args {
            let (depth, phi) = match *p {
                SweepPoint::Depth(v) => (Some(v), None),
                SweepPoint::Phi(v) => (None, Some(v)),
                _ => (None, None),
            };
            if depth.is_some() || phi.is_some() {
                if enc != EncoderArg::Sig {
                    return Err(UsageError(format!(
                        "the {} study only applies to the sig encoder, got {}",
                        args.study.name(),
                        enc.name()
                    ))
                    .into());
                }
            }
            let window = (enc == EncoderArg::Sig).then_some(args.window).flatten();
            let spec = ModelSpec::new(enc, dec, depth, window, phi, None, None, false)?;
            for &seed in &seeds {
                cells.push(Cell { point_ix: k, spec: spec.clone(), seed });
            }
        }
    }

    std::fs::create_dir_all(out.join("runs"))?;
    let tc_of = |seed: u64| resolve_train_config(profile, seed, false, &args.overrides);
    let plan = PlanRecord {
        study: args.study.name(),
        system: base_system.name.clone(),
        values: points.iter().map(|p| p.label()).collect(),
        models: model_args.iter().map(|&(e, d)| format!("{}+{}", e.name(), d.name())).collect(),
        seeds: seeds.clone(),
        n_traj,
        points: args.points,
        data_seed: base_seed,
        lr: tc_of(0).lr,
        batch_size: tc_of(0).batch_size,
        epochs: tc_of(0).epochs,
        encode_fraction: tc_of(0).encode_fraction,
    };
    std::fs::write(out.join("config.json"), serde_json::to_vec_pretty(&plan)?)?;

    // One cell per worker; cells share nothing but the datasets.
    let rows: Vec<ResultsRow> = map_indexed(cells.len(), |i| {
        let cell = &cells[i];
        let ds = &datasets[cell.point_ix];
        let sweep = points[cell.point_ix];
        let seq_len = match sweep {
            SweepPoint::SeqLen(n) => Some(n),
            _ => None,
        };
        let mut row =
            ResultsRow::describe(&cell.spec, &ds.system, ds.noise_std, seq_len, cell.seed);
        let tc = tc_of(cell.seed);
        eprintln!("[{}] {} ({} epochs)", args.study.name(), row.slug(), tc.epochs);
        match run_cell(ds, &cell.spec, &tc, &out.join("runs").join(row.slug()), timing) {
            Ok((result, mean_secs)) => record_outcome(&mut row, &result, mean_secs),
            Err(e) => {
                eprintln!("warning: {} failed, recording an empty row: {e:#}", row.slug());
            }
        }
        row
    });

    write_results_csv(&out.join("results.csv"), &rows)?;
    let summary = summarize(&rows);
    std::fs::write(out.join("summary.csv"), &summary)?;
    print!("{summary}");
    println!("wrote {}", out.join("results.csv").display());
    println!("wrote {}", out.join("summary.csv").display());
    if rows.iter().all(|r| r.test_rmse.is_none()) {
        anyhow::bail!("every cell of the study failed; see the warnings above");
    }
    Ok(())
}

/// Population mean and std; a single sample has std 0 by construction.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Collapses rows over seeds. Groups keep first-appearance order; failed
/// seeds are dropped from the statistics and flagged.
pub fn summarize(rows: &[ResultsRow]) -> String {
    const CONFIG_COLS: usize = 9;
    let config_of = |row: &ResultsRow| {
        let line = row.to_line();
        line.split(',').take(CONFIG_COLS).collect::<Vec<_>>().join(",")
    };
    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, Vec<&ResultsRow>> = BTreeMap::new();
    for row in rows {
        let key = config_of(row);
        if !grouped.contains_key(&key) {
            order.push(key.clone());
        }
        grouped.entry(key).or_default().push(row);
    }
    let header: Vec<&str> = RESULTS_HEADER.split(',').take(CONFIG_COLS).collect();
    let mut out = format!(
        "{},n_seeds,mean_test_rmse,std_test_rmse,mean_val_rmse,std_val_rmse\n",
        header.join(",")
    );
    for key in order {
        let group = &grouped[&key];
        let tests: Vec<f64> = group.iter().filter_map(|r| r.test_rmse).collect();
        let vals: Vec<f64> = group.iter().filter_map(|r| r.val_rmse).collect();
        if tests.len() < group.len() {
            eprintln!(
                "warning: {} of {} seeds failed for [{key}]; statistics cover the rest",
                group.len() - tests.len(),
                group.len()
            );
        }
        if tests.len() == 1 {
            eprintln!("warning: single seed for [{key}]; std is 0 by construction");
        }
        write!(out, "{key},{}", tests.len()).expect("string writes cannot fail");
        if tests.is_empty() {
            out.push_str(",,,,\n");
            continue;
        }
        let (mt, st) = mean_std(&tests);
        write!(out, ",{mt},{st}").expect("string writes cannot fail");
        if vals.is_empty() {
            // 0-epoch runs never see the validation split.
            out.push_str(",,\n");
        } else {
            let (mv, sv) = mean_std(&vals);
            writeln!(out, ",{mv},{sv}").expect("string writes cannot fail");
        }
    }
    out
}
