//! Figure emission: log-scale training-loss curves with min-max seed bands,
//! and per-channel trajectory overlays of ground truth against model
//! predictions on the forecast half.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sigdyn::autodiff::Tape;
use sigdyn::dde::dataset::load_dataset;
use sigdyn::models::load_checkpoint;
use sigdyn::training::{model_inputs, split_trajectory};

use crate::experiment::PartArg;
use crate::svg::{draw_legend, linear_ticks, log_ticks, Canvas, Frame, PALETTE};
use crate::UsageError;

/// One `--group label=run.csv,run.csv,...` argument.
pub struct LossGroup {
    pub label: String,
    pub paths: Vec<PathBuf>,
}

pub fn parse_group(s: &str) -> Result<LossGroup, UsageError> {
    let (label, rest) = s.split_once('=').ok_or_else(|| {
        UsageError(format!("bad --group `{s}`; expected label=run.csv[,run.csv...]"))
    })?;
    if label.is_empty() || rest.is_empty() {
        return Err(UsageError(format!("bad --group `{s}`; label and paths must be nonempty")));
    }
    Ok(LossGroup {
        label: label.to_string(),
        paths: rest.split(',').map(PathBuf::from).collect(),
    })
}

/// train_loss column of one run CSV.
fn read_loss_curve(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let col = header
        .split(',')
        .position(|c| c == "train_loss")
        .with_context(|| format!("{} has no train_loss column", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let cell = line
            .split(',')
            .nth(col)
            .with_context(|| format!("{} row {} is short", path.display(), i + 2))?;
        out.push(
            cell.parse::<f64>()
                .with_context(|| format!("{} row {}: bad loss `{cell}`", path.display(), i + 2))?,
        );
    }
    Ok(out)
}

struct GroupCurve {
    label: String,
    mean: Vec<f64>,
    min: Vec<f64>,
    max: Vec<f64>,
}

pub fn cmd_plot_loss(groups: &[LossGroup], title: Option<&str>, out: &Path) -> Result<()> {
    if groups.is_empty() {
        return Err(UsageError("at least one --group is required".to_string()).into());
    }
    let mut curves: Vec<GroupCurve> = Vec::new();
    let mut absent: Vec<String> = Vec::new();
    for group in groups {
        let mut runs: Vec<Vec<f64>> = Vec::new();
        for path in &group.paths {
            match read_loss_curve(path) {
                Ok(c) if c.is_empty() => {
                    eprintln!("warning: {} holds no epochs; skipping it", path.display());
                    absent.push(path.display().to_string());
                }
                Ok(c) => runs.push(c),
                Err(e) => {
                    eprintln!("warning: skipping {}: {e:#}", path.display());
                    absent.push(path.display().to_string());
                }
            }
        }
        if runs.is_empty() {
            eprintln!("warning: group `{}` has no readable runs; skipped", group.label);
            continue;
        }
        let len = runs.iter().map(Vec::len).min().expect("nonempty");
        if runs.iter().any(|r| r.len() != len) {
            eprintln!(
                "warning: group `{}` mixes run lengths; plotting the common {len} epochs",
                group.label
            );
        }
        let mut mean = vec![0.0; len];
        let mut min = vec![f64::INFINITY; len];
        let mut max = vec![f64::NEG_INFINITY; len];
        for run in &runs {
            for e in 0..len {
                mean[e] += run[e] / runs.len() as f64;
                min[e] = min[e].min(run[e]);
                max[e] = max[e].max(run[e]);
            }
        }
        curves.push(GroupCurve { label: group.label.clone(), mean, min, max });
    }
    if curves.is_empty() {
        let listed =
            if absent.is_empty() { "(none readable)".to_string() } else { absent.join(", ") };
        anyhow::bail!("no group could be plotted; missing or unusable inputs: {listed}");
    }

    // Log-scale display; nonpositive losses are clamped to a floor one
    // decade under the smallest positive value.
    let smallest = curves
        .iter()
        .flat_map(|c| c.min.iter())
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let floor = if smallest.is_finite() { smallest / 10.0 } else { 1e-12 };
    let log = |v: f64| if v > 0.0 { v.log10() } else { floor.log10() };

    let epochs = curves.iter().map(|c| c.mean.len()).max().expect("nonempty");
    let mut ylo = f64::INFINITY;
    let mut yhi = f64::NEG_INFINITY;
    for c in &curves {
        for e in 0..c.mean.len() {
            ylo = ylo.min(log(c.min[e]));
            yhi = yhi.max(log(c.max[e]));
        }
    }
    if ylo == yhi {
        ylo -= 0.5;
        yhi += 0.5;
    }
    let pad = (yhi - ylo) * 0.06;

    let (w, h) = (640.0, 400.0);
    let mut canvas = Canvas::new(w, h);
    let frame = Frame {
        x0: 1.0,
        x1: epochs as f64,
        y0: ylo - pad,
        y1: yhi + pad,
        px: 62.0,
        py: 28.0,
        pw: w - 62.0 - 16.0,
        ph: h - 28.0 - 48.0,
    };

    let mut table = String::from("data:loss\ngroup,epoch,mean_loss,min_loss,max_loss\n");
    for c in &curves {
        for e in 0..c.mean.len() {
            table.push_str(&format!(
                "{},{},{},{},{}\n",
                c.label,
                e + 1,
                c.mean[e],
                c.min[e],
                c.max[e]
            ));
        }
    }
    canvas.comment(table.trim_end());

    frame.draw_axes(
        &mut canvas,
        &linear_ticks(1.0, epochs as f64, 6),
        &log_ticks(frame.y0, frame.y1),
        "epoch",
        "training loss",
    );
    canvas.text(
        frame.px + frame.pw / 2.0,
        16.0,
        "middle",
        12.0,
        title.unwrap_or("Training loss (log) vs. epochs"),
    );

    let mut legend = Vec::new();
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let xs: Vec<f64> = (0..c.mean.len()).map(|e| frame.x((e + 1) as f64)).collect();
        let mut band: Vec<(f64, f64)> =
            xs.iter().zip(&c.max).map(|(&x, &v)| (x, frame.y(log(v)))).collect();
        band.extend(xs.iter().zip(&c.min).rev().map(|(&x, &v)| (x, frame.y(log(v)))));
        canvas.polygon(&band, &format!("fill:{color};fill-opacity:0.16;stroke:none"));
        let mean: Vec<(f64, f64)> =
            xs.iter().zip(&c.mean).map(|(&x, &v)| (x, frame.y(log(v)))).collect();
        canvas.polyline(&mean, &format!("stroke:{color};stroke-width:1.8"));
        legend.push((c.label.clone(), color));
    }
    draw_legend(&mut canvas, &frame, &legend);

    std::fs::create_dir_all(out)?;
    let path = out.join("loss.svg");
    std::fs::write(&path, canvas.finish())?;
    println!("wrote {}", path.display());
    Ok(())
}

pub struct TrajectoryArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub part: PartArg,
    pub index: usize,
    pub encode_fraction: f64,
}

pub fn cmd_plot_trajectory(args: &TrajectoryArgs, out: &Path) -> Result<()> {
    let (model, _meta) = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", args.checkpoint.display()))?;
    let ds = load_dataset(&args.data)
        .with_context(|| format!("cannot load dataset {}", args.data.display()))?;
    let indices = ds.indices(args.part.part());
    if args.index >= indices.len() {
        return Err(UsageError(format!(
            "--index {} out of range; the {} split holds {} trajectories",
            args.index,
            args.part.name(),
            indices.len()
        ))
        .into());
    }
    let traj = indices[args.index];
    if model.data_dim != ds.norm_mean.len() {
        anyhow::bail!(
            "checkpoint is {}-dimensional, dataset is {}-dimensional",
            model.data_dim,
            ds.norm_mean.len()
        );
    }

    // Clean trajectory on its original clock for the truth curves and the
    // absolute prediction times; normalized views for the model.
    let clean = &ds.trajectories[traj];
    let split = split_trajectory(clean, args.encode_fraction)?;
    let t_split = *split.encode.times().last().expect("nonempty");
    let inputs = model_inputs(&ds, traj, args.encode_fraction)?;
    let tape = Tape::new();
    let fwd = model.forward(&tape, &inputs.encoder_input, &inputs.query_times, None)?;
    let mut pred: Vec<f64> = Vec::with_capacity(inputs.target.len());
    for p in &fwd.preds {
        pred.extend_from_slice(p.data());
    }
    ds.denormalize_values(&mut pred);
    let d = ds.norm_mean.len();
    let pred_times = split.predict.times();

    let (w, panel_h, bottom) = (640.0, 150.0, 40.0);
    let h = 24.0 + panel_h * d as f64 + bottom;
    let mut canvas = Canvas::new(w, h);
    canvas.comment(&format!(
        "data:trajectory\nsystem={} part={} index={} trajectory={}",
        ds.system.name,
        args.part.name(),
        args.index,
        traj
    ));

    let mut truth_table = String::from("data:truth\nt");
    let mut pred_table = String::from("data:prediction\nt");
    for c in 0..d {
        truth_table.push_str(&format!(",x{}", c + 1));
        pred_table.push_str(&format!(",x{}", c + 1));
    }
    truth_table.push('\n');
    pred_table.push('\n');
    for (i, &t) in clean.times().iter().enumerate() {
        truth_table.push_str(&fmt_full(t));
        for c in 0..d {
            truth_table.push(',');
            truth_table.push_str(&fmt_full(clean.point(i)[c]));
        }
        truth_table.push('\n');
    }
    for (i, &t) in pred_times.iter().enumerate() {
        pred_table.push_str(&fmt_full(t));
        for c in 0..d {
            pred_table.push(',');
            pred_table.push_str(&fmt_full(pred[i * d + c]));
        }
        pred_table.push('\n');
    }
    canvas.comment(truth_table.trim_end());
    canvas.comment(pred_table.trim_end());

    let (t0, t1) = (clean.times()[0], *clean.times().last().expect("nonempty"));
    for c in 0..d {
        let truth: Vec<f64> = (0..clean.len()).map(|i| clean.point(i)[c]).collect();
        let pred_c: Vec<f64> = (0..pred_times.len()).map(|i| pred[i * d + c]).collect();
        let lo = truth.iter().chain(&pred_c).copied().fold(f64::INFINITY, f64::min);
        let hi = truth.iter().chain(&pred_c).copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = ((hi - lo) * 0.08).max(1e-9);
        let frame = Frame {
            x0: t0,
            x1: t1,
            y0: lo - pad,
            y1: hi + pad,
            px: 62.0,
            py: 24.0 + panel_h * c as f64,
            pw: w - 62.0 - 16.0,
            ph: panel_h - 26.0,
        };
        let xticks = if c == d - 1 { linear_ticks(t0, t1, 7) } else { Vec::new() };
        frame.draw_axes(
            &mut canvas,
            &xticks,
            &linear_ticks(frame.y0, frame.y1, 4),
            if c == d - 1 { "t" } else { "" },
            &format!("x{}", c + 1),
        );
        canvas.line(
            frame.x(t_split),
            frame.py,
            frame.x(t_split),
            frame.py + frame.ph,
            "stroke:#888888;stroke-width:1;stroke-dasharray:4 3",
        );
        let truth_pts: Vec<(f64, f64)> = clean
            .times()
            .iter()
            .zip(&truth)
            .map(|(&t, &v)| (frame.x(t), frame.y(v)))
            .collect();
        canvas.polyline(&truth_pts, &format!("stroke:{};stroke-width:1.6", PALETTE[0]));
        let pred_pts: Vec<(f64, f64)> = pred_times
            .iter()
            .zip(&pred_c)
            .map(|(&t, &v)| (frame.x(t), frame.y(v)))
            .collect();
        canvas.polyline(
            &pred_pts,
            &format!("stroke:{};stroke-width:1.8;stroke-dasharray:6 3", PALETTE[1]),
        );
        if c == 0 {
            draw_legend(
                &mut canvas,
                &frame,
                &[("truth".to_string(), PALETTE[0]), ("prediction".to_string(), PALETTE[1])],
            );
        }
    }
    canvas.text(
        w / 2.0,
        14.0,
        "middle",
        12.0,
        &format!("{} {} trajectory {}", ds.system.name, args.part.name(), args.index),
    );

    std::fs::create_dir_all(out)?;
    let path = out.join("trajectory.svg");
    std::fs::write(&path, canvas.finish())?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Full-precision cell for the embedded tables: the shortest decimal that
/// round-trips the exact f64, so "overlays exactly" is checkable by string
/// comparison.
fn fmt_full(v: f64) -> String {
    format!("{v}")
}
