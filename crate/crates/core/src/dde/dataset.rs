//! Trajectory datasets: lattice initial conditions, 80:10:10 split,
//! z-scoring from the train split only, Gaussian corruption, and a frozen
//! on-disk format (`manifest.json` + raw little-endian float blocks).

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::parallel::{map_indexed, map_indexed_serial};
use crate::rng::{derive_rng, derive_seed};
use crate::series::{uniform_indices, TimeSeries};

use super::{integrate, DdeError, DdeSystem};

/// Internal solver grid size before subsampling.
pub const SOLVER_POINTS: usize = 1000;
pub const FORMAT_VERSION: u32 = 1;

/// Row-major uniform lattice over the box `[low, high]` with the smallest
/// per-axis count k such that k^d >= n; truncated to the first n points.
pub fn lattice_ics(low: &[f64], high: &[f64], n: usize) -> Vec<Vec<f64>> {
    let d = low.len();
    assert_eq!(d, high.len());
    let mut k = 1usize;
    while k.pow(d as u32) < n {
        k += 1;
    }
    assert!(k >= 2, "lattice needs at least 2 points per axis, got n={n}");
    let mut out = Vec::with_capacity(n);
    for flat in 0..n {
        let mut rem = flat;
        let mut ic = vec![0.0; d];
        // Last axis varies fastest.
        for axis in (0..d).rev() {
            let digit = rem % k;
            rem /= k;
            // Fraction first: a huge box must not overflow mid-product.
            ic[axis] = low[axis]
                + (high[axis] - low[axis]) * (digit as f64 / (k - 1) as f64);
        }
        out.push(ic);
    }
    out
}

/// Solve one trajectory on the system's generation window at the internal
/// grid resolution. An open start integrates from the window start but
/// drops the first node, so the sampled times exclude it.
pub fn solve_trajectory(system: &DdeSystem, ic: &[f64]) -> Result<TimeSeries, DdeError> {
    let span = system.t_end - system.t_start;
    if system.open_start {
        let step = span / SOLVER_POINTS as f64;
        let full = integrate(system, ic, system.t_start, system.t_end, step)?;
        Ok(full.range(1, full.len()))
    } else {
        let step = span / (SOLVER_POINTS - 1) as f64;
        integrate(system, ic, system.t_start, system.t_end, step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

/// A generated dataset: clean trajectories in generation order, an optional
/// corrupted copy, split indices, and normalization statistics computed
/// from the clean train split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub system: DdeSystem,
    pub seed: u64,
    pub n_points: usize,
    pub trajectories: Vec<TimeSeries>,
    pub noisy: Option<Vec<TimeSeries>>,
    pub noise_std: f64,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    pub dropped_ics: Vec<Vec<f64>>,
}

impl DatasetSplit {
    pub fn indices(&self, part: Part) -> &[usize] {
        match part {
            Part::Train => &self.train_idx,
            Part::Val => &self.val_idx,
            Part::Test => &self.test_idx,
        }
    }

    pub fn train(&self) -> Vec<&TimeSeries> {
        self.train_idx.iter().map(|&i| &self.trajectories[i]).collect()
    }

    pub fn val(&self) -> Vec<&TimeSeries> {
        self.val_idx.iter().map(|&i| &self.trajectories[i]).collect()
    }

    pub fn test(&self) -> Vec<&TimeSeries> {
        self.test_idx.iter().map(|&i| &self.trajectories[i]).collect()
    }

    /// Model input for trajectory `i`: the corrupted copy when present,
    /// the clean series otherwise. Targets always come from `trajectories`.
    pub fn input(&self, i: usize) -> &TimeSeries {
        match &self.noisy {
            Some(n) => &n[i],
            None => &self.trajectories[i],
        }
    }

    /// Z-score values with the stored train statistics; times unchanged.
    pub fn normalize(&self, series: &TimeSeries) -> TimeSeries {
        let d = series.dim();
        let mut out = series.clone();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            let c = i % d;
            *v = (*v - self.norm_mean[c]) / self.norm_std[c];
        }
        out
    }

    /// Undo `normalize` on a value vector laid out row-major over a d-channel
    /// series.
    pub fn denormalize_values(&self, values: &mut [f64]) {
        let d = self.norm_mean.len();
        for (i, v) in values.iter_mut().enumerate() {
            let c = i % d;
            *v = *v * self.norm_std[c] + self.norm_mean[c];
        }
    }

    /// Attach a corrupted copy: i.i.d. Gaussian noise of std `noise_std`
    /// added to every value of every trajectory, one RNG stream per
    /// trajectory. Normalization statistics are left untouched; they
    /// describe the clean train split.
    pub fn with_noise(self, noise_std: f64, seed: u64) -> Self {
        self.with_corruption(noise_std, None, seed)
    }

    /// General form of [`with_noise`](Self::with_noise): besides the Gaussian
    /// noise, `keep_n` subsamples the encoding half of every corrupted copy
    /// down to `keep_n` points (see [`corrupt`]). Shortened copies only live
    /// in memory; the on-disk format stores equal-length trajectories.
    pub fn with_corruption(mut self, noise_std: f64, keep_n: Option<usize>, seed: u64) -> Self {
        assert!(noise_std >= 0.0, "noise std must be nonnegative");
        let noisy = map_indexed(self.trajectories.len(), |i| {
            corrupt(
                &self.trajectories[i],
                noise_std,
                keep_n,
                derive_seed(seed, "traj-noise", i as u64),
            )
        });
        self.noisy = Some(noisy);
        self.noise_std = noise_std;
        self
    }
}

/// Gaussian corruption and optional shortening of the encoding half.
/// Noise of std `noise_std` is added i.i.d. to every value; if `keep_n`
/// is given, the first ceil(n/2) points (the encoding half) are uniformly
/// subsampled to `keep_n` with endpoints retained, and the prediction half
/// is kept whole.
pub fn corrupt(
    series: &TimeSeries,
    noise_std: f64,
    keep_n: Option<usize>,
    seed: u64,
) -> TimeSeries {
    assert!(noise_std >= 0.0, "noise std must be nonnegative");
    let mut out = series.clone();
    if noise_std > 0.0 {
        let mut rng = derive_rng(seed, "noise", 0);
        let normal = Normal::new(0.0, noise_std).unwrap();
        for v in out.values_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    if let Some(k) = keep_n {
        let half = series.len().div_ceil(2);
        assert!(
            k >= 2 && k <= half,
            "keep_n must lie in [2, {half}] for a {}-point series, got {k}",
            series.len()
        );
        let mut idx = uniform_indices(half, k);
        idx.extend(half..series.len());
        out = out.select(&idx);
    }
    out
}

pub fn generate_dataset(
    system: &DdeSystem,
    n_traj: usize,
    points: usize,
    seed: u64,
) -> Result<DatasetSplit, DdeError> {
    generate_impl(system, n_traj, points, seed, false)
}

/// Sequential twin of `generate_dataset`; same output bit for bit.
pub fn generate_dataset_serial(
    system: &DdeSystem,
    n_traj: usize,
    points: usize,
    seed: u64,
) -> Result<DatasetSplit, DdeError> {
    generate_impl(system, n_traj, points, seed, true)
}

fn generate_impl(
    system: &DdeSystem,
    n_traj: usize,
    points: usize,
    seed: u64,
    serial: bool,
) -> Result<DatasetSplit, DdeError> {
    if n_traj < 10 {
        return Err(DdeError::Dataset(format!(
            "need at least 10 trajectories, got {n_traj}"
        )));
    }
    if points < 2 || points > SOLVER_POINTS {
        return Err(DdeError::Dataset(format!(
            "points must lie in [2, {SOLVER_POINTS}], got {points}"
        )));
    }
    let ics = lattice_ics(&system.ic_low, &system.ic_high, n_traj);
    let subsample = uniform_indices(SOLVER_POINTS, points);
    let solve = |i: usize| -> Result<TimeSeries, DdeError> {
        solve_trajectory(system, &ics[i]).map(|t| t.select(&subsample))
    };
    let solved = if serial {
        map_indexed_serial(ics.len(), solve)
    } else {
        map_indexed(ics.len(), solve)
    };

    let mut trajectories = Vec::with_capacity(n_traj);
    let mut dropped_ics = Vec::new();
    for (ic, res) in ics.iter().zip(solved) {
        match res {
            Ok(t) => trajectories.push(t),
            Err(DdeError::BlowUp { .. }) => dropped_ics.push(ic.clone()),
            Err(e) => return Err(e),
        }
    }
    if dropped_ics.len() * 100 > n_traj {
        return Err(DdeError::Dataset(format!(
            "{} of {} trajectories of {} blew up; first failing ICs: {:?}",
            dropped_ics.len(),
            n_traj,
            system.name,
            &dropped_ics[..dropped_ics.len().min(5)]
        )));
    }

    let kept = trajectories.len();
    let mut order: Vec<usize> = (0..kept).collect();
    order.shuffle(&mut derive_rng(seed, "split", 0));
    let n_train = (0.8 * kept as f64).round() as usize;
    let n_val = (0.1 * kept as f64).round() as usize;
    let train_idx = order[..n_train].to_vec();
    let val_idx = order[n_train..n_train + n_val].to_vec();
    let test_idx = order[n_train + n_val..].to_vec();

    let (norm_mean, norm_std) =
        channel_stats(&train_idx, &trajectories, system.dim);

    Ok(DatasetSplit {
        system: system.clone(),
        seed,
        n_points: points,
        trajectories,
        noisy: None,
        noise_std: 0.0,
        train_idx,
        val_idx,
        test_idx,
        norm_mean,
        norm_std,
        dropped_ics,
    })
}

/// Per-channel mean and population std over every point of the listed
/// trajectories. Two-pass for accuracy; std floored at 1e-12.
fn channel_stats(
    idx: &[usize],
    trajectories: &[TimeSeries],
    dim: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; dim];
    let mut count = 0usize;
    for &i in idx {
        for p in 0..trajectories[i].len() {
            let row = trajectories[i].point(p);
            for c in 0..dim {
                mean[c] += row[c];
            }
        }
        count += trajectories[i].len();
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0; dim];
    for &i in idx {
        for p in 0..trajectories[i].len() {
            let row = trajectories[i].point(p);
            for c in 0..dim {
                let d = row[c] - mean[c];
                var[c] += d * d;
            }
        }
    }
    let std = var
        .iter()
        .map(|v| (v / count as f64).sqrt().max(1e-12))
        .collect();
    (mean, std)
}

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error("dataset directory already holds a manifest; refusing to overwrite")]
    AlreadyExists,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported dataset format version {0}")]
    Version(u32),
    #[error("content hash mismatch for {file}; dataset directory was modified after creation")]
    HashMismatch { file: String },
    #[error("malformed dataset: {0}")]
    Malformed(String),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub system: DdeSystem,
    pub n_traj: usize,
    pub n_points: usize,
    pub seed: u64,
    pub noise_std: f64,
    pub solver_points: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    pub dropped_ics: Vec<Vec<f64>>,
    pub data_sha256: String,
    pub data_noisy_sha256: Option<String>,
}

fn encode_series_block(trajectories: &[TimeSeries]) -> Vec<u8> {
    let mut bytes = Vec::new();
    for t in trajectories {
        for &v in t.times() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for &v in t.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

fn decode_series_block(
    bytes: &[u8],
    n_traj: usize,
    n_points: usize,
    dim: usize,
) -> Result<Vec<TimeSeries>, DatasetIoError> {
    let per_traj = n_points * (1 + dim) * 8;
    if bytes.len() != n_traj * per_traj {
        return Err(DatasetIoError::Malformed(format!(
            "expected {} bytes for {} trajectories, found {}",
            n_traj * per_traj,
            n_traj,
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        let block = &bytes[i * per_traj..(i + 1) * per_traj];
        let mut floats = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let times: Vec<f64> = floats.by_ref().take(n_points).collect();
        let values: Vec<f64> = floats.collect();
        out.push(
            TimeSeries::new(times, values, dim).map_err(DatasetIoError::Malformed)?,
        );
    }
    Ok(out)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write `manifest.json`, `data.bin`, and (when a corrupted copy exists)
/// `data_noisy.bin` into `dir`. Refuses to touch a directory that already
/// holds a manifest: dataset directories are immutable after creation.
pub fn save_dataset(dir: &Path, ds: &DatasetSplit) -> Result<(), DatasetIoError> {
    fs::create_dir_all(dir)?;
    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() {
        return Err(DatasetIoError::AlreadyExists);
    }
    if let Some(noisy) = &ds.noisy {
        if noisy.iter().any(|t| t.len() != ds.n_points) {
            return Err(DatasetIoError::Malformed(
                "corrupted copies were subsampled; the on-disk format only holds \
                 equal-length trajectories"
                    .to_string(),
            ));
        }
    }
    let data = encode_series_block(&ds.trajectories);
    let data_sha256 = sha256_hex(&data);
    fs::write(dir.join("data.bin"), &data)?;
    let data_noisy_sha256 = match &ds.noisy {
        Some(noisy) => {
            let bytes = encode_series_block(noisy);
            let h = sha256_hex(&bytes);
            fs::write(dir.join("data_noisy.bin"), &bytes)?;
            Some(h)
        }
        None => None,
    };
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        system: ds.system.clone(),
        n_traj: ds.trajectories.len(),
        n_points: ds.n_points,
        seed: ds.seed,
        noise_std: ds.noise_std,
        solver_points: SOLVER_POINTS,
        train: ds.train_idx.clone(),
        val: ds.val_idx.clone(),
        test: ds.test_idx.clone(),
        norm_mean: ds.norm_mean.clone(),
        norm_std: ds.norm_std.clone(),
        dropped_ics: ds.dropped_ics.clone(),
        data_sha256,
        data_noisy_sha256,
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Read a dataset directory back, verifying format version and content
/// hashes.
pub fn load_dataset(dir: &Path) -> Result<DatasetSplit, DatasetIoError> {
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(DatasetIoError::Version(manifest.format_version));
    }
    let data = fs::read(dir.join("data.bin"))?;
    if sha256_hex(&data) != manifest.data_sha256 {
        return Err(DatasetIoError::HashMismatch { file: "data.bin".to_string() });
    }
    let trajectories =
        decode_series_block(&data, manifest.n_traj, manifest.n_points, manifest.system.dim)?;
    let noisy = match &manifest.data_noisy_sha256 {
        Some(expected) => {
            let bytes = fs::read(dir.join("data_noisy.bin"))?;
            if &sha256_hex(&bytes) != expected {
                return Err(DatasetIoError::HashMismatch {
                    file: "data_noisy.bin".to_string(),
                });
            }
            Some(decode_series_block(
                &bytes,
                manifest.n_traj,
                manifest.n_points,
                manifest.system.dim,
            )?)
        }
        None => None,
    };
    Ok(DatasetSplit {
        system: manifest.system,
        seed: manifest.seed,
        n_points: manifest.n_points,
        trajectories,
        noisy,
        noise_std: manifest.noise_std,
        train_idx: manifest.train,
        val_idx: manifest.val,
        test_idx: manifest.test,
        norm_mean: manifest.norm_mean,
        norm_std: manifest.norm_std,
        dropped_ics: manifest.dropped_ics,
    })
}
