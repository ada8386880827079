//! The universal trajectory container.

use serde::{Deserialize, Serialize};

/// Sampled multivariate trajectory: strictly increasing times and row-major
/// `n x d` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    times: Vec<f64>,
    values: Vec<f64>,
    dim: usize,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self, String> {
        if dim == 0 {
            return Err("dimension must be positive".to_string());
        }
        if values.len() != times.len() * dim {
            return Err(format!(
                "{} time points with dim {} need {} values, got {}",
                times.len(),
                dim,
                times.len() * dim,
                values.len()
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err("times must be strictly increasing".to_string());
        }
        Ok(TimeSeries { times, values, dim })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Sub-series at the given sorted point indices.
    pub fn select(&self, indices: &[usize]) -> TimeSeries {
        let times = indices.iter().map(|&i| self.times[i]).collect();
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.point(i));
        }
        TimeSeries { times, values, dim: self.dim }
    }

    /// Contiguous half-open range of points.
    pub fn range(&self, start: usize, end: usize) -> TimeSeries {
        TimeSeries {
            times: self.times[start..end].to_vec(),
            values: self.values[start * self.dim..end * self.dim].to_vec(),
            dim: self.dim,
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Endpoint-retaining uniform index subsample: `k` indices out of `0..n`,
/// first and last always kept.
pub fn uniform_indices(n: usize, k: usize) -> Vec<usize> {
    assert!(k >= 2 && k <= n, "need 2 <= k <= n, got k={k} n={n}");
    (0..k)
        .map(|i| ((i as f64) * ((n - 1) as f64) / ((k - 1) as f64)).round() as usize)
        .collect()
}
