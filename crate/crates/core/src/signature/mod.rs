//! Truncated path signatures of piecewise linear paths.
//!
//! For a path X: [a,b] -> R^e the depth-N signature collects the iterated
//! integrals
//!
//! ```text
//! S^(i1..ik) = integral over a < t1 < ... < tk < b of
//!              dX^(i1)(t1) ... dX^(ik)(tk),      k = 0..N,
//! ```
//!
//! with S^() = 1 at level 0. Level k holds e^k coefficients; the flattened
//! layout is levels ascending, multi-indices lexicographic within a level,
//! which is exactly what repeated row-major outer products produce.
//!
//! Two structural facts drive the implementation. A single linear segment
//! with increment v has signature exp(v): level k equals v tensor-power k
//! divided by k!. And signatures multiply under concatenation (Chen): level
//! k of the product is the sum over i+j=k of level_i x level_j. The
//! signature of a polyline is therefore a left fold of `chen_concat` over
//! `segment_signature` of its increments.
//!
//! Everything runs through the autodiff tape, so the coefficients are
//! differentiable with respect to every path point. Reparameterisation
//! invariance comes for free: inserting collinear points changes the fold
//! but not the product.

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};

#[derive(Debug, Error)]
pub enum SignatureError {
    #[error("truncation depth must be at least 1")]
    DepthZero,
    #[error("a path needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("channel counts disagree: {0} vs {1}")]
    ChannelMismatch(usize, usize),
    #[error("depths disagree: {0} vs {1}")]
    DepthMismatch(usize, usize),
    #[error("point {index} has {got} channels, expected {want}")]
    RaggedPoint { index: usize, got: usize, want: usize },
    #[error("paths need at least 1 channel")]
    NoChannels,
    #[error("times length {0} does not match path length {1}")]
    TimesLength(usize, usize),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Polyline in R^e stored as per-point rank-1 tensors. Points may be tape
/// handles (the lifted paths inside encoders are) or plain values.
#[derive(Debug, Clone)]
pub struct PiecewiseLinearPath {
    points: Vec<Tensor>,
    channels: usize,
}

impl PiecewiseLinearPath {
    pub fn from_points(points: Vec<Tensor>) -> Result<Self, SignatureError> {
        let channels = match points.first() {
            Some(p) => p.len(),
            None => return Err(SignatureError::TooShort(0)),
        };
        if channels == 0 {
            return Err(SignatureError::NoChannels);
        }
        for (index, p) in points.iter().enumerate() {
            if p.len() != channels {
                return Err(SignatureError::RaggedPoint { index, got: p.len(), want: channels });
            }
        }
        Ok(PiecewiseLinearPath { points, channels })
    }

    /// Plain path from row-major `n x e` values.
    pub fn from_rows(n: usize, channels: usize, values: &[f64]) -> Result<Self, SignatureError> {
        assert_eq!(values.len(), n * channels, "row data does not fill n x e");
        let points = (0..n)
            .map(|i| Tensor::vector(values[i * channels..(i + 1) * channels].to_vec()))
            .collect();
        Self::from_points(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn points(&self) -> &[Tensor] {
        &self.points
    }
}

/// Depth-N signature: `levels[k]` is the flattened level-k coefficient
/// block of length e^k. Level 0 is stored explicitly and always equals 1.
#[derive(Debug, Clone)]
pub struct TruncatedSignature {
    channels: usize,
    depth: usize,
    levels: Vec<Tensor>,
}

impl TruncatedSignature {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn level(&self, k: usize) -> &Tensor {
        &self.levels[k]
    }

    /// All coefficients in flattened order; length is
    /// `sig_dimension(channels, depth)`.
    pub fn flatten(&self, tape: &Tape) -> Result<Tensor, SignatureError> {
        let refs: Vec<&Tensor> = self.levels.iter().collect();
        Ok(tape.concat(&refs)?)
    }
}

/// Number of coefficients in a flattened depth-N signature over e channels:
/// sum of e^k for k = 0..N. For e = 1 this degenerates to N + 1.
pub fn sig_dimension(channels: usize, depth: usize) -> usize {
    let mut total = 0usize;
    let mut pow = 1usize;
    for _ in 0..=depth {
        total = total.checked_add(pow).expect("signature dimension overflows usize");
        pow = pow.checked_mul(channels).expect("signature dimension overflows usize");
    }
    total
}

/// Signature of one linear segment with increment `v`: level k is the k-th
/// tensor power of `v` divided by k!.
pub fn segment_signature(
    tape: &Tape,
    increment: &Tensor,
    depth: usize,
) -> Result<TruncatedSignature, SignatureError> {
    if depth == 0 {
        return Err(SignatureError::DepthZero);
    }
    if increment.rank() != 1 || increment.is_empty() {
        return Err(SignatureError::NoChannels);
    }
    let e = increment.len();
    let mut levels = Vec::with_capacity(depth + 1);
    levels.push(Tensor::vector(vec![1.0]));
    levels.push(increment.clone());
    let mut pow = e;
    for k in 2..=depth {
        pow *= e;
        let raw = tape.outer(&levels[k - 1], increment)?;
        let flat = tape.reshape(&raw, vec![pow])?;
        levels.push(tape.scale(&flat, 1.0 / k as f64)?);
    }
    Ok(TruncatedSignature { channels: e, depth, levels })
}

/// Chen product: the signature of the concatenated path. Level k of the
/// result is the convolution of levels over i + j = k; the level-0 factors
/// are identically 1 so those two terms add in directly.
pub fn chen_concat(
    tape: &Tape,
    a: &TruncatedSignature,
    b: &TruncatedSignature,
) -> Result<TruncatedSignature, SignatureError> {
    if a.channels != b.channels {
        return Err(SignatureError::ChannelMismatch(a.channels, b.channels));
    }
    if a.depth != b.depth {
        return Err(SignatureError::DepthMismatch(a.depth, b.depth));
    }
    let e = a.channels;
    let mut levels = Vec::with_capacity(a.depth + 1);
    levels.push(Tensor::vector(vec![1.0]));
    let mut pow = 1usize;
    for k in 1..=a.depth {
        pow *= e;
        let mut acc = tape.add(&a.levels[k], &b.levels[k])?;
        for i in 1..k {
            let cross = tape.outer(&a.levels[i], &b.levels[k - i])?;
            acc = tape.add(&acc, &tape.reshape(&cross, vec![pow])?)?;
        }
        levels.push(acc);
    }
    Ok(TruncatedSignature { channels: e, depth: a.depth, levels })
}

/// Depth-N signature of a polyline: fold of `chen_concat` over the segment
/// signatures of consecutive increments.
pub fn signature(
    tape: &Tape,
    path: &PiecewiseLinearPath,
    depth: usize,
) -> Result<TruncatedSignature, SignatureError> {
    if depth == 0 {
        return Err(SignatureError::DepthZero);
    }
    if path.len() < 2 {
        return Err(SignatureError::TooShort(path.len()));
    }
    let inc = tape.sub(&path.points[1], &path.points[0])?;
    let mut sig = segment_signature(tape, &inc, depth)?;
    for i in 1..path.len() - 1 {
        let inc = tape.sub(&path.points[i + 1], &path.points[i])?;
        let seg = segment_signature(tape, &inc, depth)?;
        sig = chen_concat(tape, &sig, &seg)?;
    }
    Ok(sig)
}

/// Prepends a time channel: point i becomes (times[i], x_i). The augmented
/// path is strictly monotone in channel 0, which restores uniqueness for
/// paths the raw signature cannot tell apart (for example a 1-D excursion
/// that returns to its start versus never moving).
pub fn time_augment(
    tape: &Tape,
    path: &PiecewiseLinearPath,
    times: &[f64],
) -> Result<PiecewiseLinearPath, SignatureError> {
    if times.len() != path.len() {
        return Err(SignatureError::TimesLength(times.len(), path.len()));
    }
    let mut points = Vec::with_capacity(path.len());
    for (p, &t) in path.points.iter().zip(times) {
        let tv = Tensor::vector(vec![t]);
        points.push(tape.concat(&[&tv, p])?);
    }
    PiecewiseLinearPath::from_points(points)
}
