//! Data series, z-normalization and (early-abandoning) squared Euclidean distance.
//!
//! Distances are kept squared everywhere inside the engine; callers take the
//! square root only when reporting.

use std::ops::Deref;

use crate::error::{Error, Result};

/// Population standard deviations below this are treated as a constant series.
pub const CONSTANT_SD: f64 = 1e-8;

const LANES: usize = 8;
/// Points accumulated between two abandon checks.
const CHECK_EVERY: usize = 4 * LANES;

/// An owned, fixed-length data series of single-precision points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series(Vec<f32>);

impl Series {
    pub fn new(points: Vec<f32>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Contract("series must not be empty".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::Contract(format!("non-finite value at point {i}")));
        }
        Ok(Series(points))
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl Deref for Series {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl AsRef<[f32]> for Series {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// Returns the series shifted to mean 0 and scaled to population sd 1.
///
/// A constant series (sd below [`CONSTANT_SD`]) maps to all zeros.
pub fn z_normalize(points: &[f32]) -> Vec<f32> {
    let mut out = points.to_vec();
    z_normalize_in_place(&mut out);
    out
}

pub fn z_normalize_in_place(points: &mut [f32]) {
    if points.is_empty() {
        return;
    }
    let n = points.len() as f64;
    let mean = points.iter().map(|&p| p as f64).sum::<f64>() / n;
    let var = points
        .iter()
        .map(|&p| {
            let d = p as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let sd = var.sqrt();
    if sd < CONSTANT_SD {
        points.iter_mut().for_each(|p| *p = 0.0);
        return;
    }
    for p in points.iter_mut() {
        *p = ((*p as f64 - mean) / sd) as f32;
    }
}

/// Squared Euclidean distance, accumulated in single precision.
pub fn euclidean_sq(a: &[f32], b: &[f32]) -> Result<f32> {
    check_lengths(a, b)?;
    Ok(sq_dist_bounded(a, b, f32::INFINITY).unwrap_or(f32::INFINITY))
}

/// Squared Euclidean distance that gives up once the running sum reaches `bound`.
///
/// Returns `Ok(None)` when abandoned. A pair whose (computed) distance is
/// strictly below `bound` is never abandoned, and a non-abandoned result is
/// bit-identical to [`euclidean_sq`].
pub fn euclidean_sq_early_abandon(a: &[f32], b: &[f32], bound: f32) -> Result<Option<f32>> {
    check_lengths(a, b)?;
    if !(bound >= 0.0) {
        return Err(Error::Contract(format!("abandon bound must be >= 0, got {bound}")));
    }
    Ok(sq_dist_bounded(a, b, bound))
}

fn check_lengths(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "series length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Unchecked kernel shared by both distance entry points. Lengths must match.
#[inline]
pub(crate) fn sq_dist_bounded(a: &[f32], b: &[f32], bound: f32) -> Option<f32> {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; LANES];
    let blocks = a.len() / CHECK_EVERY;
    for blk in 0..blocks {
        let base = blk * CHECK_EVERY;
        let xa = &a[base..base + CHECK_EVERY];
        let xb = &b[base..base + CHECK_EVERY];
        for (ca, cb) in xa.chunks_exact(LANES).zip(xb.chunks_exact(LANES)) {
            for l in 0..LANES {
                let d = ca[l] - cb[l];
                acc[l] += d * d;
            }
        }
        if reduce(&acc) >= bound {
            return None;
        }
    }
    let rest = blocks * CHECK_EVERY;
    let mut tail = 0f32;
    for (x, y) in a[rest..].iter().zip(&b[rest..]) {
        let d = x - y;
        tail += d * d;
    }
    let total = reduce(&acc) + tail;
    if total >= bound {
        None
    } else {
        Some(total)
    }
}

#[inline]
fn reduce(acc: &[f32; LANES]) -> f32 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}
