//! Series summarizations (PAA, iSAX, EAPCA segment statistics) and the two
//! lower-bounding distances used for pruning.
//!
//! Both lower bounds are returned in squared space as `f64` so that they can
//! be compared directly against squared Euclidean distances.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::tree::{Segmentation, Synopsis};

/// Default iSAX word length.
pub const DEFAULT_SEGMENTS: usize = 16;
/// Default iSAX alphabet (one byte per symbol).
pub const DEFAULT_ALPHABET: usize = 256;

/// Piecewise aggregate approximation: the mean of each of `l` equal segments.
pub fn paa(series: &[f32], segments: usize) -> Result<Vec<f32>> {
    let n = series.len();
    if segments == 0 || n == 0 || !n.is_multiple_of(segments) {
        return Err(Error::Config(format!(
            "series length {n} is not divisible into {segments} PAA segments"
        )));
    }
    let w = n / segments;
    Ok(series
        .chunks_exact(w)
        .map(|c| (c.iter().map(|&x| x as f64).sum::<f64>() / w as f64) as f32)
        .collect())
}

/// Standard-normal quantiles splitting the real line into `alphabet` equiprobable cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Breakpoints {
    cuts: Vec<f64>,
}

impl Breakpoints {
    pub fn normal(alphabet: usize) -> Result<Self> {
        if !(2..=256).contains(&alphabet) || !alphabet.is_power_of_two() {
            return Err(Error::Config(format!(
                "alphabet size must be a power of two in 2..=256, got {alphabet}"
            )));
        }
        let normal = Normal::standard();
        let cuts = (1..alphabet)
            .map(|i| {
                let q = normal.inverse_cdf(i as f64 / alphabet as f64);
                // The median is exactly zero; the library returns a tiny residue.
                if 2 * i == alphabet {
                    0.0
                } else {
                    q
                }
            })
            .collect();
        Ok(Breakpoints { cuts })
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn alphabet(&self) -> usize {
        self.cuts.len() + 1
    }

    /// Symbol for one PAA value; a value equal to a cut maps to the upper cell.
    pub fn symbol(&self, value: f32) -> u8 {
        let v = value as f64;
        self.cuts.partition_point(|&c| c <= v) as u8
    }

    /// Half-open cell `[lower, upper)` of a symbol, unbounded at the extremes.
    pub fn cell(&self, symbol: u8) -> (f64, f64) {
        let s = symbol as usize;
        let lower = if s == 0 { f64::NEG_INFINITY } else { self.cuts[s - 1] };
        let upper = self.cuts.get(s).copied().unwrap_or(f64::INFINITY);
        (lower, upper)
    }
}

/// Maps a PAA vector to its iSAX word.
pub fn isax_from_paa(paa: &[f32], bp: &Breakpoints) -> Vec<u8> {
    paa.iter().map(|&v| bp.symbol(v)).collect()
}

/// iSAX word of a raw series.
pub fn isax(series: &[f32], segments: usize, bp: &Breakpoints) -> Result<Vec<u8>> {
    Ok(isax_from_paa(&paa(series, segments)?, bp))
}

/// Squared MINDIST between a query PAA and an iSAX word.
pub fn lb_sax(query_paa: &[f32], word: &[u8], bp: &Breakpoints, n: usize) -> Result<f64> {
    if query_paa.len() != word.len() || word.is_empty() {
        return Err(Error::Contract(format!(
            "PAA length {} does not match word length {}",
            query_paa.len(),
            word.len()
        )));
    }
    let sum: f64 = query_paa
        .iter()
        .zip(word)
        .map(|(&q, &s)| {
            let g = interval_gap(q as f64, bp.cell(s));
            g * g
        })
        .sum();
    Ok(n as f64 / word.len() as f64 * sum)
}

/// Per-query lookup table turning LB_SAX into `l` table reads.
#[derive(Debug, Clone)]
pub struct SaxQueryTable {
    segments: usize,
    alphabet: usize,
    /// `contrib[i * alphabet + s]` = (n/l) * gap(query_paa[i], cell(s))^2
    contrib: Vec<f64>,
}

impl SaxQueryTable {
    pub fn new(query: &[f32], segments: usize, bp: &Breakpoints) -> Result<Self> {
        let qpaa = paa(query, segments)?;
        let alphabet = bp.alphabet();
        let scale = query.len() as f64 / segments as f64;
        let mut contrib = Vec::with_capacity(segments * alphabet);
        for &q in &qpaa {
            for s in 0..alphabet {
                let g = interval_gap(q as f64, bp.cell(s as u8));
                contrib.push(scale * g * g);
            }
        }
        Ok(SaxQueryTable {
            segments,
            alphabet,
            contrib,
        })
    }

    #[inline]
    pub fn lower_bound(&self, word: &[u8]) -> f64 {
        debug_assert_eq!(word.len(), self.segments);
        word.iter()
            .enumerate()
            .map(|(i, &s)| self.contrib[i * self.alphabet + s as usize])
            .sum()
    }
}

#[inline]
fn interval_gap(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if v < lo {
        lo - v
    } else if v > hi {
        v - hi
    } else {
        0.0
    }
}

/// Mean and population standard deviation of one segment of a series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentStats {
    pub mean: f32,
    pub sd: f32,
    pub width: usize,
}

/// Statistics of points `[start, end)`.
pub fn segment_stats(series: &[f32], start: usize, end: usize) -> Result<SegmentStats> {
    if start >= end || end > series.len() {
        return Err(Error::Contract(format!(
            "invalid segment [{start}, {end}) for series of length {}",
            series.len()
        )));
    }
    Ok(stats_unchecked(&series[start..end]))
}

/// All statistics are rounded to `f32` through this one function so that
/// envelopes, routing and lower bounds see bit-identical values.
#[inline]
pub(crate) fn stats_unchecked(points: &[f32]) -> SegmentStats {
    let w = points.len() as f64;
    let mean = points.iter().map(|&x| x as f64).sum::<f64>() / w;
    let var = points
        .iter()
        .map(|&x| {
            let d = x as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / w;
    SegmentStats {
        mean: mean as f32,
        sd: var.sqrt() as f32,
        width: points.len(),
    }
}

/// Squared EAPCA lower bound between a query and a node's envelopes:
/// `sum_i w_i * (gap_mean_i^2 + gap_sd_i^2)`.
pub fn lb_eapca(query: &[f32], segmentation: &Segmentation, synopsis: &Synopsis) -> Result<f64> {
    if segmentation.len() != synopsis.len() {
        return Err(Error::Contract(format!(
            "segmentation has {} segments but synopsis has {}",
            segmentation.len(),
            synopsis.len()
        )));
    }
    if segmentation.series_len() != query.len() {
        return Err(Error::Contract(format!(
            "segmentation covers {} points, query has {}",
            segmentation.series_len(),
            query.len()
        )));
    }
    Ok(lb_eapca_unchecked(query, segmentation, synopsis))
}

pub(crate) fn lb_eapca_unchecked(query: &[f32], seg: &Segmentation, syn: &Synopsis) -> f64 {
    seg.ranges()
        .zip(syn.envelopes())
        .map(|((s, e), env)| {
            let q = stats_unchecked(&query[s..e]);
            let gm = interval_gap(q.mean as f64, (env.mean_min as f64, env.mean_max as f64));
            let gs = interval_gap(q.sd as f64, (env.sd_min as f64, env.sd_max as f64));
            (e - s) as f64 * (gm * gm + gs * gs)
        })
        .sum()
}
