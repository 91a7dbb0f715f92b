//! Removal of footprints without evidence in the probability raster.
//!
//! Each footprint is scored by its mean probability; the scores are binned
//! and the histogram is smoothed until it has exactly two peaks. The lowest
//! bin between the peaks gives the cut-off (the minimum method).

use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{rasterize, Footprint};
use crate::raster::{mean_prob, ProbMap};
use crate::scalar::Scalar;

pub const DEFAULT_BINS: usize = 64;
pub const MAX_SMOOTHING_PASSES: usize = 10_000;
/// Smoothing passes a two-peak histogram must survive to count as bimodal.
pub const MIN_BIMODAL_PASSES: usize = 32;
pub const REMOVED_REASON_KEY: &str = "removed_reason";
pub const LOW_EVIDENCE: &str = "low_evidence";

/// Counts of scores in uniform bins over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceHistogram {
    counts: Vec<usize>,
}

impl EvidenceHistogram {
    pub fn from_counts(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
        }
        Ok(Self { counts })
    }

    pub fn from_scores<T: Scalar>(scores: &[T], bins: usize) -> Result<Self> {
        let mut counts = vec![0; bins.max(1)];
        if bins == 0 {
            return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
        }
        for s in scores {
            counts[Self::bin_of(*s, bins)] += 1;
        }
        Ok(Self { counts })
    }

    pub fn bin_of<T: Scalar>(score: T, bins: usize) -> usize {
        let b = (score.as_f64() * bins as f64).floor();
        (b.max(0.0) as usize).min(bins - 1)
    }

    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// One pass of `[1, 1, 1] / 3` with replicated edges; preserves the total.
pub fn smooth<T: Scalar>(h: &[T]) -> Vec<T> {
    let n = h.len();
    let third = T::lit(1.0 / 3.0);
    (0..n)
        .map(|i| {
            let left = h[i.saturating_sub(1)];
            let right = h[(i + 1).min(n - 1)];
            (left + h[i] + right) * third
        })
        .collect()
}

/// Strict local maxima as inclusive index spans; a plateau counts once.
/// Positions outside the histogram compare as lower than any bin.
pub fn local_maxima<T: Scalar>(h: &[T]) -> Vec<(usize, usize)> {
    let n = h.len();
    let mut peaks = Vec::new();
    let mut a = 0;
    while a < n {
        let mut b = a;
        while b + 1 < n && h[b + 1] == h[a] {
            b += 1;
        }
        let rises = a == 0 || h[a - 1] < h[a];
        let falls = b == n - 1 || h[b + 1] < h[a];
        if rises && falls {
            peaks.push((a, b));
        }
        a = b + 1;
    }
    peaks
}

/// Minimum-method threshold: the center of the lowest bin between the two
/// peaks of the smoothed histogram.
///
/// Two refinements make it usable on small, noisy score sets:
///
/// * A two-peak stage only counts once it survives `MIN_BIMODAL_PASSES`
///   further smoothing passes. Sampling noise in one cluster of scores
///   produces two peaks that merge again within a few passes; genuinely
///   separate clusters persist for hundreds.
/// * Within the surviving stage, the valley is taken at the first pass where
///   its floor holds at least one count, so an empty gap between the modes
///   does not pin the threshold to whichever tail sample is outermost. If the
///   floor never gets there, the first pass with a unique lowest bin is used,
///   and failing that the middle of the leftmost flat stretch.
pub fn minimum_threshold<T: Scalar>(hist: &EvidenceHistogram) -> Result<T> {
    let nonzero = hist.counts.iter().filter(|&&c| c > 0).count();
    if nonzero < 2 {
        return Err(Error::UnimodalHistogram);
    }
    let bins = hist.bin_count();
    let center = |bin: usize| T::lit((bin as f64 + 0.5) / bins as f64);
    let mut h: Vec<T> = hist.counts.iter().map(|&c| T::from_usize(c).unwrap()).collect();

    // Consecutive two-peak passes: (valley bin, unique, floor >= 1).
    let mut run: Vec<(usize, bool, bool)> = Vec::new();
    for _ in 0..=MAX_SMOOTHING_PASSES {
        let peaks = local_maxima(&h);
        if peaks.len() == 2 {
            let lo = peaks[0].1 + 1;
            let (first, last) = valley_run(&h[lo..peaks[1].0]);
            let unique = first == last;
            let full = unique && h[lo + first] >= T::one();
            run.push((lo + (first + last) / 2, unique, full));
            if run.len() > MIN_BIMODAL_PASSES {
                if let Some(stage) = run.iter().find(|s| s.2) {
                    return Ok(center(stage.0));
                }
            }
        } else {
            if run.len() > MIN_BIMODAL_PASSES {
                break;
            }
            run.clear();
            if peaks.len() < 2 {
                break;
            }
        }
        h = smooth(&h);
    }
    if run.len() <= MIN_BIMODAL_PASSES {
        return Err(Error::UnimodalHistogram);
    }
    let pick = run
        .iter()
        .find(|s| s.2)
        .or_else(|| run.iter().find(|s| s.1))
        .unwrap_or(&run[0]);
    Ok(center(pick.0))
}

/// First and last index of the leftmost run of minimal values.
fn valley_run<T: Scalar>(h: &[T]) -> (usize, usize) {
    let mut first = 0;
    for (i, v) in h.iter().enumerate() {
        if *v < h[first] {
            first = i;
        }
    }
    let mut last = first;
    while last + 1 < h.len() && h[last + 1] == h[first] {
        last += 1;
    }
    (first, last)
}

/// Mean probability under each footprint.
pub fn score_footprints<T: Scalar>(footprints: &[Footprint<T>], map: &ProbMap<T>) -> Result<Vec<T>> {
    footprints
        .par_iter()
        .map(|fp| mean_prob(&rasterize(&fp.polygon)?, map))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemovalOutcome<T> {
    pub kept: Vec<Footprint<T>>,
    /// Tagged with `removed_reason = "low_evidence"`.
    pub removed: Vec<Footprint<T>>,
    /// `None` when the histogram was unimodal and nothing was removed.
    pub threshold: Option<T>,
    pub scores: Vec<T>,
}

/// Removes footprints scoring strictly below the minimum-method threshold.
pub fn remove_footprints<T: Scalar>(
    footprints: &[Footprint<T>],
    map: &ProbMap<T>,
    bins: usize,
) -> Result<RemovalOutcome<T>> {
    let scores = score_footprints(footprints, map)?;
    let hist = EvidenceHistogram::from_scores(&scores, bins)?;
    let threshold = match minimum_threshold::<T>(&hist) {
        Ok(t) => Some(t),
        Err(Error::UnimodalHistogram) => None,
        Err(e) => return Err(e),
    };
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for (fp, &s) in footprints.iter().zip(&scores) {
        match threshold {
            Some(t) if s < t => {
                let mut fp = fp.clone();
                fp.properties
                    .insert(REMOVED_REASON_KEY.into(), Value::String(LOW_EVIDENCE.into()));
                removed.push(fp);
            }
            _ => kept.push(fp.clone()),
        }
    }
    Ok(RemovalOutcome {
        kept,
        removed,
        threshold,
        scores,
    })
}
