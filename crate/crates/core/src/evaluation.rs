//! Scoring of a footprint set against ground truth.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{mask_assd, rasterize, Footprint, Mask, PixelRect};
use crate::scalar::Scalar;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Precision, recall and F1 with the underlying counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl<T: Scalar> Prf<T> {
    /// A zero denominator gives a ratio of 1: nothing predicted means no
    /// false positives, nothing to find means nothing missed.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                T::one()
            } else {
                T::from_usize(num).unwrap() / T::from_usize(den).unwrap()
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > T::zero() {
            T::lit(2.0) * precision * recall / (precision + recall)
        } else {
            T::zero()
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

fn masks_of<T: Scalar>(footprints: &[Footprint<T>]) -> Result<Vec<Mask>> {
    footprints.par_iter().map(|f| rasterize(&f.polygon)).collect()
}

fn coverage(masks: &[Mask], extent: PixelRect) -> Vec<bool> {
    let w = extent.width().max(0) as usize;
    let mut bits = vec![false; extent.area().max(0) as usize];
    for m in masks {
        for (x, y) in m.iter_set() {
            if extent.contains(x, y) {
                bits[(y - extent.y0) as usize * w + (x - extent.x0) as usize] = true;
            }
        }
    }
    bits
}

/// Pixel-level scores of the union of `pred` against the union of `truth`
/// inside `extent`.
pub fn pixel_prf<T: Scalar>(pred: &[Footprint<T>], truth: &[Footprint<T>], extent: PixelRect) -> Result<Prf<T>> {
    Ok(pixel_prf_masks(&masks_of(pred)?, &masks_of(truth)?, extent))
}

pub fn pixel_prf_masks<T: Scalar>(pred: &[Mask], truth: &[Mask], extent: PixelRect) -> Prf<T> {
    let p = coverage(pred, extent);
    let t = coverage(truth, extent);
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (a, b) in p.iter().zip(&t) {
        match (a, b) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Prf::from_counts(tp, fp, fn_)
}

/// A matched (pred, truth) pair, by index into the inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match<T> {
    pub pred: usize,
    pub truth: usize,
    pub iou: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectScores<T> {
    pub prf: Prf<T>,
    pub matches: Vec<Match<T>>,
}

/// IoU of every overlapping (pred, truth) pair.
fn overlapping_pairs<T: Scalar>(pred: &[Mask], truth: &[Mask]) -> Vec<Match<T>> {
    let truth_rects: Vec<PixelRect> = truth.iter().map(Mask::rect).collect();
    pred.par_iter()
        .enumerate()
        .flat_map_iter(|(i, p)| {
            let pr = p.rect();
            truth_rects
                .iter()
                .enumerate()
                .filter(move |(_, r)| r.overlaps(&pr))
                .filter_map(move |(j, _)| {
                    let inter = p.intersection_count(&truth[j]);
                    (inter > 0).then(|| {
                        let union = p.count() + truth[j].count() - inter;
                        Match {
                            pred: i,
                            truth: j,
                            iou: T::from_usize(inter).unwrap() / T::from_usize(union).unwrap(),
                        }
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Greedy one-to-one matching by descending IoU; a pair counts only when its
/// IoU is strictly above `iou_threshold`. Ties go to the lower pred id, then
/// the lower truth id.
pub fn object_prf<T: Scalar>(pred: &[Footprint<T>], truth: &[Footprint<T>], iou_threshold: T) -> Result<ObjectScores<T>> {
    let pm = masks_of(pred)?;
    let tm = masks_of(truth)?;
    Ok(object_prf_masks(pred, truth, &pm, &tm, iou_threshold))
}

fn object_prf_masks<T: Scalar>(
    pred: &[Footprint<T>],
    truth: &[Footprint<T>],
    pm: &[Mask],
    tm: &[Mask],
    iou_threshold: T,
) -> ObjectScores<T> {
    let mut pairs: Vec<Match<T>> = overlapping_pairs(pm, tm)
        .into_iter()
        .filter(|m| m.iou > iou_threshold)
        .collect();
    pairs.sort_by(|a, b| {
        b.iou
            .partial_cmp(&a.iou)
            .unwrap()
            .then_with(|| pred[a.pred].id.cmp(&pred[b.pred].id))
            .then_with(|| truth[a.truth].id.cmp(&truth[b.truth].id))
    });
    let mut pred_used = vec![false; pred.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut matches = Vec::new();
    for m in pairs {
        if !pred_used[m.pred] && !truth_used[m.truth] {
            pred_used[m.pred] = true;
            truth_used[m.truth] = true;
            matches.push(m);
        }
    }
    let tp = matches.len();
    ObjectScores {
        prf: Prf::from_counts(tp, pred.len() - tp, truth.len() - tp),
        matches,
    }
}

/// Mean ASSD, in pixels, over predictions that overlap some truth footprint;
/// each is paired with its highest-IoU truth (lower truth index on ties).
pub fn mean_assd<T: Scalar>(pred: &[Footprint<T>], truth: &[Footprint<T>]) -> Result<T> {
    mean_assd_masks(&masks_of(pred)?, &masks_of(truth)?)
}

fn mean_assd_masks<T: Scalar>(pm: &[Mask], tm: &[Mask]) -> Result<T> {
    let mut best: Vec<Option<Match<T>>> = vec![None; pm.len()];
    for m in overlapping_pairs::<T>(pm, tm) {
        let slot = &mut best[m.pred];
        let better = match slot {
            None => true,
            Some(b) => m.iou > b.iou || (m.iou == b.iou && m.truth < b.truth),
        };
        if better {
            *slot = Some(m);
        }
    }
    let paired: Vec<Match<T>> = best.into_iter().flatten().collect();
    if paired.is_empty() {
        return Err(Error::NoOverlap);
    }
    let distances: Vec<T> = paired
        .par_iter()
        .map(|m| mask_assd(&pm[m.pred], &tm[m.truth]))
        .collect();
    Ok(distances.into_iter().sum::<T>() / T::from_usize(paired.len()).unwrap())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<T> {
    pub pixel: Prf<T>,
    pub object: Prf<T>,
    pub iou_threshold: T,
    /// `None` when no prediction overlaps the truth.
    pub mean_assd: Option<T>,
}

impl<T: Scalar> EvalReport<T> {
    /// One `key=value` per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (level, prf) in [("pixel", &self.pixel), ("object", &self.object)] {
            writeln!(out, "{level}_precision={}", prf.precision.as_f64()).unwrap();
            writeln!(out, "{level}_recall={}", prf.recall.as_f64()).unwrap();
            writeln!(out, "{level}_f1={}", prf.f1.as_f64()).unwrap();
            writeln!(out, "{level}_tp={}", prf.tp).unwrap();
            writeln!(out, "{level}_fp={}", prf.fp).unwrap();
            writeln!(out, "{level}_fn={}", prf.fn_).unwrap();
        }
        writeln!(out, "object_iou_threshold={}", self.iou_threshold.as_f64()).unwrap();
        match self.mean_assd {
            Some(v) => writeln!(out, "mean_assd={}", v.as_f64()).unwrap(),
            None => writeln!(out, "mean_assd=none").unwrap(),
        }
        out
    }
}

/// Full report of `pred` against `truth`; pixel scores are restricted to `extent`.
pub fn evaluate<T: Scalar>(
    pred: &[Footprint<T>],
    truth: &[Footprint<T>],
    extent: PixelRect,
    iou_threshold: T,
) -> Result<EvalReport<T>> {
    let pm = masks_of(pred)?;
    let tm = masks_of(truth)?;
    let mean_assd = match mean_assd_masks(&pm, &tm) {
        Ok(v) => Some(v),
        Err(Error::NoOverlap) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        pixel: pixel_prf_masks(&pm, &tm, extent),
        object: object_prf_masks(pred, truth, &pm, &tm, iou_threshold).prf,
        iou_threshold,
        mean_assd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Polygon, Source};

    fn rect(id: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> Footprint<f64> {
        Footprint::new(id, Polygon::rect(x0, y0, x1, y1).unwrap(), Source::Original)
    }

    const EXTENT: PixelRect = PixelRect {
        x0: 0,
        y0: 0,
        x1: 100,
        y1: 100,
    };

    #[test]
    fn identical_sets_score_perfectly() {
        let truth = vec![rect("a", 10.0, 10.0, 20.0, 18.0), rect("b", 40.0, 40.0, 52.0, 47.0)];
        let r = evaluate(&truth, &truth, EXTENT, 0.5).unwrap();
        for prf in [r.pixel, r.object] {
            assert_eq!((prf.precision, prf.recall, prf.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.mean_assd, Some(0.0));
    }

    #[test]
    fn extra_disjoint_region_halves_pixel_precision() {
        let truth = vec![rect("a", 10.0, 10.0, 20.0, 20.0)];
        let pred = vec![rect("a", 10.0, 10.0, 20.0, 20.0), rect("b", 50.0, 50.0, 60.0, 60.0)];
        let prf: Prf<f64> = pixel_prf(&pred, &truth, EXTENT).unwrap();
        assert_eq!((prf.tp, prf.fp, prf.fn_), (100, 100, 0));
        assert_eq!(prf.precision, 0.5);
        assert_eq!(prf.recall, 1.0);
        assert!((prf.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_sets_are_vacuously_perfect() {
        let r = evaluate::<f64>(&[], &[], EXTENT, 0.5).unwrap();
        assert_eq!((r.pixel.f1, r.object.f1), (1.0, 1.0));
        assert_eq!(r.mean_assd, None);
    }

    #[test]
    fn iou_of_exactly_half_is_not_a_match() {
        // 6x10 rectangles two columns apart: 40 shared pixels of 80.
        let truth = vec![rect("t", 0.0, 0.0, 6.0, 10.0)];
        let pred = vec![rect("p", 2.0, 0.0, 8.0, 10.0)];
        let s = object_prf(&pred, &truth, 0.5).unwrap();
        assert!(s.matches.is_empty());
        assert_eq!(s.prf.tp, 0);
        let s = object_prf(&pred, &truth, 0.49).unwrap();
        assert_eq!(s.matches[0].iou, 0.5);
    }

    /// Size of the largest matching with IoU > t, by trying every injection.
    fn exhaustive_matches(pred: &[Footprint<f64>], truth: &[Footprint<f64>], t: f64) -> usize {
        fn go(i: usize, ok: &[Vec<bool>], used: &mut Vec<bool>) -> usize {
            if i == ok.len() {
                return 0;
            }
            let mut best = go(i + 1, ok, used);
            for j in 0..used.len() {
                if ok[i][j] && !used[j] {
                    used[j] = true;
                    best = best.max(1 + go(i + 1, ok, used));
                    used[j] = false;
                }
            }
            best
        }
        let ok: Vec<Vec<bool>> = pred
            .iter()
            .map(|p| {
                truth
                    .iter()
                    .map(|q| crate::geometry::iou::<f64>(&p.polygon, &q.polygon).unwrap() > t)
                    .collect()
            })
            .collect();
        go(0, &ok, &mut vec![false; truth.len()])
    }

    #[test]
    fn two_of_three_found() {
        let truth = vec![
            rect("t1", 0.0, 0.0, 10.0, 10.0),
            rect("t2", 30.0, 0.0, 40.0, 10.0),
            rect("t3", 60.0, 0.0, 70.0, 10.0),
        ];
        // 10x9 inside 10x10 -> IoU 0.9; 10x10 shifted by one row -> 90/110.
        let pred = vec![rect("p1", 0.0, 0.0, 10.0, 9.0), rect("p2", 30.0, 1.0, 40.0, 11.0)];
        let s = object_prf(&pred, &truth, 0.5).unwrap();
        assert_eq!(s.prf.tp, exhaustive_matches(&pred, &truth, 0.5));
        assert_eq!(s.prf.precision, 1.0);
        assert!((s.prf.recall - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn one_pred_cannot_match_two_truths() {
        let truth = vec![rect("t1", 0.0, 0.0, 10.0, 10.0), rect("t2", 0.0, 0.0, 10.0, 9.0)];
        let pred = vec![rect("p", 0.0, 0.0, 10.0, 10.0)];
        let s = object_prf(&pred, &truth, 0.5).unwrap();
        assert_eq!(s.matches.len(), 1);
        assert_eq!(s.matches[0].truth, 0);
    }

    #[test]
    fn assd_of_shifted_pair_and_disjoint_sets() {
        let truth = vec![rect("t", 10.0, 10.0, 20.0, 20.0)];
        let pred = vec![rect("p", 13.0, 10.0, 23.0, 20.0)];
        let direct: f64 = crate::geometry::assd(&pred[0].polygon, &truth[0].polygon).unwrap();
        assert_eq!(mean_assd(&pred, &truth).unwrap(), direct);
        let far = vec![rect("p", 50.0, 50.0, 60.0, 60.0)];
        assert!(matches!(mean_assd(&far, &truth), Err(Error::NoOverlap)));
    }

    #[test]
    fn report_text_is_line_per_metric() {
        let truth = vec![rect("a", 10.0, 10.0, 20.0, 20.0)];
        let text = evaluate(&truth, &truth, EXTENT, 0.5).unwrap().to_text();
        assert!(text.starts_with("pixel_precision=1\n"));
        assert!(text.contains("\nobject_tp=1\n"));
        assert!(text.ends_with("mean_assd=0\n"));
        assert_eq!(text.lines().count(), 14);
    }
}
