//! Tolerance-margin scoring plus the ODS/OIS threshold sweeps over
//! `t = 0.001, 0.002, …, 0.999`.
//!
//! A predicted crack pixel is a true positive when some ground-truth crack
//! pixel lies within Euclidean distance `margin` (inclusive); a ground-truth
//! pixel is missed when no predicted pixel lies within `margin`. There is no
//! one-to-one matching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{Mask, ProbMap};

/// Default tolerance in pixels.
pub const DEFAULT_MARGIN: u32 = 2;
/// Default decision threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Number of thresholds in the sweep grid.
pub const GRID_STEPS: usize = 999;

/// `k`-th grid threshold, `k` in `1..=999`.
#[inline]
pub fn grid_threshold(k: usize) -> f64 {
    k as f64 / 1000.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl std::ops::AddAssign for Confusion {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// `tp / (tp + fp)`, with `0/0 = 1`.
pub fn precision(c: Confusion) -> f64 {
    ratio(c.tp, c.tp + c.fp)
}

/// `tp / (tp + fn)`, with `0/0 = 1`.
pub fn recall(c: Confusion) -> f64 {
    ratio(c.tp, c.tp + c.fn_)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1(pr: f64, re: f64) -> f64 {
    if pr + re == 0.0 {
        0.0
    } else {
        2.0 * pr * re / (pr + re)
    }
}

pub fn f1_of(c: Confusion) -> f64 {
    f1(precision(c), recall(c))
}

const FAR: f64 = 1e20;

/// One pass of the lower-envelope squared distance transform
/// (Felzenszwalb & Huttenlocher) over a 1-D sampled function.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            // z[0] is -inf, so k never drops below 0.
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest crack
/// pixel of `mask`. Pixels of an all-background mask get a huge sentinel.
pub fn squared_distance_transform(mask: &Mask) -> Vec<f64> {
    let (h, w) = (mask.height(), mask.width());
    let mut grid: Vec<f64> = mask.data().iter().map(|&v| if v == 1 { 0.0 } else { FAR }).collect();
    let len = h.max(w);
    let mut f = vec![0.0; len];
    let mut out = vec![0.0; len];
    let mut v = vec![0usize; len];
    let mut z = vec![0.0; len + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

fn check_same_size(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            expected: vec![a.0, a.1],
            got: vec![b.0, b.1],
        });
    }
    Ok(())
}

/// Tolerance-margin confusion counts via one distance transform per mask.
pub fn tolerant_confusion(pred: &Mask, gt: &Mask, margin: u32) -> Result<Confusion> {
    check_same_size((gt.height(), gt.width()), (pred.height(), pred.width()))?;
    let m2 = (margin as f64) * (margin as f64);
    let to_gt = squared_distance_transform(gt);
    let to_pred = squared_distance_transform(pred);
    let mut c = Confusion::default();
    for i in 0..pred.data().len() {
        if pred.data()[i] == 1 {
            if to_gt[i] <= m2 {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        if gt.data()[i] == 1 && to_pred[i] > m2 {
            c.fn_ += 1;
        }
    }
    Ok(c)
}

/// Number of grid thresholds a probability clears: the largest `k` with
/// `p >= k/1000`, or 0.
#[inline]
pub fn grid_level(p: f32) -> usize {
    let p = p as f64;
    if p.is_nan() || p < grid_threshold(1) {
        return 0;
    }
    let mut k = ((p * 1000.0).floor() as usize).clamp(1, GRID_STEPS);
    while k < GRID_STEPS && grid_threshold(k + 1) <= p {
        k += 1;
    }
    while k > 1 && grid_threshold(k) > p {
        k -= 1;
    }
    k
}

/// Confusion counts of one image at every grid threshold, index `k - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdCurve {
    pub counts: Vec<Confusion>,
}

impl ThresholdCurve {
    fn zero() -> Self {
        Self {
            counts: vec![Confusion::default(); GRID_STEPS],
        }
    }

    pub fn at(&self, k: usize) -> Confusion {
        self.counts[k - 1]
    }

    fn add(&mut self, other: &Self) {
        for (a, &b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// `(k, F1)` of the best threshold; ties go to the smallest `k`.
    pub fn best(&self) -> (usize, f64) {
        let mut best = (1, f1_of(self.counts[0]));
        for k in 2..=GRID_STEPS {
            let f = f1_of(self.at(k));
            if f > best.1 {
                best = (k, f);
            }
        }
        best
    }
}

fn disc_offsets(margin: u32) -> Vec<(isize, isize)> {
    let m = margin as isize;
    let m2 = m * m;
    let mut out = Vec::new();
    for dy in -m..=m {
        for dx in -m..=m {
            if dy * dy + dx * dx <= m2 {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Sweeps all 999 thresholds of one image in a single pass: each pixel's grid
/// level is bucketed once, then suffix/prefix sums give every threshold.
pub fn threshold_curve(prob: &ProbMap, gt: &Mask, margin: u32) -> Result<ThresholdCurve> {
    check_same_size((gt.height(), gt.width()), (prob.height(), prob.width()))?;
    let (h, w) = (gt.height(), gt.width());
    let m2 = (margin as f64) * (margin as f64);
    let to_gt = squared_distance_transform(gt);
    let levels: Vec<usize> = prob.data().iter().map(|&p| grid_level(p)).collect();

    let mut tp_hist = vec![0u64; GRID_STEPS + 1];
    let mut fp_hist = vec![0u64; GRID_STEPS + 1];
    for (i, &lv) in levels.iter().enumerate() {
        if to_gt[i] <= m2 {
            tp_hist[lv] += 1;
        } else {
            fp_hist[lv] += 1;
        }
    }
    // A ground-truth pixel is recovered at threshold k while the best level in
    // its tolerance disc is >= k.
    let offsets = disc_offsets(margin);
    let mut cover_hist = vec![0u64; GRID_STEPS + 1];
    for y in 0..h {
        for x in 0..w {
            if !gt.get(y, x) {
                continue;
            }
            let mut best = 0;
            for &(dy, dx) in &offsets {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                    best = best.max(levels[yy as usize * w + xx as usize]);
                }
            }
            cover_hist[best] += 1;
        }
    }

    let mut curve = ThresholdCurve::zero();
    let (mut tp, mut fp) = (0u64, 0u64);
    for k in (1..=GRID_STEPS).rev() {
        tp += tp_hist[k];
        fp += fp_hist[k];
        curve.counts[k - 1].tp = tp;
        curve.counts[k - 1].fp = fp;
    }
    let mut missed = 0u64;
    for k in 1..=GRID_STEPS {
        missed += cover_hist[k - 1];
        curve.counts[k - 1].fn_ = missed;
    }
    Ok(curve)
}

fn curves(probs: &[ProbMap], gts: &[Mask], margin: u32) -> Result<Vec<ThresholdCurve>> {
    if probs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if probs.len() != gts.len() {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            expected: vec![gts.len()],
            got: vec![probs.len()],
        });
    }
    probs.iter().zip(gts).map(|(p, g)| threshold_curve(p, g, margin)).collect()
}

fn ods_from(curves: &[ThresholdCurve]) -> (f64, f64) {
    let mut total = ThresholdCurve::zero();
    for c in curves {
        total.add(c);
    }
    let (k, f) = total.best();
    (grid_threshold(k), f)
}

fn ois_from(curves: &[ThresholdCurve]) -> f64 {
    curves.iter().map(|c| c.best().1).sum::<f64>() / curves.len() as f64
}

/// Optimal dataset scale: `(best threshold, F1)` with counts aggregated over
/// all images before computing F1.
pub fn ods(probs: &[ProbMap], gts: &[Mask], margin: u32) -> Result<(f64, f64)> {
    Ok(ods_from(&curves(probs, gts, margin)?))
}

/// Optimal image scale: mean over images of each image's best F1.
pub fn ois(probs: &[ProbMap], gts: &[Mask], margin: u32) -> Result<f64> {
    Ok(ois_from(&curves(probs, gts, margin)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub best_threshold: f64,
    pub best_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub margin: u32,
    pub threshold: f64,
    pub per_image: Vec<ImageMetrics>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub aggregate_precision: f64,
    pub aggregate_recall: f64,
    pub aggregate_f1: f64,
    pub ods_threshold: f64,
    pub ods: f64,
    pub ois: f64,
    pub threshold_grid: String,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "images,margin,threshold,mean_precision,mean_recall,mean_f1,aggregate_precision,aggregate_recall,aggregate_f1,ods_threshold,ods,ois";

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3},{:.6},{:.6}",
            self.per_image.len(),
            self.margin,
            self.threshold,
            self.mean_precision,
            self.mean_recall,
            self.mean_f1,
            self.aggregate_precision,
            self.aggregate_recall,
            self.aggregate_f1,
            self.ods_threshold,
            self.ods,
            self.ois
        )
    }
}

/// Full report: per-image and dataset scores at `threshold`, plus ODS/OIS.
pub fn evaluate(ids: &[String], probs: &[ProbMap], gts: &[Mask], margin: u32, threshold: f64) -> Result<MetricsReport> {
    let cs = curves(probs, gts, margin)?;
    if ids.len() != probs.len() {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            expected: vec![probs.len()],
            got: vec![ids.len()],
        });
    }
    let mut per_image = Vec::with_capacity(probs.len());
    let mut total = Confusion::default();
    for ((id, (p, g)), curve) in ids.iter().zip(probs.iter().zip(gts)).zip(&cs) {
        let c = tolerant_confusion(&p.binarize(threshold), g, margin)?;
        total += c;
        let (k, best) = curve.best();
        per_image.push(ImageMetrics {
            id: id.clone(),
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision: precision(c),
            recall: recall(c),
            f1: f1_of(c),
            best_threshold: grid_threshold(k),
            best_f1: best,
        });
    }
    let n = per_image.len() as f64;
    let (ods_threshold, ods) = ods_from(&cs);
    Ok(MetricsReport {
        margin,
        threshold,
        mean_precision: per_image.iter().map(|m| m.precision).sum::<f64>() / n,
        mean_recall: per_image.iter().map(|m| m.recall).sum::<f64>() / n,
        mean_f1: per_image.iter().map(|m| m.f1).sum::<f64>() / n,
        aggregate_precision: precision(total),
        aggregate_recall: recall(total),
        aggregate_f1: f1_of(total),
        ods_threshold,
        ods,
        ois: ois_from(&cs),
        threshold_grid: "0.001:0.001:0.999".into(),
        per_image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(h: usize, w: usize, pts: &[(usize, usize)]) -> Mask {
        Mask::from_fn(h, w, |y, x| pts.contains(&(y, x)))
    }

    #[test]
    fn identical_masks() {
        let m = Mask::from_fn(6, 7, |y, x| (x + y) % 4 == 0);
        let c = tolerant_confusion(&m, &m, 2).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (m.count() as u64, 0, 0));
    }

    #[test]
    fn distance_two_is_inside() {
        let c = tolerant_confusion(&dot(6, 6, &[(0, 0)]), &dot(6, 6, &[(0, 2)]), 2).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (1, 0, 0));
        let c = tolerant_confusion(&dot(6, 6, &[(0, 0)]), &dot(6, 6, &[(5, 5)]), 2).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (0, 1, 1));
    }

    #[test]
    fn ratios() {
        let c = Confusion { tp: 9, fp: 1, fn_: 3 };
        assert!((precision(c) - 0.9).abs() < 1e-15);
        assert!((recall(c) - 0.75).abs() < 1e-15);
        assert!((f1(0.9, 0.75) - 0.818_181_818_181_818_2).abs() < 1e-12);
        assert_eq!(precision(Confusion::default()), 1.0);
        assert_eq!(recall(Confusion::default()), 1.0);
        assert_eq!(f1(0.0, 1.0), 0.0);
        assert!((f1(0.4, 0.4) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        assert!(tolerant_confusion(&Mask::zeros(2, 2), &Mask::zeros(2, 3), 2).is_err());
    }

    #[test]
    fn grid_levels() {
        assert_eq!(grid_level(0.0), 0);
        assert_eq!(grid_level(0.0009), 0);
        assert_eq!(grid_level(0.5), 500);
        assert_eq!(grid_level(1.0), 999);
        for k in 1..=999 {
            let p = (k as f64 / 1000.0) as f32;
            // f32 rounding may land just below k/1000
            let lv = grid_level(p);
            assert!(lv == k || lv == k - 1);
            assert_eq!(lv >= k, p as f64 >= grid_threshold(k));
        }
    }

    #[test]
    fn perfect_map_scores_one() {
        let gt = Mask::from_fn(8, 8, |y, x| y == x);
        let p = ProbMap::new(8, 8, gt.data().iter().map(|&v| v as f32).collect()).unwrap();
        let (t, f) = ods(std::slice::from_ref(&p), std::slice::from_ref(&gt), 2).unwrap();
        assert_eq!((t, f), (0.001, 1.0));
        assert_eq!(ois(&[p], &[gt], 2).unwrap(), 1.0);
    }

    #[test]
    fn ois_averages_images() {
        let gt = Mask::from_fn(16, 16, |_, x| x == 1);
        let perfect = ProbMap::new(16, 16, gt.data().iter().map(|&v| v as f32).collect()).unwrap();
        // Prediction far from the crack at every threshold.
        let wrong = ProbMap::new(16, 16, (0..256).map(|i| if i % 16 >= 10 { 1.0 } else { 0.0 }).collect()).unwrap();
        let o = ois(&[perfect, wrong], &[gt.clone(), gt], 2).unwrap();
        assert!((o - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_dataset() {
        assert!(matches!(ods(&[], &[], 2), Err(Error::EmptyDataset)));
        assert!(matches!(ois(&[], &[], 2), Err(Error::EmptyDataset)));
    }
}
