//! Localization metrics over min-max normalized maps.
//!
//! Maps are flat row-major slices; masks are `bool` slices of the same
//! length. Thresholding is strict (`value > τ`) throughout.

pub mod boxes;
pub mod report;

use crate::error::{Error, Result};

pub use boxes::{
    argmax, bounding_box, box_iou, largest_connected_component, mba, predicted_box_iou, top1_loc,
    Box,
};
pub use report::{
    evaluate_bcam_masks, BackgroundReport, ClassMetrics, EvalInstance, MaskRouteReport,
    MetricReport,
};

/// Sorted thresholds in [0, 1] including both endpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdGrid {
    values: Vec<f64>,
}

impl ThresholdGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 || values[0] != 0.0 || *values.last().expect("len ≥ 2") != 1.0 {
            return Err(Error::Config(
                "threshold grid must start at 0 and end at 1".into(),
            ));
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config(
                "threshold grid must be strictly increasing".into(),
            ));
        }
        Ok(Self { values })
    }

    /// `n` evenly spaced points from 0 to 1.
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!(
                "a grid needs at least 2 points, got {n}"
            )));
        }
        let last = (n - 1) as f64;
        Self::new((0..n).map(|i| i as f64 / last).collect())
    }

    /// A grid without points; only useful for exercising error paths.
    pub fn empty() -> Self {
        Self { values: Vec::new() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn require(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Empty("threshold grid is empty".into()));
        }
        Ok(())
    }
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self::uniform(201).expect("valid")
    }
}

/// Min-max normalization to [0, 1]; constant maps become all zeros.
pub fn normalize_map(s: &[f64]) -> Vec<f64> {
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; s.len()];
    }
    s.iter().map(|&v| (v - lo) / span).collect()
}

pub fn threshold_mask(map: &[f64], tau: f64) -> Vec<bool> {
    map.iter().map(|&v| v > tau).collect()
}

/// Bilinear resize with half-pixel centers and clamped edges.
pub fn upsample_bilinear(map: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(map.len(), h * w, "map does not match {h}×{w}");
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = axis(h, out_h);
    let xs = axis(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = map[y0 * w + x0] * (1.0 - fx) + map[y0 * w + x1] * fx;
            let bottom = map[y1 * w + x0] * (1.0 - fx) + map[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// `|pred ∧ gt| / |pred ∨ gt|`, 1 when both are empty.
pub fn mask_iou(pred: &[bool], gt: &[bool]) -> f64 {
    assert_eq!(pred.len(), gt.len(), "mask lengths differ");
    let inter = pred.iter().zip(gt).filter(|(&p, &g)| p && g).count();
    let union = pred.iter().zip(gt).filter(|(&p, &g)| p || g).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pixel confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn of(pred: &[bool], gt: &[bool]) -> Self {
        let mut c = Self::default();
        for (&p, &g) in pred.iter().zip(gt) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    fn add(&mut self, o: Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }

    /// TP/(TP+FP), 1 when nothing is predicted.
    pub fn precision(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp)
    }

    /// TP/(TP+FN), 1 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fn_)
    }

    /// TN/(TN+FP), 1 when there are no negatives.
    pub fn specificity(&self) -> f64 {
        ratio_or_one(self.tn, self.tn + self.fp)
    }

    pub fn iou(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp + self.fn_)
    }
}

fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-image scores split by ground truth and sorted, so the confusion at
/// any τ is two binary searches.
struct SortedImage {
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl SortedImage {
    fn new(map: &[f64], gt: &[bool]) -> Self {
        assert_eq!(map.len(), gt.len(), "map and mask lengths differ");
        let mut pos: Vec<f64> = map
            .iter()
            .zip(gt)
            .filter(|(_, &g)| g)
            .map(|(&v, _)| v)
            .collect();
        let mut neg: Vec<f64> = map
            .iter()
            .zip(gt)
            .filter(|(_, &g)| !g)
            .map(|(&v, _)| v)
            .collect();
        pos.sort_by(f64::total_cmp);
        neg.sort_by(f64::total_cmp);
        Self { pos, neg }
    }

    fn confusion(&self, tau: f64) -> Confusion {
        let above = |v: &[f64]| v.len() - v.partition_point(|&x| x <= tau);
        let tp = above(&self.pos);
        let fp = above(&self.neg);
        Confusion {
            tp,
            fp,
            tn: self.neg.len() - fp,
            fn_: self.pos.len() - tp,
        }
    }
}

fn sorted_images(maps: &[Vec<f64>], gt: &[Vec<bool>]) -> Result<Vec<SortedImage>> {
    if maps.len() != gt.len() {
        return Err(Error::shape("metrics", &[maps.len()], &[gt.len()]));
    }
    use rayon::prelude::*;
    Ok(maps
        .par_iter()
        .zip(gt)
        .map(|(m, g)| SortedImage::new(m, g))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall pooled over every pixel of every image.
pub fn pr_curve(maps: &[Vec<f64>], gt: &[Vec<bool>], grid: &ThresholdGrid) -> Result<Vec<PrPoint>> {
    let images = sorted_images(maps, gt)?;
    Ok(grid
        .values()
        .iter()
        .map(|&tau| {
            let mut c = Confusion::default();
            images.iter().for_each(|im| c.add(im.confusion(tau)));
            PrPoint {
                tau,
                precision: c.precision(),
                recall: c.recall(),
            }
        })
        .collect())
}

/// Pixel average precision pooled over images. Pixels sharing a score enter
/// the ranking together, so the value is `Σ ΔR·P` over the distinct scores
/// taken from high to low.
pub fn pxap(maps: &[Vec<f64>], gt: &[Vec<bool>]) -> Result<f64> {
    if maps.len() != gt.len() {
        return Err(Error::shape("pxap", &[maps.len()], &[gt.len()]));
    }
    let mut pixels: Vec<(f64, bool)> = Vec::new();
    for (m, g) in maps.iter().zip(gt) {
        assert_eq!(m.len(), g.len(), "map and mask lengths differ");
        pixels.extend(m.iter().copied().zip(g.iter().copied()));
    }
    let positives = pixels.iter().filter(|p| p.1).count();
    if positives == 0 {
        return Err(Error::Empty(
            "average precision needs at least one positive pixel".into(),
        ));
    }
    pixels.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < pixels.len() {
        let mut j = i;
        let mut new_tp = 0;
        while j < pixels.len() && pixels[j].0 == pixels[i].0 {
            new_tp += pixels[j].1 as usize;
            j += 1;
        }
        tp += new_tp;
        seen += j - i;
        if new_tp > 0 {
            ap += (new_tp as f64 / positives as f64) * (tp as f64 / seen as f64);
        }
        i = j;
    }
    Ok(ap)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PiouResult {
    pub piou: f64,
    pub tau: f64,
    /// Mean IoU at every grid point.
    pub curve: Vec<(f64, f64)>,
    /// Sensitivity TP/(TP+FN) at the peak, pooled over pixels.
    pub se: f64,
    /// Precision TP/(TP+FP) at the peak.
    pub pr: f64,
    /// Specificity TN/(TN+FP) at the peak.
    pub sp: f64,
}

/// Peak of the mean mask IoU over the grid; the smallest τ wins ties.
pub fn piou(maps: &[Vec<f64>], gt: &[Vec<bool>], grid: &ThresholdGrid) -> Result<PiouResult> {
    grid.require()?;
    if maps.is_empty() {
        return Err(Error::Empty("no images to score".into()));
    }
    let images = sorted_images(maps, gt)?;
    let n = images.len() as f64;
    let curve: Vec<(f64, f64)> = grid
        .values()
        .iter()
        .map(|&tau| {
            (
                tau,
                images.iter().map(|im| im.confusion(tau).iou()).sum::<f64>() / n,
            )
        })
        .collect();
    let (tau, peak) = curve
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |best, p| {
            if p.1 > best.1 {
                p
            } else {
                best
            }
        });
    let mut c = Confusion::default();
    images.iter().for_each(|im| c.add(im.confusion(tau)));
    Ok(PiouResult {
        piou: peak,
        tau,
        curve,
        se: c.recall(),
        pr: c.precision(),
        sp: c.specificity(),
    })
}
