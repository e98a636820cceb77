//! Aggregated reports and their CSV forms.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::boxes::{box_iou_table, mba_from_table, top1_from_table};
use crate::metrics::{
    mask_iou, piou, pr_curve, pxap, Box, Confusion, PiouResult, PrPoint, ThresholdGrid,
};

pub const DELTAS: [f64; 3] = [0.3, 0.5, 0.7];

/// One (image, ground-truth class) pair to score.
#[derive(Clone, Debug)]
pub struct EvalInstance {
    pub class: usize,
    pub predicted_class: usize,
    /// Normalized localization map of `class`.
    pub map: Vec<f64>,
    pub gt: Vec<bool>,
    pub gt_box: Box,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub instances: usize,
    pub piou: f64,
    pub pxap: f64,
    pub mba: [f64; 3],
    pub top1: [f64; 3],
}

impl ClassMetrics {
    pub fn top1_mean(&self) -> f64 {
        self.top1.iter().sum::<f64>() / 3.0
    }
}

/// Threshold-sweep evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub instances: usize,
    pub piou: PiouResult,
    pub pxap: f64,
    pub mba: [f64; 3],
    pub top1: [f64; 3],
    pub pr_curve: Vec<PrPoint>,
    pub per_class: Vec<ClassMetrics>,
}

struct Scored {
    piou: PiouResult,
    pxap: f64,
    mba: [f64; 3],
    top1: [f64; 3],
    pr: Vec<PrPoint>,
}

fn score(instances: &[&EvalInstance], grid: &ThresholdGrid) -> Result<Scored> {
    let first = instances
        .first()
        .ok_or_else(|| Error::Empty("no instances to evaluate".into()))?;
    let (h, w) = (first.height, first.width);
    if instances.iter().any(|i| (i.height, i.width) != (h, w)) {
        return Err(Error::Config(
            "all evaluation maps must share one size".into(),
        ));
    }
    let maps: Vec<Vec<f64>> = instances.iter().map(|i| i.map.clone()).collect();
    let gts: Vec<Vec<bool>> = instances.iter().map(|i| i.gt.clone()).collect();
    let boxes: Vec<Box> = instances.iter().map(|i| i.gt_box).collect();
    let correct: Vec<bool> = instances
        .iter()
        .map(|i| i.predicted_class == i.class)
        .collect();
    let table = box_iou_table(&maps, h, w, &boxes, grid)?;
    let mut mba = [0.0; 3];
    let mut top1 = [0.0; 3];
    for (j, &d) in DELTAS.iter().enumerate() {
        mba[j] = mba_from_table(&table, d)?;
        top1[j] = top1_from_table(&table, &correct, d)?;
    }
    Ok(Scored {
        piou: piou(&maps, &gts, grid)?,
        pxap: pxap(&maps, &gts)?,
        mba,
        top1,
        pr: pr_curve(&maps, &gts, grid)?,
    })
}

impl MetricReport {
    pub fn compute(instances: &[EvalInstance], grid: &ThresholdGrid) -> Result<Self> {
        let all: Vec<&EvalInstance> = instances.iter().collect();
        let agg = score(&all, grid)?;
        let mut classes: Vec<usize> = instances.iter().map(|i| i.class).collect();
        classes.sort_unstable();
        classes.dedup();
        let per_class = classes
            .into_iter()
            .map(|k| {
                let subset: Vec<&EvalInstance> =
                    instances.iter().filter(|i| i.class == k).collect();
                let s = score(&subset, grid)?;
                Ok(ClassMetrics {
                    class: k,
                    instances: subset.len(),
                    piou: s.piou.piou,
                    pxap: s.pxap,
                    mba: s.mba,
                    top1: s.top1,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            instances: instances.len(),
            piou: agg.piou,
            pxap: agg.pxap,
            mba: agg.mba,
            top1: agg.top1,
            pr_curve: agg.pr,
            per_class,
        })
    }

    pub fn mba_mean(&self) -> f64 {
        self.mba.iter().sum::<f64>() / 3.0
    }

    pub fn top1_mean(&self) -> f64 {
        self.top1.iter().sum::<f64>() / 3.0
    }

    pub fn iou_curve_csv(&self) -> String {
        let mut s = String::from("tau,iou\n");
        for (t, v) in &self.piou.curve {
            writeln!(s, "{t},{v}").expect("string write");
        }
        s
    }

    pub fn pr_curve_csv(&self) -> String {
        let mut s = String::from("tau,precision,recall\n");
        for p in &self.pr_curve {
            writeln!(s, "{},{},{}", p.tau, p.precision, p.recall).expect("string write");
        }
        s
    }

    /// Per-class rows followed by an `all` row.
    pub fn class_table_csv(&self) -> String {
        let mut s = String::from("class,piou,pxap,mba30,mba50,mba70,top1_mean\n");
        for c in &self.per_class {
            let [a, b, d] = c.mba;
            writeln!(
                s,
                "{},{},{},{a},{b},{d},{}",
                c.class,
                c.piou,
                c.pxap,
                c.top1_mean()
            )
            .expect("string write");
        }
        let [a, b, d] = self.mba;
        writeln!(
            s,
            "all,{},{},{a},{b},{d},{}",
            self.piou.piou,
            self.pxap,
            self.top1_mean()
        )
        .expect("string write");
        s
    }
}

/// The threshold-free mask scored as a single operating point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskRouteReport {
    pub instances: usize,
    pub miou: f64,
    pub se: f64,
    pub pr: f64,
    pub sp: f64,
}

impl MaskRouteReport {
    pub fn compute(pred: &[Vec<bool>], gt: &[Vec<bool>]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::shape("mask_route", &[pred.len()], &[gt.len()]));
        }
        if pred.is_empty() {
            return Err(Error::Empty("no masks to evaluate".into()));
        }
        let mut c = Confusion::default();
        let mut total = 0.0;
        for (p, g) in pred.iter().zip(gt) {
            total += mask_iou(p, g);
            c.add(Confusion::of(p, g));
        }
        Ok(Self {
            instances: pred.len(),
            miou: total / pred.len() as f64,
            se: c.recall(),
            pr: c.precision(),
            sp: c.specificity(),
        })
    }
}

/// Background map scored against the complement of the object mask.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundReport {
    pub piou: PiouResult,
    pub pxap: f64,
}

impl BackgroundReport {
    pub fn compute(
        background_maps: &[Vec<f64>],
        gt: &[Vec<bool>],
        grid: &ThresholdGrid,
    ) -> Result<Self> {
        let complement: Vec<Vec<bool>> =
            gt.iter().map(|g| g.iter().map(|&b| !b).collect()).collect();
        Ok(Self {
            piou: piou(background_maps, &complement, grid)?,
            pxap: pxap(background_maps, &complement)?,
        })
    }
}

/// Scores the threshold-free mask and the background map of B-CAM.
pub fn evaluate_bcam_masks(
    pred: &[Vec<bool>],
    background_maps: &[Vec<f64>],
    gt: &[Vec<bool>],
    grid: &ThresholdGrid,
) -> Result<(MaskRouteReport, BackgroundReport)> {
    Ok((
        MaskRouteReport::compute(pred, gt)?,
        BackgroundReport::compute(background_maps, gt, grid)?,
    ))
}
