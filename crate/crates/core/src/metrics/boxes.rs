//! Connected components, boxes and box-based accuracies.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::metrics::{threshold_mask, ThresholdGrid};

/// Axis-aligned box over inclusive pixel indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Box {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl Box {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        if x_min > x_max || y_min > y_max {
            return Err(Error::Config(format!(
                "inverted box ({x_min},{y_min},{x_max},{y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn area(&self) -> usize {
        (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)
    }
}

/// Keeps the largest 8-connected component. Among equally large components
/// the one whose first pixel comes earliest in row-major order wins.
pub fn largest_connected_component(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    assert_eq!(
        mask.len(),
        height * width,
        "mask does not match {height}×{width}"
    );
    let mut label = vec![usize::MAX; mask.len()];
    let mut best: Option<(usize, usize)> = None;
    let mut queue = VecDeque::new();
    for seed in 0..mask.len() {
        if !mask[seed] || label[seed] != usize::MAX {
            continue;
        }
        label[seed] = seed;
        queue.push_back(seed);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (r, c) = (i / width, i % width);
            for nr in r.saturating_sub(1)..=(r + 1).min(height - 1) {
                for nc in c.saturating_sub(1)..=(c + 1).min(width - 1) {
                    let j = nr * width + nc;
                    if mask[j] && label[j] == usize::MAX {
                        label[j] = seed;
                        queue.push_back(j);
                    }
                }
            }
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((seed, size));
        }
    }
    match best {
        Some((seed, _)) => label.iter().map(|&l| l == seed).collect(),
        None => vec![false; mask.len()],
    }
}

/// Tight box around the on-pixels; `None` for an empty mask.
pub fn bounding_box(mask: &[bool], height: usize, width: usize) -> Option<Box> {
    assert_eq!(
        mask.len(),
        height * width,
        "mask does not match {height}×{width}"
    );
    let mut b: Option<Box> = None;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (y, x) = (i / width, i % width);
        b = Some(match b {
            None => Box {
                x_min: x,
                y_min: y,
                x_max: x,
                y_max: y,
            },
            Some(b) => Box {
                x_min: b.x_min.min(x),
                y_min: b.y_min.min(y),
                x_max: b.x_max.max(x),
                y_max: b.y_max.max(y),
            },
        });
    }
    b
}

pub fn box_iou(a: &Box, b: &Box) -> f64 {
    let ix = (a.x_max.min(b.x_max) + 1).saturating_sub(a.x_min.max(b.x_min));
    let iy = (a.y_max.min(b.y_max) + 1).saturating_sub(a.y_min.max(b.y_min));
    let inter = ix * iy;
    inter as f64 / (a.area() + b.area() - inter) as f64
}

/// Box IoU of the largest component of `map > τ` against `gt`; 0 when
/// nothing survives the threshold.
pub fn predicted_box_iou(map: &[f64], height: usize, width: usize, tau: f64, gt: &Box) -> f64 {
    let mask = largest_connected_component(&threshold_mask(map, tau), height, width);
    bounding_box(&mask, height, width).map_or(0.0, |b| box_iou(&b, gt))
}

/// Per-image box IoUs at every grid point, `ious[t][i]`.
pub fn box_iou_table(
    maps: &[Vec<f64>],
    height: usize,
    width: usize,
    gt_boxes: &[Box],
    grid: &ThresholdGrid,
) -> Result<Vec<Vec<f64>>> {
    if maps.len() != gt_boxes.len() {
        return Err(Error::shape(
            "box_iou_table",
            &[maps.len()],
            &[gt_boxes.len()],
        ));
    }
    use rayon::prelude::*;
    let per_image: Vec<Vec<f64>> = maps
        .par_iter()
        .zip(gt_boxes)
        .map(|(m, gt)| {
            grid.values()
                .iter()
                .map(|&t| predicted_box_iou(m, height, width, t, gt))
                .collect()
        })
        .collect();
    Ok((0..grid.len())
        .map(|t| per_image.iter().map(|row| row[t]).collect())
        .collect())
}

fn max_fraction<F: Fn(usize, usize) -> bool>(table: &[Vec<f64>], n: usize, ok: F) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::Empty("threshold grid is empty".into()));
    }
    if n == 0 {
        return Err(Error::Empty("no images to score".into()));
    }
    Ok(table
        .iter()
        .enumerate()
        .map(|(t, row)| (0..row.len()).filter(|&i| ok(t, i)).count() as f64 / n as f64)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Maximal box accuracy: the best fraction of images, over the grid,
/// whose box reaches IoU ≥ δ.
pub fn mba(
    maps: &[Vec<f64>],
    height: usize,
    width: usize,
    gt_boxes: &[Box],
    delta: f64,
    grid: &ThresholdGrid,
) -> Result<f64> {
    let table = box_iou_table(maps, height, width, gt_boxes, grid)?;
    mba_from_table(&table, delta)
}

pub fn mba_from_table(table: &[Vec<f64>], delta: f64) -> Result<f64> {
    let n = table.first().map_or(0, Vec::len);
    max_fraction(table, n, |t, i| table[t][i] >= delta)
}

/// Index of the largest score; the smallest index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Top-1 localization: correct class and box IoU ≥ δ at the same τ,
/// maximized over the grid.
#[allow(clippy::too_many_arguments)]
pub fn top1_loc(
    class_scores: &[Vec<f64>],
    maps: &[Vec<f64>],
    height: usize,
    width: usize,
    gt_classes: &[usize],
    gt_boxes: &[Box],
    delta: f64,
    grid: &ThresholdGrid,
) -> Result<f64> {
    let table = box_iou_table(maps, height, width, gt_boxes, grid)?;
    let correct: Vec<bool> = class_scores
        .iter()
        .zip(gt_classes)
        .map(|(s, &c)| argmax(s) == c)
        .collect();
    top1_from_table(&table, &correct, delta)
}

pub fn top1_from_table(table: &[Vec<f64>], correct_class: &[bool], delta: f64) -> Result<f64> {
    max_fraction(table, correct_class.len(), |t, i| {
        correct_class[i] && table[t][i] >= delta
    })
}
