use rayon::prelude::*;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{
    argmax, bounding_box, normalize_map, piou, threshold_mask, upsample_bilinear, BackgroundReport,
    EvalInstance, MaskRouteReport, MetricReport, ThresholdGrid,
};
use crate::model::{Inference, Model};

/// Full evaluation of one model on one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Threshold sweep over the normalized object map.
    pub sweep: MetricReport,
    /// Threshold-free mask `S_O > S_B`; absent without a background classifier.
    pub mask_route: Option<MaskRouteReport>,
    /// `S_B` scored against `1 − Y_k`.
    pub background: Option<BackgroundReport>,
    /// `S_B` scored against `Y_k` as if it were an object map.
    pub background_as_object_piou: Option<f64>,
    pub classification_accuracy: f64,
}

/// Per-instance maps resized to the image and ready for scoring.
struct Scored {
    instance: EvalInstance,
    mask: Option<Vec<bool>>,
    background: Option<Vec<f64>>,
}

fn resize(row: &[f64], inf: &Inference, h: usize, w: usize) -> Vec<f64> {
    if (inf.height, inf.width) == (h, w) {
        row.to_vec()
    } else {
        upsample_bilinear(row, inf.height, inf.width, h, w)
    }
}

fn check_classes(model: &Model, samples: &[Sample]) -> Result<()> {
    let k = model.config().num_classes;
    if let Some(s) = samples.iter().find(|s| s.num_classes() != k) {
        return Err(Error::Config(format!(
            "model has {k} classes but a sample has {}",
            s.num_classes()
        )));
    }
    Ok(())
}

fn score_sample(model: &Model, s: &Sample) -> Result<(Vec<Scored>, bool)> {
    let inf = model.infer(&s.image)?;
    let (h, w) = (s.height(), s.width());
    let predicted = argmax(&inf.class_scores);
    let correct = s.label[predicted];
    let mut out = Vec::new();
    for k in s.present_classes() {
        let gt = s.masks[k].clone();
        let object = resize(inf.object_map.row(k), &inf, h, w);
        let (mask, background) = match &inf.background_map {
            Some(sb) => {
                let b = resize(sb.row(k), &inf, h, w);
                let diff: Vec<f64> = object.iter().zip(&b).map(|(o, b)| o - b).collect();
                (Some(threshold_mask(&diff, 0.0)), Some(normalize_map(&b)))
            }
            None => (None, None),
        };
        out.push(Scored {
            instance: EvalInstance {
                class: k,
                predicted_class: predicted,
                map: normalize_map(&object),
                gt_box: bounding_box(&gt, h, w).expect("present class has pixels"),
                gt,
                height: h,
                width: w,
            },
            mask,
            background,
        });
    }
    Ok((out, correct))
}

fn score_all(model: &Model, samples: &[Sample]) -> Result<(Vec<Scored>, f64)> {
    check_classes(model, samples)?;
    if samples.is_empty() {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    let per: Vec<(Vec<Scored>, bool)> = samples
        .par_iter()
        .map(|s| score_sample(model, s))
        .collect::<Result<_>>()?;
    let accuracy = per.iter().filter(|p| p.1).count() as f64 / samples.len() as f64;
    Ok((per.into_iter().flat_map(|p| p.0).collect(), accuracy))
}

/// Evaluates the sweep route, the threshold-free mask route and the
/// background map.
pub fn evaluate(model: &Model, samples: &[Sample], grid: &ThresholdGrid) -> Result<Evaluation> {
    let (scored, classification_accuracy) = score_all(model, samples)?;
    let instances: Vec<EvalInstance> = scored.iter().map(|s| s.instance.clone()).collect();
    let sweep = MetricReport::compute(&instances, grid)?;
    let gts: Vec<Vec<bool>> = instances.iter().map(|i| i.gt.clone()).collect();
    let (mask_route, background, background_as_object_piou) = if scored[0].mask.is_some() {
        let masks: Vec<Vec<bool>> = scored
            .iter()
            .map(|s| s.mask.clone().expect("uniform variant"))
            .collect();
        let bg: Vec<Vec<f64>> = scored
            .iter()
            .map(|s| s.background.clone().expect("uniform variant"))
            .collect();
        (
            Some(MaskRouteReport::compute(&masks, &gts)?),
            Some(BackgroundReport::compute(&bg, &gts, grid)?),
            Some(piou(&bg, &gts, grid)?.piou),
        )
    } else {
        (None, None, None)
    };
    Ok(Evaluation {
        sweep,
        mask_route,
        background,
        background_as_object_piou,
        classification_accuracy,
    })
}

/// Sweep-route pIoU alone, used for checkpoint selection.
pub fn sweep_piou(model: &Model, samples: &[Sample], grid: &ThresholdGrid) -> Result<f64> {
    let (scored, _) = score_all(model, samples)?;
    let maps: Vec<Vec<f64>> = scored.iter().map(|s| s.instance.map.clone()).collect();
    let gts: Vec<Vec<bool>> = scored.iter().map(|s| s.instance.gt.clone()).collect();
    Ok(piou(&maps, &gts, grid)?.piou)
}
