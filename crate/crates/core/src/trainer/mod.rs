//! Training loop, checkpoint selection and evaluation.

mod config;
mod eval;

use std::fmt::Write as _;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::engine::{grad_check, sgd_step, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{
    combine_terms, multilabel_soft_margin, object_loss, stagger_classification_loss, ImageLabel,
    LossWeights, ScLoss,
};
use crate::metrics::ThresholdGrid;
use crate::model::{
    aggregate, checkpoint, compute_priors, estimate_scores, FeatureMap, Forward, Model, Variant,
};

pub use config::TrainConfig;
pub use eval::{evaluate, sweep_piou, Evaluation};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub terms: [f64; 4],
    /// Set on the last step of an epoch that ran validation.
    pub val_piou: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: f64,
    pub terms: [f64; 4],
    /// Mean of `λ1·l1 + λ2·l2`.
    pub object_part: f64,
    /// Mean of `λ3·l3 + λ4·l4`.
    pub background_part: f64,
    pub val_piou: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_model: Model,
    /// Model of the epoch with the best validation pIoU, or the final model
    /// when validation is off.
    pub best_model: Model,
    pub best_epoch: usize,
    pub best_val_piou: Option<f64>,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// `epoch,step,loss,l1,l2,l3,l4,val_piou`, one row per step.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,step,loss,l1,l2,l3,l4,val_piou\n");
        for r in &self.steps {
            let [a, b, c, d] = r.terms;
            let v = r.val_piou.map(|v| v.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{},{a},{b},{c},{d},{v}", r.epoch, r.step, r.loss)
                .expect("string write");
        }
        s
    }
}

/// Mirrors a `3×H×W` image left to right.
pub fn flip_horizontal(image: &Tensor) -> Tensor {
    let s = image.shape();
    let (h, w) = (s[1], s[2]);
    let d = image.data();
    Tensor::from_fn(s, |i| {
        let plane = i / (h * w);
        let r = (i / w) % h;
        let c = i % w;
        d[plane * h * w + r * w + (w - 1 - c)]
    })
}

fn batch_mean(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(tape.scale(acc, 1.0 / vars.len() as f64))
}

/// The four unweighted loss terms of one image; terms the variant does not
/// train are recorded as constant zeros.
fn image_terms(
    tape: &mut Tape,
    fwd: &Forward,
    label: &ImageLabel,
    variant: Variant,
) -> Result<[Var; 4]> {
    let zero = |t: &mut Tape| t.constant(Tensor::scalar(0.0));
    match (fwd, variant) {
        (Forward::Full { scores, .. }, Variant::Ours2) => {
            let l1 = object_loss(tape, scores.s_oo, label)?;
            let y_bo: Vec<f64> = label.y().iter().map(|&b| (!b) as u8 as f64).collect();
            let l2 = multilabel_soft_margin(tape, scores.s_bo, &y_bo)?;
            let ones = vec![1.0; label.num_classes()];
            let l4 = multilabel_soft_margin(tape, scores.s_bb, &ones)?;
            Ok([l1, l2, zero(tape), l4])
        }
        (Forward::Full { scores, .. }, _) => crate::losses::stagger_terms(tape, scores, label),
        (f, _) => {
            let l1 = object_loss(tape, f.class_scores(), label)?;
            Ok([l1, zero(tape), zero(tape), zero(tape)])
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn batch_loss(
    tape: &mut Tape,
    vars: &[Var],
    model: &Model,
    train: &[Sample],
    labels: &[ImageLabel],
    chunk: &[usize],
    flips: &[bool],
    variant: Variant,
    weights: &LossWeights,
) -> Result<([Var; 4], ScLoss)> {
    let mut per_image: Vec<[Var; 4]> = Vec::with_capacity(chunk.len());
    for (&i, &flip) in chunk.iter().zip(flips) {
        let image = if flip {
            flip_horizontal(&train[i].image)
        } else {
            train[i].image.clone()
        };
        let fwd = model.forward(tape, vars, &image)?;
        per_image.push(image_terms(tape, &fwd, &labels[i], variant)?);
    }
    let mut terms = [vars[0]; 4];
    for (j, t) in terms.iter_mut().enumerate() {
        let col: Vec<Var> = per_image.iter().map(|p| p[j]).collect();
        *t = batch_mean(tape, &col)?;
    }
    let loss = combine_terms(tape, terms, weights)?;
    Ok((terms, loss))
}

fn param_norms(model: &Model) -> String {
    model
        .params()
        .norms()
        .iter()
        .map(|(n, v)| format!("{n}={v:.4e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn num_classes(samples: &[Sample]) -> Result<usize> {
    let k = samples
        .first()
        .ok_or_else(|| Error::Empty("training set is empty".into()))?
        .num_classes();
    if samples.iter().any(|s| s.num_classes() != k) {
        return Err(Error::Config(
            "samples disagree on the number of classes".into(),
        ));
    }
    Ok(k)
}

/// Trains a fresh model on `train`, selecting the checkpoint with the best
/// validation pIoU on `val`.
pub fn train(config: &TrainConfig, train: &[Sample], val: &[Sample]) -> Result<TrainOutcome> {
    config.validate()?;
    let k = num_classes(train)?;
    let model = Model::new(config.model_config(k), config.seed)?;
    train_model(config, model, train, val)
}

/// Continues training `model` in place of a fresh initialization.
pub fn train_model(
    config: &TrainConfig,
    mut model: Model,
    train: &[Sample],
    val: &[Sample],
) -> Result<TrainOutcome> {
    config.validate()?;
    let k = num_classes(train)?;
    if model.config().num_classes != k {
        return Err(Error::Config(format!(
            "model has {} classes, training data {k}",
            model.config().num_classes
        )));
    }
    let labels = train
        .iter()
        .map(Sample::image_label)
        .collect::<Result<Vec<_>>>()?;
    let weights = config.effective_weights();
    let grid = ThresholdGrid::uniform(config.threshold_points)?;
    let validate = config.eval_every > 0 && !val.is_empty();

    // the data stream has its own generator so initialization and sampling
    // stay independent
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_DA7A);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 7];
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let diverged = |what: String, model: &Model| {
                Error::Diverged(format!(
                    "{what} at epoch {epoch}, batch {b} (step {step}); parameter norms: {}",
                    param_norms(model)
                ))
            };
            let flips: Vec<bool> = chunk
                .iter()
                .map(|_| config.horizontal_flip && rng.random_bool(0.5))
                .collect();
            let mut tape = Tape::new();
            let vars = tape.bind(model.params());
            let (terms, loss) = match batch_loss(
                &mut tape,
                &vars,
                &model,
                train,
                &labels,
                chunk,
                &flips,
                config.variant,
                &weights,
            ) {
                Err(Error::NonFinite(op)) => {
                    return Err(diverged(format!("non-finite input to {op}"), &model))
                }
                other => other?,
            };
            let total = tape.value(loss.total).item();
            if !total.is_finite() {
                return Err(diverged(format!("loss {total}"), &model));
            }
            model.params_mut().zero_grad();
            tape.backward(loss.total, model.params_mut())?;
            sgd_step(model.params_mut(), &config.optim, epoch)?;

            let values = terms.map(|t| tape.value(t).item());
            let parts = [
                tape.value(loss.object_part).item(),
                tape.value(loss.background_part).item(),
            ];
            for (s, v) in sums.iter_mut().zip([
                total, values[0], values[1], values[2], values[3], parts[0], parts[1],
            ]) {
                *s += v;
            }
            batches += 1;
            steps.push(StepRecord {
                epoch,
                step,
                loss: total,
                terms: values,
                val_piou: None,
            });
            step += 1;
        }

        let val_piou =
            if validate && ((epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs) {
                let v = sweep_piou(&model, val, &grid)?;
                if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                    best = Some((v, epoch, model.clone()));
                    if let Some(path) = &config.checkpoint_path {
                        checkpoint::save(&model, path)?;
                    }
                }
                steps.last_mut().expect("at least one batch").val_piou = Some(v);
                Some(v)
            } else {
                None
            };
        let n = batches as f64;
        let rec = EpochRecord {
            epoch,
            learning_rate: config.optim.lr_at(epoch),
            loss: sums[0] / n,
            terms: [sums[1] / n, sums[2] / n, sums[3] / n, sums[4] / n],
            object_part: sums[5] / n,
            background_part: sums[6] / n,
            val_piou,
        };
        info!(
            "epoch {epoch}: loss {:.5} (object {:.5}, background {:.5}) terms [{:.4}, {:.4}, {:.4}, {:.4}] val pIoU {}",
            rec.loss,
            rec.object_part,
            rec.background_part,
            rec.terms[0],
            rec.terms[1],
            rec.terms[2],
            rec.terms[3],
            val_piou.map_or("-".into(), |v| format!("{v:.4}"))
        );
        epochs.push(rec);
    }

    let (best_val_piou, best_epoch, best_model) = match best {
        Some((v, e, m)) => (Some(v), e, m),
        None => {
            if let Some(path) = &config.checkpoint_path {
                checkpoint::save(&model, path)?;
            }
            (None, config.epochs - 1, model.clone())
        }
    };
    Ok(TrainOutcome {
        final_model: model,
        best_model,
        best_epoch,
        best_val_piou,
        steps,
        epochs,
    })
}

/// Stagger loss of the heads alone on fixed features `z` (`C×N`), for
/// gradient checking. `w1`, `w2` are `M×C`; `w_o`, `w_b` are `K×C`.
#[allow(clippy::too_many_arguments)]
pub fn head_objective(
    tape: &mut Tape,
    z: Var,
    height: usize,
    width: usize,
    [w1, w2, w_o, w_b]: [Var; 4],
    label: &ImageLabel,
    weights: &LossWeights,
) -> Result<Var> {
    let channels = tape.shape(z)[0];
    let features = FeatureMap {
        channels,
        height,
        width,
        data: z,
    };
    let priors = compute_priors(tape, &features, w1, w2)?;
    let z_o = aggregate(tape, &features, priors.object)?;
    let z_b = aggregate(tape, &features, priors.background)?;
    let scores = estimate_scores(tape, z_o, z_b, w_o, w_b)?;
    Ok(stagger_classification_loss(tape, &scores, label, weights)?.total)
}

/// Finite-difference check of the full stagger loss on a toy head: two
/// classes, `C = 8`, a 4×4 feature map and two prior heads, with features and
/// all four head matrices drawn uniformly from [-1, 1]. Returns the maximum
/// relative error over every input entry.
pub fn toy_grad_check(seed: u64, eps: f64) -> Result<f64> {
    const CLASSES: usize = 2;
    const CHANNELS: usize = 8;
    const SIDE: usize = 4;
    const HEADS: usize = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label = ImageLabel::single(rng.random_range(0..CLASSES), CLASSES)?;
    let mut rand = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    let params = vec![
        rand(&[CHANNELS, SIDE * SIDE]),
        rand(&[HEADS, CHANNELS]),
        rand(&[HEADS, CHANNELS]),
        rand(&[CLASSES, CHANNELS]),
        rand(&[CLASSES, CHANNELS]),
    ];
    let weights = LossWeights::default();
    grad_check(
        |t, v| {
            head_objective(
                t,
                v[0],
                SIDE,
                SIDE,
                [v[1], v[2], v[3], v[4]],
                &label,
                &weights,
            )
        },
        &params,
        eps,
    )
}
