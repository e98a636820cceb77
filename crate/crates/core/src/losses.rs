//! Targets and classification losses for the stagger objective.
//!
//! The four score vectors of an image are supervised as
//!
//! | score  | target  | loss         |
//! |--------|---------|--------------|
//! | `s_Oo` | `y`     | object       |
//! | `s_Bo` | `1 − y` | soft margin  |
//! | `s_Ob` | `0`     | soft margin  |
//! | `s_Bb` | `1`     | soft margin  |
//!
//! The object loss is softmax cross-entropy for single-label data and the
//! multi-label soft margin otherwise. Softmax cannot express an all-zero
//! target, so the `s_Ob` term always uses the sigmoid form.

use crate::engine::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{ScoreSet, Variant};

/// Image-level label `y` over K classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageLabel {
    y: Vec<bool>,
    multi_label: bool,
}

impl ImageLabel {
    pub fn new(y: Vec<bool>, multi_label: bool) -> Result<Self> {
        let positives = y.iter().filter(|&&b| b).count();
        if positives == 0 {
            return Err(Error::Label(
                "an image must contain at least one object".into(),
            ));
        }
        if !multi_label && positives != 1 {
            return Err(Error::Label(format!(
                "single-label target has {positives} positives"
            )));
        }
        Ok(Self { y, multi_label })
    }

    pub fn single(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::Label(format!(
                "class {class} out of range for K={num_classes}"
            )));
        }
        let mut y = vec![false; num_classes];
        y[class] = true;
        Self::new(y, false)
    }

    pub fn y(&self) -> &[bool] {
        &self.y
    }

    pub fn multi_label(&self) -> bool {
        self.multi_label
    }

    pub fn num_classes(&self) -> usize {
        self.y.len()
    }

    /// First positive class.
    pub fn primary(&self) -> usize {
        self.y.iter().position(|&b| b).expect("validated non-empty")
    }
}

/// Targets of the four score vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetQuad {
    pub y_oo: Vec<f64>,
    pub y_bo: Vec<f64>,
    pub y_ob: Vec<f64>,
    pub y_bb: Vec<f64>,
}

pub fn build_targets(label: &ImageLabel) -> Result<TargetQuad> {
    let y = label.y();
    if !y.iter().any(|&b| b) {
        return Err(Error::Label("all-zero label".into()));
    }
    let k = y.len();
    Ok(TargetQuad {
        y_oo: y.iter().map(|&b| b as u8 as f64).collect(),
        y_bo: y.iter().map(|&b| (!b) as u8 as f64).collect(),
        y_ob: vec![0.0; k],
        y_bb: vec![1.0; k],
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.3,
            lambda3: 0.3,
            lambda4: 0.2,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, lambda4: f64) -> Result<Self> {
        let w = Self {
            lambda1,
            lambda2,
            lambda3,
            lambda4,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda1, self.lambda2, self.lambda3, self.lambda4]
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .as_array()
            .iter()
            .any(|l| !(l.is_finite() && *l >= 0.0))
        {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }

    /// Zeroes the terms a variant does not train.
    pub fn for_variant(&self, variant: Variant) -> Self {
        match variant {
            Variant::Cam | Variant::Ours1 => Self {
                lambda2: 0.0,
                lambda3: 0.0,
                lambda4: 0.0,
                ..*self
            },
            Variant::Ours2 => Self {
                lambda3: 0.0,
                ..*self
            },
            Variant::Ours3 => *self,
        }
    }
}

fn as_row(tape: &mut Tape, s: Var) -> Result<(Var, usize)> {
    let k = tape.value(s).numel();
    Ok((tape.reshape(s, &[1, k])?, k))
}

/// `−log softmax(s)[k*]` for a one-hot `y`.
pub fn cross_entropy(tape: &mut Tape, s: Var, y: &[bool]) -> Result<Var> {
    let (row, k) = as_row(tape, s)?;
    if y.len() != k {
        return Err(Error::shape("cross_entropy", &[k], &[y.len()]));
    }
    if y.iter().filter(|&&b| b).count() != 1 {
        return Err(Error::Label(
            "cross-entropy needs exactly one positive class".into(),
        ));
    }
    let logp = tape.log_softmax_rows(row)?;
    let onehot = tape.constant(Tensor::new(
        &[1, k],
        y.iter().map(|&b| b as u8 as f64).collect(),
    )?);
    let picked = tape.mul(logp, onehot)?;
    let total = tape.sum(picked, None)?;
    Ok(tape.scale(total, -1.0))
}

/// `(1/K) Σ_k −[t_k log σ(s_k) + (1 − t_k) log(1 − σ(s_k))]`.
pub fn multilabel_soft_margin(tape: &mut Tape, s: Var, t: &[f64]) -> Result<Var> {
    let (row, k) = as_row(tape, s)?;
    if t.len() != k {
        return Err(Error::shape("multilabel_soft_margin", &[k], &[t.len()]));
    }
    let pos = tape.constant(Tensor::new(&[1, k], t.to_vec())?);
    let neg = tape.constant(Tensor::new(&[1, k], t.iter().map(|v| 1.0 - v).collect())?);
    let log_p = tape.log_sigmoid(row);
    let flipped = tape.scale(row, -1.0);
    let log_q = tape.log_sigmoid(flipped);
    let a = tape.mul(log_p, pos)?;
    let b = tape.mul(log_q, neg)?;
    let both = tape.add(a, b)?;
    let total = tape.sum(both, None)?;
    Ok(tape.scale(total, -1.0 / k as f64))
}

/// Object loss against the all-zero target.
pub fn zero_target_object_loss(tape: &mut Tape, s: Var) -> Result<Var> {
    let k = tape.value(s).numel();
    multilabel_soft_margin(tape, s, &vec![0.0; k])
}

/// Object classification loss against the image label.
pub fn object_loss(tape: &mut Tape, s: Var, label: &ImageLabel) -> Result<Var> {
    if label.multi_label() {
        let t: Vec<f64> = label.y().iter().map(|&b| b as u8 as f64).collect();
        multilabel_soft_margin(tape, s, &t)
    } else {
        cross_entropy(tape, s, label.y())
    }
}

/// Weighted combination of the four unweighted terms.
#[derive(Clone, Copy, Debug)]
pub struct ScLoss {
    pub total: Var,
    pub terms: [Var; 4],
    /// `λ1·L_O(s_Oo, y) + λ2·L_B(s_Bo, 1 − y)`
    pub object_part: Var,
    /// `λ3·L_O(s_Ob, 0) + λ4·L_B(s_Bb, 1)`
    pub background_part: Var,
}

/// Combines four scalar terms as `(λ1·l1 + λ2·l2) + (λ3·l3 + λ4·l4)`.
pub fn combine_terms(tape: &mut Tape, terms: [Var; 4], w: &LossWeights) -> Result<ScLoss> {
    let [l1, l2, l3, l4] = terms;
    let a = tape.scale(l1, w.lambda1);
    let b = tape.scale(l2, w.lambda2);
    let c = tape.scale(l3, w.lambda3);
    let d = tape.scale(l4, w.lambda4);
    let object_part = tape.add(a, b)?;
    let background_part = tape.add(c, d)?;
    let total = tape.add(object_part, background_part)?;
    Ok(ScLoss {
        total,
        terms,
        object_part,
        background_part,
    })
}

/// Scalar form of [`combine_terms`], same association order.
pub fn weighted_sum(terms: [f64; 4], w: &LossWeights) -> f64 {
    (w.lambda1 * terms[0] + w.lambda2 * terms[1]) + (w.lambda3 * terms[2] + w.lambda4 * terms[3])
}

/// The four unweighted terms for one image.
pub fn stagger_terms(tape: &mut Tape, scores: &ScoreSet, label: &ImageLabel) -> Result<[Var; 4]> {
    let targets = build_targets(label)?;
    Ok([
        object_loss(tape, scores.s_oo, label)?,
        multilabel_soft_margin(tape, scores.s_bo, &targets.y_bo)?,
        zero_target_object_loss(tape, scores.s_ob)?,
        multilabel_soft_margin(tape, scores.s_bb, &targets.y_bb)?,
    ])
}

pub fn stagger_classification_loss(
    tape: &mut Tape,
    scores: &ScoreSet,
    label: &ImageLabel,
    weights: &LossWeights,
) -> Result<ScLoss> {
    let terms = stagger_terms(tape, scores, label)?;
    combine_terms(tape, terms, weights)
}
