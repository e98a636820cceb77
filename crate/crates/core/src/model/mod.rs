//! Feature extractor, B-CAM heads, inference-time localization and the CAM baseline.

mod backbone;
pub mod checkpoint;
mod heads;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

pub use backbone::{extract_features, Backbone, BackboneConfig};
pub use heads::{
    aggregate, binary_mask, cam_baseline, compute_priors, estimate_scores, gap,
    localization_scores, prior, score, Priors, ScoreSet,
};

use crate::engine::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Pixel-level features `Z`, stored on a tape as a `C×N` matrix with `N = H·W`.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Var,
}

impl FeatureMap {
    pub fn positions(&self) -> usize {
        self.height * self.width
    }
}

/// Ablation wiring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// GAP aggregation with a single classifier.
    Cam,
    /// Object aggregator feeding the object classifier only.
    Ours1,
    /// Both aggregators and both classifiers, no stagger path.
    Ours2,
    /// Full model with the four-term stagger loss.
    Ours3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Cam, Variant::Ours1, Variant::Ours2, Variant::Ours3];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cam => "cam",
            Variant::Ours1 => "ours1",
            Variant::Ours2 => "ours2",
            Variant::Ours3 => "ours3",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Variant::Cam => 0,
            Variant::Ours1 => 1,
            Variant::Ours2 => 2,
            Variant::Ours3 => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn has_background_branch(self) -> bool {
        matches!(self, Variant::Ours2 | Variant::Ours3)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cam" => Ok(Variant::Cam),
            "ours1" | "ours1_oa" => Ok(Variant::Ours1),
            "ours2" | "ours2_oa_ba_bc" => Ok(Variant::Ours2),
            "ours3" | "ours3_full" | "bcam" => Ok(Variant::Ours3),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub heads: usize,
    pub backbone: BackboneConfig,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn channels(&self) -> usize {
        self.backbone.out_channels()
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.num_classes < 1 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if self.heads < 1 {
            return Err(Error::Config("heads must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter handles of the classification heads.
#[derive(Clone, Copy, Debug)]
pub enum Heads {
    Cam {
        w: ParamId,
    },
    Bcam {
        w1: ParamId,
        w2: Option<ParamId>,
        w_o: ParamId,
        w_b: Option<ParamId>,
    },
}

/// Recorded forward pass of one image.
#[derive(Clone, Copy, Debug)]
pub enum Forward {
    Cam {
        features: FeatureMap,
        scores: Var,
    },
    ObjectOnly {
        features: FeatureMap,
        prior: Var,
        z_o: Var,
        s_oo: Var,
    },
    Full {
        features: FeatureMap,
        priors: Priors,
        z_o: Var,
        z_b: Var,
        scores: ScoreSet,
    },
}

impl Forward {
    pub fn features(&self) -> &FeatureMap {
        match self {
            Forward::Cam { features, .. }
            | Forward::ObjectOnly { features, .. }
            | Forward::Full { features, .. } => features,
        }
    }

    /// Scores used for image classification: `s_Oo`, or the GAP head for CAM.
    pub fn class_scores(&self) -> Var {
        match self {
            Forward::Cam { scores, .. } => *scores,
            Forward::ObjectOnly { s_oo, .. } => *s_oo,
            Forward::Full { scores, .. } => scores.s_oo,
        }
    }
}

/// Object score map, background score map and the binary mask derived from them.
#[derive(Clone, Debug)]
pub struct LocalizationResult {
    pub s_o: Tensor,
    pub s_b: Tensor,
    pub mask: Vec<bool>,
    pub height: usize,
    pub width: usize,
}

/// Everything the evaluator needs from one test image.
#[derive(Clone, Debug)]
pub struct Inference {
    pub class_scores: Vec<f64>,
    /// `S_O` (or the CAM map), K×N.
    pub object_map: Tensor,
    /// `S_B`, K×N, when the variant has a background classifier.
    pub background_map: Option<Tensor>,
    /// Mean over heads of the object prior (length N).
    pub object_prior: Option<Vec<f64>>,
    pub background_prior: Option<Vec<f64>>,
    pub height: usize,
    pub width: usize,
}

impl Inference {
    pub fn localization(&self) -> Option<LocalizationResult> {
        let s_b = self.background_map.clone()?;
        let mask = binary_mask(&self.object_map, &s_b).ok()?;
        Some(LocalizationResult {
            s_o: self.object_map.clone(),
            s_b,
            mask,
            height: self.height,
            width: self.width,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    backbone: Backbone,
    heads: Heads,
}

fn uniform_init<R: Rng>(k: usize, c: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (c as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(&[k, c], |_| dist.sample(rng))
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(config, &mut rng)
    }

    /// Backbone weights are He-normal; `W1`, `W2` start at exactly zero;
    /// `W_O`, `W_B` (and the CAM classifier) are uniform in ±1/√C.
    pub fn with_rng<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let backbone = Backbone::new(config.backbone.clone(), &mut params, rng)?;
        let (k, c, m) = (config.num_classes, config.channels(), config.heads);
        let heads = match config.variant {
            Variant::Cam => Heads::Cam {
                w: params.add("cam.w", uniform_init(k, c, rng)),
            },
            v => {
                let w1 = params.add("mea.w1", Tensor::zeros(&[m, c]));
                let w2 = v
                    .has_background_branch()
                    .then(|| params.add("mea.w2", Tensor::zeros(&[m, c])));
                let w_o = params.add("sse.w_o", uniform_init(k, c, rng));
                let w_b = v
                    .has_background_branch()
                    .then(|| params.add("sse.w_b", uniform_init(k, c, rng)));
                Heads::Bcam { w1, w2, w_o, w_b }
            }
        };
        Ok(Self {
            config,
            params,
            backbone,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn heads(&self) -> Heads {
        self.heads
    }

    /// Records the forward pass of one image on `tape`, reading weights from `vars`
    /// (one variable per parameter, in [`ParamSet`] order).
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], image: &Tensor) -> Result<Forward> {
        if vars.len() != self.params.len() {
            return Err(Error::shape(
                "Model::forward",
                &[vars.len()],
                &[self.params.len()],
            ));
        }
        let features = extract_features(tape, &self.backbone, vars, image)?;
        let v = |id: ParamId| vars[id.index()];
        Ok(match self.heads {
            Heads::Cam { w } => {
                let (scores, _) = cam_baseline(tape, &features, v(w))?;
                Forward::Cam { features, scores }
            }
            Heads::Bcam {
                w1, w2: None, w_o, ..
            } => {
                let a = prior(tape, &features, v(w1))?;
                let z_o = aggregate(tape, &features, a)?;
                let s_oo = score(tape, v(w_o), z_o)?;
                Forward::ObjectOnly {
                    features,
                    prior: a,
                    z_o,
                    s_oo,
                }
            }
            Heads::Bcam {
                w1,
                w2: Some(w2),
                w_o,
                w_b,
            } => {
                let w_b = w_b.ok_or_else(|| {
                    Error::Config("background prior without background classifier".into())
                })?;
                let priors = compute_priors(tape, &features, v(w1), v(w2))?;
                let z_o = aggregate(tape, &features, priors.object)?;
                let z_b = aggregate(tape, &features, priors.background)?;
                let scores = estimate_scores(tape, z_o, z_b, v(w_o), v(w_b))?;
                Forward::Full {
                    features,
                    priors,
                    z_o,
                    z_b,
                    scores,
                }
            }
        })
    }

    /// Inference pass: class scores, pixel-level score maps and prior strengths.
    pub fn infer(&self, image: &Tensor) -> Result<Inference> {
        let mut tape = Tape::new();
        let vars = tape.bind_frozen(&self.params);
        let fwd = self.forward(&mut tape, &vars, image)?;
        let features = *fwd.features();
        let z = tape.value(features.data).clone();
        let class_scores = tape.value(fwd.class_scores()).data().to_vec();
        let head_mean = |tape: &Tape, a: Var| -> Vec<f64> {
            let t = tape.value(a);
            let (m, n) = (t.shape()[0], t.shape()[1]);
            (0..n)
                .map(|i| (0..m).map(|h| t.at2(h, i)).sum::<f64>() / m as f64)
                .collect()
        };
        let (object_map, background_map, object_prior, background_prior) = match (self.heads, fwd) {
            (Heads::Cam { w }, _) => (self.params.value(w).matmul(&z)?, None, None, None),
            (
                Heads::Bcam {
                    w_o,
                    w_b: Some(w_b),
                    ..
                },
                Forward::Full { priors, .. },
            ) => {
                let (so, sb) =
                    localization_scores(&z, self.params.value(w_o), self.params.value(w_b))?;
                (
                    so,
                    Some(sb),
                    Some(head_mean(&tape, priors.object)),
                    Some(head_mean(&tape, priors.background)),
                )
            }
            (Heads::Bcam { w_o, .. }, Forward::ObjectOnly { prior, .. }) => (
                self.params.value(w_o).matmul(&z)?,
                None,
                Some(head_mean(&tape, prior)),
                None,
            ),
            _ => unreachable!("forward output always matches the head layout"),
        };
        Ok(Inference {
            class_scores,
            object_map,
            background_map,
            object_prior,
            background_prior,
            height: features.height,
            width: features.width,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(variant: Variant) -> ModelConfig {
        ModelConfig {
            num_classes: 3,
            heads: 4,
            backbone: BackboneConfig {
                stage_channels: vec![4, 8, 8],
                ..BackboneConfig::default()
            },
            variant,
        }
    }

    fn image() -> Tensor {
        Tensor::from_fn(&[3, 32, 32], |i| ((i * 7919) % 101) as f64 / 100.0)
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("ours1_OA".parse::<Variant>().unwrap(), Variant::Ours1);
        assert_eq!("ours2_OA_BA_BC".parse::<Variant>().unwrap(), Variant::Ours2);
        assert_eq!("ours3_full".parse::<Variant>().unwrap(), Variant::Ours3);
        assert!("ours4".parse::<Variant>().is_err());
    }

    #[test]
    fn cam_has_no_prior_weights() {
        let m = Model::new(cfg(Variant::Cam), 0).unwrap();
        assert!(m.params().find("mea.w1").is_none());
        assert!(m.params().find("mea.w2").is_none());
        let m1 = Model::new(cfg(Variant::Ours1), 0).unwrap();
        assert!(m1.params().find("mea.w1").is_some());
        assert!(m1.params().find("sse.w_b").is_none());
    }

    #[test]
    fn prior_weights_start_at_zero() {
        let m = Model::new(cfg(Variant::Ours3), 5).unwrap();
        for name in ["mea.w1", "mea.w2"] {
            let w = m.params().value(m.params().find(name).unwrap());
            assert!(w.data().iter().all(|&v| v == 0.0));
        }
        let bound = 1.0 / 8f64.sqrt();
        for name in ["sse.w_o", "sse.w_b"] {
            let w = m.params().value(m.params().find(name).unwrap());
            assert!(w.data().iter().all(|&v| v.abs() <= bound));
            assert!(w.data().iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn shared_weights_match_across_variants() {
        let a = Model::new(cfg(Variant::Ours1), 11).unwrap();
        let b = Model::new(cfg(Variant::Ours3), 11).unwrap();
        let c = Model::new(cfg(Variant::Cam), 11).unwrap();
        let get = |m: &Model, n: &str| m.params().value(m.params().find(n).unwrap()).clone();
        assert_eq!(get(&a, "sse.w_o"), get(&b, "sse.w_o"));
        assert_eq!(get(&c, "cam.w"), get(&b, "sse.w_o"));
        assert_eq!(get(&a, "backbone.s2.block0"), get(&c, "backbone.s2.block0"));
    }

    #[test]
    fn zero_init_bcam_matches_cam_scores() {
        let b = Model::new(cfg(Variant::Ours3), 2).unwrap();
        let c = Model::new(cfg(Variant::Cam), 2).unwrap();
        let img = image();
        let ib = b.infer(&img).unwrap();
        let ic = c.infer(&img).unwrap();
        assert_eq!(ib.class_scores, ic.class_scores);
        assert_eq!(ib.object_map, ic.object_map);
    }

    #[test]
    fn inference_shapes() {
        let m = Model::new(cfg(Variant::Ours3), 1).unwrap();
        let inf = m.infer(&image()).unwrap();
        assert_eq!((inf.height, inf.width), (8, 8));
        assert_eq!(inf.object_map.shape(), &[3, 64]);
        assert_eq!(inf.background_map.as_ref().unwrap().shape(), &[3, 64]);
        let loc = inf.localization().unwrap();
        assert_eq!(loc.mask.len(), 3 * 64);
        let prior = inf.object_prior.unwrap();
        assert!(prior.iter().all(|&p| (p - 1.0 / 64.0).abs() < 1e-15));
        let m1 = Model::new(cfg(Variant::Ours1), 1).unwrap();
        assert!(m1.infer(&image()).unwrap().localization().is_none());
    }
}
