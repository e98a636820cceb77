use std::path::PathBuf;

use crate::engine::OptimConfig;
use crate::error::{Error, Result};
use crate::kv;
use crate::losses::LossWeights;
use crate::model::{BackboneConfig, ModelConfig, Variant};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub loss_weights: LossWeights,
    pub heads: usize,
    pub backbone: BackboneConfig,
    pub horizontal_flip: bool,
    pub seed: u64,
    pub checkpoint_path: Option<PathBuf>,
    /// Validate every this many epochs; 0 turns validation off.
    pub eval_every: usize,
    pub threshold_points: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Ours3,
            epochs: 20,
            batch_size: 8,
            optim: OptimConfig::default(),
            loss_weights: LossWeights::default(),
            heads: 8,
            backbone: BackboneConfig::default(),
            horizontal_flip: true,
            seed: 0,
            checkpoint_path: None,
            eval_every: 1,
            threshold_points: 201,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.heads == 0 {
            return Err(Error::Config("heads must be at least 1".into()));
        }
        if self.threshold_points < 2 {
            return Err(Error::Config("threshold_points must be at least 2".into()));
        }
        self.optim.validate()?;
        self.loss_weights.validate()?;
        self.backbone.validate()
    }

    /// Loss weights with the terms the variant does not train set to zero.
    pub fn effective_weights(&self) -> LossWeights {
        self.loss_weights.for_variant(self.variant)
    }

    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            num_classes,
            heads: self.heads,
            backbone: self.backbone.clone(),
            variant: self.variant,
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let key = kv::normalize_key(key);
        let k = key.as_str();
        match k {
            "variant" => self.variant = v.parse()?,
            "epochs" => self.epochs = kv::value(k, v)?,
            "batch_size" => self.batch_size = kv::value(k, v)?,
            "learning_rate" => self.optim.learning_rate = kv::value(k, v)?,
            "momentum" => self.optim.momentum = kv::value(k, v)?,
            "weight_decay" => self.optim.weight_decay = kv::value(k, v)?,
            "lr_decay_epochs" => self.optim.step_decay_epochs = kv::list(k, v)?,
            "lr_decay_factor" => self.optim.decay_factor = kv::value(k, v)?,
            "lambda1" => self.loss_weights.lambda1 = kv::value(k, v)?,
            "lambda2" => self.loss_weights.lambda2 = kv::value(k, v)?,
            "lambda3" => self.loss_weights.lambda3 = kv::value(k, v)?,
            "lambda4" => self.loss_weights.lambda4 = kv::value(k, v)?,
            "heads" => self.heads = kv::value(k, v)?,
            "backbone_channels" => self.backbone.stage_channels = kv::list(k, v)?,
            "blocks_per_stage" => self.backbone.blocks_per_stage = kv::value(k, v)?,
            "downsample_last_stage" => self.backbone.downsample_last_stage = kv::value(k, v)?,
            "horizontal_flip" => self.horizontal_flip = kv::value(k, v)?,
            "seed" => self.seed = kv::value(k, v)?,
            "checkpoint_path" => self.checkpoint_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "eval_every" => self.eval_every = kv::value(k, v)?,
            "threshold_points" => self.threshold_points = kv::value(k, v)?,
            _ => return Err(kv::unknown(k)),
        }
        Ok(())
    }

    pub fn from_kv(text: &str, mut base: Self) -> Result<Self> {
        for (k, v) in kv::parse(text)? {
            base.set(&k, &v)?;
        }
        base.validate()?;
        Ok(base)
    }

    pub fn to_kv(&self) -> String {
        let w = &self.loss_weights;
        let o = &self.optim;
        let ckpt = self
            .checkpoint_path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        format!(
            "variant = {}\nepochs = {}\nbatch_size = {}\nlearning_rate = {}\nmomentum = {}\n\
             weight_decay = {}\nlr_decay_epochs = {}\nlr_decay_factor = {}\nlambda1 = {}\nlambda2 = {}\n\
             lambda3 = {}\nlambda4 = {}\nheads = {}\nbackbone_channels = {}\nblocks_per_stage = {}\n\
             downsample_last_stage = {}\nhorizontal_flip = {}\nseed = {}\ncheckpoint_path = {}\n\
             eval_every = {}\nthreshold_points = {}\n",
            self.variant,
            self.epochs,
            self.batch_size,
            o.learning_rate,
            o.momentum,
            o.weight_decay,
            kv::join(&o.step_decay_epochs),
            o.decay_factor,
            w.lambda1,
            w.lambda2,
            w.lambda3,
            w.lambda4,
            self.heads,
            kv::join(&self.backbone.stage_channels),
            self.backbone.blocks_per_stage,
            self.backbone.downsample_last_stage,
            self.horizontal_flip,
            self.seed,
            ckpt,
            self.eval_every,
            self.threshold_points,
        )
    }
}
