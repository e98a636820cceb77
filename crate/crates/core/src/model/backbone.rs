use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::engine::{PadMode, ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::FeatureMap;

const KERNEL: usize = 3;

/// Shape of the toy residual feature extractor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub downsample_last_stage: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            stage_channels: vec![16, 32, 64],
            blocks_per_stage: 1,
            downsample_last_stage: false,
        }
    }
}

impl BackboneConfig {
    pub fn out_channels(&self) -> usize {
        *self.stage_channels.last().expect("validated non-empty")
    }

    fn downsamples(&self, stage: usize) -> bool {
        stage + 1 < self.stage_channels.len() || self.downsample_last_stage
    }

    /// Number of 2× spatial reductions applied to the input.
    pub fn reductions(&self) -> usize {
        (0..self.stage_channels.len())
            .filter(|&s| self.downsamples(s))
            .count()
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        let f = 1 << self.reductions();
        (height / f, width / f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 3 {
            return Err(Error::Config(format!(
                "backbone expects 3 input channels, got {}",
                self.in_channels
            )));
        }
        if self.stage_channels.is_empty() || self.stage_channels.contains(&0) {
            return Err(Error::Config(format!(
                "invalid stage channels {:?}",
                self.stage_channels
            )));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::Config("blocks_per_stage must be positive".into()));
        }
        let (h, w) = self.output_size(64, 64);
        if h < 4 || w < 4 {
            return Err(Error::Config(format!(
                "64×64 input reduces to {h}×{w}, below 4×4"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Stage {
    downsample: bool,
    entry: Conv,
    blocks: Vec<Conv>,
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    kernel: ParamId,
    bias: ParamId,
}

impl Conv {
    fn new<R: Rng>(
        params: &mut ParamSet,
        name: String,
        c_out: usize,
        c_in: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let kernel = params.add(name.clone(), he_normal(c_out, c_in, gain, rng));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Self { kernel, bias }
    }

    fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let c = tape.conv2d_padded(x, vars[self.kernel.index()], 1, 1, PadMode::Replicate)?;
        tape.add_channel_bias(c, vars[self.bias.index()])
    }
}

/// Residual conv stack. Each stage optionally halves the resolution with
/// 2×2 mean pooling, applies a 3×3 conv + ReLU, then `blocks_per_stage`
/// residual units `x ← relu(x + conv(x))`. Every conv carries a per-channel
/// bias and pads by replicating edge pixels.
#[derive(Clone, Debug)]
pub struct Backbone {
    config: BackboneConfig,
    stages: Vec<Stage>,
}

impl Backbone {
    pub fn new<R: Rng>(config: BackboneConfig, params: &mut ParamSet, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::new();
        let mut c_in = config.in_channels;
        for (s, &c_out) in config.stage_channels.iter().enumerate() {
            let entry = Conv::new(
                params,
                format!("backbone.s{s}.entry"),
                c_out,
                c_in,
                1.0,
                rng,
            );
            let blocks = (0..config.blocks_per_stage)
                .map(|b| {
                    Conv::new(
                        params,
                        format!("backbone.s{s}.block{b}"),
                        c_out,
                        c_out,
                        0.5,
                        rng,
                    )
                })
                .collect();
            stages.push(Stage {
                downsample: config.downsamples(s),
                entry,
                blocks,
            });
            c_in = c_out;
        }
        Ok(Self { config, stages })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.stages
            .iter()
            .flat_map(|s| std::iter::once(s.entry).chain(s.blocks.iter().copied()))
            .flat_map(|c| [c.kernel, c.bias])
    }
}

fn he_normal<R: Rng>(c_out: usize, c_in: usize, gain: f64, rng: &mut R) -> Tensor {
    let fan_in = (c_in * KERNEL * KERNEL) as f64;
    let std = gain * (2.0 / fan_in).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(&[c_out, c_in, KERNEL, KERNEL], |_| normal.sample(rng))
}

/// Pixel-level features `Z` (C×N) of one image.
///
/// Accepts a `3×H×W` image with values in [0, 1], or a batch of one
/// (`1×3×H×W`). Values are centered to [-1, 1] before the first stage.
pub fn extract_features(
    tape: &mut Tape,
    backbone: &Backbone,
    vars: &[Var],
    image: &Tensor,
) -> Result<FeatureMap> {
    let shape = match image.shape() {
        [1, c, h, w] => [*c, *h, *w],
        [c, h, w] => [*c, *h, *w],
        other => return Err(Error::shape("extract_features", other, &[3, 0, 0])),
    };
    let f = 1 << backbone.config.reductions();
    if shape[0] != backbone.config.in_channels || shape[1] % f != 0 || shape[2] % f != 0 {
        return Err(Error::Config(format!(
            "image of shape {:?} does not fit a backbone reducing by {f} with {} input channels",
            image.shape(),
            backbone.config.in_channels
        )));
    }
    let centered = Tensor::new(&shape, image.data().iter().map(|v| 2.0 * v - 1.0).collect())?;
    let mut h = tape.constant(centered);
    for stage in &backbone.stages {
        if stage.downsample {
            h = tape.avg_pool2(h)?;
        }
        let c = stage.entry.apply(tape, vars, h)?;
        h = tape.relu(c);
        for b in &stage.blocks {
            let c = b.apply(tape, vars, h)?;
            let sum = tape.add(h, c)?;
            h = tape.relu(sum);
        }
    }
    let out = tape.shape(h).to_vec();
    let (channels, height, width) = (out[0], out[1], out[2]);
    let data = tape.reshape(h, &[channels, height * width])?;
    Ok(FeatureMap {
        channels,
        height,
        width,
        data,
    })
}
