//! Synthetic scenes whose background texture is correlated with the object
//! class, with exact per-class pixel masks.

mod manifest;
pub mod pnm;
pub mod scene;

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::kv;
use crate::losses::ImageLabel;

pub use manifest::{corrupt_labels, Manifest, ManifestRecord};
use pnm::Raster;
use scene::{
    paint_background, paint_object, place_object, PlacedObject, SHAPE_FAMILIES, TEXTURE_FAMILIES,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub image_size: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    /// Probability that an image shows the texture tied to its (largest)
    /// object's class.
    pub p_confound: f64,
    pub multi_label: bool,
    pub max_objects_per_image: usize,
    /// Annotate only the most conspicuous object.
    pub noisy_labels: bool,
    pub rng_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 6,
            image_size: 64,
            train_samples: 600,
            val_samples: 100,
            test_samples: 200,
            p_confound: 0.9,
            multi_label: false,
            max_objects_per_image: 1,
            noisy_labels: false,
            rng_seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.num_classes > SHAPE_FAMILIES.min(TEXTURE_FAMILIES) {
            return Err(Error::Config(format!(
                "{} classes requested but only {SHAPE_FAMILIES} shape families exist",
                self.num_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.p_confound) {
            return Err(Error::Config(format!(
                "p_confound {} outside [0, 1]",
                self.p_confound
            )));
        }
        if self.image_size < 16 {
            return Err(Error::Config(format!(
                "image size {} below 16",
                self.image_size
            )));
        }
        if self.max_objects_per_image == 0 || self.max_objects_per_image > self.num_classes {
            return Err(Error::Config(format!(
                "max_objects_per_image must be in 1..={}",
                self.num_classes
            )));
        }
        if self.max_objects_per_image > 1 && !(self.multi_label || self.noisy_labels) {
            return Err(Error::Config(
                "several objects per image need multi_label or noisy_labels".into(),
            ));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let key = kv::normalize_key(key);
        match key.as_str() {
            "num_classes" => self.num_classes = kv::value(&key, v)?,
            "image_size" => self.image_size = kv::value(&key, v)?,
            "train_samples" => self.train_samples = kv::value(&key, v)?,
            "val_samples" => self.val_samples = kv::value(&key, v)?,
            "test_samples" => self.test_samples = kv::value(&key, v)?,
            "p_confound" => self.p_confound = kv::value(&key, v)?,
            "multi_label" => self.multi_label = kv::value(&key, v)?,
            "max_objects_per_image" => self.max_objects_per_image = kv::value(&key, v)?,
            "noisy_labels" => self.noisy_labels = kv::value(&key, v)?,
            "seed" | "rng_seed" => self.rng_seed = kv::value(&key, v)?,
            _ => return Err(kv::unknown(&key)),
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
        format!(
            "num_classes = {}\nimage_size = {}\ntrain_samples = {}\nval_samples = {}\ntest_samples = {}\n\
             p_confound = {}\nmulti_label = {}\nmax_objects_per_image = {}\nnoisy_labels = {}\nseed = {}\n",
            self.num_classes,
            self.image_size,
            self.train_samples,
            self.val_samples,
            self.test_samples,
            self.p_confound,
            self.multi_label,
            self.max_objects_per_image,
            self.noisy_labels,
            self.rng_seed
        )
    }

    pub fn samples(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_samples,
            Split::Val => self.val_samples,
            Split::Test => self.test_samples,
        }
    }

    fn radius_range(&self) -> (f64, f64) {
        let s = self.image_size as f64 / 64.0;
        if self.max_objects_per_image > 1 {
            (7.0 * s, 12.0 * s)
        } else {
            (9.0 * s, 15.0 * s)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `3×H×W`, values `b/255` for 8-bit samples `b`.
    pub image: Tensor,
    /// One row of `H·W` pixels per class.
    pub masks: Vec<Vec<bool>>,
    pub label: Vec<bool>,
    pub multi_label: bool,
    pub conspicuous_class: usize,
    pub texture: usize,
    pub seed: u64,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn num_classes(&self) -> usize {
        self.masks.len()
    }

    pub fn image_label(&self) -> Result<ImageLabel> {
        ImageLabel::new(self.label.clone(), self.multi_label)
    }

    /// Classes with at least one ground-truth pixel.
    pub fn present_classes(&self) -> Vec<usize> {
        (0..self.masks.len())
            .filter(|&k| self.masks[k].iter().any(|&b| b))
            .collect()
    }

    pub fn confounded(&self) -> bool {
        self.texture == self.conspicuous_class
    }

    pub fn to_raster(&self) -> Raster {
        let (h, w) = (self.height(), self.width());
        let n = h * w;
        let d = self.image.data();
        let rgb = (0..n)
            .flat_map(|i| (0..3).map(move |c| (d[c * n + i] * 255.0).round() as u8))
            .collect();
        Raster::new(w, h, 3, rgb).expect("consistent shape")
    }
}

pub fn image_from_raster(r: &Raster) -> Result<Tensor> {
    if r.channels != 3 {
        return Err(Error::format("ppm", "image must have 3 channels"));
    }
    let n = r.width * r.height;
    let mut data = vec![0.0; 3 * n];
    for (i, px) in r.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c] as f64 / 255.0;
        }
    }
    Tensor::new(&[3, r.height, r.width], data)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index` of `split`, independent of every other sample.
pub fn sample_seed(base: u64, split: Split, index: usize) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(split.tag())).wrapping_add(index as u64))
}

pub fn generate_sample<R: Rng>(rng: &mut R, config: &DatasetConfig) -> Result<Sample> {
    config.validate()?;
    let size = config.image_size;
    let k = config.num_classes;
    let wanted = rng.random_range(1..=config.max_objects_per_image);
    let mut classes = sample_indices(rng, k, wanted).into_vec();
    classes.sort_unstable();

    let mut occupied = vec![false; size * size];
    let mut objects: Vec<PlacedObject> = Vec::new();
    for &class in &classes {
        if let Some(obj) = place_object(rng, class, size, config.radius_range(), &occupied) {
            occupied
                .iter_mut()
                .zip(&obj.mask)
                .for_each(|(o, &m)| *o |= m);
            objects.push(obj);
        }
    }
    if objects.is_empty() {
        return Err(Error::Config(format!(
            "could not place any object in a {size}×{size} image"
        )));
    }
    // largest area, smallest class on ties
    let conspicuous = objects
        .iter()
        .max_by(|a, b| a.area.cmp(&b.area).then(b.class.cmp(&a.class)))
        .map(|o| o.class)
        .expect("non-empty");

    let texture = if rng.random_bool(config.p_confound) {
        conspicuous
    } else {
        let t = rng.random_range(0..TEXTURE_FAMILIES - 1);
        if t >= conspicuous {
            t + 1
        } else {
            t
        }
    };

    let mut rgb = vec![0u8; size * size * 3];
    paint_background(rng, texture, size, &mut rgb);
    for obj in &objects {
        paint_object(rng, obj, &mut rgb);
    }

    let mut masks = vec![vec![false; size * size]; k];
    for obj in objects {
        masks[obj.class] = obj.mask;
    }
    let label = if config.noisy_labels {
        (0..k).map(|c| c == conspicuous).collect()
    } else {
        masks.iter().map(|m| m.iter().any(|&b| b)).collect()
    };
    let image = image_from_raster(&Raster::new(size, size, 3, rgb)?)?;
    Ok(Sample {
        image,
        masks,
        label,
        multi_label: config.multi_label,
        conspicuous_class: conspicuous,
        texture,
        seed: 0,
    })
}

pub fn generate_indexed(config: &DatasetConfig, split: Split, index: usize) -> Result<Sample> {
    let seed = sample_seed(config.rng_seed, split, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = generate_sample(&mut rng, config)?;
    s.seed = seed;
    Ok(s)
}

/// All samples of one split, generated in parallel and returned in order.
pub fn generate_split(config: &DatasetConfig, split: Split) -> Result<Vec<Sample>> {
    config.validate()?;
    (0..config.samples(split))
        .into_par_iter()
        .map(|i| generate_indexed(config, split, i))
        .collect()
}

/// Writes every split under `out_dir` and returns the manifest, which is
/// also saved as `out_dir/manifest.jsonl`.
pub fn generate_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    let mut manifest = Manifest::default();
    for split in Split::ALL {
        let dir = out_dir.join(split.name());
        std::fs::create_dir_all(&dir)?;
        let samples = generate_split(config, split)?;
        for (i, s) in samples.iter().enumerate() {
            let record = ManifestRecord::for_sample(split, i, s);
            s.to_raster().write(&out_dir.join(&record.image))?;
            for (mask, path) in s.masks.iter().zip(&record.masks) {
                pnm::mask_to_pgm(mask, s.width(), s.height())?.write(&out_dir.join(path))?;
            }
            manifest.records.push(record);
        }
    }
    manifest.write(&out_dir.join(Manifest::FILE_NAME))?;
    Ok(manifest)
}

/// Loads the samples of one split referenced by `manifest`, rooted at `root`.
pub fn load_split(root: &Path, manifest: &Manifest, split: Split) -> Result<Vec<Sample>> {
    manifest
        .records
        .iter()
        .filter(|r| r.split == split.name())
        .map(|r| r.load(root))
        .collect()
}
