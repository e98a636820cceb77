//! Line-delimited JSON manifest, one record per sample.
//!
//! ```text
//! {"split":"train","index":0,"image":"train/00000.ppm",
//!  "masks":["train/00000_c0.pgm",...],"label":[0,1,0,0],
//!  "multi_label":false,"conspicuous_class":1,"texture":1,"seed":...}
//! ```
//!
//! Paths are relative to the directory holding the manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::pnm::{pgm_to_mask, Raster};
use crate::data::{image_from_raster, Sample, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub split: String,
    pub index: usize,
    pub image: String,
    pub masks: Vec<String>,
    pub label: Vec<u8>,
    pub multi_label: bool,
    pub conspicuous_class: Option<usize>,
    pub texture: usize,
    pub seed: u64,
}

impl ManifestRecord {
    pub fn for_sample(split: Split, index: usize, s: &Sample) -> Self {
        let stem = format!("{}/{index:05}", split.name());
        Self {
            split: split.name().to_string(),
            index,
            image: format!("{stem}.ppm"),
            masks: (0..s.num_classes())
                .map(|k| format!("{stem}_c{k}.pgm"))
                .collect(),
            label: s.label.iter().map(|&b| b as u8).collect(),
            multi_label: s.multi_label,
            conspicuous_class: Some(s.conspicuous_class),
            texture: s.texture,
            seed: s.seed,
        }
    }

    pub fn load(&self, root: &Path) -> Result<Sample> {
        let image = image_from_raster(&Raster::read(&root.join(&self.image))?)?;
        let masks = self
            .masks
            .iter()
            .map(|p| pgm_to_mask(&Raster::read(&root.join(p))?))
            .collect::<Result<Vec<_>>>()?;
        if masks.len() != self.label.len() || masks.iter().any(|m| m.len() != image.numel() / 3) {
            return Err(Error::format(
                "manifest",
                format!("record {} has inconsistent masks", self.image),
            ));
        }
        if self.label.iter().any(|&v| v > 1) {
            return Err(Error::format(
                "manifest",
                format!("record {} has a non-binary label", self.image),
            ));
        }
        let conspicuous_class = self.conspicuous_class.ok_or_else(|| {
            Error::format(
                "manifest",
                format!("record {} lacks conspicuous_class", self.image),
            )
        })?;
        Ok(Sample {
            image,
            masks,
            label: self.label.iter().map(|&v| v == 1).collect(),
            multi_label: self.multi_label,
            conspicuous_class,
            texture: self.texture,
            seed: self.seed,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.jsonl";

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("plain record"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::format("manifest", format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split.name())
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.records.first().map(|r| r.label.len())
    }
}

/// Keeps only the most conspicuous object in every label. Pixel masks are
/// left alone so evaluation still sees every object.
pub fn corrupt_labels(manifest: &Manifest) -> Result<Manifest> {
    let records = manifest
        .records
        .iter()
        .map(|r| {
            let c = r.conspicuous_class.ok_or_else(|| {
                Error::Label(format!("record {} has no conspicuous class", r.image))
            })?;
            if c >= r.label.len() {
                return Err(Error::Label(format!(
                    "conspicuous class {c} out of range in {}",
                    r.image
                )));
            }
            let mut out = r.clone();
            out.label = (0..r.label.len()).map(|k| (k == c) as u8).collect();
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(Manifest { records })
}
