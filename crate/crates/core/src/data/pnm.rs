//! Binary PPM (P6) and PGM (P5) with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit raster with interleaved channels (1 for PGM, 3 for PPM).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(Error::format(
                "pnm",
                format!("unsupported channel count {channels}"),
            ));
        }
        if width == 0 || height == 0 || data.len() != width * height * channels {
            return Err(Error::format(
                "pnm",
                format!(
                    "{width}×{height}×{channels} raster with {} bytes",
                    data.len()
                ),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    fn magic(&self) -> &'static str {
        if self.channels == 3 {
            "P6"
        } else {
            "P5"
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out =
            format!("{}\n{} {}\n255\n", self.magic(), self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = header_token(bytes, &mut pos)?;
        let channels = match magic {
            b"P6" => 3,
            b"P5" => 1,
            other => {
                return Err(Error::format(
                    "pnm",
                    format!("unsupported magic {:?}", String::from_utf8_lossy(other)),
                ));
            }
        };
        let width = header_number(bytes, &mut pos)?;
        let height = header_number(bytes, &mut pos)?;
        let maxval = header_number(bytes, &mut pos)?;
        if maxval != 255 {
            return Err(Error::format(
                "pnm",
                format!("maxval {maxval}, only 255 is supported"),
            ));
        }
        // exactly one whitespace byte separates the header from the samples
        if bytes.get(pos).is_none_or(|b| !b.is_ascii_whitespace()) {
            return Err(Error::format("pnm", "missing separator after header"));
        }
        pos += 1;
        let expected = width * height * channels;
        if bytes.len() - pos != expected {
            return Err(Error::format(
                "pnm",
                format!(
                    "expected {expected} sample bytes, found {}",
                    bytes.len() - pos
                ),
            ));
        }
        Self::new(width, height, channels, bytes[pos..].to_vec())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::format("pnm", "truncated header")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            Error::format(
                "pnm",
                format!("bad header field {:?}", String::from_utf8_lossy(tok)),
            )
        })
}

/// Binary mask as a 0/255 PGM.
pub fn mask_to_pgm(mask: &[bool], width: usize, height: usize) -> Result<Raster> {
    Raster::new(
        width,
        height,
        1,
        mask.iter().map(|&b| if b { 255 } else { 0 }).collect(),
    )
}

pub fn pgm_to_mask(r: &Raster) -> Result<Vec<bool>> {
    if r.channels != 1 {
        return Err(Error::format("pgm", "mask must be single-channel"));
    }
    r.data
        .iter()
        .map(|&v| match v {
            0 => Ok(false),
            255 => Ok(true),
            v => Err(Error::format(
                "pgm",
                format!("mask sample {v} is neither 0 nor 255"),
            )),
        })
        .collect()
}

/// Scales a map to 0–255 by its own min and max; constant maps become 0.
pub fn map_to_pgm(values: &[f64], width: usize, height: usize) -> Result<Raster> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data = values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    Raster::new(width, height, 1, data)
}
