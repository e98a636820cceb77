//! Mutual-exclusive aggregation, stagger scoring and pixel-level projection.

use crate::engine::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::FeatureMap;

/// Object and background attention priors, each `M×N` and row-stochastic.
#[derive(Clone, Copy, Debug)]
pub struct Priors {
    pub object: Var,
    pub background: Var,
    pub heads: usize,
}

/// The four image-level score vectors, each `K×1`.
#[derive(Clone, Copy, Debug)]
pub struct ScoreSet {
    pub s_oo: Var,
    pub s_bo: Var,
    pub s_ob: Var,
    pub s_bb: Var,
}

/// One attention prior `softmax_rows(W·Z)`: each head distributes unit mass
/// over the N spatial positions.
pub fn prior(tape: &mut Tape, z: &FeatureMap, w: Var) -> Result<Var> {
    let ws = tape.shape(w);
    if ws.len() != 2 || ws[1] != z.channels {
        return Err(Error::shape("prior", ws, &[0, z.channels]));
    }
    let logits = tape.matmul(w, z.data)?;
    tape.softmax_rows(logits)
}

pub fn compute_priors(tape: &mut Tape, z: &FeatureMap, w1: Var, w2: Var) -> Result<Priors> {
    let object = prior(tape, z, w1)?;
    let background = prior(tape, z, w2)?;
    Ok(Priors {
        object,
        background,
        heads: tape.shape(w1)[0],
    })
}

/// Attention pooling averaged over heads: `(1/M) Σ_m Σ_i A[m,i] Z[:,i]`,
/// computed as `Z · (mean_m A[m,:])ᵀ`. Returns a `C×1` column.
pub fn aggregate(tape: &mut Tape, z: &FeatureMap, a: Var) -> Result<Var> {
    let n = z.positions();
    let s = tape.shape(a);
    if s.len() != 2 || s[1] != n {
        return Err(Error::shape("aggregate", s, &[0, n]));
    }
    let mean_head = tape.mean(a, Some(0))?;
    let col = tape.reshape(mean_head, &[n, 1])?;
    tape.matmul(z.data, col)
}

/// Global average pooling through the same product route as [`aggregate`].
pub fn gap(tape: &mut Tape, z: &FeatureMap) -> Result<Var> {
    let n = z.positions();
    let u = tape.constant(Tensor::full(&[n, 1], 1.0 / n as f64));
    tape.matmul(z.data, u)
}

/// `W·z` for a `K×C` classifier and a `C×1` feature.
pub fn score(tape: &mut Tape, w: Var, z: Var) -> Result<Var> {
    tape.matmul(w, z)
}

pub fn estimate_scores(
    tape: &mut Tape,
    z_o: Var,
    z_b: Var,
    w_o: Var,
    w_b: Var,
) -> Result<ScoreSet> {
    Ok(ScoreSet {
        s_oo: score(tape, w_o, z_o)?,
        s_bo: score(tape, w_b, z_o)?,
        s_ob: score(tape, w_o, z_b)?,
        s_bb: score(tape, w_b, z_b)?,
    })
}

/// Pixel-level object and background scores `W_O·Z`, `W_B·Z` (each K×N).
pub fn localization_scores(z: &Tensor, w_o: &Tensor, w_b: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((w_o.matmul(z)?, w_b.matmul(z)?))
}

/// Per-pixel argmax between background and object score, background first:
/// a pixel is object only when its object score is strictly larger.
pub fn binary_mask(s_o: &Tensor, s_b: &Tensor) -> Result<Vec<bool>> {
    if s_o.shape() != s_b.shape() {
        return Err(Error::shape("binary_mask", s_o.shape(), s_b.shape()));
    }
    Ok(s_o
        .data()
        .iter()
        .zip(s_b.data())
        .map(|(o, b)| o > b)
        .collect())
}

/// Plain CAM: GAP feature, image scores `W·z` and the localization map `W·Z`.
pub fn cam_baseline(tape: &mut Tape, z: &FeatureMap, w: Var) -> Result<(Var, Var)> {
    let ws = tape.shape(w);
    if ws.len() != 2 || ws[1] != z.channels {
        return Err(Error::shape("cam_baseline", ws, &[0, z.channels]));
    }
    let pooled = gap(tape, z)?;
    let s = tape.matmul(w, pooled)?;
    let map = tape.matmul(w, z.data)?;
    Ok((s, map))
}
