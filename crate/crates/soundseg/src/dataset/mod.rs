//! Patch datasets: patching, augmentation, normalization, persistence.

mod archive;
mod augment;
mod normalize;

pub use archive::{load_archive, save_archive, ArchiveMeta, DatasetArchive};
pub use augment::{blackout_augment, compose_training_set, splice_augment, BLACKOUT_SIZE};
pub use normalize::{
    apply_params, denormalize, normalize, NormAxis, NormalizationParams, NormalizationSpec,
    Scaler, SliceParams,
};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frequency rows in a training patch (513 STFT bins minus Nyquist).
pub const PATCH_FREQ: usize = 512;
/// Time columns in a training patch.
pub const PATCH_TIME: usize = 128;

/// Aligned mixture/vocal magnitude patches, both `(512, 128)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub mix: Array2<f32>,
    pub vocal: Array2<f32>,
}

impl PatchPair {
    pub fn new(mix: Array2<f32>, vocal: Array2<f32>) -> Result<Self> {
        for (name, g) in [("mix", &mix), ("vocal", &vocal)] {
            if g.dim() != (PATCH_FREQ, PATCH_TIME) {
                return Err(Error::invalid(format!(
                    "{name} patch shape {:?}, expected ({PATCH_FREQ}, {PATCH_TIME})",
                    g.dim()
                )));
            }
            if g.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid(format!(
                    "{name} patch contains negative or non-finite values"
                )));
            }
        }
        Ok(PatchPair { mix, vocal })
    }
}

/// How a pair entered the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Original,
    Spliced,
    Blackout,
}

impl Provenance {
    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Provenance::Original => 0,
            Provenance::Spliced => 1,
            Provenance::Blackout => 2,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Provenance::Original),
            1 => Ok(Provenance::Spliced),
            2 => Ok(Provenance::Blackout),
            other => Err(Error::format(format!("unknown provenance tag {other}"))),
        }
    }
}

/// Cuts a `(512, T)` magnitude grid into consecutive non-overlapping
/// `(512, 128)` patches, discarding the trailing remainder.
pub fn patchify(m: &Array2<f32>) -> Result<Vec<Array2<f32>>> {
    if m.nrows() != PATCH_FREQ {
        return Err(Error::invalid(format!(
            "expected {PATCH_FREQ} rows, got {}",
            m.nrows()
        )));
    }
    let count = m.ncols() / PATCH_TIME;
    Ok((0..count)
        .map(|i| {
            m.slice(ndarray::s![.., i * PATCH_TIME..(i + 1) * PATCH_TIME])
                .to_owned()
        })
        .collect())
}

/// Seeded shuffle-and-split; the validation side gets `round(fraction * n)`
/// pairs. The two sides are disjoint and exhaustive.
pub fn split_train_val(
    archive: &DatasetArchive,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<PatchPair>, Vec<PatchPair>)> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "fraction {fraction} must be in (0, 1)"
        )));
    }
    let n = archive.entries.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 pairs, got {n}")));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let val_size = (fraction * n as f64).round() as usize;
    let (val_idx, train_idx) = indices.split_at(val_size);
    let take = |idx: &[usize]| -> Vec<PatchPair> {
        idx.iter()
            .map(|&i| archive.entries[i].1.clone())
            .collect()
    };
    Ok((take(train_idx), take(val_idx)))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::Rng;

    pub(crate) fn grid(cols: usize, fill: f32) -> Array2<f32> {
        Array2::from_elem((PATCH_FREQ, cols), fill)
    }

    pub(crate) fn pair(fill: f32) -> PatchPair {
        PatchPair::new(grid(PATCH_TIME, fill), grid(PATCH_TIME, fill / 2.0)).unwrap()
    }

    pub(crate) fn random_pair(rng: &mut ChaCha8Rng) -> PatchPair {
        let mix = Array2::from_shape_simple_fn((PATCH_FREQ, PATCH_TIME), || rng.random::<f32>());
        let vocal =
            Array2::from_shape_simple_fn((PATCH_FREQ, PATCH_TIME), || rng.random::<f32>());
        PatchPair::new(mix, vocal).unwrap()
    }
}
