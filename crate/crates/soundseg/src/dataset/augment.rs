//! Splicing and blackout augmentations, and training-set composition.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArchiveMeta, DatasetArchive, PatchPair, Provenance, PATCH_TIME};
use crate::error::{Error, Result};

/// Number of consecutive time columns zeroed by the blackout augmentation.
pub const BLACKOUT_SIZE: usize = 64;

fn splice_grids(a: &Array2<f32>, b: &Array2<f32>) -> Array2<f32> {
    let half = PATCH_TIME / 2;
    let mut out = Array2::zeros(a.dim());
    out.slice_mut(s![.., ..half])
        .assign(&a.slice(s![.., half..]));
    out.slice_mut(s![.., half..])
        .assign(&b.slice(s![.., ..half]));
    out
}

/// Splices adjacent patch pairs: output `i` is the second half of pair `i`
/// followed by the first half of pair `i + 1` along the time axis, applied in
/// lockstep to mix and vocal. Returns `n - 1` pairs; fewer than two inputs
/// give an empty result.
pub fn splice_augment(pairs: &[PatchPair]) -> Vec<PatchPair> {
    pairs
        .windows(2)
        .map(|w| PatchPair {
            mix: splice_grids(&w[0].mix, &w[1].mix),
            vocal: splice_grids(&w[0].vocal, &w[1].vocal),
        })
        .collect()
}

/// Zeroes a random 64-column block in each pair. The start column is drawn
/// uniformly from `0..=64` per pair and shared between mix and vocal.
pub fn blackout_augment(pairs: &[PatchPair], rng: &mut ChaCha8Rng) -> Vec<PatchPair> {
    pairs
        .iter()
        .map(|p| {
            let start = rng.random_range(0..=PATCH_TIME - BLACKOUT_SIZE);
            let mut mix = p.mix.clone();
            let mut vocal = p.vocal.clone();
            mix.slice_mut(s![.., start..start + BLACKOUT_SIZE]).fill(0.0);
            vocal
                .slice_mut(s![.., start..start + BLACKOUT_SIZE])
                .fill(0.0);
            PatchPair { mix, vocal }
        })
        .collect()
}

/// Builds the training archive: all originals, all spliced pairs, and
/// blackout pairs sampled uniformly from the originals until blackouts make
/// up roughly 20% of the total (originals and spliced each land near 40%).
/// The result is shuffled with `meta.seed`.
pub fn compose_training_set(
    original: Vec<PatchPair>,
    meta: ArchiveMeta,
) -> Result<DatasetArchive> {
    if original.is_empty() {
        return Err(Error::invalid("no original pairs to compose"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);

    let spliced = splice_augment(&original);
    let base = original.len() + spliced.len();
    // b / (base + b) = 1/5  =>  b = base / 4
    let blackout_count = ((base as f64) / 4.0).round() as usize;
    let sampled: Vec<PatchPair> = (0..blackout_count)
        .map(|_| original[rng.random_range(0..original.len())].clone())
        .collect();
    let blackout = blackout_augment(&sampled, &mut rng);

    let mut entries: Vec<(Provenance, PatchPair)> = original
        .into_iter()
        .map(|p| (Provenance::Original, p))
        .chain(spliced.into_iter().map(|p| (Provenance::Spliced, p)))
        .chain(blackout.into_iter().map(|p| (Provenance::Blackout, p)))
        .collect();
    entries.shuffle(&mut rng);

    Ok(DatasetArchive { meta, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::testutil::random_pair;
    use crate::dataset::PATCH_FREQ;

    fn column_grid() -> Array2<f32> {
        let mut g = Array2::zeros((PATCH_FREQ, PATCH_TIME));
        for c in 0..PATCH_TIME {
            g.column_mut(c).fill(c as f32);
        }
        g
    }

    #[test]
    fn splice_takes_trailing_then_leading_half() {
        let a = column_grid();
        let b = &column_grid() + 1000.0;
        let pairs = [
            PatchPair::new(a.clone(), a.clone()).unwrap(),
            PatchPair::new(b.clone(), b.clone()).unwrap(),
        ];
        let out = splice_augment(&pairs);
        assert_eq!(out.len(), 1);
        for c in 0..64 {
            assert_eq!(out[0].mix[[0, c]], (c + 64) as f32);
        }
        for c in 64..128 {
            assert_eq!(out[0].mix[[0, c]], 1000.0 + (c - 64) as f32);
        }
        assert_eq!(out[0].mix, out[0].vocal);
    }

    #[test]
    fn splice_counts_and_self_splice() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs: Vec<PatchPair> = (0..5).map(|_| random_pair(&mut rng)).collect();
        assert_eq!(splice_augment(&pairs).len(), 4);
        assert!(splice_augment(&pairs[..1]).is_empty());
        assert!(splice_augment(&[]).is_empty());

        // Splicing a pair with itself swaps its halves.
        let twice = [pairs[0].clone(), pairs[0].clone()];
        let out = splice_augment(&twice);
        let half = PATCH_TIME / 2;
        for r in 0..PATCH_FREQ {
            for c in 0..half {
                assert_eq!(out[0].mix[[r, c]], pairs[0].mix[[r, c + half]]);
                assert_eq!(out[0].mix[[r, c + half]], pairs[0].mix[[r, c]]);
            }
        }
    }

    #[test]
    fn blackout_zeroes_exactly_one_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<PatchPair> = (0..8).map(|_| random_pair(&mut rng)).collect();
        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let out = blackout_augment(&pairs, &mut rng2);
        assert_eq!(out.len(), pairs.len());
        for (orig, black) in pairs.iter().zip(out.iter()) {
            let zero_cols: Vec<usize> = (0..PATCH_TIME)
                .filter(|&c| black.mix.column(c).iter().all(|&v| v == 0.0))
                .collect();
            assert_eq!(zero_cols.len(), BLACKOUT_SIZE);
            let start = zero_cols[0];
            assert!(start <= 64);
            assert!(zero_cols.windows(2).all(|w| w[1] == w[0] + 1));
            // Same block in the vocal grid, untouched columns bit-identical.
            for c in 0..PATCH_TIME {
                if c >= start && c < start + BLACKOUT_SIZE {
                    assert!(black.vocal.column(c).iter().all(|&v| v == 0.0));
                } else {
                    assert_eq!(black.mix.column(c), orig.mix.column(c));
                    assert_eq!(black.vocal.column(c), orig.vocal.column(c));
                }
            }
        }
        // Same seed, same output.
        let mut rng3 = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(blackout_augment(&pairs, &mut rng3), out);
    }

    #[test]
    fn blackout_boundary_starts() {
        // start = 0 zeroes columns 0..63; start = 64 zeroes columns 64..127.
        let g = Array2::from_elem((PATCH_FREQ, PATCH_TIME), 1.0f32);
        let pair = PatchPair::new(g.clone(), g).unwrap();
        for start in [0usize, 64] {
            let mut mix = pair.mix.clone();
            mix.slice_mut(s![.., start..start + BLACKOUT_SIZE]).fill(0.0);
            for c in 0..PATCH_TIME {
                let expect_zero = c >= start && c < start + BLACKOUT_SIZE;
                assert_eq!(mix[[0, c]] == 0.0, expect_zero);
            }
        }
    }

    #[test]
    fn compose_counts_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs: Vec<PatchPair> = (0..100).map(|_| random_pair(&mut rng)).collect();
        let meta = ArchiveMeta {
            seed: 99,
            sample_rate: 11_025,
            frame_size: 1024,
            hop: 256,
        };
        let archive = compose_training_set(pairs.clone(), meta.clone()).unwrap();
        let [orig, spliced, blackout] = archive.counts();
        assert_eq!(orig, 100);
        assert_eq!(spliced, 99);
        assert_eq!(blackout, 50);
        assert_eq!(archive.entries.len(), 249);

        let again = compose_training_set(pairs, meta).unwrap();
        assert_eq!(archive, again);
    }

    #[test]
    fn compose_minimal_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pairs: Vec<PatchPair> = (0..2).map(|_| random_pair(&mut rng)).collect();
        let meta = ArchiveMeta {
            seed: 1,
            sample_rate: 11_025,
            frame_size: 1024,
            hop: 256,
        };
        let archive = compose_training_set(pairs, meta.clone()).unwrap();
        let [orig, spliced, _blackout] = archive.counts();
        assert_eq!(orig, 2);
        assert_eq!(spliced, 1);
        assert!(compose_training_set(Vec::new(), meta).is_err());
    }
}
