//! Binary patch-archive persistence.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "SSEG" | u32 version=1 | u32 pair_count | u32 freq=512 | u32 time=128
//! u64 seed | u32 sample_rate | u32 frame_size | u32 hop
//! per pair: u8 provenance | 512*128 f32 mix (row-major) | 512*128 f32 vocal
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{PatchPair, Provenance, PATCH_FREQ, PATCH_TIME};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SSEG";
const VERSION: u32 = 1;
const HEADER_BYTES: u64 = 40;
const GRID_BYTES: u64 = (PATCH_FREQ * PATCH_TIME * 4) as u64;
const PAIR_BYTES: u64 = 1 + 2 * GRID_BYTES;

/// How the archive was produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveMeta {
    pub seed: u64,
    pub sample_rate: u32,
    pub frame_size: u32,
    pub hop: u32,
}

/// Raw (unnormalized) patch pairs plus provenance tags and creation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetArchive {
    pub meta: ArchiveMeta,
    pub entries: Vec<(Provenance, PatchPair)>,
}

impl DatasetArchive {
    /// Pair counts as `[original, spliced, blackout]`.
    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0usize; 3];
        for (tag, _) in &self.entries {
            c[tag.to_byte() as usize] += 1;
        }
        c
    }

    pub fn pairs(&self) -> impl Iterator<Item = &PatchPair> {
        self.entries.iter().map(|(_, p)| p)
    }
}

fn write_grid(w: &mut impl Write, grid: &Array2<f32>) -> Result<()> {
    let slice = grid.as_slice().expect("patch grids are contiguous");
    let mut bytes = Vec::with_capacity(slice.len() * 4);
    for v in slice {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn save_archive(archive: &DatasetArchive, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(archive.entries.len() as u32).to_le_bytes())?;
    w.write_all(&(PATCH_FREQ as u32).to_le_bytes())?;
    w.write_all(&(PATCH_TIME as u32).to_le_bytes())?;
    w.write_all(&archive.meta.seed.to_le_bytes())?;
    w.write_all(&archive.meta.sample_rate.to_le_bytes())?;
    w.write_all(&archive.meta.frame_size.to_le_bytes())?;
    w.write_all(&archive.meta.hop.to_le_bytes())?;
    for (tag, pair) in &archive.entries {
        w.write_all(&[tag.to_byte()])?;
        write_grid(&mut w, &pair.mix)?;
        write_grid(&mut w, &pair.vocal)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_grid(r: &mut impl Read) -> Result<Array2<f32>> {
    let mut bytes = vec![0u8; GRID_BYTES as usize];
    r.read_exact(&mut bytes)?;
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Array2::from_shape_vec((PATCH_FREQ, PATCH_TIME), values)
        .map_err(|e| Error::format(format!("grid shape: {e}")))
}

pub fn load_archive(path: impl AsRef<Path>) -> Result<DatasetArchive> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let actual_size = file.metadata()?.len();
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format(format!(
            "{}: bad magic {magic:?}, expected {MAGIC:?}",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::format(format!(
            "{}: unsupported archive version {version}",
            path.display()
        )));
    }
    let count = read_u32(&mut r)? as u64;
    let freq = read_u32(&mut r)?;
    let time = read_u32(&mut r)?;
    if freq as usize != PATCH_FREQ || time as usize != PATCH_TIME {
        return Err(Error::format(format!(
            "{}: patch shape ({freq}, {time}), expected ({PATCH_FREQ}, {PATCH_TIME})",
            path.display()
        )));
    }
    let meta = ArchiveMeta {
        seed: read_u64(&mut r)?,
        sample_rate: read_u32(&mut r)?,
        frame_size: read_u32(&mut r)?,
        hop: read_u32(&mut r)?,
    };

    let expected_size = HEADER_BYTES + count * PAIR_BYTES;
    if actual_size != expected_size {
        return Err(Error::format(format!(
            "{}: truncated or padded archive: expected {expected_size} bytes for {count} pairs, found {actual_size}",
            path.display()
        )));
    }

    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let provenance = Provenance::from_byte(tag[0])?;
        let mix = read_grid(&mut r)?;
        let vocal = read_grid(&mut r)?;
        entries.push((provenance, PatchPair { mix, vocal }));
    }
    Ok(DatasetArchive { meta, entries })
}
