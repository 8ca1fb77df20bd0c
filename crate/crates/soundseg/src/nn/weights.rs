//! Weights file format.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "SSWT" | u32 version=1
//! config: u32 depth | u32 base_filters | u32 kernel_size
//!         u32 input_h | u32 input_w | u32 input_c
//!         u8 axis (0=frequency, 1=time) | u8 scaler (0=minmax, 1=quantile)
//!         u8 loss (0=mae, 1=mse)
//!         u32 epochs | u32 batch_size | f64 learning_rate | u64 seed
//! u32 tensor_count
//! per tensor: u16 name_len | name | u8 rank | u32 dims... | f32 data...
//! ```
//!
//! The embedded experiment config reloads exactly, so separation needs only
//! the weights file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{LossKind, ModelParams};
use crate::config::ExperimentConfig;
use crate::dataset::{NormAxis, Scaler};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SSWT";
const VERSION: u32 = 1;

fn axis_byte(a: NormAxis) -> u8 {
    match a {
        NormAxis::Frequency => 0,
        NormAxis::Time => 1,
    }
}

fn scaler_byte(s: Scaler) -> u8 {
    match s {
        Scaler::MinMax => 0,
        Scaler::Robust => 1,
    }
}

fn loss_byte(l: LossKind) -> u8 {
    match l {
        LossKind::Mae => 0,
        LossKind::Mse => 1,
    }
}

/// Saves the parameter tensors with the experiment config they were trained
/// under. Only `f32` weights are persisted.
pub fn save_weights(
    params: &ModelParams<f32>,
    config: &ExperimentConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let unet = config.unet();
    params.validate_against(&unet)?;
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [
        config.depth as u32,
        config.base_filters as u32,
        unet.kernel_size as u32,
        unet.input_height as u32,
        unet.input_width as u32,
        unet.input_channels as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[
        axis_byte(config.axis),
        scaler_byte(config.scaler),
        loss_byte(config.loss),
    ])?;
    w.write_all(&(config.epochs as u32).to_le_bytes())?;
    w.write_all(&(config.batch_size as u32).to_le_bytes())?;
    w.write_all(&config.learning_rate.to_le_bytes())?;
    w.write_all(&config.seed.to_le_bytes())?;

    let tensors = params.named_tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, shape, data) in tensors {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[shape.len() as u8])?;
        for d in &shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        let mut bytes = Vec::with_capacity(data.len() * 4);
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::format(format!("{what}: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.bytes(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.bytes(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Loads weights and the embedded experiment config, validating every tensor
/// name and shape against the config's canonical layout.
pub fn load_weights(path: impl AsRef<Path>) -> Result<(ModelParams<f32>, ExperimentConfig)> {
    let path = path.as_ref();
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };

    let magic = r.bytes(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(format!(
            "{}: bad magic {magic:?}, expected {MAGIC:?}",
            path.display()
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(format!(
            "{}: unsupported weights version {version}",
            path.display()
        )));
    }

    let depth = r.u32("depth")? as usize;
    let base_filters = r.u32("base_filters")? as usize;
    let kernel_size = r.u32("kernel_size")? as usize;
    let input_h = r.u32("input_h")? as usize;
    let input_w = r.u32("input_w")? as usize;
    let input_c = r.u32("input_c")? as usize;
    let axis = match r.u8("axis")? {
        0 => NormAxis::Frequency,
        1 => NormAxis::Time,
        other => return Err(Error::format(format!("unknown axis byte {other}"))),
    };
    let scaler = match r.u8("scaler")? {
        0 => Scaler::MinMax,
        1 => Scaler::Robust,
        other => return Err(Error::format(format!("unknown scaler byte {other}"))),
    };
    let loss = match r.u8("loss")? {
        0 => LossKind::Mae,
        1 => LossKind::Mse,
        other => return Err(Error::format(format!("unknown loss byte {other}"))),
    };
    let epochs = r.u32("epochs")? as usize;
    let batch_size = r.u32("batch_size")? as usize;
    let learning_rate = r.f64("learning_rate")?;
    let seed = r.u64("seed")?;

    let config = ExperimentConfig {
        axis,
        scaler,
        loss,
        epochs,
        batch_size,
        learning_rate,
        seed,
        depth,
        base_filters,
    };
    let unet = config.unet();
    if unet.kernel_size != kernel_size
        || unet.input_height != input_h
        || unet.input_width != input_w
        || unet.input_channels != input_c
    {
        return Err(Error::format(format!(
            "{}: stored input geometry {kernel_size}/{input_h}x{input_w}x{input_c} does not match the {}x{}x{} pipeline",
            path.display(),
            unet.input_height,
            unet.input_width,
            unet.input_channels
        )));
    }

    let count = r.u32("tensor_count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u16(&format!("tensor {i} name length"))? as usize;
        let name_bytes = r.bytes(name_len, &format!("tensor {i} name"))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::format(format!("tensor {i} name is not UTF-8")))?;
        let rank = r.u8(&format!("tensor '{name}' rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&format!("tensor '{name}' dims"))? as usize);
        }
        let len: usize = shape.iter().product();
        let bytes = r.bytes(len * 4, &format!("tensor '{name}' data"))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, shape, data));
    }

    let params = ModelParams::from_named(&unet, tensors)?;
    Ok((params, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::example();
        cfg.depth = 1;
        cfg.base_filters = 2;
        cfg.seed = 77;
        cfg
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.sswt");
        let cfg = small_config();
        let params = ModelParams::<f32>::init(&cfg.unet(), cfg.seed).unwrap();
        save_weights(&params, &cfg, &path).unwrap();
        let (loaded, loaded_cfg) = load_weights(&path).unwrap();
        assert_eq!(params, loaded);
        assert_eq!(cfg, loaded_cfg);
    }

    #[test]
    fn shape_mismatch_is_reported_with_both_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.sswt");
        let cfg = small_config();
        let params = ModelParams::<f32>::init(&cfg.unet(), 1).unwrap();
        save_weights(&params, &cfg, &path).unwrap();

        // Corrupt the depth field so the config disagrees with the tensors.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 2; // depth u32 at offset 8
        std::fs::write(&path, &bytes).unwrap();
        let msg = load_weights(&path).unwrap_err().to_string();
        assert!(msg.contains("shape") || msg.contains("expect"), "{msg}");
    }

    #[test]
    fn truncated_tensor_names_the_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.sswt");
        let cfg = small_config();
        let params = ModelParams::<f32>::init(&cfg.unet(), 1).unwrap();
        save_weights(&params, &cfg, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // Cut into the last tensor's data section (head.bias, 4 data bytes).
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        let msg = load_weights(&path).unwrap_err().to_string();
        assert!(msg.contains("tensor 'head.bias' data"), "{msg}");
    }

    #[test]
    fn foreign_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope.sswt");
        std::fs::write(&path, b"SSEGxxxxxxxxxxxxxxxx").unwrap();
        let msg = load_weights(&path).unwrap_err().to_string();
        assert!(msg.contains("magic"), "{msg}");
    }
}
