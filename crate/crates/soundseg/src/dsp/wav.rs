//! WAV ingest and emit.
//!
//! Reads 16-bit PCM and 32-bit float files at any rate, downmixing
//! multi-channel audio to mono by channel mean. Writes 16-bit PCM.

use std::path::Path;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Loads a WAV file as a mono waveform.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::format(format!(
            "{}: zero channels",
            path.display()
        )));
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?,
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?,
        (fmt, bits) => {
            return Err(Error::format(format!(
                "{}: unsupported sample format {fmt:?}/{bits}-bit (expected 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    };

    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a waveform as 16-bit PCM, clamping samples to [-1, 1].
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let w = Waveform::new(vec![0.0, 0.5, -0.5, 0.25], 11_025).unwrap();
        write_wav(&path, &w).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate, 11_025);
        assert_eq!(r.len(), 4);
        for (a, b) in r.samples.iter().zip(w.samples.iter()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn stereo_downmix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 22_050,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for (l, r) in [(0.2f32, 0.4f32), (-0.6, 0.2)] {
            writer.write_sample(l).unwrap();
            writer.write_sample(r).unwrap();
        }
        writer.finalize().unwrap();
        let w = read_wav(&path).unwrap();
        assert_eq!(w.len(), 2);
        assert!((w.samples[0] - 0.3).abs() < 1e-6);
        assert!((w.samples[1] + 0.2).abs() < 1e-6);
    }

    #[test]
    fn garbage_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"not a wav file at all").unwrap();
        assert!(matches!(read_wav(&path), Err(Error::DataFormat(_))));
    }
}
