//! Synthetic stem generator for tests and demos: a sine-sweep "vocal" over a
//! band-limited-noise "accompaniment". Everything derives from the seed, so
//! fixtures are reproducible.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{wav, Waveform};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct SynthOptions {
    pub sample_rate: u32,
    pub duration_secs: f64,
    /// Sweep start/end frequency centers (Hz); jittered ±20% per track.
    pub sweep_start_hz: f64,
    pub sweep_end_hz: f64,
    pub vocal_amplitude: f64,
    /// Accompaniment noise band (Hz).
    pub noise_band_hz: (f64, f64),
    /// Number of random-phase sinusoids forming the noise band.
    pub noise_components: usize,
    pub noise_rms: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            sample_rate: 22_050,
            duration_secs: 30.0,
            sweep_start_hz: 320.0,
            sweep_end_hz: 2600.0,
            vocal_amplitude: 0.22,
            noise_band_hz: (100.0, 1400.0),
            noise_components: 128,
            noise_rms: 0.12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthTrack {
    pub mixture: Waveform,
    pub vocals: Waveform,
    pub accompaniment: Waveform,
}

/// One synthetic track. The vocal is a logarithmic sweep; the accompaniment
/// is a dense bank of random-phase sinusoids inside the noise band; the
/// mixture is their sum.
pub fn synth_track(seed: u64, opts: &SynthOptions) -> SynthTrack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (opts.duration_secs * opts.sample_rate as f64).round() as usize;
    let sr = opts.sample_rate as f64;

    // Vocal: log sweep with per-track jittered endpoints and phase.
    let jitter = |rng: &mut ChaCha8Rng| 0.8 + 0.4 * rng.random::<f64>();
    let f0 = opts.sweep_start_hz * jitter(&mut rng);
    let f1 = opts.sweep_end_hz * jitter(&mut rng);
    let phi0 = rng.random::<f64>() * std::f64::consts::TAU;
    let total = opts.duration_secs;
    let k = f1 / f0;
    let lnk = k.ln();
    let mut vocals = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let phase = std::f64::consts::TAU * f0 * total / lnk * ((k.powf(t / total)) - 1.0);
        vocals.push((opts.vocal_amplitude * (phase + phi0).sin()) as f32);
    }

    // Accompaniment: phasor bank, rotated one sample at a time.
    let (lo, hi) = opts.noise_band_hz;
    let mut amps = Vec::with_capacity(opts.noise_components);
    let mut phasors = Vec::with_capacity(opts.noise_components);
    let mut rotors = Vec::with_capacity(opts.noise_components);
    for _ in 0..opts.noise_components {
        let f = lo + (hi - lo) * rng.random::<f64>();
        let amp = 0.5 + rng.random::<f64>();
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let omega = std::f64::consts::TAU * f / sr;
        amps.push(amp);
        phasors.push((phase.cos(), phase.sin()));
        rotors.push((omega.cos(), omega.sin()));
    }
    // Scale amplitudes so the expected RMS of the sum hits noise_rms.
    let sum_sq: f64 = amps.iter().map(|a| a * a).sum();
    let scale = opts.noise_rms / (sum_sq / 2.0).sqrt();
    for a in amps.iter_mut() {
        *a *= scale;
    }
    let mut accompaniment = Vec::with_capacity(n);
    for _ in 0..n {
        let mut s = 0.0f64;
        for ((amp, z), r) in amps.iter().zip(phasors.iter_mut()).zip(rotors.iter()) {
            s += amp * z.1;
            let (re, im) = *z;
            *z = (re * r.0 - im * r.1, re * r.1 + im * r.0);
        }
        accompaniment.push(s as f32);
    }

    let mixture: Vec<f32> = vocals
        .iter()
        .zip(accompaniment.iter())
        .map(|(v, a)| v + a)
        .collect();

    SynthTrack {
        mixture: Waveform::new(mixture, opts.sample_rate).expect("finite synth output"),
        vocals: Waveform::new(vocals, opts.sample_rate).expect("finite synth output"),
        accompaniment: Waveform::new(accompaniment, opts.sample_rate).expect("finite synth output"),
    }
}

/// Writes `track_00 .. track_NN` stem directories (mixture.wav, vocals.wav,
/// accompaniment.wav) under `dir`.
pub fn write_stems_dir(
    dir: impl AsRef<Path>,
    n_tracks: usize,
    base_seed: u64,
    opts: &SynthOptions,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut track_dirs = Vec::with_capacity(n_tracks);
    for i in 0..n_tracks {
        let track = synth_track(base_seed.wrapping_add(i as u64), opts);
        let tdir = dir.join(format!("track_{i:02}"));
        std::fs::create_dir_all(&tdir)?;
        wav::write_wav(tdir.join("mixture.wav"), &track.mixture)?;
        wav::write_wav(tdir.join("vocals.wav"), &track.vocals)?;
        wav::write_wav(tdir.join("accompaniment.wav"), &track.accompaniment)?;
        track_dirs.push(tdir);
    }
    Ok(track_dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let opts = SynthOptions {
            duration_secs: 2.0,
            ..SynthOptions::default()
        };
        let a = synth_track(5, &opts);
        let b = synth_track(5, &opts);
        assert_eq!(a.mixture.samples, b.mixture.samples);
        assert_eq!(a.vocals.len(), a.accompaniment.len());
        let peak = a
            .mixture
            .samples
            .iter()
            .fold(0.0f32, |m, &v| m.max(v.abs()));
        assert!(peak < 1.0, "peak {peak}");
        // Mixture is the sum of the stems.
        for ((m, v), ac) in a
            .mixture
            .samples
            .iter()
            .zip(a.vocals.samples.iter())
            .zip(a.accompaniment.samples.iter())
        {
            assert!((m - (v + ac)).abs() < 1e-6);
        }
    }
}
