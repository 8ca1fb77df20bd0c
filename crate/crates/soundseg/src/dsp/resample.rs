//! Rational-rate resampling with a polyphase windowed-sinc filter.
//!
//! The conversion ratio is reduced to L/M; each of the L output phases gets
//! its own 128-tap Hann-windowed sinc kernel, normalized to unit DC gain so
//! constant signals pass through exactly. Samples beyond the signal edges are
//! treated as zero, which attenuates the first and last few milliseconds;
//! interior samples are accurate.

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Taps per polyphase branch.
const TAPS: usize = 128;
/// Passband fraction of the output Nyquist kept below the transition band.
const ROLLOFF: f64 = 0.9;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Symmetric Hann taper over [-1, 1].
fn taper(v: f64) -> f64 {
    if v.abs() >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * v).cos())
    }
}

fn build_phase_tables(l: u64, m: u64) -> Vec<Vec<f64>> {
    let half = (TAPS / 2) as isize;
    let cutoff = 0.5 * (l as f64 / m as f64).min(1.0) * ROLLOFF;
    (0..l)
        .map(|p| {
            let frac = p as f64 / l as f64;
            let mut taps: Vec<f64> = (0..TAPS)
                .map(|i| {
                    let u = (i as isize - (half - 1)) as f64 - frac;
                    2.0 * cutoff * sinc(2.0 * cutoff * u) * taper(u / half as f64)
                })
                .collect();
            let sum: f64 = taps.iter().sum();
            for t in taps.iter_mut() {
                *t /= sum;
            }
            taps
        })
        .collect()
}

/// Resamples to `target_rate`. Output length is `ceil(len * target / source)`.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::invalid("target_rate must be positive"));
    }
    if w.samples.is_empty() {
        return Waveform::new(Vec::new(), target_rate);
    }
    if target_rate == w.sample_rate {
        return Ok(Waveform {
            samples: w.samples.clone(),
            sample_rate: target_rate,
        });
    }

    let g = gcd(w.sample_rate as u64, target_rate as u64);
    let l = target_rate as u64 / g;
    let m = w.sample_rate as u64 / g;
    let tables = build_phase_tables(l, m);

    let n = w.samples.len() as u64;
    let out_len = ((n * l) + m - 1) / m;
    let half = (TAPS / 2) as isize;
    let input = &w.samples;
    let in_len = input.len() as isize;

    let mut out = Vec::with_capacity(out_len as usize);
    for j in 0..out_len {
        let num = j * m;
        let i0 = (num / l) as isize;
        let phase = (num % l) as usize;
        let taps = &tables[phase];
        let base = i0 - (half - 1);
        let mut acc = 0.0f64;
        // Clip the tap range to the valid part of the signal.
        let k_lo = (-base).max(0) as usize;
        let k_hi = ((in_len - base).max(0) as usize).min(TAPS);
        for k in k_lo..k_hi {
            acc += taps[k] * input[(base + k as isize) as usize] as f64;
        }
        out.push(acc as f32);
    }
    Waveform::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_gives_empty_output() {
        let w = Waveform::new(vec![], 44_100).unwrap();
        let r = resample(&w, 11_025).unwrap();
        assert!(r.is_empty());
        assert_eq!(r.sample_rate, 11_025);
    }

    #[test]
    fn zero_target_rejected() {
        let w = Waveform::new(vec![0.0; 16], 44_100).unwrap();
        assert!(resample(&w, 0).is_err());
    }

    #[test]
    fn identity_when_rates_match() {
        let w = Waveform::new(vec![0.25; 100], 11_025).unwrap();
        let r = resample(&w, 11_025).unwrap();
        assert_eq!(r.samples, w.samples);
    }

    #[test]
    fn dc_passes_through() {
        let w = Waveform::new(vec![0.5; 400], 44_100).unwrap();
        let r = resample(&w, 11_025).unwrap();
        assert_eq!(r.len(), 100);
        // Interior samples (away from the zero-padded edges).
        for &s in &r.samples[20..80] {
            assert!((s - 0.5).abs() < 1e-3, "interior sample {s}");
        }
    }

    #[test]
    fn output_length_is_ceil() {
        let w = Waveform::new(vec![0.0; 401], 44_100).unwrap();
        let r = resample(&w, 11_025).unwrap();
        assert_eq!(r.len(), 101);
    }

    #[test]
    fn upsampling_dc() {
        let w = Waveform::new(vec![-0.3; 200], 11_025).unwrap();
        let r = resample(&w, 22_050).unwrap();
        assert_eq!(r.len(), 400);
        for &s in &r.samples[80..320] {
            assert!((s + 0.3).abs() < 1e-3);
        }
    }
}
