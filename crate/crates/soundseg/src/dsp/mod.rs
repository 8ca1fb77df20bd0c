//! Time-frequency front and back end.
//!
//! Non-centered STFT framing: frame `t` covers samples
//! `[t*hop, t*hop + frame_size)`, no padding. The inverse uses weighted
//! overlap-add with the analysis window applied again at synthesis and a
//! division by the accumulated squared window. With the periodic Hann window
//! at 75% overlap this reconstructs the interior of the signal exactly.

mod resample;
pub mod wav;

pub use resample::resample;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Working sample rate of the pipeline (44.1 kHz / 4).
pub const DEFAULT_SAMPLE_RATE: u32 = 11_025;
pub const DEFAULT_FRAME_SIZE: usize = 1024;
pub const DEFAULT_HOP: usize = 256;
/// One-sided bin count for the default frame size.
pub const FREQ_BINS: usize = DEFAULT_FRAME_SIZE / 2 + 1;

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    /// Validates that the rate is positive and every sample is finite.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample_rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!(
                "waveform sample {i} is not finite"
            )));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Analysis/synthesis window coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    coefficients: Vec<f64>,
}

impl Window {
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

/// Periodic (DFT-symmetric) Hann window: `w[k] = 0.5*(1 - cos(2*pi*k/n))`.
///
/// The periodic variant satisfies constant overlap-add exactly at hop `n/4`.
pub fn hann_window(n: usize) -> Result<Window> {
    if n < 2 {
        return Err(Error::invalid(format!("window size {n} < 2")));
    }
    let coefficients = (0..n)
        .map(|k| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos()))
        .collect();
    Ok(Window { coefficients })
}

/// STFT geometry carried alongside spectrogram grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub frame_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

/// Complex STFT grid, shape `(frame_size/2 + 1, frames)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub bins: Array2<Complex64>,
    pub params: StftParams,
}

impl ComplexSpectrogram {
    pub fn num_bins(&self) -> usize {
        self.bins.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.bins.ncols()
    }
}

/// Non-negative magnitudes, shape `(bins, frames)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub values: Array2<f64>,
}

/// Phase angles in `(-pi, pi]`, shape `(bins, frames)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpectrogram {
    pub values: Array2<f64>,
}

/// Forward STFT. Frames are non-centered; the signal must cover at least one
/// full frame. Returns `1 + (len - frame_size)/hop` frames of
/// `frame_size/2 + 1` one-sided bins.
pub fn stft(
    w: &Waveform,
    frame_size: usize,
    hop: usize,
    window: &Window,
) -> Result<ComplexSpectrogram> {
    if frame_size < 2 {
        return Err(Error::invalid(format!("frame_size {frame_size} < 2")));
    }
    if hop == 0 || hop > frame_size {
        return Err(Error::invalid(format!(
            "hop {hop} must be in [1, frame_size {frame_size}]"
        )));
    }
    if window.len() != frame_size {
        return Err(Error::invalid(format!(
            "window length {} != frame_size {frame_size}",
            window.len()
        )));
    }
    if w.samples.len() < frame_size {
        return Err(Error::invalid(format!(
            "signal length {} shorter than one frame ({frame_size})",
            w.samples.len()
        )));
    }

    let frames = 1 + (w.samples.len() - frame_size) / hop;
    let bins = frame_size / 2 + 1;
    let mut grid = Array2::<Complex64>::zeros((bins, frames));

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(frame_size);
    let mut buf = vec![Complex64::default(); frame_size];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let win = window.coefficients();

    for t in 0..frames {
        let start = t * hop;
        for (n, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(w.samples[start + n] as f64 * win[n], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..bins {
            grid[[k, t]] = buf[k];
        }
    }

    Ok(ComplexSpectrogram {
        bins: grid,
        params: StftParams {
            frame_size,
            hop,
            sample_rate: w.sample_rate,
        },
    })
}

/// Inverse STFT by weighted overlap-add. `hop` and `window` must match the
/// forward transform. Output length is `(frames - 1)*hop + frame_size`.
pub fn istft(s: &ComplexSpectrogram, hop: usize, window: &Window) -> Result<Waveform> {
    let frame_size = s.params.frame_size;
    if s.num_frames() == 0 {
        return Err(Error::invalid("empty spectrogram"));
    }
    if hop != s.params.hop {
        return Err(Error::invalid(format!(
            "hop {hop} does not match spectrogram hop {}",
            s.params.hop
        )));
    }
    if window.len() != frame_size {
        return Err(Error::invalid(format!(
            "window length {} != frame_size {frame_size}",
            window.len()
        )));
    }
    if s.num_bins() != frame_size / 2 + 1 {
        return Err(Error::invalid(format!(
            "spectrogram has {} bins, expected {}",
            s.num_bins(),
            frame_size / 2 + 1
        )));
    }

    let frames = s.num_frames();
    let out_len = (frames - 1) * hop + frame_size;
    let mut acc = vec![0.0f64; out_len];
    let mut den = vec![0.0f64; out_len];

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(frame_size);
    let mut buf = vec![Complex64::default(); frame_size];
    let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];
    let win = window.coefficients();
    let scale = 1.0 / frame_size as f64;

    for t in 0..frames {
        buf[0] = s.bins[[0, t]];
        buf[frame_size / 2] = s.bins[[frame_size / 2, t]];
        for k in 1..frame_size / 2 {
            let b = s.bins[[k, t]];
            buf[k] = b;
            buf[frame_size - k] = b.conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let off = t * hop;
        for n in 0..frame_size {
            acc[off + n] += buf[n].re * scale * win[n];
            den[off + n] += win[n] * win[n];
        }
    }

    let samples = acc
        .iter()
        .zip(den.iter())
        .map(|(a, d)| (a / d.max(1e-12)) as f32)
        .collect();
    Waveform::new(samples, s.params.sample_rate)
}

/// Splits a complex grid into magnitude and phase. Zero bins get phase 0;
/// phase is normalized into `(-pi, pi]`.
pub fn magnitude_phase(s: &ComplexSpectrogram) -> (MagnitudeSpectrogram, PhaseSpectrogram) {
    let magnitude = s.bins.mapv(|z| z.norm());
    let phase = s.bins.mapv(|z| {
        if z.re == 0.0 && z.im == 0.0 {
            0.0
        } else {
            let p = z.arg();
            if p == -std::f64::consts::PI {
                std::f64::consts::PI
            } else {
                p
            }
        }
    });
    (
        MagnitudeSpectrogram { values: magnitude },
        PhaseSpectrogram { values: phase },
    )
}

/// Rebuilds a complex grid as `m * exp(i*p)`.
pub fn combine(
    m: &MagnitudeSpectrogram,
    p: &PhaseSpectrogram,
    params: StftParams,
) -> Result<ComplexSpectrogram> {
    if m.values.dim() != p.values.dim() {
        return Err(Error::invalid(format!(
            "magnitude shape {:?} != phase shape {:?}",
            m.values.dim(),
            p.values.dim()
        )));
    }
    let mut bins = Array2::<Complex64>::zeros(m.values.dim());
    ndarray::Zip::from(&mut bins)
        .and(&m.values)
        .and(&p.values)
        .for_each(|b, &mag, &ph| *b = Complex64::from_polar(mag, ph));
    Ok(ComplexSpectrogram { bins, params })
}

/// Removes the Nyquist row: `(513, T)` -> `(512, T)`.
pub fn drop_nyquist(m: &Array2<f64>) -> Result<Array2<f64>> {
    if m.nrows() != FREQ_BINS {
        return Err(Error::invalid(format!(
            "expected {} rows, got {}",
            FREQ_BINS,
            m.nrows()
        )));
    }
    Ok(m.slice(ndarray::s![..FREQ_BINS - 1, ..]).to_owned())
}

/// Appends a zero Nyquist row: `(512, T)` -> `(513, T)`.
pub fn restore_nyquist(m: &Array2<f64>) -> Result<Array2<f64>> {
    if m.nrows() != FREQ_BINS - 1 {
        return Err(Error::invalid(format!(
            "expected {} rows, got {}",
            FREQ_BINS - 1,
            m.nrows()
        )));
    }
    let mut out = Array2::<f64>::zeros((FREQ_BINS, m.ncols()));
    out.slice_mut(ndarray::s![..FREQ_BINS - 1, ..]).assign(m);
    Ok(out)
}
