//! Inference: predict vocal magnitudes over a full spectrogram, build the
//! ratio mask, and reconstruct vocal and accompaniment waveforms with the
//! mixture phase.

use ndarray::{s, Array2, Axis};

use crate::dataset::{denormalize, normalize, NormalizationSpec};
use crate::dsp::{
    combine, drop_nyquist, hann_window, istft, magnitude_phase, resample, restore_nyquist, stft,
    MagnitudeSpectrogram, Waveform, DEFAULT_FRAME_SIZE, DEFAULT_HOP, DEFAULT_SAMPLE_RATE,
};
use crate::error::{Error, Result};
use crate::nn::{unet_forward, ModelParams, Tensor4, UNetConfig};

/// Patches per forward batch during full-spectrogram prediction.
const PREDICT_CHUNK: usize = 16;
/// Denominator guard for the ratio mask.
const MASK_EPSILON: f64 = 1e-8;

/// Whether to reconstruct from the ratio mask (default) or from the raw
/// network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskPolicy {
    #[default]
    Masked,
    Raw,
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub vocals: Waveform,
    pub accompaniment: Waveform,
    /// Ratio mask over the Nyquist-dropped mixture grid, in [0, 1].
    pub mask: Array2<f64>,
}

/// Runs the model over a whole `(512, T)` magnitude grid: zero-pads the time
/// axis to a multiple of the patch width, normalizes each patch with its own
/// mix statistics, forward-passes, denormalizes with the same parameters,
/// clamps negatives to zero and trims back to `T` columns.
pub fn predict_full(
    params: &ModelParams<f32>,
    config: &UNetConfig,
    spec: NormalizationSpec,
    mix_mag: &Array2<f64>,
) -> Result<Array2<f64>> {
    config.validate()?;
    params.validate_against(config)?;
    let (h, w) = (config.input_height, config.input_width);
    if mix_mag.nrows() != h {
        return Err(Error::invalid(format!(
            "mix grid has {} rows, model expects {h}",
            mix_mag.nrows()
        )));
    }
    let t = mix_mag.ncols();
    if t == 0 {
        return Err(Error::invalid("empty mix grid"));
    }

    let n_patches = t.div_ceil(w);
    let mut out = Array2::<f64>::zeros((h, n_patches * w));

    for chunk_start in (0..n_patches).step_by(PREDICT_CHUNK) {
        let chunk_len = PREDICT_CHUNK.min(n_patches - chunk_start);
        let mut batch = Tensor4::<f32>::zeros((chunk_len, h, w, 1));
        let mut norm_params = Vec::with_capacity(chunk_len);
        for i in 0..chunk_len {
            let start = (chunk_start + i) * w;
            let end = ((chunk_start + i + 1) * w).min(t);
            let mut patch = Array2::<f32>::zeros((h, w));
            patch
                .slice_mut(s![.., ..end - start])
                .assign(&mix_mag.slice(s![.., start..end]).mapv(|v| v as f32));
            let (normalized, p) = normalize(&patch, spec)?;
            batch
                .index_axis_mut(Axis(0), i)
                .index_axis_mut(Axis(2), 0)
                .assign(&normalized);
            norm_params.push(p);
        }
        let pred = unet_forward(config, params, &batch)?;
        for i in 0..chunk_len {
            let pred_patch: Array2<f32> = pred
                .index_axis(Axis(0), i)
                .index_axis(Axis(2), 0)
                .to_owned();
            let restored = denormalize(&pred_patch, &norm_params[i])?;
            let start = (chunk_start + i) * w;
            out.slice_mut(s![.., start..start + w])
                .assign(&restored.mapv(|v| (v as f64).max(0.0)));
        }
    }
    Ok(out.slice(s![.., ..t]).to_owned())
}

/// Ratio mask `vocal / (mix + eps)`, clipped to [0, 1].
pub fn compute_mask(vocal_est: &Array2<f64>, mix_mag: &Array2<f64>) -> Result<Array2<f64>> {
    if vocal_est.dim() != mix_mag.dim() {
        return Err(Error::invalid(format!(
            "estimate shape {:?} != mix shape {:?}",
            vocal_est.dim(),
            mix_mag.dim()
        )));
    }
    let mut mask = Array2::<f64>::zeros(mix_mag.raw_dim());
    ndarray::Zip::from(&mut mask)
        .and(vocal_est)
        .and(mix_mag)
        .for_each(|m, &v, &x| *m = (v / (x + MASK_EPSILON)).clamp(0.0, 1.0));
    Ok(mask)
}

/// Complement mask `1 - mask`; input must lie in [0, 1].
pub fn invert_mask(mask: &Array2<f64>) -> Result<Array2<f64>> {
    if mask.iter().any(|&m| !(0.0..=1.0).contains(&m)) {
        return Err(Error::invalid("mask values must lie in [0, 1]"));
    }
    Ok(mask.mapv(|m| 1.0 - m))
}

/// Splits the mixture magnitude into vocal and accompaniment magnitudes.
/// The accompaniment is the exact remainder `mix - vocal`, so the two parts
/// partition the mixture.
pub fn masked_magnitudes(
    mask: &Array2<f64>,
    mix_mag: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if mask.dim() != mix_mag.dim() {
        return Err(Error::invalid(format!(
            "mask shape {:?} != mix shape {:?}",
            mask.dim(),
            mix_mag.dim()
        )));
    }
    let vocal = mask * mix_mag;
    let accomp = mix_mag - &vocal;
    Ok((vocal, accomp))
}

/// Full separation pipeline: resample to the working rate, STFT, drop the
/// Nyquist row, predict vocal magnitudes, mask the mixture, restore the
/// Nyquist row and reconstruct both sources with the mixture phase.
pub fn separate_track(
    params: &ModelParams<f32>,
    config: &UNetConfig,
    spec: NormalizationSpec,
    mix: &Waveform,
    policy: MaskPolicy,
) -> Result<SeparationResult> {
    let resampled = if mix.sample_rate == DEFAULT_SAMPLE_RATE {
        mix.clone()
    } else {
        resample(mix, DEFAULT_SAMPLE_RATE)?
    };
    if resampled.len() < DEFAULT_FRAME_SIZE {
        return Err(Error::invalid(format!(
            "input too short after resampling: {} samples < one {DEFAULT_FRAME_SIZE}-sample frame",
            resampled.len()
        )));
    }

    let window = hann_window(DEFAULT_FRAME_SIZE)?;
    let spectrum = stft(&resampled, DEFAULT_FRAME_SIZE, DEFAULT_HOP, &window)?;
    let (mag, phase) = magnitude_phase(&spectrum);
    let mix512 = drop_nyquist(&mag.values)?;

    let vocal_est = predict_full(params, config, spec, &mix512)?;
    let mask = compute_mask(&vocal_est, &mix512)?;

    let (vocal_mag, accomp_mag) = match policy {
        MaskPolicy::Masked => masked_magnitudes(&mask, &mix512)?,
        MaskPolicy::Raw => {
            // Raw network output as the vocal magnitude; remainder clamped.
            let accomp = ndarray::Zip::from(&mix512)
                .and(&vocal_est)
                .map_collect(|&m, &v| (m - v).max(0.0));
            (vocal_est.clone(), accomp)
        }
    };

    let reconstruct = |mag512: Array2<f64>| -> Result<Waveform> {
        let full = restore_nyquist(&mag512)?;
        let complex = combine(
            &MagnitudeSpectrogram { values: full },
            &phase,
            spectrum.params,
        )?;
        istft(&complex, DEFAULT_HOP, &window)
    };
    let vocals = reconstruct(vocal_mag)?;
    let accompaniment = reconstruct(accomp_mag)?;

    Ok(SeparationResult {
        vocals,
        accompaniment,
        mask,
    })
}
