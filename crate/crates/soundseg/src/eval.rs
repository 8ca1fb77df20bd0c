//! Objective separation scoring.
//!
//! An estimate is decomposed against the reference sources with zero-lag
//! (instantaneous) orthogonal projections: the target part is the projection
//! onto the target reference alone, interference is the rest of the
//! projection onto the span of all references, and artifacts are what falls
//! outside that span. SDR/SIR/SAR follow from the component energies. Note
//! that filtered-projection implementations (512-tap allowed distortion)
//! produce different absolute numbers; this variant is exactly testable
//! against a small least-squares oracle.

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Segments with total reference energy below this are treated as silent.
const SILENCE_ENERGY: f64 = 1e-12;
/// A reference whose residual after orthogonalization drops below this
/// fraction of its norm is linearly dependent on the previous ones.
const DEPENDENCE_TOL: f64 = 1e-10;
/// Error components whose energy falls below this fraction of the estimate's
/// energy are pure f64 projection roundoff (the true component is zero) and
/// are snapped to exact zero, which is what makes perfect estimates score
/// +inf rather than ~300 dB of noise.
const ZERO_ENERGY_REL: f64 = 1e-24;

/// The four-way split of an estimate. `e_noise` is identically zero here
/// (there are no noise references) but kept so the components always sum to
/// the estimate.
#[derive(Debug, Clone)]
pub struct DecompositionComponents {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_noise: Vec<f64>,
    pub e_artif: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalScores {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn energy(v: &[f64]) -> f64 {
    dot(v, v)
}

/// Projects `estimate` onto the references. `s_target` is the projection onto
/// `references[target_index]` alone, `e_interf` the remainder of the
/// projection onto the whole reference span, `e_artif` the out-of-span rest.
pub fn decompose(
    estimate: &[f64],
    references: &[Vec<f64>],
    target_index: usize,
) -> Result<DecompositionComponents> {
    let n = estimate.len();
    if n < 2 {
        return Err(Error::invalid("signals must have at least 2 samples"));
    }
    if references.is_empty() {
        return Err(Error::invalid("at least one reference required"));
    }
    if target_index >= references.len() {
        return Err(Error::invalid(format!(
            "target_index {target_index} out of range for {} references",
            references.len()
        )));
    }
    for (i, r) in references.iter().enumerate() {
        if r.len() != n {
            return Err(Error::invalid(format!(
                "reference {i} has length {}, estimate has {n}",
                r.len()
            )));
        }
    }

    // Modified Gram-Schmidt with one re-orthogonalization pass.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(references.len());
    for (i, r) in references.iter().enumerate() {
        let orig_norm = energy(r).sqrt();
        if orig_norm == 0.0 {
            return Err(Error::invalid(format!("reference {i} has zero norm")));
        }
        let mut v = r.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&v, q);
                for (vi, qi) in v.iter_mut().zip(q.iter()) {
                    *vi -= c * qi;
                }
            }
        }
        let res_norm = energy(&v).sqrt();
        if res_norm < DEPENDENCE_TOL * orig_norm {
            return Err(Error::invalid(format!(
                "reference {i} is linearly dependent on the previous references"
            )));
        }
        for vi in v.iter_mut() {
            *vi /= res_norm;
        }
        basis.push(v);
    }

    // Projection onto the target reference alone.
    let target = &references[target_index];
    let coeff = dot(estimate, target) / energy(target);
    let s_target: Vec<f64> = target.iter().map(|&t| coeff * t).collect();

    // Projection onto the span of all references.
    let mut span_proj = vec![0.0f64; n];
    for q in &basis {
        let c = dot(estimate, q);
        for (p, qi) in span_proj.iter_mut().zip(q.iter()) {
            *p += c * qi;
        }
    }

    let mut e_interf: Vec<f64> = span_proj
        .iter()
        .zip(s_target.iter())
        .map(|(p, s)| p - s)
        .collect();
    let mut e_artif: Vec<f64> = estimate
        .iter()
        .zip(span_proj.iter())
        .map(|(e, p)| e - p)
        .collect();

    let zero_floor = ZERO_ENERGY_REL * energy(estimate);
    for component in [&mut e_interf, &mut e_artif] {
        if energy(component) <= zero_floor {
            component.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    Ok(DecompositionComponents {
        s_target,
        e_interf,
        e_noise: vec![0.0; n],
        e_artif,
    })
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

fn check_target(c: &DecompositionComponents) -> Result<f64> {
    let e = energy(&c.s_target);
    if e == 0.0 {
        return Err(Error::NoScore(
            "target projection has zero energy; SDR/SIR/SAR undefined".into(),
        ));
    }
    Ok(e)
}

/// Source-to-distortion ratio in dB.
pub fn sdr(c: &DecompositionComponents) -> Result<f64> {
    let target = check_target(c)?;
    let err: Vec<f64> = c
        .e_interf
        .iter()
        .zip(c.e_noise.iter())
        .zip(c.e_artif.iter())
        .map(|((i, n), a)| i + n + a)
        .collect();
    Ok(ratio_db(target, energy(&err)))
}

/// Source-to-interference ratio in dB.
pub fn sir(c: &DecompositionComponents) -> Result<f64> {
    let target = check_target(c)?;
    Ok(ratio_db(target, energy(&c.e_interf)))
}

/// Source-to-artifact ratio in dB.
pub fn sar(c: &DecompositionComponents) -> Result<f64> {
    check_target(c)?;
    let clean: Vec<f64> = c
        .s_target
        .iter()
        .zip(c.e_interf.iter())
        .zip(c.e_noise.iter())
        .map(|((s, i), n)| s + i + n)
        .collect();
    Ok(ratio_db(energy(&clean), energy(&c.e_artif)))
}

/// All three scores of one decomposition.
pub fn scores(c: &DecompositionComponents) -> Result<EvalScores> {
    Ok(EvalScores {
        sdr: sdr(c)?,
        sir: sir(c)?,
        sar: sar(c)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentScore {
    /// Segment index within the track (before silent-segment skipping).
    pub index: usize,
    pub scores: EvalScores,
}

/// Per-segment and aggregate scores of one track.
#[derive(Debug, Clone)]
pub struct TrackEval {
    pub segments: Vec<SegmentScore>,
    pub median: EvalScores,
    pub mean: EvalScores,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Scores an estimated vocal against the vocal/accompaniment references.
/// Signals are cut into non-overlapping `segment_seconds` windows (trailing
/// remainder dropped); segments where either reference is silent are skipped.
/// The track score is the median over segments, with the mean alongside.
pub fn bss_eval_track(
    est_vocal: &Waveform,
    ref_vocal: &Waveform,
    ref_accomp: &Waveform,
    segment_seconds: f64,
) -> Result<TrackEval> {
    if est_vocal.sample_rate != ref_vocal.sample_rate
        || est_vocal.sample_rate != ref_accomp.sample_rate
    {
        return Err(Error::invalid(format!(
            "sample rates differ: estimate {}, vocal {}, accompaniment {}",
            est_vocal.sample_rate, ref_vocal.sample_rate, ref_accomp.sample_rate
        )));
    }
    if est_vocal.len() != ref_vocal.len() || est_vocal.len() != ref_accomp.len() {
        return Err(Error::invalid(format!(
            "signal lengths differ: estimate {}, vocal {}, accompaniment {}",
            est_vocal.len(),
            ref_vocal.len(),
            ref_accomp.len()
        )));
    }
    if segment_seconds < 0.1 {
        return Err(Error::invalid(format!(
            "segment_seconds {segment_seconds} must be at least 0.1"
        )));
    }

    let seg = (segment_seconds * est_vocal.sample_rate as f64).round() as usize;
    let n_segments = est_vocal.len() / seg;
    let to_f64 = |w: &Waveform, a: usize, b: usize| -> Vec<f64> {
        w.samples[a..b].iter().map(|&v| v as f64).collect()
    };

    let mut segments = Vec::new();
    for i in 0..n_segments {
        let (a, b) = (i * seg, (i + 1) * seg);
        let rv = to_f64(ref_vocal, a, b);
        let ra = to_f64(ref_accomp, a, b);
        if energy(&rv) < SILENCE_ENERGY || energy(&ra) < SILENCE_ENERGY {
            continue;
        }
        let est = to_f64(est_vocal, a, b);
        let c = decompose(&est, &[rv, ra], 0)?;
        segments.push(SegmentScore {
            index: i,
            scores: scores(&c)?,
        });
    }
    if segments.is_empty() {
        return Err(Error::NoScore(
            "no scorable segments (all silent or track shorter than one segment)".into(),
        ));
    }

    let collect = |f: fn(&EvalScores) -> f64| -> Vec<f64> {
        segments.iter().map(|s| f(&s.scores)).collect()
    };
    let (mut sdrs, mut sirs, mut sars) = (
        collect(|s| s.sdr),
        collect(|s| s.sir),
        collect(|s| s.sar),
    );
    let median = EvalScores {
        sdr: median(&mut sdrs),
        sir: median(&mut sirs),
        sar: median(&mut sars),
    };
    let mean = EvalScores {
        sdr: mean(&sdrs),
        sir: mean(&sirs),
        sar: mean(&sars),
    };
    Ok(TrackEval {
        segments,
        median,
        mean,
    })
}
