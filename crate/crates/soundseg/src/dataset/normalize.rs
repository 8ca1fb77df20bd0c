//! Per-slice normalization with invertible parameters.
//!
//! Axis semantics: `Frequency` computes statistics over the frequency rows
//! independently for each time column (one parameter set per column); `Time`
//! computes statistics over the time columns independently for each frequency
//! row. Statistics are kept in f64 so `denormalize(normalize(x))` recovers
//! the input to f32 rounding.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaler {
    /// `(x - min) / (max - min)` per slice.
    #[serde(rename = "minmax")]
    MinMax,
    /// `(x - median) / IQR` per slice, with linear-interpolation percentiles.
    #[serde(rename = "quantile")]
    Robust,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormAxis {
    Frequency,
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub scaler: Scaler,
    pub axis: NormAxis,
}

/// Affine parameters of one slice: normalized = `(x - offset) / scale`.
/// A degenerate slice (zero spread) normalizes to 0 and denormalizes back to
/// the constant `offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceParams {
    pub offset: f64,
    pub scale: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationParams {
    pub spec: NormalizationSpec,
    /// One entry per time column (`Frequency` axis) or per frequency row
    /// (`Time` axis).
    pub slices: Vec<SliceParams>,
}

/// Percentile with linear interpolation between order statistics,
/// `p` in [0, 100]. Input must be sorted.
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

fn slice_params(values: &[f64], scaler: Scaler) -> SliceParams {
    match scaler {
        Scaler::MinMax => {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for &v in values {
                min = min.min(v);
                max = max.max(v);
            }
            SliceParams {
                offset: min,
                scale: max - min,
                degenerate: max == min,
            }
        }
        Scaler::Robust => {
            let mut sorted = values.to_vec();
            sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            let median = percentile_sorted(&sorted, 50.0);
            let iqr = percentile_sorted(&sorted, 75.0) - percentile_sorted(&sorted, 25.0);
            SliceParams {
                offset: median,
                scale: iqr,
                degenerate: iqr == 0.0,
            }
        }
    }
}

fn compute_params(patch: &Array2<f32>, spec: NormalizationSpec) -> NormalizationParams {
    let slices = match spec.axis {
        NormAxis::Frequency => (0..patch.ncols())
            .map(|c| {
                let col: Vec<f64> = patch.column(c).iter().map(|&v| v as f64).collect();
                slice_params(&col, spec.scaler)
            })
            .collect(),
        NormAxis::Time => (0..patch.nrows())
            .map(|r| {
                let row: Vec<f64> = patch.row(r).iter().map(|&v| v as f64).collect();
                slice_params(&row, spec.scaler)
            })
            .collect(),
    };
    NormalizationParams { spec, slices }
}

fn transform(
    patch: &Array2<f32>,
    params: &NormalizationParams,
    forward: bool,
) -> Result<Array2<f32>> {
    let expected = match params.spec.axis {
        NormAxis::Frequency => patch.ncols(),
        NormAxis::Time => patch.nrows(),
    };
    if params.slices.len() != expected {
        return Err(Error::invalid(format!(
            "params have {} slices, patch needs {expected}",
            params.slices.len()
        )));
    }
    let mut out = patch.mapv(|v| v as f64);
    let apply = |v: &mut f64, s: &SliceParams| {
        if forward {
            *v = if s.degenerate {
                0.0
            } else {
                (*v - s.offset) / s.scale
            };
        } else {
            *v = if s.degenerate {
                s.offset
            } else {
                *v * s.scale + s.offset
            };
        }
    };
    match params.spec.axis {
        NormAxis::Frequency => {
            for (c, s) in params.slices.iter().enumerate() {
                out.column_mut(c).iter_mut().for_each(|v| apply(v, s));
            }
        }
        NormAxis::Time => {
            for (r, s) in params.slices.iter().enumerate() {
                out.row_mut(r).iter_mut().for_each(|v| apply(v, s));
            }
        }
    }
    Ok(out.mapv(|v| v as f32))
}

/// Computes per-slice statistics from `patch` and returns the normalized grid
/// together with the parameters needed to invert or to transform an aligned
/// grid (see [`apply_params`]).
pub fn normalize(
    patch: &Array2<f32>,
    spec: NormalizationSpec,
) -> Result<(Array2<f32>, NormalizationParams)> {
    if patch.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("patch contains NaN/Inf"));
    }
    let params = compute_params(patch, spec);
    let normalized = transform(patch, &params, true)?;
    Ok((normalized, params))
}

/// Applies existing parameters to a grid (used to normalize the vocal patch
/// with the mix-derived statistics).
pub fn apply_params(patch: &Array2<f32>, params: &NormalizationParams) -> Result<Array2<f32>> {
    if patch.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("patch contains NaN/Inf"));
    }
    transform(patch, params, true)
}

/// Exact inverse of [`normalize`] for non-degenerate slices; degenerate
/// slices restore their constant.
pub fn denormalize(patch: &Array2<f32>, params: &NormalizationParams) -> Result<Array2<f32>> {
    transform(patch, params, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spec(scaler: Scaler, axis: NormAxis) -> NormalizationSpec {
        NormalizationSpec { scaler, axis }
    }

    #[test]
    fn minmax_column() {
        let patch = array![[1.0f32], [2.0], [3.0]];
        let (out, params) = normalize(&patch, spec(Scaler::MinMax, NormAxis::Frequency)).unwrap();
        assert_eq!(out, array![[0.0f32], [0.5], [1.0]]);
        assert_eq!(params.slices.len(), 1);
        assert_eq!(params.slices[0].offset, 1.0);
        assert_eq!(params.slices[0].scale, 2.0);
    }

    #[test]
    fn robust_slice_example() {
        // median 3, p25 = 2, p75 = 4 -> [-1, -0.5, 0, 0.5, 1]
        let patch = array![[1.0f32, 2.0, 3.0, 4.0, 5.0]];
        let (out, _) = normalize(&patch, spec(Scaler::Robust, NormAxis::Time)).unwrap();
        let expect = [-1.0f32, -0.5, 0.0, 0.5, 1.0];
        for (a, e) in out.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn degenerate_slice_flags_and_restores() {
        let patch = array![[7.0f32], [7.0], [7.0]];
        for scaler in [Scaler::MinMax, Scaler::Robust] {
            let (out, params) = normalize(&patch, spec(scaler, NormAxis::Frequency)).unwrap();
            assert!(out.iter().all(|&v| v == 0.0));
            assert!(params.slices[0].degenerate);
            let back = denormalize(&out, &params).unwrap();
            assert!(back.iter().all(|&v| v == 7.0));
        }
    }

    #[test]
    fn denormalize_of_zeros_restores_offset() {
        let params = NormalizationParams {
            spec: spec(Scaler::MinMax, NormAxis::Frequency),
            slices: vec![SliceParams {
                offset: 2.0,
                scale: 3.0,
                degenerate: false,
            }],
        };
        let zeros = Array2::<f32>::zeros((4, 1));
        let back = denormalize(&zeros, &params).unwrap();
        assert!(back.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn rejects_nan_and_mismatched_params() {
        let patch = array![[f32::NAN]];
        assert!(normalize(&patch, spec(Scaler::MinMax, NormAxis::Time)).is_err());
        let params = NormalizationParams {
            spec: spec(Scaler::MinMax, NormAxis::Time),
            slices: vec![],
        };
        let ok = array![[1.0f32]];
        assert!(denormalize(&ok, &params).is_err());
    }

    #[test]
    fn percentile_linear_interpolation() {
        let v = [10.0, 20.0, 30.0, 40.0];
        assert_eq!(percentile_sorted(&v, 0.0), 10.0);
        assert_eq!(percentile_sorted(&v, 100.0), 40.0);
        assert_eq!(percentile_sorted(&v, 50.0), 25.0);
        assert_eq!(percentile_sorted(&v, 25.0), 17.5);
    }
}
