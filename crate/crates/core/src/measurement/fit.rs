//! Ordinary least-squares line fit of voltage against current.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::sweep::IVSample;
use crate::scalar::{Field, Real};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FitError {
    #[error("need at least two unclamped samples with distinct currents")]
    InsufficientData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFit<T> {
    pub slope: T,
    pub intercept: T,
    /// Sum of squared residuals.
    pub sse: T,
    pub n: usize,
}

/// Least-squares fit of `y = slope * x + intercept`, using centred sums.
///
/// Exact when `T` is an exact field.
pub fn fit_line<T: Field>(points: &[(T, T)]) -> Result<LineFit<T>, FitError> {
    let n = points.len();
    if n < 2 {
        return Err(FitError::InsufficientData);
    }
    let count = T::from_usize(n).ok_or(FitError::InsufficientData)?;
    let (sum_x, sum_y) = points
        .iter()
        .fold((T::zero(), T::zero()), |(sx, sy), (x, y)| (sx + x.clone(), sy + y.clone()));
    let mean_x = sum_x / count.clone();
    let mean_y = sum_y / count;
    let (sxx, sxy) = points.iter().fold((T::zero(), T::zero()), |(sxx, sxy), (x, y)| {
        let dx = x.clone() - mean_x.clone();
        let dy = y.clone() - mean_y.clone();
        (sxx + dx.clone() * dx.clone(), sxy + dx * dy)
    });
    if sxx.is_zero() {
        return Err(FitError::InsufficientData);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope.clone() * mean_x;
    let sse = points.iter().fold(T::zero(), |acc, (x, y)| {
        let r = y.clone() - (slope.clone() * x.clone() + intercept.clone());
        acc + r.clone() * r
    });
    Ok(LineFit {
        slope,
        intercept,
        sse,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResistanceFit<T> {
    pub resistance: T,
    pub intercept: T,
    pub rms: T,
}

/// Resistance as the gradient of V against I over the unclamped samples.
pub fn fit_resistance_points<T: Real>(points: &[(T, T)]) -> Result<ResistanceFit<T>, FitError> {
    let fit = fit_line(points)?;
    let n = T::from_usize(fit.n).ok_or(FitError::InsufficientData)?;
    Ok(ResistanceFit {
        resistance: fit.slope,
        intercept: fit.intercept,
        rms: (fit.sse / n).sqrt(),
    })
}

pub fn fit_resistance(samples: &[IVSample]) -> Result<ResistanceFit<f64>, FitError> {
    let points: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| !s.clamped)
        .map(|s| (s.current, s.voltage))
        .collect();
    fit_resistance_points(&points)
}
