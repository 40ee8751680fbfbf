//! Critical current from the normal-state resistance (Ambegaokar-Baratoff).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, Field, Real};

/// Elementary charge, C (exact in SI).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Reduced Planck constant, J s.
pub const REDUCED_PLANCK: f64 = 1.054_571_817e-34;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JosephsonError {
    #[error("resistance must be > 0")]
    NonPositiveResistance,
    #[error("superconducting gap must be > 0")]
    NonPositiveGap,
}

/// Physical constants in the scalar type of the computation.
#[derive(Debug, Clone, PartialEq)]
pub struct Constants<T> {
    pub pi: T,
    pub elementary_charge: T,
    pub reduced_planck: T,
}

impl<T: Field> Constants<T> {
    /// CODATA constants with a caller-supplied value of pi (for exact types).
    pub fn with_pi(pi: T) -> Self {
        Self {
            pi,
            elementary_charge: lit(ELEMENTARY_CHARGE),
            reduced_planck: lit(REDUCED_PLANCK),
        }
    }
}

impl<T: Real> Constants<T> {
    pub fn codata() -> Self {
        Self::with_pi(T::PI())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JunctionParameters<T> {
    pub critical_current: T,
    /// E_J = hbar * I_c / (2e).
    pub josephson_energy: T,
}

/// The I_c R product fixed by the gap: pi * gap / (2e).
pub fn ic_r_product<T: Field>(gap_joules: T, k: &Constants<T>) -> T {
    let two = T::one() + T::one();
    k.pi.clone() * gap_joules / (two * k.elementary_charge.clone())
}

/// I_c = pi * gap / (2 e R) and the Josephson energy derived from it.
pub fn critical_current<T: Field>(
    resistance: T,
    gap_joules: T,
    k: &Constants<T>,
) -> Result<JunctionParameters<T>, JosephsonError> {
    if resistance <= T::zero() {
        return Err(JosephsonError::NonPositiveResistance);
    }
    if gap_joules <= T::zero() {
        return Err(JosephsonError::NonPositiveGap);
    }
    let two = T::one() + T::one();
    let ic = ic_r_product(gap_joules, k) / resistance;
    let ej = k.reduced_planck.clone() * ic.clone() / (two * k.elementary_charge.clone());
    Ok(JunctionParameters {
        critical_current: ic,
        josephson_energy: ej,
    })
}
