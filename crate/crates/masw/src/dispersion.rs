//! Root bracketing along a velocity sweep and misfit evaluation.

use crate::error::{Error, Result};
use crate::model::{DispersionCurve, LayeredEarthModel, VelocitySweep};
use crate::stiffness::{determinant_at, determinant_sign, TermsTable};
use crate::Engine;

/// Location of the first determinant sign change along a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignChange {
    /// Index into the materialized sweep.
    pub index: usize,
    /// The sweep velocity at `index`, reported exactly as materialized.
    pub velocity: f64,
    /// Determinants evaluated up to and including the change.
    pub determinants: u64,
}

/// Whether the pair of consecutive determinant signs brackets a root. An
/// exact zero on either side counts as a change.
#[inline]
pub(crate) fn is_sign_change(previous: i8, current: i8) -> bool {
    (previous as i16) * (current as i16) <= 0
}

/// Scans the sweep in order and stops at the first velocity whose
/// determinant sign differs from its predecessor (or is exactly zero),
/// reporting the second velocity of the bracketing pair.
pub fn find_first_sign_change(
    model: &LayeredEarthModel,
    wavelength: f64,
    table: &TermsTable,
) -> Result<SignChange> {
    debug_assert!(wavelength > 0.0);
    let velocities = table.velocities();
    let mut previous = determinant_sign(determinant_at(model, wavelength, table.get(0)));
    let mut determinants = 1u64;
    for index in 1..table.len() {
        let sign = determinant_sign(determinant_at(model, wavelength, table.get(index)));
        determinants += 1;
        if is_sign_change(previous, sign) {
            return Ok(SignChange {
                index,
                velocity: velocities[index],
                determinants,
            });
        }
        previous = sign;
    }
    Err(Error::NoSignChange {
        wavelength,
        v_min: velocities[0],
        v_max: *velocities.last().unwrap(),
    })
}

/// Serial engine core: one wavelength after another, each with early exit.
pub(crate) fn serial_curve(
    model: &LayeredEarthModel,
    wavelengths: &[f64],
    table: &TermsTable,
) -> Result<(DispersionCurve, u64)> {
    let mut velocities = Vec::with_capacity(wavelengths.len());
    let mut determinants = 0u64;
    for &wavelength in wavelengths {
        let change = find_first_sign_change(model, wavelength, table)?;
        velocities.push(change.velocity);
        determinants += change.determinants;
    }
    Ok((
        DispersionCurve::new(wavelengths.to_vec(), velocities),
        determinants,
    ))
}

/// Theoretical dispersion curve of a model at the given wavelengths.
pub fn theoretical_dispersion_curve(
    model: &LayeredEarthModel,
    wavelengths: &[f64],
    sweep: &VelocitySweep,
) -> Result<DispersionCurve> {
    Engine::Serial
        .curve(model, wavelengths, sweep)
        .map(|(curve, _)| curve)
}

/// Mean relative deviation between paired curves:
/// the average of `|ct - ce| / ce` over all points.
///
/// Terms are accumulated in index order with one final division. Every
/// engine funnels its finished curve through this exact fold, which is what
/// makes misfits bitwise identical across engines.
pub fn misfit(theoretical: &DispersionCurve, experimental: &DispersionCurve) -> Result<f64> {
    if theoretical.len() != experimental.len() {
        return Err(Error::CurveLengthMismatch {
            theoretical: theoretical.len(),
            experimental: experimental.len(),
        });
    }
    if experimental.is_empty() {
        return Err(Error::EmptyCurve);
    }
    let mut sum = 0.0;
    for (index, (&ct, &ce)) in theoretical
        .velocities
        .iter()
        .zip(&experimental.velocities)
        .enumerate()
    {
        if !(ce > 0.0) || !ce.is_finite() {
            return Err(Error::NonpositiveExperimental {
                index,
                value: ce,
            });
        }
        sum += (ct - ce).abs() / ce;
    }
    Ok(sum / experimental.len() as f64)
}

/// Outcome of evaluating one candidate model against an experimental curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveResult {
    pub curve: DispersionCurve,
    pub misfit: f64,
    pub determinants_computed: u64,
}

/// Serial evaluation of a candidate: theoretical curve at the experimental
/// wavelengths, then misfit.
pub fn evaluate_model(
    model: &LayeredEarthModel,
    experimental: &DispersionCurve,
    sweep: &VelocitySweep,
) -> Result<CurveResult> {
    Engine::Serial.evaluate(model, experimental, sweep)
}
