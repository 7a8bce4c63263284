//! Layered earth models, dispersion curves, and velocity sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-D subsurface model: `N` finite layers over an infinite halfspace.
///
/// `thickness` has length `N` (metres). `density` (kg/m^3), `vp`, and `vs`
/// (m/s) have length `N + 1`; index `N` describes the halfspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredEarthModel {
    pub thickness: Vec<f64>,
    pub density: Vec<f64>,
    pub vp: Vec<f64>,
    pub vs: Vec<f64>,
}

impl LayeredEarthModel {
    pub fn new(thickness: Vec<f64>, density: Vec<f64>, vp: Vec<f64>, vs: Vec<f64>) -> Self {
        LayeredEarthModel {
            thickness,
            density,
            vp,
            vs,
        }
    }

    /// Number of finite-thickness layers (the halfspace is not counted).
    pub fn n_layers(&self) -> usize {
        self.thickness.len()
    }

    /// Order of the assembled global stiffness matrix: two degrees of
    /// freedom per interface, `2 * (N + 1)` in total.
    pub fn order(&self) -> usize {
        2 * (self.n_layers() + 1)
    }

    /// Checks structural and physical invariants, collecting every violation
    /// rather than stopping at the first.
    pub fn validate(&self) -> std::result::Result<(), Vec<ModelViolation>> {
        let mut violations = Vec::new();
        let materials = self.n_layers() + 1;
        for (field, list) in [("density", &self.density), ("vp", &self.vp), ("vs", &self.vs)] {
            if list.len() != materials {
                violations.push(ModelViolation::PropertyLength {
                    field,
                    expected: materials,
                    actual: list.len(),
                });
            }
        }
        for (i, &h) in self.thickness.iter().enumerate() {
            if !(h > 0.0) || !h.is_finite() {
                violations.push(ModelViolation::NonpositiveEntry {
                    field: "thickness",
                    index: i,
                    value: h,
                });
            }
        }
        for (field, list) in [("density", &self.density), ("vp", &self.vp), ("vs", &self.vs)] {
            for (i, &x) in list.iter().enumerate() {
                if !(x > 0.0) || !x.is_finite() {
                    violations.push(ModelViolation::NonpositiveEntry {
                        field,
                        index: i,
                        value: x,
                    });
                }
            }
        }
        for i in 0..self.vp.len().min(self.vs.len()) {
            if self.vp[i] <= self.vs[i] {
                violations.push(ModelViolation::ShearAtOrAboveCompressional {
                    index: i,
                    vs: self.vs[i],
                    vp: self.vp[i],
                });
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    /// Like [`validate`](Self::validate) but wrapped in the crate error type.
    pub fn ensure_valid(&self) -> Result<()> {
        self.validate().map_err(Error::InvalidModel)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelViolation {
    #[error("{field} has {actual} entries, expected {expected} (layers + halfspace)")]
    PropertyLength {
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{field}[{index}] = {value}; entries must be positive and finite")]
    NonpositiveEntry {
        field: &'static str,
        index: usize,
        value: f64,
    },
    #[error("vs[{index}] = {vs} must be strictly below vp[{index}] = {vp}")]
    ShearAtOrAboveCompressional { index: usize, vs: f64, vp: f64 },
}

/// Paired wavelengths (m) and phase velocities (m/s).
///
/// Used both for experimental input and theoretical output; `velocities[i]`
/// belongs to `wavelengths[i]`. No ordering is assumed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DispersionCurve {
    pub wavelengths: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl DispersionCurve {
    pub fn new(wavelengths: Vec<f64>, velocities: Vec<f64>) -> Self {
        DispersionCurve {
            wavelengths,
            velocities,
        }
    }

    pub fn len(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelengths.is_empty()
    }

    /// A populated curve must have matching column lengths and strictly
    /// positive entries in both columns.
    pub fn validate(&self) -> Result<()> {
        if self.wavelengths.len() != self.velocities.len() {
            return Err(Error::CurveLengthMismatch {
                theoretical: self.wavelengths.len(),
                experimental: self.velocities.len(),
            });
        }
        if self.is_empty() {
            return Err(Error::EmptyCurve);
        }
        for (i, &v) in self.wavelengths.iter().chain(self.velocities.iter()).enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                let index = i % self.wavelengths.len();
                return Err(Error::NonpositiveExperimental { index, value: v });
            }
        }
        Ok(())
    }
}

/// Test-velocity range for the root scan: `v_min..=v_max` in steps of `v_step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocitySweep {
    pub v_min: f64,
    pub v_max: f64,
    pub v_step: f64,
}

impl VelocitySweep {
    pub fn new(v_min: f64, v_max: f64, v_step: f64) -> Self {
        VelocitySweep {
            v_min,
            v_max,
            v_step,
        }
    }

    /// Expands the sweep into the explicit increasing velocity list
    /// `v_i = v_min + i * v_step`.
    ///
    /// The count is `floor((v_max - v_min) / v_step + 1e-9) + 1`, so an exact
    /// multiple lands on `v_max` even when the division rounds just below an
    /// integer. Entries that would exceed `v_max` by more than `1e-9 * v_step`
    /// are dropped. Fewer than two velocities is an error: a single point can
    /// never bracket a sign change.
    pub fn materialize(&self) -> Result<Vec<f64>> {
        if !(self.v_min > 0.0) || !self.v_min.is_finite() {
            return Err(Error::InvalidSweep(format!(
                "v_min must be positive, got {}",
                self.v_min
            )));
        }
        if !(self.v_max > self.v_min) || !self.v_max.is_finite() {
            return Err(Error::InvalidSweep(format!(
                "v_max must exceed v_min, got v_min = {}, v_max = {}",
                self.v_min, self.v_max
            )));
        }
        if !(self.v_step > 0.0) || !self.v_step.is_finite() {
            return Err(Error::InvalidSweep(format!(
                "v_step must be positive, got {}",
                self.v_step
            )));
        }
        let count = ((self.v_max - self.v_min) / self.v_step + 1e-9).floor() as usize + 1;
        let mut values: Vec<f64> = (0..count)
            .map(|i| self.v_min + i as f64 * self.v_step)
            .collect();
        while values
            .last()
            .is_some_and(|&v| v > self.v_max + 1e-9 * self.v_step)
        {
            values.pop();
        }
        if values.len() < 2 {
            return Err(Error::InvalidSweep(format!(
                "sweep [{}, {}] with step {} yields {} velocity; at least two are needed to bracket a root",
                self.v_min,
                self.v_max,
                self.v_step,
                values.len()
            )));
        }
        Ok(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn valid_model() -> LayeredEarthModel {
        LayeredEarthModel::new(
            vec![2.0, 3.0],
            vec![1800.0, 1850.0, 1900.0],
            vec![300.0, 400.0, 500.0],
            vec![150.0, 200.0, 250.0],
        )
    }

    #[test]
    fn valid_model_passes() {
        assert!(valid_model().validate().is_ok());
    }

    #[test]
    fn property_length_mismatch_reported() {
        let mut m = valid_model();
        m.density.pop();
        let violations = m.validate().unwrap_err();
        assert!(matches!(
            violations[0],
            ModelViolation::PropertyLength {
                field: "density",
                expected: 3,
                actual: 2
            }
        ));
    }

    #[test]
    fn nonpositive_thickness_reported() {
        let mut m = valid_model();
        m.thickness[1] = 0.0;
        let violations = m.validate().unwrap_err();
        assert_eq!(violations.len(), 1);
        assert!(matches!(
            violations[0],
            ModelViolation::NonpositiveEntry {
                field: "thickness",
                index: 1,
                ..
            }
        ));
    }

    #[test]
    fn vs_equal_vp_reported() {
        let mut m = valid_model();
        m.vs[2] = m.vp[2];
        let violations = m.validate().unwrap_err();
        assert!(matches!(
            violations[0],
            ModelViolation::ShearAtOrAboveCompressional { index: 2, .. }
        ));
    }

    #[test]
    fn multiple_violations_collected() {
        let mut m = valid_model();
        m.thickness[0] = -1.0;
        m.vs[0] = m.vp[0] + 1.0;
        let violations = m.validate().unwrap_err();
        assert_eq!(violations.len(), 2);
    }

    #[test]
    fn validation_does_not_mutate() {
        let m = valid_model();
        let copy = m.clone();
        let _ = m.validate();
        let _ = m.validate();
        assert_eq!(m, copy);
    }

    #[test]
    fn sweep_exact_multiple_includes_endpoint() {
        let sweep = VelocitySweep::new(100.0, 400.0, 100.0);
        assert_eq!(sweep.materialize().unwrap(), vec![100.0, 200.0, 300.0, 400.0]);
    }

    #[test]
    fn sweep_partial_step_truncates() {
        let sweep = VelocitySweep::new(100.0, 350.0, 100.0);
        assert_eq!(sweep.materialize().unwrap(), vec![100.0, 200.0, 300.0]);
    }

    #[test]
    fn sweep_single_point_rejected() {
        let sweep = VelocitySweep::new(50.0, 50.5, 1.0);
        assert!(matches!(
            sweep.materialize(),
            Err(Error::InvalidSweep(_))
        ));
    }

    #[test]
    fn sweep_rejects_bad_bounds() {
        assert!(VelocitySweep::new(-1.0, 10.0, 1.0).materialize().is_err());
        assert!(VelocitySweep::new(10.0, 10.0, 1.0).materialize().is_err());
        assert!(VelocitySweep::new(10.0, 20.0, 0.0).materialize().is_err());
    }

    #[test]
    fn curve_validation() {
        let ok = DispersionCurve::new(vec![5.0, 10.0], vec![100.0, 120.0]);
        assert!(ok.validate().is_ok());

        let mismatch = DispersionCurve::new(vec![5.0], vec![100.0, 120.0]);
        assert!(matches!(
            mismatch.validate(),
            Err(Error::CurveLengthMismatch { .. })
        ));

        let empty = DispersionCurve::default();
        assert!(matches!(empty.validate(), Err(Error::EmptyCurve)));

        let negative = DispersionCurve::new(vec![5.0, 10.0], vec![100.0, -3.0]);
        assert!(negative.validate().is_err());
    }

    proptest! {
        /// Consecutive materialized velocities differ by v_step up to one
        /// rounding ulp, and the list stays within [v_min, v_max + eps].
        #[test]
        fn sweep_spacing_and_bounds(
            v_min in 1.0f64..500.0,
            span in 1.0f64..600.0,
            v_step in 0.05f64..25.0,
        ) {
            let sweep = VelocitySweep::new(v_min, v_min + span, v_step);
            if let Ok(values) = sweep.materialize() {
                prop_assert!(values.len() >= 2);
                prop_assert_eq!(values[0], v_min);
                for w in values.windows(2) {
                    let diff = w[1] - w[0];
                    prop_assert!((diff - v_step).abs() <= v_step * 1e-12 + 1e-12);
                }
                let last = *values.last().unwrap();
                prop_assert!(last <= sweep.v_max + 1e-9 * v_step);
                // one more step would overshoot
                prop_assert!(last + v_step > sweep.v_max + 1e-9 * v_step);
            }
        }
    }
}
