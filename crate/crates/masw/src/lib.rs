//! Theoretical Rayleigh-wave dispersion curves for layered earth models.
//!
//! A model's curve assigns to each wavelength the lowest sweep velocity at
//! which the determinant of the dynamic stiffness matrix changes sign. Three
//! engines produce bitwise-identical curves and misfits: a serial scan with
//! early exit, a multi-worker split of the wavelength list over shared
//! memory, and a batched evaluation of the whole wavelength-velocity grid
//! organized into fixed phases. Misfit against an experimental curve is the
//! mean relative velocity deviation, which inversion minimizes over a set of
//! candidate models.

pub mod batched;
pub mod bench;
pub mod cli;
pub mod dispersion;
pub mod error;
pub mod io;
pub mod model;
pub mod parallel;
pub mod stiffness;

pub use error::{Error, Result};

use batched::BatchedConfig;
use dispersion::CurveResult;
use model::{DispersionCurve, LayeredEarthModel, VelocitySweep};
use parallel::PartitionStrategy;
use stiffness::TermsTable;

/// Engine selector. Every engine computes the same determinants from the
/// same precomputed terms, so curves, misfits, and error outcomes agree
/// bitwise; they differ only in scheduling and memory layout.
#[derive(Debug, Clone, PartialEq)]
pub enum Engine {
    /// One wavelength at a time, stopping at the first sign change.
    Serial,
    /// Wavelengths statically partitioned across worker threads.
    Parallel {
        workers: usize,
        strategy: PartitionStrategy,
    },
    /// Whole-grid evaluation in fixed phases with blocked sign search.
    Batched(BatchedConfig),
}

impl Engine {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::Serial => "serial",
            Engine::Parallel { .. } => "parallel",
            Engine::Batched(_) => "batched",
        }
    }

    /// Theoretical curve at the given wavelengths, plus the number of
    /// determinants evaluated.
    pub fn curve(
        &self,
        model: &LayeredEarthModel,
        wavelengths: &[f64],
        sweep: &VelocitySweep,
    ) -> Result<(DispersionCurve, u64)> {
        model.ensure_valid()?;
        let velocities = sweep.materialize()?;
        let table = TermsTable::new(model, &velocities);
        self.curve_with_table(model, wavelengths, &table)
    }

    pub(crate) fn curve_with_table(
        &self,
        model: &LayeredEarthModel,
        wavelengths: &[f64],
        table: &TermsTable,
    ) -> Result<(DispersionCurve, u64)> {
        for &w in wavelengths {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "wavelengths must be positive and finite, got {w}"
                )));
            }
        }
        match self {
            Engine::Serial => dispersion::serial_curve(model, wavelengths, table),
            Engine::Parallel { workers, strategy } => {
                parallel::parallel_curve(model, wavelengths, table, *workers, *strategy)
                    .map(|(curve, dets, _)| (curve, dets))
            }
            Engine::Batched(config) => batched::batched_curve(model, wavelengths, table, config),
        }
    }

    /// Theoretical curve at the experimental wavelengths plus misfit against
    /// the experimental velocities.
    pub fn evaluate(
        &self,
        model: &LayeredEarthModel,
        experimental: &DispersionCurve,
        sweep: &VelocitySweep,
    ) -> Result<CurveResult> {
        model.ensure_valid()?;
        let velocities = sweep.materialize()?;
        let table = TermsTable::new(model, &velocities);
        self.evaluate_with_table(model, experimental, &table)
    }

    /// Variant taking a prebuilt terms table, so inversion can amortize the
    /// per-velocity precomputation across candidate models.
    pub fn evaluate_with_table(
        &self,
        model: &LayeredEarthModel,
        experimental: &DispersionCurve,
        table: &TermsTable,
    ) -> Result<CurveResult> {
        model.ensure_valid()?;
        experimental.validate()?;
        let (curve, dets) = self.curve_with_table(model, &experimental.wavelengths, table)?;
        let misfit = dispersion::misfit(&curve, experimental)?;
        Ok(CurveResult {
            curve,
            misfit,
            determinants_computed: dets,
        })
    }
}
