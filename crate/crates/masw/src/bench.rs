//! Desk-scale performance experiments: strong and weak scaling of the
//! parallel engine and the banded-vs-dense determinant kernel comparison.
//!
//! Timing never replaces correctness: every timed run is checked bitwise
//! against the serial engine before its measurement is recorded.

use std::hint::black_box;
use std::time::Instant;

use crate::dispersion::CurveResult;
use crate::error::{Error, Result};
use crate::io::{gen_uniform, VelocityTier};
use crate::model::{DispersionCurve, LayeredEarthModel, VelocitySweep};
use crate::parallel::PartitionStrategy;
use crate::stiffness::{
    assemble, banded_determinant, dense_determinant, TermsTable, VelocityTerms,
};
use crate::Engine;

/// Column layout of every benchmark CSV.
pub const CSV_HEADER: &str =
    "experiment,engine,dataset,workers,strategy,block_size,length,reps,median_seconds,dets,speedup";

/// One measured configuration. `speedup` is the 1-worker median divided by
/// this row's median (for the elimination experiment: dense over banded).
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub experiment: String,
    pub engine: String,
    pub dataset: String,
    pub workers: usize,
    pub strategy: Option<PartitionStrategy>,
    pub block_size: Option<usize>,
    pub length: usize,
    pub reps: usize,
    pub median_seconds: f64,
    pub determinants: u64,
    pub speedup: f64,
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.9e},{},{:.4}",
            self.experiment,
            self.engine,
            self.dataset,
            self.workers,
            self.strategy.map(|s| s.name()).unwrap_or(""),
            self.block_size.map(|b| b.to_string()).unwrap_or_default(),
            self.length,
            self.reps,
            self.median_seconds,
            self.determinants,
            self.speedup,
        )
    }
}

pub fn to_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for record in records {
        out.push_str(&record.csv_row());
        out.push('\n');
    }
    out
}

/// Median of the samples; the mean of the two middle values when the count
/// is even. Panics on an empty slice.
pub fn median(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty(), "median of no samples");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

fn ensure_reps(reps: usize) -> Result<()> {
    if reps < 3 {
        return Err(Error::InvalidArgument(format!(
            "benchmarks need at least 3 repetitions, got {reps}"
        )));
    }
    Ok(())
}

/// Worker list with the 1-worker baseline guaranteed to run first.
fn with_baseline(workers: &[usize]) -> Vec<usize> {
    let mut list = workers.to_vec();
    if !list.contains(&1) {
        list.insert(0, 1);
    }
    list
}

fn verify_against(reference: &CurveResult, run: &CurveResult, engine: &str) -> Result<()> {
    let same_curve = reference.curve.velocities.len() == run.curve.velocities.len()
        && reference
            .curve
            .velocities
            .iter()
            .zip(&run.curve.velocities)
            .all(|(a, b)| a.to_bits() == b.to_bits());
    if !same_curve || reference.misfit.to_bits() != run.misfit.to_bits() {
        return Err(Error::VerificationFailed {
            engine: engine.to_string(),
        });
    }
    Ok(())
}

/// Runs `engine` once untimed (warm-up) and `reps` times timed; every run
/// is verified against the serial result before its time counts.
fn timed_evaluations(
    engine: &Engine,
    model: &LayeredEarthModel,
    experimental: &DispersionCurve,
    table: &TermsTable,
    reference: &CurveResult,
    reps: usize,
    label: &str,
) -> Result<(f64, u64)> {
    let warmup = engine.evaluate_with_table(model, experimental, table)?;
    verify_against(reference, &warmup, label)?;
    let mut samples = Vec::with_capacity(reps);
    let mut determinants = warmup.determinants_computed;
    for _ in 0..reps {
        let start = Instant::now();
        let run = engine.evaluate_with_table(model, experimental, table)?;
        samples.push(start.elapsed().as_secs_f64());
        verify_against(reference, &run, label)?;
        determinants = run.determinants_computed;
    }
    Ok((median(&samples), determinants))
}

/// Strong scaling: a fixed dataset evaluated with each worker count. The
/// 1-worker run is the baseline, so its speedup is exactly 1.
pub fn bench_strong(
    model: &LayeredEarthModel,
    experimental: &DispersionCurve,
    sweep: &VelocitySweep,
    dataset: &str,
    workers: &[usize],
    strategy: PartitionStrategy,
    reps: usize,
) -> Result<Vec<BenchRecord>> {
    ensure_reps(reps)?;
    model.ensure_valid()?;
    experimental.validate()?;
    let velocities = sweep.materialize()?;
    let table = TermsTable::new(model, &velocities);
    let reference = Engine::Serial.evaluate_with_table(model, experimental, &table)?;

    let mut records = Vec::new();
    let mut baseline = None;
    for s in with_baseline(workers) {
        let engine = Engine::Parallel {
            workers: s,
            strategy,
        };
        let label = format!("parallel workers={s}");
        let (seconds, determinants) =
            timed_evaluations(&engine, model, experimental, &table, &reference, reps, &label)?;
        let t1 = *baseline.get_or_insert(seconds);
        records.push(BenchRecord {
            experiment: "strong".into(),
            engine: "parallel".into(),
            dataset: dataset.into(),
            workers: s,
            strategy: Some(strategy),
            block_size: None,
            length: experimental.len(),
            reps,
            median_seconds: seconds,
            determinants,
            speedup: t1 / seconds,
        });
    }
    Ok(records)
}

/// Weak scaling: the dataset grows with the worker count
/// (`base_length * s` uniform entries), so the work per worker stays fixed
/// and the ideal time is flat across `s`.
pub fn bench_weak(
    model: &LayeredEarthModel,
    sweep: &VelocitySweep,
    tier: VelocityTier,
    base_length: usize,
    workers: &[usize],
    strategy: PartitionStrategy,
    reps: usize,
) -> Result<Vec<BenchRecord>> {
    ensure_reps(reps)?;
    model.ensure_valid()?;
    let velocities = sweep.materialize()?;
    let table = TermsTable::new(model, &velocities);

    let mut records = Vec::new();
    let mut baseline = None;
    for s in with_baseline(workers) {
        let experimental = gen_uniform(base_length * s, tier)?;
        let reference = Engine::Serial.evaluate_with_table(model, &experimental, &table)?;
        let engine = Engine::Parallel {
            workers: s,
            strategy,
        };
        let label = format!("parallel workers={s}");
        let (seconds, determinants) = timed_evaluations(
            &engine,
            model,
            &experimental,
            &table,
            &reference,
            reps,
            &label,
        )?;
        let t1 = *baseline.get_or_insert(seconds);
        records.push(BenchRecord {
            experiment: "weak".into(),
            engine: "parallel".into(),
            dataset: "uniform".into(),
            workers: s,
            strategy: Some(strategy),
            block_size: None,
            length: experimental.len(),
            reps,
            median_seconds: seconds,
            determinants,
            speedup: t1 / seconds,
        });
    }
    Ok(records)
}

const BANDED_CALLS: usize = 2000;
const DENSE_CALLS: usize = 60;

/// Layer stack with mildly increasing properties, sized so the assembled
/// matrix has exactly the requested order.
fn graded_model(order: usize) -> Result<LayeredEarthModel> {
    if order < 4 || order % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "matrix order must be an even number of at least 4, got {order}"
        )));
    }
    let n_layers = order / 2 - 1;
    let vs: Vec<f64> = (0..=n_layers).map(|j| 100.0 + 12.0 * j as f64).collect();
    Ok(LayeredEarthModel::new(
        (0..n_layers).map(|i| 1.0 + 0.25 * i as f64).collect(),
        (0..=n_layers).map(|j| 1700.0 + 15.0 * j as f64).collect(),
        vs.iter().map(|v| 2.1 * v).collect(),
        vs,
    ))
}

fn kernel_median(reps: usize, calls: usize, mut kernel: impl FnMut()) -> f64 {
    for _ in 0..calls {
        kernel();
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        for _ in 0..calls {
            kernel();
        }
        samples.push(start.elapsed().as_secs_f64() / calls as f64);
    }
    median(&samples)
}

/// Per-call time of the banded O(n) determinant against the dense
/// partial-pivoting O(n^3) determinant on the same assembled matrix, per
/// order. Two rows per order; the banded row's speedup column is the
/// dense/banded time ratio.
pub fn bench_elimination(orders: &[usize], reps: usize) -> Result<Vec<BenchRecord>> {
    ensure_reps(reps)?;
    let mut records = Vec::new();
    for &order in orders {
        let model = graded_model(order)?;
        let terms = VelocityTerms::compute(&model, 90.0);
        let banded = assemble(&model, 10.0, &terms);
        let dense = banded.to_dense();

        let det_banded = banded_determinant(&banded);
        let det_dense = dense_determinant(&dense);
        if (det_banded - det_dense).norm() > 1e-10 * det_dense.norm() {
            return Err(Error::VerificationFailed {
                engine: format!("banded order={order}"),
            });
        }

        let banded_seconds = kernel_median(reps, BANDED_CALLS, || {
            black_box(banded_determinant(black_box(&banded)));
        });
        let dense_seconds = kernel_median(reps, DENSE_CALLS, || {
            black_box(dense_determinant(black_box(&dense)));
        });

        records.push(BenchRecord {
            experiment: "elimination".into(),
            engine: "banded".into(),
            dataset: "synthetic".into(),
            workers: 1,
            strategy: None,
            block_size: None,
            length: order,
            reps,
            median_seconds: banded_seconds,
            determinants: (BANDED_CALLS * reps) as u64,
            speedup: dense_seconds / banded_seconds,
        });
        records.push(BenchRecord {
            experiment: "elimination".into(),
            engine: "dense".into(),
            dataset: "synthetic".into(),
            workers: 1,
            strategy: None,
            block_size: None,
            length: order,
            reps,
            median_seconds: dense_seconds,
            determinants: (DENSE_CALLS * reps) as u64,
            speedup: 1.0,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{reference_model, reference_sweep};

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }

    #[test]
    fn csv_row_blanks_absent_fields() {
        let record = BenchRecord {
            experiment: "elimination".into(),
            engine: "banded".into(),
            dataset: "synthetic".into(),
            workers: 1,
            strategy: None,
            block_size: None,
            length: 14,
            reps: 5,
            median_seconds: 1e-6,
            determinants: 10,
            speedup: 2.0,
        };
        assert_eq!(
            record.csv_row(),
            "elimination,banded,synthetic,1,,,14,5,1.000000000e-6,10,2.0000"
        );
        let csv = to_csv(&[record]);
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn strong_rows_and_baseline_speedup() {
        let model = reference_model();
        let experimental = gen_uniform(12, VelocityTier::V238).unwrap();
        let records = bench_strong(
            &model,
            &experimental,
            &reference_sweep(),
            "uniform",
            &[1, 2],
            PartitionStrategy::Contiguous,
            3,
        )
        .unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].workers, 1);
        assert_eq!(records[0].speedup, 1.0);
        assert_eq!(records[1].workers, 2);
        assert_eq!(records[0].determinants, records[1].determinants);
        assert!(bench_strong(
            &model,
            &experimental,
            &reference_sweep(),
            "uniform",
            &[1],
            PartitionStrategy::Contiguous,
            2,
        )
        .is_err());
    }

    #[test]
    fn weak_rows_scale_length() {
        let records = bench_weak(
            &reference_model(),
            &reference_sweep(),
            VelocityTier::V238,
            5,
            &[1, 2],
            PartitionStrategy::Contiguous,
            3,
        )
        .unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].length, 5);
        assert_eq!(records[1].length, 10);
        assert_eq!(records[1].determinants, 2 * records[0].determinants);
    }

    #[test]
    fn elimination_rows_per_order() {
        let records = bench_elimination(&[4, 14], 3).unwrap();
        assert_eq!(records.len(), 4);
        assert_eq!(records[0].engine, "banded");
        assert_eq!(records[0].length, 4);
        assert_eq!(records[1].engine, "dense");
        assert_eq!(records[1].speedup, 1.0);
        assert!(records[2].median_seconds > 0.0);
        assert!(bench_elimination(&[5], 3).is_err());
        assert!(bench_elimination(&[2], 3).is_err());
    }
}
