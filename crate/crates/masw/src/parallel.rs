//! Multi-worker evaluation over shared memory.
//!
//! The wavelength list is split by a static partition; each worker runs the
//! same early-exit scan as the serial engine over its share and writes its
//! results back by wavelength index, so the assembled curve is independent
//! of worker count, strategy, and scheduling.

use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dispersion::{find_first_sign_change, misfit, CurveResult};
use crate::error::{Error, Result};
use crate::model::{DispersionCurve, LayeredEarthModel, VelocitySweep};
use crate::stiffness::TermsTable;

/// How wavelength indices map onto workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionStrategy {
    /// Worker `k` takes a consecutive run of indices; earlier workers take
    /// the extra element when the count does not divide evenly.
    #[default]
    Contiguous,
    /// Worker `k` takes the indices congruent to `k` modulo the worker
    /// count, interleaving expensive and cheap wavelengths.
    Modular,
}

impl PartitionStrategy {
    pub fn name(self) -> &'static str {
        match self {
            PartitionStrategy::Contiguous => "contiguous",
            PartitionStrategy::Modular => "modular",
        }
    }
}

impl std::str::FromStr for PartitionStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "contiguous" => Ok(PartitionStrategy::Contiguous),
            "modular" => Ok(PartitionStrategy::Modular),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

/// Static assignment of wavelength indices to workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn workers(&self) -> usize {
        self.assignments.len()
    }

    pub fn assignment(&self, worker: usize) -> &[usize] {
        &self.assignments[worker]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.assignments.iter().map(Vec::as_slice)
    }
}

/// Splits `0..count` across `workers` lists. Every index appears exactly
/// once, list sizes differ by at most one, and each list is ascending.
/// Workers may outnumber wavelengths, in which case trailing lists are empty.
pub fn partition_wavelengths(
    count: usize,
    workers: usize,
    strategy: PartitionStrategy,
) -> Partition {
    assert!(workers >= 1, "at least one worker required");
    let assignments = match strategy {
        PartitionStrategy::Contiguous => {
            let base = count / workers;
            let extra = count % workers;
            let mut start = 0;
            (0..workers)
                .map(|k| {
                    let size = base + usize::from(k < extra);
                    let list = (start..start + size).collect();
                    start += size;
                    list
                })
                .collect()
        }
        PartitionStrategy::Modular => (0..workers)
            .map(|k| (k..count).step_by(workers).collect())
            .collect(),
    };
    Partition { assignments }
}

/// Per-worker instrumentation from one parallel run.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerStats {
    pub worker: usize,
    pub wavelengths: usize,
    pub determinants: u64,
    pub seconds: f64,
}

/// Plain-text table of per-worker work, with a determinant imbalance
/// summary. Wall times vary run to run; determinant counts do not.
pub fn load_balance_report(stats: &[WorkerStats]) -> String {
    let mut out = String::from("worker  wavelengths  determinants      seconds\n");
    for s in stats {
        out.push_str(&format!(
            "{:>6}  {:>11}  {:>12}  {:>11.6}\n",
            s.worker, s.wavelengths, s.determinants, s.seconds
        ));
    }
    let max = stats.iter().map(|s| s.determinants).max().unwrap_or(0);
    let min = stats.iter().map(|s| s.determinants).min().unwrap_or(0);
    if min > 0 {
        out.push_str(&format!(
            "determinant imbalance max/min: {:.3}\n",
            max as f64 / min as f64
        ));
    } else {
        out.push_str("determinant imbalance max/min: n/a (idle worker)\n");
    }
    out
}

/// Result of a parallel evaluation, with per-worker instrumentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelRun {
    pub result: CurveResult,
    pub stats: Vec<WorkerStats>,
}

type WorkerOutput = (Vec<(usize, f64, u64)>, Option<(usize, Error)>, f64);

/// Engine core shared by [`parallel_evaluate`] and the engine dispatcher.
/// Returns the curve, the total determinant count, and per-worker stats.
pub(crate) fn parallel_curve(
    model: &LayeredEarthModel,
    wavelengths: &[f64],
    table: &TermsTable,
    workers: usize,
    strategy: PartitionStrategy,
) -> Result<(DispersionCurve, u64, Vec<WorkerStats>)> {
    if workers == 0 {
        return Err(Error::InvalidArgument(
            "worker count must be at least 1".into(),
        ));
    }
    let partition = partition_wavelengths(wavelengths.len(), workers, strategy);

    let outputs: Vec<WorkerOutput> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|k| {
                let indices = partition.assignment(k);
                scope.spawn(move || {
                    let start = Instant::now();
                    let mut found = Vec::with_capacity(indices.len());
                    let mut failure = None;
                    for &i in indices {
                        match find_first_sign_change(model, wavelengths[i], table) {
                            Ok(change) => found.push((i, change.velocity, change.determinants)),
                            Err(err) => {
                                // indices ascend, so this is this worker's
                                // earliest failure; later work is pointless
                                failure = Some((i, err));
                                break;
                            }
                        }
                    }
                    (found, failure, start.elapsed().as_secs_f64())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });

    // the failure at the lowest wavelength index wins, matching what the
    // serial engine would have reported first
    let mut first_failure: Option<(usize, Error)> = None;
    let mut collected = Vec::with_capacity(workers);
    for (found, failure, seconds) in outputs {
        if let Some((index, err)) = failure {
            if first_failure.as_ref().is_none_or(|(best, _)| index < *best) {
                first_failure = Some((index, err));
            }
        }
        collected.push((found, seconds));
    }
    if let Some((_, err)) = first_failure {
        return Err(err);
    }

    let mut velocities = vec![0.0; wavelengths.len()];
    let mut stats = Vec::with_capacity(workers);
    let mut total = 0u64;
    for (k, (found, seconds)) in collected.into_iter().enumerate() {
        let mut determinants = 0u64;
        for (i, velocity, dets) in found {
            velocities[i] = velocity;
            determinants += dets;
        }
        total += determinants;
        stats.push(WorkerStats {
            worker: k,
            wavelengths: partition.assignment(k).len(),
            determinants,
            seconds,
        });
    }
    Ok((
        DispersionCurve::new(wavelengths.to_vec(), velocities),
        total,
        stats,
    ))
}

/// Computes a dispersion curve with `workers` threads and reports per-worker
/// stats alongside it. Velocities are bitwise identical to the serial engine.
pub fn parallel_dispersion_curve(
    model: &LayeredEarthModel,
    wavelengths: &[f64],
    sweep: &VelocitySweep,
    workers: usize,
    strategy: PartitionStrategy,
) -> Result<(DispersionCurve, u64, Vec<WorkerStats>)> {
    model.ensure_valid()?;
    if let Some(bad) = wavelengths.iter().find(|w| !w.is_finite() || **w <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "wavelengths must be positive and finite, got {bad}"
        )));
    }
    let velocities = sweep.materialize()?;
    let table = TermsTable::new(model, &velocities);
    parallel_curve(model, wavelengths, &table, workers, strategy)
}

/// Evaluates a candidate with `workers` threads. The curve and misfit are
/// bitwise identical to the serial engine for any worker count and strategy.
pub fn parallel_evaluate(
    model: &LayeredEarthModel,
    experimental: &DispersionCurve,
    sweep: &VelocitySweep,
    workers: usize,
    strategy: PartitionStrategy,
) -> Result<ParallelRun> {
    model.ensure_valid()?;
    experimental.validate()?;
    let velocities = sweep.materialize()?;
    let table = TermsTable::new(model, &velocities);
    let (curve, determinants, stats) =
        parallel_curve(model, &experimental.wavelengths, &table, workers, strategy)?;
    let misfit = misfit(&curve, experimental)?;
    Ok(ParallelRun {
        result: CurveResult {
            curve,
            misfit,
            determinants_computed: determinants,
        },
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::evaluate_model;
    use crate::io::{reference_model, reference_sweep};
    use proptest::prelude::*;

    #[test]
    fn modular_partition_example() {
        let p = partition_wavelengths(10, 3, PartitionStrategy::Modular);
        assert_eq!(p.assignment(0), &[0, 3, 6, 9]);
        assert_eq!(p.assignment(1), &[1, 4, 7]);
        assert_eq!(p.assignment(2), &[2, 5, 8]);
    }

    #[test]
    fn contiguous_partition_example() {
        let p = partition_wavelengths(40, 3, PartitionStrategy::Contiguous);
        assert_eq!(p.assignment(0).len(), 14);
        assert_eq!(p.assignment(1).len(), 13);
        assert_eq!(p.assignment(2).len(), 13);
        assert_eq!(p.assignment(0), (0..14).collect::<Vec<_>>().as_slice());
        assert_eq!(p.assignment(1)[0], 14);
    }

    #[test]
    fn single_worker_gets_everything() {
        for strategy in [PartitionStrategy::Contiguous, PartitionStrategy::Modular] {
            let p = partition_wavelengths(5, 1, strategy);
            assert_eq!(p.assignment(0), &[0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn more_workers_than_wavelengths() {
        let p = partition_wavelengths(3, 7, PartitionStrategy::Contiguous);
        let sizes: Vec<usize> = p.iter().map(<[usize]>::len).collect();
        assert_eq!(sizes, vec![1, 1, 1, 0, 0, 0, 0]);
    }

    fn check_partition_laws(count: usize, workers: usize, strategy: PartitionStrategy) {
        let p = partition_wavelengths(count, workers, strategy);
        assert_eq!(p.workers(), workers);
        let mut seen = vec![false; count];
        let mut sizes = Vec::new();
        for list in p.iter() {
            sizes.push(list.len());
            for w in list.windows(2) {
                assert!(w[0] < w[1], "assignment must ascend");
            }
            for &i in list {
                assert!(!seen[i], "index {i} assigned twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "some index unassigned");
        let max = sizes.iter().max().unwrap();
        let min = sizes.iter().min().unwrap();
        assert!(max - min <= 1, "sizes differ by more than one");
        if strategy == PartitionStrategy::Modular {
            for (k, list) in p.iter().enumerate() {
                assert!(list.iter().all(|&i| i % workers == k));
            }
        }
    }

    proptest! {
        #[test]
        fn partition_laws(count in 0usize..300, workers in 1usize..40) {
            check_partition_laws(count, workers, PartitionStrategy::Contiguous);
            check_partition_laws(count, workers, PartitionStrategy::Modular);
        }
    }

    #[test]
    fn parallel_matches_serial_bitwise() {
        let model = reference_model();
        let sweep = reference_sweep();
        let experimental = crate::io::gen_variable(12).unwrap();
        let serial = evaluate_model(&model, &experimental, &sweep).unwrap();
        for workers in [1, 2, 3, 5] {
            for strategy in [PartitionStrategy::Contiguous, PartitionStrategy::Modular] {
                let run =
                    parallel_evaluate(&model, &experimental, &sweep, workers, strategy).unwrap();
                assert_eq!(run.result.curve, serial.curve);
                assert_eq!(run.result.misfit.to_bits(), serial.misfit.to_bits());
                assert_eq!(
                    run.result.determinants_computed,
                    serial.determinants_computed
                );
                assert_eq!(run.stats.len(), workers);
            }
        }
    }

    #[test]
    fn earliest_failing_wavelength_wins() {
        let model = reference_model();
        // the reference curve tops out near 100 m/s for short wavelengths;
        // capping the sweep at 100 makes the longer wavelengths fail
        let sweep = VelocitySweep::new(50.0, 100.0, 0.5);
        let experimental = DispersionCurve::new(
            vec![1.5, 44.0, 2.0, 74.5],
            vec![72.0, 238.0, 74.0, 256.0],
        );
        for workers in [1, 2, 3, 4] {
            for strategy in [PartitionStrategy::Contiguous, PartitionStrategy::Modular] {
                let err = parallel_evaluate(&model, &experimental, &sweep, workers, strategy)
                    .unwrap_err();
                match err {
                    Error::NoSignChange { wavelength, .. } => assert_eq!(wavelength, 44.0),
                    other => panic!("unexpected error {other:?}"),
                }
            }
        }
    }

    #[test]
    fn uniform_work_splits_evenly() {
        let model = reference_model();
        let sweep = reference_sweep();
        let experimental = crate::io::gen_uniform(12, crate::io::VelocityTier::V238).unwrap();
        for strategy in [PartitionStrategy::Contiguous, PartitionStrategy::Modular] {
            let run = parallel_evaluate(&model, &experimental, &sweep, 3, strategy).unwrap();
            let counts: Vec<u64> = run.stats.iter().map(|s| s.determinants).collect();
            assert_eq!(counts[0], counts[1]);
            assert_eq!(counts[1], counts[2]);
            let sizes: Vec<usize> = run.stats.iter().map(|s| s.wavelengths).collect();
            assert_eq!(sizes, vec![4, 4, 4]);
        }
    }

    #[test]
    fn modular_balances_decreasing_work_better() {
        let model = reference_model();
        let sweep = reference_sweep();
        // long wavelengths sample deep, fast material and cost the most
        // determinants; they come first in this dataset
        let experimental = crate::io::gen_variable(30).unwrap();
        let imbalance = |strategy| {
            let run = parallel_evaluate(&model, &experimental, &sweep, 3, strategy).unwrap();
            let max = run.stats.iter().map(|s| s.determinants).max().unwrap();
            let min = run.stats.iter().map(|s| s.determinants).min().unwrap();
            max - min
        };
        assert!(
            imbalance(PartitionStrategy::Modular) <= imbalance(PartitionStrategy::Contiguous)
        );
    }

    #[test]
    fn report_lists_every_worker() {
        let stats = vec![
            WorkerStats {
                worker: 0,
                wavelengths: 7,
                determinants: 700,
                seconds: 0.01,
            },
            WorkerStats {
                worker: 1,
                wavelengths: 6,
                determinants: 350,
                seconds: 0.005,
            },
        ];
        let report = load_balance_report(&stats);
        assert_eq!(report.lines().count(), 4);
        assert!(report.contains("700"));
        assert!(report.contains("max/min: 2.000"));
    }

    #[test]
    fn zero_workers_rejected() {
        let model = reference_model();
        let sweep = reference_sweep();
        let experimental = DispersionCurve::new(vec![5.0], vec![100.0]);
        let err = parallel_evaluate(
            &model,
            &experimental,
            &sweep,
            0,
            PartitionStrategy::Contiguous,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}
