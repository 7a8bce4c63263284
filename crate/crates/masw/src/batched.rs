//! Batched whole-grid evaluation.
//!
//! Instead of scanning velocities per wavelength with early exit, this
//! engine materializes every stiffness matrix of the wavelength-velocity
//! grid up front and runs fixed phases over flat buffers: fill, eliminate,
//! blocked sign search, and reduction. Each phase is a pool of identical
//! independent tasks with no cross-task communication inside a phase, so the
//! structure maps onto accelerator-style execution while remaining
//! bitwise-equal to the serial engine here.

use std::sync::Mutex;
use std::thread;

use num_complex::Complex64;

use crate::dispersion::{is_sign_change, misfit, CurveResult};
use crate::error::{Error, Result};
use crate::model::{DispersionCurve, LayeredEarthModel, VelocitySweep};
use crate::stiffness::{
    assemble_into, band_len, determinant_sign, eliminate_band_in_place, TermsTable,
};

/// Velocity pairs per search block.
pub const DEFAULT_BLOCK_SIZE: usize = 256;

/// Default cap on the estimated grid footprint: 2 GB.
pub const DEFAULT_MEMORY_BUDGET: u64 = 2_000_000_000;

/// What the grid keeps per cell after elimination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridStorage {
    /// Full complex determinant values.
    Values,
    /// Only the sign of the real part: one byte per cell instead of
    /// sixteen, sufficient for root bracketing.
    Signs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchedConfig {
    pub block_size: usize,
    pub storage: GridStorage,
    /// Upper bound for [`memory_estimate`] before the grid is allocated.
    pub memory_budget: u64,
    /// Pool width for the phases; 0 means one per available core.
    pub threads: usize,
}

impl Default for BatchedConfig {
    fn default() -> Self {
        BatchedConfig {
            block_size: DEFAULT_BLOCK_SIZE,
            storage: GridStorage::Values,
            memory_budget: DEFAULT_MEMORY_BUDGET,
            threads: 0,
        }
    }
}

/// Estimated bytes to hold every stiffness matrix of the grid at once:
/// one dense complex matrix of order `2 * (n_layers + 1)` per cell, 16 bytes
/// per entry. The band layout actually allocated stays below this.
pub fn memory_estimate(wavelengths: usize, velocities: usize, n_layers: usize) -> u64 {
    let order = 2 * (n_layers as u64 + 1);
    wavelengths as u64 * velocities as u64 * order * order * 16
}

/// Determinant signs (and optionally values) for the full grid, row-major by
/// wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterminantGrid {
    wavelengths: Vec<f64>,
    velocities: Vec<f64>,
    data: GridData,
}

#[derive(Debug, Clone, PartialEq)]
enum GridData {
    Values(Vec<Complex64>),
    Signs(Vec<i8>),
}

impl DeterminantGrid {
    pub fn wavelength_count(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn velocity_count(&self) -> usize {
        self.velocities.len()
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    /// Determinant sign at wavelength row `w`, velocity column `n`.
    pub fn sign(&self, w: usize, n: usize) -> i8 {
        let idx = w * self.velocities.len() + n;
        match &self.data {
            GridData::Values(values) => determinant_sign(values[idx]),
            GridData::Signs(signs) => signs[idx],
        }
    }

    /// Stored determinant value, if values were kept.
    pub fn value(&self, w: usize, n: usize) -> Option<Complex64> {
        match &self.data {
            GridData::Values(values) => Some(values[w * self.velocities.len() + n]),
            GridData::Signs(_) => None,
        }
    }

    pub fn storage(&self) -> GridStorage {
        match self.data {
            GridData::Values(_) => GridStorage::Values,
            GridData::Signs(_) => GridStorage::Signs,
        }
    }

    /// Synthetic grid for search and reduction tests.
    #[cfg(test)]
    pub(crate) fn from_signs(
        wavelengths: Vec<f64>,
        velocities: Vec<f64>,
        signs: Vec<i8>,
    ) -> DeterminantGrid {
        assert_eq!(signs.len(), wavelengths.len() * velocities.len());
        DeterminantGrid {
            wavelengths,
            velocities,
            data: GridData::Signs(signs),
        }
    }
}

/// Per-(wavelength, block) outcome of the sign search: the offset of the
/// first bracketing pair inside the block, or a sentinel when the block saw
/// no change.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockResultMatrix {
    wavelength_count: usize,
    blocks_per_wavelength: usize,
    block_size: usize,
    entries: Vec<u32>,
}

const NO_CHANGE: u32 = u32::MAX;

impl BlockResultMatrix {
    pub fn wavelength_count(&self) -> usize {
        self.wavelength_count
    }

    pub fn blocks_per_wavelength(&self) -> usize {
        self.blocks_per_wavelength
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Offset of the first sign-change pair inside block `k` of wavelength
    /// `w`, if any.
    pub fn get(&self, w: usize, k: usize) -> Option<u32> {
        let entry = self.entries[w * self.blocks_per_wavelength + k];
        (entry != NO_CHANGE).then_some(entry)
    }
}

/// Runs `f` over every item of `items` on a pool of `threads` workers.
/// Items are handed out one at a time from a shared iterator, so the
/// assignment of items to workers is scheduling-dependent while the work
/// done per item is not.
fn pool_for_each<T, I, F>(items: I, threads: usize, f: F)
where
    T: Send,
    I: Iterator<Item = T> + Send,
    F: Fn(T) + Sync,
{
    let threads = threads.max(1);
    let items = Mutex::new(items);
    thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let item = items.lock().unwrap().next();
                match item {
                    Some(item) => f(item),
                    None => break,
                }
            });
        }
    });
}

fn resolve_threads(config: &BatchedConfig) -> usize {
    if config.threads > 0 {
        config.threads
    } else {
        thread::available_parallelism().map_or(1, usize::from)
    }
}

/// Phases one and two: assemble every matrix of the grid into one flat
/// allocation, then eliminate each in place. Fails before allocating if the
/// estimated footprint exceeds the budget.
pub fn fill_grid(
    model: &LayeredEarthModel,
    wavelengths: &[f64],
    sweep: &VelocitySweep,
    config: &BatchedConfig,
) -> Result<DeterminantGrid> {
    model.ensure_valid()?;
    let velocities = sweep.materialize()?;
    let table = TermsTable::new(model, &velocities);
    fill_grid_with_table(model, wavelengths, &table, config)
}

pub(crate) fn fill_grid_with_table(
    model: &LayeredEarthModel,
    wavelengths: &[f64],
    table: &TermsTable,
    config: &BatchedConfig,
) -> Result<DeterminantGrid> {
    let cells = wavelengths.len() * table.len();
    let required = memory_estimate(wavelengths.len(), table.len(), model.n_layers());
    if required > config.memory_budget {
        return Err(Error::MemoryBudgetExceeded {
            required,
            budget: config.memory_budget,
        });
    }

    let order = model.order();
    let stride = band_len(order);
    let threads = resolve_threads(config);
    let velocity_count = table.len();

    let mut matrices = vec![Complex64::new(0.0, 0.0); cells * stride];

    // phase 1: one fill task per matrix
    pool_for_each(
        matrices.chunks_mut(stride).enumerate(),
        threads,
        |(cell, chunk)| {
            let w = cell / velocity_count;
            let n = cell % velocity_count;
            assemble_into(model, wavelengths[w], table.get(n), chunk);
        },
    );

    // phase 2: one elimination task per matrix
    let data = match config.storage {
        GridStorage::Values => {
            let mut values = vec![Complex64::new(0.0, 0.0); cells];
            pool_for_each(
                matrices.chunks_mut(stride).zip(values.iter_mut()),
                threads,
                |(chunk, out)| {
                    *out = eliminate_band_in_place(order, chunk).0;
                },
            );
            GridData::Values(values)
        }
        GridStorage::Signs => {
            let mut signs = vec![0i8; cells];
            pool_for_each(
                matrices.chunks_mut(stride).zip(signs.iter_mut()),
                threads,
                |(chunk, out)| {
                    *out = determinant_sign(eliminate_band_in_place(order, chunk).0);
                },
            );
            GridData::Signs(signs)
        }
    };

    Ok(DeterminantGrid {
        wavelengths: wavelengths.to_vec(),
        velocities: table.velocities().to_vec(),
        data,
    })
}

/// Phase three: each task scans one block of consecutive velocity pairs for
/// one wavelength. Block `k` owns pairs `k*block_size ..` up to the block
/// size; a pair may read its second sign from the next block's range. The
/// last velocity never starts a pair.
pub fn block_search(grid: &DeterminantGrid, block_size: usize, threads: usize) -> BlockResultMatrix {
    assert!(block_size >= 1, "block size must be at least 1");
    let pairs = grid.velocity_count() - 1;
    let blocks_per_wavelength = pairs.div_ceil(block_size);
    let mut entries = vec![NO_CHANGE; grid.wavelength_count() * blocks_per_wavelength];

    pool_for_each(
        entries.iter_mut().enumerate(),
        threads.max(1),
        |(task, entry)| {
            let w = task / blocks_per_wavelength;
            let k = task % blocks_per_wavelength;
            for offset in 0..block_size {
                let pair = k * block_size + offset;
                if pair >= pairs {
                    break;
                }
                if is_sign_change(grid.sign(w, pair), grid.sign(w, pair + 1)) {
                    *entry = offset as u32;
                    break;
                }
            }
        },
    );

    BlockResultMatrix {
        wavelength_count: grid.wavelength_count(),
        blocks_per_wavelength,
        block_size,
        entries,
    }
}

/// Phase four: per wavelength, the first non-sentinel block yields the root
/// `velocities[k * block_size + offset + 1]`, the second velocity of the
/// bracketing pair. A row of sentinels means the sweep found no change for
/// that wavelength; the lowest failing wavelength index is reported, the
/// same one the serial engine would hit first.
pub fn reduce_blocks(
    grid: &DeterminantGrid,
    blocks: &BlockResultMatrix,
    threads: usize,
) -> Result<DispersionCurve> {
    let mut roots = vec![-1i64; grid.wavelength_count()];

    pool_for_each(roots.iter_mut().enumerate(), threads.max(1), |(w, root)| {
        for k in 0..blocks.blocks_per_wavelength {
            if let Some(offset) = blocks.get(w, k) {
                *root = (k * blocks.block_size + offset as usize + 1) as i64;
                break;
            }
        }
    });

    let mut velocities = Vec::with_capacity(roots.len());
    for (w, &root) in roots.iter().enumerate() {
        if root < 0 {
            return Err(Error::NoSignChange {
                wavelength: grid.wavelengths[w],
                v_min: grid.velocities[0],
                v_max: *grid.velocities.last().unwrap(),
            });
        }
        velocities.push(grid.velocities[root as usize]);
    }
    Ok(DispersionCurve::new(grid.wavelengths.clone(), velocities))
}

/// Engine core shared by [`batched_evaluate`] and the engine dispatcher.
pub(crate) fn batched_curve(
    model: &LayeredEarthModel,
    wavelengths: &[f64],
    table: &TermsTable,
    config: &BatchedConfig,
) -> Result<(DispersionCurve, u64)> {
    if config.block_size == 0 {
        return Err(Error::InvalidArgument(
            "block size must be at least 1".into(),
        ));
    }
    let threads = resolve_threads(config);
    let grid = fill_grid_with_table(model, wavelengths, table, config)?;
    let blocks = block_search(&grid, config.block_size, threads);
    let curve = reduce_blocks(&grid, &blocks, threads)?;
    let determinants = (wavelengths.len() * table.len()) as u64;
    Ok((curve, determinants))
}

/// Evaluates a candidate on the full grid. Exhaustive by construction: the
/// determinant count is always `wavelengths * velocities`, the price of the
/// phase structure's uniformity.
pub fn batched_evaluate(
    model: &LayeredEarthModel,
    experimental: &DispersionCurve,
    sweep: &VelocitySweep,
    config: &BatchedConfig,
) -> Result<CurveResult> {
    model.ensure_valid()?;
    experimental.validate()?;
    let velocities = sweep.materialize()?;
    let table = TermsTable::new(model, &velocities);
    let (curve, determinants) =
        batched_curve(model, &experimental.wavelengths, &table, config)?;
    let misfit = misfit(&curve, experimental)?;
    Ok(CurveResult {
        curve,
        misfit,
        determinants_computed: determinants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::evaluate_model;
    use crate::io::{gen_uniform, gen_variable, reference_model, reference_sweep, VelocityTier};

    fn config(block_size: usize, storage: GridStorage) -> BatchedConfig {
        BatchedConfig {
            block_size,
            storage,
            ..BatchedConfig::default()
        }
    }

    #[test]
    fn memory_estimate_matches_hand_arithmetic() {
        assert_eq!(memory_estimate(500, 1000, 6), 1_568_000_000);
        assert_eq!(memory_estimate(1, 1, 6), 3_136);
        assert_eq!(memory_estimate(1, 1, 0), 64);
    }

    #[test]
    fn budget_exceeded_is_reported_before_allocation() {
        let model = reference_model();
        let sweep = reference_sweep();
        let config = BatchedConfig {
            memory_budget: 1_000,
            ..BatchedConfig::default()
        };
        let err = fill_grid(&model, &[5.0, 10.0], &sweep, &config).unwrap_err();
        match err {
            Error::MemoryBudgetExceeded { required, budget } => {
                assert_eq!(required, memory_estimate(2, 901, 6));
                assert_eq!(budget, 1_000);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    fn synthetic_grid(rows: Vec<Vec<i8>>) -> DeterminantGrid {
        let nv = rows[0].len();
        let wavelengths: Vec<f64> = (0..rows.len()).map(|w| 10.0 + w as f64).collect();
        let velocities: Vec<f64> = (0..nv).map(|n| 100.0 + n as f64).collect();
        DeterminantGrid::from_signs(wavelengths, velocities, rows.concat())
    }

    #[test]
    fn search_finds_change_within_block() {
        let grid = synthetic_grid(vec![vec![1, 1, -1, -1]]);
        let blocks = block_search(&grid, 256, 1);
        assert_eq!(blocks.blocks_per_wavelength(), 1);
        assert_eq!(blocks.get(0, 0), Some(1));
        let curve = reduce_blocks(&grid, &blocks, 1).unwrap();
        // pair offset 1 brackets between columns 1 and 2: the root is the
        // second of the pair
        assert_eq!(curve.velocities[0], 102.0);
    }

    #[test]
    fn search_respects_block_ownership_and_boundaries() {
        // ten velocities, block size 4: pairs 0..9 in blocks {0..4}, {4..8}, {8}
        let mut signs = vec![1i8; 10];
        for flip in 4..10 {
            signs[flip] = -1;
        }
        // change at pair 3 = (3, 4), the last pair of block 0, whose second
        // sign lives in block 1 territory
        let grid = synthetic_grid(vec![signs]);
        let blocks = block_search(&grid, 4, 1);
        assert_eq!(blocks.blocks_per_wavelength(), 3);
        assert_eq!(blocks.get(0, 0), Some(3));
        assert_eq!(blocks.get(0, 1), None);
        let curve = reduce_blocks(&grid, &blocks, 1).unwrap();
        assert_eq!(curve.velocities[0], 104.0);
    }

    #[test]
    fn reduce_uses_first_block_with_a_change() {
        // first change in block 1 at offset 2 with block size 256 means
        // velocity index 256 + 2 + 1 = 259
        let mut signs = vec![1i8; 600];
        for s in signs.iter_mut().skip(259) {
            *s = -1;
        }
        let grid = synthetic_grid(vec![signs]);
        let blocks = block_search(&grid, 256, 1);
        assert_eq!(blocks.get(0, 0), None);
        assert_eq!(blocks.get(0, 1), Some(2));
        let curve = reduce_blocks(&grid, &blocks, 1).unwrap();
        assert_eq!(curve.velocities[0], 100.0 + 259.0);
    }

    #[test]
    fn every_pair_is_owned_once_and_boundary_changes_are_found() {
        for nv in 2..=12usize {
            for block_size in 1..=6usize {
                for change_pair in 0..nv - 1 {
                    let mut signs = vec![1i8; nv];
                    for s in signs.iter_mut().skip(change_pair + 1) {
                        *s = -1;
                    }
                    let grid = synthetic_grid(vec![signs]);
                    let blocks = block_search(&grid, block_size, 1);
                    let found: Vec<usize> = (0..blocks.blocks_per_wavelength())
                        .filter_map(|k| {
                            blocks
                                .get(0, k)
                                .map(|offset| k * block_size + offset as usize)
                        })
                        .collect();
                    assert_eq!(found, vec![change_pair], "nv={nv} bs={block_size}");
                    let curve = reduce_blocks(&grid, &blocks, 1).unwrap();
                    assert_eq!(curve.velocities[0], 100.0 + change_pair as f64 + 1.0);
                }
            }
        }
    }

    #[test]
    fn all_sentinels_error_on_lowest_wavelength_index() {
        let grid = synthetic_grid(vec![vec![1, 1, -1, -1], vec![1, 1, 1, 1], vec![1, 1, 1, 1]]);
        let blocks = block_search(&grid, 2, 1);
        let err = reduce_blocks(&grid, &blocks, 1).unwrap_err();
        match err {
            Error::NoSignChange { wavelength, .. } => assert_eq!(wavelength, 11.0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn batched_matches_serial_bitwise() {
        let model = reference_model();
        let sweep = reference_sweep();
        let experimental = gen_variable(10).unwrap();
        let serial = evaluate_model(&model, &experimental, &sweep).unwrap();
        for block_size in [2, 3, 16, 256] {
            let result =
                batched_evaluate(&model, &experimental, &sweep, &config(block_size, GridStorage::Values))
                    .unwrap();
            assert_eq!(result.curve, serial.curve, "block size {block_size}");
            assert_eq!(result.misfit.to_bits(), serial.misfit.to_bits());
            assert_eq!(result.determinants_computed, (10 * 901) as u64);
        }
    }

    #[test]
    fn sign_storage_matches_value_storage() {
        let model = reference_model();
        let sweep = reference_sweep();
        let experimental = gen_uniform(4, VelocityTier::V72).unwrap();
        let values =
            batched_evaluate(&model, &experimental, &sweep, &config(64, GridStorage::Values))
                .unwrap();
        let signs =
            batched_evaluate(&model, &experimental, &sweep, &config(64, GridStorage::Signs))
                .unwrap();
        assert_eq!(values.curve, signs.curve);
        assert_eq!(values.misfit.to_bits(), signs.misfit.to_bits());
    }

    #[test]
    fn grid_rows_identical_for_identical_wavelengths() {
        let model = reference_model();
        let sweep = VelocitySweep::new(60.0, 90.0, 0.5);
        let grid = fill_grid(
            &model,
            &[7.0, 7.0, 7.0],
            &sweep,
            &BatchedConfig::default(),
        )
        .unwrap();
        let nv = grid.velocity_count();
        for n in 0..nv {
            let value = grid.value(0, n).unwrap();
            for w in 1..3 {
                assert_eq!(
                    grid.value(w, n).unwrap().re.to_bits(),
                    value.re.to_bits()
                );
                assert_eq!(
                    grid.value(w, n).unwrap().im.to_bits(),
                    value.im.to_bits()
                );
            }
        }
    }

    #[test]
    fn repeated_runs_are_identical_regardless_of_scheduling() {
        let model = reference_model();
        let sweep = reference_sweep();
        let experimental = gen_variable(6).unwrap();
        let mut misfits = Vec::new();
        for threads in [1, 2, 7] {
            let cfg = BatchedConfig {
                threads,
                ..BatchedConfig::default()
            };
            let result = batched_evaluate(&model, &experimental, &sweep, &cfg).unwrap();
            misfits.push((result.misfit.to_bits(), result.curve));
        }
        assert_eq!(misfits[0], misfits[1]);
        assert_eq!(misfits[1], misfits[2]);
    }

    #[test]
    fn zero_block_size_rejected() {
        let model = reference_model();
        let sweep = reference_sweep();
        let experimental = gen_variable(3).unwrap();
        let err = batched_evaluate(&model, &experimental, &sweep, &config(0, GridStorage::Values))
            .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }
}
