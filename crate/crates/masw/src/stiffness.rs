//! Dynamic stiffness matrices for layered halfspaces and their determinants.
//!
//! Each finite layer contributes a symmetric 4x4 block coupling the two
//! degrees of freedom on its top and bottom interfaces; the halfspace adds a
//! 2x2 block on the last interface. Consecutive blocks overlap by two rows,
//! so the global matrix of order `2 * (N + 1)` is heptadiagonal. Determinants
//! come from banded Gaussian elimination without pivoting, with a dense
//! LU factorization kept alongside as an independent cross-check.

use std::collections::HashMap;
use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::model::LayeredEarthModel;

/// Entries live on the main diagonal and three diagonals to each side.
pub const HALF_BANDWIDTH: usize = 3;
const BAND_WIDTH: usize = 2 * HALF_BANDWIDTH + 1;

/// Test velocities closer than this to any material velocity are nudged:
/// at `c == vs` the shear root `s` vanishes and `1/(r*s)` blows up.
const COINCIDENCE_TOLERANCE: f64 = 1e-9;
const VELOCITY_NUDGE: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Square root of a real number as a complex value: nonnegative inputs map to
/// the real axis, negative ones to the positive imaginary axis. Taking the
/// branch this way keeps every matrix entry exactly real (zero imaginary
/// part) whenever the test velocity is below the halfspace shear velocity.
fn csqrt_real(x: f64) -> Complex64 {
    if x >= 0.0 {
        Complex64::new(x.sqrt(), 0.0)
    } else {
        Complex64::new(0.0, (-x).sqrt())
    }
}

/// Returns the velocity actually used for stiffness evaluation: the input,
/// nudged upward by a fixed offset when it coincides with any layer or
/// halfspace velocity.
pub(crate) fn effective_velocity(model: &LayeredEarthModel, velocity: f64) -> f64 {
    let collides = model
        .vp
        .iter()
        .chain(model.vs.iter())
        .any(|&v| (velocity - v).abs() < COINCIDENCE_TOLERANCE);
    if collides {
        velocity + VELOCITY_NUDGE
    } else {
        velocity
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerTerms {
    r: Complex64,
    s: Complex64,
    rs: Complex64,
    inv_rs: Complex64,
    rho_c2: f64,
    off: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct HalfspaceTerms {
    /// Halfspace block per unit wavenumber; scaled by `k` at assembly.
    h11: Complex64,
    h12: Complex64,
    h22: Complex64,
}

/// Wavelength-independent scalars for one `(model, velocity)` pair.
///
/// The radicals `r`, `s` and the products derived from them depend only on
/// the test velocity, so they are computed once and reused across every
/// wavelength that scans the same velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityTerms {
    grid_velocity: f64,
    velocity: f64,
    layers: Vec<LayerTerms>,
    halfspace: HalfspaceTerms,
}

/// Terms of one finite-layer material at effective velocity `c`.
fn layer_terms(density: f64, vp: f64, vs: f64, c: f64) -> LayerTerms {
    let c2 = c * c;
    let r = csqrt_real(1.0 - c2 / (vp * vp));
    let s = csqrt_real(1.0 - c2 / (vs * vs));
    let rs = r * s;
    LayerTerms {
        r,
        s,
        rs,
        inv_rs: ONE / rs,
        rho_c2: density * c2,
        off: density * (2.0 * vs * vs - c2),
    }
}

/// Halfspace block per unit wavenumber at effective velocity `c`.
fn halfspace_terms(density: f64, vp: f64, vs: f64, c: f64) -> HalfspaceTerms {
    let c2 = c * c;
    let r = csqrt_real(1.0 - c2 / (vp * vp));
    let s = csqrt_real(1.0 - c2 / (vs * vs));
    let g = density * vs * vs * (ONE - s * s) / (ONE - r * s);
    HalfspaceTerms {
        h11: g * r,
        h12: g - 2.0 * density * vs * vs,
        h22: g * s,
    }
}

impl VelocityTerms {
    pub fn compute(model: &LayeredEarthModel, velocity: f64) -> VelocityTerms {
        let c = effective_velocity(model, velocity);
        let n = model.n_layers();
        VelocityTerms {
            grid_velocity: velocity,
            velocity: c,
            layers: (0..n)
                .map(|j| layer_terms(model.density[j], model.vp[j], model.vs[j], c))
                .collect(),
            halfspace: halfspace_terms(model.density[n], model.vp[n], model.vs[n], c),
        }
    }

    /// Velocity this entry was requested for (a sweep grid value).
    pub fn grid_velocity(&self) -> f64 {
        self.grid_velocity
    }

    /// Velocity used in the evaluation; differs from `grid_velocity` only
    /// when the nudge was applied.
    pub fn effective(&self) -> f64 {
        self.velocity
    }
}

/// Precomputed [`VelocityTerms`] for every velocity of a sweep, shared by all
/// engines so their determinants agree bitwise.
#[derive(Debug, Clone)]
pub struct TermsTable {
    velocities: Vec<f64>,
    terms: Vec<VelocityTerms>,
}

impl TermsTable {
    /// Eagerly computes terms for each velocity in order.
    pub fn new(model: &LayeredEarthModel, velocities: &[f64]) -> TermsTable {
        TermsTable {
            velocities: velocities.to_vec(),
            terms: velocities
                .iter()
                .map(|&v| VelocityTerms::compute(model, v))
                .collect(),
        }
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, n: usize) -> &VelocityTerms {
        &self.terms[n]
    }
}

/// Material-level cache keyed by `(density, vp, vs, effective velocity)`.
///
/// Inversion evaluates many candidate models against one sweep; candidates
/// produced by a parameter grid share most of their materials, so their
/// per-velocity terms can be reused instead of recomputed. Cached terms are
/// bitwise identical to fresh ones: they are the stored results of the same
/// computation.
#[derive(Debug, Default)]
pub struct TermsCache {
    layers: HashMap<MaterialKey, LayerTerms>,
    halfspaces: HashMap<MaterialKey, HalfspaceTerms>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct MaterialKey {
    density: u64,
    vp: u64,
    vs: u64,
    velocity: u64,
}

impl MaterialKey {
    fn new(density: f64, vp: f64, vs: f64, velocity: f64) -> MaterialKey {
        MaterialKey {
            density: density.to_bits(),
            vp: vp.to_bits(),
            vs: vs.to_bits(),
            velocity: velocity.to_bits(),
        }
    }
}

impl TermsCache {
    pub fn new() -> TermsCache {
        TermsCache::default()
    }

    /// Equivalent to [`TermsTable::new`], reusing any cached materials.
    pub fn table(&mut self, model: &LayeredEarthModel, velocities: &[f64]) -> TermsTable {
        TermsTable {
            velocities: velocities.to_vec(),
            terms: velocities
                .iter()
                .map(|&v| self.velocity_terms(model, v))
                .collect(),
        }
    }

    fn velocity_terms(&mut self, model: &LayeredEarthModel, velocity: f64) -> VelocityTerms {
        // the nudge depends on the whole model, so the cache key uses the
        // effective velocity rather than the requested one
        let c = effective_velocity(model, velocity);
        let n = model.n_layers();
        let layers = (0..n)
            .map(|j| {
                self.layers
                    .entry(MaterialKey::new(model.density[j], model.vp[j], model.vs[j], c))
                    .or_insert_with(|| layer_terms(model.density[j], model.vp[j], model.vs[j], c))
                    .clone()
            })
            .collect();
        let halfspace = self
            .halfspaces
            .entry(MaterialKey::new(model.density[n], model.vp[n], model.vs[n], c))
            .or_insert_with(|| halfspace_terms(model.density[n], model.vp[n], model.vs[n], c))
            .clone();
        VelocityTerms {
            grid_velocity: velocity,
            velocity: c,
            layers,
            halfspace,
        }
    }
}

/// Symmetric 4x4 layer block. `k` is the wavenumber, `h` the layer thickness.
fn layer_entries(t: &LayerTerms, k: f64, h: f64) -> [[Complex64; 4]; 4] {
    let zr = (k * h) * t.r;
    let zs = (k * h) * t.s;
    let cr = zr.cosh();
    let sr = zr.sinh();
    let cs = zs.cosh();
    let ss = zs.sinh();
    let d = 2.0 * (ONE - cr * cs) + (t.inv_rs + t.rs) * sr * ss;
    let f = (k * t.rho_c2) / d;
    let off = k * t.off;
    let k11 = f * (cr * ss / t.s - t.r * sr * cs);
    let k12 = f * (cr * cs - t.rs * sr * ss - ONE) - off;
    let k13 = f * (t.r * sr - ss / t.s);
    let k14 = f * (cs - cr);
    let k22 = f * (cs * sr / t.r - t.s * ss * cr);
    let k24 = f * (t.s * ss - sr / t.r);
    [
        [k11, k12, k13, k14],
        [k12, k22, -k14, k24],
        [k13, -k14, k11, -k12],
        [k14, k24, -k12, k22],
    ]
}

/// Symmetric 2x2 halfspace block at wavenumber `k`.
fn halfspace_entries(t: &HalfspaceTerms, k: f64) -> [[Complex64; 2]; 2] {
    [[t.h11 * k, t.h12 * k], [t.h12 * k, t.h22 * k]]
}

/// Global stiffness matrix in band storage: row `i` keeps its seven possible
/// entries `A[i][i-3] ..= A[i][i+3]` contiguously. Slots that would fall
/// outside the matrix stay zero and are never touched by elimination.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedStiffnessMatrix {
    order: usize,
    bands: Vec<Complex64>,
}

impl BandedStiffnessMatrix {
    pub fn zero(order: usize) -> BandedStiffnessMatrix {
        BandedStiffnessMatrix {
            order,
            bands: vec![ZERO; order * BAND_WIDTH],
        }
    }

    /// Builds a matrix by evaluating `f` on every in-band entry, row by row
    /// with columns ascending. The evaluation order is part of the contract
    /// so seeded random fills are reproducible.
    pub fn from_fn(order: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = BandedStiffnessMatrix::zero(order);
        for i in 0..order {
            let lo = i.saturating_sub(HALF_BANDWIDTH);
            let hi = (i + HALF_BANDWIDTH).min(order - 1);
            for j in lo..=hi {
                m.bands[band_index(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Entry `A[i][j]`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        assert!(i < self.order && j < self.order);
        if i.abs_diff(j) > HALF_BANDWIDTH {
            ZERO
        } else {
            self.bands[band_index(i, j)]
        }
    }

    #[cfg(test)]
    pub(crate) fn bands(&self) -> &[Complex64] {
        &self.bands
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut dense = DenseMatrix::zero(self.order);
        for i in 0..self.order {
            let lo = i.saturating_sub(HALF_BANDWIDTH);
            let hi = (i + HALF_BANDWIDTH).min(self.order - 1);
            for j in lo..=hi {
                dense.set(i, j, self.bands[band_index(i, j)]);
            }
        }
        dense
    }
}

#[inline]
fn band_index(i: usize, j: usize) -> usize {
    i * BAND_WIDTH + (HALF_BANDWIDTH + j) - i
}

/// Number of band-storage slots for a matrix of the given order.
pub(crate) fn band_len(order: usize) -> usize {
    order * BAND_WIDTH
}

/// Assembles the global matrix for one `(wavelength, velocity)` pair.
/// `terms` must have been computed from the same model.
pub fn assemble(
    model: &LayeredEarthModel,
    wavelength: f64,
    terms: &VelocityTerms,
) -> BandedStiffnessMatrix {
    let mut m = BandedStiffnessMatrix::zero(model.order());
    assemble_into(model, wavelength, terms, &mut m.bands);
    m
}

/// Assembly into caller-owned band storage, used by the batched engine to
/// fill preallocated grids. `band` must be zeroed and sized via [`band_len`].
pub(crate) fn assemble_into(
    model: &LayeredEarthModel,
    wavelength: f64,
    terms: &VelocityTerms,
    band: &mut [Complex64],
) {
    debug_assert_eq!(band.len(), band_len(model.order()));
    debug_assert_eq!(terms.layers.len(), model.n_layers());
    let k = TAU / wavelength;
    for j in 0..model.n_layers() {
        let block = layer_entries(&terms.layers[j], k, model.thickness[j]);
        let base = 2 * j;
        for (a, row) in block.iter().enumerate() {
            for (b, &entry) in row.iter().enumerate() {
                band[band_index(base + a, base + b)] += entry;
            }
        }
    }
    let hs = halfspace_entries(&terms.halfspace, TAU / wavelength);
    let base = 2 * model.n_layers();
    for (a, row) in hs.iter().enumerate() {
        for (b, &entry) in row.iter().enumerate() {
            band[band_index(base + a, base + b)] += entry;
        }
    }
}

/// Determinant by banded Gaussian elimination without pivoting.
///
/// An exactly zero pivot means the matrix is singular for this velocity, so
/// the determinant is reported as exactly zero rather than failing over to a
/// pivoted factorization; a zero determinant counts as a sign change anyway.
pub fn banded_determinant(m: &BandedStiffnessMatrix) -> Complex64 {
    let mut bands = m.bands.clone();
    eliminate_band_in_place(m.order, &mut bands).0
}

/// Like [`banded_determinant`], also returning the number of complex
/// multiply and divide operations spent in elimination. The count grows
/// linearly with the matrix order since each pivot touches at most a
/// 3x3 window.
pub fn banded_determinant_counting(m: &BandedStiffnessMatrix) -> (Complex64, u64) {
    let mut bands = m.bands.clone();
    eliminate_band_in_place(m.order, &mut bands)
}

/// In-place elimination over band storage. Returns `(determinant, op count)`.
pub(crate) fn eliminate_band_in_place(order: usize, band: &mut [Complex64]) -> (Complex64, u64) {
    debug_assert_eq!(band.len(), band_len(order));
    let mut det = ONE;
    let mut ops = 0u64;
    for i in 0..order {
        let pivot = band[i * BAND_WIDTH + HALF_BANDWIDTH];
        if pivot == ZERO {
            return (ZERO, ops);
        }
        det *= pivot;
        ops += 1;
        let reach = (i + HALF_BANDWIDTH).min(order - 1);
        for r in i + 1..=reach {
            let below = r * BAND_WIDTH + (HALF_BANDWIDTH + i) - r;
            let factor = band[below] / pivot;
            ops += 1;
            band[below] = ZERO;
            if factor == ZERO {
                continue;
            }
            for c in i + 1..=reach {
                let src = i * BAND_WIDTH + (HALF_BANDWIDTH + c) - i;
                let dst = r * BAND_WIDTH + (HALF_BANDWIDTH + c) - r;
                band[dst] -= factor * band[src];
                ops += 1;
            }
        }
    }
    (det, ops)
}

/// Dense row-major complex matrix, used as the independent determinant
/// route; nothing in the dispersion engines depends on it.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    order: usize,
    data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn zero(order: usize) -> DenseMatrix {
        DenseMatrix {
            order,
            data: vec![ZERO; order * order],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.order + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.order + j] = v;
    }
}

/// Determinant by dense LU factorization with partial pivoting, tracking the
/// row-swap parity.
pub fn dense_determinant(m: &DenseMatrix) -> Complex64 {
    let n = m.order;
    let mut a = m.data.clone();
    let mut det = ONE;
    let mut negate = false;
    for col in 0..n {
        let mut best = col;
        let mut best_mag = a[col * n + col].norm_sqr();
        for r in col + 1..n {
            let mag = a[r * n + col].norm_sqr();
            if mag > best_mag {
                best = r;
                best_mag = mag;
            }
        }
        if best_mag == 0.0 {
            return ZERO;
        }
        if best != col {
            for c in 0..n {
                a.swap(col * n + c, best * n + c);
            }
            negate = !negate;
        }
        let pivot = a[col * n + col];
        det *= pivot;
        for r in col + 1..n {
            let factor = a[r * n + col] / pivot;
            if factor == ZERO {
                continue;
            }
            for c in col + 1..n {
                let sub = factor * a[col * n + c];
                a[r * n + c] -= sub;
            }
        }
    }
    if negate {
        -det
    } else {
        det
    }
}

/// Sign of the real part: +1, -1, or 0 for an exact zero. The imaginary part
/// never participates in root bracketing.
pub fn determinant_sign(det: Complex64) -> i8 {
    if det.re > 0.0 {
        1
    } else if det.re < 0.0 {
        -1
    } else {
        0
    }
}

/// Stiffness determinant for one `(wavelength, velocity)` pair. All engines
/// funnel through this so their results agree bitwise.
pub fn determinant_at(
    model: &LayeredEarthModel,
    wavelength: f64,
    terms: &VelocityTerms,
) -> Complex64 {
    banded_determinant(&assemble(model, wavelength, terms))
}
