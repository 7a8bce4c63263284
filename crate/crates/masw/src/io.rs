//! File formats for models, curves, and inversion specs, plus the bundled
//! reference model and the synthetic dataset generators built on it.
//!
//! Models and inversion specs are TOML; curves are two-column CSV with a
//! units header. Floats are written with 17 significant digits so every
//! round trip reproduces the original bits.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::batched::{BatchedConfig, DEFAULT_BLOCK_SIZE};
use crate::dispersion::{find_first_sign_change, theoretical_dispersion_curve};
use crate::error::{Error, Result};
use crate::model::{DispersionCurve, LayeredEarthModel, VelocitySweep};
use crate::parallel::PartitionStrategy;
use crate::stiffness::TermsTable;
use crate::Engine;

/// First line of every curve file.
pub const CURVE_HEADER: &str = "wavelength_m,velocity_m_per_s";

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_error(path: &Path, message: impl fmt::Display) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// 17 significant digits: enough to reproduce any f64 exactly on re-parse.
fn render_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn join_floats(xs: &[f64]) -> String {
    xs.iter()
        .map(|&x| render_f64(x))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    n_layers: usize,
    thickness: Vec<f64>,
    density: Vec<f64>,
    vp: Vec<f64>,
    vs: Vec<f64>,
}

/// Reads a model file, checking both structure (`n_layers` must match the
/// thickness list) and physical invariants.
pub fn read_model(path: &Path) -> Result<LayeredEarthModel> {
    let text = read_text(path)?;
    let file: ModelFile = toml::from_str(&text).map_err(|e| parse_error(path, e.message()))?;
    if file.n_layers != file.thickness.len() {
        return Err(parse_error(
            path,
            format!(
                "n_layers is {} but thickness has {} entries",
                file.n_layers,
                file.thickness.len()
            ),
        ));
    }
    let model = LayeredEarthModel::new(file.thickness, file.density, file.vp, file.vs);
    model.ensure_valid()?;
    Ok(model)
}

pub fn write_model(path: &Path, model: &LayeredEarthModel) -> Result<()> {
    model.ensure_valid()?;
    let text = format!(
        "# layered earth model: {n} finite layers over a halfspace\n\
         # thickness in m, one entry per finite layer\n\
         # density (kg/m^3), vp and vs (m/s) end with the halfspace entry\n\
         n_layers = {n}\n\
         thickness = [{thickness}]\n\
         density = [{density}]\n\
         vp = [{vp}]\n\
         vs = [{vs}]\n",
        n = model.n_layers(),
        thickness = join_floats(&model.thickness),
        density = join_floats(&model.density),
        vp = join_floats(&model.vp),
        vs = join_floats(&model.vs),
    );
    write_text(path, &text)
}

/// Renders a curve as CSV. Annotations become `# key: value` comment lines
/// above the header and are ignored when read back.
pub fn render_curve(curve: &DispersionCurve, annotations: &[(String, String)]) -> String {
    let mut out = String::new();
    for (key, value) in annotations {
        out.push_str(&format!("# {key}: {value}\n"));
    }
    out.push_str(CURVE_HEADER);
    out.push('\n');
    for (w, v) in curve.wavelengths.iter().zip(&curve.velocities) {
        out.push_str(&format!("{},{}\n", render_f64(*w), render_f64(*v)));
    }
    out
}

pub fn write_curve(path: &Path, curve: &DispersionCurve) -> Result<()> {
    write_curve_annotated(path, curve, &[])
}

pub fn write_curve_annotated(
    path: &Path,
    curve: &DispersionCurve,
    annotations: &[(String, String)],
) -> Result<()> {
    curve.validate()?;
    write_text(path, &render_curve(curve, annotations))
}

/// Reads a curve file: comment (`#`) and blank lines are skipped, the first
/// remaining line must be the [`CURVE_HEADER`], and every later line is a
/// `wavelength,velocity` pair. The parsed curve must pass validation.
pub fn read_curve(path: &Path) -> Result<DispersionCurve> {
    let text = read_text(path)?;
    let mut wavelengths = Vec::new();
    let mut velocities = Vec::new();
    let mut header_seen = false;
    for (number, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != CURVE_HEADER {
                return Err(parse_error(
                    path,
                    format!("line {number}: expected header \"{CURVE_HEADER}\", found \"{line}\""),
                ));
            }
            header_seen = true;
            continue;
        }
        let (w, v) = line.split_once(',').ok_or_else(|| {
            parse_error(path, format!("line {number}: expected \"wavelength,velocity\""))
        })?;
        let parse = |name: &str, text: &str| {
            text.trim().parse::<f64>().map_err(|_| {
                parse_error(path, format!("line {number}: {name} \"{}\" is not a number", text.trim()))
            })
        };
        wavelengths.push(parse("wavelength", w)?);
        velocities.push(parse("velocity", v)?);
    }
    if !header_seen {
        return Err(parse_error(
            path,
            format!("missing header \"{CURVE_HEADER}\""),
        ));
    }
    let curve = DispersionCurve::new(wavelengths, velocities);
    curve.validate()?;
    Ok(curve)
}

/// Engine selection as written in an inversion spec's `[engine]` table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EngineSpec {
    #[default]
    Serial,
    Parallel {
        #[serde(default = "default_workers")]
        workers: usize,
        #[serde(default)]
        strategy: PartitionStrategy,
    },
    Batched {
        #[serde(default = "default_block_size")]
        block_size: usize,
    },
}

fn default_workers() -> usize {
    1
}

fn default_block_size() -> usize {
    DEFAULT_BLOCK_SIZE
}

impl EngineSpec {
    pub fn to_engine(self, memory_budget: u64) -> Engine {
        match self {
            EngineSpec::Serial => Engine::Serial,
            EngineSpec::Parallel { workers, strategy } => Engine::Parallel { workers, strategy },
            EngineSpec::Batched { block_size } => Engine::Batched(BatchedConfig {
                block_size,
                memory_budget,
                ..BatchedConfig::default()
            }),
        }
    }
}

/// Which model property a grid axis varies.
///
/// The derived ordering is alphabetical; candidate expansion sorts axes by
/// `(field, index)` so the output order never depends on how the spec file
/// happens to list them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisField {
    Density,
    Thickness,
    Vp,
    Vs,
}

impl AxisField {
    pub fn name(self) -> &'static str {
        match self {
            AxisField::Density => "density",
            AxisField::Thickness => "thickness",
            AxisField::Vp => "vp",
            AxisField::Vs => "vs",
        }
    }
}

/// One varied parameter: `field[index]` takes the values
/// `min, min + step, …` up to `max`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub field: AxisField,
    pub index: usize,
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

/// Candidate models as a base model plus axes to vary.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub base: LayeredEarthModel,
    pub axes: Vec<GridAxis>,
}

/// A full inversion problem: the experimental curve to fit, the velocity
/// sweep, the engine to run, and the candidate models to rank.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionSpec {
    /// Path of the experimental curve file, relative to the spec file.
    pub experimental: String,
    pub sweep: VelocitySweep,
    #[serde(default)]
    pub engine: EngineSpec,
    #[serde(default)]
    pub candidates: Vec<LayeredEarthModel>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

pub fn read_inversion_spec(path: &Path) -> Result<InversionSpec> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| parse_error(path, e.message()))
}

/// Resolves a path named inside a spec file against the spec's directory.
pub fn resolve_spec_path(spec_path: &Path, relative: &str) -> PathBuf {
    let relative = Path::new(relative);
    if relative.is_absolute() {
        relative.to_path_buf()
    } else {
        spec_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(relative)
    }
}

/// Explicit grid values `min + i * step`, clipped to `max` with the same
/// tolerance as a velocity sweep. A single value (`min == max`) is allowed.
fn float_grid(axis: &GridAxis) -> Result<Vec<f64>> {
    let GridAxis { min, max, step, .. } = *axis;
    let describe = format!("axis {}[{}]", axis.field.name(), axis.index);
    if !min.is_finite() || !max.is_finite() || !step.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "{describe}: bounds and step must be finite"
        )));
    }
    if step <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "{describe}: step must be positive, got {step}"
        )));
    }
    if max < min {
        return Err(Error::InvalidArgument(format!(
            "{describe}: max {max} is below min {min}"
        )));
    }
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    let mut values: Vec<f64> = (0..count).map(|i| min + i as f64 * step).collect();
    while values.last().is_some_and(|&v| v > max + 1e-9 * step) {
        values.pop();
    }
    Ok(values)
}

fn axis_target<'a>(model: &'a mut LayeredEarthModel, field: AxisField) -> &'a mut Vec<f64> {
    match field {
        AxisField::Density => &mut model.density,
        AxisField::Thickness => &mut model.thickness,
        AxisField::Vp => &mut model.vp,
        AxisField::Vs => &mut model.vs,
    }
}

fn axis_len(model: &LayeredEarthModel, field: AxisField) -> usize {
    match field {
        AxisField::Density => model.density.len(),
        AxisField::Thickness => model.thickness.len(),
        AxisField::Vp => model.vp.len(),
        AxisField::Vs => model.vs.len(),
    }
}

/// Expands a spec's candidates into a concrete, validated model list.
///
/// Exactly one of `candidates` and `grid` must be present. Grid axes are
/// sorted by `(field, index)` and expanded row-major with the last sorted
/// axis varying fastest, so two specs describing the same grid produce the
/// same candidate ids.
pub fn expand_candidates(spec: &InversionSpec) -> Result<Vec<LayeredEarthModel>> {
    let models = match (&spec.grid, spec.candidates.is_empty()) {
        (Some(_), false) => {
            return Err(Error::InvalidArgument(
                "inversion spec has both candidates and a grid; provide exactly one".into(),
            ))
        }
        (None, true) => {
            return Err(Error::InvalidArgument(
                "inversion spec has neither candidates nor a grid".into(),
            ))
        }
        (None, false) => spec.candidates.clone(),
        (Some(grid), true) => {
            let mut axes = grid.axes.clone();
            axes.sort_by(|a, b| (a.field, a.index).cmp(&(b.field, b.index)));
            let mut values = Vec::with_capacity(axes.len());
            for axis in &axes {
                let len = axis_len(&grid.base, axis.field);
                if axis.index >= len {
                    return Err(Error::InvalidArgument(format!(
                        "axis {}[{}] is out of bounds; the base model has {} entries",
                        axis.field.name(),
                        axis.index,
                        len
                    )));
                }
                values.push(float_grid(axis)?);
            }
            let total: usize = values.iter().map(|v| v.len()).product();
            let mut models = Vec::with_capacity(total);
            for flat in 0..total {
                let mut model = grid.base.clone();
                let mut rem = flat;
                for (axis, axis_values) in axes.iter().zip(&values).rev() {
                    let value = axis_values[rem % axis_values.len()];
                    rem /= axis_values.len();
                    axis_target(&mut model, axis.field)[axis.index] = value;
                }
                models.push(model);
            }
            models
        }
    };
    for (id, model) in models.iter().enumerate() {
        model
            .ensure_valid()
            .map_err(|e| Error::InvalidArgument(format!("candidate {id}: {e}")))?;
    }
    Ok(models)
}

/// The six-layer model bundled with the repository (assembled matrix order
/// 14). `data/reference_model.toml` holds the same values for CLI use; a
/// test keeps the two in sync.
pub fn reference_model() -> LayeredEarthModel {
    LayeredEarthModel::new(
        vec![1.0, 1.0, 2.0, 2.0, 4.0, 5.0],
        vec![1700.0, 1750.0, 1800.0, 1850.0, 1900.0, 1950.0, 2000.0],
        vec![150.0, 180.0, 300.0, 360.0, 480.0, 580.0, 600.0],
        vec![75.0, 90.0, 150.0, 180.0, 240.0, 290.0, 300.0],
    )
}

/// Sweep used with the reference model throughout: 50 to 500 m/s in steps
/// of 0.5 m/s, 901 test velocities.
pub fn reference_sweep() -> VelocitySweep {
    VelocitySweep::new(50.0, 500.0, 0.5)
}

/// Target phase velocities for the uniform dataset. Each tier names a
/// velocity the reference model's curve passes through exactly, so the
/// generated dataset has a known-zero misfit against that model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocityTier {
    V72,
    V238,
    V256,
}

impl VelocityTier {
    pub const ALL: [VelocityTier; 3] = [VelocityTier::V72, VelocityTier::V238, VelocityTier::V256];

    pub fn target(self) -> f64 {
        match self {
            VelocityTier::V72 => 72.0,
            VelocityTier::V238 => 238.0,
            VelocityTier::V256 => 256.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VelocityTier::V72 => "72",
            VelocityTier::V238 => "238",
            VelocityTier::V256 => "256",
        }
    }
}

impl fmt::Display for VelocityTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for VelocityTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<VelocityTier> {
        match s {
            "72" => Ok(VelocityTier::V72),
            "238" => Ok(VelocityTier::V238),
            "256" => Ok(VelocityTier::V256),
            other => Err(Error::InvalidArgument(format!(
                "unknown tier \"{other}\"; expected 72, 238, or 256"
            ))),
        }
    }
}

/// Finds a wavelength where the reference model's theoretical velocity
/// equals the tier target exactly.
///
/// The curve is scanned at integer wavelengths until it reaches the target,
/// then the last 1 m interval is rescanned in 0.02 m steps for an exact hit.
/// Phase velocities are sweep grid values, and every tier target lies on the
/// 0.5 m/s grid, so equality here is exact, not approximate.
pub fn find_tier_wavelength(tier: VelocityTier) -> Result<f64> {
    let model = reference_model();
    let velocities = reference_sweep().materialize()?;
    let table = TermsTable::new(&model, &velocities);
    let target = tier.target();

    let velocity_at = |wavelength: f64| -> Result<f64> {
        find_first_sign_change(&model, wavelength, &table).map(|change| change.velocity)
    };

    let mut coarse = None;
    for w in 1..=120 {
        if velocity_at(w as f64)? >= target {
            coarse = Some(w as f64);
            break;
        }
    }
    let hi = coarse.ok_or(Error::TierNotReachable { target })?;
    let lo = hi - 1.0;
    for k in 0..=50 {
        let wavelength = lo + 0.02 * k as f64;
        if wavelength < 1.0 {
            continue;
        }
        if velocity_at(wavelength)? == target {
            return Ok(wavelength);
        }
    }
    Err(Error::TierNotReachable { target })
}

/// Uniform dataset: `length` copies of one (wavelength, velocity) pair, the
/// wavelength chosen so the reference model's curve hits the tier exactly.
/// Every entry costs the same number of determinants, which makes this the
/// dataset for scaling studies.
pub fn gen_uniform(length: usize, tier: VelocityTier) -> Result<DispersionCurve> {
    if length == 0 {
        return Err(Error::InvalidArgument(
            "uniform dataset length must be at least 1".into(),
        ));
    }
    let wavelength = find_tier_wavelength(tier)?;
    Ok(DispersionCurve::new(
        vec![wavelength; length],
        vec![tier.target(); length],
    ))
}

/// Default entry count for [`gen_variable`].
pub const VARIABLE_DEFAULT_LENGTH: usize = 40;

/// Variable dataset: wavelengths fall linearly from 50 m to 1 m, and the
/// velocities are the reference model's own theoretical curve, so the
/// velocities are non-increasing and the reference model has zero misfit.
/// Longer wavelengths bracket later, so entries cost unequal work; this is
/// the dataset for load-balance studies.
pub fn gen_variable(length: usize) -> Result<DispersionCurve> {
    if length == 0 {
        return Err(Error::InvalidArgument(
            "variable dataset length must be at least 1".into(),
        ));
    }
    let wavelengths: Vec<f64> = if length == 1 {
        vec![50.0]
    } else {
        let n = (length - 1) as f64;
        (0..length)
            .map(|i| (50.0 * (n - i as f64) + i as f64) / n)
            .collect()
    };
    let curve = theoretical_dispersion_curve(&reference_model(), &wavelengths, &reference_sweep())?;
    Ok(curve)
}
