//! Synthetic benchmarks: noisy samples of analytic shapes, surface-distance
//! curves over training, and the radius ablation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::{chamfer_l1, evaluate_reconstruction, EvalConfig, MetricsReport};
use crate::pointcloud::shapes::{icosphere, torus};
use crate::pointcloud::{
    add_gaussian_noise, normalize, sample_mesh_surface, NormalizationTransform, PointCloud,
    TriangleMesh,
};
use crate::rng::{self, Stage};
use crate::trainer::{
    select_best_snapshot, train, Mode, SelectionConfig, SelectionResult, Snapshot, TrainConfig, TrainState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Sphere,
    Torus,
}

impl Shape {
    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Torus => "torus",
        }
    }

    /// Dense reference mesh filling the normalized box.
    pub fn reference_mesh(self) -> TriangleMesh {
        match self {
            Shape::Sphere => icosphere(0.45, 6),
            Shape::Torus => torus(0.3, 0.15, 256, 128),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Shape::Sphere),
            "torus" => Ok(Shape::Torus),
            other => Err(Error::InvalidArgument(format!("unknown shape '{other}'"))),
        }
    }
}

/// A noisy training cloud together with the clean surface it came from.
#[derive(Debug, Clone)]
pub struct SyntheticInput {
    /// Normalized noisy samples.
    pub cloud: PointCloud,
    /// Reference surface in the same frame as `cloud`.
    pub reference: TriangleMesh,
    pub transform: NormalizationTransform,
}

/// Samples `n_points` from the shape, perturbs them with Gaussian noise of
/// standard deviation `noise` and normalizes the result.
pub fn synthetic_input(shape: Shape, n_points: usize, noise: f64, seed: u64) -> Result<SyntheticInput> {
    let mesh = shape.reference_mesh();
    let clean = sample_mesh_surface(&mesh, n_points, rng::stage_seed(seed, Stage::Sampling))?;
    let noisy = add_gaussian_noise(&clean, noise, rng::stage_seed(seed, Stage::Noise))?;
    let (cloud, transform) = normalize(&noisy)?;
    let reference = mesh.map_vertices(|v| transform.apply(v));
    Ok(SyntheticInput {
        cloud,
        reference,
        transform,
    })
}

/// Chamfer distance from each snapshot's surface to `target`, `inf` for
/// snapshots whose surface is empty.
pub fn snapshot_distances(
    snapshots: &[Snapshot],
    target: &PointCloud,
    config: &SelectionConfig,
) -> Result<Vec<(usize, f64)>> {
    snapshots
        .iter()
        .map(|s| {
            let e = config.extract(&s.params)?;
            if e.is_empty() || !(e.mesh.total_area() > 0.0) {
                return Ok((s.iteration, f64::INFINITY));
            }
            let samples = sample_mesh_surface(&e.mesh, config.n_samples, config.seed)?;
            Ok((s.iteration, chamfer_l1(&samples, target)?))
        })
        .collect()
}

/// `(final - min) / min` over a distance curve.
pub fn overfitting_ratio(curve: &[(usize, f64)]) -> Option<f64> {
    let last = curve.last()?.1;
    let min = curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    (min.is_finite() && min > 0.0 && last.is_finite()).then(|| (last - min) / min)
}

/// One training run on a synthetic input, scored against the reference.
#[derive(Debug, Clone)]
pub struct CurveRun {
    pub mode: Mode,
    pub seed: u64,
    /// Distance to the reference surface per snapshot.
    pub to_reference: Vec<(usize, f64)>,
    pub state: TrainState,
}

impl CurveRun {
    pub fn overfitting_ratio(&self) -> Option<f64> {
        overfitting_ratio(&self.to_reference)
    }

    pub fn min_distance(&self) -> f64 {
        self.to_reference.iter().map(|c| c.1).fold(f64::INFINITY, f64::min)
    }

    pub fn final_distance(&self) -> f64 {
        self.to_reference.last().map_or(f64::INFINITY, |c| c.1)
    }
}

pub fn curve_run(input: &SyntheticInput, config: &TrainConfig, scoring: &SelectionConfig) -> Result<CurveRun> {
    let state = train(&input.cloud, config)?;
    let target = sample_mesh_surface(&input.reference, scoring.n_samples, scoring.seed ^ 0x5eed)?;
    let to_reference = snapshot_distances(&state.snapshots, &target, scoring)?;
    Ok(CurveRun {
        mode: config.mode,
        seed: config.seed,
        to_reference,
        state,
    })
}

/// A row of the adversarial radius ablation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub label: &'static str,
    pub mode: Mode,
    pub rho_scale: f64,
}

/// Local radii from a tenth down to a thousandth of the local scale, the
/// plain baseline (`rho = 0`) and the global-radius variant.
pub fn ablation_rows() -> Vec<AblationRow> {
    let local = |label, rho_scale| AblationRow {
        label,
        mode: Mode::AdversarialLocal,
        rho_scale,
    };
    vec![
        local("sigma/10", 1e-1),
        local("sigma/100", 1e-2),
        local("sigma/500", 2e-3),
        local("sigma/1000", 1e-3),
        AblationRow {
            label: "0 (baseline)",
            mode: Mode::Erm,
            rho_scale: 0.0,
        },
        AblationRow {
            label: "mean sigma/100",
            mode: Mode::AdversarialGlobal,
            rho_scale: 1e-2,
        },
    ]
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub row: AblationRow,
    pub selection: SelectionResult,
    pub metrics: MetricsReport,
}

/// Picks the snapshot closest to the input cloud, meshes it on
/// `final_extraction`'s grid and evaluates it against the reference.
pub fn evaluate_selected(
    snapshots: &[Snapshot],
    input: &SyntheticInput,
    selection: &SelectionConfig,
    final_extraction: &SelectionConfig,
    eval: &EvalConfig,
) -> Result<(SelectionResult, MetricsReport)> {
    let selected = select_best_snapshot(snapshots, &input.cloud, selection)?;
    let mesh = final_extraction.extract(&snapshots[selected.index].params)?.mesh;
    if mesh.is_empty() {
        return Err(Error::NoValidModel);
    }
    let metrics = evaluate_reconstruction(&mesh, &input.reference, eval)?;
    Ok((selected, metrics))
}

/// Trains one ablation row and evaluates its selected snapshot.
pub fn ablation_run(
    input: &SyntheticInput,
    base: &TrainConfig,
    row: AblationRow,
    selection: &SelectionConfig,
    final_extraction: &SelectionConfig,
    eval: &EvalConfig,
) -> Result<AblationResult> {
    let config = TrainConfig {
        mode: row.mode,
        rho_scale: row.rho_scale,
        ..base.clone()
    };
    let state = train(&input.cloud, &config)?;
    let (selection, metrics) = evaluate_selected(&state.snapshots, input, selection, final_extraction, eval)?;
    Ok(AblationResult {
        row,
        selection,
        metrics,
    })
}
