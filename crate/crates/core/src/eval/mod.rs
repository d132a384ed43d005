//! Surface reconstruction from predicted scores, surface-to-surface error,
//! test-set construction and experiment reports.

mod report;
mod select;

pub use report::{quartiles, EvalReport, SampleResult, SetSummary, Stats, UNCERTAINTY_UNITS};
pub use select::{
    outlier_scores, rank_descending, select_test_sets, signed_distance_transform, squared_edt, SelectionScores,
    TestSplit, IMAGE_PCA_VARIANCE,
};

use crate::augment::TpsWarp;
use crate::error::{Error, Result};
use crate::mesh::{MeshIndex, TriMesh, Vec3};
use crate::network::{DropoutMode, NetParams};
use crate::shapemodel::{PcaSubspace, ScoreVector};
use crate::supershapes::Lattice;
use crate::uncertainty::{mc_infer, McPrediction};
use crate::volume::Volume3D;

/// Lattice mesh over the PCA mean shape, refined by midpoint subdivision.
pub fn mean_mesh(sub: &PcaSubspace, lattice: Lattice, subdivisions: usize) -> Result<TriMesh> {
    let mut mesh = lattice.mesh_from_points(&sub.mean_shape())?;
    for _ in 0..subdivisions {
        mesh = mesh.subdivide();
    }
    Ok(mesh)
}

/// Warps the mean mesh with the TPS taking the mean correspondence points to
/// the decoded points of `z`. Faces are unchanged.
pub fn reconstruct_surface(sub: &PcaSubspace, mean_mesh: &TriMesh, z: &ScoreVector) -> Result<TriMesh> {
    let source: Vec<Vec3> = sub.mean_shape().points().collect();
    let target: Vec<Vec3> = sub.decode(z)?.points().collect();
    let warp = TpsWarp::fit(&source, &target, 0.0)?;
    let vertices = mean_mesh.vertices.iter().map(|&v| warp.apply(v)).collect();
    TriMesh::new(vertices, mean_mesh.faces.clone())
}

fn mean_distance(from: &TriMesh, to: &MeshIndex) -> f64 {
    from.vertices.iter().map(|&v| to.distance(v)).sum::<f64>() / from.vertices.len() as f64
}

/// Symmetric mean surface distance: the average of the mean vertex-to-surface
/// distance in both directions, using exact point-to-triangle distances.
pub fn surface_distance(pred: &TriMesh, truth: &TriMesh) -> Result<f64> {
    for (m, name) in [(pred, "predicted"), (truth, "reference")] {
        if m.vertices.is_empty() || m.faces.is_empty() {
            return Err(Error::Degenerate(format!("{name} mesh is empty")));
        }
    }
    let forward = mean_distance(pred, &MeshIndex::new(truth));
    let backward = mean_distance(truth, &MeshIndex::new(pred));
    Ok(0.5 * (forward + backward))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Deterministic forward pass, no uncertainty.
    Baseline,
    /// Monte-Carlo dropout with aleatoric and epistemic variances.
    Uncertain,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Uncertain => "uncertain",
        }
    }
}

/// Prediction for one image in the raw PCA basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub z: ScoreVector,
    pub mc: Option<McPrediction>,
}

impl Inference {
    pub fn mean_aleatoric(&self) -> Option<f64> {
        self.mc.as_ref().map(McPrediction::mean_aleatoric)
    }

    pub fn mean_epistemic(&self) -> Option<f64> {
        self.mc.as_ref().map(McPrediction::mean_epistemic)
    }
}

pub fn infer(
    params: &NetParams<f32>,
    sub: &PcaSubspace,
    image: &Volume3D,
    kind: ModelKind,
    v: usize,
    seed: u64,
) -> Result<Inference> {
    match kind {
        ModelKind::Baseline => {
            let p = params.forward(image.data(), DropoutMode::Off)?;
            Ok(Inference {
                z: sub.unwhiten(&ScoreVector::whitened(p.z_bar))?,
                mc: None,
            })
        }
        ModelKind::Uncertain => {
            let mc = mc_infer(params, sub, image, v, seed)?;
            Ok(Inference {
                z: mc.z_mean.clone(),
                mc: Some(mc),
            })
        }
    }
}

#[cfg(test)]
mod tests;
