//! Statistics-preserving augmentation: KDE sampling in the PCA subspace and
//! thin-plate-spline warping of images onto the sampled shapes.

mod kde;
mod tps;

pub use kde::{bandwidth, KdeDraw, KdeModel, KernelCovariance};
pub use tps::{warp_image, TpsWarp};

use crate::error::{Error, Result};
use crate::mesh::{bbox_diagonal, Vec3};
use crate::seeds;
use crate::shapemodel::{PcaSubspace, ScoreVector};
use crate::supershapes::ShapeSample;
use crate::volume::Volume3D;

/// Where an augmented sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    /// Index of the original (kernel center) whose image was warped.
    pub source_index: usize,
    /// Seed of the KDE draw.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct AugmentedPair {
    pub image: Volume3D,
    pub shape: ShapeSample,
    pub scores: ScoreVector,
    pub provenance: Provenance,
}

/// An original training example: image plus its corresponded shape.
#[derive(Debug, Clone)]
pub struct Original {
    pub image: Volume3D,
    pub shape: ShapeSample,
}

/// Fits a TPS from `from` to `to` with `lambda = lambda_rel * bbox_diag`.
pub fn fit_shape_warp(from: &ShapeSample, to: &ShapeSample, lambda_rel: f64) -> Result<TpsWarp> {
    let src: Vec<Vec3> = from.points().collect();
    let dst: Vec<Vec3> = to.points().collect();
    let lambda = lambda_rel * bbox_diagonal(&src);
    TpsWarp::fit(&src, &dst, lambda)
}

/// Draws `count` shapes from the KDE and warps the matching original image
/// onto each. Draw `s` uses seed `child(seed, s)`, so the output is
/// reproducible and any prefix is independent of `count`.
pub fn build_augmented_set(
    pca: &PcaSubspace,
    kde: &KdeModel,
    originals: &[Original],
    count: usize,
    seed: u64,
    lambda_rel: f64,
) -> Result<Vec<AugmentedPair>> {
    if originals.is_empty() {
        return Err(Error::Config("augmentation needs at least one original".into()));
    }
    if kde.num_kernels() != originals.len() {
        return Err(Error::dim(originals.len(), kde.num_kernels(), "KDE kernels vs originals"));
    }
    (0..count)
        .map(|s| {
            let draw_seed = seeds::child(seed, s as u64);
            let draw = kde.sample(1, draw_seed).pop().expect("one draw");
            let original = &originals[draw.kernel];
            let shape = pca.decode(&draw.scores)?;
            // backward map: new shape -> original shape
            let warp = fit_shape_warp(&shape, &original.shape, lambda_rel)?;
            let image = warp_image(&warp, &original.image);
            let scores = pca.encode(&shape)?;
            Ok(AugmentedPair {
                image,
                shape,
                scores,
                provenance: Provenance {
                    source_index: draw.kernel,
                    seed: draw_seed,
                },
            })
        })
        .collect()
}
