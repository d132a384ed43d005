//! KDE augmentation: draws new shapes around the training scores and warps
//! the matching original image onto each with a thin-plate spline.

use probshape::augment::{build_augmented_set, KdeModel, KernelCovariance, Original};
use probshape::shapemodel::{ModeSelection, PcaSubspace};
use probshape::supershapes::{rasterize, sample_params, shape_frame, surface_points, ExponentDistribution, Lattice};
use probshape::volume::ImagingConfig;

fn main() -> probshape::Result<()> {
    let dims = [32; 3];
    let lattice = Lattice::new(16, 9)?;
    let params = sample_params(3, ExponentDistribution::default(), 5, 12)?;
    let originals = params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(Original {
                image: rasterize(p, dims, &ImagingConfig::default(), i as u64)?,
                shape: surface_points(p, lattice)?,
            })
        })
        .collect::<probshape::Result<Vec<_>>>()?;
    let shapes: Vec<_> = originals.iter().map(|o| o.shape.clone()).collect();
    let pca = PcaSubspace::fit(&shapes, ModeSelection::VarianceTarget(0.95))?;
    let scores = shapes.iter().map(|s| pca.encode(s)).collect::<probshape::Result<Vec<_>>>()?;
    let kde = KdeModel::fit(&pca, &scores, KernelCovariance::Mahalanobis)?;
    println!("{} kernels, bandwidth sigma^2 = {:.4}", kde.num_kernels(), kde.sigma2());

    let set = build_augmented_set(&pca, &kde, &originals, 8, 99, 0.0)?;
    for (i, a) in set.iter().enumerate() {
        println!(
            "sample {i}: from original {}, scores {:?}, density {:.3e}",
            a.provenance.source_index,
            a.scores.values.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            kde.density(&pca.whiten(&a.scores)?.values)
        );
    }
    let (origin, _) = shape_frame(dims);
    println!("images live in the frame with origin {origin:?}");
    Ok(())
}
