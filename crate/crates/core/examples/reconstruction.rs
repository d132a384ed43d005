//! Reconstructs a surface from its PCA scores by warping the mean mesh, and
//! measures the symmetric surface distance to the analytic surface.

use probshape::eval::{mean_mesh, reconstruct_surface, surface_distance};
use probshape::shapemodel::{ModeSelection, PcaSubspace};
use probshape::supershapes::{extract_mesh, sample_params, surface_points, ExponentDistribution, Lattice};

fn main() -> probshape::Result<()> {
    let lattice = Lattice::new(24, 13)?;
    let params = sample_params(3, ExponentDistribution::default(), 4, 40)?;
    let shapes = params.iter().map(|p| surface_points(p, lattice)).collect::<probshape::Result<Vec<_>>>()?;
    let mean = |retained| -> probshape::Result<()> {
        let pca = PcaSubspace::fit(&shapes, retained)?;
        let base = mean_mesh(&pca, lattice, 1)?;
        let mut total = 0.0;
        for (p, s) in params.iter().zip(&shapes).take(10) {
            let surface = reconstruct_surface(&pca, &base, &pca.encode(s)?)?;
            total += surface_distance(&surface, &extract_mesh(p, Lattice::new(48, 25)?)?)?;
        }
        println!("{:2} modes: mean surface distance {:.5}", pca.num_modes(), total / 10.0);
        Ok(())
    };
    mean(ModeSelection::VarianceTarget(0.95))?;
    mean(ModeSelection::VarianceTarget(0.999))?;
    Ok(())
}
