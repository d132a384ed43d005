//! Monte-Carlo dropout inference with an untrained network: aggregates the
//! dropout samples, then turns the score variances into per-point entropy
//! fields on the predicted surface.
//!
//! cargo run --release --example uncertainty -- [out_dir]

use std::path::PathBuf;

use probshape::eval::{mean_mesh, reconstruct_surface};
use probshape::network::{NetConfig, NetParams};
use probshape::shapemodel::{ModeSelection, PcaSubspace};
use probshape::supershapes::{rasterize, sample_params, surface_points, ExponentDistribution, Lattice};
use probshape::uncertainty::{interpolate_to_mesh, mc_infer, uncertainty_fields, write_vertex_scalars};
use probshape::volume::{ImagingConfig, NormStats};

fn main() -> probshape::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/uncertainty".into()));
    let dims = [24; 3];
    let lattice = Lattice::new(16, 9)?;
    let params = sample_params(3, ExponentDistribution::default(), 2, 20)?;
    let shapes = params.iter().map(|p| surface_points(p, lattice)).collect::<probshape::Result<Vec<_>>>()?;
    let pca = PcaSubspace::fit(&shapes, ModeSelection::VarianceTarget(0.95))?;

    let image = rasterize(&params[0], dims, &ImagingConfig::default(), 0)?;
    let image = image.normalize(&NormStats::from_volumes([&image])?)?;
    let net = NetParams::<f32>::init(&NetConfig::desk(dims, pca.num_modes()), 3)?;
    let pred = mc_infer(&net, &pca, &image, 30, 17)?;
    println!(
        "V = {}: mean aleatoric {:.4e}, mean epistemic {:.4e}",
        pred.num_samples(),
        pred.mean_aleatoric(),
        pred.mean_epistemic()
    );

    let surface = reconstruct_surface(&pca, &mean_mesh(&pca, lattice, 1)?, &pred.z_mean)?;
    surface.write_off(&out.join("prediction.off"))?;
    let points: Vec<_> = pca.decode(&pred.z_mean)?.points().collect();
    for field in uncertainty_fields(&pca, &pred, 500, 5)? {
        let values = interpolate_to_mesh(&field.values, &points, &surface)?;
        let (lo, hi) = values.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        println!("{} entropy on the mesh: {lo:.3} .. {hi:.3}", field.kind.as_str());
        write_vertex_scalars(&out.join(format!("{}.csv", field.kind.as_str())), &values)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
