//! Samples a few 3-lobe supershapes, renders their images and writes the
//! surfaces as OFF meshes.
//!
//! cargo run --release --example supershapes -- [out_dir]

use std::path::PathBuf;

use probshape::supershapes::{extract_mesh, rasterize, sample_params, surface_points, ExponentDistribution, Lattice};
use probshape::volume::ImagingConfig;

fn main() -> probshape::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/supershapes".into()));
    let lattice = Lattice::new(24, 13)?;
    let shapes = sample_params(3, ExponentDistribution::default(), 11, 4)?;
    for (i, params) in shapes.iter().enumerate() {
        let image = rasterize(params, [48; 3], &ImagingConfig::default(), i as u64)?;
        let points = surface_points(params, lattice)?;
        extract_mesh(params, Lattice::new(48, 25)?)?.write_off(&out.join(format!("shape_{i}.off")))?;
        image.write(&out.join(format!("shape_{i}.vol")))?;
        println!(
            "shape {i}: c1 {:.2} c2 {:.2}, {} correspondences, image mean {:.3}",
            params.c1,
            params.c2,
            points.num_points(),
            image.sum() / image.len() as f64
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
