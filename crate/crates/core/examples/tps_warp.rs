//! Fits an interpolating thin-plate spline between two supershapes and warps
//! the first image onto the second shape.

use probshape::augment::{warp_image, TpsWarp};
use probshape::supershapes::{rasterize, surface_points, Lattice, SupershapeParams};
use probshape::volume::ImagingConfig;

fn main() -> probshape::Result<()> {
    let lattice = Lattice::new(16, 9)?;
    let a = SupershapeParams::new(3, 2.0, 4.0)?;
    let b = SupershapeParams::new(3, 3.5, 6.0)?;
    let src: Vec<_> = surface_points(&a, lattice)?.points().collect();
    let dst: Vec<_> = surface_points(&b, lattice)?.points().collect();
    let warp = TpsWarp::fit(&src, &dst, 0.0)?;
    println!("max control-point residual {:.2e}", warp.max_control_residual());
    println!("side-condition residual {:.2e}", warp.side_condition_residual());

    let imaging = ImagingConfig::default();
    let image = rasterize(&a, [32; 3], &imaging, 1)?;
    let warped = warp_image(&warp, &image);
    let target = rasterize(&b, [32; 3], &imaging, 1)?;
    let mse = |x: &[f32], y: &[f32]| x.iter().zip(y).map(|(p, q)| f64::from(p - q).powi(2)).sum::<f64>() / x.len() as f64;
    println!("image MSE to target: before {:.5}, after warping {:.5}", mse(image.data(), target.data()), mse(warped.data(), target.data()));
    Ok(())
}
