//! Builds control, aleatoric and epistemic test sets from a mixed pool by
//! ranking images and signed distance transforms by how atypical they are.

use probshape::eval::{select_test_sets, signed_distance_transform};
use probshape::supershapes::{foreground_mask, rasterize, sample_params, shape_frame, ExponentDistribution};
use probshape::volume::ImagingConfig;

fn main() -> probshape::Result<()> {
    let dims = [24; 3];
    let (_, spacing) = shape_frame(dims);
    let mut params = sample_params(3, ExponentDistribution::default(), 8, 36)?;
    params.extend(sample_params(5, ExponentDistribution::default(), 9, 4)?);
    let mut images = Vec::new();
    let mut sdts = Vec::new();
    for (i, p) in params.iter().enumerate() {
        let blur = if i % 10 == 3 { 2.5 } else { 1.0 };
        let imaging = ImagingConfig {
            blur_sigma: blur,
            ..ImagingConfig::default()
        };
        images.push(rasterize(p, dims, &imaging, i as u64)?.into_data());
        sdts.push(signed_distance_transform(&foreground_mask(p, dims)?, dims, spacing[0]));
    }
    let im: Vec<&[f32]> = images.iter().map(Vec::as_slice).collect();
    let sd: Vec<&[f32]> = sdts.iter().map(Vec::as_slice).collect();
    let split = select_test_sets(&im, &sd, 6, 1)?;
    println!("aleatoric (blurred are 3, 13, 23, 33): {:?}", split.aleatoric);
    println!("epistemic (5-lobe are 36..40): {:?}", split.epistemic);
    println!("control: {:?}", split.control);
    println!("overlap {:?}, {} left for training", split.overlap, split.remainder.len());
    Ok(())
}
