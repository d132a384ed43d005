//! Fits a PCA point distribution model to 3-lobe supershapes and prints the
//! variance captured by each mode.

use probshape::shapemodel::{ModeSelection, PcaSubspace};
use probshape::supershapes::{sample_params, surface_points, ExponentDistribution, Lattice};

fn main() -> probshape::Result<()> {
    let lattice = Lattice::new(24, 13)?;
    let shapes = sample_params(3, ExponentDistribution::default(), 3, 60)?
        .iter()
        .map(|p| surface_points(p, lattice))
        .collect::<probshape::Result<Vec<_>>>()?;
    let pca = PcaSubspace::fit(&shapes, ModeSelection::VarianceTarget(0.95))?;
    println!(
        "{} modes keep {:.2}% of the variance ({} points)",
        pca.num_modes(),
        100.0 * pca.variance_retained().unwrap_or(1.0),
        pca.num_points()
    );
    let full = PcaSubspace::fit(&shapes, ModeSelection::Fixed(5))?;
    let mut cumulative = 0.0;
    for (l, ev) in full.eigenvalues().iter().enumerate() {
        let k = PcaSubspace::fit(&shapes, ModeSelection::Fixed(l + 1))?;
        let share = k.variance_retained().unwrap_or(f64::NAN) - cumulative;
        cumulative += share;
        println!("mode {l}: eigenvalue {ev:.4e} ({:.2}% of variance)", 100.0 * share);
    }
    let z = pca.encode(&shapes[0])?;
    let w = pca.whiten(&z)?;
    println!("shape 0 scores {:?}, whitened {:?}", z.values, w.values);
    Ok(())
}
