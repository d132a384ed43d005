//! Trains a small network with the L2-then-Bayesian schedule on rendered
//! supershapes and prints the loss history.

use probshape::network::{train_with, Dataset, NetConfig, NetParams, TrainConfig};
use probshape::shapemodel::{ModeSelection, PcaSubspace};
use probshape::supershapes::{rasterize, sample_params, surface_points, ExponentDistribution, Lattice};
use probshape::volume::{ImagingConfig, NormStats};

fn dataset(seed: u64, n: usize, pca: Option<&PcaSubspace>) -> probshape::Result<(Dataset, PcaSubspace)> {
    let dims = [24; 3];
    let lattice = Lattice::new(16, 9)?;
    let params = sample_params(3, ExponentDistribution::default(), seed, n)?;
    let shapes = params.iter().map(|p| surface_points(p, lattice)).collect::<probshape::Result<Vec<_>>>()?;
    let images = params
        .iter()
        .enumerate()
        .map(|(i, p)| rasterize(p, dims, &ImagingConfig::default(), seed + i as u64))
        .collect::<probshape::Result<Vec<_>>>()?;
    let pca = match pca {
        Some(p) => p.clone(),
        None => PcaSubspace::fit(&shapes, ModeSelection::VarianceTarget(0.95))?,
    };
    let stats = NormStats::from_volumes(&images)?;
    let inputs = images.iter().map(|v| Ok(v.normalize(&stats)?.into_data())).collect::<probshape::Result<Vec<_>>>()?;
    let targets = shapes
        .iter()
        .map(|s| Ok(pca.whiten(&pca.encode(s)?)?.values))
        .collect::<probshape::Result<Vec<_>>>()?;
    Ok((Dataset::new(inputs, targets)?, pca))
}

fn main() -> probshape::Result<()> {
    let (train_set, pca) = dataset(1, 64, None)?;
    let (val_set, _) = dataset(1000, 16, Some(&pca))?;
    let mut cfg = NetConfig::desk([24; 3], pca.num_modes());
    cfg.conv_channels = vec![4, 8, 8, 16, 16];
    cfg.fc_widths = vec![32, 16];
    let params = NetParams::<f32>::init(&cfg, 7)?;
    println!("{} parameters, {} modes", params.num_params(), pca.num_modes());
    let mut tcfg = TrainConfig::uncertain(8, 7);
    tcfg.lr = 1e-3;
    let out = train_with(params, &train_set, &val_set, &tcfg, |r| {
        println!("epoch {:2} {:8} train {:+.4} val {:+.4}", r.epoch, r.loss_kind, r.train_loss, r.val_loss)
    })?;
    println!("best epoch {}", out.best_epoch);
    Ok(())
}
