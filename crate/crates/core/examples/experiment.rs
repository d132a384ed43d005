//! The full supershapes experiment: generate, augment, train, infer,
//! evaluate and report, with the uncertainty orderings at the end.
//!
//! cargo run --release --example experiment -- [config.toml] [out_dir]
//!
//! Without a config this runs a small, fast variant; pass
//! `configs/desk.toml` for the full desk-scale run.

use probshape::pipeline::{Pipeline, PipelineConfig};

fn small() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.data.dims = [32; 3];
    cfg.data.count = 20;
    cfg.data.test_size = 10;
    cfg.augment.train_count = 120;
    cfg.augment.val_count = 30;
    cfg.training.epochs = 10;
    cfg.inference.samples = 20;
    cfg.inference.field_draws = 200;
    cfg
}

fn main() -> probshape::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(path) => PipelineConfig::load(path.as_ref())?,
        None => small(),
    };
    let out = args.next().unwrap_or_else(|| "out/experiment".into());
    let summary = Pipeline::new(cfg, &out)?.verbose(true).run_all()?;
    for row in &summary.table1 {
        println!(
            "{:9} {:9} distance {:.4} +- {:.4}  aleatoric {}  epistemic {}",
            row.model,
            row.set,
            row.distance_mean,
            row.distance_std,
            row.aleatoric_mean.map_or("-".into(), |v| format!("{v:.4}")),
            row.epistemic_mean.map_or("-".into(), |v| format!("{v:.4}")),
        );
    }
    let o = &summary.orderings;
    println!("aleatoric set above control: {}", o.aleatoric_above_control);
    println!("epistemic set above control: {}", o.epistemic_above_control);
    println!("epistemic non-increasing with more data: {}", o.epistemic_non_increasing);
    if let Some(r) = o.aleatoric_distance_ratio {
        println!("uncertain / baseline distance on the aleatoric set: {r:.3}");
    }
    Ok(())
}
