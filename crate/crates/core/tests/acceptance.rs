//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The three full experiments behind criteria 1 to 3 run the bundled desk
//! configuration with V = 100 under `target/acceptance/` and are resumable:
//! a finished seed is not recomputed unless its configuration changes.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use probshape::augment::{bandwidth, TpsWarp};
use probshape::eval::surface_distance;
use probshape::mesh::{TriMesh, Vec3};
use probshape::network::{bayesian_loss, l2_loss, DropoutMode, ForwardCache, NetConfig, NetParams};
use probshape::pipeline::{ExperimentSummary, Pipeline, PipelineConfig};
use probshape::shapemodel::{ModeSelection, PcaSubspace, ScoreVector};
use probshape::supershapes::{extract_mesh, sample_params, surface_points, ExponentDistribution, Lattice, ShapeSample, SupershapeParams};
use probshape::uncertainty::{epistemic_variance, gaussian_entropy};

const SEEDS: [u64; 3] = [1, 2, 3];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn desk_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(&crate_dir().join("configs/desk.toml")).expect("bundled desk config");
    cfg.seed = seed;
    cfg.inference.samples = 100;
    cfg
}

fn experiments() -> Result<Vec<ExperimentSummary>, String> {
    let root = crate_dir().join("../../target/acceptance");
    SEEDS
        .iter()
        .map(|&seed| {
            let out = root.join(format!("seed_{seed}"));
            eprintln!("acceptance: desk experiment, seed {seed} -> {}", out.display());
            Pipeline::new(desk_config(seed), &out)
                .and_then(|p| p.verbose(std::env::var_os("PROBSHAPE_VERBOSE").is_some()).run_all())
                .map_err(|e| format!("seed {seed}: {e}"))
        })
        .collect()
}

fn set_mean(s: &ExperimentSummary, model: &str, set: &str, pick: fn(&probshape::pipeline::Table1Row) -> Option<f64>) -> f64 {
    s.table1
        .iter()
        .find(|r| r.model == model && r.set == set)
        .and_then(pick)
        .unwrap_or(f64::NAN)
}

fn criterion_1(runs: &[ExperimentSummary]) -> Verdict {
    let ale = runs.iter().filter(|s| s.orderings.aleatoric_above_control).count();
    let epi = runs.iter().filter(|s| s.orderings.epistemic_above_control).count();
    let pairs: Vec<String> = runs
        .iter()
        .map(|s| {
            let a = |set| set_mean(s, "uncertain", set, |r| r.aleatoric_mean);
            let e = |set| set_mean(s, "uncertain", set, |r| r.epistemic_mean);
            format!(
                "seed {}: aleatoric {:.4} vs {:.4}, epistemic {:.4} vs {:.4}",
                s.seed,
                a("aleatoric"),
                a("control"),
                e("epistemic"),
                e("control")
            )
        })
        .collect();
    verdict(
        ale >= 2 && epi >= 2,
        format!("aleatoric {ale}/3, epistemic {epi}/3 seeds ({})", pairs.join("; ")),
    )
}

fn criterion_2(runs: &[ExperimentSummary]) -> Verdict {
    let ok = runs.iter().filter(|s| s.orderings.epistemic_non_increasing).count();
    let trends: Vec<String> = runs
        .iter()
        .map(|s| {
            let sets: Vec<String> = ["control", "aleatoric", "epistemic"]
                .iter()
                .map(|set| {
                    let v: Vec<String> = s
                        .fractions
                        .iter()
                        .filter(|r| r.set == *set)
                        .map(|r| format!("{:.4}", r.epistemic_mean))
                        .collect();
                    format!("{set} {}", v.join(">"))
                })
                .collect();
            format!("seed {}: {}", s.seed, sets.join(", "))
        })
        .collect();
    verdict(ok >= 2, format!("{ok}/3 seeds non-increasing on every set ({})", trends.join("; ")))
}

fn criterion_3(runs: &[ExperimentSummary]) -> Verdict {
    let u: Vec<f64> = runs.iter().map(|s| set_mean(s, "uncertain", "aleatoric", |r| Some(r.distance_mean))).collect();
    let b: Vec<f64> = runs.iter().map(|s| set_mean(s, "baseline", "aleatoric", |r| Some(r.distance_mean))).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ratio = mean(&u) / mean(&b);
    let per_seed: Vec<String> = u.iter().zip(&b).map(|(u, b)| format!("{:.3}", u / b)).collect();
    verdict(
        ratio <= 1.05,
        format!(
            "pooled uncertain/baseline aleatoric distance {ratio:.3} (uncertain {:.5}, baseline {:.5}; per seed {})",
            mean(&u),
            mean(&b),
            per_seed.join(", ")
        ),
    )
}

fn criterion_4() -> Verdict {
    let mut worst_value = 0.0f64;
    let mut worst_grad = 0.0f64;
    let mut is_min = true;
    for r in [0.05f64, 0.3, 1.0, 2.5, 7.0] {
        let a = (r * r).ln();
        let closed = 0.5 * (1.0 + a);
        let lg = bayesian_loss(&[r], &[a], &[0.0], 1);
        worst_value = worst_value.max((lg.value - closed).abs());
        worst_grad = worst_grad.max(lg.d_logvar[0].abs());
        for h in [1e-3, 1e-1, 1.0] {
            for s in [-h, h] {
                is_min &= bayesian_loss(&[r], &[a + s], &[0.0], 1).value > lg.value;
            }
        }
    }
    verdict(
        worst_value <= 1e-10 && worst_grad <= 1e-10 && is_min,
        format!("max |value - (1 + log r^2)/2| {worst_value:.1e}, max |dL/da| {worst_grad:.1e}, strict minimum {is_min}"),
    )
}

fn criterion_5() -> Verdict {
    let cfg = NetConfig {
        input_dims: [8, 8, 8],
        conv_channels: vec![3, 4],
        kernel_size: 3,
        stride: 2,
        fc_widths: vec![6, 5],
        dropout: 0.2,
        output_dim: 3,
    };
    let mut params = NetParams::<f64>::init(&cfg, 5).expect("tiny net");
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for r in params.bias_blocks().into_iter().chain(params.slope_blocks()) {
        for v in &mut params.values_mut()[r] {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let inputs: Vec<Vec<f64>> = (0..2).map(|_| (0..512).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let targets: Vec<f64> = (0..6).map(|_| rng.random_range(-1.5..1.5)).collect();
    let masks = [31u64, 32];
    let loss = |p: &NetParams<f64>| {
        let (mut m, mut lv) = (Vec::new(), Vec::new());
        for (x, &s) in inputs.iter().zip(&masks) {
            let pred = p.forward(x, DropoutMode::On(s)).expect("forward");
            m.extend(pred.z_bar);
            lv.extend(pred.log_var);
        }
        bayesian_loss(&m, &lv, &targets, 3)
    };
    let lg = loss(&params);
    let mut grad = vec![0.0; params.num_params()];
    for (j, (x, &s)) in inputs.iter().zip(&masks).enumerate() {
        let mut cache = ForwardCache::new();
        params.forward_cached(x, DropoutMode::On(s), &mut cache).expect("forward");
        params.backward(&cache, &lg.d_mean[3 * j..3 * j + 3], &lg.d_logvar[3 * j..3 * j + 3], &mut grad);
    }
    let h = 1e-6;
    let mut net_worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(0..params.num_params());
        let orig = params.values()[k];
        params.values_mut()[k] = orig + h;
        let up = loss(&params).value;
        params.values_mut()[k] = orig - h;
        let down = loss(&params).value;
        params.values_mut()[k] = orig;
        let fd = (up - down) / (2.0 * h);
        let scale = fd.abs().max(grad[k].abs());
        let err = if scale < 1e-8 { (fd - grad[k]).abs() } else { (fd - grad[k]).abs() / scale };
        net_worst = net_worst.max(err);
    }

    let mean: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
    let logvar: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let target: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut loss_worst = 0.0f64;
    for (which, analytic) in [(0, bayesian_loss(&mean, &logvar, &target, 3)), (1, l2_loss(&mean, &target, 3))] {
        let g = analytic;
        for i in 0..6 {
            let eval = |dm: f64, da: f64| {
                let mut m = mean.clone();
                let mut a = logvar.clone();
                m[i] += dm;
                a[i] += da;
                if which == 0 {
                    bayesian_loss(&m, &a, &target, 3).value
                } else {
                    l2_loss(&m, &target, 3).value
                }
            };
            let fd_m = (eval(h, 0.0) - eval(-h, 0.0)) / (2.0 * h);
            let fd_a = (eval(0.0, h) - eval(0.0, -h)) / (2.0 * h);
            loss_worst = loss_worst.max((fd_m - g.d_mean[i]).abs()).max((fd_a - g.d_logvar[i]).abs());
        }
    }
    verdict(
        net_worst <= 1e-3 && loss_worst <= 1e-4,
        format!("network worst relative error {net_worst:.1e} over 100 coordinates, loss worst {loss_worst:.1e}"),
    )
}

fn criterion_6() -> Verdict {
    let cases: Vec<Vec<Vec<f64>>> = vec![
        vec![vec![1.0, -2.0], vec![3.0, 0.5], vec![2.0, 0.25], vec![-1.0, 4.0]],
        vec![vec![0.1], vec![0.2], vec![0.3], vec![0.4], vec![0.5]],
        vec![vec![5.0, 5.0, 5.0]; 7],
        (0..50).map(|i| vec![(i as f64 * 0.37).sin() * 3.0 + 10.0, (i * i % 13) as f64]).collect(),
    ];
    let mut worst = 0.0f64;
    for samples in &cases {
        let v = samples.len() as f64;
        let got = epistemic_variance(samples);
        for l in 0..samples[0].len() {
            let mean = samples.iter().map(|s| s[l]).sum::<f64>() / v;
            let brute = samples.iter().map(|s| (s[l] - mean).powi(2)).sum::<f64>() / v;
            worst = worst.max((got[l] - brute).abs());
        }
    }
    verdict(worst <= 1e-12, format!("max deviation from brute-force population variance {worst:.1e}"))
}

fn criterion_7() -> Verdict {
    let lattice = Lattice::new(16, 9).expect("lattice");
    let mut exact = true;
    let mut detail = Vec::new();
    for (n, seed) in [(5, 1u64), (20, 2), (50, 3)] {
        let shapes: Vec<ShapeSample> = sample_params(3, ExponentDistribution::default(), seed, n)
            .expect("params")
            .iter()
            .map(|p| surface_points(p, lattice).expect("points"))
            .collect();
        let pca = PcaSubspace::fit(&shapes, ModeSelection::Fixed(3)).expect("pca");
        let z: Vec<ScoreVector> = shapes.iter().map(|s| pca.encode(s).expect("encode")).collect();
        let ev = pca.eigenvalues();
        let mut total = 0.0;
        for i in 0..n {
            let mut best = f64::INFINITY;
            for k in 0..n {
                if k != i {
                    let d: f64 = (0..3).map(|l| (z[i].values[l] - z[k].values[l]).powi(2) / ev[l]).sum();
                    best = best.min(d);
                }
            }
            total += best;
        }
        let brute = total / n as f64;
        let got = bandwidth(&pca, &z).expect("bandwidth");
        exact &= got == brute;
        detail.push(format!("N={n}: {got:.6e} vs {brute:.6e}"));
    }
    verdict(exact, format!("bit-exact against exhaustive search ({})", detail.join(", ")))
}

fn criterion_8() -> Verdict {
    let lattice = Lattice::new(16, 9).expect("lattice");
    let a = surface_points(&SupershapeParams::new(3, 2.0, 4.0).expect("params"), lattice).expect("points");
    let b = surface_points(&SupershapeParams::new(3, 4.0, 7.0).expect("params"), lattice).expect("points");
    let src: Vec<Vec3> = a.points().collect();
    let dst: Vec<Vec3> = b.points().collect();
    let warp = TpsWarp::fit(&src, &dst, 0.0).expect("tps");
    let diag = probshape::mesh::bbox_diagonal(&src);
    let residual = warp.max_control_residual() / diag;

    let m = [[1.1, 0.2, -0.1], [0.05, 0.9, 0.3], [-0.2, 0.1, 1.3]];
    let t = [0.3, -0.7, 0.2];
    let affine = |p: Vec3| -> Vec3 { std::array::from_fn(|r| (0..3).map(|c| m[r][c] * p[c]).sum::<f64>() + t[r]) };
    let moved: Vec<Vec3> = src.iter().map(|&p| affine(p)).collect();
    let aw = TpsWarp::fit(&src, &moved, 0.0).expect("tps");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut affine_err = 0.0f64;
    for _ in 0..200 {
        let p: Vec3 = std::array::from_fn(|_| rng.random_range(-1.2..1.2));
        let (q, r) = (aw.apply(p), affine(p));
        affine_err = affine_err.max((0..3).map(|c| (q[c] - r[c]).abs()).fold(0.0, f64::max));
    }
    verdict(
        residual < 1e-6 && affine_err <= 1e-8,
        format!("control residual {residual:.1e} x bbox diagonal, affine reproduction error {affine_err:.1e}"),
    )
}

fn criterion_9() -> Verdict {
    let lattice = Lattice::new(24, 13).expect("lattice");
    let shapes: Vec<ShapeSample> = sample_params(3, ExponentDistribution::default(), 9, 200)
        .expect("params")
        .iter()
        .map(|p| surface_points(p, lattice).expect("points"))
        .collect();
    let pca = PcaSubspace::fit(&shapes, ModeSelection::Fixed(10)).expect("pca");
    let mut ortho = 0.0f64;
    for i in 0..pca.num_modes() {
        for j in 0..pca.num_modes() {
            let d: f64 = pca.mode(i).iter().zip(pca.mode(j)).map(|(a, b)| a * b).sum();
            ortho = ortho.max((d - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let first = PcaSubspace::fit(&shapes, ModeSelection::Fixed(1))
        .expect("pca")
        .variance_retained()
        .unwrap_or(0.0);

    // Exact-rank data: five shapes span at most four modes around their mean.
    let few = &shapes[..5];
    let exact = PcaSubspace::fit(few, ModeSelection::Fixed(4)).expect("pca");
    let mut recon = 0.0f64;
    for s in few {
        let back = exact.decode(&exact.encode(s).expect("encode")).expect("decode");
        recon = recon.max(back.as_flat().iter().zip(s.as_flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    verdict(
        ortho <= 1e-8 && first >= 0.99 && recon <= 1e-6,
        format!("orthonormality {ortho:.1e}, mode-1 variance {:.2}%, exact-rank reconstruction {recon:.1e}", 100.0 * first),
    )
}

fn sphere(r: f64) -> TriMesh {
    let mut m = extract_mesh(&SupershapeParams::sphere(), Lattice::new(64, 33).expect("lattice")).expect("mesh");
    m.vertices.iter_mut().for_each(|v| *v = v.map(|c| c * r));
    m
}

fn criterion_10() -> Verdict {
    let d = surface_distance(&sphere(1.0), &sphere(1.1)).expect("distance");
    let rel = (d - 0.1).abs() / 0.1;
    let h = gaussian_entropy(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    let closed = 1.5 * (1.0 + (2.0 * std::f64::consts::PI).ln());
    let herr = (h - closed).abs();
    verdict(
        rel <= 0.02 && herr <= 1e-9,
        format!("sphere distance {d:.5} ({:.2}% off 0.1), identity entropy error {herr:.1e}", 100.0 * rel),
    )
}

fn tiny_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.seed = 5;
    cfg.data.dims = [24; 3];
    cfg.data.count = 12;
    cfg.data.test_size = 4;
    cfg.augment.train_count = 24;
    cfg.augment.val_count = 8;
    cfg.training.epochs = 3;
    cfg.inference.samples = 5;
    cfg.inference.field_draws = 20;
    cfg.inference.field_images = 1;
    cfg
}

fn report_files(out: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for dir in [out.join("report"), out.join("evaluate").join("frac_0.25"), out.join("evaluate").join("frac_1.00")] {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
            .unwrap_or_default();
        entries.retain(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")));
        entries.sort();
        files.extend(entries.into_iter().map(|p| p.strip_prefix(out).expect("under out").to_path_buf()));
    }
    files
}

fn criterion_11() -> Verdict {
    let tmp = tempfile::tempdir().expect("tempdir");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        if let Err(e) = Pipeline::new(tiny_config(), out).and_then(|p| p.run_all()) {
            return verdict(false, format!("run failed: {e}"));
        }
    }
    let files = report_files(&a);
    let same = files.len() >= 6
        && files == report_files(&b)
        && files.iter().all(|f| std::fs::read(a.join(f)).ok() == std::fs::read(b.join(f)).ok());
    verdict(same, format!("{} report files compared byte for byte", files.len()))
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Verdict)> = vec![
        (4, "loss attenuation minimum", criterion_4()),
        (5, "gradient oracle", criterion_5()),
        (6, "epistemic variance oracle", criterion_6()),
        (7, "KDE bandwidth oracle", criterion_7()),
        (8, "TPS exactness", criterion_8()),
        (9, "PCA contracts", criterion_9()),
        (10, "geometry oracles", criterion_10()),
        (11, "determinism", criterion_11()),
    ];
    match experiments() {
        Ok(runs) => {
            results.push((1, "uncertainty orderings", criterion_1(&runs)));
            results.push((2, "epistemic decreases with data", criterion_2(&runs)));
            results.push((3, "accuracy parity", criterion_3(&runs)));
        }
        Err(e) => {
            for (n, name) in [(1, "uncertainty orderings"), (2, "epistemic decreases with data"), (3, "accuracy parity")] {
                results.push((n, name, verdict(false, format!("experiment failed: {e}"))));
            }
        }
    }
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, v) in &results {
        println!("{} criterion {n:2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
