use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mesh::{dist2, norm};
use crate::shapemodel::ModeSelection;
use crate::supershapes::{
    extract_mesh, foreground_mask, sample_params, shape_frame, surface_points, ExponentDistribution,
    SupershapeParams,
};

fn pdm() -> (PcaSubspace, Vec<SupershapeParams>) {
    let lattice = Lattice::new(24, 13).unwrap();
    let params = sample_params(3, ExponentDistribution::default(), 4, 30).unwrap();
    let shapes: Vec<_> = params.iter().map(|p| surface_points(p, lattice).unwrap()).collect();
    (PcaSubspace::fit(&shapes, ModeSelection::VarianceTarget(0.999)).unwrap(), params)
}

#[test]
fn zero_scores_reproduce_mean_mesh() {
    let (sub, _) = pdm();
    let mesh = mean_mesh(&sub, Lattice::new(24, 13).unwrap(), 1).unwrap();
    let out = reconstruct_surface(&sub, &mesh, &ScoreVector::raw(vec![0.0; sub.num_modes()])).unwrap();
    let tol = 1e-6 * mesh.bbox_diagonal();
    for (a, b) in out.vertices.iter().zip(&mesh.vertices) {
        assert!(dist2(*a, *b).sqrt() < tol);
    }
    assert_eq!(out.faces, mesh.faces);
}

#[test]
fn control_points_land_on_decoded_points() {
    let (sub, params) = pdm();
    let lattice = Lattice::new(24, 13).unwrap();
    let mesh = mean_mesh(&sub, lattice, 0).unwrap();
    let shape = surface_points(&params[3], lattice).unwrap();
    let z = sub.encode(&shape).unwrap();
    let out = reconstruct_surface(&sub, &mesh, &z).unwrap();
    let decoded = sub.decode(&z).unwrap();
    let tol = 1e-6 * mesh.bbox_diagonal();
    for k in 0..lattice.num_points() {
        assert!(dist2(out.vertices[k], decoded.point(k)).sqrt() < tol);
    }
}

#[test]
fn training_shape_reconstructs_near_analytic_surface() {
    let (sub, params) = pdm();
    let lattice = Lattice::new(24, 13).unwrap();
    let mesh = mean_mesh(&sub, lattice, 1).unwrap();
    let fine = Lattice::new(96, 49).unwrap();
    for p in &params[..3] {
        let z = sub.encode(&surface_points(p, lattice).unwrap()).unwrap();
        let out = reconstruct_surface(&sub, &mesh, &z).unwrap();
        let truth = extract_mesh(p, fine).unwrap();
        let d = surface_distance(&out, &truth).unwrap();
        // lattice spacing on the unit ball at 24 x 13
        let spacing = 2.0 * std::f64::consts::PI / 24.0;
        assert!(d < spacing, "{d} vs {spacing}");
    }
}

#[test]
fn reconstruction_is_continuous_in_scores() {
    let (sub, _) = pdm();
    let mesh = mean_mesh(&sub, Lattice::new(24, 13).unwrap(), 0).unwrap();
    let z: Vec<f64> = sub.eigenvalues().iter().map(|d| 0.5 * d.sqrt()).collect();
    let a = reconstruct_surface(&sub, &mesh, &ScoreVector::raw(z.clone())).unwrap();
    for eps in [1e-3, 1e-5] {
        let zp: Vec<f64> = z.iter().map(|v| v + eps).collect();
        let b = reconstruct_surface(&sub, &mesh, &ScoreVector::raw(zp)).unwrap();
        let moved = a.vertices.iter().zip(&b.vertices).map(|(p, q)| dist2(*p, *q).sqrt()).fold(0.0, f64::max);
        assert!(moved < 50.0 * eps * (sub.num_modes() as f64).sqrt(), "{moved} at {eps}");
    }
    assert_eq!(a, reconstruct_surface(&sub, &mesh, &ScoreVector::raw(z)).unwrap());
}

fn sphere(r: f64, lattice: Lattice) -> TriMesh {
    let mut m = extract_mesh(&SupershapeParams::sphere(), lattice).unwrap();
    m.vertices.iter_mut().for_each(|v| *v = v.map(|c| c * r));
    m
}

#[test]
fn concentric_spheres() {
    let l = Lattice::new(64, 33).unwrap();
    let a = sphere(1.0, l);
    let b = sphere(1.1, l);
    let d = surface_distance(&a, &b).unwrap();
    assert!((d - 0.1).abs() < 0.002, "{d}");
    assert_eq!(d, surface_distance(&b, &a).unwrap());
    assert_eq!(surface_distance(&a, &a).unwrap(), 0.0);
    let empty = TriMesh {
        vertices: vec![],
        faces: vec![],
    };
    assert!(surface_distance(&a, &empty).is_err());
}

#[test]
fn distance_zero_for_vertices_on_each_others_surface() {
    let l = Lattice::new(16, 9).unwrap();
    let a = sphere(1.0, l);
    let b = a.subdivide();
    assert!(surface_distance(&a, &b).unwrap() < 1e-9);
    let c = sphere(1.0, Lattice::new(17, 9).unwrap());
    assert!(surface_distance(&a, &c).unwrap() > 1e-4);
}

fn smooth_images(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a: f32 = rng.random_range(0.8..1.2);
            let b: f32 = rng.random_range(-0.2..0.2);
            (0..d)
                .map(|i| {
                    let t = i as f32 / d as f32;
                    0.3 + 0.4 * a * (6.0 * t).sin().abs() + b * t + rng.random_range(-0.02..0.02)
                })
                .collect()
        })
        .collect()
}

#[test]
fn identical_pool_ties_resolve_by_index() {
    let img = vec![0.5f32; 64];
    let pool: Vec<&[f32]> = (0..12).map(|_| img.as_slice()).collect();
    let s = outlier_scores(&pool, IMAGE_PCA_VARIANCE).unwrap();
    assert!(s.combined.iter().all(|&c| c == s.combined[0]));
    assert_eq!(s.modes, 0);
    let split = select_test_sets(&pool, &pool, 3, 1).unwrap();
    assert_eq!(split.aleatoric, vec![0, 1, 2]);
    assert_eq!(split.epistemic, vec![0, 1, 2]);
    assert_eq!(split.overlap, vec![0, 1, 2]);
    assert_eq!(split.control.len(), 3);
    assert_eq!(split.remainder.len(), 6);
}

#[test]
fn inverted_image_ranks_first() {
    let mut images = smooth_images(40, 300, 3);
    let outlier = 17;
    images[outlier] = images[outlier].iter().map(|v| 1.0 - v).collect();
    let pool: Vec<&[f32]> = images.iter().map(Vec::as_slice).collect();
    let s = outlier_scores(&pool, IMAGE_PCA_VARIANCE).unwrap();
    assert_eq!(rank_descending(&s.combined)[0], outlier);

    // direct computation of the within-subspace distance for a full-rank fit
    let full = outlier_scores(&pool, 1.0).unwrap();
    let n = pool.len();
    let d = pool[0].len();
    let mean: Vec<f64> = (0..d).map(|j| pool.iter().map(|r| r[j] as f64).sum::<f64>() / n as f64).collect();
    let x: Vec<Vec<f64>> = pool.iter().map(|r| r.iter().zip(&mean).map(|(&v, m)| v as f64 - m).collect()).collect();
    let cov = nalgebra::DMatrix::from_fn(d, d, |a, b| x.iter().map(|r| r[a] * r[b]).sum::<f64>() / (n - 1) as f64);
    let eig = nalgebra::SymmetricEigen::new(cov);
    let top = eig.eigenvalues.max();
    for i in [0, outlier] {
        let mut m2 = 0.0;
        for k in 0..d {
            let lam = eig.eigenvalues[k];
            if lam > 1e-10 * top {
                let z: f64 = eig.eigenvectors.column(k).iter().zip(&x[i]).map(|(u, v)| u * v).sum();
                m2 += z * z / lam;
            }
        }
        assert!((m2.sqrt() - full.within[i]).abs() < 1e-6 * m2.sqrt().max(1.0), "{} vs {}", m2.sqrt(), full.within[i]);
        assert!(full.off[i] < 1e-9);
    }
}

#[test]
fn split_is_deterministic_and_disjoint_from_training() {
    let images = smooth_images(40, 200, 5);
    let sdts = smooth_images(40, 200, 6);
    let ip: Vec<&[f32]> = images.iter().map(Vec::as_slice).collect();
    let sp: Vec<&[f32]> = sdts.iter().map(Vec::as_slice).collect();
    let a = select_test_sets(&ip, &sp, 8, 3).unwrap();
    assert_eq!(a, select_test_sets(&ip, &sp, 8, 3).unwrap());
    for i in &a.remainder {
        assert!(!a.control.contains(i) && !a.aleatoric.contains(i) && !a.epistemic.contains(i));
    }
    for i in &a.control {
        assert!(!a.aleatoric.contains(i) && !a.epistemic.contains(i));
    }
    let used = a.control.len() + a.aleatoric.len() + a.epistemic.len() - a.overlap.len() + a.remainder.len();
    assert_eq!(used, 40);
    assert!(select_test_sets(&ip, &sp, 20, 3).is_err());
}

#[test]
fn edt_matches_brute_force() {
    let dims = [7, 5, 6];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mask: Vec<bool> = (0..210).map(|_| rng.random_bool(0.15)).collect();
    let got = squared_edt(&mask, dims, true);
    let coord = |i: usize| [i % 7, (i / 7) % 5, i / 35];
    for i in 0..210 {
        let ci = coord(i);
        let best = (0..210)
            .filter(|&j| mask[j])
            .map(|j| {
                let cj = coord(j);
                (0..3).map(|a| (ci[a] as f64 - cj[a] as f64).powi(2)).sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(got[i], best);
    }
    assert!(squared_edt(&[false; 8], [2, 2, 2], true).iter().all(|v| v.is_infinite()));
}

#[test]
fn sdt_of_ball_is_signed_radius_offset() {
    let dims = [24; 3];
    let mask = foreground_mask(&SupershapeParams::sphere(), dims).unwrap();
    let (origin, spacing) = shape_frame(dims);
    let sdt = signed_distance_transform(&mask, dims, spacing[0]);
    for (i, &s) in sdt.iter().enumerate() {
        let p = [
            origin[0] + spacing[0] * (i % 24) as f64,
            origin[1] + spacing[1] * ((i / 24) % 24) as f64,
            origin[2] + spacing[2] * (i / 576) as f64,
        ];
        let r = norm(p) - 1.0;
        assert_eq!(s > 0.0, !mask[i]);
        assert!((s as f64 - r).abs() < 1.5 * spacing[0], "{s} vs {r}");
    }
}

#[test]
fn quartile_oracle_and_report_layout() {
    assert_eq!(quartiles(&[4.0, 1.0, 3.0, 2.0, 5.0]), [1.0, 2.0, 3.0, 4.0, 5.0]);
    assert_eq!(quartiles(&[1.0, 2.0]), [1.0, 1.25, 1.5, 1.75, 2.0]);
    let rows = vec![
        SampleResult {
            model: "uncertain".into(),
            set: "control".into(),
            sample: 0,
            distance: 0.5,
            mean_aleatoric: Some(1.0),
            mean_epistemic: Some(2.0),
        },
        SampleResult {
            model: "baseline".into(),
            set: "control".into(),
            sample: 0,
            distance: 0.25,
            mean_aleatoric: None,
            mean_epistemic: None,
        },
        SampleResult {
            model: "uncertain".into(),
            set: "control".into(),
            sample: 1,
            distance: 1.5,
            mean_aleatoric: Some(3.0),
            mean_epistemic: Some(4.0),
        },
    ];
    let report = EvalReport::new(rows);
    let s = report.summary("uncertain", "control").unwrap();
    assert_eq!(s.distance.mean, 1.0);
    assert_eq!(s.aleatoric.unwrap().mean, 2.0);
    assert!(report.summary("baseline", "control").unwrap().epistemic.is_none());
    let csv = report.to_csv();
    assert!(csv.starts_with("model,set,sample,distance,mean_aleatoric,mean_epistemic\n"));
    assert!(csv.contains("baseline,control,0,0.25,,\n"));
    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(json["scatter"].as_array().unwrap().len(), 2);
    assert_eq!(json["summaries"][0]["distance"]["median"], 1.0);
}
