use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::matmul_bt;

/// Fraction of variance kept by the image and distance-transform PCA.
pub const IMAGE_PCA_VARIANCE: f64 = 0.95;

/// Per-sample outlier measures from a PCA of the pool.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionScores {
    /// Mahalanobis distance of the sample's PCA scores to the mean scores.
    pub within: Vec<f64>,
    /// Mean squared reconstruction error off the retained subspace.
    pub off: Vec<f64>,
    /// Sum of the min-max normalized `within` and `off`.
    pub combined: Vec<f64>,
    pub modes: usize,
}

fn min_max(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    v.iter()
        .map(|x| if range > 0.0 { (x - lo) / range } else { 0.0 })
        .collect()
}

/// PCA over flattened samples (rows), computed through the `N x N` Gram
/// matrix. Keeps the fewest modes reaching `variance` of the total.
pub fn outlier_scores(rows: &[&[f32]], variance: f64) -> Result<SelectionScores> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Config(format!("outlier scoring needs at least 2 samples, got {n}")));
    }
    if !(variance > 0.0 && variance <= 1.0) {
        return Err(Error::Config(format!("retained variance must lie in (0, 1], got {variance}")));
    }
    let d = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::dim(d, r.len(), "pool sample length"));
    }
    let mut mean = vec![0.0f64; d];
    for r in rows {
        for (m, &v) in mean.iter_mut().zip(r.iter()) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut x = Vec::with_capacity(n * d);
    for r in rows {
        x.extend(r.iter().zip(&mean).map(|(&v, m)| v as f64 - m));
    }
    let mut gram = vec![0.0; n * n];
    matmul_bt(n, d, n, &x, &x, &mut gram, false);
    let g = DMatrix::from_fn(n, n, |i, j| 0.5 * (gram[i * n + j] + gram[j * n + i]));
    let eig = SymmetricEigen::new(g.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&k| top > 0.0 && eig.eigenvalues[k] > 1e-10 * top)
        .collect();
    let total: f64 = kept.iter().map(|&k| eig.eigenvalues[k]).sum();
    let mut modes = 0;
    let mut acc = 0.0;
    for &k in &kept {
        if acc >= variance * total {
            break;
        }
        acc += eig.eigenvalues[k];
        modes += 1;
    }
    let mut within = Vec::with_capacity(n);
    let mut off = Vec::with_capacity(n);
    for i in 0..n {
        // Score of sample i on mode k is sqrt(g_k) v_ik; the covariance
        // eigenvalue is g_k / (n - 1).
        let mut m2 = 0.0;
        let mut captured = 0.0;
        for &k in &kept[..modes] {
            let v = eig.eigenvectors[(i, k)];
            m2 += (n - 1) as f64 * v * v;
            captured += eig.eigenvalues[k] * v * v;
        }
        within.push(m2.sqrt());
        off.push((g[(i, i)] - captured).max(0.0) / d as f64);
    }
    let combined = min_max(&within).iter().zip(min_max(&off)).map(|(a, b)| a + b).collect();
    Ok(SelectionScores {
        within,
        off,
        combined,
        modes,
    })
}

/// Indices by descending score; ties keep ascending index order.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Control, aleatoric and epistemic test sets drawn from one pool. The
/// remainder is left for training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestSplit {
    pub control: Vec<usize>,
    pub aleatoric: Vec<usize>,
    pub epistemic: Vec<usize>,
    /// Samples in both the aleatoric and the epistemic set.
    pub overlap: Vec<usize>,
    pub remainder: Vec<usize>,
    pub aleatoric_scores: Option<SelectionScores>,
    pub epistemic_scores: Option<SelectionScores>,
}

/// Aleatoric set: the `set_size` least typical images under an image PCA.
/// Epistemic set: the same ranking on signed distance transforms. Control:
/// a seeded random draw from what is left.
pub fn select_test_sets(images: &[&[f32]], sdts: &[&[f32]], set_size: usize, seed: u64) -> Result<TestSplit> {
    let n = images.len();
    if sdts.len() != n {
        return Err(Error::dim(n, sdts.len(), "signed distance transforms vs images"));
    }
    if set_size == 0 {
        return Err(Error::Config("test set size must be >= 1".into()));
    }
    let a_scores = outlier_scores(images, IMAGE_PCA_VARIANCE)?;
    let e_scores = outlier_scores(sdts, IMAGE_PCA_VARIANCE)?;
    let mut aleatoric: Vec<usize> = rank_descending(&a_scores.combined).into_iter().take(set_size).collect();
    let mut epistemic: Vec<usize> = rank_descending(&e_scores.combined).into_iter().take(set_size).collect();
    aleatoric.sort_unstable();
    epistemic.sort_unstable();
    let overlap: Vec<usize> = aleatoric.iter().copied().filter(|i| epistemic.contains(i)).collect();
    let mut rest: Vec<usize> = (0..n).filter(|i| !aleatoric.contains(i) && !epistemic.contains(i)).collect();
    if rest.len() < set_size + 2 {
        return Err(Error::Config(format!(
            "pool of {n} is too small: {} samples remain after the outlier sets, need {} for control plus 2 for training",
            rest.len(),
            set_size + 2
        )));
    }
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut control = rest[..set_size].to_vec();
    let mut remainder = rest[set_size..].to_vec();
    control.sort_unstable();
    remainder.sort_unstable();
    Ok(TestSplit {
        control,
        aleatoric,
        epistemic,
        overlap,
        remainder,
        aleatoric_scores: Some(a_scores),
        epistemic_scores: Some(e_scores),
    })
}

/// Squared distance along one line as the lower envelope of parabolas
/// rooted at the finite entries of `f`.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let mut sites = f.iter().enumerate().filter(|(_, x)| x.is_finite()).map(|(q, _)| q);
    let Some(first) = sites.next() else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    let meet = |p: usize, q: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut k = 0;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in sites {
        let mut s = meet(v[k], q);
        while s <= z[k] {
            k -= 1;
            s = meet(v[k], q);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance (in voxels, x-fastest layout) from every
/// voxel to the nearest voxel where `mask == target`. Infinite when no such
/// voxel exists.
pub fn squared_edt(mask: &[bool], dims: [usize; 3], target: bool) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    assert_eq!(mask.len(), nx * ny * nz, "mask size does not match dims");
    let mut g: Vec<f64> = mask.iter().map(|&m| if m == target { 0.0 } else { f64::INFINITY }).collect();
    let longest = nx.max(ny).max(nz);
    let mut f = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];
    let strides = [1, nx, nx * ny];
    for axis in 0..3 {
        let len = dims[axis];
        let stride = strides[axis];
        let others: Vec<usize> = (0..nx * ny * nz).filter(|&i| (i / stride) % len == 0).collect();
        for &base in &others {
            for t in 0..len {
                f[t] = g[base + t * stride];
            }
            edt_1d(&f[..len], &mut out[..len], &mut v, &mut z);
            for t in 0..len {
                g[base + t * stride] = out[t];
            }
        }
    }
    g
}

/// Signed distance in world units: positive outside the foreground, negative
/// inside. An empty or full mask yields distances capped at the volume
/// diagonal.
pub fn signed_distance_transform(mask: &[bool], dims: [usize; 3], spacing: f64) -> Vec<f32> {
    let cap = ((dims[0] * dims[0] + dims[1] * dims[1] + dims[2] * dims[2]) as f64).sqrt();
    let to_fg = squared_edt(mask, dims, true);
    let to_bg = squared_edt(mask, dims, false);
    to_fg
        .iter()
        .zip(&to_bg)
        .map(|(&a, &b)| (spacing * (a.sqrt().min(cap) - b.sqrt().min(cap))) as f32)
        .collect()
}
