use super::config::LossKind;

/// Loss value plus gradients with respect to both heads, all flattened
/// sample-major (`I x L`).
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub d_mean: Vec<f64>,
    pub d_logvar: Vec<f64>,
}

fn check(mean: &[f64], log_var: &[f64], target: &[f64], l: usize) {
    assert!(l > 0, "loss needs at least one mode");
    assert_eq!(mean.len(), target.len(), "prediction and target lengths differ");
    assert_eq!(log_var.len(), target.len(), "log-variance and target lengths differ");
    assert_eq!(target.len() % l, 0, "batch is not a whole number of samples");
}

/// Heteroscedastic regression loss over a batch of `I` samples with `L` modes:
/// `(1/(2LI)) sum_i sum_l [(z - z_bar)^2 exp(-a) + a]`.
pub fn bayesian_loss(mean: &[f64], log_var: &[f64], target: &[f64], l: usize) -> LossGrad {
    check(mean, log_var, target, l);
    let n = target.len() as f64;
    let mut value = 0.0;
    let mut d_mean = Vec::with_capacity(target.len());
    let mut d_logvar = Vec::with_capacity(target.len());
    for ((&zb, &a), &z) in mean.iter().zip(log_var).zip(target) {
        let r = z - zb;
        let inv = (-a).exp();
        value += r * r * inv + a;
        d_mean.push(-r * inv / n);
        d_logvar.push((1.0 - r * r * inv) / (2.0 * n));
    }
    LossGrad {
        value: value / (2.0 * n),
        d_mean,
        d_logvar,
    }
}

/// Mean squared error over modes and batch. The log-variance head receives a
/// zero gradient.
pub fn l2_loss(mean: &[f64], target: &[f64], l: usize) -> LossGrad {
    check(mean, mean, target, l);
    let n = target.len() as f64;
    let mut value = 0.0;
    let d_mean = mean
        .iter()
        .zip(target)
        .map(|(&zb, &z)| {
            let r = z - zb;
            value += r * r;
            -2.0 * r / n
        })
        .collect();
    LossGrad {
        value: value / n,
        d_mean,
        d_logvar: vec![0.0; target.len()],
    }
}

pub fn loss(kind: LossKind, mean: &[f64], log_var: &[f64], target: &[f64], l: usize) -> LossGrad {
    match kind {
        LossKind::L2 => l2_loss(mean, target, l),
        LossKind::Bayesian => bayesian_loss(mean, log_var, target, l),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_variance_is_scaled_mse() {
        let mean = [0.5, -1.0, 2.0];
        let target = [1.0, 1.0, 1.0];
        let g = bayesian_loss(&mean, &[0.0; 3], &target, 3);
        let sse: f64 = mean.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!((g.value - sse / 6.0).abs() < 1e-15);
    }

    #[test]
    fn minimum_at_log_residual_squared() {
        for &r in &[0.1, 0.7, 1.0, 3.5] {
            let a_star: f64 = (r * r as f64).ln();
            let l = 4;
            let mean = vec![0.0; l];
            let target = vec![r; l];
            let at = bayesian_loss(&mean, &vec![a_star; l], &target, l);
            let expect = (1.0 + a_star) / 2.0;
            assert!((at.value - expect).abs() < 1e-12);
            assert!(at.d_logvar.iter().all(|g| g.abs() < 1e-12));
            for da in [-1e-3, 1e-3] {
                let off = bayesian_loss(&mean, &vec![a_star + da; l], &target, l);
                assert!(off.value > at.value);
            }
        }
    }

    #[test]
    fn l2_simple_values() {
        let g = l2_loss(&[1.0, 2.0], &[1.0, 2.0], 2);
        assert_eq!(g.value, 0.0);
        let g = l2_loss(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], 3);
        assert!((g.value - 1.0 / 3.0).abs() < 1e-15);
        assert!(g.d_logvar.iter().all(|&v| v == 0.0));
    }

    fn fd_check(f: impl Fn(&[f64], &[f64]) -> LossGrad, mean: &[f64], lv: &[f64]) {
        let g = f(mean, lv);
        let h = 1e-5;
        for i in 0..mean.len() {
            let mut p = mean.to_vec();
            let mut m = mean.to_vec();
            p[i] += h;
            m[i] -= h;
            let fd = (f(&p, lv).value - f(&m, lv).value) / (2.0 * h);
            assert!((fd - g.d_mean[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "d_mean[{i}]");
            let mut p = lv.to_vec();
            let mut m = lv.to_vec();
            p[i] += h;
            m[i] -= h;
            let fd = (f(mean, &p).value - f(mean, &m).value) / (2.0 * h);
            assert!((fd - g.d_logvar[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "d_logvar[{i}]");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 12;
        let mean: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lv: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        fd_check(|m, a| bayesian_loss(m, a, &target, 4), &mean, &lv);
        fd_check(|m, _| l2_loss(m, &target, 4), &mean, &lv);
    }
}
