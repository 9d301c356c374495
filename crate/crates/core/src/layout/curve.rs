//! Fits the low-dimensional kernel `1 / (1 + a·r^(2b))` to the `min_dist`
//! target curve.

/// Number of samples on `[0, 3·spread]` used for the fit.
pub const FIT_SAMPLES: usize = 300;

pub fn target_curve(r: f64, min_dist: f64, spread: f64) -> f64 {
    if r < min_dist {
        1.0
    } else {
        (-(r - min_dist) / spread).exp()
    }
}

pub fn kernel(r: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + a * r.powf(2.0 * b))
}

pub fn fit_samples(spread: f64) -> Vec<f64> {
    let hi = 3.0 * spread;
    (0..FIT_SAMPLES).map(|i| hi * i as f64 / (FIT_SAMPLES - 1) as f64).collect()
}

/// Root-mean-square gap between the kernel and the target over the fit samples.
pub fn fit_rmse(a: f64, b: f64, min_dist: f64, spread: f64) -> f64 {
    let xs = fit_samples(spread);
    let sse: f64 = xs.iter().map(|&x| (kernel(x, a, b) - target_curve(x, min_dist, spread)).powi(2)).sum();
    (sse / xs.len() as f64).sqrt()
}

/// Levenberg–Marquardt least squares for `(a, b)`, started at `(1, 1)`.
pub fn find_ab_params(spread: f64, min_dist: f64) -> (f64, f64) {
    let xs = fit_samples(spread);
    let ys: Vec<f64> = xs.iter().map(|&x| target_curve(x, min_dist, spread)).collect();
    let sse = |a: f64, b: f64| -> f64 { xs.iter().zip(&ys).map(|(&x, &y)| (kernel(x, a, b) - y).powi(2)).sum() };
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut lambda = 1e-3;
    let mut cost = sse(a, b);
    for _ in 0..500 {
        // Normal equations J^T J δ = -J^T r for the 2 parameters.
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            let u = if x > 0.0 { x.powf(2.0 * b) } else { 0.0 };
            let denom = 1.0 + a * u;
            let f = 1.0 / denom;
            let r = f - y;
            let da = -u / (denom * denom);
            let db = if x > 0.0 { -a * u * 2.0 * x.ln() / (denom * denom) } else { 0.0 };
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let mut improved = false;
        for _ in 0..30 {
            let (m11, m22) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
            let det = m11 * m22 - jab * jab;
            if det.abs() < f64::MIN_POSITIVE {
                lambda *= 10.0;
                continue;
            }
            let step_a = -(m22 * ga - jab * gb) / det;
            let step_b = -(m11 * gb - jab * ga) / det;
            let (na, nb) = (a + step_a, b + step_b);
            let new_cost = if na > 0.0 && nb > 0.0 { sse(na, nb) } else { f64::INFINITY };
            if new_cost < cost {
                let converged = (cost - new_cost) < 1e-15 * cost.max(1e-300);
                a = na;
                b = nb;
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                improved = !converged;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values_for_default_min_dist() {
        // scipy.optimize.curve_fit on the same 300 samples gives
        // a = 1.57694, b = 0.89506.
        let (a, b) = find_ab_params(1.0, 0.1);
        assert!((a - 1.57694).abs() < 1e-4, "a = {a}");
        assert!((b - 0.89506).abs() < 1e-4, "b = {b}");
    }

    #[test]
    fn kernel_endpoints() {
        assert_eq!(kernel(0.0, 1.5, 0.9), 1.0);
        assert!(kernel(3.0, 1.5, 0.9) < 0.1);
    }
}
