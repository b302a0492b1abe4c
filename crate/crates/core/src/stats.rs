//! Small statistical helpers: normal CDF, Spearman rank correlation with
//! average-rank tie handling, and the Wilson score interval for proportions.

/// Standard normal CDF via the error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average of ranks i+1..=j+1.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// Returns 0 when either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(ry.iter()) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Half-width of the 95% Wilson score interval for `successes`/`n`.
pub fn wilson_halfwidth_95(successes: u64, n: u64) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    let z = 1.959_963_984_540_054; // Φ⁻¹(0.975)
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / (1.0 + z2 / nf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_perfect_and_reversed() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&xs, &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties_like_average_ranks() {
        // xs has a tie; compare against a hand-computed value.
        // ranks(xs) = [1.5, 1.5, 3, 4], ranks(ys) = [1, 2, 3, 4]; both means
        // are 2.5, so the deviations are [-1, -1, 0.5, 1.5] and
        // [-1.5, -0.5, 0.5, 1.5]: sxy = 4.5, sxx = 4.5, syy = 5.
        let r = spearman(&[5.0, 5.0, 7.0, 9.0], &[0.0, 1.0, 2.0, 3.0]);
        let want = 4.5 / (4.5f64 * 5.0).sqrt();
        assert!((r - want).abs() < 1e-12);
    }

    #[test]
    fn spearman_constant_input_is_zero() {
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-9);
        assert!((normal_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-12);
    }

    #[test]
    fn wilson_halfwidth_sane() {
        // p=0.5, n=100: classic Wilson interval half-width ≈ 0.0964.
        let hw = wilson_halfwidth_95(50, 100);
        assert!((hw - 0.0964).abs() < 5e-4, "hw={hw}");
        // Shrinks with n.
        assert!(wilson_halfwidth_95(500, 1000) < hw);
        // Degenerate p=0 still positive (the interval is asymmetric).
        assert!(wilson_halfwidth_95(0, 100) > 0.0);
    }
}
