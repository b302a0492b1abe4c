//! Small shared matrix helpers (crate-internal).

use nalgebra::DMatrix;

/// Squared Frobenius norm.
pub(crate) fn frob2(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Frobenius norm of the difference.
pub(crate) fn frob_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Largest per-row sum of negative mass, i.e. max_i Σ_j max(0, -a_ij).
pub(crate) fn max_row_negative_mass(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| a.row(i).iter().map(|&x| (-x).max(0.0)).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Clip negatives to zero and renormalize each row to sum 1 in place.
/// Returns the largest per-row clipped mass (the renormalization deviation).
pub(crate) fn clip_nonneg_renormalize(a: &mut DMatrix<f64>) -> f64 {
    let worst = max_row_negative_mass(a);
    for i in 0..a.nrows() {
        let mut sum = 0.0;
        for j in 0..a.ncols() {
            let v = a[(i, j)].max(0.0);
            a[(i, j)] = v;
            sum += v;
        }
        for j in 0..a.ncols() {
            a[(i, j)] /= sum;
        }
    }
    worst
}

/// Max |row sum − 1| over rows.
pub(crate) fn max_row_sum_deviation(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| (a.row(i).sum() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// True when entries are nonnegative and rows sum to 1 within `tol`.
pub(crate) fn is_row_stochastic(a: &DMatrix<f64>, tol: f64) -> bool {
    a.iter().all(|&x| x >= 0.0) && max_row_sum_deviation(a) <= tol
}
