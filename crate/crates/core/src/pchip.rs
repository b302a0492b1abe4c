//! Shape-preserving piecewise-cubic Hermite interpolation (Fritsch–Carlson).
//!
//! Natural cubic splines overshoot: interpolating a decreasing sequence can
//! produce locally increasing segments, which would break the requirement
//! that transition-matrix eigenvalue curves stay non-increasing. The
//! Fritsch–Carlson slope rule (weighted harmonic mean of adjacent secants,
//! zero across sign changes) guarantees the interpolant is monotone on every
//! interval whose data is monotone, at the cost of second-derivative
//! continuity.
//!
//! Slope selection matches the common reference implementation: interior
//! slopes are `(w1+w2)/(w1/δₗ + w2/δᵣ)` with `w1 = 2hᵣ+hₗ`, `w2 = hᵣ+2hₗ`
//! when the secants agree in sign and zero otherwise; endpoint slopes use
//! the one-sided three-point estimate clamped to preserve shape.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    slope: Vec<f64>,
}

fn endpoint_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    // One-sided three-point estimate, clamped so the end interval cannot
    // overshoot (Fritsch–Carlson edge rule).
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() || d0 == 0.0 {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

impl Pchip {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "pchip needs matched x/y with >= 2 knots, got {}/{}",
                x.len(),
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "pchip knots and values must be finite".into(),
            ));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "pchip knots must be strictly increasing".into(),
            ));
        }
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut slope = vec![0.0; n];
        if n == 2 {
            slope[0] = delta[0];
            slope[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                let (dl, dr) = (delta[k - 1], delta[k]);
                if dl * dr > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    slope[k] = (w1 + w2) / (w1 / dl + w2 / dr);
                }
            }
            slope[0] = endpoint_slope(h[0], h[1], delta[0], delta[1]);
            slope[n - 1] = endpoint_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            slope,
        })
    }

    /// Evaluate at `t`, clamped to the knot span (no extrapolation).
    pub fn eval(&self, t: f64) -> f64 {
        if t.is_nan() {
            return f64::NAN;
        }
        let n = self.x.len();
        let t = t.clamp(self.x[0], self.x[n - 1]);
        // Find the interval via binary search on the right edge.
        let i = match self
            .x
            .binary_search_by(|v| v.partial_cmp(&t).unwrap())
        {
            Ok(k) => return self.y[k],
            Err(k) => k - 1, // t ∈ (x[k-1], x[k]); k >= 1 because t >= x[0]
        };
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.slope[i] + h01 * self.y[i + 1] + h11 * h * self.slope[i + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_data_stays_constant() {
        let x = [0.0, 0.3, 0.7, 1.0];
        let y = [1.0; 4];
        let p = Pchip::new(&x, &y).unwrap();
        for i in 0..=100 {
            assert_eq!(p.eval(i as f64 / 100.0), 1.0);
        }
    }

    #[test]
    fn two_knots_interpolate_linearly_within_bounds() {
        let p = Pchip::new(&[0.0, 1.0], &[1.0, 0.25]).unwrap();
        assert!((p.eval(0.5) - 0.625).abs() < 1e-15);
        let mut prev = p.eval(0.0);
        for i in 1..=50 {
            let v = p.eval(i as f64 / 50.0);
            assert!(v <= prev + 1e-15);
            assert!((0.25..=1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn matches_reference_implementation() {
        // Values computed with an independent reference PCHIP on a schedule-
        // shaped decreasing sequence and a non-monotone shape.
        let x = [0.0, 0.02, 0.04, 0.09, 0.20, 0.40, 0.65, 0.84, 0.94, 0.98, 1.00];
        let y = [1.0, 0.97, 0.92, 0.80, 0.55, 0.30, 0.12, 0.05, 0.02, 0.011, 0.010];
        let p = Pchip::new(&x, &y).unwrap();
        let cases = [
            (0.0, 1.0),
            (0.01, 0.98718750000000011),
            (0.03, 0.94645285087719289),
            (0.05, 0.89554887159333185),
            (0.15, 0.65364813742505246),
            (0.33, 0.37130431794079588),
            (0.52, 0.19983897937083964),
            (0.7, 0.09814054371168679),
            (0.9, 0.031047263191832326),
            (0.96, 0.014622075471698113),
            (0.99, 0.010308962264150944),
            (1.0, 0.01),
        ];
        for (t, want) in cases {
            assert!(
                (p.eval(t) - want).abs() < 1e-14,
                "t={t}: got {} want {want}",
                p.eval(t)
            );
        }

        let p2 = Pchip::new(&[0.0, 1.0, 2.0, 3.0, 4.0], &[0.0, 2.0, 1.5, 1.5, 3.0]).unwrap();
        let cases2 = [
            (0.5, 1.40625),
            (1.25, 1.921875),
            (1.75, 1.578125),
            (2.5, 1.5),
            (3.3, 1.6822499999999998),
            (3.9, 2.7757499999999999),
        ];
        for (t, want) in cases2 {
            assert!(
                (p2.eval(t) - want).abs() < 1e-14,
                "t={t}: got {} want {want}",
                p2.eval(t)
            );
        }
    }

    #[test]
    fn monotone_data_gives_monotone_interpolant() {
        // Exponent-like decreasing data with very uneven knot spacing.
        let x: [f64; 11] = [0.0, 0.02, 0.04, 0.09, 0.20, 0.40, 0.65, 0.84, 0.94, 0.98, 1.00];
        let y: Vec<f64> = x.iter().map(|&t| (-3.5 * t).exp()).collect();
        let p = Pchip::new(&x, &y).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..=10_000 {
            let v = p.eval(i as f64 / 10_000.0);
            assert!(v <= prev + 1e-15, "increase at t={}", i as f64 / 10_000.0);
            prev = v;
        }
    }

    #[test]
    fn eval_clamps_to_span() {
        let p = Pchip::new(&[0.0, 1.0], &[3.0, 5.0]).unwrap();
        assert_eq!(p.eval(-2.0), 3.0);
        assert_eq!(p.eval(2.0), 5.0);
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(Pchip::new(&[0.0], &[1.0]).is_err());
        assert!(Pchip::new(&[0.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(Pchip::new(&[1.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(Pchip::new(&[0.0, 1.0], &[1.0]).is_err());
        assert!(Pchip::new(&[0.0, f64::NAN], &[1.0, 2.0]).is_err());
        assert!(Pchip::new(&[0.0, 1.0], &[1.0, f64::INFINITY]).is_err());
    }
}
