//! Scalar kernels shared by the tape and the plain prediction path.
//!
//! Both paths call these exact functions so a recorded forward pass and a
//! direct evaluation agree bit for bit.

/// Logistic function. Written as `1 / (1 + e^-z)` for every `z`: each
/// rounding step is monotone, so the result is non-decreasing in `z`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `ln(1 + e^x)`, floored at the smallest positive normal so the result is
/// strictly positive for every finite input.
#[inline]
pub fn softplus(x: f64) -> f64 {
    (x.max(0.0) + (-x.abs()).exp().ln_1p()).max(f64::MIN_POSITIVE)
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Neumaier-compensated sum, left to right.
///
/// Returns the correctly rounded result for short, well-conditioned sums such
/// as the cumulative isotonic weights, where plain accumulation drifts by an ulp.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
