//! Standard normal CDF and quantile.
//!
//! The CDF uses the all-positive power series for erf (no cancellation, good
//! to machine precision over the range that matters here); the quantile is a
//! rational initial estimate polished by Newton steps on the CDF.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantileError {
    OutOfRange,
}

impl std::fmt::Display for QuantileError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "probability must lie strictly between 0 and 1")
    }
}

impl std::error::Error for QuantileError {}

/// erf via erf(x) = 2/sqrt(pi) * x * exp(-x^2) * sum_n (2x^2)^n / (2n+1)!!.
fn erf(x: f64) -> f64 {
    let ax = x.abs();
    if ax > 8.0 {
        return x.signum();
    }
    let x2 = x * x;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut n = 0u32;
    loop {
        n += 1;
        term *= 2.0 * x2 / (2.0 * f64::from(n) + 1.0);
        sum += term;
        if term < sum * 1e-18 || n > 400 {
            break;
        }
    }
    let v = 2.0 / std::f64::consts::PI.sqrt() * ax * (-x2).exp() * sum;
    v.copysign(x)
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse standard normal CDF with |Phi(result) - p| <= 1e-10.
pub fn quantile_std_normal(p: f64) -> Result<f64, QuantileError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(QuantileError::OutOfRange);
    }
    let mut x = acklam_estimate(p);
    // Newton on Phi; two or three steps reach machine precision from the
    // rational estimate (|error| < 1.2e-9 over the whole open interval)
    for _ in 0..4 {
        let f = std_normal_cdf(x) - p;
        let d = std_normal_pdf(x);
        if d <= f64::MIN_POSITIVE {
            break;
        }
        let step = f / d;
        x -= step;
        if step.abs() < 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Acklam's rational approximation to the normal quantile.
fn acklam_estimate(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_is_zero() {
        assert_eq!(quantile_std_normal(0.5).unwrap(), 0.0);
    }

    #[test]
    fn frozen_quantiles() {
        // reference values from a 50-digit erf bisection
        assert!((quantile_std_normal(0.8).unwrap() - 0.84162123357291420518).abs() < 1e-12);
        assert!((quantile_std_normal(0.9).unwrap() - 1.281551565544600467).abs() < 1e-12);
    }

    #[test]
    fn cdf_consistency_across_range() {
        for i in 1..999 {
            let p = f64::from(i) / 1000.0;
            let x = quantile_std_normal(p).unwrap();
            assert!(
                (std_normal_cdf(x) - p).abs() <= 1e-10,
                "p={p}: residual {}",
                (std_normal_cdf(x) - p).abs()
            );
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert_eq!(quantile_std_normal(0.0), Err(QuantileError::OutOfRange));
        assert_eq!(quantile_std_normal(1.0), Err(QuantileError::OutOfRange));
        assert_eq!(quantile_std_normal(-0.2), Err(QuantileError::OutOfRange));
    }
}
