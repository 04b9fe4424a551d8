//! Scalar helpers on top of `libm`.

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn pow(b: f64, p: f64) -> f64 {
    libm::pow(b, p)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn is_integer(x: f64) -> bool {
    x.is_finite() && libm::trunc(x) == x
}

/// `log phi(y; mean, sigma2)`.
#[inline]
pub fn gauss_logpdf(y: f64, mean: f64, sigma2: f64) -> f64 {
    let r = y - mean;
    -0.5 * (LN_2PI + ln(sigma2)) - 0.5 * r * r / sigma2
}

#[inline]
pub fn gauss_pdf(y: f64, mean: f64, sigma2: f64) -> f64 {
    let r = y - mean;
    exp(-0.5 * r * r / sigma2) / sqrt(core::f64::consts::TAU * sigma2)
}

/// Differential entropy of `N(., sigma2)` in nats.
pub fn gauss_entropy(sigma2: f64) -> f64 {
    0.5 * (LN_2PI + 1.0 + ln(sigma2))
}

/// `log sum exp(xs)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.into_iter().map(|x| exp(x - max)).sum();
    max + ln(s)
}

/// `x ln x` with the `0 ln 0 = 0` convention.
#[inline]
pub fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * ln(x)
    } else {
        0.0
    }
}
