//! Float helpers that work without `std`.

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn log2(x: f64) -> f64 {
    libm::log2(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn powi2(grade: u32) -> f64 {
    libm::pow(2.0, grade as f64)
}

/// Sequential, index-ascending dot product accumulated in f64.
#[inline]
pub fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

#[inline]
pub fn norm_f64(a: &[f64]) -> f64 {
    sqrt(dot_f64(a, a))
}

/// Total order on finite scores with `-0.0 == 0.0`, so numerically equal
/// scores fall through to the id tie-break.
#[inline]
pub fn score_cmp(a: f64, b: f64) -> core::cmp::Ordering {
    (a + 0.0).total_cmp(&(b + 0.0))
}

/// `log(sum(exp(x)))` with the max shift.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut s = 0.0;
    for &x in xs {
        s += exp(x - m);
    }
    m + ln(s)
}
