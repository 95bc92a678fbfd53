//! Small descriptive statistics shared across modules.

/// Arithmetic mean. Empty input yields NaN.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the n-1 denominator. Fewer than two values yield NaN.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Quantile by linear interpolation between order statistics
/// (position `(n - 1) * prob` in the sorted sample).
pub fn quantile_linear(xs: &[f64], prob: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    dot(a, b) / (na * nb)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Lag-1 sample autocorrelation.
pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let denom: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    let num: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    num / denom
}

/// Z-score a vector in place: mean 0 and unit sample standard deviation.
/// Returns `false` (leaving the input untouched) when the vector is constant.
pub fn zscore_in_place(xs: &mut [f64]) -> bool {
    let m = mean(xs);
    let sd = sample_sd(xs);
    let scale = xs.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if !(sd > 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return false;
    }
    for x in xs.iter_mut() {
        *x = (*x - m) / sd;
    }
    // a second centering pass removes the rounding left by the first
    let m2 = mean(xs);
    let sd2 = sample_sd(xs);
    for x in xs.iter_mut() {
        *x = (*x - m2) / sd2;
    }
    true
}
