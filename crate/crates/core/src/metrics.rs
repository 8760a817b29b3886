//! Curve statistics for comparing methods across seeds.

use log::warn;

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7):
/// position `h = (n - 1) p`, interpolating between neighbours.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(values: &[f64]) -> f64 {
    quantile_sorted(&sorted(values), 0.5)
}

/// `(median, 25th percentile, 75th percentile)`.
pub fn median_iqr(values: &[f64]) -> (f64, f64, f64) {
    let s = sorted(values);
    (quantile_sorted(&s, 0.5), quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.75))
}

/// Per-iteration median across seeds. All curves are truncated to the
/// shortest one.
pub fn median_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..len).map(|i| median(&curves.iter().map(|c| c[i]).collect::<Vec<_>>())).collect()
}

/// Affine map onto `[0, 1]` with one shared `(min, max)` taken over every
/// curve and iteration of an experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalizer {
    pub min: f64,
    pub max: f64,
}

impl Normalizer {
    pub fn fit(curves: &[Vec<f64>]) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in curves.iter().flatten() {
            min = min.min(*v);
            max = max.max(*v);
        }
        Normalizer { min, max }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max > self.min)
    }

    /// `0.5` everywhere when the range is empty.
    pub fn apply(&self, v: f64) -> f64 {
        if self.is_degenerate() {
            0.5
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }
}

/// Normalize all curves of one experiment together.
pub fn normalize_curves(curves: &[Vec<f64>]) -> (Vec<Vec<f64>>, Normalizer) {
    let norm = Normalizer::fit(curves);
    if norm.is_degenerate() {
        warn!("all curves are flat at {}; normalized to 0.5", norm.min);
    }
    (curves.iter().map(|c| c.iter().map(|&v| norm.apply(v)).collect()).collect(), norm)
}

/// Ratio normalization: divide by a reference performance, typically the
/// best final value of the matching full-reward experiment.
pub fn ratio_curve(curve: &[f64], reference: f64) -> Vec<f64> {
    curve.iter().map(|v| v / reference).collect()
}

/// First iteration at which `curve >= threshold`, or `None`.
pub fn iterations_to_threshold(curve: &[f64], threshold: f64) -> Option<usize> {
    curve.iter().position(|&v| v >= threshold)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value (with
/// the small-sample correction `sqrt(ne) + 0.12 + 0.11 / sqrt(ne)`).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty(), "KS test needs two non-empty samples");
    let (a, b) = (sorted(a), sorted(b));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    (d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d))
}

/// `Q(lambda) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = sign * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Neither non-decreasing nor non-increasing.
pub fn is_non_monotone(values: &[f64]) -> bool {
    let up = values.windows(2).any(|w| w[1] > w[0]);
    let down = values.windows(2).any(|w| w[1] < w[0]);
    up && down
}
