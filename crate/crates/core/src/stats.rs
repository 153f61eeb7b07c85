use serde::{Deserialize, Serialize};

/// Normal quantile for two-sided 95% intervals.
pub const Z95: f64 = 1.959963984540054;

/// Pairwise (tree) summation; the result depends only on the order of
/// `values`, never on the thread schedule that produced them.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(values) / values.len() as f64
}

/// Unbiased sample variance (0 for fewer than two values).
pub fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    pairwise_sum(&sq) / (values.len() - 1) as f64
}

/// Monte Carlo mean with standard error and 95% normal interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let m = mean(values);
        let se = (sample_variance(values) / values.len() as f64).sqrt();
        Self::from_mean_se(m, se, values.len())
    }

    pub fn from_mean_se(mean: f64, std_error: f64, n: usize) -> Self {
        Self {
            mean,
            std_error,
            ci_low: mean - Z95 * std_error,
            ci_high: mean + Z95 * std_error,
            n,
        }
    }

    pub fn overlaps(&self, other: &MeanEstimate) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

/// Ordinary least-squares line `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
    })
}

/// Slope of `log(err)` against `log(param)`; points with non-positive error
/// are skipped. `None` when fewer than two usable points remain.
pub fn loglog_slope(param: &[f64], err: &[f64]) -> Option<LineFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = param
        .iter()
        .zip(err)
        .filter(|(p, e)| **p > 0.0 && **e > 0.0 && e.is_finite())
        .map(|(p, e)| (p.ln(), e.ln()))
        .unzip();
    fit_line(&lx, &ly)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

impl Verdict {
    pub fn worst(self, other: Verdict) -> Verdict {
        self.max(other)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Warn => "WARN",
            Verdict::Fail => "FAIL",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of the CI-aware monotone-decrease test over a sequence of
/// estimates ordered by decreasing epsilon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub verdict: Verdict,
    /// Transitions `i -> i+1` whose mean went up with disjoint intervals.
    pub violations: Vec<usize>,
    /// Whether the means alone are strictly decreasing.
    pub strictly_decreasing_means: bool,
}

/// A transition counts as a decrease when the mean drops or the two 95%
/// intervals overlap. Any non-decrease is a WARN; three consecutive
/// non-decreases are a FAIL.
pub fn monotone_decrease(rows: &[MeanEstimate]) -> MonotoneReport {
    let mut violations = Vec::new();
    let mut run = 0usize;
    let mut verdict = Verdict::Pass;
    for (i, w) in rows.windows(2).enumerate() {
        let decreased = w[1].mean < w[0].mean || w[0].overlaps(&w[1]);
        if decreased {
            run = 0;
        } else {
            violations.push(i);
            run += 1;
            verdict = verdict.worst(if run >= 3 { Verdict::Fail } else { Verdict::Warn });
        }
    }
    MonotoneReport {
        verdict,
        violations,
        strictly_decreasing_means: rows.windows(2).all(|w| w[1].mean < w[0].mean),
    }
}
