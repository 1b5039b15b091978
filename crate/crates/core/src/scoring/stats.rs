use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::special::{student_t_quantile, student_t_two_sided_p};
use super::ScoringError;

pub const DEFAULT_ALPHA: f64 = 0.05;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n - 1 denominator), two-pass.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Mean with a Student-t 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; undefined for a single value.
    pub sd: Option<f64>,
    /// t(0.975, n-1) * sd / sqrt(n); undefined for a single value.
    pub ci95_half_width: Option<f64>,
}

impl Aggregate {
    pub fn standard_error(&self) -> Option<f64> {
        self.sd.map(|s| s / libm::sqrt(self.n as f64))
    }
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate, ScoringError> {
    if values.is_empty() {
        return Err(ScoringError::Empty);
    }
    let n = values.len();
    let m = mean(values);
    if n < 2 {
        return Ok(Aggregate { n, mean: m, sd: None, ci95_half_width: None });
    }
    let sd = libm::sqrt(sample_variance(values));
    let t = student_t_quantile(0.975, (n - 1) as f64);
    Ok(Aggregate { n, mean: m, sd: Some(sd), ci95_half_width: Some(t * sd / libm::sqrt(n as f64)) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    /// Two independent samples, unequal variances.
    #[default]
    Welch,
    /// Matched samples; tests the mean difference.
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestOptions {
    pub method: TestMethod,
    pub alpha: f64,
}

impl Default for TTestOptions {
    fn default() -> Self {
        TTestOptions { method: TestMethod::Welch, alpha: DEFAULT_ALPHA }
    }
}

/// Why a test statistic is degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    /// Both samples constant and equal.
    IdenticalConstants,
    /// Zero variance but different means: the difference is certain.
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub method: TestMethod,
    pub statistic: f64,
    pub df: f64,
    pub p: f64,
    pub alpha: f64,
    pub significant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degeneracy: Option<Degeneracy>,
}

fn finish(method: TestMethod, diff: f64, se2: f64, df: f64, alpha: f64) -> StatTestResult {
    let (statistic, p, degeneracy) = if se2 > 0.0 {
        let t = diff / libm::sqrt(se2);
        (t, student_t_two_sided_p(t, df), None)
    } else if diff == 0.0 {
        (0.0, 1.0, Some(Degeneracy::IdenticalConstants))
    } else {
        (diff.signum() * f64::INFINITY, 0.0, Some(Degeneracy::ZeroVariance))
    };
    StatTestResult { method, statistic, df, p, alpha, significant: p < alpha, degeneracy }
}

/// Two-sided t-test of mean(a) - mean(b).
pub fn t_test(a: &[f64], b: &[f64], options: TTestOptions) -> Result<StatTestResult, ScoringError> {
    for xs in [a, b] {
        if xs.len() < 2 {
            return Err(ScoringError::TooFewSamples { needed: 2, found: xs.len() });
        }
    }
    match options.method {
        TestMethod::Welch => {
            let (na, nb) = (a.len() as f64, b.len() as f64);
            let (va, vb) = (sample_variance(a) / na, sample_variance(b) / nb);
            let se2 = va + vb;
            let df = if se2 > 0.0 {
                se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0))
            } else {
                na + nb - 2.0
            };
            Ok(finish(TestMethod::Welch, mean(a) - mean(b), se2, df, options.alpha))
        }
        TestMethod::Paired => {
            if a.len() != b.len() {
                return Err(ScoringError::LengthMismatch { left: a.len(), right: b.len() });
            }
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let n = d.len() as f64;
            Ok(finish(TestMethod::Paired, mean(&d), sample_variance(&d) / n, n - 1.0, options.alpha))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub p: f64,
    pub n: usize,
}

/// Sample Pearson correlation with a two-sided p-value from
/// t = rho * sqrt((n - 2) / (1 - rho^2)) on n - 2 degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult, ScoringError> {
    if x.len() != y.len() {
        return Err(ScoringError::LengthMismatch { left: x.len(), right: y.len() });
    }
    let n = x.len();
    if n < 3 {
        return Err(ScoringError::TooFewSamples { needed: 3, found: n });
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(ScoringError::ZeroVariance);
    }
    let rho = (sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0);
    let p = if rho.abs() == 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        student_t_two_sided_p(rho * libm::sqrt(df / (1.0 - rho * rho)), df)
    };
    Ok(CorrelationResult { rho, p, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[100.0, 100.0, 100.0]).unwrap();
        assert_eq!((a.mean, a.ci95_half_width), (100.0, Some(0.0)));
        let single = aggregate(&[42.0]).unwrap();
        assert_eq!((single.mean, single.ci95_half_width), (42.0, None));
        let b = aggregate(&[80.0, 90.0, 100.0]).unwrap();
        assert_eq!(b.mean, 90.0);
        assert!((b.ci95_half_width.unwrap() - 24.84).abs() < 0.005);
        assert_eq!(aggregate(&[]), Err(ScoringError::Empty));
    }

    #[test]
    fn welch_on_shifted_ranges() {
        let r = t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0], TTestOptions::default()).unwrap();
        assert!((r.statistic + 1.0).abs() < 1e-12);
        assert!((r.df - 8.0).abs() < 1e-12);
        assert!((r.p - 0.3466).abs() < 1e-4);
        assert!(!r.significant);
    }

    #[test]
    fn identical_samples_give_p_one() {
        let a = [3.0, 1.0, 4.0, 1.0, 5.0];
        let r = t_test(&a, &a, TTestOptions::default()).unwrap();
        assert_eq!((r.statistic, r.p), (0.0, 1.0));
        let c = [7.0; 4];
        let r = t_test(&c, &c, TTestOptions::default()).unwrap();
        assert_eq!((r.p, r.degeneracy), (1.0, Some(Degeneracy::IdenticalConstants)));
        let r = t_test(&[0.0; 3], &[100.0; 3], TTestOptions::default()).unwrap();
        assert_eq!((r.p, r.significant, r.degeneracy), (0.0, true, Some(Degeneracy::ZeroVariance)));
    }

    #[test]
    fn large_separation_is_significant() {
        let a = [0.0, 0.001, -0.001, 0.0005];
        let b = [100.0, 100.001, 99.999, 100.0005];
        assert!(t_test(&a, &b, TTestOptions::default()).unwrap().significant);
    }

    #[test]
    fn paired_test_uses_differences() {
        let a = [10.0, 12.0, 14.0, 16.0];
        let b = [9.0, 10.0, 13.0, 14.0];
        let r = t_test(&a, &b, TTestOptions { method: TestMethod::Paired, alpha: 0.05 }).unwrap();
        // d = 1, 2, 1, 2: mean 1.5, sd = sqrt(1/3), t = 1.5 / (sqrt(1/3) / 2)
        assert!((r.statistic - 1.5 / (libm::sqrt(1.0 / 3.0) / 2.0)).abs() < 1e-12);
        assert_eq!(r.df, 3.0);
        assert!(matches!(
            t_test(&a, &b[..3], TTestOptions { method: TestMethod::Paired, alpha: 0.05 }),
            Err(ScoringError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let lin: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert_eq!(pearson(&x, &lin).unwrap().rho, 1.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &neg).unwrap().rho, -1.0);
        assert_eq!(pearson(&x, &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap().rho, 0.8);
        assert_eq!(pearson(&x, &[1.0; 5]), Err(ScoringError::ZeroVariance));
        assert!(matches!(pearson(&x, &x[..4]), Err(ScoringError::LengthMismatch { .. })));
    }

    proptest! {
        #[test]
        fn t_test_is_antisymmetric(
            a in proptest::collection::vec(-100.0f64..100.0, 2..20),
            b in proptest::collection::vec(-100.0f64..100.0, 2..20),
        ) {
            let ab = t_test(&a, &b, TTestOptions::default()).unwrap();
            let ba = t_test(&b, &a, TTestOptions::default()).unwrap();
            prop_assert!((ab.p - ba.p).abs() < 1e-12);
            prop_assert!((ab.statistic + ba.statistic).abs() < 1e-9 * ab.statistic.abs().max(1.0));
            prop_assert!((0.0..=1.0).contains(&ab.p));
        }

        #[test]
        fn pearson_ignores_positive_affine_maps(
            pts in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..30),
            scale in 0.01f64..100.0,
            shift in -1000.0f64..1000.0,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let Ok(r) = pearson(&x, &y) else { return Ok(()); };
            let y2: Vec<f64> = y.iter().map(|v| scale * v + shift).collect();
            let r2 = pearson(&x, &y2).unwrap();
            prop_assert!((r.rho - r2.rho).abs() < 1e-9);
        }
    }
}
