//! Summary statistics and the Welch two-sample t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator); NaN below two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub std_a: Option<f64>,
    pub std_b: Option<f64>,
    /// `None` when a group has fewer than two values or both are constant
    /// and equal.
    pub t: Option<f64>,
    pub df: Option<f64>,
    /// Two-sided.
    pub p_value: Option<f64>,
    pub defined: bool,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Welch's unequal-variance t-test of mean(a) against mean(b).
pub fn welch_t_test(a: &[f64], b: &[f64]) -> WelchTest {
    let (va, vb) = (variance(a), variance(b));
    let mut out = WelchTest {
        n_a: a.len(),
        n_b: b.len(),
        mean_a: mean(a),
        mean_b: mean(b),
        std_a: finite(va.sqrt()),
        std_b: finite(vb.sqrt()),
        t: None,
        df: None,
        p_value: None,
        defined: false,
    };
    if a.len() < 2 || b.len() < 2 {
        return out;
    }
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    let diff = out.mean_a - out.mean_b;
    if se2 == 0.0 {
        if diff == 0.0 {
            out.t = Some(0.0);
            out.p_value = Some(1.0);
            out.defined = true;
        }
        return out;
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    out.t = Some(t);
    out.df = Some(df);
    out.p_value = StudentsT::new(0.0, 1.0, df)
        .ok()
        .map(|d| (2.0 * d.cdf(-t.abs())).min(1.0));
    out.defined = out.p_value.is_some();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_values() {
        // t, df by hand: means 3 and 6, variances 2.5 and 10, n = 5
        // se2 = 0.5 + 2 = 2.5, t = -3 / sqrt(2.5), df = 6.25 / (0.0625 + 1) = 5.882352...
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 4.0, 6.0, 8.0, 10.0];
        let r = welch_t_test(&a, &b);
        assert!((r.t.unwrap() - (-3.0 / 2.5f64.sqrt())).abs() < 1e-12);
        assert!((r.df.unwrap() - 6.25 / 1.0625).abs() < 1e-12);
        let p = r.p_value.unwrap();
        // scipy.stats.ttest_ind(a, b, equal_var=False)
        assert!((p - 0.10753119493062718).abs() < 1e-9, "{p}");
    }

    #[test]
    fn identical_groups_give_zero_t() {
        let a = [0.2, 0.4, 0.9, 0.5];
        let r = welch_t_test(&a, &a);
        assert_eq!(r.t, Some(0.0));
        assert!((r.p_value.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_is_undefined() {
        let r = welch_t_test(&[0.5], &[0.1, 0.2]);
        assert!(!r.defined);
        assert!(r.p_value.is_none());
        assert_eq!(r.mean_a, 0.5);
        assert!(r.std_a.is_none());
    }

    #[test]
    fn large_separation_is_significant() {
        let a: Vec<f64> = (0..50).map(|i| 0.8 + 0.001 * i as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| 0.2 + 0.001 * i as f64).collect();
        assert!(welch_t_test(&a, &b).p_value.unwrap() < 1e-10);
    }
}
