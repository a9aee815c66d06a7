use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

pub const NEUTRAL_P: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Welch two-sample t-test, for counts.
    Welch,
    /// Pooled two-proportion z-test, for 0/1 flags.
    TwoProportion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub metric: String,
    pub test: TestKind,
    pub delta_pct: f64,
    pub p_value: f64,
    pub ci95: (f64, f64),
    pub mean_treat: f64,
    pub mean_control: f64,
    pub n_treat: usize,
    pub n_control: usize,
}

impl EffectEstimate {
    pub fn is_neutral(&self) -> bool {
        self.p_value > NEUTRAL_P
    }

    /// `Neutral` when `p > 0.05`, otherwise the signed delta.
    pub fn label(&self) -> String {
        if self.is_neutral() {
            "Neutral".to_string()
        } else {
            format!("{:+.2}%", self.delta_pct)
        }
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = if x.len() > 1 { x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v)
}

fn two_sided(stat: f64, cdf: impl Fn(f64) -> f64) -> f64 {
    (2.0 * (1.0 - cdf(stat.abs()))).clamp(0.0, 1.0)
}

/// Relative effect `100 (mean_T - mean_C) / mean_C` with a delta-method
/// interval and the p-value of `test`.
pub fn delta_effect(metric: &str, treat: &[f64], control: &[f64], test: TestKind) -> Result<EffectEstimate> {
    if treat.is_empty() || control.is_empty() {
        return Err(Error::DegenerateData("both arms need samples".into()));
    }
    let (nt, nc) = (treat.len() as f64, control.len() as f64);
    let (mt, vt) = mean_var(treat);
    let (mc, vc) = mean_var(control);
    let diff = mt - mc;
    if mc == 0.0 {
        return Err(Error::UndefinedRelativeEffect { absolute: diff });
    }
    let (var_mt, var_mc, p_value) = match test {
        TestKind::Welch => {
            let (a, b) = (vt / nt, vc / nc);
            let se = (a + b).sqrt();
            let p = if se == 0.0 {
                if diff == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                let df = (a + b).powi(2) / (a * a / (nt - 1.0).max(1.0) + b * b / (nc - 1.0).max(1.0));
                let t = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::DegenerateData(e.to_string()))?;
                two_sided(diff / se, |x| t.cdf(x))
            };
            (a, b, p)
        }
        TestKind::TwoProportion => {
            if treat.iter().chain(control).any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::contract(format!("{metric}: proportion test needs 0/1 values")));
            }
            let pooled = (mt * nt + mc * nc) / (nt + nc);
            let se = (pooled * (1.0 - pooled) * (1.0 / nt + 1.0 / nc)).sqrt();
            let p = if se == 0.0 {
                if diff == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                let z = Normal::standard();
                two_sided(diff / se, |x| z.cdf(x))
            };
            (mt * (1.0 - mt) / nt, mc * (1.0 - mc) / nc, p)
        }
    };
    let ratio = mt / mc;
    let sd = (var_mt / (mc * mc) + ratio * ratio * var_mc / (mc * mc)).sqrt();
    let delta_pct = 100.0 * (ratio - 1.0);
    let half = 100.0 * 1.959963984540054 * sd;
    Ok(EffectEstimate {
        metric: metric.to_string(),
        test,
        delta_pct,
        p_value,
        ci95: (delta_pct - half, delta_pct + half),
        mean_treat: mt,
        mean_control: mc,
        n_treat: treat.len(),
        n_control: control.len(),
    })
}

/// One-sample Kolmogorov-Smirnov test against Uniform(0, 1); returns the
/// statistic and its asymptotic p-value.
pub fn ks_uniform(sample: &[f64]) -> Result<(f64, f64)> {
    if sample.is_empty() {
        return Err(Error::DegenerateData("KS test on an empty sample".into()));
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = v.clamp(0.0, 1.0);
            ((i as f64 + 1.0) / n - v).max(v - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sq = n.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    Ok((d, kolmogorov_q(lambda)))
}

/// `Q(l) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 l^2)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = sign * (-2.0 * f64::from(j * j) * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng as _;

    #[test]
    fn identical_arms() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let e = delta_effect("x", &a, &a, TestKind::Welch).unwrap();
        assert_eq!((e.delta_pct, e.p_value), (0.0, 1.0));
        assert!(e.is_neutral());
        assert_eq!(e.label(), "Neutral");
    }

    #[test]
    fn constant_arms() {
        let e = delta_effect("x", &[2.0; 4], &[1.0; 4], TestKind::Welch).unwrap();
        assert_eq!(e.delta_pct, 100.0);
        assert_eq!(e.p_value, 0.0);
        assert!(e.ci95.0 <= 100.0 && e.ci95.1 >= 100.0);
        assert!(matches!(
            delta_effect("x", &[1.0], &[0.0, 0.0], TestKind::Welch),
            Err(Error::UndefinedRelativeEffect { absolute }) if absolute == 1.0
        ));
    }

    #[test]
    fn welch_by_hand() {
        let t = [3.0, 5.0, 4.0, 6.0, 7.0];
        let c = [2.0, 3.0, 4.0, 3.0];
        let e = delta_effect("x", &t, &c, TestKind::Welch).unwrap();
        // means 5 and 3; variances 2.5 and 2/3
        let (a, b): (f64, f64) = (2.5 / 5.0, (2.0 / 3.0) / 4.0);
        let tstat = 2.0 / (a + b).sqrt();
        let df = (a + b) * (a + b) / (a * a / 4.0 + b * b / 3.0);
        let p = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(tstat));
        assert_relative_eq!(e.p_value, p, epsilon = 1e-12);
        assert_relative_eq!(e.delta_pct, 100.0 * 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn two_proportion_by_hand() {
        let t: Vec<f64> = (0..1000).map(|i| f64::from(u8::from(i < 300))).collect();
        let c: Vec<f64> = (0..1000).map(|i| f64::from(u8::from(i < 200))).collect();
        let e = delta_effect("x", &t, &c, TestKind::TwoProportion).unwrap();
        let se = (0.25f64 * 0.75 * 0.002).sqrt();
        let p = 2.0 * (1.0 - Normal::standard().cdf(0.1 / se));
        assert_relative_eq!(e.p_value, p, epsilon = 1e-12);
        assert_relative_eq!(e.delta_pct, 50.0, epsilon = 1e-9);
        assert!(!e.is_neutral());
        assert!(delta_effect("x", &[0.5], &[1.0], TestKind::TwoProportion).is_err());
    }

    #[test]
    fn ks_behaviour() {
        let mut rng = crate::rng::rng_from(2);
        let u: Vec<f64> = (0..500).map(|_| rng.random()).collect();
        assert!(ks_uniform(&u).unwrap().1 > 0.01);
        let skew: Vec<f64> = u.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&skew).unwrap().1 < 1e-6);
        let (d, _) = ks_uniform(&[0.5]).unwrap();
        assert_relative_eq!(d, 0.5);
    }
}
