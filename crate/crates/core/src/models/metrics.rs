use crate::error::{Error, Result};

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::contract("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score, with the boundaries of tied runs.
fn descending_groups(scores: &[f64]) -> (Vec<usize>, Vec<std::ops::Range<usize>>) {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=idx.len() {
        if i == idx.len() || scores[idx[i]] != scores[idx[start]] {
            groups.push(start..i);
            start = i;
        }
    }
    (idx, groups)
}

/// Area under the ROC curve via the rank-sum statistic; ties count one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let (idx, groups) = descending_groups(scores);
    // Count, for each positive, negatives ranked strictly below plus half the tied ones.
    let mut neg_below = neg as f64;
    let mut acc = 0.0;
    for g in groups {
        let (gp, gn) =
            idx[g].iter().fold((0usize, 0usize), |(p, n), &i| if labels[i] { (p + 1, n) } else { (p, n + 1) });
        neg_below -= gn as f64;
        acc += gp as f64 * (neg_below + 0.5 * gn as f64);
    }
    Ok(acc / (pos as f64 * neg as f64))
}

/// Average precision: `sum_k (R_k - R_{k-1}) * P_k` over distinct score
/// thresholds in descending order.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = class_counts(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs a positive".into()));
    }
    let (idx, groups) = descending_groups(scores);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut acc = 0.0;
    for g in groups {
        let gp = idx[g.clone()].iter().filter(|&&i| labels[i]).count();
        tp += gp;
        seen += g.len();
        acc += (gp as f64 / pos as f64) * (tp as f64 / seen as f64);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise_auroc(s: &[f64], y: &[bool]) -> f64 {
        let (mut acc, mut n) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] && !y[j] {
                    n += 1.0;
                    acc += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        acc / n
    }

    fn enumerated_auprc(s: &[f64], y: &[bool]) -> f64 {
        let mut th: Vec<f64> = s.to_vec();
        th.sort_by(|a, b| b.total_cmp(a));
        th.dedup();
        let pos = y.iter().filter(|&&v| v).count() as f64;
        let mut prev_r = 0.0;
        let mut ap = 0.0;
        for t in th {
            let sel: Vec<usize> = (0..s.len()).filter(|&i| s[i] >= t).collect();
            let tp = sel.iter().filter(|&&i| y[i]).count() as f64;
            let r = tp / pos;
            ap += (r - prev_r) * tp / sel.len() as f64;
            prev_r = r;
        }
        ap
    }

    #[test]
    fn small_cases() {
        assert_eq!(auroc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert_eq!(auprc(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap(), 0.5 + 0.5 * 2.0 / 3.0);
        assert!(matches!(auroc(&[0.1], &[true]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auprc(&[0.1], &[false]), Err(Error::UndefinedMetric(_))));
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            data in proptest::collection::vec((0u8..12, any::<bool>()), 2..200)
        ) {
            let s: Vec<f64> = data.iter().map(|d| f64::from(d.0) / 11.0).collect();
            let y: Vec<bool> = data.iter().map(|d| d.1).collect();
            let pos = y.iter().filter(|&&v| v).count();
            if pos > 0 && pos < y.len() {
                prop_assert!((auroc(&s, &y).unwrap() - pairwise_auroc(&s, &y)).abs() <= 1e-12);
            }
            if pos > 0 {
                prop_assert!((auprc(&s, &y).unwrap() - enumerated_auprc(&s, &y)).abs() <= 1e-12);
            }
        }
    }
}
