//! Kruskal-Wallis H test with tie correction, the chi-square survival
//! function it needs, and Bonferroni adjustment.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::evaluation::{Metric, MetricFrame};
use crate::grouping::GroupAssignment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least two non-empty groups, got {0}")]
    TooFewGroups(usize),
    #[error("need at least 3 observations, got {0}")]
    TooFewObservations(usize),
    #[error("non-finite observation")]
    NonFinite,
    #[error("not testable: {0} usable groups after dropping N/A")]
    NotTestable(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KwResult {
    pub h: f64,
    pub df: usize,
    pub p_value: f64,
    /// `1 - Σ(t³ - t) / (N³ - N)`; reported as 1 when every value is tied.
    pub tie_correction: f64,
    pub group_sizes: Vec<usize>,
}

/// 1-based ranks; tied values share the mean of their rank span.
pub fn rank_mid(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let mid = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mid;
        }
        start = end;
    }
    ranks
}

pub fn kruskal_wallis<G: AsRef<[f64]>>(groups: &[G]) -> Result<KwResult, StatsError> {
    let group_sizes: Vec<usize> = groups.iter().map(|g| g.as_ref().len()).collect();
    if groups.len() < 2 || group_sizes.contains(&0) {
        return Err(StatsError::TooFewGroups(
            group_sizes.iter().filter(|&&n| n > 0).count(),
        ));
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.as_ref().iter().copied()).collect();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = pooled.len();
    if n < 3 {
        return Err(StatsError::TooFewObservations(n));
    }
    let ranks = rank_mid(&pooled);
    let nf = n as f64;
    let centre = (nf + 1.0) / 2.0;
    let mut spread = 0.0;
    let mut offset = 0;
    for &size in &group_sizes {
        let mean_rank = ranks[offset..offset + size].iter().sum::<f64>() / size as f64;
        spread += size as f64 * (mean_rank - centre) * (mean_rank - centre);
        offset += size;
    }
    let h_raw = 12.0 / (nf * (nf + 1.0)) * spread;

    let mut sorted = pooled;
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    let correction = 1.0 - ties / (nf * nf * nf - nf);
    let df = groups.len() - 1;
    if correction <= 0.0 {
        return Ok(KwResult {
            h: 0.0,
            df,
            p_value: 1.0,
            tie_correction: 1.0,
            group_sizes,
        });
    }
    let h = h_raw / correction;
    Ok(KwResult {
        h,
        df,
        p_value: chi2_sf(h, df),
        tie_correction: correction,
        group_sizes,
    })
}

/// Upper tail of the chi-square distribution, `Q(df/2, x/2)`.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    assert!(df > 0, "chi-square needs positive degrees of freedom");
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(df as f64 / 2.0, x / 2.0)
}

const EPS: f64 = 1e-16;
const MAX_TERMS: usize = 10_000;

/// Regularized upper incomplete gamma function.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        (1.0 - gamma_p_series(a, x)).clamp(0.0, 1.0)
    } else {
        gamma_q_fraction(a, x).clamp(0.0, 1.0)
    }
}

fn log_prefactor(a: f64, x: f64) -> f64 {
    -x + a * libm::log(x) - libm::lgamma(a)
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut denom = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_TERMS {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * libm::exp(log_prefactor(a, x))
}

/// Modified Lentz evaluation of the continued fraction for `Q(a, x)`.
fn gamma_q_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_TERMS {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    libm::exp(log_prefactor(a, x)) * h
}

/// `min(1, m * p)` for a family of `m` tests.
pub fn bonferroni(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len() as f64;
    p_values.iter().map(|&p| (p * m).min(1.0)).collect()
}

/// Kruskal-Wallis over per-user values grouped by `assignment`; N/A users,
/// users without a value and groups left empty are dropped.
pub fn test_groups(values: &[Option<f64>], assignment: &GroupAssignment) -> Result<KwResult, StatsError> {
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); assignment.labels().len()];
    for (u, v) in values.iter().enumerate() {
        if let (Some(v), Some(g)) = (v, assignment.group_of(u as u32)) {
            groups[g].push(*v);
        }
    }
    groups.retain(|g| !g.is_empty());
    if groups.len() < 2 {
        return Err(StatsError::NotTestable(groups.len()));
    }
    kruskal_wallis(&groups)
}

/// Tests `metric`, averaged per user over folds, across the groups of
/// `assignment` (which must cover `n_users` users).
pub fn test_grouping(
    frame: &MetricFrame,
    assignment: &GroupAssignment,
    metric: Metric,
) -> Result<KwResult, StatsError> {
    test_groups(&frame.user_means(metric, assignment.n_users()), assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::bucket_categorical;

    #[test]
    fn mid_ranks() {
        assert_eq!(rank_mid(&[10.0, 20.0, 30.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(rank_mid(&[5.0, 5.0]), vec![1.5, 1.5]);
        assert_eq!(rank_mid(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn separated_triples() {
        let r = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        // 12 / 42 * (3 * 1.5² + 3 * 1.5²) = 27 / 7
        assert!((r.h - 27.0 / 7.0).abs() < 1e-12);
        assert!((r.p_value - 0.0495).abs() < 1e-3);
        assert_eq!(r.df, 1);
        assert_eq!(r.tie_correction, 1.0);
    }

    #[test]
    fn identical_groups_and_all_ties() {
        let r = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!((r.h, r.p_value), (0.0, 1.0));
        let r = kruskal_wallis(&[vec![7.0, 7.0], vec![7.0]]).unwrap();
        assert_eq!((r.h, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn preconditions() {
        assert!(matches!(kruskal_wallis(&[vec![1.0, 2.0]]), Err(StatsError::TooFewGroups(_))));
        assert!(matches!(
            kruskal_wallis(&[vec![1.0], vec![]]),
            Err(StatsError::TooFewGroups(_))
        ));
        assert_eq!(
            kruskal_wallis(&[vec![1.0], vec![2.0]]),
            Err(StatsError::TooFewObservations(2))
        );
        assert_eq!(
            kruskal_wallis(&[vec![1.0, f64::NAN], vec![2.0]]),
            Err(StatsError::NonFinite)
        );
    }

    #[test]
    fn chi2_examples() {
        assert_eq!(chi2_sf(0.0, 3), 1.0);
        assert!((chi2_sf(3.841, 1) - 0.05).abs() < 1e-4);
        for x in [0.1, 1.0, 2.5, 10.0, 40.0, 200.0] {
            assert!((chi2_sf(x, 2) - libm::exp(-x / 2.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn bonferroni_caps_at_one() {
        assert_eq!(bonferroni(&[0.01]), vec![0.01]);
        let adj = bonferroni(&[0.01, 0.2, 0.5]);
        assert!((adj[0] - 0.03).abs() < 1e-15 && (adj[1] - 0.6).abs() < 1e-15);
        assert_eq!(adj[2], 1.0);
    }

    #[test]
    fn na_users_are_not_tested() {
        let a = bucket_categorical(&[Some("x"), Some("x"), None, None], &[]);
        let values = [Some(0.1), Some(0.2), Some(0.9), Some(0.8)];
        assert_eq!(test_groups(&values, &a), Err(StatsError::NotTestable(1)));
    }
}
