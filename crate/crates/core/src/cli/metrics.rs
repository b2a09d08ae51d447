//! Distances between fitted and true distributions.

use crate::scm::DistributionTable;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("tables disagree: {0}")]
    Mismatch(String),
    #[error("support violation: q({assignment}) = 0 where p = {p}")]
    Support { assignment: usize, p: f64 },
    #[error("mean absolute error of empty inputs")]
    Empty,
}

/// `KL(p || q) = sum_v p(v) ln(p(v) / q(v))`, skipping terms with `p(v) = 0`.
pub fn kl_divergence(p: &DistributionTable, q: &DistributionTable) -> Result<f64, MetricError> {
    if p.vars != q.vars {
        return Err(MetricError::Mismatch(format!("{:?} vs {:?}", p.vars, q.vars)));
    }
    let mut kl = 0.0;
    for (a, (&pa, &qa)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pa == 0.0 {
            continue;
        }
        if qa <= 0.0 {
            return Err(MetricError::Support { assignment: a, p: pa });
        }
        kl += pa * (pa / qa).ln();
    }
    Ok(kl)
}

pub fn mae(estimates: &[f64], truths: &[f64]) -> Result<f64, MetricError> {
    if estimates.len() != truths.len() {
        return Err(MetricError::Mismatch(format!("{} estimates for {} truths", estimates.len(), truths.len())));
    }
    if estimates.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(estimates.iter().zip(truths).map(|(e, t)| (e - t).abs()).sum::<f64>() / estimates.len() as f64)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    fn bernoulli(p1: f64) -> DistributionTable {
        DistributionTable::new(vec!["A".into()], vec![1.0 - p1, p1]).unwrap()
    }

    #[test]
    fn kl_of_identical_tables_is_zero() {
        let p = DistributionTable::new(vec!["A".into(), "B".into()], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_of_two_bernoullis() {
        let want = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert_abs_diff_eq!(kl_divergence(&bernoulli(0.5), &bernoulli(0.25)).unwrap(), want, epsilon = 1e-15);
        // the same value with the outcome coded the other way round
        assert_abs_diff_eq!(kl_divergence(&bernoulli(0.5), &bernoulli(0.75)).unwrap(), want, epsilon = 1e-15);
    }

    #[test]
    fn kl_rejects_missing_support() {
        let err = kl_divergence(&bernoulli(0.5), &bernoulli(1.0)).unwrap_err();
        assert!(matches!(err, MetricError::Support { assignment: 0, .. }));
        assert_eq!(kl_divergence(&bernoulli(1.0), &bernoulli(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn kl_rejects_different_variables() {
        let q = DistributionTable::new(vec!["B".into()], vec![0.5, 0.5]).unwrap();
        assert!(kl_divergence(&bernoulli(0.5), &q).is_err());
    }

    #[test]
    fn mae_examples() {
        assert_abs_diff_eq!(mae(&[0.4], &[0.5]).unwrap(), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(mae(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[1.0], &[]).is_err());
    }
}
