//! Threshold-free detection metric.

use num_rational::Ratio;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// AUROC as an exact fraction, OOD being the positive class and higher
/// scores meaning "more OOD". Computed from mid-ranks of the pooled sample
/// (Mann-Whitney U), so ties count one half.
pub fn auroc_ratio<T: Scalar>(id_scores: &[T], ood_scores: &[T]) -> Result<Ratio<u64>> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(invalid("AUROC needs non-empty ID and OOD score lists"));
    }
    if id_scores.iter().chain(ood_scores).any(|s| s.is_nan()) {
        return Err(invalid("AUROC scores contain NaN"));
    }
    let mut pooled: Vec<(T, bool)> =
        id_scores.iter().map(|&s| (s, false)).chain(ood_scores.iter().map(|&s| (s, true))).collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("no NaN"));

    // twice the rank sum of the OOD sample, ranks 1-based, ties at mid-rank
    let mut twice_rank_sum: u64 = 0;
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start + 1;
        while end < pooled.len() && pooled[end].0 == pooled[start].0 {
            end += 1;
        }
        let twice_mid = (start + 1 + end) as u64;
        let ood_in_group = pooled[start..end].iter().filter(|p| p.1).count() as u64;
        twice_rank_sum += twice_mid * ood_in_group;
        start = end;
    }
    let n_ood = ood_scores.len() as u64;
    let n_id = id_scores.len() as u64;
    let twice_u = twice_rank_sum - n_ood * (n_ood + 1);
    Ok(Ratio::new(twice_u, 2 * n_id * n_ood))
}

pub fn auroc<T: Scalar>(id_scores: &[T], ood_scores: &[T]) -> Result<f64> {
    let r = auroc_ratio(id_scores, ood_scores)?;
    Ok(*r.numer() as f64 / *r.denom() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        assert_eq!(auroc(&[0.1, 0.2], &[0.9, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 1.0], &[0.1, 0.2]).unwrap(), 0.0);
    }

    #[test]
    fn identical_multisets_give_half() {
        assert_eq!(auroc(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap(), 0.5);
    }

    #[test]
    fn interleaved_pairs() {
        assert_eq!(auroc_ratio(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), Ratio::new(3, 4));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(auroc::<f64>(&[], &[1.0]).is_err());
        assert!(auroc(&[1.0], &[f64::NAN]).is_err());
    }
}
