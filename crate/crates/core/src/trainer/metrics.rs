use crate::error::{Error, Result};

/// Area under the ROC curve by the rank statistic; tied scores count one half.
///
/// Pairs are tallied in doubled integer units so the only rounding happens
/// in the final division.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::Metric(format!("label {bad} is not binary")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let (mut neg_below, mut pos_total, mut doubled) = (0u128, 0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        doubled += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        pos_total += pos;
        i = j;
    }
    if pos_total == 0 || neg_below == 0 {
        return Err(Error::Metric(
            "AUC needs both positive and negative labels".into(),
        ));
    }
    Ok(pair_fraction(doubled, pos_total, neg_below))
}

/// `doubled / (2 · pos · neg)`; shared with the brute-force oracle in tests.
pub fn pair_fraction(doubled: u128, pos: u128, neg: u128) -> f64 {
    doubled as f64 / (2 * pos * neg) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut doubled, mut pos, mut neg) = (0u128, 0u128, 0u128);
        for (i, &yi) in labels.iter().enumerate() {
            if yi == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            for (j, &yj) in labels.iter().enumerate() {
                if yi == 1 && yj == 0 {
                    doubled += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 2,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Less => 0,
                    };
                }
            }
        }
        pair_fraction(doubled, pos, neg)
    }

    #[test]
    fn worked_example() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    }

    #[test]
    fn separation_inversion_and_ties() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        let s = [0.3, 0.1, 0.7, 0.7, 0.2, 0.9];
        let y = [1, 0, 0, 1, 1, 0];
        let flipped: Vec<u8> = y.iter().map(|&v| 1 - v).collect();
        assert_eq!(auc(&s, &flipped).unwrap(), 1.0 - auc(&s, &y).unwrap());
        assert_eq!(auc(&[0.5; 6], &y).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_a_metric_error() {
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::Metric(_))));
        assert!(matches!(auc(&[0.1, 0.2], &[0, 0]), Err(Error::Metric(_))));
        assert!(matches!(auc(&[0.1], &[0, 1]), Err(Error::Dimension(_))));
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        while checked < 1000 {
            let n = rng.gen_range(2..=200);
            let levels = rng.gen_range(1..=20);
            let coarse = rng.gen_bool(0.5);
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    if coarse {
                        f64::from(rng.gen_range(0..levels)) / 10.0
                    } else {
                        rng.gen()
                    }
                })
                .collect();
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
            if !labels.contains(&0) || !labels.contains(&1) {
                continue;
            }
            assert_eq!(
                auc(&scores, &labels).unwrap(),
                brute_force(&scores, &labels)
            );
            checked += 1;
        }
    }
}
