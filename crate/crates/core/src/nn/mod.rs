//! Dense networks, Adam, normalizations, checkpoints and gradient checking.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod mlp;

pub use adam::Adam;
pub use mlp::{Activation, ForwardCache, Mlp};

use crate::error::{Error, Result};

/// Filters strictly positive logits by a binary mask and L1-normalizes:
/// `out_j = p_j m_j / sum_k p_k m_k`.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::contract(format!(
            "{} logits but mask of length {}",
            logits.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::contract("mask has no valid entry"));
    }
    if let Some(bad) = logits.iter().find(|&&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::contract(format!("logit {bad} is not strictly positive")));
    }
    let total: f64 = logits.iter().zip(mask).filter(|(_, &m)| m).map(|(p, _)| p).sum();
    Ok(logits
        .iter()
        .zip(mask)
        .map(|(&p, &m)| if m { p / total } else { 0.0 })
        .collect())
}

/// Numerically stable exponential softmax.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_logits_give_uniform_over_valid() {
        let p = masked_softmax(&[2.0; 5], &[true, false, true, true, false]).unwrap();
        assert_eq!(p, vec![1.0 / 3.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]);
    }

    #[test]
    fn full_mask_is_plain_l1_normalization() {
        let p = masked_softmax(&[1.0, 3.0], &[true, true]).unwrap();
        assert_eq!(p, vec![0.25, 0.75]);
    }

    #[test]
    fn hand_computed_masked_example() {
        let p = masked_softmax(&[2.0, 1.0, 1.0], &[true, false, true]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p[1], 0.0);
        assert!((p[2] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_is_a_contract_error() {
        assert!(masked_softmax(&[1.0, 1.0], &[false, false]).is_err());
        assert!(masked_softmax(&[0.0, 1.0], &[true, true]).is_err());
    }

    #[test]
    fn softmax_spot_value() {
        let s = softmax(&[2.0, 1.0, 0.0]);
        let z = 1.0 + (-1.0f64).exp() + (-2.0f64).exp();
        assert!((s[0] - 1.0 / z).abs() < 1e-15);
        assert!((s[0] - 0.6652).abs() < 5e-5 && (s[1] - 0.2447).abs() < 5e-5 && (s[2] - 0.0900).abs() < 5e-5);
    }

    proptest! {
        #[test]
        fn masked_softmax_is_distribution_on_mask(
            entries in prop::collection::vec((1.0f64..50.0, any::<bool>()), 1..12),
        ) {
            let logits: Vec<f64> = entries.iter().map(|e| e.0).collect();
            let mut mask: Vec<bool> = entries.iter().map(|e| e.1).collect();
            mask[0] = true;
            let p = masked_softmax(&logits, &mask).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for (pj, mj) in p.iter().zip(&mask) {
                if *mj { prop_assert!(*pj > 0.0); } else { prop_assert_eq!(*pj, 0.0); }
            }
        }

        #[test]
        fn relu_plus_one_output_at_least_one(xs in prop::collection::vec(-1e6f64..1e6, 1..64)) {
            for x in xs {
                prop_assert!(Activation::ReluPlusOne.apply(x) >= 1.0);
            }
        }
    }
}
