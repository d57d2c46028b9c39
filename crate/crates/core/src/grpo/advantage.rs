use crate::error::{Error, Result};

/// Population mean and standard deviation, two-pass.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Group-relative advantages: rewards standardized within the group.
///
/// Groups whose population std falls below `std_guard` get all-zero
/// advantages; such groups carry no learning signal.
pub fn compute_advantages(rewards: &[f64], std_guard: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::DegenerateGroup(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NumericalBlowup);
    }
    let (mean, std) = mean_std(rewards);
    if std < std_guard {
        return Ok(vec![0.0; rewards.len()]);
    }
    let scale = std.max(std_guard);
    Ok(rewards.iter().map(|r| (r - mean) / scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_group() {
        assert_eq!(compute_advantages(&[1.0, 0.0], 1e-6).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn zero_variance_guard() {
        assert_eq!(compute_advantages(&[1.0, 1.0, 1.0], 1e-6).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn balanced_binary_group() {
        assert_eq!(
            compute_advantages(&[1.0, 1.0, 0.0, 0.0], 1e-6).unwrap(),
            vec![1.0, 1.0, -1.0, -1.0]
        );
    }

    #[test]
    fn degenerate_group() {
        let err = compute_advantages(&[1.0], 1e-6).unwrap_err();
        assert!(err.to_string().starts_with("degenerate group"));
    }

    proptest! {
        #[test]
        fn normalized_when_spread(rewards in prop::collection::vec(0.0f64..1.0, 2..64)) {
            let (_, std) = mean_std(&rewards);
            prop_assume!(std > 1e-6);
            let a = compute_advantages(&rewards, 1e-6).unwrap();
            let (m, s) = mean_std(&a);
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn shift_invariant(rewards in prop::collection::vec(0.0f64..1.0, 2..32), c in -5.0f64..5.0) {
            let (_, std) = mean_std(&rewards);
            prop_assume!(std > 1e-3);
            let a = compute_advantages(&rewards, 1e-6).unwrap();
            let shifted: Vec<f64> = rewards.iter().map(|r| r + c).collect();
            let b = compute_advantages(&shifted, 1e-6).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn permutation_follows_rewards(rewards in prop::collection::vec(0.0f64..1.0, 2..16)) {
            let a = compute_advantages(&rewards, 1e-6).unwrap();
            let mut rev = rewards.clone();
            rev.reverse();
            let mut b = compute_advantages(&rev, 1e-6).unwrap();
            b.reverse();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
