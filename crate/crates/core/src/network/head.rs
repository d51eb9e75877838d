use crate::error::{Error, Result};

/// Numerically stable `ln softmax(logits)`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// `-ln softmax(logits)[class]`, never negative.
///
/// Evaluated as `softplus(logsumexp_{j != class}(z_j - z_class))` so a
/// confident prediction keeps its tiny score instead of rounding to 0:
/// `lse - z_class` cancels to exactly 0 once the margin passes about 37.
pub fn anomaly_score(logits: &[f64], class: usize) -> Result<f64> {
    if class >= logits.len() {
        return Err(Error::Lookup(format!(
            "class index {class} out of range for {} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite logits".into()));
    }
    let zc = logits[class];
    let rest = logits.iter().enumerate().filter(|&(j, _)| j != class).map(|(_, &z)| z - zc);
    let mx = rest.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let lse = mx + rest.map(|r| (r - mx).exp()).sum::<f64>().ln();
    let softplus = if lse > 0.0 { lse + (-lse).exp().ln_1p() } else { lse.exp().ln_1p() };
    Ok(softplus.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits_score_ln_c() {
        let s = anomaly_score(&[0.7; 41], 5).unwrap();
        assert!((s - 41f64.ln()).abs() < 1e-12);
        assert!((s - 3.7136).abs() < 1e-4);
    }

    #[test]
    fn dominant_target_scores_near_zero() {
        let mut l = vec![0.0; 5];
        l[2] = 800.0;
        assert_eq!(anomaly_score(&l, 2).unwrap(), 0.0);
        l[2] = 30.0;
        assert!(anomaly_score(&l, 2).unwrap() < 1e-12);
    }

    #[test]
    fn confident_scores_keep_resolution() {
        // 4 rivals each 60 below the target: score = ln(1 + 4 e^-60)
        let a = anomaly_score(&[60.0, 0.0, 0.0, 0.0, 0.0], 0).unwrap();
        let b = anomaly_score(&[61.0, 0.0, 0.0, 0.0, 0.0], 0).unwrap();
        assert!(((a / (4.0 * (-60f64).exp())) - 1.0).abs() < 1e-12, "{a}");
        assert!(b < a && b > 0.0);
    }

    #[test]
    fn agrees_with_log_softmax() {
        let l = [1.5, -0.25, 3.0, 0.0];
        for c in 0..4 {
            let d = anomaly_score(&l, c).unwrap() + log_softmax(&l)[c];
            assert!(d.abs() < 1e-14, "{d}");
        }
        assert_eq!(anomaly_score(&[2.0], 0).unwrap(), 0.0);
    }

    #[test]
    fn unknown_class_is_lookup_error() {
        assert!(matches!(anomaly_score(&[0.0; 3], 3), Err(Error::Lookup(_))));
    }

    proptest! {
        #[test]
        fn shift_invariant(logits in prop::collection::vec(-30.0f64..30.0, 1..50), shift in -100.0f64..100.0, pick in any::<prop::sample::Index>()) {
            let c = pick.index(logits.len());
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let a = anomaly_score(&logits, c).unwrap();
            let b = anomaly_score(&shifted, c).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}
