//! ROC-based detection metrics and their per-machine aggregation.
//!
//! Both AUC and partial AUC are computed from the same tie-grouped ROC
//! staircase, accumulated exactly in units of half a (positive, negative)
//! pair and rounded once, so the full-range partial AUC is bit-identical to
//! the AUC.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::Ratio;
use num_traits::{Float, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::data::{Condition, MachineKey};
use crate::error::{Error, Result};

/// Fixed column order of the per-type summary; other types follow alphabetically.
pub const TYPE_ORDER: [&str; 6] = ["fan", "pump", "slider", "valve", "ToyCar", "ToyConveyor"];

/// `(negatives, positives)` per distinct score, highest score first.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Result<(Vec<(u64, u64)>, u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Input(format!("score {i} is NaN")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last = None;
    for i in order {
        if last != Some(scores[i]) {
            groups.push((0, 0));
            last = Some(scores[i]);
        }
        let g = groups.last_mut().expect("pushed above");
        if labels[i] {
            g.1 += 1;
        } else {
            g.0 += 1;
        }
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::MetricUndefined(format!(
            "need at least one anomalous and one normal clip, got {pos} and {neg}"
        )));
    }
    Ok((groups, pos, neg))
}

/// Mann-Whitney AUC: the fraction of (anomalous, normal) pairs where the
/// anomalous clip scores higher, ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    pauc(scores, labels, 1.0)
}

/// Area under the ROC curve for false-positive rates in `[0, p]`, divided
/// by `p`. The curve is linear between tie groups and interpolated at `p`.
/// The area is computed exactly, treating `p` as the rational it represents,
/// and rounded once to the nearest `f64`.
pub fn pauc(scores: &[f64], labels: &[bool], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("partial AUC range must lie in (0, 1], got {p}")));
    }
    let (groups, pos, neg) = tie_groups(scores, labels)?;
    // p = m / 2^e exactly; the cut-off on the x axis in negative-count
    // units is then m * neg / 2^e
    let (mut m, exp, _) = p.integer_decode();
    let mut e = (-exp) as u32;
    let tz = m.trailing_zeros().min(e);
    m >>= tz;
    e -= tz;
    let limit_num = m as u128 * neg as u128;
    let whole_limit = if e >= 128 { 0 } else { (limit_num >> e) as u64 };
    // doubled area of the whole groups left of the cut-off, in cells
    let mut whole: u128 = 0;
    let (mut fp, mut tp) = (0u64, 0u64);
    let mut cut = None;
    for (n, q) in groups {
        if fp + n > whole_limit {
            cut = Some((n, q));
            break;
        }
        whole += n as u128 * (2 * tp + q) as u128;
        fp += n;
        tp += q;
    }
    let scale = BigInt::from(2 * pos as u128 * neg as u128) * m;
    let (numer, denom) = match cut {
        // the cut-off falls inside a group of n negatives and q positives,
        // at a width w = a / 2^e past fp
        Some((n, q)) if BigInt::from(limit_num) > BigInt::from(fp) << e => {
            let a = BigInt::from(limit_num) - (BigInt::from(fp) << e);
            let height = (BigInt::from(2 * tp as u128 * n as u128) << e) + &a * q;
            let numer = (BigInt::from(whole * n as u128) << (2 * e)) + a * height;
            (numer, scale * n << e)
        }
        _ => {
            if e == 0 && whole < 1 << 53 && 2 * pos as u128 * neg as u128 * (m as u128) < 1 << 53 {
                // p = 1: one correctly rounded division
                return Ok(whole as f64 / (2 * pos as u128 * neg as u128 * m as u128) as f64);
            }
            (BigInt::from(whole) << e, scale)
        }
    };
    Ok(Ratio::new_raw(numer, denom).to_f64().expect("positive denominator"))
}

/// ROC vertices `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one per tie group.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (groups, pos, neg) = tie_groups(scores, labels)?;
    let mut out = vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0u64, 0u64);
    for (n, q) in groups {
        fp += n;
        tp += q;
        out.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineMetrics {
    pub machine_type: String,
    pub machine_id: u32,
    pub auc: f64,
    pub pauc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub machine_type: String,
    pub auc: f64,
    pub pauc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub p: f64,
    pub machines: Vec<MachineMetrics>,
    /// Mean over each type's machines, in summary column order.
    pub types: Vec<TypeMetrics>,
    /// Mean over types.
    pub average_auc: f64,
    pub average_pauc: f64,
}

fn type_rank(t: &str) -> (usize, String) {
    let known = TYPE_ORDER.iter().position(|k| k.eq_ignore_ascii_case(t));
    (known.unwrap_or(TYPE_ORDER.len()), t.to_string())
}

/// Per-type means over machines, then the mean over types.
pub fn aggregate(machines: Vec<MachineMetrics>, p: f64) -> Result<EvalReport> {
    if machines.is_empty() {
        return Err(Error::MetricUndefined("no machines to aggregate".into()));
    }
    let mut by_type: BTreeMap<(usize, String), Vec<&MachineMetrics>> = BTreeMap::new();
    for m in &machines {
        by_type.entry(type_rank(&m.machine_type)).or_default().push(m);
    }
    let types: Vec<TypeMetrics> = by_type
        .into_iter()
        .map(|((_, t), ms)| {
            let k = ms.len() as f64;
            TypeMetrics {
                machine_type: t,
                auc: ms.iter().map(|m| m.auc).sum::<f64>() / k,
                pauc: ms.iter().map(|m| m.pauc).sum::<f64>() / k,
            }
        })
        .collect();
    let k = types.len() as f64;
    Ok(EvalReport {
        p,
        average_auc: types.iter().map(|t| t.auc).sum::<f64>() / k,
        average_pauc: types.iter().map(|t| t.pauc).sum::<f64>() / k,
        types,
        machines,
    })
}

/// One scored test clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredClip {
    pub machine: MachineKey,
    pub condition: Condition,
    pub score: f64,
}

/// Metrics per machine over clips with known condition, then aggregated.
pub fn evaluate(clips: &[ScoredClip], p: f64) -> Result<EvalReport> {
    let mut groups: BTreeMap<&MachineKey, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for c in clips.iter().filter(|c| c.condition != Condition::Unknown) {
        let g = groups.entry(&c.machine).or_default();
        g.0.push(c.score);
        g.1.push(c.condition == Condition::Anomaly);
    }
    let machines = groups
        .into_iter()
        .map(|(key, (s, l))| {
            let ctx = |e: Error| match e {
                Error::MetricUndefined(m) => Error::MetricUndefined(format!("machine {key}: {m}")),
                other => other,
            };
            Ok(MachineMetrics {
                machine_type: key.machine_type.clone(),
                machine_id: key.machine_id,
                auc: auc(&s, &l).map_err(ctx)?,
                pauc: pauc(&s, &l, p).map_err(ctx)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(machines, p)
}

impl EvalReport {
    /// `machine_type,machine_id,auc,pauc`, one row per machine.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("machine_type,machine_id,auc,pauc\n");
        for m in &self.machines {
            s.push_str(&format!("{},{:02},{},{}\n", m.machine_type, m.machine_id, m.auc, m.pauc));
        }
        s
    }

    /// Per-type columns followed by `Average`, for AUC and pAUC rows.
    pub fn summary_json(&self, config: serde_json::Value) -> serde_json::Value {
        let mut columns: Vec<String> = self.types.iter().map(|t| t.machine_type.clone()).collect();
        columns.push("Average".into());
        let row = |f: &dyn Fn(&TypeMetrics) -> f64, avg: f64| {
            let mut m = serde_json::Map::new();
            for t in &self.types {
                m.insert(t.machine_type.clone(), f(t).into());
            }
            m.insert("Average".into(), avg.into());
            serde_json::Value::Object(m)
        };
        serde_json::json!({
            "columns": columns,
            "auc": row(&|t| t.auc, self.average_auc),
            "pauc": row(&|t| t.pauc, self.average_pauc),
            "p": self.p,
            "machines": self.machines,
            "config": config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use num_traits::Zero;
    use proptest::prelude::*;

    /// ROC area in `[0, p]` over `p` with every step in reduced rationals.
    fn rational_pauc(s: &[f64], l: &[bool], p: f64) -> f64 {
        let pos = l.iter().filter(|&&x| x).count();
        let neg = l.len() - pos;
        let p = BigRational::from_float(p).unwrap();
        let rate = |k: usize, of: usize| BigRational::new(k.into(), of.into());
        let mut ts = s.to_vec();
        ts.sort_by(|a, b| b.total_cmp(a));
        ts.dedup();
        let (mut x0, mut y0) = (BigRational::zero(), BigRational::zero());
        let mut area = BigRational::zero();
        for t in ts {
            let x1 = rate(s.iter().zip(l).filter(|(v, y)| !**y && **v >= t).count(), neg);
            let y1 = rate(s.iter().zip(l).filter(|(v, y)| **y && **v >= t).count(), pos);
            if x1 <= p {
                area += (&x1 - &x0) * (&y0 + &y1) / BigInt::from(2);
            } else {
                let y = &y0 + (&y1 - &y0) * (&p - &x0) / (&x1 - &x0);
                area += (&p - &x0) * (&y0 + y) / BigInt::from(2);
                break;
            }
            (x0, y0) = (x1, y1);
        }
        (area / p).to_f64().unwrap()
    }

    #[test]
    fn worked_examples() {
        assert_eq!(auc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
        assert_eq!(auc(&[2.0, 1.0, 3.0, 4.0], &[false, true, false, true]).unwrap(), 0.5);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        for p in [0.05, 0.1, 0.5, 1.0] {
            assert_eq!(pauc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true], p).unwrap(), 1.0);
        }
    }

    #[test]
    fn degenerate_sets_are_undefined() {
        assert!(matches!(auc(&[1.0, 2.0], &[true, true]), Err(Error::MetricUndefined(_))));
        assert!(matches!(auc(&[], &[]), Err(Error::MetricUndefined(_))));
        assert!(matches!(pauc(&[1.0, 2.0], &[true, false], 0.0), Err(Error::Config(_))));
        assert!(matches!(auc(&[1.0], &[true, false]), Err(Error::Input(_))));
    }

    #[test]
    fn partial_area_with_interpolation() {
        // 10 negatives; one positive above all, one below all
        let mut s: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let mut l = vec![false; 10];
        s.extend([100.0, -1.0]);
        l.extend([true, true]);
        // TPR is 0.5 from FPR 0 to 1: partial area over [0, 0.1] is 0.05
        let v = pauc(&s, &l, 0.1).unwrap();
        assert!((v - 0.5).abs() < 1e-15, "{v}");
        // a tie group straddling the limit is cut linearly
        let v = pauc(&[1.0, 1.0, 1.0, 1.0, 0.0], &[true, false, false, false, false], 0.25).unwrap();
        // segment from (0,0) to (0.75,1): at fpr 0.25, tpr = 1/3, area = 0.25 * 1/6
        assert!((v - (0.25 / 6.0) / 0.25).abs() < 1e-15, "{v}");
    }

    #[test]
    fn aggregation() {
        let m = |t: &str, id, a| MachineMetrics {
            machine_type: t.into(),
            machine_id: id,
            auc: a,
            pauc: a / 2.0,
        };
        let r = aggregate(vec![m("valve", 0, 0.8)], 0.1).unwrap();
        assert_eq!((r.average_auc, r.average_pauc), (0.8, 0.4));
        let r = aggregate(vec![m("pump", 0, 0.5), m("fan", 0, 1.0)], 0.1).unwrap();
        assert_eq!(r.average_auc, 0.75);
        assert_eq!(r.types[0].machine_type, "fan");
        // per-type mean first: fan {1.0, 0.0} -> 0.5, pump {0.9} -> 0.9
        let r = aggregate(vec![m("fan", 0, 1.0), m("fan", 1, 0.0), m("pump", 0, 0.9)], 0.1).unwrap();
        assert!((r.average_auc - 0.7).abs() < 1e-15);
        let j = r.summary_json(serde_json::json!({}));
        assert_eq!(j["columns"], serde_json::json!(["fan", "pump", "Average"]));
        assert_eq!(j["auc"]["fan"], 0.5);
        let csv = r.to_csv();
        assert!(csv.starts_with("machine_type,machine_id,auc,pauc\nfan,00,1,0.5\n"), "{csv}");
    }

    #[test]
    fn evaluate_skips_unknown_and_names_degenerate_machine() {
        let key = |id| MachineKey {
            machine_type: "fan".into(),
            machine_id: id,
        };
        let c = |id, cond, score| ScoredClip {
            machine: key(id),
            condition: cond,
            score,
        };
        let clips = [
            c(0, Condition::Normal, 0.1),
            c(0, Condition::Anomaly, 0.9),
            c(0, Condition::Unknown, 5.0),
        ];
        assert_eq!(evaluate(&clips, 0.1).unwrap().average_auc, 1.0);
        let bad = [c(0, Condition::Normal, 0.1), c(1, Condition::Normal, 0.2), c(0, Condition::Anomaly, 0.3)];
        let err = evaluate(&bad, 0.1).unwrap_err().to_string();
        assert!(err.contains("fan/01"), "{err}");
    }

    proptest! {
        #[test]
        fn auc_invariant_under_increasing_maps(
            pairs in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..60),
            a in 0.1f64..10.0, b in -10.0f64..10.0,
        ) {
            let (s, l): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let base = auc(&s, &l).unwrap();
            let exp: Vec<f64> = s.iter().map(|v| v.exp()).collect();
            let aff: Vec<f64> = s.iter().map(|v| a * v + b).collect();
            prop_assert_eq!(auc(&exp, &l).unwrap(), base);
            prop_assert_eq!(auc(&aff, &l).unwrap(), base);
        }

        #[test]
        fn pauc_bounds(
            pairs in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..60),
            p in 0.01f64..1.0,
        ) {
            let (s, l): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let v = pauc(&s, &l, p).unwrap();
            let a = auc(&s, &l).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            prop_assert!(v <= a / p + 1e-12);
            prop_assert_eq!(pauc(&s, &l, 1.0).unwrap().to_bits(), a.to_bits());
        }

        #[test]
        fn pauc_is_correctly_rounded(
            pairs in prop::collection::vec(((-8i32..8), any::<bool>()), 2..40),
            p in 0.001f64..=1.0,
        ) {
            let s: Vec<f64> = pairs.iter().map(|&(v, _)| v as f64).collect();
            let l: Vec<bool> = pairs.iter().map(|&(_, y)| y).collect();
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            prop_assert_eq!(pauc(&s, &l, p).unwrap().to_bits(), rational_pauc(&s, &l, p).to_bits());
        }
    }
}
