use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub micro_p: f64,
    pub micro_r: f64,
    pub micro_f1: f64,
    /// Keyed by relation label; the none label has no row when excluded.
    pub per_relation: BTreeMap<String, Counts>,
    pub n_instances: usize,
    pub config_fingerprint: String,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Micro precision, recall and F1. With `none_label`, predictions and gold
/// labels equal to it are not positives; without it, F1 equals accuracy.
pub fn micro_prf<S: AsRef<str>>(gold: &[S], pred: &[S], none_label: Option<&str>) -> Result<EvalResult, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let is_pos = |l: &str| none_label != Some(l);
    let (mut tp, mut pred_pos, mut gold_pos) = (0usize, 0usize, 0usize);
    let mut per: BTreeMap<String, Counts> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        if is_pos(p) {
            pred_pos += 1;
        }
        if is_pos(g) {
            gold_pos += 1;
        }
        if g == p {
            if is_pos(g) {
                tp += 1;
                per.entry(g.to_string()).or_default().tp += 1;
            }
        } else {
            if is_pos(p) {
                per.entry(p.to_string()).or_default().fp += 1;
            }
            if is_pos(g) {
                per.entry(g.to_string()).or_default().fn_ += 1;
            }
        }
    }
    Ok(EvalResult {
        micro_p: ratio(tp, pred_pos),
        micro_r: ratio(tp, gold_pos),
        micro_f1: ratio(2 * tp, pred_pos + gold_pos),
        per_relation: per,
        n_instances: gold.len(),
        config_fingerprint: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_example() {
        let gold = ["r1", "r1", "r2", "none"];
        let pred = ["r1", "r2", "r2", "r1"];
        let r = micro_prf(&gold, &pred, Some("none")).unwrap();
        assert!((r.micro_p - 0.5).abs() < 1e-12);
        assert!((r.micro_r - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.micro_f1 - 0.5714).abs() < 1e-4);
        assert_eq!(r.per_relation["r1"], Counts { tp: 1, fp: 1, fn_: 1 });
        assert_eq!(r.per_relation["r2"], Counts { tp: 1, fp: 1, fn_: 0 });
    }

    #[test]
    fn degenerate_predictors() {
        let gold = ["a", "b", "none"];
        assert_eq!(micro_prf(&gold, &gold, Some("none")).unwrap().micro_f1, 1.0);
        let all_none = ["none"; 3];
        assert_eq!(micro_prf(&gold, &all_none, Some("none")).unwrap().micro_f1, 0.0);
        assert!(matches!(
            micro_prf(&gold[..2], &gold, None),
            Err(EvalError::LengthMismatch { .. })
        ));
        let empty: [&str; 0] = [];
        assert_eq!(micro_prf(&empty, &empty, None).unwrap().micro_f1, 0.0);
    }

    fn labels() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (1usize..40).prop_flat_map(|n| (prop::collection::vec(0u8..4, n), prop::collection::vec(0u8..4, n)))
    }

    proptest! {
        #[test]
        fn without_none_label_f1_is_accuracy((g, p) in labels()) {
            let gs: Vec<String> = g.iter().map(|x| x.to_string()).collect();
            let ps: Vec<String> = p.iter().map(|x| x.to_string()).collect();
            let acc = g.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / g.len() as f64;
            prop_assert_eq!(micro_prf(&gs, &ps, None).unwrap().micro_f1, acc);
        }

        #[test]
        fn joint_permutation_invariance((g, p) in labels(), rot in 0usize..40) {
            let gs: Vec<String> = g.iter().map(|x| x.to_string()).collect();
            let ps: Vec<String> = p.iter().map(|x| x.to_string()).collect();
            let k = rot % gs.len();
            let (mut g2, mut p2) = (gs.clone(), ps.clone());
            g2.rotate_left(k);
            p2.rotate_left(k);
            g2.reverse();
            p2.reverse();
            prop_assert_eq!(micro_prf(&gs, &ps, Some("0")).unwrap(), micro_prf(&g2, &p2, Some("0")).unwrap());
        }
    }
}
