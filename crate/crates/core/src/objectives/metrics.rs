use std::fmt::Write as _;

use super::MetricError;
use crate::data::{Diagnosis, Volume};

const K: usize = 3;

fn check(preds: &[usize], labels: &[usize]) -> Result<(), MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            left: preds.len(),
            right: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(&c) = preds.iter().chain(labels).find(|&&c| c >= K) {
        return Err(MetricError::ClassOutOfRange(c));
    }
    Ok(())
}

/// `counts[true][predicted]`.
pub fn confusion(preds: &[usize], labels: &[usize]) -> Result<[[usize; K]; K], MetricError> {
    check(preds, labels)?;
    let mut m = [[0; K]; K];
    for (&p, &l) in preds.iter().zip(labels) {
        m[l][p] += 1;
    }
    Ok(m)
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64, MetricError> {
    check(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Per-class F1; a class with no true positives (including one that is never
/// predicted nor present) scores 0.
pub fn per_class_f1(preds: &[usize], labels: &[usize]) -> Result<[f64; K], MetricError> {
    let m = confusion(preds, labels)?;
    Ok(std::array::from_fn(|c| {
        let tp = m[c][c];
        let predicted: usize = (0..K).map(|t| m[t][c]).sum();
        let actual: usize = m[c].iter().sum();
        if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (predicted + actual) as f64
        }
    }))
}

/// Unweighted mean of the per-class F1 scores.
pub fn f1_macro(preds: &[usize], labels: &[usize]) -> Result<f64, MetricError> {
    Ok(per_class_f1(preds, labels)?.iter().sum::<f64>() / K as f64)
}

/// One-vs-rest ROC AUC per class from the Mann–Whitney rank statistic (tied
/// scores share their mean rank). `None` when a class has no positive or no
/// negative example.
pub fn auc_ovr(scores: &[Vec<f64>], labels: &[usize]) -> Result<[Option<f64>; K], MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some((row, s)) = scores.iter().enumerate().find(|(_, s)| s.len() != K) {
        return Err(MetricError::ScoreWidth { row, len: s.len() });
    }
    if let Some(&c) = labels.iter().find(|&&c| c >= K) {
        return Err(MetricError::ClassOutOfRange(c));
    }
    let n = labels.len();
    Ok(std::array::from_fn(|c| {
        let pos = labels.iter().filter(|&&l| l == c).count();
        let neg = n - pos;
        if pos == 0 || neg == 0 {
            return None;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[a][c].total_cmp(&scores[b][c]));
        let mut rank_sum = 0.0;
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && scores[order[j + 1]][c] == scores[order[i]][c] {
                j += 1;
            }
            // 1-based ranks i+1 ..= j+1 share their mean.
            let mid = (i + j) as f64 / 2.0 + 1.0;
            rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] == c).count() as f64;
            i = j + 1;
        }
        let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
        Some(u / (pos * neg) as f64)
    }))
}

/// Mean absolute voxel difference, accumulated in `f64`.
pub fn mae_volumes(pred: &Volume, target: &Volume) -> Result<f64, MetricError> {
    if pred.dims() != target.dims() {
        return Err(MetricError::ShapeMismatch {
            left: pred.dims(),
            right: target.dims(),
        });
    }
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .sum();
    Ok(total / pred.len() as f64)
}

/// Classification and synthesis quality over one evaluation set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    pub f1_macro: f64,
    /// Indexed by class (CN, MCI, AD); `None` when undefined.
    pub auc: [Option<f64>; K],
    /// Mean of per-volume MAE over paired samples; `None` without any.
    pub mae: Option<f64>,
    pub paired: usize,
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; K]; K],
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

impl EvalReport {
    /// Builds a report from class probabilities, labels and per-volume MAEs.
    pub fn compute(
        probs: &[Vec<f64>],
        labels: &[usize],
        maes: &[f64],
    ) -> Result<Self, MetricError> {
        let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        Ok(Self {
            samples: labels.len(),
            accuracy: accuracy(&preds, labels)?,
            f1_macro: f1_macro(&preds, labels)?,
            auc: auc_ovr(probs, labels)?,
            mae: (!maes.is_empty()).then(|| maes.iter().sum::<f64>() / maes.len() as f64),
            paired: maes.len(),
            confusion: confusion(&preds, labels)?,
        })
    }

    pub fn auc_of(&self, d: Diagnosis) -> Option<f64> {
        self.auc[d.index()]
    }

    /// `(key, value)` pairs in a stable order; undefined values print as
    /// `undefined`.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut v = vec![
            ("samples".to_string(), self.samples.to_string()),
            ("accuracy".to_string(), self.accuracy.to_string()),
            ("f1_macro".to_string(), self.f1_macro.to_string()),
            ("auc_cn".to_string(), fmt_opt(self.auc_of(Diagnosis::Cn))),
            ("auc_ad".to_string(), fmt_opt(self.auc_of(Diagnosis::Ad))),
            ("auc_mci".to_string(), fmt_opt(self.auc_of(Diagnosis::Mci))),
            ("mae".to_string(), fmt_opt(self.mae)),
            ("paired".to_string(), self.paired.to_string()),
        ];
        for t in Diagnosis::ALL {
            for p in Diagnosis::ALL {
                v.push((
                    format!(
                        "confusion_{}_{}",
                        t.as_str().to_lowercase(),
                        p.as_str().to_lowercase()
                    ),
                    self.confusion[t.index()][p.index()].to_string(),
                ));
            }
        }
        v
    }

    /// Inverse of [`entries`](Self::entries). Unknown keys are rejected.
    pub fn from_entries<'a>(
        entries: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, String> {
        let mut r = EvalReport {
            samples: 0,
            accuracy: 0.0,
            f1_macro: 0.0,
            auc: [None; K],
            mae: None,
            paired: 0,
            confusion: [[0; K]; K],
        };
        fn num<F: std::str::FromStr>(k: &str, v: &str) -> Result<F, String> {
            v.trim()
                .parse()
                .map_err(|_| format!("{k}: cannot parse {v:?}"))
        }
        fn opt(k: &str, v: &str) -> Result<Option<f64>, String> {
            if v.trim() == "undefined" {
                Ok(None)
            } else {
                num(k, v).map(Some)
            }
        }
        for (k, v) in entries {
            match k {
                "samples" => r.samples = num(k, v)?,
                "accuracy" => r.accuracy = num(k, v)?,
                "f1_macro" => r.f1_macro = num(k, v)?,
                "auc_cn" => r.auc[Diagnosis::Cn.index()] = opt(k, v)?,
                "auc_mci" => r.auc[Diagnosis::Mci.index()] = opt(k, v)?,
                "auc_ad" => r.auc[Diagnosis::Ad.index()] = opt(k, v)?,
                "mae" => r.mae = opt(k, v)?,
                "paired" => r.paired = num(k, v)?,
                _ => {
                    let cell = k.strip_prefix("confusion_").and_then(|rest| {
                        let (t, p) = rest.split_once('_')?;
                        let t: Diagnosis = t.to_uppercase().parse().ok()?;
                        let p: Diagnosis = p.to_uppercase().parse().ok()?;
                        Some((t.index(), p.index()))
                    });
                    match cell {
                        Some((t, p)) => r.confusion[t][p] = num(k, v)?,
                        None => return Err(format!("unknown report key {k:?}")),
                    }
                }
            }
        }
        Ok(r)
    }

    /// Flat `key = value` text.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Two-column CSV, one row per metric.
    pub fn to_table(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        // labels [CN, CN, AD, MCI], preds [CN, AD, AD, MCI]
        let labels = [0, 0, 2, 1];
        let preds = [0, 2, 2, 1];
        assert_eq!(accuracy(&preds, &labels).unwrap(), 0.75);
        let f1 = per_class_f1(&preds, &labels).unwrap();
        assert!((f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1[1], 1.0);
        assert!((f1[2] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f1_macro(&preds, &labels).unwrap() - 7.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn constant_prediction_on_balanced_labels() {
        let labels = [0, 0, 0, 1, 1, 1, 2, 2, 2];
        let preds = [0; 9];
        assert!((accuracy(&preds, &labels).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((f1_macro(&preds, &labels).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn empty_and_single_class_inputs() {
        assert_eq!(accuracy(&[], &[]), Err(MetricError::Empty));
        let auc = auc_ovr(&[vec![0.2, 0.3, 0.5], vec![0.1, 0.1, 0.8]], &[2, 2]).unwrap();
        assert_eq!(auc, [None, None, None]);
    }

    #[test]
    fn auc_extremes() {
        let scores = vec![
            vec![0.9, 0.05, 0.05],
            vec![0.8, 0.1, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.2, 0.1, 0.7],
        ];
        let labels = [0, 0, 1, 2];
        assert_eq!(auc_ovr(&scores, &labels).unwrap()[0], Some(1.0));
        let flat = vec![vec![1.0 / 3.0; 3]; 4];
        assert_eq!(auc_ovr(&flat, &labels).unwrap(), [Some(0.5); 3]);
    }

    #[test]
    fn report_serializes_undefined_auc() {
        let r =
            EvalReport::compute(&[vec![0.7, 0.2, 0.1], vec![0.6, 0.3, 0.1]], &[0, 0], &[]).unwrap();
        let kv = r.to_key_value();
        assert!(kv.contains("auc_cn = undefined"));
        assert!(kv.contains("mae = undefined"));
        assert!(r.to_table().starts_with("metric,value\nsamples,2\n"));
    }

    #[test]
    fn report_entries_round_trip() {
        let probs = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.3, 0.6],
            vec![0.2, 0.5, 0.3],
        ];
        let r = EvalReport::compute(&probs, &[0, 2, 2], &[0.125, 0.0625]).unwrap();
        let e = r.entries();
        let back =
            EvalReport::from_entries(e.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, r);
        assert!(EvalReport::from_entries([("bogus", "1")]).is_err());
    }
}
