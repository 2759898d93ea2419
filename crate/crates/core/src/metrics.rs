//! Confusion matrices and the accuracy measures derived from them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `L × L` counts; rows are true classes, columns predictions (both `1..=L`
/// stored from index 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let classes = rows.len();
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::ShapeMismatch(
                "confusion matrix must be square".into(),
            ));
        }
        Ok(ConfusionMatrix {
            classes,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Count for one-based `(truth, predicted)`.
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[(truth - 1) * self.classes + predicted - 1]
    }

    pub fn row(&self, k: usize) -> &[u64] {
        &self.counts[k * self.classes..(k + 1) * self.classes]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes)
            .map(|k| self.counts[k * self.classes + k])
            .sum()
    }

    fn row_total(&self, k: usize) -> u64 {
        self.row(k).iter().sum()
    }

    fn col_total(&self, k: usize) -> u64 {
        (0..self.classes)
            .map(|r| self.counts[r * self.classes + k])
            .sum()
    }

    /// CSV with a header of class names, then one row of counts per true class.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = class_names.join(",");
        out.push('\n');
        for k in 0..self.classes {
            let row: Vec<String> = self.row(k).iter().map(u64::to_string).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Tallies one-based labels.
pub fn confusion(truth: &[u16], predicted: &[u16], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        for v in [t, p] {
            if v == 0 || v as usize > classes {
                return Err(Error::Validation(format!(
                    "label {v} outside 1..={classes}"
                )));
            }
        }
        cm.counts[(t as usize - 1) * classes + p as usize - 1] += 1;
    }
    Ok(cm)
}

pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Undefined(
            "overall accuracy of an empty confusion matrix".into(),
        ));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Per-class recall, `None` for classes with no true samples.
pub fn per_class_accuracy(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.classes)
        .map(|k| {
            let n = cm.row_total(k);
            (n > 0).then(|| cm.counts[k * cm.classes + k] as f64 / n as f64)
        })
        .collect()
}

/// Mean per-class accuracy. Classes without true samples are left out with a
/// warning.
pub fn average_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let per = per_class_accuracy(cm);
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Undefined(
            "average accuracy with no populated class".into(),
        ));
    }
    if present.len() < per.len() {
        let missing: Vec<usize> = per
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_none())
            .map(|(k, _)| k + 1)
            .collect();
        log::warn!(
            "classes {missing:?} have no true samples and are left out of the average accuracy"
        );
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Cohen's kappa, `(P_o − P_e) / (1 − P_e)`.
pub fn kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Undefined(
            "kappa of an empty confusion matrix".into(),
        ));
    }
    let n2 = total as u128 * total as u128;
    let chance: u128 = (0..cm.classes)
        .map(|k| cm.row_total(k) as u128 * cm.col_total(k) as u128)
        .sum();
    if chance == n2 {
        return Err(Error::Undefined(
            "kappa with chance agreement 1 (a single class in both margins)".into(),
        ));
    }
    let po = cm.trace() as f64 / total as f64;
    let pe = chance as f64 / n2 as f64;
    Ok((po - pe) / (1.0 - pe))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// `null` for classes without true samples.
    pub per_class: Vec<Option<f64>>,
    pub n_samples: u64,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(MetricsReport {
            oa: overall_accuracy(cm)?,
            aa: average_accuracy(cm)?,
            kappa: kappa(cm)?,
            per_class: per_class_accuracy(cm),
            n_samples: cm.total(),
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub oa: MeanStd,
    pub aa: MeanStd,
    pub kappa: MeanStd,
    pub runs: usize,
}

/// Mean and sample (`n − 1`) standard deviation over runs; one run has std 0.
pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<Aggregate> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("nothing to aggregate".into()));
    }
    let pick = |f: fn(&MetricsReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(Aggregate {
        oa: pick(|r| r.oa),
        aa: pick(|r| r.aa),
        kappa: pick(|r| r.kappa),
        runs: reports.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn two_class_example() {
        let m = cm(&[&[40, 10], &[5, 45]]);
        assert_abs_diff_eq!(overall_accuracy(&m).unwrap(), 0.85, epsilon = 1e-12);
        assert_abs_diff_eq!(average_accuracy(&m).unwrap(), 0.85, epsilon = 1e-12);
        assert_abs_diff_eq!(kappa(&m).unwrap(), 0.70, epsilon = 1e-12);
    }

    #[test]
    fn imbalance_separates_aa_from_oa() {
        let m = cm(&[&[9, 1], &[0, 90]]);
        assert_abs_diff_eq!(overall_accuracy(&m).unwrap(), 0.99, epsilon = 1e-12);
        assert_abs_diff_eq!(average_accuracy(&m).unwrap(), 0.95, epsilon = 1e-12);
    }

    #[test]
    fn tallies() {
        let m = confusion(&[1, 2, 2], &[1, 2, 2], 2).unwrap();
        assert_eq!(m, cm(&[&[1, 0], &[0, 2]]));
        let m = confusion(&[1, 1], &[2, 2], 2).unwrap();
        assert_eq!(m.get(1, 2), 2);
        assert_eq!(m.total(), 2);
        assert_eq!(overall_accuracy(&m).unwrap(), 0.0);
        assert!(confusion(&[1, 3], &[1, 1], 2).is_err());
        assert!(confusion(&[1], &[1, 1], 2).is_err());
    }

    #[test]
    fn perfect_and_degenerate() {
        let m = cm(&[&[3, 0, 0], &[0, 4, 0], &[0, 0, 1]]);
        assert_eq!(kappa(&m).unwrap(), 1.0);
        assert_eq!(average_accuracy(&m).unwrap(), 1.0);
        assert!(matches!(
            kappa(&cm(&[&[5, 0], &[0, 0]])),
            Err(Error::Undefined(_))
        ));
        assert!(overall_accuracy(&ConfusionMatrix::new(2)).is_err());
    }

    #[test]
    fn empty_rows_are_left_out_of_aa() {
        let m = cm(&[&[3, 1], &[0, 0]]);
        assert_abs_diff_eq!(average_accuracy(&m).unwrap(), 0.75, epsilon = 1e-12);
        assert_eq!(per_class_accuracy(&m)[1], None);
    }

    #[test]
    fn chance_agreement_is_zero_kappa() {
        // rows 30/70, columns 40/60, cells the product of margins
        let m = cm(&[&[12, 18], &[28, 42]]);
        assert_abs_diff_eq!(kappa(&m).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn aggregation() {
        let r = |oa: f64| MetricsReport {
            oa,
            aa: oa,
            kappa: oa,
            per_class: vec![],
            n_samples: 1,
        };
        let one = aggregate_runs(&[r(0.9)]).unwrap();
        assert_eq!(one.oa.std, 0.0);
        let two = aggregate_runs(&[r(0.9), r(1.0)]).unwrap();
        assert_abs_diff_eq!(two.oa.mean, 0.95, epsilon = 1e-12);
        assert_abs_diff_eq!(two.oa.std, 0.070710678118654, epsilon = 1e-12);
        assert_eq!(aggregate_runs(&[r(0.8), r(0.8)]).unwrap().kappa.std, 0.0);
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = cm(&[&[1, 2], &[3, 4]]);
        assert_eq!(m.to_csv(&["a".into(), "b".into()]), "a,b\n1,2\n3,4\n");
    }

    fn arb_cm() -> impl Strategy<Value = ConfusionMatrix> {
        (2usize..6).prop_flat_map(|l| {
            proptest::collection::vec(0u64..50, l * l).prop_map(move |c| ConfusionMatrix {
                classes: l,
                counts: c,
            })
        })
    }

    proptest! {
        #[test]
        fn oa_matches_per_sample_count(pairs in proptest::collection::vec((1u16..=5, 1u16..=5), 1..200)) {
            let (t, p): (Vec<u16>, Vec<u16>) = pairs.into_iter().unzip();
            let m = confusion(&t, &p, 5).unwrap();
            let hits = t.iter().zip(&p).filter(|(a, b)| a == b).count();
            prop_assert_eq!(overall_accuracy(&m).unwrap(), hits as f64 / t.len() as f64);
        }

        #[test]
        fn kappa_permutation_invariant(m in arb_cm(), shift in 1usize..5) {
            let l = m.classes;
            let perm: Vec<usize> = (0..l).map(|k| (k + shift) % l).collect();
            let mut p = ConfusionMatrix::new(l);
            for i in 0..l {
                for j in 0..l {
                    p.counts[perm[i] * l + perm[j]] = m.counts[i * l + j];
                }
            }
            match (kappa(&m), kappa(&p)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }

        #[test]
        fn scaling_counts_changes_nothing(m in arb_cm(), k in 2u64..7) {
            let scaled = ConfusionMatrix { classes: m.classes, counts: m.counts.iter().map(|c| c * k).collect() };
            prop_assume!(m.total() > 0);
            prop_assert_eq!(overall_accuracy(&m).unwrap(), overall_accuracy(&scaled).unwrap());
            if let (Ok(a), Ok(b)) = (average_accuracy(&m), average_accuracy(&scaled)) {
                prop_assert_eq!(a, b);
            }
            if let (Ok(a), Ok(b)) = (kappa(&m), kappa(&scaled)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
