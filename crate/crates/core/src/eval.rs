//! Ranking and recovery metrics.

use ndarray::{ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParameters;

/// Indices of the `k` largest scores; ties go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Fraction of the `k` highest-scored labels that are relevant.
pub fn precision_at_k(scores: &[f64], truth: &[u8], k: usize) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::shape("precision@k truth", scores.len(), truth.len()));
    }
    if k == 0 || k > scores.len() {
        return Err(Error::Input(format!(
            "k = {k} outside 1..={} for precision@k",
            scores.len()
        )));
    }
    let hits = top_k(scores, k).into_iter().filter(|&l| truth[l] != 0).count();
    Ok(hits as f64 / k as f64)
}

/// Mean P@k over rows, one value per entry of `ks`.
pub fn mean_precision_at_k(scores: ArrayView2<f64>, truth: ArrayView2<u8>, ks: &[usize]) -> Result<Vec<f64>> {
    if scores.dim() != truth.dim() {
        return Err(Error::shape("precision@k truth rows", scores.nrows(), truth.nrows()));
    }
    if scores.nrows() == 0 {
        return Err(Error::Input("no rows to evaluate".into()));
    }
    let mut sums = vec![0.0; ks.len()];
    for (s, t) in scores.rows().into_iter().zip(truth.rows()) {
        let s = s.to_vec();
        let t = t.to_vec();
        for (sum, &k) in sums.iter_mut().zip(ks) {
            *sum += precision_at_k(&s, &t, k)?;
        }
    }
    Ok(sums.into_iter().map(|s| s / scores.nrows() as f64).collect())
}

/// Mean P@k of a model over a labelled test set.
pub fn evaluate_model(
    params: &ModelParameters,
    features: ArrayView2<f64>,
    truth: ArrayView2<u8>,
    ks: &[usize],
) -> Result<Vec<f64>> {
    let scores = params.logits_batch(features)?;
    mean_precision_at_k(scores.view(), truth, ks)
}

/// Micro-averaged `1 - F1` of binary assignments against the truth over the
/// entries where `unknown` is set, with label 1 as the positive class.
pub fn recover_f1_loss(
    pseudo: ArrayView2<f64>,
    truth: ArrayView2<u8>,
    unknown: ArrayView2<bool>,
) -> Result<f64> {
    if pseudo.dim() != truth.dim() || pseudo.dim() != unknown.dim() {
        return Err(Error::shape("recover F1 operands", pseudo.len(), truth.len().min(unknown.len())));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    let mut bad = false;
    Zip::from(&pseudo).and(&truth).and(&unknown).for_each(|&p, &t, &u| {
        if !u {
            return;
        }
        let p = if p == 1.0 {
            true
        } else if p == 0.0 {
            false
        } else {
            bad = true;
            return;
        };
        match (p, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    });
    if bad {
        return Err(Error::Input("pseudo-labels on unknown entries must be 0 or 1".into()));
    }
    Ok(1.0 - f1_from_counts(tp, fp, fneg))
}

fn f1_from_counts(tp: usize, fp: usize, fneg: usize) -> f64 {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// F1-loss of predicting 1 everywhere when a fraction `positive_rate` is relevant.
pub fn all_ones_f1_loss(positive_rate: f64) -> f64 {
    1.0 - 2.0 * positive_rate / (positive_rate + 1.0)
}

/// F1-loss of fair-coin assignments, from expected counts
/// (precision `p`, recall 1/2).
pub fn coin_flip_f1_loss(positive_rate: f64) -> f64 {
    1.0 - positive_rate / (positive_rate + 0.5)
}

/// Metric value as a function of the number of labels queried.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProgressionCurve {
    points: Vec<(usize, f64)>,
}

impl ProgressionCurve {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<(usize, f64)>) -> Result<Self> {
        let mut curve = Self::new();
        for (x, y) in points {
            curve.push(x, y)?;
        }
        Ok(curve)
    }

    /// Appends a point; queries must strictly increase and values lie in `[0, 1]`.
    pub fn push(&mut self, labels_queried: usize, value: f64) -> Result<()> {
        if let Some(&(last, _)) = self.points.last() {
            if labels_queried <= last {
                return Err(Error::Input(format!(
                    "labels queried must increase ({labels_queried} after {last})"
                )));
            }
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Input(format!("curve value {value} outside [0, 1]")));
        }
        self.points.push((labels_queried, value));
        Ok(())
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Trapezoidal area under the curve divided by the span of the query axis.
pub fn curve_auc(curve: &ProgressionCurve) -> Result<f64> {
    let pts = curve.points();
    if pts.len() < 2 {
        return Err(Error::Input(format!("AUC needs at least 2 points, got {}", pts.len())));
    }
    let area: f64 = pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) as f64 * (w[0].1 + w[1].1) / 2.0)
        .sum();
    let span = (pts[pts.len() - 1].0 - pts[0].0) as f64;
    Ok(area / span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn precision_examples() {
        assert_eq!(precision_at_k(&[0.9, 0.2, 0.7], &[1, 0, 1], 2).unwrap(), 1.0);
        assert_eq!(precision_at_k(&[0.3, 0.2, 0.1], &[0, 1, 1], 2).unwrap(), 0.5);
        for k in 1..=3 {
            assert_eq!(precision_at_k(&[0.3, 0.2, 0.1], &[0, 0, 0], k).unwrap(), 0.0);
        }
        assert!(precision_at_k(&[0.3], &[1], 0).is_err());
        assert!(precision_at_k(&[0.3], &[1], 2).is_err());
    }

    #[test]
    fn ties_prefer_lower_index() {
        assert_eq!(top_k(&[0.5, 0.7, 0.5, 0.7], 3), vec![1, 3, 0]);
        assert_eq!(precision_at_k(&[0.5, 0.5], &[0, 1], 1).unwrap(), 0.0);
    }

    #[test]
    fn recover_examples() {
        let truth = array![[1u8, 0], [0, 1]];
        let unknown = array![[true, true], [true, true]];
        let exact = truth.mapv(f64::from);
        assert_eq!(recover_f1_loss(exact.view(), truth.view(), unknown.view()).unwrap(), 0.0);
        let zeros = array![[0.0, 0.0], [0.0, 0.0]];
        assert_eq!(recover_f1_loss(zeros.view(), truth.view(), unknown.view()).unwrap(), 1.0);
        let bad = array![[0.5, 0.0], [0.0, 0.0]];
        assert!(recover_f1_loss(bad.view(), truth.view(), unknown.view()).is_err());
    }

    #[test]
    fn all_ones_recover_matches_closed_form() {
        let truth = array![[1u8, 0, 0, 0], [0, 0, 0, 1]];
        let unknown = ndarray::Array2::from_elem((2, 4), true);
        let ones = ndarray::Array2::ones((2, 4));
        let loss = recover_f1_loss(ones.view(), truth.view(), unknown.view()).unwrap();
        assert!((loss - 0.6).abs() < 1e-12);
        assert!((all_ones_f1_loss(0.25) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn masked_entries_are_ignored() {
        let truth = array![[1u8, 1]];
        let pseudo = array![[1.0, 0.3]];
        let unknown = array![[true, false]];
        assert_eq!(recover_f1_loss(pseudo.view(), truth.view(), unknown.view()).unwrap(), 0.0);
    }

    #[test]
    fn auc_examples() {
        let c = ProgressionCurve::from_points(vec![(0, 0.3), (5, 0.3), (9, 0.3)]).unwrap();
        assert!((curve_auc(&c).unwrap() - 0.3).abs() < 1e-12);
        let c = ProgressionCurve::from_points(vec![(0, 0.0), (50, 1.0)]).unwrap();
        assert!((curve_auc(&c).unwrap() - 0.5).abs() < 1e-12);
        let c = ProgressionCurve::from_points(vec![(0, 0.2), (1, 0.4), (3, 0.4)]).unwrap();
        assert!((curve_auc(&c).unwrap() - 1.1 / 3.0).abs() < 1e-12);
        let c = ProgressionCurve::from_points(vec![(0, 0.2)]).unwrap();
        assert!(curve_auc(&c).is_err());
    }

    #[test]
    fn curve_rejects_non_increasing_or_out_of_range() {
        let mut c = ProgressionCurve::new();
        c.push(0, 0.1).unwrap();
        assert!(c.push(0, 0.2).is_err());
        assert!(c.push(1, 1.2).is_err());
    }
}
