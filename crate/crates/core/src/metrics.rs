//! Scoring difference images and change maps against ground truth. The
//! positive class is "changed".

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Area under the ROC curve traced by thresholding `scores` at every distinct
/// value (`score >= t` means changed). Ties between a changed and an
/// unchanged pixel count one half.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::shape("scores and truth differ in size"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Undefined("AUC of NaN scores".into()));
    }
    let pos = truth.iter().filter(|&&t| t).count() as u128;
    let neg = truth.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined(
            "AUC needs both changed and unchanged pixels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // Walk thresholds from high to low; each tie group adds one trapezoid.
    // Twice the area, scaled by pos * neg, stays an exact integer.
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut twice_area = 0u128;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut gp, mut gn) = (0u128, 0u128);
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        twice_area += gn * (2 * tp + gp);
        tp += gp;
        fp += gn;
    }
    debug_assert_eq!((tp, fp), (pos, neg));
    Ok(twice_area as f64 / (2 * pos * neg) as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn new(mask: &[bool], truth: &[bool]) -> Result<Self> {
        if mask.len() != truth.len() {
            return Err(Error::shape(format!(
                "map has {} pixels, truth has {}",
                mask.len(),
                truth.len()
            )));
        }
        let mut c = Confusion::default();
        for (&m, &t) in mask.iter().zip(truth) {
            match (m, t) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn overall_accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// `2TP / (2TP + FP + FN)`; zero when nothing is changed in either map.
    pub fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }

    /// Cohen's kappa. When chance agreement is certain (both maps hold a
    /// single identical class) kappa is reported as zero.
    pub fn kappa(&self) -> f64 {
        let n = self.total() as f64;
        let po = self.overall_accuracy();
        let pred_pos = (self.tp + self.fp) as f64 / n;
        let true_pos = (self.tp + self.fn_) as f64 / n;
        let pe = pred_pos * true_pos + (1.0 - pred_pos) * (1.0 - true_pos);
        if pe >= 1.0 {
            0.0
        } else {
            (po - pe) / (1.0 - pe)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    /// Missing when no continuous image was evaluated.
    pub auc: Option<f64>,
    pub oa: f64,
    pub f1: f64,
    pub kappa: f64,
    pub confusion: Confusion,
}

pub fn binary_metrics(mask: &[bool], truth: &[bool]) -> Result<MetricsReport> {
    if mask.is_empty() {
        return Err(Error::shape("empty change map"));
    }
    let confusion = Confusion::new(mask, truth)?;
    Ok(MetricsReport {
        auc: None,
        oa: confusion.overall_accuracy(),
        f1: confusion.f1(),
        kappa: confusion.kappa(),
        confusion,
    })
}

/// Full report for a continuous image and its binary map.
pub fn evaluate(scores: Option<&[f64]>, mask: &[bool], truth: &[bool]) -> Result<MetricsReport> {
    let mut report = binary_metrics(mask, truth)?;
    if let Some(s) = scores {
        report.auc = Some(roc_auc(s, truth)?);
    }
    Ok(report)
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "auc,oa,f1,kappa,tp,tn,fp,fn";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        match self.auc {
            Some(a) => write!(s, "{a:.17}").unwrap(),
            None => s.push_str("NA"),
        }
        let c = &self.confusion;
        writeln!(
            s,
            ",{:.17},{:.17},{:.17},{},{},{},{}",
            self.oa, self.f1, self.kappa, c.tp, c.tn, c.fp, c.fn_
        )
        .unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_fixtures() {
        let d = [0.9, 0.8, 0.4, 0.1];
        let t = [true, false, true, false];
        assert_eq!(roc_auc(&d, &t).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.5; 4], &t).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.1, 0.8, 0.2], &t).unwrap(), 1.0);
        assert!(matches!(roc_auc(&d, &[true; 4]), Err(Error::Undefined(_))));
    }

    #[test]
    fn confusion_fixture() {
        let c = Confusion {
            tp: 40,
            tn: 40,
            fp: 10,
            fn_: 10,
        };
        assert!((c.overall_accuracy() - 0.8).abs() < 1e-12);
        assert!((c.f1() - 0.8).abs() < 1e-12);
        assert!((c.kappa() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_inverted_maps() {
        let truth = [true, true, false, false];
        let r = binary_metrics(&truth, &truth).unwrap();
        assert_eq!((r.oa, r.f1, r.kappa), (1.0, 1.0, 1.0));
        let inv = [false, false, true, true];
        let r = binary_metrics(&inv, &truth).unwrap();
        assert_eq!(r.kappa, -1.0);
        assert!(binary_metrics(&truth[..3], &truth).is_err());
    }

    #[test]
    fn single_class_agreement_is_not_perfect_kappa() {
        let r = binary_metrics(&[false; 5], &[false; 5]).unwrap();
        assert_eq!(r.oa, 1.0);
        assert_eq!(r.kappa, 0.0);
    }

    #[test]
    fn csv_row() {
        let r = evaluate(Some(&[0.9, 0.1]), &[true, false], &[true, false]).unwrap();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(MetricsReport::CSV_HEADER));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 8);
        assert_eq!(row[4..], ["1", "1", "0", "0"]);
    }
}
