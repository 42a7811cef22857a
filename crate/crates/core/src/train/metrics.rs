use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { counts: vec![vec![0; classes]; classes] }
    }

    pub fn from_predictions(labels: &[usize], preds: &[usize], classes: usize) -> Result<Self> {
        if labels.len() != preds.len() {
            return Err(Error::invalid("labels and predictions differ in length"));
        }
        let mut cm = Self::new(classes);
        for (&y, &p) in labels.iter().zip(preds) {
            if y >= classes || p >= classes {
                return Err(Error::invalid(format!("class index out of range ({y}, {p}) for {classes} classes")));
            }
            cm.counts[y][p] += 1;
        }
        Ok(cm)
    }

    /// Binary matrix with class 1 positive.
    pub fn binary(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        Self { counts: vec![vec![tn, fp], vec![fn_, tp]] }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: usize, den: usize, what: &str, class: usize) -> f64 {
    if den == 0 {
        log::warn!("{what} of class {class} is undefined (no instances); counted as 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    /// Macro averages over classes; the F-score is the mean of per-class
    /// F1 values. Undefined ratios count as 0.
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        let total = cm.total();
        if total == 0 {
            return Err(Error::invalid("metrics of an empty confusion matrix"));
        }
        let k = cm.classes();
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        for c in 0..k {
            let tp = cm.counts[c][c];
            let predicted: usize = (0..k).map(|t| cm.counts[t][c]).sum();
            let actual: usize = cm.counts[c].iter().sum();
            let p = ratio(tp, predicted, "precision", c);
            let r = ratio(tp, actual, "recall", c);
            p_sum += p;
            r_sum += r;
            f_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        let correct: usize = (0..k).map(|c| cm.counts[c][c]).sum();
        Ok(Self {
            accuracy: correct as f64 / total as f64,
            precision: p_sum / k as f64,
            recall: r_sum / k as f64,
            fscore: f_sum / k as f64,
            confusion: cm.clone(),
        })
    }

    pub fn report(&self, class_names: &[&str]) -> String {
        let mut s = String::new();
        writeln!(s, "accuracy  {:.6}", self.accuracy).unwrap();
        writeln!(s, "precision {:.6}", self.precision).unwrap();
        writeln!(s, "recall    {:.6}", self.recall).unwrap();
        writeln!(s, "fscore    {:.6}", self.fscore).unwrap();
        writeln!(s, "confusion (rows: true, columns: predicted)").unwrap();
        write!(s, "{:>6}", "").unwrap();
        for c in 0..self.confusion.classes() {
            write!(s, " {:>6}", class_names.get(c).copied().unwrap_or("?")).unwrap();
        }
        s.push('\n');
        for (c, row) in self.confusion.counts.iter().enumerate() {
            write!(s, "{:>6}", class_names.get(c).copied().unwrap_or("?")).unwrap();
            for n in row {
                write!(s, " {n:>6}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}
