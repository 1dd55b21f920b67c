//! Evaluation metrics: accuracy and macro one-vs-rest AUC via the
//! Mann-Whitney rank statistic.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Fraction of rows whose argmax equals the label. Argmax ties break toward
/// the lowest class index.
pub fn accuracy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let (n, c) = logits.dims2()?;
    if n == 0 || labels.len() != n {
        return Err(Error::Input(format!("accuracy: {n} rows, {} labels", labels.len())));
    }
    let data = logits.data();
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = &data[i * c..(i + 1) * c];
        let mut best = 0usize;
        for j in 1..c {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Row-wise softmax with max-subtraction, in f64.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Result<Tensor<f64>> {
    let (n, c) = logits.dims2()?;
    let data = logits.data();
    let mut out = vec![0f64; n * c];
    for i in 0..n {
        let row = &data[i * c..(i + 1) * c];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let mut denom = 0f64;
        for j in 0..c {
            let e = (row[j].as_f64() - max).exp();
            out[i * c + j] = e;
            denom += e;
        }
        for j in 0..c {
            out[i * c + j] /= denom;
        }
    }
    Tensor::new(vec![n, c], out)
}

/// Macro AUC outcome; classes without both a positive and a negative example
/// are skipped and listed.
#[derive(Debug, Clone)]
pub struct MacroAuc {
    pub auc: f64,
    pub skipped_classes: Vec<usize>,
}

/// One-vs-rest AUC per class from the rank statistic
/// `(ordered pairs + 0.5 * ties) / (P * N)`, macro-averaged over the classes
/// that have both positives and negatives.
pub fn auc_macro<T: Real>(scores: &Tensor<T>, labels: &[usize]) -> Result<MacroAuc> {
    let (n, c) = scores.dims2()?;
    if labels.len() != n {
        return Err(Error::Input(format!("auc_macro: {n} rows, {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Input(format!("auc_macro: label {bad} out of range for {c} classes")));
    }
    let data = scores.data();
    let mut sum = 0f64;
    let mut counted = 0usize;
    let mut skipped = Vec::new();
    for class in 0..c {
        let pos = labels.iter().filter(|&&l| l == class).count();
        let neg = n - pos;
        if pos == 0 || neg == 0 {
            skipped.push(class);
            continue;
        }
        sum += binary_auc_ranked(
            (0..n).map(|i| (data[i * c + class].as_f64(), labels[i] == class)),
            pos,
            neg,
        );
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::MetricUndefined(
            "no class has both positive and negative examples".into(),
        ));
    }
    Ok(MacroAuc { auc: sum / counted as f64, skipped_classes: skipped })
}

/// Mann-Whitney AUC via average ranks (ties get the midrank).
fn binary_auc_ranked(items: impl Iterator<Item = (f64, bool)>, pos: usize, neg: usize) -> f64 {
    let mut scored: Vec<(f64, bool)> = items.collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    let n = scored.len();
    let mut rank_sum_pos = 0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scored[j + 1].0 == scored[i].0 {
            j += 1;
        }
        let midrank = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for item in &scored[i..=j] {
            if item.1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    u / (pos as f64 * neg as f64)
}
