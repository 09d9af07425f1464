use serde::{Deserialize, Serialize};

/// Classification quality of a model on one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Mean cross-entropy, without L2 or proximal terms.
    pub mean_loss: f64,
    pub n_samples: usize,
}

/// Confusion counts (`counts[true][pred]`) plus the summed loss, so that
/// reports over several test sets can be pooled exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Confusion {
    pub counts: Vec<Vec<u64>>,
    pub loss_sum: f64,
}

impl Confusion {
    pub fn new(n_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; n_classes]; n_classes],
            loss_sum: 0.0,
        }
    }

    pub fn record(&mut self, truth: usize, pred: usize) {
        self.counts[truth][pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.loss_sum += other.loss_sum;
    }

    /// Macro averages run over classes that occur either as a true label or
    /// as a prediction; a per-class ratio with a zero denominator counts as 0.
    pub fn report(&self) -> EvalReport {
        let n = self.total();
        let k = self.counts.len();
        let correct: u64 = (0..k).map(|c| self.counts[c][c]).sum();
        let mut precision = 0.0;
        let mut recall = 0.0;
        let mut f1 = 0.0;
        let mut active = 0usize;
        for c in 0..k {
            let tp = self.counts[c][c] as f64;
            let actual: u64 = self.counts[c].iter().sum();
            let predicted: u64 = self.counts.iter().map(|row| row[c]).sum();
            if actual == 0 && predicted == 0 {
                continue;
            }
            active += 1;
            let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let r = if actual > 0 { tp / actual as f64 } else { 0.0 };
            precision += p;
            recall += r;
            f1 += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        let denom = active.max(1) as f64;
        let nf = n.max(1) as f64;
        EvalReport {
            accuracy: correct as f64 / nf,
            macro_precision: precision / denom,
            macro_recall: recall / denom,
            macro_f1: f1 / denom,
            mean_loss: self.loss_sum / nf,
            n_samples: n as usize,
        }
    }
}
