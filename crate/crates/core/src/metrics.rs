//! Binary classification metrics. Label 1 (FFPE) is the positive class and a
//! score equal to the threshold predicts positive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub slide_id: String,
    pub score: f64,
    pub label: u8,
}

impl ScoredSample {
    pub fn new(slide_id: impl Into<String>, score: f64, label: u8) -> Self {
        Self {
            slide_id: slide_id.into(),
            score,
            label,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.n() as f64
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn check(samples: &[ScoredSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples to score".into()));
    }
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite() || s.label > 1) {
        return Err(Error::InvalidInput(format!(
            "sample `{}` has score {} and label {}",
            s.slide_id, s.score, s.label
        )));
    }
    Ok(())
}

pub fn confusion(samples: &[ScoredSample], threshold: f64) -> Result<Confusion> {
    check(samples)?;
    let mut c = Confusion::default();
    for s in samples {
        match (s.score >= threshold, s.label == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn accuracy(samples: &[ScoredSample], threshold: f64) -> Result<f64> {
    Ok(confusion(samples, threshold)?.accuracy())
}

pub fn f1(samples: &[ScoredSample], threshold: f64) -> Result<f64> {
    Ok(confusion(samples, threshold)?.f1())
}

/// Area under the ROC curve from midranks (Mann-Whitney U), `O(n log n)`.
pub fn auroc(samples: &[ScoredSample]) -> Result<f64> {
    check(samples)?;
    let n_pos = samples.iter().filter(|s| s.label == 1).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].score.total_cmp(&samples[b].score));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && samples[order[j + 1]].score == samples[order[i]].score {
            j += 1;
        }
        // ranks are 1-based; the group i..=j shares the average rank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| samples[k].label == 1).count();
        pos_rank_sum += midrank * pos_in_group as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Pairwise `O(n^2)` AUROC; kept as a reference.
pub fn auroc_pairwise(samples: &[ScoredSample]) -> Result<f64> {
    check(samples)?;
    let pos: Vec<f64> = samples.iter().filter(|s| s.label == 1).map(|s| s.score).collect();
    let neg: Vec<f64> = samples.iter().filter(|s| s.label == 0).map(|s| s.score).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let mut credit = 0.0;
    for &p in &pos {
        for &n in &neg {
            credit += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(credit / (pos.len() * neg.len()) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub f1: f64,
    /// `None` when only one class is present.
    pub auroc: Option<f64>,
    pub confusion: Confusion,
}

impl MetricsReport {
    pub fn compute(samples: &[ScoredSample], threshold: f64) -> Result<Self> {
        let confusion = confusion(samples, threshold)?;
        let auroc = match auroc(samples) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            n: confusion.n(),
            threshold,
            accuracy: confusion.accuracy(),
            f1: confusion.f1(),
            auroc,
            confusion,
        })
    }

    pub const CSV_HEADER: [&'static str; 10] = ["dataset", "n", "acc", "f1", "auroc", "tp", "fp", "tn", "fn", "threshold"];

    pub fn csv_record(&self, dataset: &str) -> Vec<String> {
        let c = &self.confusion;
        vec![
            dataset.to_string(),
            self.n.to_string(),
            format!("{:.6}", self.accuracy),
            format!("{:.6}", self.f1),
            self.auroc.map_or("undefined".to_string(), |a| format!("{a:.6}")),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
            self.threshold.to_string(),
        ]
    }
}
