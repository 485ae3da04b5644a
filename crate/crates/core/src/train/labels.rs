//! Multi-label targets and the self-training miner that promotes confidently scored templates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold above which a template is mined as positive.
pub const DEFAULT_MINING_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelState {
    gt: Vec<usize>,
    labels: Vec<Vec<bool>>,
    stage: usize,
    /// Label matrix at the start of every stage, oldest first.
    history: Vec<Vec<Vec<bool>>>,
}

impl LabelState {
    /// One-hot labels at the ground-truth templates.
    pub fn new(gt: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Argument("label state needs at least one template".into()));
        }
        if let Some(&bad) = gt.iter().find(|&&g| g >= k) {
            return Err(Error::Argument(format!("ground-truth index {bad} out of range for {k} templates")));
        }
        let labels: Vec<Vec<bool>> = gt.iter().map(|&g| (0..k).map(|i| i == g).collect()).collect();
        Ok(LabelState {
            history: vec![labels.clone()],
            gt,
            labels,
            stage: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.gt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt.is_empty()
    }

    pub fn num_templates(&self) -> usize {
        self.labels.first().map_or(0, Vec::len)
    }

    pub fn gt(&self) -> &[usize] {
        &self.gt
    }

    pub fn labels(&self) -> &[Vec<bool>] {
        &self.labels
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn history(&self) -> &[Vec<Vec<bool>>] {
        &self.history
    }

    /// Positives other than the ground truth, per sample.
    pub fn others(&self, sample: usize) -> impl Iterator<Item = usize> + '_ {
        let g = self.gt[sample];
        self.labels[sample]
            .iter()
            .enumerate()
            .filter(move |&(i, &l)| l && i != g)
            .map(|(i, _)| i)
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().flatten().filter(|&&l| l).count()
    }

    /// `N_neg / N_pos` per template over the current labels; 1 where a template has no positives.
    pub fn class_weights(&self) -> Vec<f64> {
        let k = self.num_templates();
        let n = self.len() as f64;
        (0..k)
            .map(|i| {
                let pos = self.labels.iter().filter(|l| l[i]).count() as f64;
                if pos == 0.0 {
                    1.0
                } else {
                    (n - pos) / pos
                }
            })
            .collect()
    }

    /// Every label vector is a superset of the previous stage's and holds its ground truth.
    pub fn check_invariants(&self) -> bool {
        let gt_ok = self.labels.iter().zip(&self.gt).all(|(l, &g)| l[g]);
        let mut stages: Vec<&Vec<Vec<bool>>> = self.history.iter().collect();
        stages.push(&self.labels);
        let mono = stages.windows(2).all(|w| {
            w[0].iter()
                .zip(w[1].iter())
                .all(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| !*x || *y))
        });
        gt_ok && mono
    }
}

/// Promote every template scored above `threshold`; positives never revert.
///
/// Returns the next-stage state and how many labels flipped to positive.
pub fn self_training_update(state: &LabelState, scores: &[Vec<f64>], threshold: f64) -> Result<(LabelState, usize)> {
    if scores.len() != state.len() {
        return Err(Error::Argument(format!(
            "{} score rows for {} samples",
            scores.len(),
            state.len()
        )));
    }
    let k = state.num_templates();
    let mut next = state.clone();
    let mut changed = 0;
    for (row, s) in next.labels.iter_mut().zip(scores) {
        if s.len() != k {
            return Err(Error::Argument(format!("score row of {} for {k} templates", s.len())));
        }
        for (l, &c) in row.iter_mut().zip(s) {
            if !*l && c > threshold {
                *l = true;
                changed += 1;
            }
        }
    }
    next.stage += 1;
    next.history.push(next.labels.clone());
    Ok((next, changed))
}
