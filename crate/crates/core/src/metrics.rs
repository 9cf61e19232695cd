//! Ranking metrics: AUC with tie credit 1/2 and sample-weighted per-user GAUC.

use std::collections::BTreeMap;

use crate::error::{FimError, Result};

/// Rank-based AUC, or `None` when either label class is absent.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let pos = labels.iter().filter(|&&y| y).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the Mann-Whitney statistic, kept integral so ties are exact.
    let (mut twice_u, mut neg_below) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let p = order[i..j].iter().filter(|&&k| labels[k]).count() as u64;
        let n = (j - i) as u64 - p;
        twice_u += p * (2 * neg_below + n);
        neg_below += n;
        i = j;
    }
    Some(twice_u as f64 / (2 * pos * neg) as f64)
}

/// Per-user AUC averaged with weights equal to each user's sample count;
/// users with a single label class are left out of both sums.
pub fn gauc<U: Ord>(scores: &[f64], labels: &[bool], users: &[U]) -> Option<f64> {
    assert_eq!(scores.len(), users.len(), "scores and users differ in length");
    let mut groups: BTreeMap<&U, Vec<usize>> = BTreeMap::new();
    for (i, u) in users.iter().enumerate() {
        groups.entry(u).or_default().push(i);
    }
    let mut scored = Vec::new();
    for idx in groups.values() {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let y: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        if let Some(a) = auc(&s, &y) {
            scored.push((idx.len(), a));
        }
    }
    let total: usize = scored.iter().map(|&(n, _)| n).sum();
    // normalised weights keep a lone user's AUC bit-exact
    (total > 0).then(|| scored.iter().map(|&(n, a)| n as f64 / total as f64 * a).sum())
}

/// Scores, labels and users of one evaluation pass for a single task.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub users: Vec<String>,
}

impl ScoredSet {
    pub fn push(&mut self, score: f64, label: bool, user: &str) -> Result<()> {
        if !score.is_finite() {
            return Err(FimError::NonFinite(format!("score for user {user}")));
        }
        self.scores.push(score);
        self.labels.push(label);
        self.users.push(user.to_string());
        Ok(())
    }

    pub fn auc(&self) -> Option<f64> {
        auc(&self.scores, &self.labels)
    }

    pub fn gauc(&self) -> Option<f64> {
        gauc(&self.scores, &self.labels, &self.users)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}
