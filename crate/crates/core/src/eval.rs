//! recall@M over the held-out item pool.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{ItemFeatures, ItemId, UserId};
use crate::model::EmbeddingModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallReport {
    pub m: usize,
    /// `(user, recall)` for users with at least one held-out link.
    pub per_user: Vec<(UserId, f64)>,
    pub mean: f64,
}

/// Indices of the `m` best-scoring entries: higher score first, ties to the
/// lower item id.
pub fn top_m(scores: &[f64], items: &[ItemId], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let cmp = |&a: &usize, &b: &usize| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(items[a].cmp(&items[b]))
    };
    if m < order.len() {
        order.select_nth_unstable_by(m, cmp);
        order.truncate(m);
    }
    order.sort_unstable_by(cmp);
    order
}

/// Recall of one user given scores aligned with `pool`.
pub fn recall_from_scores(scores: &[f64], pool: &[ItemId], held_out: &[ItemId], m: usize) -> f64 {
    let top = top_m(scores, pool, m);
    let hits = top.iter().filter(|&&i| held_out.contains(&pool[i])).count();
    hits as f64 / held_out.len() as f64
}

/// Ranks every pool item for each user with held-out links.
pub fn recall_at_m(
    model: &EmbeddingModel,
    features: Option<&ItemFeatures>,
    test_pool: &[ItemId],
    test_by_user: &[Vec<ItemId>],
    m: usize,
) -> Result<RecallReport> {
    if m == 0 {
        return Err(Error::config("eval.m", "cutoff must be at least 1"));
    }
    if test_pool.is_empty() {
        return Err(Error::Data("empty test item pool".into()));
    }
    let g = model.embed_items(test_pool, features)?;
    let mut per_user = Vec::new();
    for (u, held) in test_by_user.iter().enumerate() {
        if held.is_empty() {
            continue;
        }
        let f = model.embed_users(&[u as UserId])?;
        let scores = g.dot(&f.row(0)).to_vec();
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numerical(format!("non-finite score for user {u}")));
        }
        per_user.push((u as UserId, recall_from_scores(&scores, test_pool, held, m)));
    }
    let mean = if per_user.is_empty() {
        0.0
    } else {
        per_user.iter().map(|&(_, r)| r).sum::<f64>() / per_user.len() as f64
    };
    Ok(RecallReport { m, per_user, mean })
}
