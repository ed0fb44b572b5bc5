use std::collections::HashMap;

use super::Strategy;
use crate::graph::{ItemId, UserId};

/// A drawn negative link with its full estimator coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegLink {
    pub user_slot: usize,
    pub item_slot: usize,
    pub weight: f64,
}

/// A negative item partnered with one positive for pairwise losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partner {
    pub item_slot: usize,
    pub weight: f64,
}

/// All user-slot x item-slot pairs of the batch; positives are masked.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `true` where the cell is a batch positive.
    pub pos_mask: Vec<bool>,
    /// Row-major pointwise negative coefficients; zero on masked cells.
    pub weights: Vec<f64>,
}

impl DenseGrid {
    pub fn is_positive(&self, row: usize, col: usize) -> bool {
        self.pos_mask[row * self.cols + col]
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.cols + col]
    }

    /// Cells acting as negatives.
    pub fn negative_count(&self) -> usize {
        self.pos_mask.iter().filter(|&&p| !p).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Negatives {
    Explicit(Vec<NegLink>),
    DenseGrid(DenseGrid),
}

/// One mini-batch: deduplicated node slots, positive links between slots, and
/// negatives. Every weight is the link's coefficient in the batch objective,
/// so `Σ pos_weight·ℓ⁺ + λ·Σ neg_weight·ℓ⁻` (or the pairing sum for pairwise
/// losses) is an unbiased estimate of the full objective.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub strategy: Strategy,
    pub users: Vec<UserId>,
    pub items: Vec<ItemId>,
    pub pos_links: Vec<(usize, usize)>,
    pub pos_weights: Vec<f64>,
    pub negatives: Negatives,
    /// Per positive, its negative partners; present for pairwise losses.
    pub pairing: Option<Vec<Vec<Partner>>>,
}

/// Node and link counts of a batch, the units of the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct Composition {
    pub users: usize,
    pub items: usize,
    pub pos_links: usize,
    pub neg_links: usize,
    pub vec_interactions: usize,
    pub mat_interactions: usize,
}

impl MiniBatch {
    pub fn composition(&self) -> Composition {
        let (neg_links, vec_i, mat_i) = match &self.negatives {
            Negatives::Explicit(n) => (n.len(), self.pos_links.len() + n.len(), 0),
            Negatives::DenseGrid(g) => (g.negative_count(), 0, g.rows * g.cols),
        };
        Composition {
            users: self.users.len(),
            items: self.items.len(),
            pos_links: self.pos_links.len(),
            neg_links,
            vec_interactions: vec_i,
            mat_interactions: mat_i,
        }
    }

    /// A batch without any usable negative signal: no positive-weight
    /// negatives, or some positive without partners in a pairwise batch.
    pub fn is_degenerate(&self) -> bool {
        if let Some(p) = &self.pairing {
            return p.iter().any(|ps| ps.is_empty());
        }
        match &self.negatives {
            Negatives::Explicit(n) => n.is_empty(),
            Negatives::DenseGrid(g) => g.weights.iter().all(|&w| w == 0.0),
        }
    }

    pub fn pos_user(&self, i: usize) -> UserId {
        self.users[self.pos_links[i].0]
    }

    pub fn pos_item(&self, i: usize) -> ItemId {
        self.items[self.pos_links[i].1]
    }
}

/// Assigns dense slots to node ids in order of first appearance.
#[derive(Debug, Default)]
pub(crate) struct SlotMap {
    ids: Vec<u32>,
    index: HashMap<u32, usize>,
}

impl SlotMap {
    pub fn slot(&mut self, id: u32) -> usize {
        let next = self.ids.len();
        *self.index.entry(id).or_insert_with(|| {
            self.ids.push(id);
            next
        })
    }

    pub fn ids_snapshot(&self) -> Vec<u32> {
        self.ids.clone()
    }

    pub fn into_ids(self) -> Vec<u32> {
        self.ids
    }
}
