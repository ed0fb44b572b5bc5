//! Epoch plans: every positive link is served exactly once per epoch.
//!
//! Link plans are a Fisher-Yates shuffle performed lazily, one swap per
//! served link, so drawing the first batch consumes only as many choices as
//! the batch holds. Strata plans shuffle each item's users, cut them into
//! runs of `s` (the last run of an item may be short) and then serve the
//! runs in lazily shuffled order.

use crate::draw::Draw;
use crate::graph::{InteractionGraph, ItemId, UserId};

#[derive(Debug, Clone)]
pub(crate) struct LazyShuffle {
    order: Vec<u32>,
    cursor: usize,
}

impl LazyShuffle {
    pub fn new(n: usize) -> Self {
        LazyShuffle {
            order: (0..n as u32).collect(),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn remaining(&self) -> usize {
        self.order.len() - self.cursor
    }

    pub fn restart(&mut self) {
        self.cursor = 0;
    }

    pub fn next<D: Draw + ?Sized>(&mut self, draw: &mut D) -> Option<u32> {
        let rem = self.remaining();
        if rem == 0 {
            return None;
        }
        let j = if rem > 1 { self.cursor + draw.index(rem) } else { self.cursor };
        self.order.swap(self.cursor, j);
        self.cursor += 1;
        Some(self.order[self.cursor - 1])
    }
}

/// One stratum: a run of positive users of a single item.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub item: ItemId,
    pub users: Vec<UserId>,
}

/// Number of strata item `v` splits into.
pub fn strata_per_item(graph: &InteractionGraph, s: usize) -> Vec<usize> {
    (0..graph.num_items() as ItemId)
        .map(|v| graph.item_degree(v).div_ceil(s))
        .collect()
}

pub(crate) fn form_strata<D: Draw + ?Sized>(graph: &InteractionGraph, s: usize, draw: &mut D) -> Vec<Stratum> {
    let mut out = Vec::new();
    for v in 0..graph.num_items() as ItemId {
        let mut users = graph.item_users(v).to_vec();
        let d = users.len();
        for i in 0..d.saturating_sub(1) {
            let j = i + draw.index(d - i);
            users.swap(i, j);
        }
        for chunk in users.chunks(s) {
            out.push(Stratum {
                item: v,
                users: chunk.to_vec(),
            });
        }
    }
    out
}
