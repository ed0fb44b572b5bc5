//! Immutable bipartite user-item graph of implicit-feedback links.
//!
//! Adjacency is stored twice in CSR form (user-major and item-major) so both
//! user-side and item-side neighbourhoods are O(1) slices. Neighbour lists are
//! sorted and free of duplicates.

mod io;
mod split;
mod synth;

pub use io::{ingest_features, ingest_links, write_features, write_links};
pub use split::{split_holdout, HoldoutSplit, SplitSpec};
pub use synth::{synth_graph, SynthSpec};

use crate::error::{Error, Result};

pub type UserId = u32;
pub type ItemId = u32;

/// Bag of token ids with multiplicities, sorted by token.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureBag {
    pub tokens: Vec<u32>,
    pub counts: Vec<u32>,
}

impl FeatureBag {
    /// Builds a bag from a token sequence, merging repeats into counts.
    pub fn from_tokens(tokens: impl IntoIterator<Item = u32>) -> Self {
        let mut all: Vec<u32> = tokens.into_iter().collect();
        all.sort_unstable();
        let mut bag = FeatureBag::default();
        for t in all {
            match bag.tokens.last() {
                Some(&last) if last == t => *bag.counts.last_mut().unwrap() += 1,
                _ => {
                    bag.tokens.push(t);
                    bag.counts.push(1);
                }
            }
        }
        bag
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// Iterates `(token, count / total)` pairs, i.e. the mean-pooling weights.
    pub fn mean_weights(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        let total = f64::from(self.total().max(1));
        self.tokens
            .iter()
            .zip(&self.counts)
            .map(move |(&t, &c)| (t, f64::from(c) / total))
    }
}

/// Per-item token bags plus the vocabulary size they index into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemFeatures {
    pub vocab: usize,
    pub bags: Vec<FeatureBag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    user_offsets: Vec<usize>,
    user_items: Vec<ItemId>,
    item_offsets: Vec<usize>,
    item_users: Vec<UserId>,
    features: Option<ItemFeatures>,
}

impl InteractionGraph {
    /// Builds a graph from `(user, item)` pairs. Duplicate pairs collapse to a
    /// single link; ids outside the declared dimensions are rejected.
    pub fn from_links<I>(num_users: usize, num_items: usize, links: I) -> Result<Self>
    where
        I: IntoIterator<Item = (UserId, ItemId)>,
    {
        let mut pairs: Vec<(UserId, ItemId)> = Vec::new();
        for (u, v) in links {
            if u as usize >= num_users {
                return Err(Error::Bounds {
                    what: "user",
                    id: u as usize,
                    dim: num_users,
                });
            }
            if v as usize >= num_items {
                return Err(Error::Bounds {
                    what: "item",
                    id: v as usize,
                    dim: num_items,
                });
            }
            pairs.push((u, v));
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut user_offsets = vec![0usize; num_users + 1];
        let mut item_offsets = vec![0usize; num_items + 1];
        for &(u, v) in &pairs {
            user_offsets[u as usize + 1] += 1;
            item_offsets[v as usize + 1] += 1;
        }
        for i in 0..num_users {
            user_offsets[i + 1] += user_offsets[i];
        }
        for i in 0..num_items {
            item_offsets[i + 1] += item_offsets[i];
        }

        let user_items = pairs.iter().map(|&(_, v)| v).collect();
        let mut item_users = vec![0; pairs.len()];
        let mut cursor = item_offsets.clone();
        // pairs are user-major, so each item's users arrive in ascending order
        for &(u, v) in &pairs {
            item_users[cursor[v as usize]] = u;
            cursor[v as usize] += 1;
        }

        Ok(InteractionGraph {
            num_users,
            num_items,
            user_offsets,
            user_items,
            item_offsets,
            item_users,
            features: None,
        })
    }

    /// Attaches item feature bags. One bag per item is required.
    pub fn with_features(mut self, features: ItemFeatures) -> Result<Self> {
        if features.bags.len() != self.num_items {
            return Err(Error::Data(format!(
                "feature table has {} bags for {} items",
                features.bags.len(),
                self.num_items
            )));
        }
        if let Some(bad) = features
            .bags
            .iter()
            .flat_map(|b| b.tokens.iter())
            .find(|&&t| t as usize >= features.vocab)
        {
            return Err(Error::Bounds {
                what: "token",
                id: *bad as usize,
                dim: features.vocab,
            });
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_links(&self) -> usize {
        self.user_items.len()
    }

    pub fn user_items(&self, u: UserId) -> &[ItemId] {
        let u = u as usize;
        &self.user_items[self.user_offsets[u]..self.user_offsets[u + 1]]
    }

    pub fn item_users(&self, v: ItemId) -> &[UserId] {
        let v = v as usize;
        &self.item_users[self.item_offsets[v]..self.item_offsets[v + 1]]
    }

    pub fn user_degree(&self, u: UserId) -> usize {
        let u = u as usize;
        self.user_offsets[u + 1] - self.user_offsets[u]
    }

    pub fn item_degree(&self, v: ItemId) -> usize {
        let v = v as usize;
        self.item_offsets[v + 1] - self.item_offsets[v]
    }

    pub fn user_degrees(&self) -> Vec<usize> {
        (0..self.num_users as u32).map(|u| self.user_degree(u)).collect()
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        (0..self.num_items as u32).map(|v| self.item_degree(v)).collect()
    }

    pub fn has_link(&self, u: UserId, v: ItemId) -> bool {
        self.user_items(u).binary_search(&v).is_ok()
    }

    /// Links in user-major, item-ascending order.
    pub fn links(&self) -> impl Iterator<Item = (UserId, ItemId)> + '_ {
        (0..self.num_users as u32).flat_map(move |u| self.user_items(u).iter().map(move |&v| (u, v)))
    }

    /// The `i`-th link in user-major order.
    pub fn link(&self, i: usize) -> (UserId, ItemId) {
        let u = self.user_offsets.partition_point(|&o| o <= i) - 1;
        (u as UserId, self.user_items[i])
    }

    pub fn features(&self) -> Option<&ItemFeatures> {
        self.features.as_ref()
    }

    pub fn feature_bag(&self, v: ItemId) -> Option<&FeatureBag> {
        self.features.as_ref().map(|f| &f.bags[v as usize])
    }

    /// Subgraph over the same node universe keeping only links accepted by `keep`.
    pub fn filter_links(&self, mut keep: impl FnMut(UserId, ItemId) -> bool) -> InteractionGraph {
        let links: Vec<_> = self.links().filter(|&(u, v)| keep(u, v)).collect();
        let mut g = InteractionGraph::from_links(self.num_users, self.num_items, links)
            .expect("subgraph ids are in range");
        g.features = self.features.clone();
        g
    }
}
