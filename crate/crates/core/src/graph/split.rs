use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{InteractionGraph, ItemId, UserId};
use crate::error::{Error, Result};

/// Item-holdout split: a random fraction of items becomes the test pool and
/// every link into the pool is withheld from training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub test_item_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_item_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HoldoutSplit {
    pub train: InteractionGraph,
    /// Sorted test item ids.
    pub test_pool: Vec<ItemId>,
    /// Held-out links, user-major.
    pub test_links: Vec<(UserId, ItemId)>,
}

impl HoldoutSplit {
    /// Held-out items per user (empty for users with nothing held out).
    pub fn test_items_by_user(&self) -> Vec<Vec<ItemId>> {
        let mut out = vec![Vec::new(); self.train.num_users()];
        for &(u, v) in &self.test_links {
            out[u as usize].push(v);
        }
        out
    }
}

pub fn split_holdout(graph: &InteractionGraph, spec: SplitSpec) -> Result<HoldoutSplit> {
    let frac = spec.test_item_fraction;
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::config(
            "split.fraction",
            format!("test item fraction {frac} outside (0, 1)"),
        ));
    }
    let n_test = (frac * graph.num_items() as f64).floor() as usize;
    if n_test == 0 {
        return Err(Error::config(
            "split.fraction",
            format!("fraction {frac} of {} items selects no test item", graph.num_items()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut test_pool: Vec<ItemId> = rand::seq::index::sample(&mut rng, graph.num_items(), n_test)
        .into_iter()
        .map(|i| i as ItemId)
        .collect();
    test_pool.sort_unstable();

    let mut in_pool = vec![false; graph.num_items()];
    for &v in &test_pool {
        in_pool[v as usize] = true;
    }
    let test_links = graph.links().filter(|&(_, v)| in_pool[v as usize]).collect();
    let train = graph.filter_links(|_, v| !in_pool[v as usize]);
    Ok(HoldoutSplit {
        train,
        test_pool,
        test_links,
    })
}
