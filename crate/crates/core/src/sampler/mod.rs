//! Mini-batch construction under the five sampling strategies.
//!
//! | strategy        | positives              | negatives                                     |
//! |-----------------|------------------------|-----------------------------------------------|
//! | `iid`           | shuffled links         | `b·k` pairs, `u ~ P_d(u)`, `v ~ P_n(v)`        |
//! | `negative`      | shuffled links         | `k` items `~ P_n` per positive, same user      |
//! | `stratified`    | shuffled item strata   | `k` users `~ P_d(u)` per positive, same item   |
//! | `neg-sharing`   | shuffled links         | every non-positive batch user x item pair      |
//! | `stratified-ns` | shuffled item strata   | every non-positive batch user x item pair      |
//!
//! Negatives drawn from the data marginal instead of `P_n` carry the
//! importance weight `P_n(v)/P_d(v)`. Shared negatives (the last two rows)
//! are weighted by their exact appearance probability, see [`inclusion`].

mod batch;
pub mod inclusion;
mod plan;

use std::fmt;
use std::str::FromStr;

pub use batch::{Composition, DenseGrid, MiniBatch, NegLink, Negatives, Partner};
pub use plan::{strata_per_item, Stratum};

use batch::SlotMap;
use inclusion::MissTable;
use plan::{form_strata, LazyShuffle};

use crate::distributions::{build_marginals, build_noise, DiscreteDistribution, Marginals, NoiseSpec};
use crate::draw::{Draw, RngDraw};
use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, ItemId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Iid,
    Negative,
    Stratified,
    NegSharing,
    StratifiedNs,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Iid,
        Strategy::Negative,
        Strategy::Stratified,
        Strategy::NegSharing,
        Strategy::StratifiedNs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Iid => "iid",
            Strategy::Negative => "negative",
            Strategy::Stratified => "stratified",
            Strategy::NegSharing => "neg-sharing",
            Strategy::StratifiedNs => "stratified-ns",
        }
    }

    pub fn uses_strata(self) -> bool {
        matches!(self, Strategy::Stratified | Strategy::StratifiedNs)
    }

    pub fn shares_negatives(self) -> bool {
        matches!(self, Strategy::NegSharing | Strategy::StratifiedNs)
    }

    pub fn draws_negatives(self) -> bool {
        !self.shares_negatives()
    }

    pub fn supports_pairwise(self) -> bool {
        matches!(self, Strategy::Negative | Strategy::NegSharing | Strategy::StratifiedNs)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config("sampler.strategy", format!("unknown strategy {s:?}")))
    }
}

/// Whether the loss consumes single links or (positive, negative) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossFamily {
    Pointwise,
    Pairwise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    /// Positive links per batch.
    pub b: usize,
    /// Negatives per positive for the drawing strategies.
    pub k: usize,
    /// Positive links per stratum.
    pub s: usize,
    pub seed: u64,
    /// Drop shared negatives that are training positives elsewhere.
    pub exclude_known_positives: bool,
    pub noise: NoiseSpec,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            strategy: Strategy::Negative,
            b: 512,
            k: 10,
            s: 4,
            seed: 0,
            exclude_known_positives: false,
            noise: NoiseSpec::DegreeUnigram,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, family: LossFamily) -> Result<()> {
        if self.b == 0 {
            return Err(Error::config("sampler.b", "batch size must be positive"));
        }
        if self.strategy.draws_negatives() && self.k == 0 {
            return Err(Error::config(
                "sampler.k",
                format!("{} needs at least one negative per positive", self.strategy),
            ));
        }
        if self.strategy.uses_strata() {
            if self.s == 0 {
                return Err(Error::config("sampler.s", "stratum size must be positive"));
            }
            if self.b % self.s != 0 {
                return Err(Error::config(
                    "sampler.s",
                    format!("stratum size {} does not divide batch size {}", self.s, self.b),
                ));
            }
        }
        if family == LossFamily::Pairwise && !self.strategy.supports_pairwise() {
            let why = match self.strategy {
                Strategy::Stratified => {
                    "item-stratified sampling cannot be applied to pairwise loss functions: a stratum fixes the item, so there is no per-user item comparison"
                }
                _ => "iid sampling draws negatives independently of positives and forms no (u, v, v') triplets",
            };
            return Err(Error::Unsupported(format!("{} with a pairwise loss: {why}", self.strategy)));
        }
        Ok(())
    }

    pub fn strata_per_batch(&self) -> usize {
        if self.strategy.uses_strata() {
            self.b / self.s
        } else {
            self.b
        }
    }
}

/// Immutable per-graph sampling state shared by any number of samplers.
#[derive(Debug, Clone)]
pub struct SamplingContext<'g> {
    graph: &'g InteractionGraph,
    cfg: SamplerConfig,
    family: LossFamily,
    marginals: Marginals,
    noise: DiscreteDistribution,
    /// `P_n(v) / P_d(v)`, zero for items without data mass.
    item_weight: Vec<f64>,
    /// Slots owned by each item (strata, or links when unstratified).
    item_slots: Vec<usize>,
    total_slots: usize,
}

impl<'g> SamplingContext<'g> {
    pub fn new(graph: &'g InteractionGraph, cfg: SamplerConfig, family: LossFamily) -> Result<Self> {
        cfg.validate(family)?;
        let marginals = build_marginals(graph)?;
        let noise = build_noise(graph, cfg.noise)?;
        let item_weight = (0..graph.num_items())
            .map(|v| {
                let pd = marginals.item.prob(v);
                if pd > 0.0 {
                    noise.prob(v) / pd
                } else {
                    0.0
                }
            })
            .collect();
        let slot_size = if cfg.strategy.uses_strata() { cfg.s } else { 1 };
        let item_slots = strata_per_item(graph, slot_size);
        let total_slots = item_slots.iter().sum();
        Ok(SamplingContext {
            graph,
            cfg,
            family,
            marginals,
            noise,
            item_weight,
            item_slots,
            total_slots,
        })
    }

    pub fn graph(&self) -> &'g InteractionGraph {
        self.graph
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn family(&self) -> LossFamily {
        self.family
    }

    pub fn marginals(&self) -> &Marginals {
        &self.marginals
    }

    pub fn noise(&self) -> &DiscreteDistribution {
        &self.noise
    }

    /// Number of slots (strata or links) served per epoch.
    pub fn slots_per_epoch(&self) -> usize {
        self.total_slots
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.total_slots.div_ceil(self.cfg.strata_per_batch())
    }

    pub fn sampler<D: Draw>(&self, draw: D) -> Sampler<'_, D> {
        Sampler {
            ctx: self,
            draw,
            links: LazyShuffle::new(self.graph.num_links()),
            strata: Vec::new(),
            strata_order: LazyShuffle::new(self.total_slots),
            in_epoch: false,
            epochs_done: 0,
            miss: None,
        }
    }

    /// Sampler on its own ChaCha stream under the configured seed.
    pub fn seeded_sampler(&self, stream: u64) -> Sampler<'_, RngDraw> {
        self.sampler(RngDraw::new(self.cfg.seed, stream))
    }
}

/// Stateful batch source: owns a randomness stream and the epoch cursor.
pub struct Sampler<'c, D> {
    ctx: &'c SamplingContext<'c>,
    draw: D,
    links: LazyShuffle,
    strata: Vec<Stratum>,
    strata_order: LazyShuffle,
    in_epoch: bool,
    epochs_done: usize,
    miss: Option<MissTable>,
}

struct Positives {
    users: SlotMap,
    items: SlotMap,
    links: Vec<(usize, usize)>,
    /// Strata drawn (equal to the link count for link plans).
    slots: usize,
    /// Item slot and positive count of each stratum.
    strata: Vec<(usize, usize)>,
}

impl<'c, D: Draw> Sampler<'c, D> {
    pub fn context(&self) -> &SamplingContext<'c> {
        self.ctx
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn draw_mut(&mut self) -> &mut D {
        &mut self.draw
    }

    /// Next batch of the current epoch, or `None` once the epoch is
    /// exhausted; the following call starts a new epoch.
    pub fn next_batch(&mut self) -> Option<MiniBatch> {
        if !self.in_epoch {
            self.start_epoch();
        }
        let pos = self.take_positives();
        if pos.links.is_empty() {
            self.in_epoch = false;
            self.epochs_done += 1;
            return None;
        }
        Some(self.build(pos))
    }

    fn start_epoch(&mut self) {
        let ctx = self.ctx;
        if ctx.cfg.strategy.uses_strata() {
            self.strata = form_strata(ctx.graph, ctx.cfg.s, &mut self.draw);
            debug_assert_eq!(self.strata.len(), self.strata_order.len());
            self.strata_order.restart();
        } else {
            self.links.restart();
        }
        self.in_epoch = true;
    }

    fn take_positives(&mut self) -> Positives {
        let ctx = self.ctx;
        let mut pos = Positives {
            users: SlotMap::default(),
            items: SlotMap::default(),
            links: Vec::new(),
            slots: 0,
            strata: Vec::new(),
        };
        if ctx.cfg.strategy.uses_strata() {
            for _ in 0..ctx.cfg.strata_per_batch() {
                let Some(idx) = self.strata_order.next(&mut self.draw) else { break };
                let st = &self.strata[idx as usize];
                let item_slot = pos.items.slot(st.item);
                for &u in &st.users {
                    let us = pos.users.slot(u);
                    pos.links.push((us, item_slot));
                }
                pos.strata.push((item_slot, st.users.len()));
                pos.slots += 1;
            }
        } else {
            for _ in 0..ctx.cfg.b {
                let Some(idx) = self.links.next(&mut self.draw) else { break };
                let (u, v) = ctx.graph.link(idx as usize);
                let us = pos.users.slot(u);
                let is = pos.items.slot(v);
                pos.links.push((us, is));
                pos.slots += 1;
            }
        }
        pos
    }

    /// Expected positives per batch of `slots` slots; the positive
    /// normalizer that keeps each link's expected weight at `1/|links|`.
    fn positive_norm(&self, slots: usize) -> f64 {
        slots as f64 * self.ctx.graph.num_links() as f64 / self.ctx.total_slots as f64
    }

    fn build(&mut self, mut pos: Positives) -> MiniBatch {
        let ctx = self.ctx;
        let cfg = &ctx.cfg;
        let norm = self.positive_norm(pos.slots);
        let pos_weights = vec![1.0 / norm; pos.links.len()];
        let k = cfg.k;
        let family = ctx.family;

        let (negatives, pairing) = match cfg.strategy {
            Strategy::Iid => {
                let coef = 1.0 / (norm * k as f64);
                let mut negs = Vec::with_capacity(pos.links.len() * k);
                for _ in 0..pos.links.len() * k {
                    let u = self.draw.categorical(&ctx.marginals.user) as u32;
                    let v = self.draw.categorical(&ctx.noise) as u32;
                    negs.push(NegLink {
                        user_slot: pos.users.slot(u),
                        item_slot: pos.items.slot(v),
                        weight: coef,
                    });
                }
                (Negatives::Explicit(negs), None)
            }
            Strategy::Negative => {
                let coef = 1.0 / (norm * k as f64);
                let mut negs = Vec::with_capacity(pos.links.len() * k);
                let mut pairing = Vec::with_capacity(pos.links.len());
                for i in 0..pos.links.len() {
                    let user_slot = pos.links[i].0;
                    let mut partners = Vec::with_capacity(k);
                    for _ in 0..k {
                        let v = self.draw.categorical(&ctx.noise) as u32;
                        let item_slot = pos.items.slot(v);
                        negs.push(NegLink {
                            user_slot,
                            item_slot,
                            weight: coef,
                        });
                        partners.push(Partner { item_slot, weight: coef });
                    }
                    pairing.push(partners);
                }
                let pairing = (family == LossFamily::Pairwise).then_some(pairing);
                (Negatives::Explicit(negs), pairing)
            }
            Strategy::Stratified => {
                let mut negs = Vec::with_capacity(pos.links.len() * k);
                let item_ids = pos.items.ids_snapshot();
                for &(item_slot, size) in &pos.strata {
                    let v = item_ids[item_slot];
                    let coef = ctx.item_weight[v as usize] / (norm * k as f64);
                    for _ in 0..size * k {
                        let u = self.draw.categorical(&ctx.marginals.user) as u32;
                        negs.push(NegLink {
                            user_slot: pos.users.slot(u),
                            item_slot,
                            weight: coef,
                        });
                    }
                }
                (Negatives::Explicit(negs), None)
            }
            Strategy::NegSharing | Strategy::StratifiedNs => {
                if self.miss.as_ref().map(MissTable::chosen) != Some(pos.slots) {
                    self.miss = Some(MissTable::new(ctx.total_slots, pos.slots));
                }
                let miss = self.miss.as_ref().unwrap();
                let users = pos.users.ids_snapshot();
                let items = pos.items.ids_snapshot();
                let grid = shared_grid(ctx, miss, &users, &items, &pos.links);
                let pairing = (family == LossFamily::Pairwise)
                    .then(|| shared_pairing(ctx, miss, &users, &items, &pos.links, &grid));
                (Negatives::DenseGrid(grid), pairing)
            }
        };

        MiniBatch {
            strategy: cfg.strategy,
            users: std::mem::take(&mut pos.users).into_ids(),
            items: std::mem::take(&mut pos.items).into_ids(),
            pos_links: pos.links,
            pos_weights,
            negatives,
            pairing,
        }
    }
}

fn shared_grid(
    ctx: &SamplingContext<'_>,
    miss: &MissTable,
    users: &[u32],
    items: &[ItemId],
    links: &[(usize, usize)],
) -> DenseGrid {
    let (rows, cols) = (users.len(), items.len());
    let mut pos_mask = vec![false; rows * cols];
    for &(r, c) in links {
        pos_mask[r * cols + c] = true;
    }
    let mut weights = vec![0.0; rows * cols];
    let graph = ctx.graph;
    for (r, &u) in users.iter().enumerate() {
        let pu = ctx.marginals.user.prob(u as usize);
        let deg_u = graph.user_degree(u);
        for (c, &v) in items.iter().enumerate() {
            if pos_mask[r * cols + c] {
                continue;
            }
            let linked = graph.has_link(u, v);
            if linked && ctx.cfg.exclude_known_positives {
                continue;
            }
            let p = miss.cell(linked, deg_u - linked as usize, ctx.item_slots[v as usize]);
            if p > 0.0 {
                weights[r * cols + c] = pu * ctx.noise.prob(v as usize) / p;
            }
        }
    }
    DenseGrid {
        rows,
        cols,
        pos_mask,
        weights,
    }
}

fn shared_pairing(
    ctx: &SamplingContext<'_>,
    miss: &MissTable,
    users: &[u32],
    items: &[ItemId],
    links: &[(usize, usize)],
    grid: &DenseGrid,
) -> Vec<Vec<Partner>> {
    let graph = ctx.graph;
    let num_links = graph.num_links() as f64;
    links
        .iter()
        .map(|&(r, _)| {
            let u = users[r];
            items
                .iter()
                .enumerate()
                .filter(|&(c, _)| !grid.is_positive(r, c))
                .filter_map(|(c, &v)| {
                    let linked = graph.has_link(u, v);
                    if linked && ctx.cfg.exclude_known_positives {
                        return None;
                    }
                    let p = miss.pair(linked, ctx.item_slots[v as usize]);
                    (p > 0.0).then(|| Partner {
                        item_slot: c,
                        weight: ctx.noise.prob(v as usize) / (num_links * p),
                    })
                })
                .collect()
        })
        .collect()
}
