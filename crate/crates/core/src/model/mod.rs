//! Functional embedding: `r(u, v) = f(x_u)ᵀ g(x_v)`.
//!
//! `f` is a row lookup in the user table. `g` is one of an item id table, a
//! mean of token rows over the item's feature bag, or a one-hidden-layer
//! ReLU network on that mean. Forward evaluates each function once per unique
//! batch slot, and backward aggregates slot gradients before entering `g`.

mod checkpoint;

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{ItemFeatures, ItemId, UserId};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ItemFnKind {
    IdTable,
    LinearBag,
    MlpBag,
}

impl ItemFnKind {
    pub fn name(self) -> &'static str {
        match self {
            ItemFnKind::IdTable => "id",
            ItemFnKind::LinearBag => "linear-bag",
            ItemFnKind::MlpBag => "mlp-bag",
        }
    }

    pub fn needs_features(self) -> bool {
        self != ItemFnKind::IdTable
    }

    fn code(self) -> u32 {
        match self {
            ItemFnKind::IdTable => 0,
            ItemFnKind::LinearBag => 1,
            ItemFnKind::MlpBag => 2,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        [ItemFnKind::IdTable, ItemFnKind::LinearBag, ItemFnKind::MlpBag]
            .into_iter()
            .find(|k| k.code() == c)
    }
}

impl fmt::Display for ItemFnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ItemFnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "id" | "id-table" => Ok(ItemFnKind::IdTable),
            "linear-bag" => Ok(ItemFnKind::LinearBag),
            "mlp-bag" => Ok(ItemFnKind::MlpBag),
            _ => Err(Error::config("model.item-fn", format!("unknown item function {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub item_fn: ItemFnKind,
    /// Hidden width of the MLP item function.
    pub hidden: usize,
    /// Token embedding width feeding the MLP item function.
    pub token_dim: usize,
    pub seed: u64,
    /// Half-width of the uniform initialization interval.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 16,
            item_fn: ItemFnKind::IdTable,
            hidden: 64,
            token_dim: 32,
            seed: 0,
            init_scale: 0.05,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("model.dim", "embedding width must be positive"));
        }
        if self.item_fn == ItemFnKind::MlpBag && (self.hidden == 0 || self.token_dim == 0) {
            return Err(Error::config("model.hidden", "MLP widths must be positive"));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::config("model.init-scale", "must be non-negative"));
        }
        Ok(())
    }
}

/// Parameter blocks of the model, in checkpoint order.
///
/// Block 0 is always the user table. Then: `IdTable` item table;
/// `LinearBag` token table; `MlpBag` token table, `W1`, `b1`, `W2`, `b2`
/// (biases stored as single-row matrices).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    kind: ItemFnKind,
    dim: usize,
    params: Vec<Array2<f64>>,
    repeat: usize,
}

pub const USER_BLOCK: usize = 0;

/// Dense gradient buffers shaped like the parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &EmbeddingModel) -> Self {
        Gradients {
            blocks: model.params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for b in &mut self.blocks {
            b.fill(0.0);
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks.iter().flat_map(|b| b.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

/// Embeddings of one batch plus what the item backward needs.
#[derive(Debug, Clone)]
pub struct BatchActivations {
    /// Row `i` is `f` of user slot `i`.
    pub f: Array2<f64>,
    /// Row `j` is `g` of item slot `j`.
    pub g: Array2<f64>,
    pooled: Option<Array2<f64>>,
    pre: Option<Array2<f64>>,
}

impl BatchActivations {
    /// User and item function evaluations performed.
    pub fn evals(&self) -> (usize, usize) {
        (self.f.nrows(), self.g.nrows())
    }
}

impl EmbeddingModel {
    pub fn new(cfg: &ModelConfig, num_users: usize, num_items: usize, vocab: usize) -> Result<Self> {
        cfg.validate()?;
        if cfg.item_fn.needs_features() && vocab == 0 {
            return Err(Error::Data(format!("item function {} needs a non-empty vocabulary", cfg.item_fn)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let a = cfg.init_scale;
        let mut block = |r: usize, c: usize| {
            Array2::from_shape_simple_fn((r, c), || if a > 0.0 { rng.random_range(-a..a) } else { 0.0 })
        };
        let d = cfg.dim;
        let mut params = vec![block(num_users, d)];
        match cfg.item_fn {
            ItemFnKind::IdTable => params.push(block(num_items, d)),
            ItemFnKind::LinearBag => params.push(block(vocab, d)),
            ItemFnKind::MlpBag => {
                let (t, h) = (cfg.token_dim, cfg.hidden);
                params.push(block(vocab, t));
                params.push(block(t, h));
                params.push(block(1, h));
                params.push(block(h, d));
                params.push(block(1, d));
            }
        }
        Ok(EmbeddingModel {
            kind: cfg.item_fn,
            dim: d,
            params,
            repeat: 1,
        })
    }

    pub fn from_blocks(kind: ItemFnKind, params: Vec<Array2<f64>>) -> Result<Self> {
        let d = params.first().map_or(0, |b| b.ncols());
        let ok = match (kind, params.as_slice()) {
            (ItemFnKind::IdTable | ItemFnKind::LinearBag, [_, item]) => item.ncols() == d,
            (ItemFnKind::MlpBag, [_, tok, w1, b1, w2, b2]) => {
                let (t, h) = w1.dim();
                tok.ncols() == t && b1.dim() == (1, h) && w2.dim() == (h, d) && b2.dim() == (1, d)
            }
            _ => false,
        };
        if !ok || d == 0 {
            return Err(Error::Checkpoint(format!("parameter blocks do not form a {kind} model")));
        }
        Ok(EmbeddingModel {
            kind,
            dim: d,
            params,
            repeat: 1,
        })
    }

    pub fn kind(&self) -> ItemFnKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_users(&self) -> usize {
        self.params[USER_BLOCK].nrows()
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn block_names(&self) -> &'static [&'static str] {
        match self.kind {
            ItemFnKind::IdTable => &["user", "item"],
            ItemFnKind::LinearBag => &["user", "token"],
            ItemFnKind::MlpBag => &["user", "token", "w1", "b1", "w2", "b2"],
        }
    }

    /// Repeat every item-function forward and backward `n` times, keeping
    /// one result, to emulate an expensive `g`.
    pub fn set_item_cost_multiplier(&mut self, n: usize) {
        self.repeat = n.max(1);
    }

    pub fn item_cost_multiplier(&self) -> usize {
        self.repeat
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    fn check_user(&self, u: UserId) -> Result<()> {
        let n = self.num_users();
        if (u as usize) < n {
            Ok(())
        } else {
            Err(Error::Bounds {
                what: "user",
                id: u as usize,
                dim: n,
            })
        }
    }

    pub fn embed_users(&self, users: &[UserId]) -> Result<Array2<f64>> {
        let table = &self.params[USER_BLOCK];
        let mut out = Array2::zeros((users.len(), self.dim));
        for (i, &u) in users.iter().enumerate() {
            self.check_user(u)?;
            out.row_mut(i).assign(&table.row(u as usize));
        }
        Ok(out)
    }

    /// Mean token row of each item's bag; zeros for an empty bag.
    fn pool(&self, table: &Array2<f64>, items: &[ItemId], features: Option<&ItemFeatures>) -> Result<Array2<f64>> {
        let feats = features.ok_or_else(|| Error::Data(format!("item function {} needs item features", self.kind)))?;
        let mut out = Array2::zeros((items.len(), table.ncols()));
        for (j, &v) in items.iter().enumerate() {
            let bag = feats.bags.get(v as usize).ok_or_else(|| Error::Data(format!("no feature bag for item {v}")))?;
            let mut row = out.row_mut(j);
            for (t, w) in bag.mean_weights() {
                if t as usize >= table.nrows() {
                    return Err(Error::Bounds {
                        what: "token",
                        id: t as usize,
                        dim: table.nrows(),
                    });
                }
                row.scaled_add(w, &table.row(t as usize));
            }
        }
        Ok(out)
    }

    fn item_forward(&self, items: &[ItemId], features: Option<&ItemFeatures>) -> Result<ItemForward> {
        match self.kind {
            ItemFnKind::IdTable => {
                let table = &self.params[1];
                let mut g = Array2::zeros((items.len(), self.dim));
                for (j, &v) in items.iter().enumerate() {
                    if v as usize >= table.nrows() {
                        return Err(Error::Bounds {
                            what: "item",
                            id: v as usize,
                            dim: table.nrows(),
                        });
                    }
                    g.row_mut(j).assign(&table.row(v as usize));
                }
                Ok(ItemForward { g, pooled: None, pre: None })
            }
            ItemFnKind::LinearBag => {
                let g = self.pool(&self.params[1], items, features)?;
                Ok(ItemForward { g, pooled: None, pre: None })
            }
            ItemFnKind::MlpBag => {
                let pooled = self.pool(&self.params[1], items, features)?;
                let mut pre = pooled.dot(&self.params[2]);
                pre += &self.params[3].row(0);
                let hid = pre.mapv(relu);
                let mut g = hid.dot(&self.params[4]);
                g += &self.params[5].row(0);
                Ok(ItemForward {
                    g,
                    pooled: Some(pooled),
                    pre: Some(pre),
                })
            }
        }
    }

    /// Item embeddings for arbitrary items (evaluation path).
    pub fn embed_items(&self, items: &[ItemId], features: Option<&ItemFeatures>) -> Result<Array2<f64>> {
        Ok(self.item_forward(items, features)?.g)
    }

    pub fn forward(&self, users: &[UserId], items: &[ItemId], features: Option<&ItemFeatures>) -> Result<BatchActivations> {
        let f = self.embed_users(users)?;
        for _ in 1..self.repeat {
            black_box(self.item_forward(black_box(items), features)?);
        }
        let out = self.item_forward(items, features)?;
        Ok(BatchActivations {
            f,
            g: out.g,
            pooled: out.pooled,
            pre: out.pre,
        })
    }

    /// Accumulates parameter gradients given upstream slot gradients.
    pub fn backward(
        &self,
        users: &[UserId],
        items: &[ItemId],
        features: Option<&ItemFeatures>,
        acts: &BatchActivations,
        d_f: &Array2<f64>,
        d_g: &Array2<f64>,
        grads: &mut Gradients,
    ) -> Result<()> {
        if d_f.dim() != acts.f.dim() || d_g.dim() != acts.g.dim() {
            return Err(Error::Argument(format!(
                "upstream gradient shapes {:?}/{:?} do not match activations {:?}/{:?}",
                d_f.dim(),
                d_g.dim(),
                acts.f.dim(),
                acts.g.dim()
            )));
        }
        let gu = &mut grads.blocks[USER_BLOCK];
        for (i, &u) in users.iter().enumerate() {
            gu.row_mut(u as usize).scaled_add(1.0, &d_f.row(i));
        }
        for _ in 1..self.repeat {
            let mut scratch = Gradients {
                blocks: grads.blocks[1..].iter().map(|b| Array2::zeros(b.raw_dim())).collect(),
            };
            self.item_backward(items, features, acts, black_box(d_g), &mut scratch.blocks)?;
            black_box(scratch);
        }
        self.item_backward(items, features, acts, d_g, &mut grads.blocks[1..])
    }

    fn item_backward(
        &self,
        items: &[ItemId],
        features: Option<&ItemFeatures>,
        acts: &BatchActivations,
        d_g: &Array2<f64>,
        out: &mut [Array2<f64>],
    ) -> Result<()> {
        match self.kind {
            ItemFnKind::IdTable => {
                for (j, &v) in items.iter().enumerate() {
                    out[0].row_mut(v as usize).scaled_add(1.0, &d_g.row(j));
                }
                Ok(())
            }
            ItemFnKind::LinearBag => scatter_to_tokens(items, features, d_g, &mut out[0]),
            ItemFnKind::MlpBag => {
                let (pooled, pre) = match (&acts.pooled, &acts.pre) {
                    (Some(p), Some(z)) => (p, z),
                    _ => return Err(Error::Argument("activations lack MLP caches".into())),
                };
                let hid = pre.mapv(relu);
                out[3] += &hid.t().dot(d_g);
                out[4].row_mut(0).scaled_add(1.0, &d_g.sum_axis(Axis(0)));
                let mut d_pre = d_g.dot(&self.params[4].t());
                Zip::from(&mut d_pre).and(pre).for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
                out[1] += &pooled.t().dot(&d_pre);
                out[2].row_mut(0).scaled_add(1.0, &d_pre.sum_axis(Axis(0)));
                let d_pooled = d_pre.dot(&self.params[2].t());
                scatter_to_tokens(items, features, &d_pooled, &mut out[0])
            }
        }
    }

    /// Scores of `users` against `items`, `|users| x |items|`.
    pub fn score_matrix(&self, users: &[UserId], items: &[ItemId], features: Option<&ItemFeatures>) -> Result<Array2<f64>> {
        let f = self.embed_users(users)?;
        let g = self.embed_items(items, features)?;
        Ok(f.dot(&g.t()))
    }
}

struct ItemForward {
    g: Array2<f64>,
    pooled: Option<Array2<f64>>,
    pre: Option<Array2<f64>>,
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn scatter_to_tokens(
    items: &[ItemId],
    features: Option<&ItemFeatures>,
    d_pooled: &Array2<f64>,
    table_grad: &mut Array2<f64>,
) -> Result<()> {
    let feats = features.ok_or_else(|| Error::Data("item features missing".into()))?;
    for (j, &v) in items.iter().enumerate() {
        for (t, w) in feats.bags[v as usize].mean_weights() {
            table_grad.row_mut(t as usize).scaled_add(w, &d_pooled.row(j));
        }
    }
    Ok(())
}

/// `f_u · g_v` for every (user slot, item slot) link.
pub fn score_links(acts: &BatchActivations, links: impl IntoIterator<Item = (usize, usize)>) -> Array1<f64> {
    links.into_iter().map(|(r, c)| dot(acts.f.row(r), acts.g.row(c))).collect()
}

#[inline]
pub fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.dot(&b)
}
