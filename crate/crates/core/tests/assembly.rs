use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cfsample::graph::{synth_graph, SynthSpec};
use cfsample::losses::{batch_loss, LossKind, LossSpec};
use cfsample::model::{EmbeddingModel, ItemFnKind, ModelConfig};
use cfsample::sampler::{DenseGrid, MiniBatch, NegLink, Negatives, Partner, SamplerConfig, SamplingContext, Strategy};
use cfsample::trainer::{Learner, TrainConfig};

fn id_model(users: usize, items: usize, dim: usize, rng: &mut ChaCha8Rng) -> EmbeddingModel {
    let f = Array2::from_shape_fn((users, dim), |_| rng.random_range(-1.0..1.0));
    let g = Array2::from_shape_fn((items, dim), |_| rng.random_range(-1.0..1.0));
    EmbeddingModel::from_blocks(ItemFnKind::IdTable, vec![f, g]).unwrap()
}

/// Random 6 x 4 batch in grid form plus the same negatives listed one by one.
fn twin_batches(rng: &mut ChaCha8Rng, pairwise: bool) -> (MiniBatch, MiniBatch) {
    let (rows, cols) = (6, 4);
    let mut pos_links = Vec::new();
    for r in 0..rows {
        pos_links.push((r, rng.random_range(0..cols)));
        if rng.random_bool(0.3) {
            let c = rng.random_range(0..cols);
            if !pos_links.contains(&(r, c)) {
                pos_links.push((r, c));
            }
        }
    }
    let mut pos_mask = vec![false; rows * cols];
    for &(r, c) in &pos_links {
        pos_mask[r * cols + c] = true;
    }
    let weights: Vec<f64> = pos_mask
        .iter()
        .map(|&p| if p { 0.0 } else { rng.random_range(0.01..1.0) })
        .collect();
    let pairing = pairwise.then(|| {
        pos_links
            .iter()
            .map(|&(r, _)| {
                (0..cols)
                    .filter(|&c| !pos_mask[r * cols + c])
                    .map(|c| Partner {
                        item_slot: c,
                        weight: rng.random_range(0.01..1.0),
                    })
                    .collect()
            })
            .collect()
    });
    let pos_weights: Vec<f64> = pos_links.iter().map(|_| rng.random_range(0.1..1.0)).collect();
    let explicit: Vec<NegLink> = (0..rows * cols)
        .filter(|&i| !pos_mask[i])
        .map(|i| NegLink {
            user_slot: i / cols,
            item_slot: i % cols,
            weight: weights[i],
        })
        .collect();
    let grid = MiniBatch {
        strategy: Strategy::NegSharing,
        users: (0..rows as u32).collect(),
        items: (0..cols as u32).collect(),
        pos_links,
        pos_weights,
        negatives: Negatives::DenseGrid(DenseGrid {
            rows,
            cols,
            pos_mask,
            weights,
        }),
        pairing,
    };
    let listed = MiniBatch {
        negatives: Negatives::Explicit(explicit),
        strategy: Strategy::Negative,
        ..grid.clone()
    };
    (grid, listed)
}

#[test]
fn grid_and_listed_negatives_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..40 {
        let kind = [LossKind::Sg, LossKind::Mse, LossKind::LogPair, LossKind::HingePair][trial % 4];
        let spec = LossSpec::new(kind);
        let model = id_model(6, 4, 5, &mut rng);
        let (grid, listed) = twin_batches(&mut rng, spec.kind.family() == LossKind::LogPair.family());
        let acts = model.forward(&grid.users, &grid.items, None).unwrap();
        let a = batch_loss(&spec, &grid, &acts).unwrap();
        let b = batch_loss(&spec, &listed, &acts).unwrap();
        assert!((a.loss - b.loss).abs() <= 1e-12 * a.loss.abs().max(1.0), "{kind:?}: {} vs {}", a.loss, b.loss);
        for (x, y) in a.d_f.iter().chain(a.d_g.iter()).zip(b.d_f.iter().chain(b.d_g.iter())) {
            assert!((x - y).abs() <= 1e-12, "{kind:?}: {x} vs {y}");
        }
    }
}

#[test]
fn single_link_gradient_is_the_other_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = id_model(1, 1, 3, &mut rng);
    let acts = model.forward(&[0], &[0], None).unwrap();
    // mse with target x + 1/2 gives dL/dx = -2 (r - x) = -1; flip via the weight
    let x = acts.f.row(0).dot(&acts.g.row(0));
    let spec = LossSpec {
        pos_target: x + 0.5,
        ..LossSpec::new(LossKind::Mse)
    };
    let batch = MiniBatch {
        strategy: Strategy::Negative,
        users: vec![0],
        items: vec![0],
        pos_links: vec![(0, 0)],
        pos_weights: vec![-1.0],
        negatives: Negatives::Explicit(Vec::new()),
        pairing: None,
    };
    let bl = batch_loss(&spec, &batch, &acts).unwrap();
    assert_eq!(bl.d_f.row(0), acts.g.row(0));
    assert_eq!(bl.d_g.row(0), acts.f.row(0));
}

#[test]
fn zero_score_gradients_give_zero_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = id_model(6, 4, 3, &mut rng);
    let (mut grid, _) = twin_batches(&mut rng, false);
    grid.pos_weights.iter_mut().for_each(|w| *w = 0.0);
    if let Negatives::DenseGrid(g) = &mut grid.negatives {
        g.weights.iter_mut().for_each(|w| *w = 0.0);
    }
    let acts = model.forward(&grid.users, &grid.items, None).unwrap();
    let bl = batch_loss(&LossSpec::new(LossKind::Sg), &grid, &acts).unwrap();
    assert!(bl.d_f.iter().chain(bl.d_g.iter()).all(|&x| x == 0.0));
}

#[test]
fn directional_derivative_matches_batch_loss() {
    let graph = synth_graph(&SynthSpec::new(30, 40, 300, 1.0, 2)).unwrap();
    let vocab = graph.features().unwrap().vocab;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (kind, st) in [
        (LossKind::Sg, Strategy::Stratified),
        (LossKind::Mse, Strategy::NegSharing),
        (LossKind::LogPair, Strategy::StratifiedNs),
        (LossKind::HingePair, Strategy::Negative),
    ] {
        for item_fn in [ItemFnKind::IdTable, ItemFnKind::LinearBag, ItemFnKind::MlpBag] {
            let spec = LossSpec { gamma: 1.0, ..LossSpec::new(kind) };
            let cfg = TrainConfig {
                loss: spec,
                sampler: SamplerConfig {
                    strategy: st,
                    b: 8,
                    k: 2,
                    s: 2,
                    ..SamplerConfig::default()
                },
                model: ModelConfig {
                    dim: 4,
                    hidden: 6,
                    token_dim: 5,
                    item_fn,
                    init_scale: 0.5,
                    ..ModelConfig::default()
                },
                ..TrainConfig::default()
            };
            let ctx = SamplingContext::new(&graph, cfg.sampler.clone(), kind.family()).unwrap();
            let batch = ctx.seeded_sampler(0).next_batch().unwrap();
            let model = EmbeddingModel::new(&cfg.model, graph.num_users(), graph.num_items(), vocab).unwrap();
            let mut learner = Learner::from_model(&cfg, model.clone());
            learner.gradient(&batch, &graph).unwrap();

            let dirs: Vec<Array2<f64>> = model
                .params()
                .iter()
                .map(|p| Array2::from_shape_fn(p.raw_dim(), |_| rng.random_range(-1.0..1.0)))
                .collect();
            let analytic: f64 = learner
                .gradients()
                .blocks
                .iter()
                .zip(&dirs)
                .map(|(g, d)| (g * d).sum())
                .sum();
            let eps = 1e-6;
            let loss_at = |t: f64| {
                let mut m = model.clone();
                for (p, d) in m.params_mut().iter_mut().zip(&dirs) {
                    p.scaled_add(t, d);
                }
                Learner::from_model(&cfg, m).gradient(&batch, &graph).unwrap().loss
            };
            let numeric = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-4, "{kind:?}/{st}/{item_fn}: {analytic} vs {numeric}");
        }
    }
}
