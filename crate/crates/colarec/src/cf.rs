//! Collaborative-filtering pretraining: linear propagation over the
//! symmetric-normalized user-item graph (LightGCN style) trained with a
//! pairwise ranking loss. The resulting item embeddings seed identifier
//! construction; the user embeddings seed nothing but are exported for
//! inspection.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{InteractionDataset, Split};
use crate::numerics::checkpoint::{self, CheckpointError};
use crate::numerics::{
    AdamW, AdamWConfig, BoundParams, CsrMatrix, Graph, NumericsError, ParamStore, Real, Tensor,
    Var,
};

/// Pretraining hyperparameters.
#[derive(Clone, Debug)]
pub struct CfConfig {
    pub dim: usize,
    pub layers: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CfConfig {
    fn default() -> Self {
        CfConfig {
            dim: 32,
            layers: 2,
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: 60,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// User-item interaction graph in symmetric-normalized stacked form: a
/// square sparse matrix over `n_users + n_items` nodes where an edge (u, i)
/// contributes weight `1 / sqrt(deg(u) * deg(i))` in both directions.
#[derive(Clone, Debug)]
pub struct InteractionGraph<F: Real> {
    n_users: usize,
    n_items: usize,
    norm_adj: Arc<CsrMatrix<F>>,
}

impl<F: Real> InteractionGraph<F> {
    /// Build from explicit edges (deduplicated upstream).
    pub fn from_edges(n_users: usize, n_items: usize, edges: &[(usize, usize)]) -> Self {
        let mut user_deg = vec![0usize; n_users];
        let mut item_deg = vec![0usize; n_items];
        for &(u, i) in edges {
            user_deg[u] += 1;
            item_deg[i] += 1;
        }
        let n = n_users + n_items;
        let mut triplets = Vec::with_capacity(edges.len() * 2);
        for &(u, i) in edges {
            let w = F::from_f64(1.0 / ((user_deg[u] * item_deg[i]) as f64).sqrt());
            triplets.push((u, n_users + i, w));
            triplets.push((n_users + i, u, w));
        }
        InteractionGraph {
            n_users,
            n_items,
            norm_adj: Arc::new(CsrMatrix::from_triplets(n, n, triplets)),
        }
    }

    /// Build from a dataset's train interactions.
    pub fn from_dataset(ds: &InteractionDataset) -> Self {
        let edges: Vec<(usize, usize)> = ds
            .interactions
            .iter()
            .filter(|it| it.split == Split::Train)
            .map(|it| (it.user, it.item))
            .collect();
        Self::from_edges(ds.n_users(), ds.n_items(), &edges)
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Total node count (users + items).
    pub fn size(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn norm_adj(&self) -> &Arc<CsrMatrix<F>> {
        &self.norm_adj
    }

    /// Multi-layer propagation of stacked embeddings `e0` of shape
    /// `[size, dim]`: the mean of layers `0..=layers`, where layer k+1 is
    /// the normalized adjacency applied to layer k.
    pub fn propagate(&self, e0: &Tensor<F>, layers: usize) -> Tensor<F> {
        let mut acc = e0.clone();
        let mut layer = e0.clone();
        for _ in 0..layers {
            layer = self.norm_adj.matmul_dense(&layer);
            acc.add_assign(&layer);
        }
        let inv = F::from_f64(1.0 / (layers as f64 + 1.0));
        acc.map(|x| x * inv)
    }

    /// The same propagation recorded on an autodiff graph. Shares the
    /// sparse kernel with [`propagate`](Self::propagate), so forward values
    /// match it bit for bit.
    pub fn propagate_graph(
        &self,
        g: &mut Graph<F>,
        e0: Var,
        layers: usize,
    ) -> Result<Var, NumericsError> {
        let mut vars = vec![e0];
        for _ in 0..layers {
            let prev = *vars.last().expect("starts non-empty");
            vars.push(g.sparse_matmul(Arc::clone(&self.norm_adj), prev)?);
        }
        let sum = g.add_n(&vars)?;
        Ok(g.scale(sum, 1.0 / (layers as f64 + 1.0)))
    }
}

/// Pairwise ranking loss over row-aligned batches: mean over rows of
/// `softplus(-(anchor . (pos - neg)))`, the numerically stable form of
/// `-ln sigmoid(anchor . pos - anchor . neg)`.
pub fn pairwise_ranking_loss<F: Real>(
    g: &mut Graph<F>,
    anchor: Var,
    pos: Var,
    neg: Var,
) -> Result<Var, NumericsError> {
    let diff = g.sub(pos, neg)?;
    let prod = g.mul(anchor, diff)?;
    let cols = g.value(prod).cols();
    let ones = g.constant(Tensor::filled(&[cols, 1], F::ONE));
    let scores = g.matmul(prod, ones)?;
    let neg_scores = g.scale(scores, -1.0);
    let losses = g.softplus(neg_scores);
    let mean = g.mean_rows(losses)?;
    g.index(mean, 0)
}

/// Trained embeddings after propagation.
#[derive(Clone, Debug)]
pub struct CfModel<F: Real> {
    pub user_emb: Tensor<F>,
    pub item_emb: Tensor<F>,
}

impl<F: Real> CfModel<F> {
    pub fn dim(&self) -> usize {
        self.user_emb.cols()
    }

    /// Preference score: inner product of propagated embeddings.
    pub fn score(&self, user: usize, item: usize) -> F {
        self.user_emb
            .row(user)
            .iter()
            .zip(self.item_emb.row(item))
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut store: ParamStore<F> = ParamStore::new();
        store
            .insert("user_embeddings", self.user_emb.clone())
            .expect("fresh store");
        store
            .insert("item_embeddings", self.item_emb.clone())
            .expect("fresh store");
        checkpoint::save(path, &store)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let store: ParamStore<F> = checkpoint::load(path)?;
        let fetch = |name: &str| -> Result<Tensor<F>, CheckpointError> {
            store
                .id_by_name(name)
                .map(|id| store.get(id).clone())
                .map_err(|_| CheckpointError::Corrupt(format!("missing record {name:?}")))
        };
        Ok(CfModel {
            user_emb: fetch("user_embeddings")?,
            item_emb: fetch("item_embeddings")?,
        })
    }
}

/// Train stacked embeddings with the pairwise ranking loss over train
/// interactions; negatives are drawn uniformly from each user's
/// non-interacted items. Returns the propagated model and per-epoch mean
/// loss.
pub fn pretrain<F: Real>(
    ds: &InteractionDataset,
    cfg: &CfConfig,
) -> Result<(CfModel<F>, Vec<f64>), NumericsError> {
    let graph = InteractionGraph::<F>::from_dataset(ds);
    let n_users = ds.n_users();
    let n_items = ds.n_items();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0f64, 0.1).expect("valid std");

    let mut e0 = Tensor::<F>::zeros(&[graph.size(), cfg.dim]);
    for x in e0.data_mut() {
        *x = F::from_f64(normal.sample(&mut rng));
    }
    let mut store = ParamStore::new();
    let emb_id = store.insert("cf_embeddings", e0)?;
    let mut opt = AdamW::new(
        &store,
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
    );

    let train_edges: Vec<(usize, usize)> = ds
        .interactions
        .iter()
        .filter(|it| it.split == Split::Train)
        .map(|it| (it.user, it.item))
        .collect();
    let interacted: Vec<HashSet<usize>> = {
        let mut sets = vec![HashSet::new(); n_users];
        for &(u, i) in &train_edges {
            sets[u].insert(i);
        }
        sets
    };

    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_edges.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut users = Vec::with_capacity(chunk.len());
            let mut pos = Vec::with_capacity(chunk.len());
            let mut neg = Vec::with_capacity(chunk.len());
            for &e in chunk {
                let (u, i) = train_edges[e];
                let Some(n) = sample_negative(&mut rng, n_items, &interacted[u]) else {
                    continue;
                };
                users.push(u);
                pos.push(n_users + i);
                neg.push(n_users + n);
            }
            if users.is_empty() {
                continue;
            }
            let mut g = Graph::new();
            let bound = BoundParams::bind(&mut g, &store);
            let e_final = graph.propagate_graph(&mut g, bound.var(emb_id), cfg.layers)?;
            let a = g.row_select(e_final, &users)?;
            let p = g.row_select(e_final, &pos)?;
            let n = g.row_select(e_final, &neg)?;
            let loss = pairwise_ranking_loss(&mut g, a, p, n)?;
            total += g.value(loss).item().to_f64();
            batches += 1;
            let grads = g.backward(loss)?;
            let grad_set = bound.collect_grads(&store, &grads);
            opt.step(&mut store, &grad_set);
        }
        epoch_loss.push(if batches == 0 { 0.0 } else { total / batches as f64 });
    }

    let e_final = graph.propagate(store.get(emb_id), cfg.layers);
    let dim = cfg.dim;
    let mut user_emb = Tensor::zeros(&[n_users, dim]);
    let mut item_emb = Tensor::zeros(&[n_items, dim]);
    for u in 0..n_users {
        user_emb.row_mut(u).copy_from_slice(e_final.row(u));
    }
    for i in 0..n_items {
        item_emb.row_mut(i).copy_from_slice(e_final.row(n_users + i));
    }
    Ok((CfModel { user_emb, item_emb }, epoch_loss))
}

/// Uniform draw from items the user has not interacted with; `None` when
/// every item is interacted.
fn sample_negative(rng: &mut ChaCha8Rng, n_items: usize, seen: &HashSet<usize>) -> Option<usize> {
    if seen.len() >= n_items {
        return None;
    }
    loop {
        let cand = rng.gen_range(0..n_items);
        if !seen.contains(&cand) {
            return Some(cand);
        }
    }
}
