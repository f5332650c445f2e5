//! The four-term joint objective and the example sampler that feeds it.
//!
//! Sampling and loss evaluation are deliberately split: [`Sampler::plan`]
//! draws every random choice for one training example (input token
//! sequences, the ranking negative, the contrastive pair) into an
//! [`ExamplePlan`], and [`example_loss`] is then a pure function of the
//! parameter store and the plan. That separation keeps gradients
//! finite-difference-checkable and makes batch replay deterministic.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::inputs::{build_item_input, build_user_input};
use super::model::Seq2SeqModel;
use super::vocab::Vocabulary;
use super::{Seq2SeqError, TrainConfig};
use crate::dataset::{InteractionDataset, Split};
use crate::gid::GidAssignment;
use crate::numerics::{BoundParams, Graph, Real, Var};

/// An item drawn by the sampler together with its already-built input
/// token sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledItem {
    pub item: usize,
    pub tokens: Vec<usize>,
}

/// Every random decision for one (user, item) training example, fixed
/// before any model evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExamplePlan {
    pub user: usize,
    pub item: usize,
    pub user_tokens: Vec<usize>,
    pub item_tokens: Vec<usize>,
    pub target_gid: Vec<usize>,
    /// ranking negative: uniformly drawn item the user never interacted with
    pub bpr_neg: Option<SampledItem>,
    /// contrastive positive: shares the item's level-1 identifier token
    pub c_pos: Option<SampledItem>,
    /// contrastive negative: disjoint from the item's identifier at every
    /// position; reuses the ranking negative when that one qualifies
    pub c_neg: Option<SampledItem>,
}

/// True when the two identifiers differ at every position.
pub fn no_overlap(a: &[usize], b: &[usize]) -> bool {
    a.iter().zip(b).all(|(x, y)| x != y)
}

/// All eligible contrastive positives for `item`: other items sharing its
/// level-1 token. Ascending item order.
pub fn positive_pool(item: usize, gids: &GidAssignment) -> Vec<usize> {
    let tok = gids.gids[item][0];
    (0..gids.gids.len())
        .filter(|&j| j != item && gids.gids[j][0] == tok)
        .collect()
}

/// All eligible contrastive negatives for `item`: items whose identifier
/// differs at every position. Ascending item order.
pub fn no_overlap_pool(item: usize, gids: &GidAssignment) -> Vec<usize> {
    (0..gids.gids.len())
        .filter(|&j| no_overlap(&gids.gids[item], &gids.gids[j]))
        .collect()
}

/// Draw a contrastive pair for `item`. The positive is uniform over
/// [`positive_pool`]; the negative reuses `shared_neg` when that item has
/// no position-wise token overlap with `item`, and is otherwise redrawn
/// uniformly over [`no_overlap_pool`]. Either side is `None` when its pool
/// is empty, in which case the contrastive term is skipped.
pub fn sample_contrastive_pair(
    item: usize,
    gids: &GidAssignment,
    shared_neg: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> (Option<usize>, Option<usize>) {
    let pos_pool = positive_pool(item, gids);
    let pos = if pos_pool.is_empty() {
        None
    } else {
        Some(pos_pool[rng.gen_range(0..pos_pool.len())])
    };
    if pos.is_none() {
        return (None, None);
    }
    if let Some(neg) = shared_neg {
        if no_overlap(&gids.gids[item], &gids.gids[neg]) {
            return (pos, Some(neg));
        }
    }
    // redraw: rejection-sample first (uniform over the eligible set by
    // construction), fall back to the explicit pool when acceptance is rare
    let n = gids.gids.len();
    for _ in 0..64 {
        let j = rng.gen_range(0..n);
        if no_overlap(&gids.gids[item], &gids.gids[j]) {
            return (pos, Some(j));
        }
    }
    let pool = no_overlap_pool(item, gids);
    if pool.is_empty() {
        (pos, None)
    } else {
        (pos, Some(pool[rng.gen_range(0..pool.len())]))
    }
}

/// Precomputed lookup tables for drawing training examples.
pub struct Sampler<'a> {
    pub ds: &'a InteractionDataset,
    pub gids: &'a GidAssignment,
    pub vocab: &'a Vocabulary,
    pub cfg: &'a TrainConfig,
    train_items_by_user: Vec<Vec<usize>>,
    train_users_by_item: Vec<Vec<usize>>,
    /// per user, every interacted item across all splits, sorted
    interacted: Vec<Vec<usize>>,
}

impl<'a> Sampler<'a> {
    pub fn new(
        ds: &'a InteractionDataset,
        gids: &'a GidAssignment,
        vocab: &'a Vocabulary,
        cfg: &'a TrainConfig,
    ) -> Result<Sampler<'a>, Seq2SeqError> {
        if gids.gids.len() != ds.item_keys.len() {
            return Err(Seq2SeqError::GidMismatch {
                gids: gids.gids.len(),
                items: ds.item_keys.len(),
            });
        }
        let mut interacted = vec![Vec::new(); ds.user_keys.len()];
        for it in &ds.interactions {
            interacted[it.user].push(it.item);
        }
        for list in &mut interacted {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Sampler {
            ds,
            gids,
            vocab,
            cfg,
            train_items_by_user: ds.items_by_user(Split::Train),
            train_users_by_item: ds.users_by_item(Split::Train),
            interacted,
        })
    }

    /// Uniform draw over the items `user` has never interacted with.
    fn sample_non_interacted(&self, user: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
        let n = self.ds.item_keys.len();
        let seen = &self.interacted[user];
        if seen.len() >= n {
            return None;
        }
        if seen.len() * 2 >= n {
            // dense user: enumerate the complement and pick uniformly
            let pool: Vec<usize> = (0..n)
                .filter(|j| seen.binary_search(j).is_err())
                .collect();
            return Some(pool[rng.gen_range(0..pool.len())]);
        }
        loop {
            let j = rng.gen_range(0..n);
            if seen.binary_search(&j).is_err() {
                return Some(j);
            }
        }
    }

    /// Draw one full training example. All loss components are sampled
    /// regardless of which terms are enabled, so a plan is independent of
    /// the ablation toggles. Draw order: user input, item input, ranking
    /// negative (item + its input), contrastive positive, contrastive
    /// negative.
    pub fn plan(&self, user: usize, item: usize, rng: &mut ChaCha8Rng) -> ExamplePlan {
        let user_tokens = build_user_input(
            user,
            Some(item),
            self.ds,
            &self.train_items_by_user,
            self.vocab,
            self.cfg,
            rng,
        );
        let item_tokens = build_item_input(
            item,
            self.ds,
            &self.train_users_by_item,
            self.vocab,
            self.cfg,
            rng,
        );
        let bpr_neg = self.sample_non_interacted(user, rng).map(|j| SampledItem {
            item: j,
            tokens: build_item_input(
                j,
                self.ds,
                &self.train_users_by_item,
                self.vocab,
                self.cfg,
                rng,
            ),
        });
        let (pos, neg) =
            sample_contrastive_pair(item, self.gids, bpr_neg.as_ref().map(|s| s.item), rng);
        let c_pos = pos.map(|j| SampledItem {
            item: j,
            tokens: build_item_input(
                j,
                self.ds,
                &self.train_users_by_item,
                self.vocab,
                self.cfg,
                rng,
            ),
        });
        let c_neg = neg.map(|j| match &bpr_neg {
            // the shared negative reuses the exact same input sequence
            Some(shared) if shared.item == j => shared.clone(),
            _ => SampledItem {
                item: j,
                tokens: build_item_input(
                    j,
                    self.ds,
                    &self.train_users_by_item,
                    self.vocab,
                    self.cfg,
                    rng,
                ),
            },
        });
        ExamplePlan {
            user,
            item,
            user_tokens,
            item_tokens,
            target_gid: self.gids.gids[item].clone(),
            bpr_neg,
            c_pos,
            c_neg,
        }
    }
}

/// Per-term values of one example's loss, in 64-bit for logging. The
/// `contrastive` field is the raw term before the α weight; `total` is
/// the jointly optimized scalar including it.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub rec: f64,
    pub index: f64,
    pub bpr: f64,
    pub contrastive: f64,
    pub total: f64,
}

/// Teacher-forced cross entropy of the identifier under the decoder:
/// −Σ_t log p(z_t | input, z_{<t}).
fn sequence_nll<F: Real>(
    g: &mut Graph<F>,
    bound: &BoundParams,
    model: &Seq2SeqModel<F>,
    enc_seq: Var,
    gid: &[usize],
) -> Result<Var, Seq2SeqError> {
    let l = model.cfg.l;
    let states = model.decode_states(g, bound, enc_seq, &gid[..l - 1])?;
    let mut picked = Vec::with_capacity(l);
    for (t, &z) in gid.iter().enumerate() {
        if z >= model.cfg.k {
            return Err(Seq2SeqError::GidTokenOutOfRange {
                token: z,
                k: model.cfg.k,
            });
        }
        let d = g.row_select(states, &[t])?;
        let logp = model.token_log_distribution(g, bound, d, t)?;
        picked.push(g.index(logp, z)?);
    }
    let s = g.add_n(&picked)?;
    Ok(g.scale(s, -1.0))
}

/// −ln σ(a · (pos − neg)), the pairwise ranking penalty, as the
/// numerically stable softplus(−a·(pos−neg)).
pub fn pair_ranking_loss<F: Real>(
    g: &mut Graph<F>,
    anchor: Var,
    pos: Var,
    neg: Var,
) -> Result<Var, Seq2SeqError> {
    let diff = g.sub(pos, neg)?;
    let margin = g.dot(anchor, diff)?;
    let neg_margin = g.scale(margin, -1.0);
    Ok(g.softplus(neg_margin))
}

/// One evaluated example: the graph (kept for backward), the parameter
/// binding used in it, the total-loss variable, and the per-term values.
pub struct ExampleLoss<F: Real> {
    pub graph: Graph<F>,
    pub bound: BoundParams,
    pub total: Var,
    pub parts: LossBreakdown,
}

impl<F: Real> ExampleLoss<F> {
    /// Backward pass returning one gradient tensor per store parameter,
    /// aligned with the store's insertion order.
    pub fn grads(
        &self,
        store: &crate::numerics::ParamStore<F>,
    ) -> Result<Vec<crate::numerics::Tensor<F>>, Seq2SeqError> {
        let grads = self.graph.backward(self.total)?;
        Ok(self.bound.collect_grads(store, &grads))
    }
}

/// Build the joint loss of one example on a fresh graph. Disabled or
/// unsampled terms contribute exactly zero by never entering the graph.
pub fn example_loss<F: Real>(
    model: &Seq2SeqModel<F>,
    plan: &ExamplePlan,
    cfg: &TrainConfig,
) -> Result<ExampleLoss<F>, Seq2SeqError> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, &model.store);
    let mut parts = LossBreakdown::default();
    let mut terms = Vec::with_capacity(4);

    let (u_seq, h_u) = model.encode(&mut g, &bound, &plan.user_tokens)?;
    let rec = sequence_nll(&mut g, &bound, model, u_seq, &plan.target_gid)?;
    parts.rec = g.value(rec).item().to_f64();
    terms.push(rec);

    let item_side = if cfg.use_index || cfg.use_bpr || cfg.use_contrastive {
        Some(model.encode(&mut g, &bound, &plan.item_tokens)?)
    } else {
        None
    };

    if cfg.use_index {
        let (i_seq, _) = item_side.expect("item side encoded");
        let index = sequence_nll(&mut g, &bound, model, i_seq, &plan.target_gid)?;
        parts.index = g.value(index).item().to_f64();
        terms.push(index);
    }

    let mut shared_neg_h: Option<(usize, Var)> = None;
    if cfg.use_bpr {
        if let Some(neg) = &plan.bpr_neg {
            let (_, h_i) = item_side.expect("item side encoded");
            let (_, h_n) = model.encode(&mut g, &bound, &neg.tokens)?;
            let bpr = pair_ranking_loss(&mut g, h_u, h_i, h_n)?;
            parts.bpr = g.value(bpr).item().to_f64();
            terms.push(bpr);
            shared_neg_h = Some((neg.item, h_n));
        }
    }

    if cfg.use_contrastive {
        if let (Some(pos), Some(neg)) = (&plan.c_pos, &plan.c_neg) {
            let (_, h_i) = item_side.expect("item side encoded");
            let (_, h_p) = model.encode(&mut g, &bound, &pos.tokens)?;
            let h_n = match shared_neg_h {
                Some((id, h)) if id == neg.item => h,
                _ => model.encode(&mut g, &bound, &neg.tokens)?.1,
            };
            let c = pair_ranking_loss(&mut g, h_i, h_p, h_n)?;
            parts.contrastive = g.value(c).item().to_f64();
            terms.push(g.scale(c, cfg.alpha));
        }
    }

    let total = g.add_n(&terms)?;
    parts.total = g.value(total).item().to_f64();
    Ok(ExampleLoss {
        graph: g,
        bound,
        total,
        parts,
    })
}
