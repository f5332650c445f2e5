//! The training loop: shuffled mini-batches over train interactions,
//! per-example graphs evaluated in parallel with ordered deterministic
//! gradient aggregation, AdamW updates, per-epoch validation Recall@5 via
//! the constrained ranker, best-validation checkpointing, early stopping,
//! and a non-finite-loss abort that preserves the last good parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::inputs::build_user_input_seeded;
use super::loss::{example_loss, ExamplePlan, Sampler};
use super::model::Seq2SeqModel;
use super::vocab::Vocabulary;
use super::{Seq2SeqError, TrainConfig};
use crate::dataset::{InteractionDataset, Split};
use crate::decoder::constrained_beam_search;
use crate::gid::{GidAssignment, GidTrie};
use crate::numerics::{sum_grad_sets, AdamW, AdamWConfig, Real};

const SHUFFLE_SALT: u64 = 0x01d2_77f3_9a8c_4b61;
const PLAN_SALT: u64 = 0x6e3a_55c1_0f47_d98b;
const VAL_SALT: u64 = 0xb7e1_5162_8aed_2a6a;

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// One epoch's log line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// mean over batches of the batch-mean joint loss
    pub train_loss: f64,
    /// Recall@5 on validation interactions; `None` when no user has any
    pub val_recall: Option<f64>,
}

/// The result of a training run.
pub struct TrainOutcome<F: Real> {
    /// best-validation parameters (final-epoch parameters when the dataset
    /// has no validation interactions)
    pub model: Seq2SeqModel<F>,
    pub trace: Vec<EpochStats>,
    pub best_epoch: usize,
    /// set when a batch loss went non-finite: (epoch, batch). Training
    /// stops there and the poisoned update is never applied.
    pub diverged: Option<(usize, usize)>,
}

struct ValUser {
    user: usize,
    truth: Vec<usize>,
    train_items: Vec<usize>,
}

/// Mean Recall@5 over users holding validation items: rank with the beam,
/// hide the user's train items, score the top five of the rest.
fn validation_recall<F: Real>(
    model: &Seq2SeqModel<F>,
    trie: &GidTrie,
    ds: &InteractionDataset,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    val_users: &[ValUser],
) -> Result<Option<f64>, Seq2SeqError> {
    if val_users.is_empty() {
        return Ok(None);
    }
    let recalls: Result<Vec<f64>, Seq2SeqError> = val_users
        .par_iter()
        .map(|vu| {
            let seed = splitmix64(cfg.seed ^ VAL_SALT ^ vu.user as u64);
            let tokens = build_user_input_seeded(vu.user, None, ds, vocab, cfg, seed);
            let ranked =
                constrained_beam_search(model, trie, &tokens, cfg.eval_beam, cfg.eval_beam)
                    .map_err(|e| Seq2SeqError::Validation(e.to_string()))?;
            let hits = ranked
                .entries
                .iter()
                .filter(|&&(i, _)| vu.train_items.binary_search(&i).is_err())
                .take(5)
                .filter(|&&(i, _)| vu.truth.binary_search(&i).is_ok())
                .count();
            Ok(hits as f64 / vu.truth.len() as f64)
        })
        .collect();
    let recalls = recalls?;
    Ok(Some(recalls.iter().sum::<f64>() / recalls.len() as f64))
}

/// Train a fresh model on the train split. Deterministic per config seed:
/// batch order, example sampling, and validation inputs are all keyed off
/// it, and gradient aggregation is ordered.
pub fn train<F: Real>(
    ds: &InteractionDataset,
    gids: &GidAssignment,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>, Seq2SeqError> {
    let vocab = Vocabulary::build(ds);
    let mut model = Seq2SeqModel::<F>::init(cfg.model_config(vocab.size()), cfg.seed);
    let sampler = Sampler::new(ds, gids, &vocab, cfg)?;
    let trie = gids.to_trie()?;

    let train_pairs: Vec<(usize, usize)> = ds
        .interactions
        .iter()
        .filter(|it| it.split == Split::Train)
        .map(|it| (it.user, it.item))
        .collect();
    if train_pairs.is_empty() {
        return Err(Seq2SeqError::NoTrainingData);
    }

    let train_by_user = ds.items_by_user(Split::Train);
    let mut val_users: Vec<ValUser> = ds
        .items_by_user(Split::Val)
        .into_iter()
        .enumerate()
        .filter(|(_, items)| !items.is_empty())
        .map(|(user, mut truth)| {
            truth.sort_unstable();
            let mut train_items = train_by_user[user].clone();
            train_items.sort_unstable();
            ValUser {
                user,
                truth,
                train_items,
            }
        })
        .collect();
    val_users.sort_by_key(|vu| vu.user);

    let mut opt = AdamW::new(
        &model.store,
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
    );
    opt.freeze(model.store.id_by_name("model_meta")?);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ SHUFFLE_SALT));
    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, Seq2SeqModel<F>)> = None;
    let mut diverged = None;
    let mut last_epoch = 0;

    'epochs: for epoch in 0..cfg.epochs {
        last_epoch = epoch;
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let plans: Vec<ExamplePlan> = chunk
                .iter()
                .map(|&idx| {
                    let (u, i) = train_pairs[idx];
                    let seed =
                        splitmix64(cfg.seed ^ PLAN_SALT ^ ((epoch as u64) << 32 | idx as u64));
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    sampler.plan(u, i, &mut rng)
                })
                .collect();

            let per_example: Result<Vec<_>, Seq2SeqError> = plans
                .par_iter()
                .map(|plan| {
                    let el = example_loss(&model, plan, cfg)?;
                    let grads = el.grads(&model.store)?;
                    Ok((grads, el.parts.total))
                })
                .collect();
            let per_example = per_example?;

            let batch_loss =
                per_example.iter().map(|(_, t)| *t).sum::<f64>() / per_example.len() as f64;
            if !batch_loss.is_finite() {
                diverged = Some((epoch, batch_idx));
                break 'epochs;
            }
            loss_sum += batch_loss;
            n_batches += 1;

            // mean-of-batch gradient: ordered sum of per-example gradients
            // scaled by 1/B
            let mut grads = sum_grad_sets(per_example.into_iter().map(|(g, _)| g).collect());
            let inv = F::from_f64(1.0 / chunk.len() as f64);
            for t in &mut grads {
                for x in t.data_mut() {
                    *x = *x * inv;
                }
            }
            opt.step(&mut model.store, &grads);
        }

        let train_loss = loss_sum / n_batches.max(1) as f64;
        let val_recall = validation_recall(&model, &trie, ds, &vocab, cfg, &val_users)?;
        trace.push(EpochStats {
            epoch,
            train_loss,
            val_recall,
        });

        if let Some(r) = val_recall {
            let improved = best.as_ref().map_or(true, |(b, _, _)| r > *b);
            if improved {
                best = Some((r, epoch, model.clone()));
            } else if epoch - best.as_ref().expect("set on first epoch").1 >= cfg.patience {
                break;
            }
        }
    }

    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, last_epoch),
    };
    Ok(TrainOutcome {
        model,
        trace,
        best_epoch,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Interaction;
    use crate::gid::{build_random, GidStrategy};

    /// 6 users x 12 items with wrap-around interactions, one val item per
    /// user, tiny content.
    fn dataset() -> InteractionDataset {
        let n_users = 6;
        let n_items = 12;
        let mut interactions = Vec::new();
        for u in 0..n_users {
            for j in 0..4 {
                interactions.push(Interaction {
                    user: u,
                    item: (u * 2 + j) % n_items,
                    split: if j == 3 { Split::Val } else { Split::Train },
                });
            }
        }
        InteractionDataset {
            user_keys: (0..n_users).map(|u| format!("u{u}")).collect(),
            item_keys: (0..n_items).map(|i| format!("i{i}")).collect(),
            interactions,
            content: (0..n_items)
                .map(|i| vec![("category".to_string(), format!("c{}", i % 3))])
                .collect(),
        }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            l: 2,
            k: 4,
            m: 8,
            n_heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            batch_size: 8,
            epochs: 2,
            max_len: 32,
            items_per_user: 3,
            eval_beam: 12,
            ..TrainConfig::default()
        }
    }

    fn gids() -> GidAssignment {
        build_random(12, 4, 2, 5).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let ds = dataset();
        let mut cfg = tiny_cfg();
        cfg.lr = 0.0;
        cfg.epochs = 1;
        let out = train::<f64>(&ds, &gids(), &cfg).unwrap();
        let vocab = Vocabulary::build(&ds);
        let fresh = Seq2SeqModel::<f64>::init(cfg.model_config(vocab.size()), cfg.seed);
        for (name, t) in fresh.store.iter() {
            let trained = out.model.store.get(out.model.store.id_by_name(name).unwrap());
            assert_eq!(t.data(), trained.data(), "{name} moved");
        }
    }

    #[test]
    fn same_seed_reproduces_the_loss_trace_exactly() {
        let ds = dataset();
        let cfg = tiny_cfg();
        let a = train::<f32>(&ds, &gids(), &cfg).unwrap();
        let b = train::<f32>(&ds, &gids(), &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.best_epoch, b.best_epoch);
    }

    #[test]
    fn rec_loss_drops_below_the_uniform_baseline() {
        // ablated to the recommendation term only, the reported loss is
        // exactly L_rec; after 20 epochs at a healthy lr it must beat a
        // uniform-guessing model's l*ln(K)
        let ds = dataset();
        let mut cfg = tiny_cfg();
        cfg.use_index = false;
        cfg.use_bpr = false;
        cfg.use_contrastive = false;
        cfg.lr = 3e-3;
        cfg.epochs = 20;
        cfg.patience = 100;
        let out = train::<f64>(&ds, &gids(), &cfg).unwrap();
        let uniform = cfg.l as f64 * (cfg.k as f64).ln();
        let last = out.trace.last().unwrap().train_loss;
        assert!(
            last < uniform,
            "loss {last:.4} did not beat uniform {uniform:.4}"
        );
        assert!(out.diverged.is_none());
    }

    #[test]
    fn constant_validation_stops_after_patience_epochs() {
        // lr = 0 freezes the model, so validation recall never improves
        // after the first epoch; with patience 1 the loop exits at epoch 1
        let ds = dataset();
        let mut cfg = tiny_cfg();
        cfg.lr = 0.0;
        cfg.epochs = 30;
        cfg.patience = 1;
        let out = train::<f64>(&ds, &gids(), &cfg).unwrap();
        assert_eq!(out.trace.len(), 2);
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn non_finite_loss_aborts_without_applying_the_update() {
        let ds = dataset();
        let cfg = tiny_cfg();
        // poison one weight so the very first batch loss is NaN
        let vocab = Vocabulary::build(&ds);
        let gids = gids();
        let mut model = Seq2SeqModel::<f64>::init(cfg.model_config(vocab.size()), cfg.seed);
        let tok = model.store.id_by_name("tok_embedding").unwrap();
        model.store.get_mut(tok).row_mut(Vocabulary::TASK_USER)[0] = f64::NAN;
        // drive the internals the way train() does, via a plan evaluation,
        // to confirm the loss is indeed non-finite...
        let sampler = Sampler::new(&ds, &gids, &vocab, &cfg).unwrap();
        let plan = sampler.plan(0, 0, &mut ChaCha8Rng::seed_from_u64(0));
        let el = example_loss(&model, &plan, &cfg).unwrap();
        assert!(!el.parts.total.is_finite());
        let _ = el;
        // ...then check the public contract on a run that diverges: an
        // absurd learning rate blows the weights up within a few batches
        let mut wild = cfg.clone();
        wild.lr = 1e18;
        wild.epochs = 50;
        wild.patience = 1000;
        let out = train::<f64>(&ds, &gids, &wild).unwrap();
        let (epoch, _) = out.diverged.expect("a 1e18 learning rate must diverge");
        // the trace holds only fully completed epochs
        assert!(out.trace.len() <= epoch + 1);
    }

    #[test]
    fn strategy_field_of_assignment_is_incidental_to_training() {
        // training consumes gid tokens only; relabeling the strategy tag
        // must not change anything
        let ds = dataset();
        let mut cfg = tiny_cfg();
        cfg.epochs = 1;
        let mut g1 = gids();
        let a = train::<f64>(&ds, &g1, &cfg).unwrap();
        g1.strategy = GidStrategy::Content;
        let b = train::<f64>(&ds, &g1, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
    }
}
