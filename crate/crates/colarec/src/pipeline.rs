//! Stage orchestration over a run directory with fixed artifact names:
//! `data/` (prepared dataset), `cf.ckpt` (pretrained embeddings),
//! `gids.tsv` (identifier assignment), `model.ckpt` (trained recommender),
//! and `report.tsv` (evaluation or sweep table). Every stage reads prior
//! artifacts from the directory, writes its own atomically, and never
//! mutates its inputs.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cf::{self, CfModel};
use crate::config::{Precision, RunConfig};
use crate::dataset::{
    assemble, ingest, load_prepared, segment_users, split_dataset, write_prepared, DatasetError,
    InteractionDataset,
};
use crate::decoder::{constrained_beam_search, filter_seen, DecoderError, RankedList};
use crate::eval::{
    evaluate, sweep, EvalError, EvalReport, SweepAxis, SweepTable, HEAD_FRACTION,
};
use crate::fsutil::write_atomic;
use crate::gid::{
    build_collaborative, build_content, build_iad, build_random, content_vectors, load_gids,
    save_gids, GidAssignment, GidError, GidStrategy,
};
use crate::numerics::{CheckpointError, NumericsError, Real, Tensor};
use crate::seq2seq::inputs::build_user_input_seeded;
use crate::seq2seq::train::splitmix64;
use crate::seq2seq::{train, Seq2SeqError, Seq2SeqModel, Vocabulary};

/// Prepared-dataset directory inside a run directory.
pub const DATA_DIR: &str = "data";
/// Pretrained collaborative-filtering embeddings.
pub const CF_CHECKPOINT: &str = "cf.ckpt";
/// Identifier assignment table.
pub const GID_FILE: &str = "gids.tsv";
/// Trained recommender parameters.
pub const MODEL_CHECKPOINT: &str = "model.ckpt";
/// Evaluation or sweep output table.
pub const REPORT_FILE: &str = "report.tsv";

const RECOMMEND_SALT: u64 = 0x4528_21e6_38d0_1377;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing {artifact} at {path} ({hint})")]
    MissingArtifact {
        artifact: &'static str,
        path: String,
        hint: &'static str,
    },
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("model was trained on a different dataset (vocabulary {model} vs {dataset})")]
    ModelMismatch { model: usize, dataset: usize },
    #[error("write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Gid(#[from] GidError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] Seq2SeqError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn require(path: PathBuf, artifact: &'static str, hint: &'static str) -> Result<PathBuf, PipelineError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact {
            artifact,
            path: path.display().to_string(),
            hint,
        })
    }
}

/// Load the prepared dataset of a run directory.
pub fn load_data(run: &Path) -> Result<InteractionDataset, PipelineError> {
    let dir = require(
        run.join(DATA_DIR),
        "prepared dataset",
        "run `prepare` first",
    )?;
    Ok(load_prepared(&dir)?)
}

fn load_gid_file(run: &Path) -> Result<GidAssignment, PipelineError> {
    let path = require(
        run.join(GID_FILE),
        "identifier assignment",
        "run `build-gid` first",
    )?;
    Ok(load_gids(&path)?)
}

fn load_cf_f64(run: &Path) -> Result<CfModel<f64>, PipelineError> {
    let path = require(
        run.join(CF_CHECKPOINT),
        "collaborative-filtering checkpoint",
        "run `pretrain-cf` first",
    )?;
    Ok(CfModel::load(&path)?)
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrepareSummary {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub duplicates_collapsed: usize,
    pub edges_dropped_by_core: usize,
}

/// Ingest raw records + content, filter to the k-core, split 8:1:1, and
/// write the prepared dataset into `run/data/`.
pub fn prepare(
    run: &Path,
    records: &Path,
    content: &Path,
    cfg: &RunConfig,
) -> Result<PrepareSummary, PipelineError> {
    let raw = ingest(records, content)?;
    let (mut ds, edges_dropped_by_core) = assemble(&raw, cfg.min_degree);
    split_dataset(&mut ds, cfg.seed);
    write_prepared(&run.join(DATA_DIR), &ds)?;
    Ok(PrepareSummary {
        users: ds.n_users(),
        items: ds.n_items(),
        interactions: ds.interactions.len(),
        duplicates_collapsed: raw.duplicates_collapsed,
        edges_dropped_by_core,
    })
}

// ---------------------------------------------------------------------------
// pretrain-cf
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct CfSummary {
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

/// Pretrain graph collaborative-filtering embeddings and save them to
/// `run/cf.ckpt`.
pub fn pretrain_cf(run: &Path, cfg: &RunConfig) -> Result<CfSummary, PipelineError> {
    let ds = load_data(run)?;
    fn go<F: Real>(run: &Path, ds: &InteractionDataset, cfg: &RunConfig) -> Result<CfSummary, PipelineError> {
        let (model, losses) = cf::pretrain::<F>(ds, &cfg.cf_config())?;
        model.save(&run.join(CF_CHECKPOINT))?;
        Ok(CfSummary {
            epochs: losses.len(),
            final_loss: losses.last().copied(),
        })
    }
    match cfg.precision {
        Precision::F32 => go::<f32>(run, &ds, cfg),
        Precision::F64 => go::<f64>(run, &ds, cfg),
    }
}

// ---------------------------------------------------------------------------
// build-gid
// ---------------------------------------------------------------------------

/// Construct the identifier assignment for the configured strategy and save
/// it to `run/gids.tsv`. The collaborative strategy clusters the pretrained
/// item embeddings; content clusters hashed bag-of-words vectors; random
/// and atomic need no features.
pub fn build_gid(run: &Path, cfg: &RunConfig) -> Result<GidAssignment, PipelineError> {
    let ds = load_data(run)?;
    let assignment = match cfg.gid_strategy {
        GidStrategy::Collaborative => {
            let cf_model = load_cf_f64(run)?;
            build_collaborative(&cf_model.item_emb, cfg.gid_k, cfg.gid_l, cfg.seed)?
        }
        GidStrategy::Content => {
            build_content(&content_vectors(&ds), cfg.gid_k, cfg.gid_l, cfg.seed)?
        }
        GidStrategy::Random => build_random(ds.n_items(), cfg.gid_k, cfg.gid_l, cfg.seed)?,
        GidStrategy::Iad => build_iad(ds.n_items()),
    };
    save_gids(&run.join(GID_FILE), &assignment)?;
    Ok(assignment)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_recall: Option<f64>,
    pub final_train_loss: f64,
    pub diverged: Option<(usize, usize)>,
}

/// Train the recommender on the prepared dataset under the stored
/// identifier assignment and save the best parameters to `run/model.ckpt`.
/// The identifier file's shape (K, l) overrides the config so the model
/// always matches the artifact it is trained against.
pub fn train_model(run: &Path, cfg: &RunConfig) -> Result<TrainSummary, PipelineError> {
    let ds = load_data(run)?;
    let gids = load_gid_file(run)?;
    let mut tcfg = cfg.train_config();
    tcfg.l = gids.l;
    tcfg.k = gids.k;

    fn go<F: Real>(
        run: &Path,
        ds: &InteractionDataset,
        gids: &GidAssignment,
        tcfg: &crate::seq2seq::TrainConfig,
    ) -> Result<TrainSummary, PipelineError> {
        let outcome = train::<F>(ds, gids, tcfg)?;
        outcome.model.save(&run.join(MODEL_CHECKPOINT))?;
        let best = &outcome.trace[outcome.best_epoch.min(outcome.trace.len() - 1)];
        Ok(TrainSummary {
            epochs: outcome.trace.len(),
            best_epoch: outcome.best_epoch,
            best_val_recall: best.val_recall,
            final_train_loss: outcome.trace.last().expect("non-empty trace").train_loss,
            diverged: outcome.diverged,
        })
    }
    match cfg.precision {
        Precision::F32 => go::<f32>(run, &ds, &gids, &tcfg),
        Precision::F64 => go::<f64>(run, &ds, &gids, &tcfg),
    }
}

// ---------------------------------------------------------------------------
// recommend
// ---------------------------------------------------------------------------

/// Resolve a user given either its key or its numeric index.
fn resolve_user(ds: &InteractionDataset, user: &str) -> Result<usize, PipelineError> {
    if let Some(idx) = ds.user_keys.iter().position(|k| k == user) {
        return Ok(idx);
    }
    if let Ok(idx) = user.parse::<usize>() {
        if idx < ds.n_users() {
            return Ok(idx);
        }
    }
    Err(PipelineError::UnknownUser(user.to_string()))
}

/// Generate the top `topn` unseen recommendations for one user: beam-search
/// the identifier trie, drop the user's train+val items, truncate. Returns
/// the resolved user index and the ranked (item, log-score) list.
pub fn recommend(
    run: &Path,
    cfg: &RunConfig,
    user: &str,
    topn: usize,
) -> Result<(usize, RankedList), PipelineError> {
    let ds = load_data(run)?;
    let gids = load_gid_file(run)?;
    let user = resolve_user(&ds, user)?;
    let trie = gids.to_trie()?;
    let model_path = require(
        run.join(MODEL_CHECKPOINT),
        "trained model",
        "run `train` first",
    )?;

    fn go<F: Real>(
        model_path: &Path,
        ds: &InteractionDataset,
        trie: &crate::gid::GidTrie,
        cfg: &RunConfig,
        gids: &GidAssignment,
        user: usize,
        topn: usize,
    ) -> Result<RankedList, PipelineError> {
        let model = Seq2SeqModel::<F>::load(model_path)?;
        let vocab = Vocabulary::build(ds);
        if model.cfg.vocab_size != vocab.size() {
            return Err(PipelineError::ModelMismatch {
                model: model.cfg.vocab_size,
                dataset: vocab.size(),
            });
        }
        let mut tcfg = cfg.train_config();
        tcfg.l = gids.l;
        tcfg.k = gids.k;
        let seed = splitmix64(cfg.seed ^ RECOMMEND_SALT ^ user as u64);
        let tokens = build_user_input_seeded(user, None, ds, &vocab, &tcfg, seed);
        let beam = cfg.beam.max(topn);
        let ranked = constrained_beam_search(&model, trie, &tokens, beam, beam)?;
        let mut unseen = filter_seen(&ranked, user, ds);
        unseen.entries.truncate(topn);
        Ok(unseen)
    }
    let list = match cfg.precision {
        Precision::F32 => go::<f32>(&model_path, &ds, &trie, cfg, &gids, user, topn)?,
        Precision::F64 => go::<f64>(&model_path, &ds, &trie, cfg, &gids, user, topn)?,
    };
    Ok((user, list))
}

// ---------------------------------------------------------------------------
// evaluate / sweep
// ---------------------------------------------------------------------------

fn write_report(run: &Path, body: &str) -> Result<PathBuf, PipelineError> {
    let path = run.join(REPORT_FILE);
    write_atomic(&path, body.as_bytes()).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}

/// Evaluate the trained model on the test split and write `run/report.tsv`.
pub fn evaluate_run(run: &Path, cfg: &RunConfig) -> Result<EvalReport, PipelineError> {
    let ds = load_data(run)?;
    let gids = load_gid_file(run)?;
    let trie = gids.to_trie()?;
    let model_path = require(
        run.join(MODEL_CHECKPOINT),
        "trained model",
        "run `train` first",
    )?;
    let segments = segment_users(&ds, HEAD_FRACTION);
    let mut tcfg = cfg.train_config();
    tcfg.l = gids.l;
    tcfg.k = gids.k;
    let ecfg = cfg.eval_config();

    let report = match cfg.precision {
        Precision::F32 => {
            let model = Seq2SeqModel::<f32>::load(&model_path)?;
            evaluate(&model, &trie, &ds, &segments, &tcfg, &ecfg)?
        }
        Precision::F64 => {
            let model = Seq2SeqModel::<f64>::load(&model_path)?;
            evaluate(&model, &trie, &ds, &segments, &tcfg, &ecfg)?
        }
    };
    write_report(run, &report.to_tsv())?;
    Ok(report)
}

/// Run one sweep axis (retraining per variant) and write the table to
/// `run/report.tsv`. Rebuilding collaborative identifiers needs the
/// pretrained embeddings from `run/cf.ckpt`.
pub fn sweep_run(
    run: &Path,
    cfg: &RunConfig,
    axis: SweepAxis,
    values: Option<&[usize]>,
) -> Result<SweepTable, PipelineError> {
    let ds = load_data(run)?;
    let gids = load_gid_file(run)?;
    let needs_vectors = matches!(axis, SweepAxis::GidLength | SweepAxis::GidK)
        && gids.strategy == GidStrategy::Collaborative;
    let vectors: Option<Tensor<f64>> = if needs_vectors {
        Some(load_cf_f64(run)?.item_emb)
    } else {
        None
    };
    let mut tcfg = cfg.train_config();
    tcfg.l = gids.l;
    tcfg.k = gids.k;
    let ecfg = cfg.eval_config();

    let table = match cfg.precision {
        Precision::F32 => sweep::<f32>(&ds, &gids, vectors.as_ref(), &tcfg, axis, values, &ecfg)?,
        Precision::F64 => sweep::<f64>(&ds, &gids, vectors.as_ref(), &tcfg, axis, values, &ecfg)?,
    };
    write_report(run, &table.to_tsv())?;
    Ok(table)
}
