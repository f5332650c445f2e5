//! Ranking metrics (Recall@n, NDCG@n), the whole-catalog evaluation driver
//! with head/tail user segments, and the single-axis configuration sweep.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{segment_users, InteractionDataset, Split, UserSegments};
use crate::decoder::{constrained_beam_search, filter_seen, DecoderError};
use crate::gid::{
    build_collaborative, build_content, build_iad, build_random, content_vectors, GidAssignment,
    GidError, GidStrategy, GidTrie,
};
use crate::numerics::{Real, Tensor};
use crate::seq2seq::inputs::build_user_input_seeded;
use crate::seq2seq::train::splitmix64;
use crate::seq2seq::{train, Seq2SeqError, Seq2SeqModel, TrainConfig, Vocabulary};
use crate::text::fnv1a;

/// Cutoffs reported by default.
pub const DEFAULT_CUTOFFS: [usize; 3] = [5, 10, 20];

/// Head segment share of the user population.
pub const HEAD_FRACTION: f64 = 0.20;

const EVAL_SALT: u64 = 0x243f_6a88_85a3_08d3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no users with test interactions to evaluate")]
    NoTestData,
    #[error("cutoff list must be non-empty")]
    NoCutoffs,
    #[error("beam width {beam} is narrower than the largest cutoff {n}")]
    BeamBelowCutoff { beam: usize, n: usize },
    #[error("model vocabulary size {model} does not match the dataset ({dataset})")]
    VocabMismatch { model: usize, dataset: usize },
    #[error("invalid sweep: {0}")]
    Sweep(String),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Train(#[from] Seq2SeqError),
    #[error(transparent)]
    Gid(#[from] GidError),
}

/// Evaluation-time knobs, independent of how the model was trained.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Cutoffs `n` for Recall@n / NDCG@n.
    pub cutoffs: Vec<usize>,
    /// Beam width, which is also the candidate-list length per user; must
    /// cover the largest cutoff.
    pub beam: usize,
    /// Number of evaluation passes with distinct input-sampling seeds; the
    /// reported numbers are means over the passes.
    pub repeats: usize,
    /// Base seed; pass `r` derives its sampling seeds from `seed` and `r`.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            beam: 30,
            repeats: 3,
            seed: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Recall@n: `|top-n ∩ truth| / |truth|`. The ground truth must be
/// non-empty; users without relevant items are excluded upstream.
pub fn recall_at_n(ranked: &[usize], truth: &HashSet<usize>, n: usize) -> f64 {
    assert!(!truth.is_empty(), "recall is undefined for an empty ground truth");
    let hits = ranked.iter().take(n).filter(|item| truth.contains(item)).count();
    hits as f64 / truth.len() as f64
}

/// NDCG@n with binary relevance: DCG sums `1/log2(p+1)` over 1-based hit
/// positions `p ≤ n`; the ideal DCG packs `min(|truth|, n)` hits at the top.
pub fn ndcg_at_n(ranked: &[usize], truth: &HashSet<usize>, n: usize) -> f64 {
    assert!(!truth.is_empty(), "ndcg is undefined for an empty ground truth");
    let dcg: f64 = ranked
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, item)| truth.contains(*item))
        .map(|(p, _)| 1.0 / (p as f64 + 2.0).log2())
        .sum();
    let ideal: f64 = (1..=truth.len().min(n))
        .map(|p| 1.0 / (p as f64 + 1.0).log2())
        .sum();
    dcg / ideal
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Metrics at one cutoff, averaged over a user population.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub n: usize,
    pub recall: f64,
    pub ndcg: f64,
}

/// Averaged metrics for one user segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMetrics {
    /// Number of evaluated users in the segment.
    pub users: usize,
    /// One row per cutoff, in the configured order.
    pub rows: Vec<MetricRow>,
}

/// Full evaluation output. `overall` equals the user-count-weighted mean of
/// `head` and `tail` because all three are computed from the same per-user
/// sums.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub overall: SegmentMetrics,
    pub head: SegmentMetrics,
    pub tail: SegmentMetrics,
    /// Users excluded because they have no test interactions.
    pub skipped_users: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Fingerprint of the training + evaluation configuration.
    pub config_hash: u64,
}

impl EvalReport {
    /// Tab-separated rendering: leading `#` metadata lines, a header row,
    /// then one row per (segment, cutoff).
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# config_hash={:016x}", self.config_hash).unwrap();
        writeln!(out, "# seed={}", self.seed).unwrap();
        writeln!(out, "# repeats={}", self.repeats).unwrap();
        writeln!(out, "# filter=seen items (train+val) removed before scoring").unwrap();
        writeln!(out, "# skipped_users={} (no test interactions)", self.skipped_users).unwrap();
        writeln!(out, "segment\tn\trecall\tndcg\tusers").unwrap();
        for (name, seg) in [
            ("overall", &self.overall),
            ("head", &self.head),
            ("tail", &self.tail),
        ] {
            for row in &seg.rows {
                writeln!(
                    out,
                    "{name}\t{}\t{:.6}\t{:.6}\t{}",
                    row.n, row.recall, row.ndcg, seg.users
                )
                .unwrap();
            }
        }
        out
    }
}

/// Stable fingerprint of the configuration pair that produced a report.
pub fn config_hash(tcfg: &TrainConfig, ecfg: &EvalConfig) -> u64 {
    let desc = format!(
        "l={} k={} m={} heads={} enc={} dec={} alpha={} lr={} wd={} batch={} epochs={} \
         patience={} max_len={} ipu={} seed={} eval_beam={} index={} bpr={} contrastive={} \
         content={} | cutoffs={:?} beam={} repeats={} eval_seed={}",
        tcfg.l,
        tcfg.k,
        tcfg.m,
        tcfg.n_heads,
        tcfg.enc_layers,
        tcfg.dec_layers,
        tcfg.alpha,
        tcfg.lr,
        tcfg.weight_decay,
        tcfg.batch_size,
        tcfg.epochs,
        tcfg.patience,
        tcfg.max_len,
        tcfg.items_per_user,
        tcfg.seed,
        tcfg.eval_beam,
        tcfg.use_index,
        tcfg.use_bpr,
        tcfg.use_contrastive,
        tcfg.use_content,
        ecfg.cutoffs,
        ecfg.beam,
        ecfg.repeats,
        ecfg.seed,
    );
    fnv1a(desc.as_bytes())
}

// ---------------------------------------------------------------------------
// Evaluation driver
// ---------------------------------------------------------------------------

/// Rank the whole catalog for every user with test interactions and average
/// Recall@n / NDCG@n per segment. Each of `repeats` passes resamples the
/// user inputs with a distinct seed; per-user scores are means over passes.
/// Users whose train+val items fill the candidate list are still scored on
/// what remains after filtering.
pub fn evaluate<F: Real>(
    model: &Seq2SeqModel<F>,
    trie: &GidTrie,
    ds: &InteractionDataset,
    segments: &UserSegments,
    tcfg: &TrainConfig,
    ecfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let max_n = *ecfg.cutoffs.iter().max().ok_or(EvalError::NoCutoffs)?;
    if ecfg.beam < max_n {
        return Err(EvalError::BeamBelowCutoff { beam: ecfg.beam, n: max_n });
    }
    let vocab = Vocabulary::build(ds);
    if model.cfg.vocab_size != vocab.size() {
        return Err(EvalError::VocabMismatch {
            model: model.cfg.vocab_size,
            dataset: vocab.size(),
        });
    }

    let test = ds.items_by_user(Split::Test);
    let eval_users: Vec<(usize, HashSet<usize>)> = (0..ds.n_users())
        .filter(|&u| !test[u].is_empty())
        .map(|u| (u, test[u].iter().copied().collect()))
        .collect();
    if eval_users.is_empty() {
        return Err(EvalError::NoTestData);
    }
    let skipped_users = ds.n_users() - eval_users.len();

    let repeats = ecfg.repeats.max(1);
    // acc[user][cutoff] = (Σ recall, Σ ndcg) across passes.
    let mut acc = vec![vec![(0.0f64, 0.0f64); ecfg.cutoffs.len()]; eval_users.len()];
    for r in 0..repeats {
        let per_user: Vec<Result<Vec<(f64, f64)>, EvalError>> = eval_users
            .par_iter()
            .map(|&(user, ref truth)| {
                let seed =
                    splitmix64(ecfg.seed ^ EVAL_SALT ^ (((r as u64) << 32) | user as u64));
                let tokens = build_user_input_seeded(user, None, ds, &vocab, tcfg, seed);
                let ranked = constrained_beam_search(model, trie, &tokens, ecfg.beam, ecfg.beam)?;
                let unseen = filter_seen(&ranked, user, ds);
                let items = unseen.items();
                Ok(ecfg
                    .cutoffs
                    .iter()
                    .map(|&n| (recall_at_n(&items, truth, n), ndcg_at_n(&items, truth, n)))
                    .collect())
            })
            .collect();
        for (ui, res) in per_user.into_iter().enumerate() {
            for (ci, (rec, gain)) in res?.into_iter().enumerate() {
                acc[ui][ci].0 += rec;
                acc[ui][ci].1 += gain;
            }
        }
    }

    // Segment sums of per-user means; overall reuses the same sums so the
    // user-count-weighted reconciliation holds by construction.
    let n_cut = ecfg.cutoffs.len();
    let mut head_sum = vec![(0.0f64, 0.0f64); n_cut];
    let mut tail_sum = vec![(0.0f64, 0.0f64); n_cut];
    let (mut n_head, mut n_tail) = (0usize, 0usize);
    for (ui, &(user, _)) in eval_users.iter().enumerate() {
        let (sums, count) = if segments.is_head(user) {
            (&mut head_sum, &mut n_head)
        } else {
            (&mut tail_sum, &mut n_tail)
        };
        *count += 1;
        for (ci, &(rec, gain)) in acc[ui].iter().enumerate() {
            sums[ci].0 += rec / repeats as f64;
            sums[ci].1 += gain / repeats as f64;
        }
    }
    let overall_sum: Vec<(f64, f64)> = head_sum
        .iter()
        .zip(&tail_sum)
        .map(|(h, t)| (h.0 + t.0, h.1 + t.1))
        .collect();

    let segment = |sums: &[(f64, f64)], users: usize| SegmentMetrics {
        users,
        rows: ecfg
            .cutoffs
            .iter()
            .enumerate()
            .map(|(ci, &n)| MetricRow {
                n,
                recall: if users == 0 { 0.0 } else { sums[ci].0 / users as f64 },
                ndcg: if users == 0 { 0.0 } else { sums[ci].1 / users as f64 },
            })
            .collect(),
    };

    Ok(EvalReport {
        overall: segment(&overall_sum, n_head + n_tail),
        head: segment(&head_sum, n_head),
        tail: segment(&tail_sum, n_tail),
        skipped_users,
        repeats,
        seed: ecfg.seed,
        config_hash: config_hash(tcfg, ecfg),
    })
}

// ---------------------------------------------------------------------------
// Configuration sweep
// ---------------------------------------------------------------------------

/// One experiment axis; every variant retrains the model from scratch and
/// evaluates it on the test split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Identifier length `l` over [`SWEEP_LENGTHS`] at the base `K`.
    GidLength,
    /// Cluster count `K` over [`SWEEP_KS`] at the base `l`.
    GidK,
    /// Identifier construction: atomic, random, content-clustered.
    GidStrategy,
    /// Drop one training signal at a time: content tokens, the indexing
    /// loss, the pairwise ranking loss, or the contrastive loss.
    LossAblation,
}

impl SweepAxis {
    pub fn as_label(self) -> &'static str {
        match self {
            SweepAxis::GidLength => "gid-length",
            SweepAxis::GidK => "gid-k",
            SweepAxis::GidStrategy => "gid-strategy",
            SweepAxis::LossAblation => "loss-ablation",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gid-length" => Ok(SweepAxis::GidLength),
            "gid-k" => Ok(SweepAxis::GidK),
            "gid-strategy" => Ok(SweepAxis::GidStrategy),
            "loss-ablation" => Ok(SweepAxis::LossAblation),
            other => Err(format!(
                "unknown sweep axis {other:?} (expected gid-length|gid-k|gid-strategy|loss-ablation)"
            )),
        }
    }
}

/// Identifier lengths covered by the `gid-length` axis.
pub const SWEEP_LENGTHS: [usize; 4] = [1, 2, 3, 4];

/// Cluster counts covered by the `gid-k` axis.
pub const SWEEP_KS: [usize; 4] = [32, 64, 96, 128];

/// One sweep variant with its evaluation outcome.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub label: String,
    pub report: EvalReport,
}

/// All rows of a sweep, rendered as one table line per configuration.
#[derive(Clone, Debug)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub cutoffs: Vec<usize>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Tab-separated rendering with the overall segment per row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# axis={}", self.axis.as_label()).unwrap();
        out.push_str("config\tusers");
        for &n in &self.cutoffs {
            write!(out, "\trecall@{n}\tndcg@{n}").unwrap();
        }
        out.push('\n');
        for row in &self.rows {
            write!(out, "{}\t{}", row.label, row.report.overall.users).unwrap();
            for m in &row.report.overall.rows {
                write!(out, "\t{:.6}\t{:.6}", m.recall, m.ndcg).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Rebuild identifiers with the template's strategy and seed but a new
/// shape. Clustered strategies need the feature matrix they were built
/// from; content features can be recomputed from the dataset.
fn rebuild_gids(
    ds: &InteractionDataset,
    template: &GidAssignment,
    item_vectors: Option<&Tensor<f64>>,
    k: usize,
    l: usize,
) -> Result<GidAssignment, EvalError> {
    match template.strategy {
        GidStrategy::Random => Ok(build_random(ds.n_items(), k, l, template.seed)?),
        GidStrategy::Content => {
            let owned;
            let vectors = match item_vectors {
                Some(v) => v,
                None => {
                    owned = content_vectors(ds);
                    &owned
                }
            };
            Ok(build_content(vectors, k, l, template.seed)?)
        }
        GidStrategy::Collaborative => {
            let vectors = item_vectors.ok_or_else(|| {
                EvalError::Sweep(
                    "re-clustering collaborative identifiers requires the item embeddings"
                        .to_string(),
                )
            })?;
            Ok(build_collaborative(vectors, k, l, template.seed)?)
        }
        GidStrategy::Iad => Err(EvalError::Sweep(
            "atomic identifiers have a fixed shape; sweep gid-length/gid-k with a clustered or \
             random strategy"
                .to_string(),
        )),
    }
}

/// Run one axis of variants: retrain on each configuration, evaluate, and
/// collect a table. `base_gids` is used unchanged by the loss-ablation
/// axis and as the shape/strategy template elsewhere; `item_vectors`
/// supplies the clustering features when identifiers must be rebuilt.
/// `values` overrides the swept lengths or cluster counts on the numeric
/// axes (defaults: [`SWEEP_LENGTHS`] / [`SWEEP_KS`]).
pub fn sweep<F: Real>(
    ds: &InteractionDataset,
    base_gids: &GidAssignment,
    item_vectors: Option<&Tensor<f64>>,
    base: &TrainConfig,
    axis: SweepAxis,
    values: Option<&[usize]>,
    ecfg: &EvalConfig,
) -> Result<SweepTable, EvalError> {
    if values.is_some_and(|v| v.is_empty()) {
        return Err(EvalError::Sweep("the values list must be non-empty".to_string()));
    }
    if values.is_some() && !matches!(axis, SweepAxis::GidLength | SweepAxis::GidK) {
        return Err(EvalError::Sweep(format!(
            "axis {} has a fixed variant set and takes no values",
            axis.as_label()
        )));
    }
    let mut variants: Vec<(String, GidAssignment, TrainConfig)> = Vec::new();
    match axis {
        SweepAxis::GidLength => {
            for &l in values.unwrap_or(&SWEEP_LENGTHS) {
                let gids = rebuild_gids(ds, base_gids, item_vectors, base_gids.k, l)?;
                variants.push((format!("l={l}"), gids, base.clone()));
            }
        }
        SweepAxis::GidK => {
            for &k in values.unwrap_or(&SWEEP_KS) {
                let gids = rebuild_gids(ds, base_gids, item_vectors, k, base_gids.l)?;
                variants.push((format!("k={k}"), gids, base.clone()));
            }
        }
        SweepAxis::GidStrategy => {
            let iad = build_iad(ds.n_items());
            let random = build_random(ds.n_items(), base_gids.k, base_gids.l, base_gids.seed)?;
            let content = build_content(
                &content_vectors(ds),
                base_gids.k,
                base_gids.l,
                base_gids.seed,
            )?;
            for gids in [iad, random, content] {
                variants.push((format!("gid={}", gids.strategy), gids, base.clone()));
            }
        }
        SweepAxis::LossAblation => {
            let toggles: [(&str, fn(&mut TrainConfig)); 4] = [
                ("no-content", |c| c.use_content = false),
                ("no-index", |c| c.use_index = false),
                ("no-bpr", |c| c.use_bpr = false),
                ("no-contrastive", |c| c.use_contrastive = false),
            ];
            for (label, toggle) in toggles {
                let mut cfg = base.clone();
                toggle(&mut cfg);
                variants.push((label.to_string(), base_gids.clone(), cfg));
            }
        }
    }

    let segments = segment_users(ds, HEAD_FRACTION);
    let mut rows = Vec::with_capacity(variants.len());
    for (label, gids, mut tcfg) in variants {
        tcfg.l = gids.l;
        tcfg.k = gids.k;
        let outcome = train::<F>(ds, &gids, &tcfg)?;
        let trie = gids.to_trie()?;
        let report = evaluate(&outcome.model, &trie, ds, &segments, &tcfg, ecfg)?;
        rows.push(SweepRow { label, report });
    }
    Ok(SweepTable {
        axis,
        cutoffs: ecfg.cutoffs.clone(),
        rows,
    })
}
