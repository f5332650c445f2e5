//! Trie-constrained beam search over identifier tokens, plus the exact
//! exhaustive ranker used to validate it. Both accumulate log-probabilities
//! with the identical operation order, so whenever the beam is at least as
//! wide as the leaf count the two produce bitwise-equal rankings.

use thiserror::Error;

use crate::dataset::{InteractionDataset, Split};
use crate::gid::GidTrie;
use crate::numerics::{BoundParams, Graph, Real, Var};
use crate::seq2seq::{Seq2SeqError, Seq2SeqModel};

/// Most leaves the exhaustive ranker will enumerate.
pub const EXHAUSTIVE_LEAF_LIMIT: usize = 100_000;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("beam width {beam} is narrower than the requested top-{topn}")]
    BeamTooNarrow { beam: usize, topn: usize },
    #[error("trie holds no items")]
    EmptyTrie,
    #[error("trie depth {trie} does not match model identifier length {model}")]
    DepthMismatch { trie: usize, model: usize },
    #[error("exhaustive ranking over {leaves} leaves exceeds the {max} guard")]
    TooManyLeaves { leaves: usize, max: usize },
    #[error(transparent)]
    Model(#[from] Seq2SeqError),
}

/// Ranked items with their sequence log-probabilities, scores
/// non-increasing, ties broken by ascending item index.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub entries: Vec<(usize, f64)>,
}

impl RankedList {
    pub fn items(&self) -> Vec<usize> {
        self.entries.iter().map(|&(i, _)| i).collect()
    }
}

/// One live hypothesis during the search.
#[derive(Clone, Debug)]
struct BeamEntry {
    node: usize,
    prefix: Vec<usize>,
    score: f64,
}

/// The search frontier: entries kept sorted by score descending, ties by
/// lexicographically ascending prefix, truncated to the beam width.
struct Beam {
    entries: Vec<BeamEntry>,
    width: usize,
}

impl Beam {
    fn prune(&mut self) {
        self.entries.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("finite scores")
                .then_with(|| a.prefix.cmp(&b.prefix))
        });
        self.entries.truncate(self.width);
    }
}

/// Shared forward-pass state for one user's search.
struct Scorer<'a, F: Real> {
    model: &'a Seq2SeqModel<F>,
    graph: Graph<F>,
    bound: BoundParams,
    enc_seq: Var,
}

impl<'a, F: Real> Scorer<'a, F> {
    fn new(model: &'a Seq2SeqModel<F>, user_tokens: &[usize]) -> Result<Self, DecoderError> {
        let mut graph = Graph::new();
        let bound = BoundParams::bind(&mut graph, &model.store);
        let (enc_seq, _) = model.encode(&mut graph, &bound, user_tokens)?;
        Ok(Scorer {
            model,
            graph,
            bound,
            enc_seq,
        })
    }

    /// Log-probabilities over the K tokens at position `t` given `prefix`.
    fn log_probs(&mut self, prefix: &[usize], t: usize) -> Result<Vec<f64>, DecoderError> {
        let d = self
            .model
            .decode_step(&mut self.graph, &self.bound, self.enc_seq, prefix)?;
        let lp = self
            .model
            .token_log_distribution(&mut self.graph, &self.bound, d, t)?;
        Ok(self.graph.value(lp).to_f64_vec())
    }
}

fn check_trie<F: Real>(model: &Seq2SeqModel<F>, trie: &GidTrie) -> Result<(), DecoderError> {
    if trie.n_leaves() == 0 {
        return Err(DecoderError::EmptyTrie);
    }
    if trie.depth() != model.cfg.l {
        return Err(DecoderError::DepthMismatch {
            trie: trie.depth(),
            model: model.cfg.l,
        });
    }
    Ok(())
}

/// Beam-search the trie for the `topn` most probable items given the
/// user's encoded context. At every step only tokens leading to populated
/// subtrees are expanded, so each returned identifier is a trie leaf.
pub fn constrained_beam_search<F: Real>(
    model: &Seq2SeqModel<F>,
    trie: &GidTrie,
    user_tokens: &[usize],
    beam_width: usize,
    topn: usize,
) -> Result<RankedList, DecoderError> {
    if beam_width < topn {
        return Err(DecoderError::BeamTooNarrow {
            beam: beam_width,
            topn,
        });
    }
    check_trie(model, trie)?;
    let mut scorer = Scorer::new(model, user_tokens)?;
    let mut beam = Beam {
        entries: vec![BeamEntry {
            node: GidTrie::ROOT,
            prefix: Vec::new(),
            score: 0.0,
        }],
        width: beam_width,
    };
    for t in 0..trie.depth() {
        let mut next = Vec::new();
        for entry in &beam.entries {
            let lp = scorer.log_probs(&entry.prefix, t)?;
            for &(token, child) in trie.children(entry.node) {
                let mut prefix = entry.prefix.clone();
                prefix.push(token);
                next.push(BeamEntry {
                    node: child,
                    prefix,
                    score: entry.score + lp[token],
                });
            }
        }
        beam.entries = next;
        beam.prune();
    }
    let mut entries: Vec<(usize, f64)> = beam
        .entries
        .iter()
        .map(|e| (trie.item(e.node).expect("depth-l node is a leaf"), e.score))
        .collect();
    sort_final(&mut entries);
    entries.truncate(topn);
    Ok(RankedList { entries })
}

/// Score every leaf of the trie exactly, in the same operation order the
/// beam uses, and rank all of them. The oracle for beam-search tests and
/// the reference ranker for small catalogs.
pub fn exhaustive_rank<F: Real>(
    model: &Seq2SeqModel<F>,
    trie: &GidTrie,
    user_tokens: &[usize],
) -> Result<RankedList, DecoderError> {
    check_trie(model, trie)?;
    if trie.n_leaves() > EXHAUSTIVE_LEAF_LIMIT {
        return Err(DecoderError::TooManyLeaves {
            leaves: trie.n_leaves(),
            max: EXHAUSTIVE_LEAF_LIMIT,
        });
    }
    let mut scorer = Scorer::new(model, user_tokens)?;
    let mut entries = Vec::with_capacity(trie.n_leaves());
    // iterative depth-first walk expanding children in ascending token
    // order; per node one decoder pass, exactly like one beam hypothesis
    let mut stack = vec![(GidTrie::ROOT, Vec::<usize>::new(), 0.0f64)];
    while let Some((node, prefix, score)) = stack.pop() {
        if prefix.len() == trie.depth() {
            entries.push((trie.item(node).expect("leaf"), score));
            continue;
        }
        let lp = scorer.log_probs(&prefix, prefix.len())?;
        // reverse so the stack pops tokens in ascending order
        for &(token, child) in trie.children(node).iter().rev() {
            let mut p = prefix.clone();
            p.push(token);
            stack.push((child, p, score + lp[token]));
        }
    }
    sort_final(&mut entries);
    Ok(RankedList { entries })
}

fn sort_final(entries: &mut [(usize, f64)]) {
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite scores")
            .then_with(|| a.0.cmp(&b.0))
    });
}

/// Drop the user's train and validation items from a ranking, preserving
/// order — the test-time protocol scores only unseen items.
pub fn filter_seen(list: &RankedList, user: usize, ds: &InteractionDataset) -> RankedList {
    let mut seen = vec![false; ds.item_keys.len()];
    for it in &ds.interactions {
        if it.user == user && matches!(it.split, Split::Train | Split::Val) {
            seen[it.item] = true;
        }
    }
    RankedList {
        entries: list
            .entries
            .iter()
            .filter(|&&(i, _)| !seen[i])
            .copied()
            .collect(),
    }
}
