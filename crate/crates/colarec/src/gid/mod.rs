//! Generative identifiers: every item gets a length-`l` sequence of tokens
//! in `[0, K)`. The collaborative and content strategies build the sequence
//! hierarchically with capacity-constrained K-means so that similar items
//! share prefixes; random and atomic-identifier variants exist for
//! ablations.

mod kmeans;
mod trie;

pub use kmeans::{constrained_kmeans, sse_of};
pub use trie::GidTrie;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::InteractionDataset;
use crate::fsutil;
use crate::numerics::Tensor;
use crate::text::{hashed_bow, tokenize};

/// Bucket count for hashed content bag-of-words vectors.
pub const CONTENT_VECTOR_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum GidError {
    #[error(
        "cannot encode {n_items} items with K={k}, l={l}: capacity K^l = {capacity} is too small"
    )]
    CapacityExceeded {
        n_items: usize,
        k: usize,
        l: usize,
        capacity: u128,
    },
    #[error("infeasible clustering: {n} points into {k} clusters of capacity {capacity}")]
    InfeasibleClustering { n: usize, k: usize, capacity: usize },
    #[error("items {item_a} and {item_b} received the same identifier")]
    DuplicateGid { item_a: usize, item_b: usize },
    #[error("identifier violates K={k}: token {token} at item {item}")]
    TokenOutOfRange { item: usize, token: usize, k: usize },
    #[error("level-{level} node over capacity: {count} items > {capacity}")]
    CapacityViolated {
        level: usize,
        count: usize,
        capacity: usize,
    },
    #[error("gid io on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed identifier file: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
}

/// How identifiers were constructed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GidStrategy {
    /// Hierarchical constrained K-means over collaborative item embeddings.
    Collaborative,
    /// Same clustering over hashed content bag-of-words vectors.
    Content,
    /// Uniformly sampled distinct token sequences.
    Random,
    /// Atomic identifiers: l=1, one unique token per item.
    Iad,
}

impl GidStrategy {
    /// Clustering strategies promise the per-level capacity invariant.
    pub fn is_clustered(self) -> bool {
        matches!(self, GidStrategy::Collaborative | GidStrategy::Content)
    }
}

impl fmt::Display for GidStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GidStrategy::Collaborative => "collaborative",
            GidStrategy::Content => "content",
            GidStrategy::Random => "random",
            GidStrategy::Iad => "iad",
        };
        write!(f, "{s}")
    }
}

impl FromStr for GidStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "collaborative" => Ok(GidStrategy::Collaborative),
            "content" => Ok(GidStrategy::Content),
            "random" => Ok(GidStrategy::Random),
            "iad" => Ok(GidStrategy::Iad),
            other => Err(format!(
                "unknown identifier strategy {other:?} (expected collaborative|content|random|iad)"
            )),
        }
    }
}

/// Per-item identifier assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GidAssignment {
    pub strategy: GidStrategy,
    pub k: usize,
    pub l: usize,
    pub seed: u64,
    /// item index → tokens (length exactly `l`, each in `[0, k)`).
    pub gids: Vec<Vec<usize>>,
}

impl GidAssignment {
    pub fn n_items(&self) -> usize {
        self.gids.len()
    }

    pub fn gid(&self, item: usize) -> &[usize] {
        &self.gids[item]
    }

    /// Check the published invariants: token ranges, bijectivity, and (for
    /// clustering strategies) the per-level capacity bound `K^(l-t)`.
    pub fn verify(&self) -> Result<(), GidError> {
        let mut seen: HashMap<&[usize], usize> = HashMap::new();
        for (item, gid) in self.gids.iter().enumerate() {
            debug_assert_eq!(gid.len(), self.l);
            for &tok in gid {
                if tok >= self.k {
                    return Err(GidError::TokenOutOfRange {
                        item,
                        token: tok,
                        k: self.k,
                    });
                }
            }
            if let Some(&other) = seen.get(gid.as_slice()) {
                return Err(GidError::DuplicateGid {
                    item_a: other,
                    item_b: item,
                });
            }
            seen.insert(gid.as_slice(), item);
        }
        if self.strategy.is_clustered() {
            for t in 1..self.l {
                let capacity = self.k.pow((self.l - t) as u32);
                let mut counts: HashMap<&[usize], usize> = HashMap::new();
                for gid in &self.gids {
                    *counts.entry(&gid[..t]).or_insert(0) += 1;
                }
                for (_, count) in counts {
                    if count > capacity {
                        return Err(GidError::CapacityViolated {
                            level: t,
                            count,
                            capacity,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_trie(&self) -> Result<GidTrie, GidError> {
        GidTrie::from_assignment(self)
    }
}

fn check_total_capacity(n_items: usize, k: usize, l: usize) -> Result<(), GidError> {
    let capacity = (k as u128).saturating_pow(l as u32);
    if (n_items as u128) > capacity {
        return Err(GidError::CapacityExceeded {
            n_items,
            k,
            l,
            capacity,
        });
    }
    Ok(())
}

/// Hierarchical construction shared by the collaborative and content
/// strategies: levels `1..l` cluster each node's items into K groups with
/// capacity `K^(l-t)`; the leaf level hands out distinct tokens within each
/// node from a seeded random permutation.
fn build_hierarchical(
    points: &Tensor<f64>,
    k: usize,
    l: usize,
    seed: u64,
    strategy: GidStrategy,
) -> Result<GidAssignment, GidError> {
    let n = points.rows();
    assert!(k >= 2, "clustered strategies need K >= 2");
    assert!(l >= 1, "identifier length must be at least 1");
    check_total_capacity(n, k, l)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gids = vec![vec![0usize; l]; n];
    let mut nodes: Vec<Vec<usize>> = vec![(0..n).collect()];
    for t in 1..l {
        let capacity = k.pow((l - t) as u32);
        let mut next = Vec::new();
        for node in &nodes {
            let sub = subset_rows(points, node);
            let labels = constrained_kmeans(&sub, k, capacity, rng.gen())?;
            let mut children: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (pos, &item) in node.iter().enumerate() {
                gids[item][t - 1] = labels[pos];
                children[labels[pos]].push(item);
            }
            next.extend(children.into_iter().filter(|c| !c.is_empty()));
        }
        nodes = next;
    }
    for node in &nodes {
        debug_assert!(node.len() <= k, "leaf node exceeds fan-out");
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        for (pos, &item) in node.iter().enumerate() {
            gids[item][l - 1] = perm[pos];
        }
    }

    let assignment = GidAssignment {
        strategy,
        k,
        l,
        seed,
        gids,
    };
    assignment.verify()?;
    Ok(assignment)
}

fn subset_rows(points: &Tensor<f64>, rows: &[usize]) -> Tensor<f64> {
    let d = points.cols();
    let mut data = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        data.extend_from_slice(points.row(r));
    }
    Tensor::from_vec(&[rows.len(), d], data).expect("consistent dims")
}

/// Identifiers from collaborative item embeddings (one row per item).
pub fn build_collaborative(
    embeddings: &Tensor<f64>,
    k: usize,
    l: usize,
    seed: u64,
) -> Result<GidAssignment, GidError> {
    build_hierarchical(embeddings, k, l, seed, GidStrategy::Collaborative)
}

/// Identifiers from content vectors (one row per item); see
/// [`content_vectors`] for the standard featurization.
pub fn build_content(
    content_vectors: &Tensor<f64>,
    k: usize,
    l: usize,
    seed: u64,
) -> Result<GidAssignment, GidError> {
    build_hierarchical(content_vectors, k, l, seed, GidStrategy::Content)
}

/// Uniformly sampled distinct token sequences.
pub fn build_random(n_items: usize, k: usize, l: usize, seed: u64) -> Result<GidAssignment, GidError> {
    check_total_capacity(n_items, k, l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = (k as u128).saturating_pow(l as u32);
    let gids = if space <= 1 << 22 && (n_items as u128) * 2 >= space {
        // dense regime: enumerate the whole space and take a shuffled prefix
        let mut all: Vec<Vec<usize>> = Vec::with_capacity(space as usize);
        let mut cur = vec![0usize; l];
        loop {
            all.push(cur.clone());
            let mut pos = l;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                cur[pos] += 1;
                if cur[pos] < k {
                    break;
                }
                cur[pos] = 0;
                if pos == 0 {
                    pos = usize::MAX;
                    break;
                }
            }
            if pos == usize::MAX {
                break;
            }
        }
        all.shuffle(&mut rng);
        all.truncate(n_items);
        all
    } else {
        let mut seen = std::collections::HashSet::with_capacity(n_items);
        let mut out = Vec::with_capacity(n_items);
        while out.len() < n_items {
            let cand: Vec<usize> = (0..l).map(|_| rng.gen_range(0..k)).collect();
            if seen.insert(cand.clone()) {
                out.push(cand);
            }
        }
        out
    };
    let assignment = GidAssignment {
        strategy: GidStrategy::Random,
        k,
        l,
        seed,
        gids,
    };
    assignment.verify()?;
    Ok(assignment)
}

/// Atomic identifiers: length 1, token = item index, K = item count.
pub fn build_iad(n_items: usize) -> GidAssignment {
    GidAssignment {
        strategy: GidStrategy::Iad,
        k: n_items.max(1),
        l: 1,
        seed: 0,
        gids: (0..n_items).map(|i| vec![i]).collect(),
    }
}

/// Standard content featurization: term-frequency bag-of-words over each
/// item's attribute values, hashed into [`CONTENT_VECTOR_DIM`] buckets.
pub fn content_vectors(ds: &InteractionDataset) -> Tensor<f64> {
    let mut data = Vec::with_capacity(ds.n_items() * CONTENT_VECTOR_DIM);
    for pairs in &ds.content {
        let terms: Vec<String> = pairs
            .iter()
            .flat_map(|(_, v)| tokenize(v))
            .collect();
        data.extend(hashed_bow(&terms, CONTENT_VECTOR_DIM));
    }
    Tensor::from_vec(&[ds.n_items(), CONTENT_VECTOR_DIM], data).expect("consistent dims")
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

/// Write `item_index<TAB>z1,z2,...,zl` lines with a header comment carrying
/// the strategy and parameters.
pub fn save_gids(path: &Path, assignment: &GidAssignment) -> Result<(), GidError> {
    let mut out = format!(
        "# strategy={} K={} l={} seed={}\n",
        assignment.strategy, assignment.k, assignment.l, assignment.seed
    );
    for (item, gid) in assignment.gids.iter().enumerate() {
        let toks = gid
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&format!("{item}\t{toks}\n"));
    }
    fsutil::write_atomic(path, out.as_bytes()).map_err(|e| GidError::Io {
        path: path.to_string_lossy().into_owned(),
        source: e,
    })
}

pub fn load_gids(path: &Path) -> Result<GidAssignment, GidError> {
    let display = path.to_string_lossy().into_owned();
    let text = std::fs::read_to_string(path).map_err(|e| GidError::Io {
        path: display.clone(),
        source: e,
    })?;
    let malformed = |line: usize, reason: String| GidError::Malformed {
        path: display.clone(),
        line,
        reason,
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(1, "empty file".into()))?;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| malformed(1, "missing '#' header".into()))?
        .trim();
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for part in header.split_whitespace() {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| malformed(1, format!("bad header field {part:?}")))?;
        fields.insert(key, value);
    }
    let field = |name: &str| {
        fields
            .get(name)
            .copied()
            .ok_or_else(|| malformed(1, format!("header missing {name}=")))
    };
    let strategy = GidStrategy::from_str(field("strategy")?).map_err(|e| malformed(1, e))?;
    let k: usize = field("K")?
        .parse()
        .map_err(|_| malformed(1, "bad K".into()))?;
    let l: usize = field("l")?
        .parse()
        .map_err(|_| malformed(1, "bad l".into()))?;
    let seed: u64 = field("seed")?
        .parse()
        .map_err(|_| malformed(1, "bad seed".into()))?;

    let mut by_index: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let (idx, toks) = line
            .split_once('\t')
            .ok_or_else(|| malformed(lineno, "expected item_index<TAB>tokens".into()))?;
        let item: usize = idx
            .parse()
            .map_err(|_| malformed(lineno, format!("bad item index {idx:?}")))?;
        let gid: Vec<usize> = toks
            .split(',')
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| malformed(lineno, format!("bad token {t:?}")))
            })
            .collect::<Result<_, _>>()?;
        if gid.len() != l {
            return Err(malformed(
                lineno,
                format!("expected {l} tokens, got {}", gid.len()),
            ));
        }
        if by_index.insert(item, gid).is_some() {
            return Err(malformed(lineno, format!("duplicate item index {item}")));
        }
    }
    let n = by_index.len();
    let mut gids = Vec::with_capacity(n);
    for item in 0..n {
        gids.push(by_index.remove(&item).ok_or_else(|| {
            malformed(0, format!("item indices not contiguous: missing {item}"))
        })?);
    }
    let assignment = GidAssignment {
        strategy,
        k,
        l,
        seed,
        gids,
    };
    assignment.verify()?;
    Ok(assignment)
}
