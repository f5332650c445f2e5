//! Interaction dataset: ingestion, k-core filtering, per-user splits, and
//! head/tail user segmentation.
//!
//! Raw inputs are two TSV files: interaction records (`user_key<TAB>item_key`
//! per line) and item content (`item_key<TAB>k1=v1<US>k2=v2...` with the unit
//! separator 0x1F between attribute pairs; only the first `=` of a pair
//! separates key from value).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Attribute-pair separator within a content line.
pub const UNIT_SEPARATOR: char = '\u{1f}';

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset io on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("prepared dataset at {dir} is missing {file}")]
    MissingPrepared { dir: String, file: String },
    #[error("prepared dataset inconsistent: {0}")]
    Inconsistent(String),
}

/// Which partition an interaction belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_label(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_label(label: u8) -> Option<Split> {
        match label {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_label())
    }
}

/// One user-item interaction with its split assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub split: Split,
}

/// Fully prepared dataset with dense indices, content, and split labels.
#[derive(Clone, Debug)]
pub struct InteractionDataset {
    pub user_keys: Vec<String>,
    pub item_keys: Vec<String>,
    pub interactions: Vec<Interaction>,
    /// Attribute pairs per item index; empty when the item had no content.
    pub content: Vec<Vec<(String, String)>>,
}

impl InteractionDataset {
    pub fn n_users(&self) -> usize {
        self.user_keys.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_keys.len()
    }

    /// Item indices per user restricted to one split, in interaction order.
    pub fn items_by_user(&self, split: Split) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users()];
        for it in &self.interactions {
            if it.split == split {
                out[it.user].push(it.item);
            }
        }
        out
    }

    /// User indices per item restricted to one split, in interaction order.
    pub fn users_by_item(&self, split: Split) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_items()];
        for it in &self.interactions {
            if it.split == split {
                out[it.item].push(it.user);
            }
        }
        out
    }

    /// Per-user interaction count within one split.
    pub fn degree_by_user(&self, split: Split) -> Vec<usize> {
        let mut out = vec![0usize; self.n_users()];
        for it in &self.interactions {
            if it.split == split {
                out[it.user] += 1;
            }
        }
        out
    }
}

/// Raw parse result before filtering and indexing.
#[derive(Debug)]
pub struct RawData {
    /// Deduplicated (user_key, item_key) pairs in first-appearance order.
    pub edges: Vec<(String, String)>,
    pub content: HashMap<String, Vec<(String, String)>>,
    /// Duplicate interaction lines that were collapsed.
    pub duplicates_collapsed: usize,
}

/// Parse the interaction records file. Duplicate (user, item) pairs collapse
/// to the first occurrence; blank lines are skipped.
pub fn parse_interactions(path: &Path) -> Result<Vec<(String, String)>, DatasetError> {
    let text = read_file(path)?;
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (user, item) = line.split_once('\t').ok_or_else(|| DatasetError::MalformedLine {
            path: display_path(path),
            line: i + 1,
            reason: "expected user_key<TAB>item_key".into(),
        })?;
        if user.is_empty() || item.is_empty() {
            return Err(DatasetError::MalformedLine {
                path: display_path(path),
                line: i + 1,
                reason: "empty user or item key".into(),
            });
        }
        let pair = (user.to_string(), item.to_string());
        if seen.insert(pair.clone()) {
            edges.push(pair);
        }
    }
    Ok(edges)
}

/// Parse the item content file. Attribute keys must be unique within an
/// item; everything after the first `=` of a pair is the value verbatim.
pub fn parse_content(path: &Path) -> Result<HashMap<String, Vec<(String, String)>>, DatasetError> {
    let text = read_file(path)?;
    let mut content = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let malformed = |reason: String| DatasetError::MalformedLine {
            path: display_path(path),
            line: i + 1,
            reason,
        };
        let (item, rest) = line
            .split_once('\t')
            .ok_or_else(|| malformed("expected item_key<TAB>attributes".into()))?;
        if item.is_empty() {
            return Err(malformed("empty item key".into()));
        }
        let mut pairs = Vec::new();
        let mut keys = HashSet::new();
        if !rest.is_empty() {
            for field in rest.split(UNIT_SEPARATOR) {
                let (k, v) = field
                    .split_once('=')
                    .ok_or_else(|| malformed(format!("attribute without '=': {field:?}")))?;
                if k.is_empty() {
                    return Err(malformed("empty attribute key".into()));
                }
                if !keys.insert(k.to_string()) {
                    return Err(malformed(format!("duplicate attribute key {k:?}")));
                }
                pairs.push((k.to_string(), v.to_string()));
            }
        }
        if content.insert(item.to_string(), pairs).is_some() {
            return Err(malformed(format!("duplicate content line for item {item:?}")));
        }
    }
    Ok(content)
}

/// Parse both raw files.
pub fn ingest(records: &Path, content: &Path) -> Result<RawData, DatasetError> {
    let text = read_file(records)?;
    let raw_lines = text.lines().filter(|l| !l.is_empty()).count();
    let edges = parse_interactions(records)?;
    let duplicates_collapsed = raw_lines - edges.len();
    let content = parse_content(content)?;
    Ok(RawData {
        edges,
        content,
        duplicates_collapsed,
    })
}

/// Iteratively drop edges incident to a user or item with degree below
/// `min_degree` until no such node remains (the k-core fixpoint). Returns a
/// keep-mask aligned with `edges`.
pub fn filter_kcore(edges: &[(usize, usize)], min_degree: usize) -> Vec<bool> {
    let mut keep = vec![true; edges.len()];
    loop {
        let mut user_deg: HashMap<usize, usize> = HashMap::new();
        let mut item_deg: HashMap<usize, usize> = HashMap::new();
        for (e, &(u, i)) in edges.iter().enumerate() {
            if keep[e] {
                *user_deg.entry(u).or_insert(0) += 1;
                *item_deg.entry(i).or_insert(0) += 1;
            }
        }
        let mut changed = false;
        for (e, &(u, i)) in edges.iter().enumerate() {
            if keep[e] && (user_deg[&u] < min_degree || item_deg[&i] < min_degree) {
                keep[e] = false;
                changed = true;
            }
        }
        if !changed {
            return keep;
        }
    }
}

/// Build the indexed dataset from raw data: k-core filter, then assign dense
/// user/item indices by first appearance among surviving edges, then attach
/// content. Items that survive filtering but have no content line keep an
/// empty attribute list (their count is reported for logging). All
/// interactions start in `Train`; call [`split_dataset`] to assign splits.
pub fn assemble(raw: &RawData, min_degree: usize) -> (InteractionDataset, usize) {
    let mut user_tmp: HashMap<&str, usize> = HashMap::new();
    let mut item_tmp: HashMap<&str, usize> = HashMap::new();
    let tmp_edges: Vec<(usize, usize)> = raw
        .edges
        .iter()
        .map(|(u, i)| {
            let nu = user_tmp.len();
            let ui = *user_tmp.entry(u.as_str()).or_insert(nu);
            let ni = item_tmp.len();
            let ii = *item_tmp.entry(i.as_str()).or_insert(ni);
            (ui, ii)
        })
        .collect();
    let keep = filter_kcore(&tmp_edges, min_degree);

    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut user_keys = Vec::new();
    let mut item_keys = Vec::new();
    let mut interactions = Vec::new();
    for (e, (u, i)) in raw.edges.iter().enumerate() {
        if !keep[e] {
            continue;
        }
        let user = *user_index.entry(u.as_str()).or_insert_with(|| {
            user_keys.push(u.clone());
            user_keys.len() - 1
        });
        let item = *item_index.entry(i.as_str()).or_insert_with(|| {
            item_keys.push(i.clone());
            item_keys.len() - 1
        });
        interactions.push(Interaction {
            user,
            item,
            split: Split::Train,
        });
    }

    let mut missing_content = 0usize;
    let content = item_keys
        .iter()
        .map(|k| match raw.content.get(k) {
            Some(pairs) => pairs.clone(),
            None => {
                missing_content += 1;
                Vec::new()
            }
        })
        .collect();

    (
        InteractionDataset {
            user_keys,
            item_keys,
            interactions,
            content,
        },
        missing_content,
    )
}

/// Number of interactions a user places in val and in test under the
/// round-half-up rule for a 10% share: `round(0.1 * degree)` each.
pub fn split_counts(degree: usize) -> (usize, usize, usize) {
    let share = ((degree as f64) * 0.1 + 0.5).floor() as usize;
    if degree == 0 {
        return (0, 0, 0);
    }
    if 2 * share >= degree {
        // too few edges to leave at least one in train: keep everything
        return (degree, 0, 0);
    }
    (degree - 2 * share, share, share)
}

/// Assign splits per user: shuffle that user's interactions with the seeded
/// generator (users visited in ascending index order), then label the first
/// `n_val` as val, the next `n_test` as test, and the remainder as train.
pub fn split_dataset(dataset: &mut InteractionDataset, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_users()];
    for (e, it) in dataset.interactions.iter().enumerate() {
        by_user[it.user].push(e);
    }
    for edges in &mut by_user {
        let (_, n_val, n_test) = split_counts(edges.len());
        edges.shuffle(&mut rng);
        for (pos, &e) in edges.iter().enumerate() {
            dataset.interactions[e].split = if pos < n_val {
                Split::Val
            } else if pos < n_val + n_test {
                Split::Test
            } else {
                Split::Train
            };
        }
    }
}

/// Head/tail user segmentation by train-interaction count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSegments {
    /// Most-active users (top `round(fraction * n_users)` by train count,
    /// ties broken toward the lower user index), ascending index order.
    pub head: Vec<usize>,
    /// Everyone else, ascending index order.
    pub tail: Vec<usize>,
}

impl UserSegments {
    pub fn is_head(&self, user: usize) -> bool {
        self.head.binary_search(&user).is_ok()
    }
}

/// Split users into head (most active by train count) and tail. The head
/// holds `round(fraction * n_users)` users; ties on count are resolved
/// toward the lower user index.
pub fn segment_users(dataset: &InteractionDataset, fraction: f64) -> UserSegments {
    let counts = dataset.degree_by_user(Split::Train);
    let mut order: Vec<usize> = (0..dataset.n_users()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let head_n = ((dataset.n_users() as f64) * fraction + 0.5).floor() as usize;
    let mut head: Vec<usize> = order[..head_n.min(order.len())].to_vec();
    let mut tail: Vec<usize> = order[head_n.min(order.len())..].to_vec();
    head.sort_unstable();
    tail.sort_unstable();
    UserSegments { head, tail }
}

// ---------------------------------------------------------------------------
// Prepared-directory round trip
// ---------------------------------------------------------------------------

const USERS_FILE: &str = "users.tsv";
const ITEMS_FILE: &str = "items.tsv";
const SPLITS_FILE: &str = "splits.tsv";
const CONTENT_FILE: &str = "content.tsv";

/// Write the prepared dataset into `dir` (creating it) as four TSV files:
/// `users.tsv` / `items.tsv` (index to key), `splits.tsv`
/// (`user_index<TAB>item_index<TAB>{0|1|2}`), and `content.tsv`
/// (`item_index<TAB>attributes`). Files are written atomically.
pub fn write_prepared(dir: &Path, dataset: &InteractionDataset) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut users = String::new();
    for (i, k) in dataset.user_keys.iter().enumerate() {
        users.push_str(&format!("{i}\t{k}\n"));
    }
    write_atomic(&dir.join(USERS_FILE), users.as_bytes())?;

    let mut items = String::new();
    for (i, k) in dataset.item_keys.iter().enumerate() {
        items.push_str(&format!("{i}\t{k}\n"));
    }
    write_atomic(&dir.join(ITEMS_FILE), items.as_bytes())?;

    let mut splits = String::new();
    for it in &dataset.interactions {
        splits.push_str(&format!("{}\t{}\t{}\n", it.user, it.item, it.split));
    }
    write_atomic(&dir.join(SPLITS_FILE), splits.as_bytes())?;

    let mut content = String::new();
    for (i, pairs) in dataset.content.iter().enumerate() {
        let joined = pairs
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(&UNIT_SEPARATOR.to_string());
        content.push_str(&format!("{i}\t{joined}\n"));
    }
    write_atomic(&dir.join(CONTENT_FILE), content.as_bytes())?;
    Ok(())
}

/// Load a dataset previously written by [`write_prepared`].
pub fn load_prepared(dir: &Path) -> Result<InteractionDataset, DatasetError> {
    let missing = |file: &str| DatasetError::MissingPrepared {
        dir: display_path(dir),
        file: file.to_string(),
    };
    for f in [USERS_FILE, ITEMS_FILE, SPLITS_FILE, CONTENT_FILE] {
        if !dir.join(f).exists() {
            return Err(missing(f));
        }
    }
    let user_keys = read_keyed(&dir.join(USERS_FILE))?;
    let item_keys = read_keyed(&dir.join(ITEMS_FILE))?;

    let splits_path = dir.join(SPLITS_FILE);
    let text = read_file(&splits_path)?;
    let mut interactions = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let malformed = |reason: String| DatasetError::MalformedLine {
            path: display_path(&splits_path),
            line: i + 1,
            reason,
        };
        let mut parts = line.split('\t');
        let (u, it, lab) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(u), Some(it), Some(lab), None) => (u, it, lab),
            _ => return Err(malformed("expected user<TAB>item<TAB>label".into())),
        };
        let user: usize = u.parse().map_err(|_| malformed(format!("bad user index {u:?}")))?;
        let item: usize = it
            .parse()
            .map_err(|_| malformed(format!("bad item index {it:?}")))?;
        let label: u8 = lab
            .parse()
            .map_err(|_| malformed(format!("bad split label {lab:?}")))?;
        let split =
            Split::from_label(label).ok_or_else(|| malformed(format!("bad split label {label}")))?;
        if user >= user_keys.len() || item >= item_keys.len() {
            return Err(malformed(format!("index out of range: {user},{item}")));
        }
        interactions.push(Interaction { user, item, split });
    }

    let content_path = dir.join(CONTENT_FILE);
    let text = read_file(&content_path)?;
    let mut content = vec![Vec::new(); item_keys.len()];
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let malformed = |reason: String| DatasetError::MalformedLine {
            path: display_path(&content_path),
            line: i + 1,
            reason,
        };
        let (idx, rest) = line
            .split_once('\t')
            .ok_or_else(|| malformed("expected item_index<TAB>attributes".into()))?;
        let item: usize = idx
            .parse()
            .map_err(|_| malformed(format!("bad item index {idx:?}")))?;
        if item >= item_keys.len() {
            return Err(malformed(format!("item index {item} out of range")));
        }
        let mut pairs = Vec::new();
        if !rest.is_empty() {
            for field in rest.split(UNIT_SEPARATOR) {
                let (k, v) = field
                    .split_once('=')
                    .ok_or_else(|| malformed(format!("attribute without '=': {field:?}")))?;
                pairs.push((k.to_string(), v.to_string()));
            }
        }
        content[item] = pairs;
    }

    Ok(InteractionDataset {
        user_keys,
        item_keys,
        interactions,
        content,
    })
}

fn read_keyed(path: &Path) -> Result<Vec<String>, DatasetError> {
    let text = read_file(path)?;
    let mut keys = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let malformed = |reason: String| DatasetError::MalformedLine {
            path: display_path(path),
            line: i + 1,
            reason,
        };
        let (idx, key) = line
            .split_once('\t')
            .ok_or_else(|| malformed("expected index<TAB>key".into()))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| malformed(format!("bad index {idx:?}")))?;
        if idx != keys.len() {
            return Err(malformed(format!(
                "indices must be contiguous, expected {} got {idx}",
                keys.len()
            )));
        }
        keys.push(key.to_string());
    }
    Ok(keys)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    crate::fsutil::write_atomic(path, bytes).map_err(|e| io_err(path, e))
}

fn read_file(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: display_path(path),
        source,
    }
}

fn display_path(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}
