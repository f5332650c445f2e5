//! Synthetic desk-scale fixtures: users and items partitioned into planted
//! clusters, interactions drawn with a high intra-cluster probability, and
//! item content whose words track the cluster. The output files use the raw
//! input format accepted by the preparation stage.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::UNIT_SEPARATOR;
use crate::fsutil::write_atomic;

/// Raw interaction records, one `user_key<TAB>item_key` per line.
pub const RECORDS_FILE: &str = "records.tsv";

/// Raw item content, one `item_key<TAB>k=v<US>k=v...` per line.
pub const CONTENT_FILE: &str = "content.tsv";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Generator settings. The defaults produce the bundled 50x40x4 fixture.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub seed: u64,
    /// Interaction probability for (user, item) pairs in the same cluster.
    pub p_intra: f64,
    /// Interaction probability across clusters.
    pub p_inter: f64,
    /// Users drawing fewer interactions are topped up with unseen items
    /// from their own cluster first, keeping everyone above the k-core and
    /// split thresholds.
    pub min_user_degree: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 50,
            n_items: 40,
            n_clusters: 4,
            seed: 0,
            p_intra: 0.7,
            p_inter: 0.02,
            min_user_degree: 6,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        if self.n_clusters == 0 {
            return Err(SynthError::InvalidConfig("n_clusters must be positive".into()));
        }
        if self.n_items < self.n_clusters {
            return Err(SynthError::InvalidConfig(format!(
                "n_items ({}) must be at least n_clusters ({})",
                self.n_items, self.n_clusters
            )));
        }
        if self.n_users == 0 {
            return Err(SynthError::InvalidConfig("n_users must be positive".into()));
        }
        for (name, p) in [("p_intra", self.p_intra), ("p_inter", self.p_inter)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::InvalidConfig(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Generated fixture with its planted structure exposed for verification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthData {
    /// (user_key, item_key) pairs, user-major, item keys ascending per user.
    pub edges: Vec<(String, String)>,
    /// (item_key, attributes) for every item.
    pub content: Vec<(String, Vec<(String, String)>)>,
    /// Planted cluster per user index.
    pub user_cluster: Vec<usize>,
    /// Planted cluster per item index.
    pub item_cluster: Vec<usize>,
}

fn block_of(index: usize, total: usize, clusters: usize) -> usize {
    index * clusters / total
}

/// Draw the fixture. Users and items are split into contiguous,
/// near-equal-size blocks; each (user, item) pair links with `p_intra` or
/// `p_inter` depending on whether the blocks match, and short users are
/// topped up from their own block first.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let user_cluster: Vec<usize> =
        (0..cfg.n_users).map(|u| block_of(u, cfg.n_users, cfg.n_clusters)).collect();
    let item_cluster: Vec<usize> =
        (0..cfg.n_items).map(|i| block_of(i, cfg.n_items, cfg.n_clusters)).collect();

    let mut edges = Vec::new();
    for u in 0..cfg.n_users {
        let mut linked: Vec<usize> = (0..cfg.n_items)
            .filter(|&i| {
                let p = if item_cluster[i] == user_cluster[u] { cfg.p_intra } else { cfg.p_inter };
                rng.gen_bool(p)
            })
            .collect();
        if linked.len() < cfg.min_user_degree {
            let mut own: Vec<usize> = (0..cfg.n_items)
                .filter(|&i| item_cluster[i] == user_cluster[u] && !linked.contains(&i))
                .collect();
            own.shuffle(&mut rng);
            let mut other: Vec<usize> = (0..cfg.n_items)
                .filter(|&i| item_cluster[i] != user_cluster[u] && !linked.contains(&i))
                .collect();
            other.shuffle(&mut rng);
            let top_up = own.into_iter().chain(other);
            linked.extend(top_up.take(cfg.min_user_degree - linked.len()));
        }
        linked.sort_unstable();
        edges.extend(linked.into_iter().map(|i| (format!("u{u}"), format!("i{i}"))));
    }

    let content = (0..cfg.n_items)
        .map(|i| {
            let c = item_cluster[i];
            let attrs = vec![
                ("category".to_string(), format!("topic{c}")),
                ("brand".to_string(), format!("maker{c}_{}", i % 5)),
                ("title".to_string(), format!("topic{c} style{} item{i}", i % 3)),
            ];
            (format!("i{i}"), attrs)
        })
        .collect();

    Ok(SynthData {
        edges,
        content,
        user_cluster,
        item_cluster,
    })
}

/// Render and atomically write `records.tsv` and `content.tsv` into `dir`
/// (creating it); returns the two paths.
pub fn write_files(dir: &Path, data: &SynthData) -> Result<(PathBuf, PathBuf), SynthError> {
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| SynthError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut records = String::new();
    for (u, i) in &data.edges {
        records.push_str(u);
        records.push('\t');
        records.push_str(i);
        records.push('\n');
    }
    let records_path = dir.join(RECORDS_FILE);
    write_atomic(&records_path, records.as_bytes()).map_err(io_err(&records_path))?;

    let mut content = String::new();
    for (item, attrs) in &data.content {
        content.push_str(item);
        content.push('\t');
        for (j, (k, v)) in attrs.iter().enumerate() {
            if j > 0 {
                content.push(UNIT_SEPARATOR);
            }
            content.push_str(k);
            content.push('=');
            content.push_str(v);
        }
        content.push('\n');
    }
    let content_path = dir.join(CONTENT_FILE);
    write_atomic(&content_path, content.as_bytes()).map_err(io_err(&content_path))?;

    Ok((records_path, content_path))
}

/// Fraction of edges whose user and item share a planted cluster.
pub fn intra_fraction(data: &SynthData) -> f64 {
    let lookup = |key: &str| key[1..].parse::<usize>().expect("synthetic key");
    let intra = data
        .edges
        .iter()
        .filter(|(u, i)| data.user_cluster[lookup(u)] == data.item_cluster[lookup(i)])
        .count();
    intra as f64 / data.edges.len() as f64
}
