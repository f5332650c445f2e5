//! Capacity-constrained K-means. Lloyd iterations where the assignment
//! step fills clusters greedily in ascending point-to-centroid-distance
//! order (a global priority list), never exceeding the per-cluster
//! capacity. Runs several seeded restarts and keeps the lowest-SSE
//! labeling, so results are deterministic per seed. Instances whose whole
//! assignment space is small enough to walk are solved exactly instead —
//! hierarchical builds bottom out in many such tiny groups, and greedy
//! assignment is at its weakest exactly there.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::GidError;
use crate::numerics::Tensor;

const MAX_ITERS: usize = 100;

/// Assignment spaces up to this many labelings (`k^n`) are enumerated
/// outright rather than approximated.
const EXACT_SEARCH_LIMIT: u128 = 1 << 13;

/// Cluster `points` (rows) into at most `k` clusters of at most `capacity`
/// points each, minimizing within-cluster sum of squared distances.
/// Returns one label in `[0, k)` per point.
pub fn constrained_kmeans(
    points: &Tensor<f64>,
    k: usize,
    capacity: usize,
    seed: u64,
) -> Result<Vec<usize>, GidError> {
    let n = points.rows();
    if k == 0 || capacity == 0 || n > k.saturating_mul(capacity) {
        return Err(GidError::InfeasibleClustering { n, k, capacity });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if (k as u128)
        .checked_pow(n as u32)
        .is_some_and(|space| space <= EXACT_SEARCH_LIMIT)
    {
        return Ok(exact_assignment(points, k, capacity));
    }
    // restarts matter most when instances are small enough for the greedy
    // assignment to get trapped; large instances get fewer for speed
    let restarts = if n <= 64 {
        8
    } else if n <= 1024 {
        4
    } else {
        2
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts {
        let labels = lloyd_run(points, k, capacity, &mut rng);
        let sse = sse_of(points, &labels, k);
        if best.as_ref().map_or(true, |(b, _)| sse < *b) {
            best = Some((sse, labels));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Within-cluster sum of squared distances to cluster means.
pub fn sse_of(points: &Tensor<f64>, labels: &[usize], k: usize) -> f64 {
    let d = points.cols();
    let mut sums = vec![0.0f64; k * d];
    let mut counts = vec![0usize; k];
    for (p, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for (s, &x) in sums[c * d..(c + 1) * d].iter_mut().zip(points.row(p)) {
            *s += x;
        }
    }
    let mut sse = 0.0;
    for (p, &c) in labels.iter().enumerate() {
        let inv = 1.0 / counts[c] as f64;
        for (j, &x) in points.row(p).iter().enumerate() {
            let diff = x - sums[c * d + j] * inv;
            sse += diff * diff;
        }
    }
    sse
}

/// Minimum-SSE labeling by walking every capacity-feasible assignment.
/// Ties resolve to the first labeling in odometer order, so the result is
/// deterministic and independent of the seed.
fn exact_assignment(points: &Tensor<f64>, k: usize, capacity: usize) -> Vec<usize> {
    let n = points.rows();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    let mut best_labels = labels.clone();
    loop {
        let mut counts = vec![0usize; k];
        let mut feasible = true;
        for &c in &labels {
            counts[c] += 1;
            if counts[c] > capacity {
                feasible = false;
                break;
            }
        }
        if feasible {
            let sse = sse_of(points, &labels, k);
            if sse < best {
                best = sse;
                best_labels = labels.clone();
            }
        }
        let mut pos = 0;
        loop {
            if pos == n {
                return best_labels;
            }
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
    }
}

fn lloyd_run(points: &Tensor<f64>, k: usize, capacity: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.rows();
    let d = points.cols();
    let mut init: Vec<usize> = (0..n).collect();
    init.shuffle(rng);
    let mut centroids: Vec<f64> = (0..k)
        .flat_map(|c| points.row(init[c % n]).to_vec())
        .collect();

    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_ITERS {
        // global greedy assignment: all (distance, point, cluster) triples
        // ascending; a point takes the first cluster with spare capacity
        let mut order: Vec<(f64, usize, usize)> = Vec::with_capacity(n * k);
        for p in 0..n {
            for c in 0..k {
                order.push((sq_dist(points.row(p), &centroids[c * d..(c + 1) * d]), p, c));
            }
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut new_labels = vec![usize::MAX; n];
        let mut counts = vec![0usize; k];
        let mut assigned = 0usize;
        for &(_, p, c) in &order {
            if new_labels[p] == usize::MAX && counts[c] < capacity {
                new_labels[p] = c;
                counts[c] += 1;
                assigned += 1;
                if assigned == n {
                    break;
                }
            }
        }

        // empty clusters steal the farthest point of the largest cluster
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let donor = (0..k).max_by_key(|&x| (counts[x], usize::MAX - x)).expect("k > 0");
            if counts[donor] <= 1 {
                continue;
            }
            let centroid = centroid_of(points, &new_labels, donor, d);
            let far = (0..n)
                .filter(|&p| new_labels[p] == donor)
                .max_by(|&a, &b| {
                    sq_dist(points.row(a), &centroid)
                        .total_cmp(&sq_dist(points.row(b), &centroid))
                        .then(b.cmp(&a))
                })
                .expect("donor non-empty");
            new_labels[far] = c;
            counts[donor] -= 1;
            counts[c] += 1;
        }

        // centroid update: mean of members
        let mut sums = vec![0.0f64; k * d];
        for (p, &c) in new_labels.iter().enumerate() {
            for (s, &x) in sums[c * d..(c + 1) * d].iter_mut().zip(points.row(p)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for j in 0..d {
                    centroids[c * d + j] = sums[c * d + j] * inv;
                }
            }
        }

        if new_labels == labels {
            break;
        }
        labels = new_labels;
    }
    labels
}

fn centroid_of(points: &Tensor<f64>, labels: &[usize], cluster: usize, d: usize) -> Vec<f64> {
    let mut sum = vec![0.0f64; d];
    let mut count = 0usize;
    for (p, &c) in labels.iter().enumerate() {
        if c == cluster {
            count += 1;
            for (s, &x) in sum.iter_mut().zip(points.row(p)) {
                *s += x;
            }
        }
    }
    let inv = 1.0 / count.max(1) as f64;
    for s in &mut sum {
        *s *= inv;
    }
    sum
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}
