//! K-means clustering and centroid-proximity selection.
//!
//! Fitting uses k-means++ seeding followed by Lloyd iterations, stopping when
//! no centroid moves more than [`TOLERANCE`] or after [`MAX_ITERS`] rounds.
//! Distances are Euclidean; ties go to the lowest cluster index.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::Instance;
use crate::embed::EmbeddingVector;

pub const MAX_ITERS: usize = 100;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("cannot form {clusters} clusters from {points} points")]
    TooFewPoints { points: usize, clusters: usize },
    #[error("cluster count must be at least 1")]
    ZeroClusters,
    #[error("points have inconsistent dimensions")]
    Dimension,
    #[error("requested {total} items but only {available} are available")]
    OverBudget { total: usize, available: usize },
    #[error("size mismatch: {instances} instances, {vectors} vectors, {assigned} assignments")]
    SizeMismatch {
        instances: usize,
        vectors: usize,
        assigned: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment pass, first to last.
    pub history: Vec<f64>,
}

impl Clustering {
    pub fn c(&self) -> usize {
        self.centroids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.c()];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid and the squared distance to it.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &[&[f64]], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, f64) {
    let mut labels = Vec::with_capacity(points.len());
    let mut dists = Vec::with_capacity(points.len());
    for p in points {
        let (c, d) = nearest(p, centroids);
        labels.push(c);
        dists.push(d);
    }
    let inertia = dists.iter().sum();
    (labels, dists, inertia)
}

fn kmeans_pp(points: &[&[f64]], c: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, points[chosen[0]]))
        .collect();
    while chosen.len() < c {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // guard against float slop landing on a zero-weight tail point
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // every point coincides with a chosen centre
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].to_vec()).collect()
}

/// Means of the assigned points. A cluster left empty is re-seeded at the
/// point farthest from its own centroid, taken from clusters with at least
/// two members so no other cluster is emptied.
fn update(points: &[&[f64]], labels: &[usize], dists: &[f64], old: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = old[0].len();
    let c = old.len();
    let mut sums = vec![vec![0.0; dim]; c];
    let mut counts = vec![0usize; c];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    let mut taken: HashSet<usize> = HashSet::new();
    let mut centroids = Vec::with_capacity(c);
    for k in 0..c {
        if counts[k] > 0 {
            centroids.push(sums[k].iter().map(|s| s / counts[k] as f64).collect());
        } else {
            centroids.push(old[k].clone());
        }
    }
    for k in 0..c {
        if counts[k] > 0 {
            continue;
        }
        let donor = (0..points.len())
            .filter(|&i| counts[labels[i]] > 1 && !taken.contains(&i))
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
        if let Some(i) = donor {
            taken.insert(i);
            counts[labels[i]] -= 1;
            centroids[k] = points[i].to_vec();
        }
    }
    centroids
}

fn check_dims(points: &[EmbeddingVector]) -> Result<(), ClusterError> {
    let d = points.first().map_or(0, EmbeddingVector::dim);
    if points.iter().any(|p| p.dim() != d) {
        return Err(ClusterError::Dimension);
    }
    Ok(())
}

pub fn kmeans_fit(
    points: &[EmbeddingVector],
    c: usize,
    seed: u64,
) -> Result<Clustering, ClusterError> {
    if c == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    if points.len() < c {
        return Err(ClusterError::TooFewPoints {
            points: points.len(),
            clusters: c,
        });
    }
    check_dims(points)?;
    let pts: Vec<&[f64]> = points.iter().map(EmbeddingVector::values).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(&pts, c, &mut rng);
    let mut history = Vec::new();
    let mut shift = f64::INFINITY;
    let mut state = assign(&pts, &centroids);
    for iter in 0..MAX_ITERS {
        if iter > 0 {
            state = assign(&pts, &centroids);
        }
        debug_assert!(
            history
                .last()
                .map_or(true, |&prev: &f64| state.2 <= prev + 1e-9 * prev.max(1.0)),
            "k-means inertia increased"
        );
        history.push(state.2);
        let empty = state.0.iter().collect::<HashSet<_>>().len() < c;
        if shift < TOLERANCE && !empty {
            break;
        }
        let next = update(&pts, &state.0, &state.1, &centroids);
        shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if iter + 1 == MAX_ITERS {
            state = assign(&pts, &centroids);
            history.push(state.2);
        }
    }
    let (mut labels, _, inertia) = state;
    force_nonempty(&pts, &centroids, &mut labels);
    let inertia = if labels.iter().collect::<HashSet<_>>().len() == c {
        pts.iter()
            .zip(&labels)
            .map(|(p, &l)| sq_dist(p, &centroids[l]))
            .sum()
    } else {
        inertia
    };
    Ok(Clustering {
        centroids,
        assignment: labels,
        inertia,
        history,
    })
}

/// Degenerate inputs (fewer distinct points than clusters) can leave a
/// cluster empty even after repair. Hand each such cluster a point that is
/// equally near to it and whose current cluster keeps at least one member.
fn force_nonempty(points: &[&[f64]], centroids: &[Vec<f64>], labels: &mut [usize]) {
    let c = centroids.len();
    let mut counts = vec![0usize; c];
    labels.iter().for_each(|&l| counts[l] += 1);
    for k in 0..c {
        if counts[k] > 0 {
            continue;
        }
        let pick = (0..points.len())
            .filter(|&i| counts[labels[i]] > 1)
            .min_by(|&a, &b| {
                let da =
                    sq_dist(points[a], &centroids[k]) - sq_dist(points[a], &centroids[labels[a]]);
                let db =
                    sq_dist(points[b], &centroids[k]) - sq_dist(points[b], &centroids[labels[b]]);
                da.total_cmp(&db).then(a.cmp(&b))
            });
        if let Some(i) = pick {
            counts[labels[i]] -= 1;
            labels[i] = k;
            counts[k] += 1;
        }
    }
}

/// Fits centroids on `real` only and assigns `synthetic` to them.
/// Clusters may be empty in the returned assignment.
pub fn fit_supervised(
    real: &[EmbeddingVector],
    synthetic: &[EmbeddingVector],
    c: usize,
    seed: u64,
) -> Result<Clustering, ClusterError> {
    let fitted = kmeans_fit(real, c, seed)?;
    if synthetic
        .iter()
        .any(|v| v.dim() != fitted.centroids[0].len())
    {
        return Err(ClusterError::Dimension);
    }
    let pts: Vec<&[f64]> = synthetic.iter().map(EmbeddingVector::values).collect();
    let (assignment, _, inertia) = assign(&pts, &fitted.centroids);
    Ok(Clustering {
        centroids: fitted.centroids,
        assignment,
        inertia,
        history: vec![inertia],
    })
}

/// Largest-remainder apportionment of `total` across clusters in proportion
/// to their sizes. Remainder ties go to the lower index.
pub fn allocate_quotas(sizes: &[usize], total: usize) -> Result<Vec<usize>, ClusterError> {
    let sum: usize = sizes.iter().sum();
    if total > sum {
        return Err(ClusterError::OverBudget {
            total,
            available: sum,
        });
    }
    if total == 0 {
        return Ok(vec![0; sizes.len()]);
    }
    // exact integer arithmetic: size * total = quota * sum + remainder
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| s * total / sum).collect();
    let rems: Vec<usize> = sizes.iter().map(|&s| s * total % sum).collect();
    let mut left = total - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    for i in order {
        if left == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            left -= 1;
        }
    }
    Ok(quotas)
}

/// Per-cluster record of one selection, for manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterPick {
    pub cluster: usize,
    pub size: usize,
    pub quota: usize,
    pub selected: Vec<(String, f64)>,
}

/// Takes the `quota_c` members of each cluster closest to its centroid
/// (ties by instance id), returned in (cluster, rank) order.
pub fn select_near_centroids(
    instances: &[Instance],
    vectors: &[EmbeddingVector],
    clustering: &Clustering,
    total: usize,
) -> Result<(Vec<Instance>, Vec<ClusterPick>), ClusterError> {
    if instances.len() != vectors.len() || vectors.len() != clustering.assignment.len() {
        return Err(ClusterError::SizeMismatch {
            instances: instances.len(),
            vectors: vectors.len(),
            assigned: clustering.assignment.len(),
        });
    }
    let sizes = clustering.sizes();
    let quotas = allocate_quotas(&sizes, total)?;
    let mut members: Vec<Vec<(f64, usize)>> = vec![Vec::new(); clustering.c()];
    for (i, (&c, v)) in clustering.assignment.iter().zip(vectors).enumerate() {
        let d = sq_dist(v.values(), &clustering.centroids[c]).sqrt();
        members[c].push((d, i));
    }
    let mut out = Vec::with_capacity(total);
    let mut picks = Vec::with_capacity(clustering.c());
    for (c, mut m) in members.into_iter().enumerate() {
        m.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| instances[a.1].id.cmp(&instances[b.1].id))
        });
        let chosen: Vec<(f64, usize)> = m.into_iter().take(quotas[c]).collect();
        picks.push(ClusterPick {
            cluster: c,
            size: sizes[c],
            quota: quotas[c],
            selected: chosen
                .iter()
                .map(|&(d, i)| (instances[i].id.clone(), d))
                .collect(),
        });
        out.extend(chosen.into_iter().map(|(_, i)| instances[i].clone()));
    }
    Ok((out, picks))
}

/// Uniform sample of `total` instances, returned in input order.
pub fn select_random(
    instances: &[Instance],
    total: usize,
    seed: u64,
) -> Result<Vec<Instance>, ClusterError> {
    if total > instances.len() {
        return Err(ClusterError::OverBudget {
            total,
            available: instances.len(),
        });
    }
    let mut idx: Vec<usize> = (0..instances.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(total);
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| instances[i].clone()).collect())
}

/// `requested` clamped to the number of points, with a warning when clamped.
pub fn effective_clusters(requested: usize, points: usize) -> usize {
    if points < requested {
        log::warn!("only {points} instances for {requested} clusters; using {points}");
    }
    requested.min(points).max(1)
}
