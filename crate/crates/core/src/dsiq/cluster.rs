//! Seeded k-means over sparse TF-IDF vectors and class-based TF-IDF
//! keyword ranking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::text::{dot_dense, norm_sq, SparseVec, Vocabulary};

const MAX_ITERS: usize = 100;

/// Result of k-means: centroids and one cluster index per input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
}

fn sq_dist(x: &SparseVec, x_norm: f64, c: &[f64], c_norm: f64) -> f64 {
    (x_norm - 2.0 * dot_dense(x, c) + c_norm).max(0.0)
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(x: &SparseVec, centroids: &[Vec<f64>], centroid_norms: &[f64]) -> usize {
    let xn = norm_sq(x);
    let mut best = (0, f64::INFINITY);
    for (k, (c, &cn)) in centroids.iter().zip(centroid_norms).enumerate() {
        let d = sq_dist(x, xn, c, cn);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

fn norms(centroids: &[Vec<f64>]) -> Vec<f64> {
    centroids.iter().map(|c| c.iter().map(|v| v * v).sum()).collect()
}

fn densify(x: &SparseVec, dim: usize) -> Vec<f64> {
    let mut d = vec![0.0; dim];
    for &(i, w) in x {
        d[i] = w;
    }
    d
}

/// Lloyd's algorithm with k-means++ seeding, `min(k, n)` centroids.
///
/// Every returned assignment is the nearest of the returned centroids.
/// Clusters that end up empty are dropped and the rest renumbered.
pub fn kmeans(vectors: &[SparseVec], dim: usize, k: usize, seed: u64) -> KMeans {
    let n = vectors.len();
    if n == 0 || k == 0 {
        return KMeans {
            centroids: Vec::new(),
            assignments: Vec::new(),
        };
    }
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_norms: Vec<f64> = vectors.iter().map(norm_sq).collect();

    // k-means++ seeding
    let mut centroids = vec![densify(&vectors[rng.random_range(0..n)], dim)];
    let mut d2: Vec<f64> = {
        let c = &centroids[0];
        let cn = norms(&centroids)[0];
        vectors
            .iter()
            .zip(&x_norms)
            .map(|(x, &xn)| sq_dist(x, xn, c, cn))
            .collect()
    };
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 1e-12 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        let c = densify(&vectors[pick], dim);
        let cn: f64 = c.iter().map(|v| v * v).sum();
        for ((d, x), &xn) in d2.iter_mut().zip(vectors).zip(&x_norms) {
            *d = d.min(sq_dist(x, xn, &c, cn));
        }
        centroids.push(c);
    }

    let mut assignments = vec![usize::MAX; n];
    for iter in 0..MAX_ITERS {
        let cn = norms(&centroids);
        let mut changed = false;
        for (a, x) in assignments.iter_mut().zip(vectors) {
            let best = nearest(x, &centroids, &cn);
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed || iter + 1 == MAX_ITERS {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (x, &a) in vectors.iter().zip(&assignments) {
            counts[a] += 1;
            for &(i, w) in x {
                sums[a][i] += w;
            }
        }
        for ((c, s), &cnt) in centroids.iter_mut().zip(sums).zip(&counts) {
            if cnt > 0 {
                *c = s.into_iter().map(|v| v / cnt as f64).collect();
            }
        }
    }

    // drop empty clusters
    let mut used = vec![false; centroids.len()];
    for &a in &assignments {
        used[a] = true;
    }
    let mut remap = vec![usize::MAX; centroids.len()];
    let mut kept = Vec::new();
    for (old, c) in centroids.into_iter().enumerate() {
        if used[old] {
            remap[old] = kept.len();
            kept.push(c);
        }
    }
    for a in &mut assignments {
        *a = remap[*a];
    }
    KMeans {
        centroids: kept,
        assignments,
    }
}

/// Top `count` keywords per cluster by class-based TF-IDF:
/// `(tf_{t,c} / |c|) · ln(1 + A / f_t)` where `A` is the mean token count
/// per cluster and `f_t` the term's frequency across all clusters.
pub fn class_keywords(
    vocab: &Vocabulary,
    texts: &[&str],
    assignments: &[usize],
    clusters: usize,
    count: usize,
) -> Vec<Vec<String>> {
    let v = vocab.len();
    let mut tf = vec![vec![0.0f64; v]; clusters];
    for (text, &a) in texts.iter().zip(assignments) {
        for (i, c) in vocab.counts(text) {
            tf[a][i] += c as f64;
        }
    }
    let totals: Vec<f64> = tf.iter().map(|row| row.iter().sum()).collect();
    let mut term_freq = vec![0.0f64; v];
    for row in &tf {
        for (f, x) in term_freq.iter_mut().zip(row) {
            *f += x;
        }
    }
    let avg = if clusters == 0 {
        0.0
    } else {
        totals.iter().sum::<f64>() / clusters as f64
    };
    tf.iter()
        .zip(&totals)
        .map(|(row, &total)| {
            if total == 0.0 {
                return Vec::new();
            }
            let mut scored: Vec<(usize, f64)> = row
                .iter()
                .enumerate()
                .filter(|(_, &x)| x > 0.0)
                .map(|(i, &x)| (i, (x / total) * (1.0 + avg / term_freq[i]).ln()))
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            scored
                .into_iter()
                .take(count)
                .map(|(i, _)| vocab.term(i).to_string())
                .collect()
        })
        .collect()
}
