//! Lloyd's k-means with k-means++ seeding, used per PQ subspace.

use rand::Rng;

use crate::error::{Error, Result};

pub(crate) const MAX_ITERATIONS: usize = 25;
/// Stop once fewer than this fraction of points change assignment.
pub(crate) const CONVERGENCE_FRACTION: f64 = 0.001;

pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Index of the nearest centroid, lowest index on ties.
pub(crate) fn nearest(point: &[f32], centroids: &[f32], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Clusters `points` (row-major, `dim` columns) into `k` centroids.
pub(crate) fn kmeans<R: Rng>(points: &[f32], dim: usize, k: usize, rng: &mut R) -> Result<Vec<f32>> {
    let n = points.len() / dim;
    if n < k {
        return Err(Error::param(format!("{n} points cannot seed {k} centroids")));
    }
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut centroids = plus_plus_init(points, dim, k, rng)?;
    let mut assign = vec![usize::MAX; n];
    let mut dists = vec![0.0f64; n];

    for iter in 0..MAX_ITERATIONS {
        let mut changed = 0usize;
        for i in 0..n {
            let (c, d) = nearest(point(i), &centroids, dim);
            if assign[i] != c {
                changed += 1;
                assign[i] = c;
            }
            dists[i] = d;
        }
        if iter > 0 && (changed as f64) < CONVERGENCE_FRACTION * n as f64 {
            break;
        }

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(point(i)) {
                *s += x as f64;
            }
        }

        // Re-seed empty clusters with the points farthest from their centroid.
        let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empties.is_empty() {
            let mut by_dist: Vec<usize> = (0..n).collect();
            by_dist.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
            let mut cursor = 0;
            for c in empties {
                while cursor < n && counts[assign[by_dist[cursor]]] <= 1 {
                    cursor += 1;
                }
                if cursor == n {
                    break;
                }
                let i = by_dist[cursor];
                cursor += 1;
                let old = assign[i];
                counts[old] -= 1;
                for (s, &x) in sums[old * dim..(old + 1) * dim].iter_mut().zip(point(i)) {
                    *s -= x as f64;
                }
                counts[c] = 1;
                for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(point(i)) {
                    *s = x as f64;
                }
                assign[i] = c;
                dists[i] = 0.0;
            }
        }

        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for (dst, &s) in centroids[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(&sums[c * dim..(c + 1) * dim])
            {
                *dst = (s * inv) as f32;
            }
        }
    }
    Ok(centroids)
}

fn plus_plus_init<R: Rng>(points: &[f32], dim: usize, k: usize, rng: &mut R) -> Result<Vec<f32>> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(point(first));
    let mut weights: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();

    for _ in 1..k {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::data(format!(
                "fewer than {k} distinct points in subspace; cannot seed k-means"
            )));
        }
        let mut target = rng.random::<f64>() * total;
        let mut chosen = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            chosen = Some(i);
            if target < w {
                break;
            }
            target -= w;
        }
        let c = chosen.expect("positive total weight implies a candidate");
        let start = centroids.len();
        centroids.extend_from_slice(point(c));
        let new_c = &centroids[start..];
        for (i, w) in weights.iter_mut().enumerate() {
            let d = sq_dist(point(i), new_c);
            if d < *w {
                *w = d;
            }
        }
    }
    Ok(centroids)
}
