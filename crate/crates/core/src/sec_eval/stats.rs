//! Distribution summaries and divergence-based verdicts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ScoreSet;
use crate::error::{Error, Result};

/// Histogram resolution over `[-1, 1]`.
pub const BINS: usize = 64;

/// Minimum standardized genuine vs pseudo-genuine gap to call keys diverse.
pub const DIVERSITY_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistStats {
    pub count: usize,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Vec<u64>,
}

impl DistStats {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Bin of a score; values outside `[-1, 1]` land in the edge bins.
pub fn bin_of(score: f64) -> usize {
    let b = ((score + 1.0) / 2.0 * BINS as f64).floor();
    b.clamp(0.0, (BINS - 1) as f64) as usize
}

pub fn histogram(scores: &[f64]) -> Vec<u64> {
    let mut h = vec![0u64; BINS];
    for &s in scores {
        h[bin_of(s)] += 1;
    }
    h
}

pub fn dist_stats(set: &ScoreSet) -> Result<DistStats> {
    stats_of(&set.scores)
}

fn stats_of(scores: &[f64]) -> Result<DistStats> {
    if scores.is_empty() {
        return Err(Error::data("cannot summarize an empty score set"));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let variance = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    Ok(DistStats {
        count: scores.len(),
        mean,
        variance,
        min: scores.iter().cloned().fold(f64::INFINITY, f64::min),
        max: scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        histogram: histogram(scores),
    })
}

/// Jensen-Shannon divergence (natural log) between add-one-smoothed
/// histograms.
pub fn jsd(a: &[u64], b: &[u64]) -> f64 {
    let smooth = |h: &[u64]| -> Vec<f64> {
        let total = h.iter().sum::<u64>() as f64 + h.len() as f64;
        h.iter().map(|&c| (c as f64 + 1.0) / total).collect()
    };
    let (p, q) = (smooth(a), smooth(b));
    let kl = |x: &[f64], m: &[f64]| -> f64 { x.iter().zip(m).map(|(&xi, &mi)| xi * (xi / mi).ln()).sum() };
    let m: Vec<f64> = p.iter().zip(&q).map(|(x, y)| 0.5 * (x + y)).collect();
    (0.5 * kl(&p, &m) + 0.5 * kl(&q, &m)).max(0.0)
}

fn pooled_sd(a: &DistStats, b: &DistStats) -> f64 {
    ((a.variance + b.variance) / 2.0).sqrt()
}

fn standardized(diff: f64, sd: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else if sd == 0.0 {
        diff.signum() * f64::INFINITY
    } else {
        diff / sd
    }
}

/// 95th percentile of the JSD between random halves of `set`: the divergence
/// expected from sampling noise alone.
pub fn bootstrap_threshold(set: &ScoreSet, rounds: usize, seed: u64) -> Result<f64> {
    if set.scores.len() < 4 || rounds == 0 {
        return Err(Error::data("bootstrap needs at least 4 scores and one round"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = set.scores.clone();
    let half = scores.len() / 2;
    let mut values: Vec<f64> = (0..rounds)
        .map(|_| {
            scores.shuffle(&mut rng);
            jsd(&histogram(&scores[..half]), &histogram(&scores[half..2 * half]))
        })
        .collect();
    values.sort_by(f64::total_cmp);
    let idx = ((0.95 * rounds as f64).ceil() as usize).clamp(1, rounds) - 1;
    Ok(values[idx])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlinkabilityReport {
    pub mean_gap: f64,
    pub standardized_gap: f64,
    pub jsd: f64,
    pub threshold: f64,
    pub unlinkable: bool,
}

/// Compares pseudo-genuine against pseudo-imposter scores.
pub fn unlinkability_report(pg: &ScoreSet, pi: &ScoreSet, threshold: f64) -> Result<UnlinkabilityReport> {
    let (a, b) = (dist_stats(pg)?, dist_stats(pi)?);
    let diff = (a.mean - b.mean).abs();
    let jsd = jsd(&a.histogram, &b.histogram);
    Ok(UnlinkabilityReport {
        mean_gap: diff,
        standardized_gap: standardized(diff, pooled_sd(&a, &b)),
        jsd,
        threshold,
        unlinkable: jsd <= threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub mean_gap: f64,
    pub standardized_gap: f64,
    pub threshold: f64,
    pub diverse: bool,
}

/// Compares genuine against pseudo-genuine scores.
pub fn diversity_report(g: &ScoreSet, pg: &ScoreSet) -> Result<DiversityReport> {
    let (a, b) = (dist_stats(g)?, dist_stats(pg)?);
    let diff = a.mean - b.mean;
    let gap = standardized(diff, pooled_sd(&a, &b));
    Ok(DiversityReport {
        mean_gap: diff,
        standardized_gap: gap,
        threshold: DIVERSITY_THRESHOLD,
        diverse: gap >= DIVERSITY_THRESHOLD,
    })
}
