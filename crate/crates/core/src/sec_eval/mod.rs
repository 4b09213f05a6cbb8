//! Security evaluation of cancelable templates.
//!
//! Templates are compared after decoding their PQ codes back to coordinates.
//! Two matchers are available:
//!
//! * [`Scoring::Reference`] decodes both codes with the codebook of the first
//!   template's key. This is a cross-system matcher: an attacker who holds one
//!   protected database and tries to match a template leaked from another.
//! * [`Scoring::OwnCodebook`] decodes each code with its own key's codebook.
//!   Because a protected codebook maps every permuted code back to the original
//!   centroid, this matcher sees through the permutation entirely and only the
//!   small projection noise separates keys. It is kept as the stronger
//!   adversary model and reported alongside the default.

mod report;
mod stats;

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cancelable::{protect, reconstruct, secure_quantize, seed_from_u64, CancelKey, ProtectedCodebook};
use crate::embed_io::{dot, EmbeddingSet};
use crate::error::{Error, Result};
use crate::pq_index::{DistanceTable, PqCode, PqCodebook};

pub use report::{histogram_csv, EvalReport, ScoreRecord};
pub use stats::{
    bin_of, bootstrap_threshold, dist_stats, diversity_report, histogram, jsd, unlinkability_report, DistStats,
    DiversityReport, UnlinkabilityReport, BINS, DIVERSITY_THRESHOLD,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Genuine,
    Imposter,
    PseudoGenuine,
    PseudoImposter,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 4] = [
        ScoreKind::Genuine,
        ScoreKind::Imposter,
        ScoreKind::PseudoGenuine,
        ScoreKind::PseudoImposter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Genuine => "genuine",
            ScoreKind::Imposter => "imposter",
            ScoreKind::PseudoGenuine => "pseudo_genuine",
            ScoreKind::PseudoImposter => "pseudo_imposter",
        }
    }

    fn same_identity(self) -> bool {
        matches!(self, ScoreKind::Genuine | ScoreKind::PseudoGenuine)
    }

    fn same_key(self) -> bool {
        matches!(self, ScoreKind::Genuine | ScoreKind::Imposter)
    }
}

/// How protected templates are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Both codes decoded with the first template's codebook.
    #[default]
    Reference,
    /// Each code decoded with its own codebook.
    OwnCodebook,
}

impl Scoring {
    pub fn describe(self) -> &'static str {
        match self {
            Scoring::Reference => "cosine of both codes decoded with the first template's protected codebook",
            Scoring::OwnCodebook => "cosine of each code decoded with its own protected codebook",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub sigma_proj: f64,
    pub sampler_seed: u64,
    pub pairing: String,
    pub scoring: Scoring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub kind: ScoreKind,
    pub scores: Vec<f64>,
    pub provenance: Option<Provenance>,
}

impl ScoreSet {
    pub fn new(kind: ScoreKind, scores: Vec<f64>) -> Self {
        Self {
            kind,
            scores,
            provenance: None,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// The four score distributions produced by [`score_sets`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSets {
    pub genuine: ScoreSet,
    pub imposter: ScoreSet,
    pub pseudo_genuine: ScoreSet,
    pub pseudo_imposter: ScoreSet,
}

impl ScoreSets {
    pub fn get(&self, kind: ScoreKind) -> &ScoreSet {
        match kind {
            ScoreKind::Genuine => &self.genuine,
            ScoreKind::Imposter => &self.imposter,
            ScoreKind::PseudoGenuine => &self.pseudo_genuine,
            ScoreKind::PseudoImposter => &self.pseudo_imposter,
        }
    }
}

/// Cosine as `<a,b> / sqrt(<a,a><b,b>)`, which is exactly 1 for `a == b`
/// because a correctly rounded square root of `x*x` returns `x`.
fn unit_cosine(a: &[f32], b: &[f32]) -> f64 {
    let denom = (dot(a, a) * dot(b, b)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (dot(a, b) / denom).clamp(-1.0, 1.0)
    }
}

/// Cosine similarity of two protected templates, each decoded with its own
/// protected codebook.
pub fn protected_similarity(
    pcb_a: &ProtectedCodebook,
    code_a: &PqCode,
    pcb_b: &ProtectedCodebook,
    code_b: &PqCode,
) -> Result<f64> {
    if pcb_a.codebook().dim() != pcb_b.codebook().dim() {
        return Err(Error::param(format!(
            "codebook dimensions differ: {} vs {}",
            pcb_a.codebook().dim(),
            pcb_b.codebook().dim()
        )));
    }
    let a = reconstruct(pcb_a, code_a)?;
    let b = reconstruct(pcb_b, code_b)?;
    Ok(unit_cosine(&a, &b))
}

/// Cosine similarity of two codes decoded with the same reference codebook.
pub fn reference_similarity(reference: &ProtectedCodebook, code_a: &PqCode, code_b: &PqCode) -> Result<f64> {
    let a = reconstruct(reference, code_a)?;
    let b = reconstruct(reference, code_b)?;
    Ok(unit_cosine(&a, &b))
}

/// Parameters of [`score_sets`] beyond the data and codebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub sigma_proj: f64,
    pub pair_budget: usize,
    pub sampler_seed: u64,
    pub scoring: Scoring,
}

impl EvalConfig {
    pub fn new(seeds: Vec<u64>, sigma_proj: f64, pair_budget: usize) -> Self {
        Self {
            dataset: "unnamed".into(),
            seeds,
            sigma_proj,
            pair_budget,
            sampler_seed: 0,
            scoring: Scoring::default(),
        }
    }
}

/// One protected database per key seed.
struct KeyedTemplates {
    pcbs: Vec<ProtectedCodebook>,
    codes: Vec<Vec<PqCode>>,
}

fn protect_all(set: &EmbeddingSet, codebook: &PqCodebook, table: &DistanceTable, cfg: &EvalConfig) -> Result<KeyedTemplates> {
    let d_sub = codebook.d_sub();
    let mut pcbs = Vec::with_capacity(cfg.seeds.len());
    let mut codes = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let key = CancelKey::generate(&seed_from_u64(seed), codebook.m(), codebook.n(), d_sub, cfg.sigma_proj)?;
        let pcb = protect(codebook, table, &key)?;
        let c = set.iter().map(|x| secure_quantize(&pcb, &key, x)).collect::<Result<Vec<_>>>()?;
        pcbs.push(pcb);
        codes.push(c);
    }
    Ok(KeyedTemplates { pcbs, codes })
}

/// Sample pair `(i, j)` with `i < j` plus an index into the key combinations.
type Tuple = (u32, u32, u32);

/// Maps a combination index to an ordered key pair. Same-key kinds use `K`
/// combinations, different-key kinds use the `K(K-1)` ordered pairs.
fn key_pair(kind: ScoreKind, combo: u32, k: usize) -> (usize, usize) {
    let c = combo as usize;
    if kind.same_key() {
        (c, c)
    } else {
        let a = c / (k - 1);
        let b = c % (k - 1);
        (a, if b >= a { b + 1 } else { b })
    }
}

struct PairSampler<'a> {
    labels: &'a [u32],
    /// Sample indices grouped by identity.
    groups: Vec<Vec<u32>>,
}

impl<'a> PairSampler<'a> {
    fn new(labels: &'a [u32]) -> Self {
        let mut order: Vec<u32> = labels.to_vec();
        order.sort_unstable();
        order.dedup();
        let mut groups = vec![Vec::new(); order.len()];
        for (i, l) in labels.iter().enumerate() {
            let g = order.binary_search(l).unwrap();
            groups[g].push(i as u32);
        }
        Self { labels, groups }
    }

    fn same_pairs(&self) -> u64 {
        self.groups.iter().map(|g| pairs_in(g.len())).sum()
    }

    fn diff_pairs(&self) -> u64 {
        pairs_in(self.labels.len()) - self.same_pairs()
    }

    fn enumerate(&self, same: bool, combos: u32) -> Vec<Tuple> {
        let mut out = Vec::new();
        let n = self.labels.len() as u32;
        for i in 0..n {
            for j in i + 1..n {
                if (self.labels[i as usize] == self.labels[j as usize]) == same {
                    out.extend((0..combos).map(|c| (i, j, c)));
                }
            }
        }
        out
    }

    /// Up to `budget` distinct tuples drawn uniformly without replacement.
    fn sample(&self, same: bool, combos: u32, budget: usize, rng: &mut ChaCha8Rng) -> Vec<Tuple> {
        let universe = if same { self.same_pairs() } else { self.diff_pairs() } * combos as u64;
        if universe <= 2 * budget as u64 {
            let mut all = self.enumerate(same, combos);
            all.shuffle(rng);
            all.truncate(budget);
            return all;
        }
        let weights: Vec<u64> = self.groups.iter().map(|g| pairs_in(g.len())).collect();
        let pick_group = WeightedIndex::new(&weights).ok();
        let n = self.labels.len() as u32;
        let mut seen = HashSet::with_capacity(budget);
        let mut out = Vec::with_capacity(budget);
        while out.len() < budget {
            let (i, j) = if same {
                let g = &self.groups[pick_group.as_ref().unwrap().sample(rng)];
                let a = rng.random_range(0..g.len());
                let mut b = rng.random_range(0..g.len() - 1);
                if b >= a {
                    b += 1;
                }
                (g[a], g[b])
            } else {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if self.labels[a as usize] == self.labels[b as usize] {
                    continue;
                }
                (a, b)
            };
            let t = (i.min(j), i.max(j), rng.random_range(0..combos));
            if seen.insert(t) {
                out.push(t);
            }
        }
        out
    }
}

fn pairs_in(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

fn sampler_rng(seed: u64, same_identity: bool) -> ChaCha8Rng {
    // Genuine and pseudo-genuine share a stream, as do the two imposter kinds,
    // so that repeating one key reproduces the plain sets exactly.
    ChaCha8Rng::seed_from_u64(seed ^ if same_identity { 0x5A3E_0001 } else { 0xD1FF_0002 })
}

/// Builds protected databases under every seed and scores sampled pairs of
/// each kind.
pub fn score_sets(set: &EmbeddingSet, codebook: &PqCodebook, table: &DistanceTable, cfg: &EvalConfig) -> Result<ScoreSets> {
    let labels = set
        .labels()
        .ok_or_else(|| Error::data("security evaluation needs labelled embeddings"))?;
    if cfg.seeds.len() < 2 {
        return Err(Error::param("at least two key seeds are required"));
    }
    if cfg.pair_budget == 0 {
        return Err(Error::param("pair budget must be positive"));
    }
    let sampler = PairSampler::new(labels);
    if sampler.groups.len() < 2 {
        return Err(Error::data("at least two identities are required"));
    }
    if sampler.groups.iter().any(|g| g.len() < 2) {
        return Err(Error::data("every identity needs at least two samples"));
    }

    let templates = protect_all(set, codebook, table, cfg)?;
    let k = cfg.seeds.len();
    let build = |kind: ScoreKind| -> Result<ScoreSet> {
        let combos = if kind.same_key() { k } else { k * (k - 1) } as u32;
        let mut rng = sampler_rng(cfg.sampler_seed, kind.same_identity());
        let tuples = sampler.sample(kind.same_identity(), combos, cfg.pair_budget, &mut rng);
        let scores = tuples
            .iter()
            .map(|&(i, j, c)| {
                let (ka, kb) = key_pair(kind, c, k);
                let code_a = &templates.codes[ka][i as usize];
                let code_b = &templates.codes[kb][j as usize];
                match cfg.scoring {
                    Scoring::Reference => reference_similarity(&templates.pcbs[ka], code_a, code_b),
                    Scoring::OwnCodebook => {
                        protected_similarity(&templates.pcbs[ka], code_a, &templates.pcbs[kb], code_b)
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreSet {
            kind,
            scores,
            provenance: Some(Provenance {
                dataset: cfg.dataset.clone(),
                seeds: cfg.seeds.clone(),
                sigma_proj: cfg.sigma_proj,
                sampler_seed: cfg.sampler_seed,
                pairing: pairing_rule(kind).into(),
                scoring: cfg.scoring,
            }),
        })
    };
    Ok(ScoreSets {
        genuine: build(ScoreKind::Genuine)?,
        imposter: build(ScoreKind::Imposter)?,
        pseudo_genuine: build(ScoreKind::PseudoGenuine)?,
        pseudo_imposter: build(ScoreKind::PseudoImposter)?,
    })
}

fn pairing_rule(kind: ScoreKind) -> &'static str {
    match kind {
        ScoreKind::Genuine => "same identity, same key, distinct samples",
        ScoreKind::Imposter => "different identities, same key",
        ScoreKind::PseudoGenuine => "same identity, different keys, distinct samples",
        ScoreKind::PseudoImposter => "different identities, different keys",
    }
}

/// Number of bootstrap rounds used to derive the unlinkability threshold.
pub const BOOTSTRAP_ROUNDS: usize = 200;

/// Runs the whole analysis: scores, statistics, threshold and verdicts.
pub fn evaluate(set: &EmbeddingSet, codebook: &PqCodebook, table: &DistanceTable, cfg: &EvalConfig) -> Result<EvalReport> {
    let sets = score_sets(set, codebook, table, cfg)?;
    EvalReport::from_sets(cfg, sets)
}
