//! End-to-end pipeline runs, recall and latency measurement, and sweeps.

mod config;
mod model;
mod report;
mod sweep;

use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cancelable::{build_protected_index, cancelable_topk, protect, seed_from_u64, CancelKey};
use crate::embed_io::{apply_pca, fit_pca, gen_synthetic, l2_normalize, load_evec, EmbeddingSet};
use crate::error::{Error, Result};
use crate::pq_index::{build_distance_table, train_codebook};
use crate::secure_rank::{backend_by_name, rerank, CloudProvider, HeBackend, ImageOwner, QueryUser};

pub use config::{DataSource, PipelineConfig};
pub use model::FittedModel;
pub use report::{emit_report, render_table, ReportFormat};
pub use sweep::{dummy_workload, sweep, SweepAxis, SweepRow};

/// Seeds used by one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub kmeans: u64,
    pub key: u64,
    pub he: u64,
}

impl RunSeeds {
    /// Per-run seeds drawn from a stream keyed by the base seed.
    pub fn derive(base: u64, runs: usize) -> Vec<RunSeeds> {
        let mut rng = ChaCha8Rng::seed_from_u64(base);
        (0..runs)
            .map(|_| RunSeeds {
                kmeans: rng.next_u64(),
                key: rng.next_u64(),
                he: rng.next_u64(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Latency {
    pub mean_ms: f64,
    pub median_ms: f64,
}

impl Latency {
    pub fn of(samples_ms: &[f64]) -> Self {
        if samples_ms.is_empty() {
            return Self::default();
        }
        let mut s = samples_ms.to_vec();
        s.sort_by(f64::total_cmp);
        let mid = s.len() / 2;
        let median_ms = if s.len() % 2 == 1 { s[mid] } else { 0.5 * (s[mid - 1] + s[mid]) };
        Self {
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            median_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seeds: RunSeeds,
    pub coarse_recall: f64,
    pub rerank_recall: f64,
    pub filter: Latency,
    pub rerank: Latency,
    pub total: Latency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: PipelineConfig,
    pub database_size: usize,
    pub query_count: usize,
    /// Encrypted inner products per query, identical for every query.
    pub he_ops_per_query: u64,
    /// Averages over all runs.
    pub coarse_recall: f64,
    pub rerank_recall: f64,
    /// Latencies over every query of every run.
    pub filter: Latency,
    pub rerank: Latency,
    pub total: Latency,
    /// Largest share of a query's total time not spent in either stage.
    pub max_residual_fraction: f64,
    pub runs: Vec<RunReport>,
}

/// Database and held-out probes after normalization and PCA.
#[derive(Debug, Clone)]
pub struct Workload {
    pub database: EmbeddingSet,
    pub queries: EmbeddingSet,
    /// Codebook training rows when they must differ from the database, as
    /// for a database too small to fill `n` centroids. Never query rows.
    pub training: Option<EmbeddingSet>,
}

impl Workload {
    pub fn new(database: EmbeddingSet, queries: EmbeddingSet) -> Result<Self> {
        if database.labels().is_none() || queries.labels().is_none() {
            return Err(Error::data("database and queries must be labelled"));
        }
        if database.is_empty() || queries.is_empty() {
            return Err(Error::data("database and queries must be non-empty"));
        }
        if database.dim() != queries.dim() {
            return Err(Error::data("database and query dimensions differ"));
        }
        Ok(Self {
            database,
            queries,
            training: None,
        })
    }
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Param(m) => Error::Param(format!("{name}: {m}")),
        Error::Data(m) => Error::Data(format!("{name}: {m}")),
        Error::State(m) => Error::State(format!("{name}: {m}")),
        Error::Auth(m) => Error::Auth(format!("{name}: {m}")),
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{name}: {message}"),
        },
        other => other,
    })
}

/// Removes one sample per identity as a probe. Everything that is fitted
/// later sees only the remaining database rows.
pub fn holdout_split(set: &EmbeddingSet, seed: u64) -> Result<(EmbeddingSet, EmbeddingSet)> {
    let labels = set.labels().ok_or_else(|| Error::data("held-out split needs labels"))?;
    let mut by_label: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = vec![false; set.count()];
    for rows in by_label.values() {
        if rows.len() >= 2 {
            probe[rows[(rng.next_u64() % rows.len() as u64) as usize]] = true;
        }
    }
    let (q, db): (Vec<usize>, Vec<usize>) = (0..set.count()).partition(|&i| probe[i]);
    if q.is_empty() {
        return Err(Error::data("no identity has two samples to hold one out"));
    }
    Ok((set.subset(&db), set.subset(&q)))
}

/// Ingest, normalize, split and reduce the configured data source.
pub fn prepare_workload(cfg: &PipelineConfig) -> Result<Workload> {
    cfg.validate()?;
    let raw = stage(
        "ingest",
        match cfg.data_source() {
            DataSource::Evec(p) => load_evec(&p),
            DataSource::Synthetic(spec) => gen_synthetic(&spec),
        },
    )?;
    let raw = stage("normalize", l2_normalize(&raw))?;
    let (db, queries) = stage("split", holdout_split(&raw, cfg.data_seed))?;
    let pca = stage("pca", fit_pca(&db, cfg.pca_dim))?;
    let reduce = |s: &EmbeddingSet| -> Result<EmbeddingSet> { l2_normalize(&apply_pca(&pca, s)?) };
    Workload::new(stage("pca", reduce(&db))?, stage("pca", reduce(&queries))?)
}

/// Fraction of queries whose top result shares the query's label.
pub fn recall_at_1(top_ids: &[Option<u32>], query_labels: &[u32], db_labels: &[u32]) -> Result<f64> {
    if top_ids.len() != query_labels.len() {
        return Err(Error::param(format!(
            "{} results for {} queries",
            top_ids.len(),
            query_labels.len()
        )));
    }
    if top_ids.is_empty() {
        return Err(Error::param("no queries"));
    }
    let mut hits = 0usize;
    for (r, &want) in top_ids.iter().zip(query_labels) {
        if let Some(id) = r {
            let label = db_labels
                .get(*id as usize)
                .ok_or_else(|| Error::data(format!("result id {id} outside the database")))?;
            hits += usize::from(*label == want);
        }
    }
    Ok(hits as f64 / top_ids.len() as f64)
}

/// Recall@1 of exact cosine search over the full database.
pub fn exact_recall(w: &Workload) -> Result<f64> {
    let tops: Vec<Option<u32>> = w
        .queries
        .iter()
        .map(|q| {
            let mut best = (None, f64::NEG_INFINITY);
            for (i, x) in w.database.iter().enumerate() {
                let s = crate::embed_io::dot(q, x);
                if s > best.1 {
                    best = (Some(i as u32), s);
                }
            }
            best.0
        })
        .collect();
    recall_at_1(&tops, w.queries.labels().unwrap(), w.database.labels().unwrap())
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

struct RunOutcome {
    report: RunReport,
    he_ops: Vec<u64>,
    filter_ms: Vec<f64>,
    rerank_ms: Vec<f64>,
    total_ms: Vec<f64>,
}

fn run_once(cfg: &PipelineConfig, w: &Workload, seeds: RunSeeds, backend: &Arc<dyn HeBackend>) -> Result<RunOutcome> {
    let db = &w.database;
    let source = w.training.as_ref().unwrap_or(db);
    let train = if source.count() > cfg.train_limit {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds.kmeans);
        let mut rows = sample(&mut rng, source.count(), cfg.train_limit).into_vec();
        rows.sort_unstable();
        source.subset(&rows)
    } else {
        source.clone()
    };
    let codebook = stage("pq train", train_codebook(&train, cfg.m, cfg.n, seeds.kmeans))?;
    drop(train);
    let table = build_distance_table(&codebook);
    let key = stage(
        "protect",
        CancelKey::generate(&seed_from_u64(seeds.key), cfg.m, cfg.n, codebook.d_sub(), cfg.sigma_proj),
    )?;
    let pcb = stage("protect", protect(&codebook, &table, &key))?;
    let index = stage("index", build_protected_index(db, &pcb, &key))?;

    let mut owner = stage("he setup", ImageOwner::new(backend.clone(), db.dim(), seeds.he))?;
    let mut csp = stage("he setup", CloudProvider::new(backend.clone(), owner.eval_key()))?;
    for (i, v) in db.iter().enumerate() {
        let c = stage("encrypt", owner.encrypt_record(v))?;
        stage("encrypt", csp.ingest(i as u32, &c))?;
    }
    let mut user = stage("he setup", QueryUser::new(backend.clone(), owner.public_key(), seeds.he ^ 1))?;

    let nq = w.queries.count();
    let mut out = RunOutcome {
        report: RunReport {
            seeds,
            coarse_recall: 0.0,
            rerank_recall: 0.0,
            filter: Latency::default(),
            rerank: Latency::default(),
            total: Latency::default(),
        },
        he_ops: Vec::with_capacity(nq),
        filter_ms: Vec::with_capacity(nq),
        rerank_ms: Vec::with_capacity(nq),
        total_ms: Vec::with_capacity(nq),
    };
    let mut coarse_top = Vec::with_capacity(nq);
    let mut rerank_top = Vec::with_capacity(nq);
    for q in w.queries.iter() {
        let t0 = Instant::now();
        let code = stage("query", index.query_code(&key, q))?;
        let cands = stage("pq filter", cancelable_topk(&index, &code, cfg.top_k))?;
        let filter = ms(t0);
        let ids: Vec<u32> = cands.iter().map(|c| c.id).collect();
        let ops_before = csp.he_op_count();
        let t1 = Instant::now();
        let result = stage("rerank", rerank(&mut user, &csp, &owner, q, &ids, None))?;
        let rr = ms(t1);
        let total = ms(t0);
        out.he_ops.push(csp.he_op_count() - ops_before);
        coarse_top.push(ids.first().copied());
        rerank_top.push(result.top());
        out.filter_ms.push(filter);
        out.rerank_ms.push(rr);
        out.total_ms.push(total);
    }
    let (ql, dl) = (w.queries.labels().unwrap(), db.labels().unwrap());
    out.report.coarse_recall = recall_at_1(&coarse_top, ql, dl)?;
    out.report.rerank_recall = recall_at_1(&rerank_top, ql, dl)?;
    out.report.filter = Latency::of(&out.filter_ms);
    out.report.rerank = Latency::of(&out.rerank_ms);
    out.report.total = Latency::of(&out.total_ms);
    Ok(out)
}

/// Runs the configured number of independent runs over a prepared workload.
pub fn run_workload(cfg: &PipelineConfig, w: &Workload) -> Result<BenchReport> {
    cfg.validate()?;
    if w.database.dim() != cfg.pca_dim {
        return Err(Error::param(format!(
            "workload dimension {} differs from pca_dim {}",
            w.database.dim(),
            cfg.pca_dim
        )));
    }
    let backend = backend_by_name(&cfg.backend)?;
    let expected = cfg.top_k.min(w.database.count()) as u64;
    let mut runs = Vec::with_capacity(cfg.runs);
    let (mut f, mut r, mut t) = (Vec::new(), Vec::new(), Vec::new());
    let mut residual = 0.0f64;
    for seeds in RunSeeds::derive(cfg.seed, cfg.runs) {
        let o = run_once(cfg, w, seeds, &backend)?;
        if let Some(bad) = o.he_ops.iter().find(|&&n| n != expected) {
            return Err(Error::State(format!("a query used {bad} HE operations, expected {expected}")));
        }
        for i in 0..o.total_ms.len() {
            let rest = o.total_ms[i] - o.filter_ms[i] - o.rerank_ms[i];
            residual = residual.max(rest / o.total_ms[i].max(f64::MIN_POSITIVE));
        }
        f.extend(o.filter_ms);
        r.extend(o.rerank_ms);
        t.extend(o.total_ms);
        runs.push(o.report);
    }
    let k = runs.len() as f64;
    Ok(BenchReport {
        config: cfg.clone(),
        database_size: w.database.count(),
        query_count: w.queries.count(),
        he_ops_per_query: expected,
        coarse_recall: runs.iter().map(|x| x.coarse_recall).sum::<f64>() / k,
        rerank_recall: runs.iter().map(|x| x.rerank_recall).sum::<f64>() / k,
        filter: Latency::of(&f),
        rerank: Latency::of(&r),
        total: Latency::of(&t),
        max_residual_fraction: residual,
        runs,
    })
}

/// Prepares the configured data and benchmarks it.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<BenchReport> {
    let w = prepare_workload(cfg)?;
    run_workload(cfg, &w)
}
