//! Command-line front end for the cancelable PQ retrieval pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cancelable_pq::bench::{
    emit_report, prepare_workload, run_pipeline, sweep, FittedModel, PipelineConfig, ReportFormat, SweepAxis, SweepRow,
};
use cancelable_pq::cancelable::{
    build_protected_index, cancelable_topk, protect, revoke_and_reissue, seed_from_u64, CancelKey, ProtectedIndex,
};
use cancelable_pq::embed_io::{gen_synthetic, load_evec, write_evec};
use cancelable_pq::pq_index::Candidate;
use cancelable_pq::sec_eval::{evaluate, EvalConfig, Scoring};
use cancelable_pq::secure_rank::{backend_by_name, rerank, CloudProvider, ImageOwner, QueryUser, Transcript};
use cancelable_pq::{Error, Result};

#[derive(Parser)]
#[command(name = "cpq", version, about = "Cancelable PQ index with encrypted re-ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Values given on the command line
/// override those read from `--config`.
#[derive(Args, Clone, Default)]
struct Common {
    /// Flat TOML file with pipeline settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    pca_dim: Option<usize>,
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long = "top-k", short = 'k', global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[arg(long, global = true)]
    backend: Option<String>,
    #[arg(long, global = true)]
    runs: Option<usize>,
}

impl Common {
    fn pipeline(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.out {
            c.out_dir = Some(v.clone());
        }
        macro_rules! set {
            ($($f:ident => $t:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$t = v; } )* };
        }
        set!(pca_dim => pca_dim, m => m, n => n, top_k => top_k, sigma => sigma_proj, backend => backend, runs => runs);
        c.validate()?;
        Ok(c)
    }

    fn out(&self, cfg: &PipelineConfig) -> Result<PathBuf> {
        cfg.out_dir
            .clone()
            .ok_or_else(|| Error::Param("--out (or out_dir in the config) is required".into()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic EVEC file.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        identities: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Fit PCA and the PQ codebook on a database and write the model directory.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Issue a key and write the protected index of a database.
    Protect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Where to store the secret key; must lie outside `--out`.
        #[arg(long)]
        key_out: PathBuf,
    },
    /// Coarse top-K retrieval against a protected index.
    Query {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        queries: PathBuf,
    },
    /// Re-rank coarse candidates with the three-party encrypted protocol.
    Rerank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// JSON written by `query`.
        #[arg(long)]
        candidates: PathBuf,
        /// Also write every protocol message to this file.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Score distributions, diversity and unlinkability.
    EvalSecurity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated key seeds.
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
        key_seeds: Vec<u64>,
        #[arg(long, default_value_t = 20_000)]
        pair_budget: usize,
        /// `reference` or `own-codebook`.
        #[arg(long, default_value = "reference")]
        scoring: String,
    },
    /// Run the end-to-end benchmark.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Benchmark one hyper-parameter over several values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// K, M, sigma or scale.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Replace a key and re-protect the database under a new seed.
    Revoke {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        old_key: PathBuf,
        #[arg(long)]
        key_out: PathBuf,
    },
}

#[derive(Serialize, Deserialize)]
struct QueryCandidates {
    query: usize,
    candidates: Vec<Candidate>,
}

#[derive(Serialize)]
struct QueryResult {
    query: usize,
    ranked: Vec<(u32, f64)>,
}

/// Keys are secret; they must never be written next to the index that is
/// handed to the cloud.
fn check_key_location(key: &Path, out_dir: &Path) -> Result<()> {
    let abs = |p: &Path| -> Result<PathBuf> {
        let p = if p.is_absolute() { p.to_path_buf() } else { std::env::current_dir()?.join(p) };
        // Resolve the longest existing prefix so symlinks cannot hide the overlap.
        let mut existing = p.as_path();
        let mut rest = Vec::new();
        while !existing.exists() {
            match (existing.parent(), existing.file_name()) {
                (Some(parent), Some(name)) => {
                    rest.push(name.to_owned());
                    existing = parent;
                }
                _ => break,
            }
        }
        let mut resolved = existing.canonicalize().unwrap_or_else(|_| existing.to_path_buf());
        for part in rest.iter().rev() {
            resolved.push(part);
        }
        Ok(resolved)
    };
    if abs(key)?.starts_with(abs(out_dir)?) {
        return Err(Error::Param(format!(
            "refusing to write key {} inside index directory {}",
            key.display(),
            out_dir.display()
        )));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn scoring(name: &str) -> Result<Scoring> {
    match name {
        "reference" => Ok(Scoring::Reference),
        "own-codebook" | "own_codebook" => Ok(Scoring::OwnCodebook),
        _ => Err(Error::Param(format!("unknown scoring {name:?}"))),
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            common,
            identities,
            samples,
            dim,
            noise,
        } => {
            let cfg = common.pipeline()?;
            let mut spec = cfg.synthetic_spec();
            spec.n_identities = identities.unwrap_or(spec.n_identities);
            spec.samples_per_identity = samples.unwrap_or(spec.samples_per_identity);
            spec.dim = dim.unwrap_or(spec.dim);
            spec.intra_class_noise = noise.unwrap_or(spec.intra_class_noise);
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            let out = common.out(&cfg)?;
            write_evec(&gen_synthetic(&spec)?, &out)?;
            println!("wrote {} x {} embeddings to {}", spec.n_identities * spec.samples_per_identity, spec.dim, out.display());
        }
        Command::Fit { common, data } => {
            let cfg = common.pipeline()?;
            let out = common.out(&cfg)?;
            let model = FittedModel::fit(&load_evec(&data)?, cfg.pca_dim, cfg.m, cfg.n, cfg.seed)?;
            model.save(&out)?;
            println!("model (D={}, m={}, n={}) written to {}", cfg.pca_dim, cfg.m, cfg.n, out.display());
        }
        Command::Protect {
            common,
            model,
            data,
            key_out,
        } => {
            let cfg = common.pipeline()?;
            let out = common.out(&cfg)?;
            check_key_location(&key_out, &out)?;
            let model = FittedModel::load(&model)?;
            let cb = &model.codebook;
            let key = CancelKey::generate(&seed_from_u64(cfg.seed), cb.m(), cb.n(), cb.d_sub(), cfg.sigma_proj)?;
            let pcb = protect(cb, &model.table, &key)?;
            let index = build_protected_index(&model.reduce(&load_evec(&data)?)?, &pcb, &key)?;
            key.save(&key_out)?;
            index.save(&out.join("index.cpqi"))?;
            println!("key {} protects {} records in {}", key.key_id_hex(), index.len(), out.display());
        }
        Command::Query {
            common,
            model,
            index,
            key,
            queries,
        } => {
            let cfg = common.pipeline()?;
            let model = FittedModel::load(&model)?;
            let index = ProtectedIndex::load(&index)?;
            let key = CancelKey::load(&key)?;
            let qs = model.reduce(&load_evec(&queries)?)?;
            let mut results = Vec::with_capacity(qs.count());
            for (i, q) in qs.iter().enumerate() {
                let code = index.query_code(&key, q)?;
                results.push(QueryCandidates {
                    query: i,
                    candidates: cancelable_topk(&index, &code, cfg.top_k)?,
                });
            }
            match &cfg.out_dir {
                Some(out) => write_json(out, &results)?,
                None => println!("{}", serde_json::to_string_pretty(&results).map_err(|e| Error::Data(e.to_string()))?),
            }
        }
        Command::Rerank {
            common,
            model,
            data,
            queries,
            candidates,
            transcript,
        } => {
            let cfg = common.pipeline()?;
            let model = FittedModel::load(&model)?;
            let db = model.reduce(&load_evec(&data)?)?;
            let qs = model.reduce(&load_evec(&queries)?)?;
            let cands: Vec<QueryCandidates> = serde_json::from_str(&std::fs::read_to_string(&candidates)?)
                .map_err(|e| Error::Data(format!("{}: {e}", candidates.display())))?;
            let backend = backend_by_name(&cfg.backend)?;
            let mut owner = ImageOwner::new(Arc::clone(&backend), db.dim(), cfg.seed)?;
            let mut csp = CloudProvider::new(Arc::clone(&backend), owner.eval_key())?;
            for (i, v) in db.iter().enumerate() {
                csp.ingest(i as u32, &owner.encrypt_record(v)?)?;
            }
            let mut user = QueryUser::new(backend, owner.public_key(), cfg.seed ^ 1)?;
            let mut log = transcript.as_ref().map(|_| Transcript::new());
            let mut results = Vec::with_capacity(cands.len());
            for qc in &cands {
                let q = qs
                    .iter()
                    .nth(qc.query)
                    .ok_or_else(|| Error::Data(format!("candidate list names missing query {}", qc.query)))?;
                let ids: Vec<u32> = qc.candidates.iter().map(|c| c.id).collect();
                let r = rerank(&mut user, &csp, &owner, q, &ids, log.as_mut())?;
                results.push(QueryResult {
                    query: qc.query,
                    ranked: r.entries,
                });
            }
            if let (Some(path), Some(t)) = (&transcript, &log) {
                t.save(path)?;
            }
            match &cfg.out_dir {
                Some(out) => write_json(out, &results)?,
                None => println!("{}", serde_json::to_string_pretty(&results).map_err(|e| Error::Data(e.to_string()))?),
            }
        }
        Command::EvalSecurity {
            common,
            model,
            data,
            key_seeds,
            pair_budget,
            scoring: s,
        } => {
            let cfg = common.pipeline()?;
            let out = common.out(&cfg)?;
            let model = FittedModel::load(&model)?;
            let db = model.reduce(&load_evec(&data)?)?;
            let eval = EvalConfig {
                dataset: data.display().to_string(),
                seeds: key_seeds,
                sigma_proj: cfg.sigma_proj,
                pair_budget,
                sampler_seed: cfg.seed,
                scoring: scoring(&s)?,
            };
            let report = evaluate(&db, &model.codebook, &model.table, &eval)?;
            report.write_all(&out)?;
            print!("{}", report.to_text());
        }
        Command::Bench { common } => {
            let cfg = common.pipeline()?;
            let report = run_pipeline(&cfg)?;
            let rows = vec![SweepRow {
                setting: "default".into(),
                report,
            }];
            emit(&cfg, &rows)?;
        }
        Command::Sweep { common, axis, values } => {
            let cfg = common.pipeline()?;
            let axis: SweepAxis = axis.parse()?;
            if axis != SweepAxis::Scale {
                // Fail on unreadable data before the first long run.
                prepare_workload(&cfg)?;
            }
            emit(&cfg, &sweep(&cfg, axis, &values)?)?;
        }
        Command::Revoke {
            common,
            model,
            data,
            old_key,
            key_out,
        } => {
            let cfg = common.pipeline()?;
            let out = common.out(&cfg)?;
            check_key_location(&key_out, &out)?;
            let old = CancelKey::load(&old_key)?;
            let model = FittedModel::load(&model)?;
            let db = model.reduce(&load_evec(&data)?)?;
            let (key, index) =
                revoke_and_reissue(&db, &model.codebook, &model.table, &seed_from_u64(cfg.seed), cfg.sigma_proj)?;
            if key.key_id() == old.key_id() {
                return Err(Error::Param("the new seed reproduces the revoked key".into()));
            }
            key.save(&key_out)?;
            index.save(&out.join("index.cpqi"))?;
            println!("revoked {} and issued {}", old.key_id_hex(), key.key_id_hex());
        }
    }
    Ok(())
}

fn emit(cfg: &PipelineConfig, rows: &[SweepRow]) -> Result<()> {
    if let Some(out) = &cfg.out_dir {
        emit_report(rows, ReportFormat::Text, out)?;
        emit_report(rows, ReportFormat::Structured, out)?;
    }
    print!("{}", cancelable_pq::bench::render_table(rows));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
