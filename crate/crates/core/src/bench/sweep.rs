use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{prepare_workload, run_workload, BenchReport, PipelineConfig, Workload};
use crate::embed_io::{l2_normalize, EmbeddingSet};
use crate::error::{Error, Result};

/// The hyper-parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    K,
    M,
    Sigma,
    /// Database size, filled with dummy vectors.
    Scale,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "k" | "top_k" => Ok(SweepAxis::K),
            "m" => Ok(SweepAxis::M),
            "sigma" | "sigma_proj" => Ok(SweepAxis::Sigma),
            "scale" | "n_records" => Ok(SweepAxis::Scale),
            _ => Err(Error::param(format!("unknown sweep axis {s:?}; expected K, M, sigma or scale"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::K => "K",
            SweepAxis::M => "M",
            SweepAxis::Sigma => "sigma",
            SweepAxis::Scale => "scale",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Short description of the setting, such as `K=5`.
    pub setting: String,
    pub report: BenchReport,
}

fn integer(axis: SweepAxis, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::param(format!("{axis} value {v} must be a positive integer")))
    }
}

fn apply(cfg: &PipelineConfig, axis: SweepAxis, v: f64) -> Result<(PipelineConfig, String)> {
    let mut c = cfg.clone();
    let setting = match axis {
        SweepAxis::K => {
            c.top_k = integer(axis, v)?;
            format!("K={}", c.top_k)
        }
        SweepAxis::M => {
            c.m = integer(axis, v)?;
            format!("M={}", c.m)
        }
        SweepAxis::Sigma => {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!("sigma value {v} must be finite and non-negative")));
            }
            c.sigma_proj = v;
            format!("sigma={v:e}")
        }
        SweepAxis::Scale => format!("N={}", integer(axis, v)?),
    };
    c.validate()?;
    Ok((c, setting))
}

/// Random unit database vectors labelled by their own id, probed by
/// perturbed copies of randomly chosen records.
pub fn dummy_workload(cfg: &PipelineConfig, records: usize) -> Result<Workload> {
    if records == 0 || cfg.scale_queries == 0 {
        return Err(Error::param("dummy workload needs records and queries"));
    }
    let dim = cfg.pca_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed ^ records as u64);
    let mut data = Vec::with_capacity(records * dim);
    for _ in 0..records * dim {
        data.push(rng.sample::<f32, _>(StandardNormal));
    }
    let database = l2_normalize(&EmbeddingSet::new(dim, data, Some((0..records as u32).collect()))?)?;

    let noise = 0.1 / (dim as f32).sqrt();
    let mut qdata = Vec::with_capacity(cfg.scale_queries * dim);
    let mut qlabels = Vec::with_capacity(cfg.scale_queries);
    for _ in 0..cfg.scale_queries {
        let id = rng.random_range(0..records);
        qlabels.push(id as u32);
        for &x in database.vector(id) {
            qdata.push(x + noise * rng.sample::<f32, _>(StandardNormal));
        }
    }
    let queries = l2_normalize(&EmbeddingSet::new(dim, qdata, Some(qlabels))?)?;
    Workload::new(database, queries)
}

/// One report per value. All settings share data and seeds; sweeps run
/// serially so that timings are not contended.
pub fn sweep(cfg: &PipelineConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    let settings = values.iter().map(|&v| apply(cfg, axis, v)).collect::<Result<Vec<_>>>()?;
    let shared = match axis {
        SweepAxis::Scale => None,
        _ => Some(prepare_workload(cfg)?),
    };
    let mut rows = Vec::with_capacity(values.len());
    for ((c, setting), &v) in settings.into_iter().zip(values) {
        let report = match &shared {
            Some(w) => run_workload(&c, w)?,
            None => run_workload(&c, &dummy_workload(&c, v as usize)?)?,
        };
        rows.push(SweepRow { setting, report });
    }
    Ok(rows)
}
