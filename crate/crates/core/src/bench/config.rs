use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cancelable::DEFAULT_SIGMA_PROJ;
use crate::embed_io::SyntheticSpec;
use crate::error::{Error, Result};

/// Where the pipeline's embeddings come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Evec(PathBuf),
    Synthetic(SyntheticSpec),
}

/// Every knob of an end-to-end run. Serialized as a flat TOML table whose
/// keys are the field names; unspecified keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Labelled EVEC file. When absent, synthetic data is generated.
    pub data_path: Option<PathBuf>,
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub raw_dim: usize,
    pub intra_class_noise: f64,
    pub data_seed: u64,

    pub pca_dim: usize,
    pub m: usize,
    pub n: usize,
    pub top_k: usize,
    pub sigma_proj: f64,
    /// Base seed; per-run k-means, key and HE seeds are derived from it.
    pub seed: u64,
    pub backend: String,
    pub runs: usize,
    /// At most this many database vectors are used to train the codebook.
    pub train_limit: usize,
    /// Number of probes in the dummy-vector scale benchmark.
    pub scale_queries: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_path: None,
            n_identities: 500,
            samples_per_identity: 20,
            raw_dim: 512,
            intra_class_noise: 0.09,
            data_seed: 7,
            pca_dim: 128,
            m: 64,
            n: 64,
            top_k: 5,
            sigma_proj: DEFAULT_SIGMA_PROJ,
            seed: 1,
            backend: "sim".into(),
            runs: 5,
            train_limit: 20_000,
            scale_queries: 100,
            out_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::param(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn data_source(&self) -> DataSource {
        match &self.data_path {
            Some(p) => DataSource::Evec(p.clone()),
            None => DataSource::Synthetic(self.synthetic_spec()),
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_identities: self.n_identities,
            samples_per_identity: self.samples_per_identity,
            dim: self.raw_dim,
            intra_class_noise: self.intra_class_noise,
            seed: self.data_seed,
        }
    }

    pub fn d_sub(&self) -> usize {
        self.pca_dim / self.m.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pca_dim == 0 || self.m == 0 || !self.pca_dim.is_multiple_of(self.m) {
            return Err(Error::param(format!(
                "pca_dim ({}) must be a positive multiple of m ({})",
                self.pca_dim, self.m
            )));
        }
        if self.n < 2 || self.n > crate::pq_index::MAX_CENTROIDS {
            return Err(Error::param(format!("n = {} is out of range", self.n)));
        }
        if self.top_k == 0 {
            return Err(Error::param("top_k must be at least 1"));
        }
        if self.runs == 0 {
            return Err(Error::param("runs must be at least 1"));
        }
        if !(self.sigma_proj >= 0.0 && self.sigma_proj.is_finite()) {
            return Err(Error::param("sigma_proj must be a finite non-negative number"));
        }
        if self.train_limit < self.n {
            return Err(Error::param("train_limit must be at least n"));
        }
        crate::secure_rank::backend_by_name(&self.backend)?;
        Ok(())
    }
}
