//! Product quantization with symmetric, table-driven distance estimation.
//!
//! A `D`-dimensional vector is split into `m` contiguous sub-vectors of
//! `d_sub = D / m` components; each sub-vector is replaced by the index of its
//! nearest centroid in that subspace's codebook. Distances between two codes
//! are sums of precomputed centroid-pair squared distances.

pub(crate) mod index;
mod kmeans;

pub use index::{build_index, build_index_with_ids, topk_filter, Candidate, CandidateList, PqIndex};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::container::{self, Reader, Writer, DTYPE_F32};
use crate::embed_io::EmbeddingSet;
use crate::error::{Error, Result};

pub(crate) use kmeans::sq_dist;

const CODEBOOK_MAGIC: &[u8; 4] = b"PQCB";
const TABLE_MAGIC: &[u8; 4] = b"PQDT";

/// Largest codebook length representable by a 16-bit code entry.
pub const MAX_CENTROIDS: usize = 1 << 16;

/// Per-subspace centroid sets `m x n x d_sub`.
#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    m: usize,
    n: usize,
    d_sub: usize,
    centroids: Vec<f32>,
}

impl PqCodebook {
    pub fn new(m: usize, n: usize, d_sub: usize, centroids: Vec<f32>) -> Result<Self> {
        if m == 0 || d_sub == 0 {
            return Err(Error::param("m and d_sub must be positive"));
        }
        if !(2..=MAX_CENTROIDS).contains(&n) {
            return Err(Error::param(format!("n = {n} must lie in [2, {MAX_CENTROIDS}]")));
        }
        if centroids.len() != m * n * d_sub {
            return Err(Error::param(format!(
                "expected {} centroid values, got {}",
                m * n * d_sub,
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("codebook contains non-finite values"));
        }
        let cb = Self {
            m,
            n,
            d_sub,
            centroids,
        };
        for j in 0..m {
            for a in 0..n {
                for b in a + 1..n {
                    if cb.centroid(j, a) == cb.centroid(j, b) {
                        return Err(Error::data(format!(
                            "subspace {j}: centroids {a} and {b} coincide"
                        )));
                    }
                }
            }
        }
        Ok(cb)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d_sub(&self) -> usize {
        self.d_sub
    }

    pub fn dim(&self) -> usize {
        self.m * self.d_sub
    }

    pub fn centroid(&self, j: usize, k: usize) -> &[f32] {
        let start = (j * self.n + k) * self.d_sub;
        &self.centroids[start..start + self.d_sub]
    }

    /// All `n` centroids of subspace `j`, row-major.
    pub fn subspace(&self, j: usize) -> &[f32] {
        let width = self.n * self.d_sub;
        &self.centroids[j * width..(j + 1) * width]
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.centroids
    }

    pub(crate) fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::param(format!(
                "vector dimension {len} does not match codebook dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::with_preamble(CODEBOOK_MAGIC, DTYPE_F32);
        w.len_u32(self.m)?;
        w.len_u32(self.n)?;
        w.len_u32(self.d_sub)?;
        w.f32s(&self.centroids);
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let cb = Self::read(&mut r)?;
        r.expect_end()?;
        Ok(cb)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        r.preamble(CODEBOOK_MAGIC)?;
        let at = r.offset();
        let (m, n, d_sub) = (r.usize()?, r.usize()?, r.usize()?);
        let total = m
            .checked_mul(n)
            .and_then(|v| v.checked_mul(d_sub))
            .ok_or_else(|| Error::format(at, "codebook shape overflows"))?;
        let centroids = r.finite_f32s(total)?;
        Self::new(m, n, d_sub, centroids).map_err(|e| Error::format(at, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }
}

/// A quantization code: one centroid index per subspace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PqCode(pub Vec<u16>);

impl PqCode {
    pub fn new(codes: Vec<u16>) -> Self {
        Self(codes)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.0
    }

    pub(crate) fn validate(&self, m: usize, n: usize) -> Result<()> {
        if self.0.len() != m {
            return Err(Error::param(format!(
                "code length {} does not match {m} subspaces",
                self.0.len()
            )));
        }
        if let Some((j, &c)) = self.0.iter().enumerate().find(|(_, &c)| c as usize >= n) {
            return Err(Error::param(format!(
                "code entry {c} at subspace {j} out of range for n = {n}"
            )));
        }
        Ok(())
    }
}

/// Centroid-pair squared distances, `m x n x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    m: usize,
    n: usize,
    values: Vec<f32>,
}

impl DistanceTable {
    pub(crate) fn from_values(m: usize, n: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != m * n * n {
            return Err(Error::param(format!(
                "expected {} table entries, got {}",
                m * n * n,
                values.len()
            )));
        }
        Ok(Self { m, n, values })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, j: usize, a: usize, b: usize) -> f32 {
        self.values[(j * self.n + a) * self.n + b]
    }

    /// Row `(j, a, ·)`.
    pub fn row(&self, j: usize, a: usize) -> &[f32] {
        let start = (j * self.n + a) * self.n;
        &self.values[start..start + self.n]
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.values
    }

    pub(crate) fn check_matches(&self, cb: &PqCodebook) -> Result<()> {
        if self.m != cb.m || self.n != cb.n {
            return Err(Error::param(format!(
                "table shape ({}, {}) does not match codebook ({}, {})",
                self.m, self.n, cb.m, cb.n
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::with_preamble(TABLE_MAGIC, DTYPE_F32);
        w.len_u32(self.m)?;
        w.len_u32(self.n)?;
        w.f32s(&self.values);
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let t = Self::read(&mut r)?;
        r.expect_end()?;
        Ok(t)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        r.preamble(TABLE_MAGIC)?;
        let at = r.offset();
        let (m, n) = (r.usize()?, r.usize()?);
        let total = m
            .checked_mul(n)
            .and_then(|v| v.checked_mul(n))
            .ok_or_else(|| Error::format(at, "table shape overflows"))?;
        let values = r.finite_f32s(total)?;
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::format(at, "negative table entry"));
        }
        Self::from_values(m, n, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }
}

/// Trains one k-means codebook per subspace.
pub fn train_codebook(set: &EmbeddingSet, m: usize, n: usize, seed: u64) -> Result<PqCodebook> {
    if m == 0 || !set.dim().is_multiple_of(m) {
        return Err(Error::param(format!(
            "dimension {} is not divisible by m = {m}",
            set.dim()
        )));
    }
    if !(2..=MAX_CENTROIDS).contains(&n) {
        return Err(Error::param(format!("n = {n} must lie in [2, {MAX_CENTROIDS}]")));
    }
    if set.count() < n {
        return Err(Error::param(format!(
            "{} training vectors cannot fill {n} centroids",
            set.count()
        )));
    }
    let d_sub = set.dim() / m;
    let mut centroids = Vec::with_capacity(m * n * d_sub);
    let mut slice = Vec::with_capacity(set.count() * d_sub);
    for j in 0..m {
        slice.clear();
        for v in set.iter() {
            slice.extend_from_slice(&v[j * d_sub..(j + 1) * d_sub]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        centroids.extend(kmeans::kmeans(&slice, d_sub, n, &mut rng)?);
    }
    PqCodebook::new(m, n, d_sub, centroids)
}

pub fn quantize(codebook: &PqCodebook, x: &[f32]) -> Result<PqCode> {
    codebook.check_dim(x.len())?;
    Ok(quantize_unchecked(codebook, x))
}

pub(crate) fn quantize_unchecked(codebook: &PqCodebook, x: &[f32]) -> PqCode {
    let d = codebook.d_sub;
    PqCode(
        (0..codebook.m)
            .map(|j| kmeans::nearest(&x[j * d..(j + 1) * d], codebook.subspace(j), d).0 as u16)
            .collect(),
    )
}

pub fn build_distance_table(codebook: &PqCodebook) -> DistanceTable {
    let (m, n) = (codebook.m, codebook.n);
    let mut values = vec![0.0f32; m * n * n];
    for j in 0..m {
        for a in 0..n {
            for b in a + 1..n {
                let d = sq_dist(codebook.centroid(j, a), codebook.centroid(j, b)) as f32;
                values[(j * n + a) * n + b] = d;
                values[(j * n + b) * n + a] = d;
            }
        }
    }
    DistanceTable { m, n, values }
}

/// Symmetric PQ distance: the sum of per-subspace table entries.
pub fn pq_distance(table: &DistanceTable, a: &PqCode, b: &PqCode) -> Result<f64> {
    a.validate(table.m, table.n)?;
    b.validate(table.m, table.n)?;
    Ok(a.0
        .iter()
        .zip(&b.0)
        .enumerate()
        .map(|(j, (&x, &y))| table.get(j, x as usize, y as usize) as f64)
        .sum())
}
