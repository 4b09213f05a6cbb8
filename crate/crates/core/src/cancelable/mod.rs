//! Cancelable PQ indexing: key-bound codebook permutation and sub-vector
//! projection on top of [`crate::pq_index`].
//!
//! A key permutes the centroid order of every subspace, so the stored codes
//! and the published distance table are meaningless without it, and projects
//! each input sub-vector by a near-identity matrix before quantization. A
//! compromised index is revoked by issuing a new key and re-protecting.

mod key;

pub use key::{brute_force_cost_log2, seed_from_u64, CancelKey, KeyId, KeySeed};
pub(crate) use key::hex as key_hex;

use std::path::Path;

use crate::container::{self, Reader, Writer, DTYPE_F32};
use crate::embed_io::EmbeddingSet;
use crate::error::{Error, Result};
use crate::pq_index::index::{read_codes, scan_topk, write_codes};
use crate::pq_index::{CandidateList, DistanceTable, PqCode, PqCodebook};

const PROTECTED_INDEX_MAGIC: &[u8; 4] = b"CPQI";

/// Default projection noise level.
pub const DEFAULT_SIGMA_PROJ: f64 = 2e-3;

/// Permuted codebook `C'` and table `D'` bound to one key.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtectedCodebook {
    codebook: PqCodebook,
    table: DistanceTable,
    key_id: KeyId,
}

impl ProtectedCodebook {
    pub fn codebook(&self) -> &PqCodebook {
        &self.codebook
    }

    pub fn table(&self) -> &DistanceTable {
        &self.table
    }

    pub fn key_id(&self) -> &KeyId {
        &self.key_id
    }

    fn check_key(&self, key: &CancelKey) -> Result<()> {
        if key.key_id() != &self.key_id {
            return Err(Error::auth(format!(
                "key {} does not match protected codebook key {}",
                key.key_id_hex(),
                key::hex(&self.key_id)
            )));
        }
        Ok(())
    }
}

fn check_shape(codebook: &PqCodebook, key: &CancelKey) -> Result<()> {
    if (codebook.m(), codebook.n(), codebook.d_sub()) != (key.m(), key.n(), key.d_sub()) {
        return Err(Error::param(format!(
            "codebook shape ({}, {}, {}) does not match key ({}, {}, {})",
            codebook.m(),
            codebook.n(),
            codebook.d_sub(),
            key.m(),
            key.n(),
            key.d_sub()
        )));
    }
    Ok(())
}

/// Reorders centroids and table entries so that `C'_j[σ_j(k)] = C_j[k]` and
/// `D'(j, σ_j(a), σ_j(b)) = D(j, a, b)`.
pub fn protect(codebook: &PqCodebook, table: &DistanceTable, key: &CancelKey) -> Result<ProtectedCodebook> {
    check_shape(codebook, key)?;
    if (table.m(), table.n()) != (codebook.m(), codebook.n()) {
        return Err(Error::param("distance table does not match codebook"));
    }
    let (m, n, d) = (codebook.m(), codebook.n(), codebook.d_sub());
    let mut centroids = vec![0.0f32; m * n * d];
    let mut values = vec![0.0f32; m * n * n];
    for j in 0..m {
        let perm = key.perm(j);
        for (old, &new) in perm.iter().enumerate() {
            let dst = (j * n + new as usize) * d;
            centroids[dst..dst + d].copy_from_slice(codebook.centroid(j, old));
        }
        for (a, &pa) in perm.iter().enumerate() {
            let row = table.row(j, a);
            let base = (j * n + pa as usize) * n;
            for (b, &pb) in perm.iter().enumerate() {
                values[base + pb as usize] = row[b];
            }
        }
    }
    Ok(ProtectedCodebook {
        codebook: PqCodebook::new(m, n, d, centroids)?,
        table: DistanceTable::from_values(m, n, values)?,
        key_id: *key.key_id(),
    })
}

/// Projects each sub-vector with `R_j` and quantizes it against the permuted
/// codebook.
pub fn secure_quantize(pcb: &ProtectedCodebook, key: &CancelKey, x: &[f32]) -> Result<PqCode> {
    pcb.check_key(key)?;
    pcb.codebook.check_dim(x.len())?;
    Ok(secure_quantize_unchecked(pcb, key, x))
}

fn secure_quantize_unchecked(pcb: &ProtectedCodebook, key: &CancelKey, x: &[f32]) -> PqCode {
    let d = key.d_sub();
    let mut projected = vec![0.0f32; d];
    let codes = (0..key.m())
        .map(|j| {
            key.project(j, &x[j * d..(j + 1) * d], &mut projected);
            let mut best = (0usize, f64::INFINITY);
            for (k, c) in pcb.codebook.subspace(j).chunks_exact(d).enumerate() {
                let dist = crate::pq_index::sq_dist(&projected, c);
                if dist < best.1 {
                    best = (k, dist);
                }
            }
            best.0 as u16
        })
        .collect();
    PqCode(codes)
}

/// Maps every centroid of `code` back to coordinates and concatenates them.
pub fn reconstruct(pcb: &ProtectedCodebook, code: &PqCode) -> Result<Vec<f32>> {
    let cb = &pcb.codebook;
    code.validate(cb.m(), cb.n())?;
    let mut out = Vec::with_capacity(cb.dim());
    for (j, &c) in code.0.iter().enumerate() {
        out.extend_from_slice(cb.centroid(j, c as usize));
    }
    Ok(out)
}

/// Secure codes of a database under one key.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtectedIndex {
    pcb: ProtectedCodebook,
    codes: Vec<u16>,
    ids: Vec<u32>,
}

impl ProtectedIndex {
    pub fn protected_codebook(&self) -> &ProtectedCodebook {
        &self.pcb
    }

    pub fn key_id(&self) -> &KeyId {
        &self.pcb.key_id
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn code(&self, i: usize) -> PqCode {
        let m = self.pcb.codebook.m();
        PqCode(self.codes[i * m..(i + 1) * m].to_vec())
    }

    /// Encodes a query for this index; fails unless `key` is the index key.
    pub fn query_code(&self, key: &CancelKey, x: &[f32]) -> Result<PqCode> {
        secure_quantize(&self.pcb, key, x)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::with_preamble(PROTECTED_INDEX_MAGIC, DTYPE_F32);
        w.bytes(&self.pcb.key_id);
        w.blob(&self.pcb.codebook.to_bytes()?)?;
        w.blob(&self.pcb.table.to_bytes()?)?;
        write_codes(&mut w, &self.codes, &self.ids)?;
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.preamble(PROTECTED_INDEX_MAGIC)?;
        let mut key_id = [0u8; 16];
        key_id.copy_from_slice(r.take(16)?);
        let codebook = PqCodebook::from_bytes(r.blob()?)?;
        let at = r.offset();
        let table = DistanceTable::from_bytes(r.blob()?)?;
        if (table.m(), table.n()) != (codebook.m(), codebook.n()) {
            return Err(Error::format(at, "distance table does not match codebook"));
        }
        let (codes, ids) = read_codes(&mut r, codebook.m(), codebook.n())?;
        r.expect_end()?;
        Ok(Self {
            pcb: ProtectedCodebook {
                codebook,
                table,
                key_id,
            },
            codes,
            ids,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }
}

pub fn build_protected_index(set: &EmbeddingSet, pcb: &ProtectedCodebook, key: &CancelKey) -> Result<ProtectedIndex> {
    let ids = (0..set.count() as u32).collect();
    build_protected_index_with_ids(set, pcb, key, ids)
}

pub fn build_protected_index_with_ids(
    set: &EmbeddingSet,
    pcb: &ProtectedCodebook,
    key: &CancelKey,
    ids: Vec<u32>,
) -> Result<ProtectedIndex> {
    pcb.check_key(key)?;
    pcb.codebook.check_dim(set.dim())?;
    if ids.len() != set.count() {
        return Err(Error::param(format!("{} ids for {} vectors", ids.len(), set.count())));
    }
    let mut codes = Vec::with_capacity(set.count() * key.m());
    for v in set.iter() {
        codes.extend(secure_quantize_unchecked(pcb, key, v).0);
    }
    Ok(ProtectedIndex {
        pcb: pcb.clone(),
        codes,
        ids,
    })
}

/// Top-K over the permuted table; same contract as the plain filter.
pub fn cancelable_topk(index: &ProtectedIndex, query_code: &PqCode, k: usize) -> Result<CandidateList> {
    scan_topk(&index.pcb.table, &index.codes, &index.ids, query_code, k)
}

/// Issues a fresh key from `new_seed` and re-protects the database with it.
pub fn revoke_and_reissue(
    set: &EmbeddingSet,
    codebook: &PqCodebook,
    table: &DistanceTable,
    new_seed: &KeySeed,
    sigma_proj: f64,
) -> Result<(CancelKey, ProtectedIndex)> {
    let key = CancelKey::generate(new_seed, codebook.m(), codebook.n(), codebook.d_sub(), sigma_proj)?;
    let pcb = protect(codebook, table, &key)?;
    let index = build_protected_index(set, &pcb, &key)?;
    Ok((key, index))
}
