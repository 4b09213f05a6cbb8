use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use super::{quantize_unchecked, DistanceTable, PqCode, PqCodebook};
use crate::container::{self, Reader, Writer, DTYPE_F32};
use crate::embed_io::EmbeddingSet;
use crate::error::{Error, Result};

const INDEX_MAGIC: &[u8; 4] = b"PQIX";

/// Coarse-stage result: record ids with their PQ distances, ascending.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Candidate {
    pub id: u32,
    pub distance: f64,
}

pub type CandidateList = Vec<Candidate>;

/// Unprotected PQ index over a database of encoded vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PqIndex {
    codebook: PqCodebook,
    table: DistanceTable,
    /// `N x m`, row-major.
    codes: Vec<u16>,
    ids: Vec<u32>,
}

impl PqIndex {
    pub fn codebook(&self) -> &PqCodebook {
        &self.codebook
    }

    pub fn table(&self) -> &DistanceTable {
        &self.table
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
        let m = self.codebook.m();
        PqCode(self.codes[i * m..(i + 1) * m].to_vec())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::with_preamble(INDEX_MAGIC, DTYPE_F32);
        w.blob(&self.codebook.to_bytes()?)?;
        w.blob(&self.table.to_bytes()?)?;
        write_codes(&mut w, &self.codes, &self.ids)?;
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.preamble(INDEX_MAGIC)?;
        let codebook = PqCodebook::read(&mut Reader::new(r.blob()?))?;
        let table = DistanceTable::read(&mut Reader::new(r.blob()?))?;
        table.check_matches(&codebook)?;
        let (codes, ids) = read_codes(&mut r, codebook.m(), codebook.n())?;
        r.expect_end()?;
        Ok(Self {
            codebook,
            table,
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

pub(crate) fn write_codes(w: &mut Writer, codes: &[u16], ids: &[u32]) -> Result<()> {
    w.len_u32(ids.len())?;
    for &c in codes {
        w.u32(c as u32);
    }
    for &id in ids {
        w.u32(id);
    }
    Ok(())
}

pub(crate) fn read_codes(r: &mut Reader<'_>, m: usize, n: usize) -> Result<(Vec<u16>, Vec<u32>)> {
    let count = r.usize()?;
    let at = r.offset();
    let raw = r.u32s(count.checked_mul(m).ok_or_else(|| r.err("code count overflows"))?)?;
    if let Some(pos) = raw.iter().position(|&c| c as usize >= n) {
        return Err(Error::format(
            at + 4 * pos as u64,
            format!("code entry {} out of range for n = {n}", raw[pos]),
        ));
    }
    let ids = r.u32s(count)?;
    Ok((raw.into_iter().map(|c| c as u16).collect(), ids))
}

pub fn build_index(codebook: &PqCodebook, table: &DistanceTable, set: &EmbeddingSet) -> Result<PqIndex> {
    let ids = (0..set.count() as u32).collect();
    build_index_with_ids(codebook, table, set, ids)
}

/// Like [`build_index`] but with caller-chosen record identifiers.
pub fn build_index_with_ids(
    codebook: &PqCodebook,
    table: &DistanceTable,
    set: &EmbeddingSet,
    ids: Vec<u32>,
) -> Result<PqIndex> {
    table.check_matches(codebook)?;
    codebook.check_dim(set.dim())?;
    if ids.len() != set.count() {
        return Err(Error::param(format!(
            "{} ids for {} vectors",
            ids.len(),
            set.count()
        )));
    }
    let mut codes = Vec::with_capacity(set.count() * codebook.m());
    for v in set.iter() {
        codes.extend(quantize_unchecked(codebook, v).0);
    }
    Ok(PqIndex {
        codebook: codebook.clone(),
        table: table.clone(),
        codes,
        ids,
    })
}

pub fn topk_filter(index: &PqIndex, query_code: &PqCode, k: usize) -> Result<CandidateList> {
    scan_topk(&index.table, &index.codes, &index.ids, query_code, k)
}

/// Query-specific slice of the distance table: `lut[j * n + c] = D(j, q_j, c)`.
pub(crate) struct QueryLut {
    m: usize,
    n: usize,
    lut: Vec<f32>,
}

impl QueryLut {
    pub(crate) fn new(table: &DistanceTable, query: &PqCode) -> Result<Self> {
        query.validate(table.m(), table.n())?;
        let mut lut = Vec::with_capacity(table.m() * table.n());
        for (j, &q) in query.0.iter().enumerate() {
            lut.extend_from_slice(table.row(j, q as usize));
        }
        Ok(Self {
            m: table.m(),
            n: table.n(),
            lut,
        })
    }

    #[inline]
    pub(crate) fn distance(&self, code: &[u16]) -> f64 {
        let mut acc = 0.0f64;
        for (row, &c) in self.lut.chunks_exact(self.n).zip(code) {
            acc += row[c as usize] as f64;
        }
        acc
    }
}

#[derive(PartialEq)]
struct Entry(f64, u32);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Full scan keeping the `k` smallest (distance, id) pairs.
pub(crate) fn scan_topk(
    table: &DistanceTable,
    codes: &[u16],
    ids: &[u32],
    query: &PqCode,
    k: usize,
) -> Result<CandidateList> {
    if k == 0 {
        return Err(Error::param("K must be at least 1"));
    }
    if ids.is_empty() {
        return Err(Error::State("index is empty".into()));
    }
    let lut = QueryLut::new(table, query)?;
    let k = k.min(ids.len());
    let mut heap: BinaryHeap<Entry> = BinaryHeap::with_capacity(k + 1);
    for (code, &id) in codes.chunks_exact(lut.m).zip(ids) {
        let e = Entry(lut.distance(code), id);
        if heap.len() < k {
            heap.push(e);
        } else if e < *heap.peek().unwrap() {
            heap.pop();
            heap.push(e);
        }
    }
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .map(|Entry(distance, id)| Candidate { id, distance })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pq_index::{build_distance_table, pq_distance, quantize, train_codebook};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_set(count: usize, dim: usize, seed: u64) -> EmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..count * dim).map(|_| rng.sample(StandardNormal)).collect();
        EmbeddingSet::new(dim, data, None).unwrap()
    }

    fn fixture(count: usize, seed: u64) -> (EmbeddingSet, PqIndex) {
        let set = random_set(count, 16, seed);
        let cb = train_codebook(&set, 4, 16, seed).unwrap();
        let table = build_distance_table(&cb);
        let index = build_index(&cb, &table, &set).unwrap();
        (set, index)
    }

    #[test]
    fn empty_and_singleton_sets() {
        let (_, full) = fixture(50, 1);
        let empty = EmbeddingSet::empty(16).unwrap();
        let idx = build_index(full.codebook(), full.table(), &empty).unwrap();
        assert!(idx.is_empty());
        assert!(matches!(
            topk_filter(&idx, &PqCode(vec![0; 4]), 1),
            Err(Error::State(_))
        ));

        let one = random_set(1, 16, 9);
        let idx = build_index(full.codebook(), full.table(), &one).unwrap();
        assert_eq!(idx.code(0), quantize(full.codebook(), one.vector(0)).unwrap());
    }

    #[test]
    fn stored_codes_rederivable() {
        let (set, index) = fixture(1000, 2);
        for (i, v) in set.iter().enumerate() {
            assert_eq!(index.code(i), quantize(index.codebook(), v).unwrap());
        }
    }

    #[test]
    fn k_at_least_n_returns_everything_sorted() {
        let (_, index) = fixture(60, 3);
        let q = index.code(7);
        let out = topk_filter(&index, &q, 100).unwrap();
        assert_eq!(out.len(), 60);
        for w in out.windows(2) {
            assert!((w[0].distance, w[0].id) <= (w[1].distance, w[1].id));
        }
    }

    #[test]
    fn unique_exact_match_ranks_first() {
        let cb = PqCodebook::new(2, 3, 1, vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0]).unwrap();
        let table = build_distance_table(&cb);
        let rows = vec![vec![2.0f32, 2.0], vec![0.0, 1.0], vec![1.0, 2.0]];
        let set = EmbeddingSet::from_rows(&rows, None).unwrap();
        let index = build_index(&cb, &table, &set).unwrap();
        let out = topk_filter(&index, &PqCode(vec![0, 1]), 3).unwrap();
        assert_eq!(out[0], Candidate { id: 1, distance: 0.0 });
    }

    #[test]
    fn matches_full_scan_oracle() {
        let (set, index) = fixture(200, 4);
        let queries = random_set(20, 16, 99);
        for q in queries.iter() {
            let code = quantize(index.codebook(), q).unwrap();
            let mut all: Vec<(f64, u32)> = (0..set.count())
                .map(|i| (pq_distance(index.table(), &code, &index.code(i)).unwrap(), i as u32))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let got = topk_filter(&index, &code, 5).unwrap();
            let want: Vec<(f64, u32)> = all.into_iter().take(5).collect();
            let got: Vec<(f64, u32)> = got.iter().map(|c| (c.distance, c.id)).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn zero_k_rejected() {
        let (_, index) = fixture(20, 5);
        assert!(matches!(topk_filter(&index, &index.code(0), 0), Err(Error::Param(_))));
    }

    #[test]
    fn index_round_trip() {
        let (_, index) = fixture(30, 6);
        assert_eq!(PqIndex::from_bytes(&index.to_bytes().unwrap()).unwrap(), index);
    }
}
