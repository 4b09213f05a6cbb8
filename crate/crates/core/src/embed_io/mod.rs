//! Embedding sets: ingestion, synthesis, PCA compression and normalization.

mod evec;
mod pca;
mod synthetic;

pub use evec::{load_evec, read_evec, write_evec, EVEC_HEADER_LEN};
pub use pca::{apply_pca, fit_pca, PcaModel};
pub use synthetic::{gen_synthetic, SyntheticSpec};

use crate::error::{Error, Result};

/// A labeled collection of fixed-dimension real vectors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    data: Vec<f32>,
    labels: Option<Vec<u32>>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, data: Vec<f32>, labels: Option<Vec<u32>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("embedding dimension must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::param(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "non-finite component {} in vector {}",
                i % dim,
                i / dim
            )));
        }
        let count = data.len() / dim;
        if let Some(l) = &labels {
            if l.len() != count {
                return Err(Error::param(format!(
                    "{} labels for {count} vectors",
                    l.len()
                )));
            }
        }
        Ok(Self { dim, data, labels })
    }

    /// Builds a set from individual rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R], labels: Option<Vec<u32>>) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::param("cannot infer dimension from zero rows"))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::param(format!(
                    "row {i} has dimension {}, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data, labels)
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new(), None)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<u32> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn with_labels(mut self, labels: Option<Vec<u32>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.count() {
                return Err(Error::param(format!(
                    "{} labels for {} vectors",
                    l.len(),
                    self.count()
                )));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    /// Copies the rows at `indices`, carrying labels through.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.vector(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self {
            dim: self.dim,
            data,
            labels,
        }
    }
}

/// Scales every vector to unit Euclidean norm.
pub fn l2_normalize(set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let mut data = Vec::with_capacity(set.data.len());
    for (i, v) in set.iter().enumerate() {
        let norm = norm(v);
        if norm == 0.0 {
            return Err(Error::data(format!("vector {i} is zero and cannot be normalized")));
        }
        data.extend(v.iter().map(|&x| (x as f64 / norm) as f32));
    }
    Ok(EmbeddingSet {
        dim: set.dim,
        data,
        labels: set.labels.clone(),
    })
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

pub(crate) fn normalize_in_place(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Inner product with a widened accumulator.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalizes_three_four() {
        let set = EmbeddingSet::new(2, vec![3.0, 4.0], None).unwrap();
        let n = l2_normalize(&set).unwrap();
        assert!((n.vector(0)[0] - 0.6).abs() < 1e-7);
        assert!((n.vector(0)[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn unit_vector_unchanged() {
        let set = EmbeddingSet::new(3, vec![0.0, 1.0, 0.0], None).unwrap();
        assert_eq!(l2_normalize(&set).unwrap(), set);
    }

    #[test]
    fn zero_vector_rejected_with_index() {
        let set = EmbeddingSet::new(2, vec![1.0, 0.0, 0.0, 0.0], None).unwrap();
        match l2_normalize(&set) {
            Err(Error::Data(msg)) => assert!(msg.contains("vector 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_finite_and_label_mismatch() {
        assert!(EmbeddingSet::new(2, vec![1.0, f32::INFINITY], None).is_err());
        assert!(EmbeddingSet::new(2, vec![1.0, 2.0], Some(vec![0, 1])).is_err());
        assert!(EmbeddingSet::new(0, vec![], None).is_err());
    }

    #[test]
    fn subset_carries_labels() {
        let set = EmbeddingSet::new(1, vec![1.0, 2.0, 3.0], Some(vec![7, 8, 9])).unwrap();
        let s = set.subset(&[2, 0]);
        assert_eq!(s.as_flat(), &[3.0, 1.0]);
        assert_eq!(s.labels(), Some(&[9, 7][..]));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in prop::collection::vec(-100.0f32..100.0, 1..32)) {
            prop_assume!(norm(&v) > 1e-3);
            let set = EmbeddingSet::new(v.len(), v, None).unwrap();
            let once = l2_normalize(&set).unwrap();
            let twice = l2_normalize(&once).unwrap();
            prop_assert!((norm(once.vector(0)) - 1.0).abs() <= 1e-6);
            for (a, b) in once.as_flat().iter().zip(twice.as_flat()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
    }
}
