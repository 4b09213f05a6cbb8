use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{normalize_in_place, EmbeddingSet};
use crate::error::{Error, Result};

/// Parameters of the identity-clustered synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub dim: usize,
    /// Per-component standard deviation of within-identity perturbation.
    pub intra_class_noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities == 0 || self.samples_per_identity == 0 {
            return Err(Error::param("identity and sample counts must be at least 1"));
        }
        if self.dim < 2 {
            return Err(Error::param("synthetic dimension must be at least 2"));
        }
        if !(self.intra_class_noise > 0.0 && self.intra_class_noise.is_finite()) {
            return Err(Error::param("intra_class_noise must be positive"));
        }
        Ok(())
    }
}

/// Generates unit-norm samples around unit-norm identity centers.
///
/// Rows are identity-major: identity `i` occupies rows
/// `i * samples_per_identity .. (i + 1) * samples_per_identity`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<EmbeddingSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;

    let mut centers = Vec::with_capacity(spec.n_identities);
    for _ in 0..spec.n_identities {
        let mut c: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize_in_place(&mut c);
        centers.push(c);
    }

    let count = spec.n_identities * spec.samples_per_identity;
    let mut data = Vec::with_capacity(count * dim);
    let mut labels = Vec::with_capacity(count);
    let mut sample = vec![0.0f64; dim];
    for (id, c) in centers.iter().enumerate() {
        for _ in 0..spec.samples_per_identity {
            for (s, &ci) in sample.iter_mut().zip(c) {
                let eps: f64 = StandardNormal.sample(&mut rng);
                *s = ci + spec.intra_class_noise * eps;
            }
            normalize_in_place(&mut sample);
            data.extend(sample.iter().map(|&x| x as f32));
            labels.push(id as u32);
        }
    }
    EmbeddingSet::new(dim, data, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed_io::{cosine, norm};

    fn spec(ids: usize, samples: usize, dim: usize, noise: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_identities: ids,
            samples_per_identity: samples,
            dim,
            intra_class_noise: noise,
            seed,
        }
    }

    #[test]
    fn tiny_noise_gives_near_identical_unit_vectors() {
        let set = gen_synthetic(&spec(1, 3, 16, 1e-9, 1)).unwrap();
        assert_eq!(set.count(), 3);
        for v in set.iter() {
            assert!((norm(v) - 1.0).abs() < 1e-6);
        }
        assert!(cosine(set.vector(0), set.vector(2)) > 1.0 - 1e-6);
    }

    #[test]
    fn deterministic_in_seed() {
        let a = gen_synthetic(&spec(4, 3, 8, 0.1, 9)).unwrap();
        let b = gen_synthetic(&spec(4, 3, 8, 0.1, 9)).unwrap();
        let c = gen_synthetic(&spec(4, 3, 8, 0.1, 10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_low_dimension() {
        assert!(matches!(gen_synthetic(&spec(1, 1, 1, 0.1, 0)), Err(Error::Param(_))));
        assert!(gen_synthetic(&spec(1, 1, 4, 0.0, 0)).is_err());
    }

    #[test]
    fn intra_class_cosine_exceeds_inter_class() {
        let set = gen_synthetic(&spec(500, 20, 512, 0.08, 42)).unwrap();
        let labels = set.labels().unwrap();
        // Intra: all pairs within the first 50 identities. Inter: consecutive
        // samples straddling identity boundaries plus a strided sweep.
        let (mut intra, mut n_intra) = (0.0, 0usize);
        for id in 0..50 {
            let base = id * 20;
            for a in 0..20 {
                for b in a + 1..20 {
                    intra += cosine(set.vector(base + a), set.vector(base + b));
                    n_intra += 1;
                }
            }
        }
        let (mut inter, mut n_inter) = (0.0, 0usize);
        for i in (0..set.count()).step_by(7) {
            let j = (i * 31 + 13) % set.count();
            if labels[i] != labels[j] {
                inter += cosine(set.vector(i), set.vector(j));
                n_inter += 1;
            }
        }
        let (intra, inter) = (intra / n_intra as f64, inter / n_inter as f64);
        assert!(intra > inter, "intra {intra} inter {inter}");
    }
}
