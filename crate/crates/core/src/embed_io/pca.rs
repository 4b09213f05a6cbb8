//! Principal component projection, fitted by eigendecomposition of the
//! mean-centered sample covariance. No whitening is applied.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use super::EmbeddingSet;
use crate::container::{self, Reader, Writer, DTYPE_F32};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PCAM";

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    input_dim: usize,
    output_dim: usize,
    mean: Vec<f32>,
    /// `output_dim x input_dim`, row-major, orthonormal rows.
    components: Vec<f32>,
    /// Variance captured by each component, non-increasing.
    explained_variance: Vec<f32>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn component(&self, i: usize) -> &[f32] {
        &self.components[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn explained_variance(&self) -> &[f32] {
        &self.explained_variance
    }

    pub fn project(&self, x: &[f32]) -> Vec<f32> {
        let centered: Vec<f64> = x
            .iter()
            .zip(&self.mean)
            .map(|(&a, &m)| a as f64 - m as f64)
            .collect();
        (0..self.output_dim)
            .map(|i| {
                self.component(i)
                    .iter()
                    .zip(&centered)
                    .map(|(&c, &x)| c as f64 * x)
                    .sum::<f64>() as f32
            })
            .collect()
    }

    /// Maps a projected vector back into the input space.
    pub fn reconstruct(&self, y: &[f32]) -> Vec<f32> {
        let mut out: Vec<f64> = self.mean.iter().map(|&m| m as f64).collect();
        for (i, &yi) in y.iter().enumerate() {
            for (o, &c) in out.iter_mut().zip(self.component(i)) {
                *o += yi as f64 * c as f64;
            }
        }
        out.into_iter().map(|v| v as f32).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::with_preamble(MAGIC, DTYPE_F32);
        w.len_u32(self.input_dim)?;
        w.len_u32(self.output_dim)?;
        w.f32s(&self.mean);
        w.f32s(&self.components);
        w.f32s(&self.explained_variance);
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.preamble(MAGIC)?;
        let at = r.offset();
        let input_dim = r.usize()?;
        let output_dim = r.usize()?;
        if input_dim == 0 || output_dim == 0 || output_dim > input_dim {
            return Err(Error::format(
                at,
                format!("invalid dims {input_dim} -> {output_dim}"),
            ));
        }
        let mean = r.finite_f32s(input_dim)?;
        let components = r.finite_f32s(input_dim * output_dim)?;
        let explained_variance = r.finite_f32s(output_dim)?;
        r.expect_end()?;
        Ok(Self {
            input_dim,
            output_dim,
            mean,
            components,
            explained_variance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }
}

pub fn fit_pca(set: &EmbeddingSet, target_dim: usize) -> Result<PcaModel> {
    let (n, d) = (set.count(), set.dim());
    if target_dim == 0 || target_dim > n.min(d) {
        return Err(Error::param(format!(
            "target_dim {target_dim} must lie in [1, min(count {n}, dim {d})]"
        )));
    }

    let mut mean = vec![0.0f64; d];
    for v in set.iter() {
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, d, |i, j| set.vector(i)[j] as f64 - mean[j]);
    let denom = n.saturating_sub(1).max(1) as f64;
    let cov = (centered.transpose() * &centered) / denom;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut components = Vec::with_capacity(target_dim * d);
    let mut explained = Vec::with_capacity(target_dim);
    for &k in order.iter().take(target_dim) {
        let col = eig.eigenvectors.column(k);
        // Sign convention: the largest-magnitude entry is non-negative.
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|&v| (sign * v) as f32));
        explained.push(eig.eigenvalues[k].max(0.0) as f32);
    }

    Ok(PcaModel {
        input_dim: d,
        output_dim: target_dim,
        mean: mean.into_iter().map(|m| m as f32).collect(),
        components,
        explained_variance: explained,
    })
}

pub fn apply_pca(model: &PcaModel, set: &EmbeddingSet) -> Result<EmbeddingSet> {
    if set.dim() != model.input_dim {
        return Err(Error::param(format!(
            "set dimension {} does not match PCA input dimension {}",
            set.dim(),
            model.input_dim
        )));
    }
    let mut data = Vec::with_capacity(set.count() * model.output_dim);
    for v in set.iter() {
        data.extend(model.project(v));
    }
    EmbeddingSet::new(model.output_dim, data, set.labels().map(<[u32]>::to_vec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed_io::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_set(n: usize, d: usize, seed: u64) -> EmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Anisotropic scales so eigenvalues are well separated.
        let data = (0..n * d)
            .map(|i| {
                let scale = 1.0 + (i % d) as f32 * 0.37;
                scale * rng.sample::<f32, _>(StandardNormal)
            })
            .collect();
        EmbeddingSet::new(d, data, None).unwrap()
    }

    fn dist(a: &[f32], b: &[f32]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Cyclic Jacobi eigenvalue iteration, independent of nalgebra.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-22 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    #[test]
    fn recovers_exact_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f32> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
        let v: Vec<f32> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
        let rows: Vec<Vec<f32>> = (0..40)
            .map(|_| {
                let (a, b): (f32, f32) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                u.iter().zip(&v).map(|(x, y)| a * x + b * y + 0.5).collect()
            })
            .collect();
        let set = EmbeddingSet::from_rows(&rows, None).unwrap();
        let model = fit_pca(&set, 2).unwrap();
        for row in &rows {
            let back = model.reconstruct(&model.project(row));
            assert!(dist(&back, row) <= 1e-5, "{}", dist(&back, row));
        }
    }

    #[test]
    fn full_rank_preserves_distances() {
        let set = gaussian_set(30, 6, 5);
        let model = fit_pca(&set, 6).unwrap();
        let out = apply_pca(&model, &set).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let d0 = dist(set.vector(i), set.vector(j));
                let d1 = dist(out.vector(i), out.vector(j));
                assert!((d0 - d1).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn components_orthonormal_and_sign_fixed() {
        let set = gaussian_set(200, 10, 11);
        let model = fit_pca(&set, 5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let ip = dot(model.component(i), model.component(j));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ip - want).abs() <= 1e-4);
            }
            let c = model.component(i);
            let pivot = c.iter().copied().fold(0.0f32, |b, v| if v.abs() > b.abs() { v } else { b });
            assert!(pivot >= 0.0);
        }
    }

    #[test]
    fn explained_variance_matches_jacobi_oracle() {
        let (n, d) = (300, 12);
        let set = gaussian_set(n, d, 17);
        let model = fit_pca(&set, d / 2).unwrap();

        let mut mean = vec![0.0; d];
        for v in set.iter() {
            for (m, &x) in mean.iter_mut().zip(v) {
                *m += x as f64 / n as f64;
            }
        }
        let mut cov = vec![vec![0.0; d]; d];
        for v in set.iter() {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += (v[i] as f64 - mean[i]) * (v[j] as f64 - mean[j]) / (n - 1) as f64;
                }
            }
        }
        let oracle = jacobi_eigenvalues(cov);
        let ev = model.explained_variance();
        for w in ev.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for (got, want) in ev.iter().zip(&oracle) {
            assert!((*got as f64 - want).abs() <= 1e-4 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn centering_and_residual_orthogonality() {
        let set = gaussian_set(100, 8, 23);
        let model = fit_pca(&set, 3).unwrap();
        let zero = model.project(model.mean());
        assert!(zero.iter().all(|v| v.abs() < 1e-6));

        for x in set.iter().take(20) {
            let back = model.reconstruct(&model.project(x));
            let residual: Vec<f32> = x.iter().zip(&back).map(|(a, b)| a - b).collect();
            for i in 0..3 {
                assert!(dot(&residual, model.component(i)).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn parameter_errors() {
        let set = gaussian_set(4, 6, 1);
        assert!(fit_pca(&set, 5).is_err());
        assert!(fit_pca(&set, 0).is_err());
        let model = fit_pca(&set, 2).unwrap();
        let other = gaussian_set(3, 5, 2);
        assert!(matches!(apply_pca(&model, &other), Err(Error::Param(_))));
    }

    #[test]
    fn serialization_round_trip() {
        let model = fit_pca(&gaussian_set(50, 6, 8), 3).unwrap();
        let back = PcaModel::from_bytes(&model.to_bytes().unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
