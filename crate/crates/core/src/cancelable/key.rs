//! Cancelable key material: per-subspace permutations and projections.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::container::{self, Reader, Writer, DTYPE_F32};
use crate::error::{Error, Result};

const KEY_MAGIC: &[u8; 4] = b"CKEY";

/// 256-bit secret from which every component of a key is derived.
pub type KeySeed = [u8; 32];

/// 128-bit key identifier: a truncated SHA-256 of the key material.
pub type KeyId = [u8; 16];

/// Expands a short numeric seed into a [`KeySeed`].
pub fn seed_from_u64(seed: u64) -> KeySeed {
    let mut h = Sha256::new();
    h.update(b"cancelable-pq/seed");
    h.update(seed.to_le_bytes());
    h.finalize().into()
}

/// Independent stream for subspace `j` and purpose `label`.
fn derived_rng(seed: &KeySeed, j: usize, label: &[u8]) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed);
    h.update((j as u64).to_le_bytes());
    h.update(label);
    ChaCha20Rng::from_seed(h.finalize().into())
}

/// Permutations `σ_j` (old index → new position) and square projection
/// matrices `R_j`, one of each per subspace.
#[derive(Clone, PartialEq)]
pub struct CancelKey {
    key_id: KeyId,
    m: usize,
    n: usize,
    d_sub: usize,
    sigma_proj: f32,
    perms: Vec<u32>,
    projs: Vec<f32>,
}

impl fmt::Debug for CancelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Key material stays out of logs.
        f.debug_struct("CancelKey")
            .field("key_id", &hex(&self.key_id))
            .field("m", &self.m)
            .field("n", &self.n)
            .field("d_sub", &self.d_sub)
            .field("sigma_proj", &self.sigma_proj)
            .finish_non_exhaustive()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn check_shape(m: usize, n: usize, d_sub: usize, sigma_proj: f64) -> Result<()> {
    if m == 0 || d_sub == 0 || !(2..=crate::pq_index::MAX_CENTROIDS).contains(&n) {
        return Err(Error::param(format!(
            "invalid key shape m = {m}, n = {n}, d_sub = {d_sub}"
        )));
    }
    if !(sigma_proj >= 0.0 && sigma_proj.is_finite()) {
        return Err(Error::param(format!("sigma_proj = {sigma_proj} must be finite and >= 0")));
    }
    Ok(())
}

impl CancelKey {
    /// Full key: random permutations and `R_j = I + N(0, sigma_proj²)`.
    pub fn generate(seed: &KeySeed, m: usize, n: usize, d_sub: usize, sigma_proj: f64) -> Result<Self> {
        Self::build(seed, m, n, d_sub, sigma_proj, true)
    }

    /// Projection-only key: identity permutations, random projections.
    pub fn generate_projection_only(
        seed: &KeySeed,
        m: usize,
        n: usize,
        d_sub: usize,
        sigma_proj: f64,
    ) -> Result<Self> {
        Self::build(seed, m, n, d_sub, sigma_proj, false)
    }

    /// Identity permutations and identity projections.
    pub fn identity(m: usize, n: usize, d_sub: usize) -> Result<Self> {
        Self::build(&[0; 32], m, n, d_sub, 0.0, false)
    }

    fn build(seed: &KeySeed, m: usize, n: usize, d_sub: usize, sigma_proj: f64, permute: bool) -> Result<Self> {
        check_shape(m, n, d_sub, sigma_proj)?;
        let sigma = sigma_proj as f32;
        let mut perms = Vec::with_capacity(m * n);
        let mut projs = Vec::with_capacity(m * d_sub * d_sub);
        for j in 0..m {
            let mut p: Vec<u32> = (0..n as u32).collect();
            if permute {
                p.shuffle(&mut derived_rng(seed, j, b"perm"));
            }
            perms.extend(p);

            let mut rng = derived_rng(seed, j, b"proj");
            for r in 0..d_sub {
                for c in 0..d_sub {
                    let mut v = if r == c { 1.0f32 } else { 0.0 };
                    if sigma > 0.0 {
                        let g: f64 = rng.sample(StandardNormal);
                        v += (g * sigma as f64) as f32;
                    }
                    projs.push(v);
                }
            }
        }
        Ok(Self::assemble(m, n, d_sub, sigma, perms, projs))
    }

    fn assemble(m: usize, n: usize, d_sub: usize, sigma_proj: f32, perms: Vec<u32>, projs: Vec<f32>) -> Self {
        let mut key = Self {
            key_id: [0; 16],
            m,
            n,
            d_sub,
            sigma_proj,
            perms,
            projs,
        };
        let digest = Sha256::digest(key.material_bytes());
        key.key_id.copy_from_slice(&digest[..16]);
        key
    }

    /// Key with explicitly supplied permutations and identity projections.
    pub fn from_permutations(perms: &[Vec<u32>], d_sub: usize) -> Result<Self> {
        let m = perms.len();
        let n = perms.first().map_or(0, Vec::len);
        check_shape(m, n, d_sub, 0.0)?;
        for (j, p) in perms.iter().enumerate() {
            check_bijection(p, n).map_err(|e| Error::param(format!("permutation {j}: {e}")))?;
        }
        let mut projs = Vec::with_capacity(m * d_sub * d_sub);
        for _ in 0..m {
            for r in 0..d_sub {
                for c in 0..d_sub {
                    projs.push(if r == c { 1.0 } else { 0.0 });
                }
            }
        }
        Ok(Self::assemble(m, n, d_sub, 0.0, perms.concat(), projs))
    }

    pub fn key_id(&self) -> &KeyId {
        &self.key_id
    }

    pub fn key_id_hex(&self) -> String {
        hex(&self.key_id)
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

    pub fn sigma_proj(&self) -> f32 {
        self.sigma_proj
    }

    /// `σ_j` as a lookup table: `perm(j)[old] = new`.
    pub fn perm(&self, j: usize) -> &[u32] {
        &self.perms[j * self.n..(j + 1) * self.n]
    }

    /// Inverse permutation: `inv[new] = old`.
    pub fn inverse_perm(&self, j: usize) -> Vec<u32> {
        let mut inv = vec![0u32; self.n];
        for (old, &new) in self.perm(j).iter().enumerate() {
            inv[new as usize] = old as u32;
        }
        inv
    }

    /// `R_j`, row-major `d_sub x d_sub`.
    pub fn proj(&self, j: usize) -> &[f32] {
        let s = self.d_sub * self.d_sub;
        &self.projs[j * s..(j + 1) * s]
    }

    /// Row-vector product `x · R_j`.
    pub fn project(&self, j: usize, x: &[f32], out: &mut [f32]) {
        let d = self.d_sub;
        let r = self.proj(j);
        for (c, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for (row, &xr) in x.iter().enumerate() {
                acc += xr as f64 * r[row * d + c] as f64;
            }
            *o = acc as f32;
        }
    }

    fn material_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write_material(&mut w);
        w.finish()
    }

    fn write_material(&self, w: &mut Writer) {
        for v in [self.m, self.n, self.d_sub] {
            w.u32(v as u32);
        }
        w.f32(self.sigma_proj);
        for &p in &self.perms {
            w.u32(p);
        }
        w.f32s(&self.projs);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_preamble(KEY_MAGIC, DTYPE_F32);
        for v in [self.m, self.n, self.d_sub] {
            w.u32(v as u32);
        }
        w.f32(self.sigma_proj);
        w.bytes(&self.key_id);
        for &p in &self.perms {
            w.u32(p);
        }
        w.f32s(&self.projs);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.preamble(KEY_MAGIC)?;
        let at = r.offset();
        let (m, n, d_sub) = (r.usize()?, r.usize()?, r.usize()?);
        let sigma_at = r.offset();
        let sigma_proj = r.f32()?;
        check_shape(m, n, d_sub, sigma_proj as f64).map_err(|e| Error::format(at, e.to_string()))?;
        if !(sigma_proj >= 0.0) {
            return Err(Error::format(sigma_at, "negative sigma_proj"));
        }
        let id_at = r.offset();
        let mut stored_id = [0u8; 16];
        stored_id.copy_from_slice(r.take(16)?);
        let perm_at = r.offset();
        let perms = r.u32s(m * n)?;
        for (j, p) in perms.chunks_exact(n).enumerate() {
            check_bijection(p, n)
                .map_err(|e| Error::format(perm_at + (4 * j * n) as u64, format!("permutation {j}: {e}")))?;
        }
        let projs = r.finite_f32s(m * d_sub * d_sub)?;
        r.expect_end()?;
        let key = Self::assemble(m, n, d_sub, sigma_proj, perms, projs);
        if key.key_id != stored_id {
            return Err(Error::format(id_at, "key_id does not match key material"));
        }
        Ok(key)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }
}

fn check_bijection(p: &[u32], n: usize) -> std::result::Result<(), String> {
    if p.len() != n {
        return Err(format!("length {} != {n}", p.len()));
    }
    let mut seen = vec![false; n];
    for &v in p {
        let v = v as usize;
        if v >= n || seen[v] {
            return Err(format!("entry {v} repeated or out of range"));
        }
        seen[v] = true;
    }
    Ok(())
}

/// `log2((n!)^m)`: the work of brute-forcing every subspace permutation.
pub fn brute_force_cost_log2(n: usize, m: usize) -> f64 {
    m as f64 * statrs::function::gamma::ln_gamma(n as f64 + 1.0) / std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_gives_exact_identity() {
        let key = CancelKey::generate(&seed_from_u64(1), 8, 16, 3, 0.0).unwrap();
        for j in 0..8 {
            assert_eq!(key.proj(j), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        }
        let x = [0.3f32, -0.7, 0.11];
        let mut y = [0.0f32; 3];
        key.project(2, &x, &mut y);
        assert_eq!(x, y);
    }

    #[test]
    fn permutations_are_bijections() {
        let key = CancelKey::generate(&seed_from_u64(2), 64, 64, 2, 2e-3).unwrap();
        for j in 0..64 {
            let mut p = key.perm(j).to_vec();
            p.sort_unstable();
            assert_eq!(p, (0..64).collect::<Vec<u32>>());
            let inv = key.inverse_perm(j);
            for old in 0..64 {
                assert_eq!(inv[key.perm(j)[old] as usize] as usize, old);
            }
        }
        assert!(key.projs.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn deterministic_in_seed() {
        let a = CancelKey::generate(&seed_from_u64(3), 4, 8, 2, 1e-3).unwrap();
        let b = CancelKey::generate(&seed_from_u64(3), 4, 8, 2, 1e-3).unwrap();
        assert_eq!(a, b);
        let c = CancelKey::generate(&seed_from_u64(4), 4, 8, 2, 1e-3).unwrap();
        assert_ne!(a.key_id(), c.key_id());
    }

    #[test]
    fn no_collisions_over_seed_pairs() {
        let mut collisions = 0;
        for s in 0..100u64 {
            let a = CancelKey::generate(&seed_from_u64(2 * s), 64, 64, 2, 0.0).unwrap();
            let b = CancelKey::generate(&seed_from_u64(2 * s + 1), 64, 64, 2, 0.0).unwrap();
            if a.perms == b.perms {
                collisions += 1;
            }
        }
        assert_eq!(collisions, 0);
    }

    #[test]
    fn projection_only_keeps_identity_perms() {
        let key = CancelKey::generate_projection_only(&seed_from_u64(5), 4, 8, 2, 1e-2).unwrap();
        for j in 0..4 {
            assert_eq!(key.perm(j), (0..8).collect::<Vec<u32>>().as_slice());
        }
        assert!(key.proj(0) != [1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let s = seed_from_u64(0);
        assert!(CancelKey::generate(&s, 0, 8, 2, 0.0).is_err());
        assert!(CancelKey::generate(&s, 4, 1, 2, 0.0).is_err());
        assert!(CancelKey::generate(&s, 4, 8, 2, -1.0).is_err());
        assert!(CancelKey::generate(&s, 4, 8, 2, f64::NAN).is_err());
        assert!(CancelKey::from_permutations(&[vec![0, 0]], 1).is_err());
    }

    #[test]
    fn file_round_trip_and_tamper_detection() {
        let key = CancelKey::generate(&seed_from_u64(6), 4, 8, 2, 2e-3).unwrap();
        let bytes = key.to_bytes();
        assert_eq!(&bytes[..4], b"CKEY");
        assert_eq!(bytes.len(), 9 + 16 + 16 + 4 * 32 + 4 * 16);
        assert_eq!(CancelKey::from_bytes(&bytes).unwrap(), key);

        let mut tampered = bytes.clone();
        let last = tampered.len() - 1;
        tampered[last] ^= 1;
        assert!(matches!(
            CancelKey::from_bytes(&tampered),
            Err(Error::Format { offset: 25, .. })
        ));

        let mut dup = bytes;
        dup.copy_within(45..49, 41);
        assert!(matches!(CancelKey::from_bytes(&dup), Err(Error::Format { offset: 41, .. })));
    }

    #[test]
    fn debug_hides_material() {
        let key = CancelKey::generate(&seed_from_u64(7), 2, 4, 2, 0.0).unwrap();
        let s = format!("{key:?}");
        assert!(s.contains(&key.key_id_hex()));
        assert!(!s.contains("perms"));
    }

    fn log2_factorial_sum(n: usize) -> f64 {
        (2..=n).map(|k| (k as f64).log2()).sum()
    }

    #[test]
    fn brute_force_cost_matches_direct_sum() {
        for (n, m) in [(2, 1), (16, 8), (64, 64), (256, 32)] {
            let want = m as f64 * log2_factorial_sum(n);
            assert!((brute_force_cost_log2(n, m) - want).abs() < 1e-6 * want.max(1.0));
        }
        // 64 * log2(64!) lands a little under 19000.
        let c = brute_force_cost_log2(64, 64);
        assert!(c > 18_900.0 && c < 19_000.0, "{c}");
    }
}
