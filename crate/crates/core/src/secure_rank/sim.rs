//! Keyed-masking stand-in for a homomorphic scheme.
//!
//! Ciphertexts are the IEEE-754 bits of each component XORed with a ChaCha20
//! keystream keyed by a mask key and a random per-ciphertext nonce. The
//! evaluation key carries the mask key so that the "encrypted" inner product
//! can unmask, compute the exact dot product and re-mask. This keeps the
//! protocol's serialization and key-separation behaviour real while making
//! scores exact, but it is a simulation: whoever holds the evaluation key can
//! read the plaintexts. Use the `ckks_lite` backend for actual encryption.

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::{
    check_dim, check_key_name, check_operands, check_secret, Capabilities, CipherScore, CipherVector, HeBackend,
    HeEvalKey, HeKeys, HePublicKey, HeSecretKey, Layout,
};
use crate::error::{Error, Result};

const NAME: &str = "sim";
const NONCE_LEN: usize = 16;

#[derive(Debug, Clone, Copy, Default)]
pub struct SimBackend;

struct MaskKey([u8; 32]);

fn keystream(mask: &MaskKey, nonce: &[u8]) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(mask.0);
    h.update(nonce);
    ChaCha20Rng::from_seed(h.finalize().into())
}

fn mask_words(mask: &MaskKey, nonce: &[u8], words: impl Iterator<Item = u32>) -> Vec<u8> {
    let mut ks = keystream(mask, nonce);
    let mut out = nonce.to_vec();
    for w in words {
        out.extend_from_slice(&(w ^ ks.next_u32()).to_le_bytes());
    }
    out
}

fn unmask_words(mask: &MaskKey, payload: &[u8]) -> Result<Vec<u32>> {
    if payload.len() < NONCE_LEN || !(payload.len() - NONCE_LEN).is_multiple_of(4) {
        return Err(Error::data("malformed sim payload"));
    }
    let (nonce, body) = payload.split_at(NONCE_LEN);
    let mut ks = keystream(mask, nonce);
    Ok(body
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) ^ ks.next_u32())
        .collect())
}

impl SimBackend {
    fn unmask_vector(mask: &MaskKey, c: &CipherVector) -> Result<Vec<f32>> {
        let words = unmask_words(mask, c.payload())?;
        if words.len() != c.dim() {
            return Err(Error::data(format!(
                "payload holds {} components, header says {}",
                words.len(),
                c.dim()
            )));
        }
        Ok(words.into_iter().map(f32::from_bits).collect())
    }
}

impl HeBackend for SimBackend {
    fn name(&self) -> &str {
        NAME
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_dim: 1 << 20,
            // Scores are f64 dot products of the f32 inputs.
            score_tolerance: 1e-6,
        }
    }

    fn keygen(&self, dim: usize, seed: u64) -> Result<HeKeys> {
        check_dim(self, dim)?;
        let mut h = Sha256::new();
        h.update(b"sim-he/secret");
        h.update(seed.to_le_bytes());
        let secret: [u8; 32] = h.finalize().into();
        let mut h = Sha256::new();
        h.update(secret);
        h.update(b"mask");
        let mask: [u8; 32] = h.finalize().into();
        let mut fingerprint = [0u8; 16];
        fingerprint.copy_from_slice(&Sha256::digest(mask)[..16]);

        let material: Arc<MaskKey> = Arc::new(MaskKey(mask));
        Ok(HeKeys {
            public: HePublicKey::new(NAME, fingerprint, material.clone()),
            eval: HeEvalKey::new(NAME, fingerprint, material.clone()),
            secret: HeSecretKey::new(NAME, fingerprint, material, secret.to_vec()),
        })
    }

    fn encrypt(&self, pk: &HePublicKey, v: &[f32], layout: Layout, rng: &mut dyn RngCore) -> Result<CipherVector> {
        check_key_name(self, pk.backend())?;
        check_dim(self, v.len())?;
        let mask = pk.material::<MaskKey>()?;
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let payload = mask_words(mask, &nonce, v.iter().map(|x| x.to_bits()));
        CipherVector::new(NAME, *pk.fingerprint(), v.len(), layout, payload)
    }

    fn decrypt_vector(&self, sk: &HeSecretKey, c: &CipherVector) -> Result<Vec<f64>> {
        check_secret(self, sk, c.fingerprint(), "ciphertext")?;
        let mask = sk.material::<MaskKey>()?;
        Ok(Self::unmask_vector(mask, c)?.into_iter().map(f64::from).collect())
    }

    fn inner_product(&self, ek: &HeEvalKey, q: &CipherVector, x: &CipherVector) -> Result<CipherScore> {
        check_operands(self, ek, q, x)?;
        let mask = ek.material::<MaskKey>()?;
        let a = Self::unmask_vector(mask, q)?;
        let b = Self::unmask_vector(mask, x)?;
        let bits = crate::embed_io::dot(&a, &b).to_bits();
        let mut h = Sha256::new();
        h.update(&q.payload()[..NONCE_LEN]);
        h.update(&x.payload()[..NONCE_LEN]);
        let nonce = &h.finalize()[..NONCE_LEN];
        let payload = mask_words(mask, nonce, [bits as u32, (bits >> 32) as u32].into_iter());
        Ok(CipherScore::new(NAME, *ek.fingerprint(), payload))
    }

    fn decrypt_score(&self, sk: &HeSecretKey, s: &CipherScore) -> Result<f64> {
        check_secret(self, sk, s.fingerprint(), "score")?;
        let words = unmask_words(sk.material::<MaskKey>()?, s.payload())?;
        match words.as_slice() {
            [lo, hi] => Ok(f64::from_bits(*lo as u64 | (*hi as u64) << 32)),
            _ => Err(Error::data("sim score payload must hold one f64 value")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_are_exact_f64_dots() {
        let keys = SimBackend.keygen(3, 0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let a = [0.1f32, 0.2, 0.3];
        let b = [0.7f32, -0.4, 0.9];
        let ca = SimBackend.encrypt(&keys.public, &a, Layout::Query, &mut rng).unwrap();
        let cb = SimBackend.encrypt(&keys.public, &b, Layout::Record, &mut rng).unwrap();
        let s = SimBackend.inner_product(&keys.eval, &ca, &cb).unwrap();
        let want = 0.1f32 as f64 * 0.7f32 as f64 + 0.2f32 as f64 * -0.4f32 as f64 + 0.3f32 as f64 * 0.9f32 as f64;
        assert_eq!(SimBackend.decrypt_score(&keys.secret, &s).unwrap(), want);
        assert_eq!(SimBackend.decrypt_vector(&keys.secret, &ca).unwrap(), vec![0.1f32 as f64, 0.2f32 as f64, 0.3f32 as f64]);
    }

    #[test]
    fn truncated_payload_rejected() {
        let keys = SimBackend.keygen(3, 0).unwrap();
        let c = CipherVector::new(NAME, *keys.public.fingerprint(), 3, Layout::Query, vec![0; 10]).unwrap();
        assert!(matches!(SimBackend.decrypt_vector(&keys.secret, &c), Err(Error::Data(_))));
    }
}
