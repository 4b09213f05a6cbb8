//! Adapter exposing [`crate::ckks_lite`] through the backend contract.

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::{
    check_dim, check_key_name, check_operands, check_secret, Capabilities, CipherScore, CipherVector, HeBackend,
    HeEvalKey, HeKeys, HePublicKey, HeSecretKey, Layout,
};
use crate::ckks_lite::{self, Ciphertext, CkksContext, HeParams, PublicKey, RelinKey, SecretKey};
use crate::error::Result;

const NAME: &str = "ckks_lite";

/// Absolute score error bound for unit-norm operands.
const SCORE_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct CkksBackend {
    ctx: Arc<CkksContext>,
}

impl CkksBackend {
    pub fn new(params: HeParams) -> Self {
        Self {
            ctx: CkksContext::new(params),
        }
    }

    pub fn context(&self) -> &Arc<CkksContext> {
        &self.ctx
    }

    fn parse(&self, payload: &[u8]) -> Result<Ciphertext> {
        Ciphertext::from_bytes(&self.ctx, payload)
    }
}

impl HeBackend for CkksBackend {
    fn name(&self) -> &str {
        NAME
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_dim: self.ctx.params().max_dim(),
            score_tolerance: SCORE_TOLERANCE,
        }
    }

    fn keygen(&self, dim: usize, seed: u64) -> Result<HeKeys> {
        check_dim(self, dim)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (sk, pk, rk) = ckks_lite::keygen(&self.ctx, &mut rng);
        let mut fingerprint = [0u8; 16];
        fingerprint.copy_from_slice(&Sha256::digest(pk.to_bytes())[..16]);
        let secret_bytes = sk.to_bytes();
        Ok(HeKeys {
            public: HePublicKey::new(NAME, fingerprint, Arc::new(pk)),
            eval: HeEvalKey::new(NAME, fingerprint, Arc::new(rk)),
            secret: HeSecretKey::new(NAME, fingerprint, Arc::new(sk), secret_bytes),
        })
    }

    fn encrypt(&self, pk: &HePublicKey, v: &[f32], layout: Layout, rng: &mut dyn RngCore) -> Result<CipherVector> {
        check_key_name(self, pk.backend())?;
        check_dim(self, v.len())?;
        let key = pk.material::<PublicKey>()?;
        let scale = self.ctx.params().scale();
        let plain = match layout {
            Layout::Query => ckks_lite::encode_query(&self.ctx, v, scale)?,
            Layout::Record => ckks_lite::encode_record(&self.ctx, v, scale)?,
        };
        let ct = ckks_lite::encrypt(key, &plain, rng)?;
        CipherVector::new(NAME, *pk.fingerprint(), v.len(), layout, ct.to_bytes(&self.ctx)?)
    }

    fn decrypt_vector(&self, sk: &HeSecretKey, c: &CipherVector) -> Result<Vec<f64>> {
        check_secret(self, sk, c.fingerprint(), "ciphertext")?;
        let plain = ckks_lite::decrypt(sk.material::<SecretKey>()?, &self.parse(c.payload())?);
        Ok(match c.layout() {
            Layout::Query => ckks_lite::decode_query(&self.ctx, &plain, c.dim()),
            Layout::Record => ckks_lite::decode_record(&self.ctx, &plain, c.dim()),
        })
    }

    fn inner_product(&self, ek: &HeEvalKey, q: &CipherVector, x: &CipherVector) -> Result<CipherScore> {
        check_operands(self, ek, q, x)?;
        let rk = ek.material::<RelinKey>()?;
        let prod = ckks_lite::multiply_relin(rk, &self.parse(q.payload())?, &self.parse(x.payload())?)?;
        let score = ckks_lite::rescale(&self.ctx, &prod)?;
        Ok(CipherScore::new(NAME, *ek.fingerprint(), score.to_bytes(&self.ctx)?))
    }

    fn decrypt_score(&self, sk: &HeSecretKey, s: &CipherScore) -> Result<f64> {
        check_secret(self, sk, s.fingerprint(), "score")?;
        let plain = ckks_lite::decrypt(sk.material::<SecretKey>()?, &self.parse(s.payload())?);
        Ok(plain.coefficient(&self.ctx, 0))
    }
}
