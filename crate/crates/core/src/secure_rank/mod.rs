//! Encrypted fine re-ranking between three roles over a pluggable
//! homomorphic backend.
//!
//! The query user (QU) encrypts its query, the cloud provider (CSP) computes
//! one encrypted inner product per coarse candidate, and the image owner (IO)
//! decrypts and ranks the scores. Every hand-off between roles is a framed
//! [`ProtocolMessage`] that can be logged to a [`Transcript`] and audited.

mod ckks;
mod protocol;
mod sim;

pub use ckks::CkksBackend;
pub use protocol::{
    audit_bytes, rerank, AuditReport, CloudProvider, ImageOwner, MessageKind, ProtocolMessage, QueryUser, RerankResult, Role,
    Transcript,
};
pub use sim::SimBackend;

use std::any::Any;
use std::fmt;
use std::sync::Arc;

use rand::RngCore;

use crate::ckks_lite::HeParams;
use crate::container::{Reader, Writer};
use crate::error::{Error, Result};

/// Identifies the key set a ciphertext or key belongs to.
pub type Fingerprint = [u8; 16];

/// What a backend can handle and how exact it is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capabilities {
    pub max_dim: usize,
    /// Bound on `|decrypted score - <a, b>|` for unit-norm inputs.
    pub score_tolerance: f64,
}

/// Which side of the inner product a vector is encrypted for. Coefficient
/// packing needs the query and the record laid out differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Query,
    Record,
}

impl Layout {
    fn tag(self) -> u8 {
        match self {
            Layout::Query => 0,
            Layout::Record => 1,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Layout::Query),
            1 => Some(Layout::Record),
            _ => None,
        }
    }
}

type Material = Arc<dyn Any + Send + Sync>;

fn downcast<'a, T: 'static>(m: &'a Material, what: &str) -> Result<&'a T> {
    m.downcast_ref::<T>()
        .ok_or_else(|| Error::param(format!("{what} belongs to a different backend")))
}

/// Public encryption key.
#[derive(Clone)]
pub struct HePublicKey {
    backend: String,
    fingerprint: Fingerprint,
    material: Material,
}

/// Evaluation key: everything the CSP needs to compute on ciphertexts.
#[derive(Clone)]
pub struct HeEvalKey {
    backend: String,
    fingerprint: Fingerprint,
    material: Material,
}

/// Secret decryption key; lives only inside the image owner.
#[derive(Clone)]
pub struct HeSecretKey {
    backend: String,
    fingerprint: Fingerprint,
    material: Material,
    secret_bytes: Vec<u8>,
}

macro_rules! key_common {
    ($t:ident, $label:literal) => {
        impl $t {
            pub fn backend(&self) -> &str {
                &self.backend
            }

            pub fn fingerprint(&self) -> &Fingerprint {
                &self.fingerprint
            }

            /// Backend-specific key material.
            pub fn material<T: 'static>(&self) -> Result<&T> {
                downcast(&self.material, $label)
            }
        }

        impl fmt::Debug for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.debug_struct(stringify!($t))
                    .field("backend", &self.backend)
                    .field("fingerprint", &crate::cancelable::key_hex(&self.fingerprint))
                    .finish_non_exhaustive()
            }
        }
    };
}

key_common!(HePublicKey, "public key");
key_common!(HeEvalKey, "evaluation key");
key_common!(HeSecretKey, "secret key");

impl HePublicKey {
    pub fn new(backend: &str, fingerprint: Fingerprint, material: Material) -> Self {
        Self {
            backend: backend.into(),
            fingerprint,
            material,
        }
    }
}

impl HeEvalKey {
    pub fn new(backend: &str, fingerprint: Fingerprint, material: Material) -> Self {
        Self {
            backend: backend.into(),
            fingerprint,
            material,
        }
    }
}

impl HeSecretKey {
    pub fn new(backend: &str, fingerprint: Fingerprint, material: Material, secret_bytes: Vec<u8>) -> Self {
        Self {
            backend: backend.into(),
            fingerprint,
            material,
            secret_bytes,
        }
    }

    /// Raw secret bytes, exposed for leak audits.
    pub fn secret_bytes(&self) -> &[u8] {
        &self.secret_bytes
    }
}

/// Output of [`HeBackend::keygen`].
#[derive(Debug, Clone)]
pub struct HeKeys {
    pub public: HePublicKey,
    pub secret: HeSecretKey,
    pub eval: HeEvalKey,
}

/// An encrypted embedding with an opaque payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherVector {
    backend: String,
    fingerprint: Fingerprint,
    dim: usize,
    layout: Layout,
    payload: Vec<u8>,
}

impl CipherVector {
    pub fn new(backend: &str, fingerprint: Fingerprint, dim: usize, layout: Layout, payload: Vec<u8>) -> Result<Self> {
        if payload.is_empty() {
            return Err(Error::param("cipher payload is empty"));
        }
        Ok(Self {
            backend: backend.into(),
            fingerprint,
            dim,
            layout,
            payload,
        })
    }

    pub fn backend(&self) -> &str {
        &self.backend
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.blob(self.backend.as_bytes())?;
        w.bytes(&self.fingerprint);
        w.len_u32(self.dim)?;
        w.u8(self.layout.tag());
        w.blob(&self.payload)?;
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let v = Self::read(&mut r)?;
        r.expect_end()?;
        Ok(v)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let backend = read_name(r)?;
        let fingerprint = read_fingerprint(r)?;
        let dim = r.usize()?;
        let at = r.offset();
        let layout = Layout::from_tag(r.u8()?).ok_or_else(|| Error::format(at, "unknown layout tag"))?;
        let at = r.offset();
        let payload = r.blob()?.to_vec();
        if payload.is_empty() {
            return Err(Error::format(at, "empty cipher payload"));
        }
        Ok(Self {
            backend,
            fingerprint,
            dim,
            layout,
            payload,
        })
    }
}

/// An encrypted similarity score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherScore {
    backend: String,
    fingerprint: Fingerprint,
    payload: Vec<u8>,
}

impl CipherScore {
    pub fn new(backend: &str, fingerprint: Fingerprint, payload: Vec<u8>) -> Self {
        Self {
            backend: backend.into(),
            fingerprint,
            payload,
        }
    }

    pub fn backend(&self) -> &str {
        &self.backend
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub(crate) fn write(&self, w: &mut Writer) -> Result<()> {
        w.blob(self.backend.as_bytes())?;
        w.bytes(&self.fingerprint);
        w.blob(&self.payload)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let backend = read_name(r)?;
        let fingerprint = read_fingerprint(r)?;
        let payload = r.blob()?.to_vec();
        Ok(Self {
            backend,
            fingerprint,
            payload,
        })
    }
}

fn read_name(r: &mut Reader<'_>) -> Result<String> {
    let at = r.offset();
    String::from_utf8(r.blob()?.to_vec()).map_err(|_| Error::format(at, "backend name is not UTF-8"))
}

fn read_fingerprint(r: &mut Reader<'_>) -> Result<Fingerprint> {
    let mut fp = [0u8; 16];
    fp.copy_from_slice(r.take(16)?);
    Ok(fp)
}

/// The homomorphic operations the re-ranking protocol relies on.
pub trait HeBackend: Send + Sync {
    fn name(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    /// Generates a key set able to handle vectors of length `dim`.
    fn keygen(&self, dim: usize, seed: u64) -> Result<HeKeys>;

    fn encrypt(&self, pk: &HePublicKey, v: &[f32], layout: Layout, rng: &mut dyn RngCore) -> Result<CipherVector>;

    fn decrypt_vector(&self, sk: &HeSecretKey, c: &CipherVector) -> Result<Vec<f64>>;

    /// `enc(<q, x>)` from a query-layout and a record-layout ciphertext.
    fn inner_product(&self, ek: &HeEvalKey, q: &CipherVector, x: &CipherVector) -> Result<CipherScore>;

    fn decrypt_score(&self, sk: &HeSecretKey, s: &CipherScore) -> Result<f64>;
}

/// Instantiates a backend by its configuration name.
pub fn backend_by_name(name: &str) -> Result<Arc<dyn HeBackend>> {
    match name {
        "sim" => Ok(Arc::new(SimBackend)),
        "ckks_lite" | "ckks" => Ok(Arc::new(CkksBackend::new(HeParams::default()))),
        other => Err(Error::param(format!(
            "unknown backend {other:?}; expected \"sim\" or \"ckks_lite\""
        ))),
    }
}

fn check_key_name(backend: &dyn HeBackend, key_backend: &str) -> Result<()> {
    if key_backend != backend.name() {
        return Err(Error::param(format!(
            "key for backend {key_backend:?} used with {:?}",
            backend.name()
        )));
    }
    Ok(())
}

fn check_dim(backend: &dyn HeBackend, dim: usize) -> Result<()> {
    let max = backend.capabilities().max_dim;
    if dim == 0 || dim > max {
        return Err(Error::param(format!(
            "dimension {dim} outside backend capacity 1..={max}"
        )));
    }
    Ok(())
}

/// Checks that two ciphertexts and an evaluation key can be combined.
fn check_operands(backend: &dyn HeBackend, ek: &HeEvalKey, q: &CipherVector, x: &CipherVector) -> Result<()> {
    check_key_name(backend, ek.backend())?;
    for c in [q, x] {
        check_key_name(backend, c.backend())?;
        if c.fingerprint != ek.fingerprint {
            return Err(Error::auth("ciphertext and evaluation key come from different key sets"));
        }
    }
    if q.dim != x.dim {
        return Err(Error::param(format!("dimension mismatch: {} vs {}", q.dim, x.dim)));
    }
    if q.layout != Layout::Query || x.layout != Layout::Record {
        return Err(Error::param("inner product expects (query, record) layouts"));
    }
    Ok(())
}

fn check_secret(backend: &dyn HeBackend, sk: &HeSecretKey, fingerprint: &Fingerprint, owner: &str) -> Result<()> {
    check_key_name(backend, sk.backend())?;
    if &sk.fingerprint != fingerprint {
        return Err(Error::auth(format!("{owner} was not produced under this secret key")));
    }
    Ok(())
}
