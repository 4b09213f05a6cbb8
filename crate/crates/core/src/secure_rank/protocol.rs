//! Role contexts and the framed messages they exchange.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{CipherScore, CipherVector, HeBackend, HeEvalKey, HeKeys, HePublicKey, Layout};
use crate::container::{self, Reader, Writer};
use crate::error::{Error, Result};

const FRAME_MAGIC: &[u8; 4] = b"CPQM";
/// Magic, kind, sender, receiver and body length.
#[cfg(test)]
const FRAME_HEADER: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    QueryUser,
    ImageOwner,
    CloudProvider,
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::QueryUser => 1,
            Role::ImageOwner => 2,
            Role::CloudProvider => 3,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            1 => Some(Role::QueryUser),
            2 => Some(Role::ImageOwner),
            3 => Some(Role::CloudProvider),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    EncQuery,
    CandidateIds,
    EncScores,
    Result,
}

impl MessageKind {
    fn tag(self) -> u8 {
        match self {
            MessageKind::EncQuery => 1,
            MessageKind::CandidateIds => 2,
            MessageKind::EncScores => 3,
            MessageKind::Result => 4,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            1 => Some(MessageKind::EncQuery),
            2 => Some(MessageKind::CandidateIds),
            3 => Some(MessageKind::EncScores),
            4 => Some(MessageKind::Result),
            _ => None,
        }
    }

    /// The only sender/receiver pair allowed to carry this kind.
    fn route(self) -> (Role, Role) {
        match self {
            MessageKind::EncQuery => (Role::QueryUser, Role::CloudProvider),
            MessageKind::CandidateIds | MessageKind::EncScores => (Role::CloudProvider, Role::ImageOwner),
            MessageKind::Result => (Role::ImageOwner, Role::QueryUser),
        }
    }
}

/// One framed hand-off between roles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub kind: MessageKind,
    pub from: Role,
    pub to: Role,
    pub body: Vec<u8>,
}

impl ProtocolMessage {
    fn new(kind: MessageKind, body: Vec<u8>) -> Self {
        let (from, to) = kind.route();
        Self { kind, from, to, body }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        w.bytes(FRAME_MAGIC);
        w.u8(self.kind.tag());
        w.u8(self.from.tag());
        w.u8(self.to.tag());
        w.blob(&self.body)?;
        Ok(w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let msg = Self::read(&mut r)?;
        r.expect_end()?;
        Ok(msg)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let at = r.offset();
        if r.take(4)? != FRAME_MAGIC {
            return Err(Error::format(at, "bad message magic"));
        }
        let at = r.offset();
        let kind = MessageKind::from_tag(r.u8()?).ok_or_else(|| Error::format(at, "unknown message kind"))?;
        let at = r.offset();
        let from = Role::from_tag(r.u8()?).ok_or_else(|| Error::format(at, "unknown sender role"))?;
        let to = Role::from_tag(r.u8()?).ok_or_else(|| Error::format(at + 1, "unknown receiver role"))?;
        if (from, to) != kind.route() {
            return Err(Error::format(at, format!("{kind:?} may not travel {from:?} -> {to:?}")));
        }
        let body = r.blob()?.to_vec();
        Ok(Self { kind, from, to, body })
    }

    /// Decodes a frame and checks it is the expected kind for `receiver`.
    fn receive(bytes: &[u8], kind: MessageKind, receiver: Role) -> Result<Self> {
        let msg = Self::decode(bytes)?;
        if msg.kind != kind || msg.to != receiver {
            return Err(Error::data(format!(
                "{receiver:?} expected {kind:?}, got {:?} for {:?}",
                msg.kind, msg.to
            )));
        }
        Ok(msg)
    }
}

/// Final ranking: `(id, score)` by descending score, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RerankResult {
    pub entries: Vec<(u32, f64)>,
}

impl RerankResult {
    pub fn ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn top(&self) -> Option<u32> {
        self.entries.first().map(|e| e.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorts `(id, score)` pairs into result order.
    pub fn from_scores(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { entries }
    }
}

/// Holds the public key; encrypts queries and reads results.
pub struct QueryUser {
    backend: Arc<dyn HeBackend>,
    public: HePublicKey,
    rng: ChaCha20Rng,
}

impl QueryUser {
    pub fn new(backend: Arc<dyn HeBackend>, public: HePublicKey, seed: u64) -> Result<Self> {
        if public.backend() != backend.name() {
            return Err(Error::param("public key does not belong to this backend"));
        }
        Ok(Self {
            backend,
            public,
            rng: ChaCha20Rng::seed_from_u64(seed),
        })
    }

    pub fn encrypt_query(&mut self, query: &[f32]) -> Result<Vec<u8>> {
        let c = self.backend.encrypt(&self.public, query, Layout::Query, &mut self.rng)?;
        ProtocolMessage::new(MessageKind::EncQuery, c.to_bytes()?).encode()
    }

    pub fn receive_result(&self, frame: &[u8]) -> Result<RerankResult> {
        let msg = ProtocolMessage::receive(frame, MessageKind::Result, Role::QueryUser)?;
        let mut r = Reader::new(&msg.body);
        let count = r.usize()?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            entries.push((r.u32()?, r.f64()?));
        }
        r.expect_end()?;
        Ok(RerankResult { entries })
    }
}

/// Stores encrypted records and evaluates inner products. It is built from
/// an evaluation key only and has no field that could hold a secret key or
/// a plaintext vector.
pub struct CloudProvider {
    backend: Arc<dyn HeBackend>,
    eval: HeEvalKey,
    records: HashMap<u32, CipherVector>,
    he_ops: AtomicU64,
}

impl CloudProvider {
    pub fn new(backend: Arc<dyn HeBackend>, eval: HeEvalKey) -> Result<Self> {
        if eval.backend() != backend.name() {
            return Err(Error::param("evaluation key does not belong to this backend"));
        }
        Ok(Self {
            backend,
            eval,
            records: HashMap::new(),
            he_ops: AtomicU64::new(0),
        })
    }

    /// Stores a serialized record ciphertext under `id`.
    pub fn ingest(&mut self, id: u32, cipher: &[u8]) -> Result<()> {
        let c = CipherVector::from_bytes(cipher)?;
        if c.backend() != self.backend.name() {
            return Err(Error::param(format!("record {id} was encrypted for {}", c.backend())));
        }
        if c.fingerprint() != self.eval.fingerprint() {
            return Err(Error::auth(format!("record {id} was encrypted under a different key set")));
        }
        if c.layout() != Layout::Record {
            return Err(Error::param(format!("record {id} is not in record layout")));
        }
        self.records.insert(id, c);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Encrypted inner products evaluated so far.
    pub fn he_op_count(&self) -> u64 {
        self.he_ops.load(Ordering::Relaxed)
    }

    /// Serialized stored ciphertexts, for leak audits of the CSP state.
    pub fn stored_bytes(&self) -> impl Iterator<Item = &[u8]> + '_ {
        self.records.values().map(|c| c.payload())
    }

    /// Scores the query against each coarse candidate; returns the
    /// `CandidateIds` and `EncScores` frames for the image owner.
    pub fn handle_query(&self, frame: &[u8], candidates: &[u32]) -> Result<Vec<Vec<u8>>> {
        let msg = ProtocolMessage::receive(frame, MessageKind::EncQuery, Role::CloudProvider)?;
        let query = CipherVector::from_bytes(&msg.body)?;
        if candidates.is_empty() {
            return Err(Error::param("no candidates to re-rank"));
        }
        let mut ids = Writer::new();
        ids.len_u32(candidates.len())?;
        let mut scores = Writer::new();
        scores.len_u32(candidates.len())?;
        for &id in candidates {
            let record = self
                .records
                .get(&id)
                .ok_or_else(|| Error::data(format!("candidate {id} not in encrypted database")))?;
            let s = self.backend.inner_product(&self.eval, &query, record)?;
            self.he_ops.fetch_add(1, Ordering::Relaxed);
            ids.u32(id);
            scores.u32(id);
            s.write(&mut scores)?;
        }
        Ok(vec![
            ProtocolMessage::new(MessageKind::CandidateIds, ids.finish()).encode()?,
            ProtocolMessage::new(MessageKind::EncScores, scores.finish()).encode()?,
        ])
    }
}

/// Owns the secret key: encrypts the database and decrypts scores.
pub struct ImageOwner {
    backend: Arc<dyn HeBackend>,
    keys: HeKeys,
    rng: ChaCha20Rng,
}

impl ImageOwner {
    pub fn new(backend: Arc<dyn HeBackend>, dim: usize, seed: u64) -> Result<Self> {
        let keys = backend.keygen(dim, seed)?;
        Ok(Self {
            backend,
            keys,
            rng: ChaCha20Rng::seed_from_u64(seed ^ 0x5e_ed0f_1a6e),
        })
    }

    pub fn public_key(&self) -> HePublicKey {
        self.keys.public.clone()
    }

    pub fn eval_key(&self) -> HeEvalKey {
        self.keys.eval.clone()
    }

    /// Secret bytes, for audits only.
    pub fn secret_bytes(&self) -> &[u8] {
        self.keys.secret.secret_bytes()
    }

    /// Serialized record ciphertext ready for [`CloudProvider::ingest`].
    pub fn encrypt_record(&mut self, v: &[f32]) -> Result<Vec<u8>> {
        self.backend
            .encrypt(&self.keys.public, v, Layout::Record, &mut self.rng)?
            .to_bytes()
    }

    /// Decrypts the CSP's scores and returns the `Result` frame for the QU.
    pub fn handle_scores(&self, frames: &[Vec<u8>]) -> Result<Vec<u8>> {
        let [ids_frame, scores_frame] = frames else {
            return Err(Error::data(format!("expected 2 frames from the CSP, got {}", frames.len())));
        };
        let ids_msg = ProtocolMessage::receive(ids_frame, MessageKind::CandidateIds, Role::ImageOwner)?;
        let mut r = Reader::new(&ids_msg.body);
        let n = r.usize()?;
        let ids = r.u32s(n)?;
        r.expect_end()?;

        let msg = ProtocolMessage::receive(scores_frame, MessageKind::EncScores, Role::ImageOwner)?;
        let mut r = Reader::new(&msg.body);
        let count = r.usize()?;
        if count != ids.len() {
            return Err(Error::data(format!("{count} scores for {} candidates", ids.len())));
        }
        let mut scored = Vec::with_capacity(count);
        for &expected in &ids {
            let id = r.u32()?;
            if id != expected {
                return Err(Error::data(format!("score for {id} where {expected} was announced")));
            }
            let s = CipherScore::read(&mut r)?;
            let v = self.backend.decrypt_score(&self.keys.secret, &s)?;
            if !v.is_finite() {
                return Err(Error::data(format!("non-finite score for candidate {id}")));
            }
            scored.push((id, v));
        }
        r.expect_end()?;

        let result = RerankResult::from_scores(scored);
        let mut w = Writer::new();
        w.len_u32(result.len())?;
        for &(id, s) in &result.entries {
            w.u32(id);
            w.f64(s);
        }
        ProtocolMessage::new(MessageKind::Result, w.finish()).encode()
    }
}

/// Runs one re-ranking round; every hand-off is serialized and, when a
/// transcript is given, logged.
pub fn rerank(
    qu: &mut QueryUser,
    csp: &CloudProvider,
    io: &ImageOwner,
    query: &[f32],
    candidates: &[u32],
    mut transcript: Option<&mut Transcript>,
) -> Result<RerankResult> {
    if qu.backend.name() != csp.backend.name() || csp.backend.name() != io.backend.name() {
        return Err(Error::param("roles are configured with different backends"));
    }
    let mut log = |frame: &[u8]| -> Result<()> {
        if let Some(t) = transcript.as_deref_mut() {
            t.record(frame)?;
        }
        Ok(())
    };
    let q = qu.encrypt_query(query)?;
    log(&q)?;
    let to_io = csp.handle_query(&q, candidates)?;
    for f in &to_io {
        log(f)?;
    }
    let result = io.handle_scores(&to_io)?;
    log(&result)?;
    qu.receive_result(&result)
}

/// Every framed message that crossed a role boundary.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    messages: Vec<ProtocolMessage>,
}

/// Outcome of scanning messages for leaked material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AuditReport {
    pub messages_scanned: usize,
    pub bytes_scanned: usize,
    pub plaintext_hits: usize,
    pub secret_hits: usize,
}

impl AuditReport {
    pub fn clean(&self) -> bool {
        self.plaintext_hits == 0 && self.secret_hits == 0
    }
}

/// Bytes matched against plaintexts: any four consecutive components.
const PLAIN_WINDOW: usize = 16;
/// Bytes matched against the secret key.
const SECRET_WINDOW: usize = 32;

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, frame: &[u8]) -> Result<()> {
        self.messages.push(ProtocolMessage::decode(frame)?);
        Ok(())
    }

    pub fn messages(&self) -> &[ProtocolMessage] {
        &self.messages
    }

    pub fn addressed_to(&self, role: Role) -> impl Iterator<Item = &ProtocolMessage> + '_ {
        self.messages.iter().filter(move |m| m.to == role)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for m in &self.messages {
            out.extend(m.encode()?);
        }
        container::write_file(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = container::read_file(path)?;
        let mut r = Reader::new(&bytes);
        let mut messages = Vec::new();
        while !r.is_empty() {
            messages.push(ProtocolMessage::read(&mut r)?);
        }
        Ok(Self { messages })
    }

    /// Scans every message addressed to `role` for windows of the given
    /// plaintext vectors and of the secret key.
    pub fn audit(&self, role: Role, plaintexts: &[&[f32]], secret: &[u8]) -> AuditReport {
        audit_bytes(self.addressed_to(role).map(|m| m.body.as_slice()), plaintexts, secret)
    }
}

/// Counts windows of `plaintexts` (little-endian f32) and `secret` found in
/// any haystack.
pub fn audit_bytes<'a>(
    haystacks: impl Iterator<Item = &'a [u8]>,
    plaintexts: &[&[f32]],
    secret: &[u8],
) -> AuditReport {
    let mut plain: HashSet<&[u8]> = HashSet::new();
    let encoded: Vec<Vec<u8>> = plaintexts
        .iter()
        .map(|v| v.iter().flat_map(|x| x.to_le_bytes()).collect())
        .collect();
    for bytes in &encoded {
        if bytes.len() < PLAIN_WINDOW {
            plain.insert(bytes);
            continue;
        }
        for start in (0..=bytes.len() - PLAIN_WINDOW).step_by(4) {
            plain.insert(&bytes[start..start + PLAIN_WINDOW]);
        }
    }
    let secret_window = SECRET_WINDOW.min(secret.len());
    let secrets: HashSet<&[u8]> = if secret_window == 0 {
        HashSet::new()
    } else {
        secret.windows(secret_window).collect()
    };
    let plain_window = plain.iter().map(|w| w.len()).min().unwrap_or(PLAIN_WINDOW);

    let mut report = AuditReport::default();
    for hay in haystacks {
        report.messages_scanned += 1;
        report.bytes_scanned += hay.len();
        if !plain.is_empty() {
            report.plaintext_hits += hay.windows(plain_window).filter(|w| plain.contains(*w)).count();
        }
        if !secrets.is_empty() {
            report.secret_hits += hay.windows(secret_window).filter(|w| secrets.contains(*w)).count();
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckks_lite::HeParams;
    use crate::secure_rank::{CkksBackend, SimBackend};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn unit(rng: &mut ChaCha20Rng, dim: usize) -> Vec<f32> {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| (x / n) as f32).collect()
    }

    struct Setup {
        qu: QueryUser,
        csp: CloudProvider,
        io: ImageOwner,
        db: Vec<Vec<f32>>,
    }

    fn setup(backend: Arc<dyn HeBackend>, n: usize, dim: usize, seed: u64) -> Setup {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut io = ImageOwner::new(backend.clone(), dim, seed).unwrap();
        let mut csp = CloudProvider::new(backend.clone(), io.eval_key()).unwrap();
        let qu = QueryUser::new(backend, io.public_key(), seed + 1).unwrap();
        let db: Vec<Vec<f32>> = (0..n).map(|_| unit(&mut rng, dim)).collect();
        for (i, v) in db.iter().enumerate() {
            let c = io.encrypt_record(v).unwrap();
            csp.ingest(i as u32, &c).unwrap();
        }
        Setup { qu, csp, io, db }
    }

    fn plain_order(db: &[Vec<f32>], q: &[f32], ids: &[u32]) -> Vec<u32> {
        let scores = ids
            .iter()
            .map(|&i| (i, crate::embed_io::dot(q, &db[i as usize]) as f32 as f64))
            .collect();
        RerankResult::from_scores(scores).ids()
    }

    #[test]
    fn frame_round_trip_and_routing() {
        let m = ProtocolMessage::new(MessageKind::EncScores, vec![1, 2, 3]);
        let bytes = m.encode().unwrap();
        assert_eq!(&bytes[..4], b"CPQM");
        assert_eq!(bytes[4..7], [3, 3, 2]);
        assert_eq!(u32::from_le_bytes(bytes[7..11].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), FRAME_HEADER + 3);
        assert_eq!(ProtocolMessage::decode(&bytes).unwrap(), m);

        let mut forged = bytes.clone();
        forged[6] = Role::QueryUser.tag();
        assert!(matches!(ProtocolMessage::decode(&forged), Err(Error::Format { .. })));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(ProtocolMessage::decode(&bad), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn sim_rerank_matches_plaintext_order() {
        let mut s = setup(Arc::new(SimBackend), 200, 32, 1);
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        for t in 0..50 {
            let q = unit(&mut rng, 32);
            let cands: Vec<u32> = (0..5).map(|k| ((t * 7 + k * 31) % 200) as u32).collect();
            let got = rerank(&mut s.qu, &s.csp, &s.io, &q, &cands, None).unwrap();
            assert_eq!(got.len(), 5);
            assert_eq!(got.ids(), plain_order(&s.db, &q, &cands));
        }
        assert_eq!(s.csp.he_op_count(), 250);
    }

    #[test]
    fn exact_match_ranks_first_and_single_candidate() {
        let mut s = setup(Arc::new(SimBackend), 50, 16, 2);
        let q = s.db[17].clone();
        let got = rerank(&mut s.qu, &s.csp, &s.io, &q, &[3, 17, 40], None).unwrap();
        assert_eq!(got.top(), Some(17));
        assert!((got.entries[0].1 - 1.0).abs() < 1e-6);

        let one = rerank(&mut s.qu, &s.csp, &s.io, &q, &[8], None).unwrap();
        assert_eq!(one.ids(), vec![8]);
    }

    #[test]
    fn missing_candidate_and_mismatched_roles() {
        let mut s = setup(Arc::new(SimBackend), 10, 8, 3);
        let q = s.db[0].clone();
        assert!(matches!(
            rerank(&mut s.qu, &s.csp, &s.io, &q, &[99], None),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            rerank(&mut s.qu, &s.csp, &s.io, &q, &[], None),
            Err(Error::Param(_))
        ));

        let other = ImageOwner::new(Arc::new(SimBackend), 8, 77).unwrap();
        let mut csp2 = CloudProvider::new(Arc::new(SimBackend), other.eval_key()).unwrap();
        let mut io = s.io;
        let rec = io.encrypt_record(&s.db[0]).unwrap();
        assert!(matches!(csp2.ingest(0, &rec), Err(Error::Auth(_))));

        let ckks: Arc<dyn HeBackend> = Arc::new(CkksBackend::new(HeParams::generate(1024, 45, 30, 2).unwrap()));
        assert!(CloudProvider::new(ckks, io.eval_key()).is_err());
    }

    #[test]
    fn transcript_audit_finds_nothing_for_csp() {
        let mut s = setup(Arc::new(SimBackend), 100, 16, 4);
        let mut rng = ChaCha20Rng::seed_from_u64(40);
        let mut t = Transcript::new();
        let mut queries = Vec::new();
        for i in 0..30 {
            let q = unit(&mut rng, 16);
            let cands = [i as u32, (i + 10) as u32, (i + 50) as u32];
            rerank(&mut s.qu, &s.csp, &s.io, &q, &cands, Some(&mut t)).unwrap();
            queries.push(q);
        }
        assert_eq!(t.messages().len(), 120);
        let mut plains: Vec<&[f32]> = queries.iter().map(|q| q.as_slice()).collect();
        plains.extend(s.db.iter().map(|v| v.as_slice()));
        let report = t.audit(Role::CloudProvider, &plains, s.io.secret_bytes());
        assert_eq!(report.messages_scanned, 30);
        assert!(report.clean(), "{report:?}");
        let stored = audit_bytes(s.csp.stored_bytes(), &plains, s.io.secret_bytes());
        assert!(stored.clean());

        // The audit does detect a leak when one is planted.
        let leak: Vec<u8> = queries[0].iter().flat_map(|x| x.to_le_bytes()).collect();
        let planted = audit_bytes(std::iter::once(leak.as_slice()), &plains, s.io.secret_bytes());
        assert!(planted.plaintext_hits > 0);
        let planted = audit_bytes(std::iter::once(s.io.secret_bytes()), &plains, s.io.secret_bytes());
        assert!(planted.secret_hits > 0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transcript.bin");
        t.save(&path).unwrap();
        assert_eq!(Transcript::load(&path).unwrap().messages(), t.messages());
    }

    #[test]
    fn ckks_rerank_orders_well_separated_scores() {
        let backend: Arc<dyn HeBackend> = Arc::new(CkksBackend::new(HeParams::generate(1024, 45, 30, 2).unwrap()));
        let mut s = setup(backend, 20, 64, 5);
        let mut rng = ChaCha20Rng::seed_from_u64(50);
        let mut t = Transcript::new();
        for _ in 0..5 {
            let q = unit(&mut rng, 64);
            let cands: Vec<u32> = (0..5).collect();
            let got = rerank(&mut s.qu, &s.csp, &s.io, &q, &cands, Some(&mut t)).unwrap();
            for &(id, score) in &got.entries {
                assert!((score - crate::embed_io::dot(&q, &s.db[id as usize])).abs() <= 1e-2);
            }
            let want = plain_order(&s.db, &q, &cands);
            let exact: Vec<f64> = want.iter().map(|&i| crate::embed_io::dot(&q, &s.db[i as usize])).collect();
            if exact.windows(2).all(|w| w[0] - w[1] > 2e-2) {
                assert_eq!(got.ids(), want);
            }
        }
        let plains: Vec<&[f32]> = s.db.iter().map(|v| v.as_slice()).collect();
        assert!(t.audit(Role::CloudProvider, &plains, s.io.secret_bytes()).clean());
    }
}
