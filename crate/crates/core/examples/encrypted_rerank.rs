//! Three-party re-ranking: the query user encrypts a probe, the cloud
//! provider scores it against encrypted candidates and the image owner
//! decrypts and orders the scores. The transcript is then audited for
//! plaintext and key leakage towards the cloud provider.

use std::sync::Arc;

use cancelable_pq::embed_io::{gen_synthetic, SyntheticSpec};
use cancelable_pq::secure_rank::{backend_by_name, rerank, CloudProvider, ImageOwner, QueryUser, Role, Transcript};

fn main() -> cancelable_pq::Result<()> {
    let backend_name = std::env::args().nth(1).unwrap_or_else(|| "sim".into());
    let set = gen_synthetic(&SyntheticSpec {
        n_identities: 20,
        samples_per_identity: 4,
        dim: 64,
        intra_class_noise: 0.08,
        seed: 9,
    })?;
    let backend = backend_by_name(&backend_name)?;
    let mut owner = ImageOwner::new(Arc::clone(&backend), set.dim(), 1)?;
    let mut csp = CloudProvider::new(Arc::clone(&backend), owner.eval_key())?;
    for (i, v) in set.iter().enumerate() {
        csp.ingest(i as u32, &owner.encrypt_record(v)?)?;
    }
    let mut user = QueryUser::new(backend, owner.public_key(), 2)?;

    let query = set.vector(0);
    let candidates = [5u32, 1, 2, 40, 3];
    let mut transcript = Transcript::new();
    let result = rerank(&mut user, &csp, &owner, query, &candidates, Some(&mut transcript))?;
    println!("backend {backend_name}: re-ranked {:?}", result.entries);
    println!("HE inner products evaluated: {}", csp.he_op_count());

    let plaintexts: Vec<&[f32]> = set.iter().collect();
    let audit = transcript.audit(Role::CloudProvider, &plaintexts, owner.secret_bytes());
    println!(
        "audit of {} messages ({} bytes) to the cloud provider: clean = {}",
        audit.messages_scanned,
        audit.bytes_scanned,
        audit.clean()
    );
    Ok(())
}
