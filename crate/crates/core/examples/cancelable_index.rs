//! Protect a PQ index with a cancelable key, query it, revoke the key and
//! show that the old key is rejected by the reissued index.

use cancelable_pq::cancelable::{
    brute_force_cost_log2, build_protected_index, cancelable_topk, protect, revoke_and_reissue, seed_from_u64,
    CancelKey, DEFAULT_SIGMA_PROJ,
};
use cancelable_pq::embed_io::{gen_synthetic, SyntheticSpec};
use cancelable_pq::pq_index::{build_distance_table, build_index, quantize, topk_filter, train_codebook};
use cancelable_pq::Error;

fn main() -> cancelable_pq::Result<()> {
    let set = gen_synthetic(&SyntheticSpec {
        n_identities: 100,
        samples_per_identity: 10,
        dim: 64,
        intra_class_noise: 0.08,
        seed: 2,
    })?;
    let cb = train_codebook(&set, 32, 64, 3)?;
    let table = build_distance_table(&cb);

    let key = CancelKey::generate(&seed_from_u64(11), cb.m(), cb.n(), cb.d_sub(), DEFAULT_SIGMA_PROJ)?;
    let pcb = protect(&cb, &table, &key)?;
    let index = build_protected_index(&set, &pcb, &key)?;
    println!("key {} protects {} records", key.key_id_hex(), index.len());

    let q = set.vector(42);
    let hits = cancelable_topk(&index, &index.query_code(&key, q)?, 5)?;
    println!("protected top-5: {:?}", hits.iter().map(|c| c.id).collect::<Vec<_>>());

    // A permutation-only key ranks exactly like the unprotected index.
    let perm_only = CancelKey::generate(&seed_from_u64(12), cb.m(), cb.n(), cb.d_sub(), 0.0)?;
    let ppcb = protect(&cb, &table, &perm_only)?;
    let pidx = build_protected_index(&set, &ppcb, &perm_only)?;
    let plain = topk_filter(&build_index(&cb, &table, &set)?, &quantize(&cb, q)?, 5)?;
    let permuted = cancelable_topk(&pidx, &pidx.query_code(&perm_only, q)?, 5)?;
    assert_eq!(plain, permuted);
    println!("permutation-only ranking identical to plain PQ: true");

    let (new_key, new_index) = revoke_and_reissue(&set, &cb, &table, &seed_from_u64(99), DEFAULT_SIGMA_PROJ)?;
    println!("reissued under {}", new_key.key_id_hex());
    match new_index.query_code(&key, q) {
        Err(Error::Auth(msg)) => println!("old key rejected: {msg}"),
        other => panic!("old key should be rejected, got {other:?}"),
    }
    println!(
        "brute-force codebook recovery for n=64, m=64 costs 2^{:.1}",
        brute_force_cost_log2(64, 64)
    );
    Ok(())
}
