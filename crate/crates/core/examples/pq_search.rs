//! Train a product-quantization codebook with k-means and run symmetric
//! top-K search, checking the table distance against a direct computation.

use cancelable_pq::embed_io::{gen_synthetic, SyntheticSpec};
use cancelable_pq::pq_index::{build_distance_table, build_index, pq_distance, quantize, topk_filter, train_codebook};

fn main() -> cancelable_pq::Result<()> {
    let set = gen_synthetic(&SyntheticSpec {
        n_identities: 100,
        samples_per_identity: 10,
        dim: 64,
        intra_class_noise: 0.08,
        seed: 1,
    })?;
    let codebook = train_codebook(&set, 16, 32, 42)?;
    let table = build_distance_table(&codebook);
    let index = build_index(&codebook, &table, &set)?;
    println!("indexed {} vectors with m={} subspaces of {} centroids", index.len(), codebook.m(), codebook.n());

    let query = quantize(&codebook, set.vector(3))?;
    let hits = topk_filter(&index, &query, 5)?;
    for c in &hits {
        println!("  id {:>4}  label {:>3}  distance {:.4}", c.id, set.label(c.id as usize).unwrap(), c.distance);
    }

    // The table lookup equals the sum of squared centroid distances.
    let other = quantize(&codebook, set.vector(500))?;
    let direct: f64 = (0..codebook.m())
        .map(|j| {
            let a = codebook.centroid(j, query.0[j] as usize);
            let b = codebook.centroid(j, other.0[j] as usize);
            a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>()
        })
        .sum();
    println!("table distance {:.6}, direct {:.6}", pq_distance(&table, &query, &other)?, direct);
    Ok(())
}
