//! Generate labelled synthetic embeddings, round-trip them through an EVEC
//! file and reduce them with PCA.

use cancelable_pq::embed_io::{apply_pca, cosine, fit_pca, gen_synthetic, l2_normalize, load_evec, write_evec, SyntheticSpec};

fn main() -> cancelable_pq::Result<()> {
    let spec = SyntheticSpec {
        n_identities: 50,
        samples_per_identity: 8,
        dim: 256,
        intra_class_noise: 0.09,
        seed: 7,
    };
    let set = gen_synthetic(&spec)?;
    let dir = std::env::temp_dir().join(format!("cpq-example-{}", std::process::id()));
    let path = dir.join("faces.evec");
    write_evec(&set, &path)?;
    let loaded = load_evec(&path)?;
    assert_eq!(loaded.as_flat(), set.as_flat());
    println!("{} vectors of dim {} written to and read back from {}", loaded.count(), loaded.dim(), path.display());

    let pca = fit_pca(&loaded, 64)?;
    let reduced = l2_normalize(&apply_pca(&pca, &loaded)?)?;
    let total: f32 = pca.explained_variance().iter().sum();
    println!("PCA {} -> {}, retained variance {:.4}", pca.input_dim(), pca.output_dim(), total);

    // Same-identity pairs stay far more similar than cross-identity pairs.
    let same = cosine(reduced.vector(0), reduced.vector(1));
    let other = cosine(reduced.vector(0), reduced.vector(spec.samples_per_identity));
    println!("cosine same identity {same:.3}, different identity {other:.3}");
    std::fs::remove_dir_all(dir)?;
    Ok(())
}
