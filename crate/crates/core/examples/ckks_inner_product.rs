//! Encrypt two vectors with the CKKS-style scheme, multiply them
//! homomorphically and read the inner product from the decrypted constant
//! coefficient.

use cancelable_pq::ckks_lite::{
    decrypt, encode_query, encode_record, encrypt, keygen, multiply_relin, rescale, CkksContext, HeParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn main() -> cancelable_pq::Result<()> {
    let params = HeParams::default();
    println!(
        "ring degree {}, moduli {:?}, scale 2^{}",
        params.ring_degree(),
        params.moduli(),
        params.scale().log2()
    );
    let ctx = CkksContext::new(params);
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let (sk, pk, rk) = keygen(&ctx, &mut rng);

    let dim = 128;
    let unit = |rng: &mut ChaCha20Rng| {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let (a, b) = (unit(&mut rng), unit(&mut rng));
    let scale = ctx.params().scale();
    let ca = encrypt(&pk, &encode_query(&ctx, &a, scale)?, &mut rng)?;
    let cb = encrypt(&pk, &encode_record(&ctx, &b, scale)?, &mut rng)?;
    let product = rescale(&ctx, &multiply_relin(&rk, &ca, &cb)?)?;
    let got = decrypt(&sk, &product).coefficient(&ctx, 0);
    let want: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
    println!("encrypted inner product {got:.6}, plaintext {want:.6}, error {:.2e}", (got - want).abs());
    println!("ciphertext size {} bytes", ca.to_bytes(&ctx)?.len());
    Ok(())
}
