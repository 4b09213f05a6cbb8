//! Negacyclic number-theoretic transform over `Z_q[X] / (X^N + 1)`.
//!
//! Forward is Cooley-Tukey with bit-reversed powers of a primitive `2N`-th
//! root `psi`; inverse is Gentleman-Sande with the inverse powers, so the
//! pointwise product of two transforms is the transform of the negacyclic
//! convolution.

use super::arith::{add_mod, inv_mod, mul_mod, primitive_root, sub_mod, Shoup};

#[derive(Debug, Clone)]
pub(crate) struct NttTable {
    pub q: u64,
    n: usize,
    psi_rev: Vec<Shoup>,
    psi_inv_rev: Vec<Shoup>,
    n_inv: Shoup,
}

fn bit_reverse(mut x: usize, bits: u32) -> usize {
    let mut r = 0;
    for _ in 0..bits {
        r = (r << 1) | (x & 1);
        x >>= 1;
    }
    r
}

impl NttTable {
    pub(crate) fn new(n: usize, q: u64) -> Self {
        let bits = n.trailing_zeros();
        let psi = primitive_root(2 * n as u64, q);
        let psi_inv = inv_mod(psi, q);
        let mut pows = vec![1u64; n];
        let mut inv_pows = vec![1u64; n];
        for i in 1..n {
            pows[i] = mul_mod(pows[i - 1], psi, q);
            inv_pows[i] = mul_mod(inv_pows[i - 1], psi_inv, q);
        }
        let psi_rev = (0..n)
            .map(|i| Shoup::new(pows[bit_reverse(i, bits)], q))
            .collect();
        let psi_inv_rev = (0..n)
            .map(|i| Shoup::new(inv_pows[bit_reverse(i, bits)], q))
            .collect();
        Self {
            q,
            n,
            psi_rev,
            psi_inv_rev,
            n_inv: Shoup::new(inv_mod(n as u64, q), q),
        }
    }

    pub(crate) fn forward(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.q;
        let mut t = self.n;
        let mut m = 1;
        while m < self.n {
            t >>= 1;
            for i in 0..m {
                let s = self.psi_rev[m + i];
                let j1 = 2 * i * t;
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = s.mul(*y, q);
                    *x = add_mod(u, v, q);
                    *y = sub_mod(u, v, q);
                }
            }
            m <<= 1;
        }
    }

    pub(crate) fn inverse(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.q;
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m >> 1;
            for i in 0..h {
                let s = self.psi_inv_rev[h + i];
                let j1 = 2 * i * t;
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = *y;
                    *x = add_mod(u, v, q);
                    *y = s.mul(sub_mod(u, v, q), q);
                }
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = self.n_inv.mul(*x, q);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckks_lite::arith::find_primes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn schoolbook(a: &[u64], b: &[u64], q: u64) -> Vec<u64> {
        let n = a.len();
        let mut out = vec![0u64; n];
        for i in 0..n {
            for j in 0..n {
                let p = mul_mod(a[i], b[j], q);
                let k = i + j;
                if k < n {
                    out[k] = add_mod(out[k], p, q);
                } else {
                    out[k - n] = sub_mod(out[k - n], p, q);
                }
            }
        }
        out
    }

    #[test]
    fn round_trip_and_negacyclic_product() {
        let n = 64;
        let q = find_primes(1 << 45, 2 * n as u64, 1, false, &[])[0];
        let table = NttTable::new(n, q);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<u64> = (0..n).map(|_| rng.random_range(0..q)).collect();
        let b: Vec<u64> = (0..n).map(|_| rng.random_range(0..q)).collect();

        let mut fa = a.clone();
        table.forward(&mut fa);
        let mut back = fa.clone();
        table.inverse(&mut back);
        assert_eq!(back, a);

        let mut fb = b.clone();
        table.forward(&mut fb);
        let mut prod: Vec<u64> = fa.iter().zip(&fb).map(|(&x, &y)| mul_mod(x, y, q)).collect();
        table.inverse(&mut prod);
        assert_eq!(prod, schoolbook(&a, &b, q));
    }
}
