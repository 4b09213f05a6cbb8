//! Word-sized modular arithmetic and NTT-friendly prime search.

#[inline]
pub(crate) fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

#[inline]
pub(crate) fn add_mod(a: u64, b: u64, q: u64) -> u64 {
    let s = a + b;
    if s >= q {
        s - q
    } else {
        s
    }
}

#[inline]
pub(crate) fn sub_mod(a: u64, b: u64, q: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + q - b
    }
}

pub(crate) fn pow_mod(mut base: u64, mut exp: u64, q: u64) -> u64 {
    let mut acc = 1u64 % q;
    base %= q;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, q);
        }
        base = mul_mod(base, base, q);
        exp >>= 1;
    }
    acc
}

/// Inverse modulo a prime.
pub(crate) fn inv_mod(a: u64, q: u64) -> u64 {
    pow_mod(a, q - 2, q)
}

/// Reduces a signed value into `[0, q)`.
#[inline]
pub(crate) fn reduce_i64(v: i64, q: u64) -> u64 {
    (v as i128).rem_euclid(q as i128) as u64
}

/// Prime modulus with a Barrett constant for general products.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Modulus {
    pub q: u64,
    bits: u32,
    mu: u128,
}

impl Modulus {
    pub(crate) fn new(q: u64) -> Self {
        debug_assert!(q > 2 && q < 1 << 62);
        let bits = 64 - q.leading_zeros();
        let mu = (1u128 << (2 * bits)) / q as u128;
        Self { q, bits, mu }
    }

    /// `a * b mod q` for `a, b < q`.
    #[inline]
    pub(crate) fn mul(self, a: u64, b: u64) -> u64 {
        let x = a as u128 * b as u128;
        let t = ((x >> (self.bits - 1)) * self.mu) >> (self.bits + 1);
        let mut r = (x - t * self.q as u128) as u64;
        while r >= self.q {
            r -= self.q;
        }
        r
    }
}

/// Constant multiplier with a precomputed Shoup quotient `floor(w * 2^64 / q)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Shoup {
    pub w: u64,
    pub w_shoup: u64,
}

impl Shoup {
    pub(crate) fn new(w: u64, q: u64) -> Self {
        Self {
            w,
            w_shoup: (((w as u128) << 64) / q as u128) as u64,
        }
    }

    /// `a * w mod q` for `a < q < 2^63`.
    #[inline]
    pub(crate) fn mul(self, a: u64, q: u64) -> u64 {
        let hi = ((a as u128 * self.w_shoup as u128) >> 64) as u64;
        let r = a.wrapping_mul(self.w).wrapping_sub(hi.wrapping_mul(q));
        if r >= q {
            r - q
        } else {
            r
        }
    }
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub(crate) fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for a in BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Primes `q ≡ 1 (mod step)` found by walking away from `start`.
pub(crate) fn find_primes(start: u64, step: u64, count: usize, upward: bool, exclude: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = start - (start % step) + 1;
    if upward && c <= start {
        c += step;
    }
    if !upward && c > start {
        c -= step;
    }
    while out.len() < count {
        if is_prime(c) && !exclude.contains(&c) && !out.contains(&c) {
            out.push(c);
        }
        c = if upward { c + step } else { c - step };
    }
    out
}

/// A primitive `order`-th root of unity modulo prime `q` (`order` a power of two).
pub(crate) fn primitive_root(order: u64, q: u64) -> u64 {
    let exp = (q - 1) / order;
    for g in 2..q {
        let r = pow_mod(g, exp, q);
        if pow_mod(r, order / 2, q) == q - 1 {
            return r;
        }
    }
    unreachable!("q ≡ 1 mod order guarantees a primitive root")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_primes() {
        assert!(is_prime(2));
        assert!(is_prime(1_000_000_007));
        assert!(!is_prime(1_000_000_007 * 3));
        assert!(is_prime((1u64 << 61) - 1));
        assert!(!is_prime(3_215_031_751)); // strong pseudoprime to bases 2,3,5,7
    }

    #[test]
    fn shoup_matches_u128() {
        let q = find_primes(1 << 45, 8192, 1, false, &[])[0];
        for (a, w) in [(0, 5), (q - 1, q - 1), (123_456_789, 987_654_321), (q / 2, q / 3)] {
            assert_eq!(Shoup::new(w, q).mul(a, q), mul_mod(a, w, q));
        }
    }

    #[test]
    fn barrett_matches_u128() {
        for q in [find_primes(1 << 45, 8192, 1, false, &[])[0], find_primes(1 << 30, 8192, 1, true, &[])[0], 97] {
            let m = Modulus::new(q);
            for (a, b) in [(0, 1), (q - 1, q - 1), (q / 2, q - 3), (12345 % q, 67890 % q)] {
                assert_eq!(m.mul(a, b), mul_mod(a, b, q));
            }
        }
    }

    #[test]
    fn primes_are_ntt_friendly() {
        let ps = find_primes(1 << 30, 8192, 2, true, &[]);
        for &p in &ps {
            assert!(p > 1 << 30);
            assert_eq!(p % 8192, 1);
            assert!(is_prime(p));
        }
        assert_ne!(ps[0], ps[1]);
        let root = primitive_root(8192, ps[0]);
        assert_eq!(pow_mod(root, 4096, ps[0]), ps[0] - 1);
    }
}
