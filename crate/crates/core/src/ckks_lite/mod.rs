//! A minimal leveled CKKS-style scheme over `Z_Q[X] / (X^N + 1)`.
//!
//! Vectors are packed into polynomial coefficients rather than CKKS slots: a
//! query `a` is encoded in ascending coefficient order and a record `b` in
//! reversed order with negated tail (`b_0 - sum_{i>0} b_i X^{N-i}`), so the
//! constant coefficient of their negacyclic product is exactly `<a, b>`.
//! One encrypted inner product therefore needs a single ciphertext
//! multiplication and no rotations (hence no Galois keys).
//!
//! Ciphertext polynomials are kept in NTT (evaluation) form in memory and in
//! coefficient form on the wire. Relinearization uses RNS-limb digit
//! decomposition with `DIGIT_BITS`-bit digits, which avoids a special
//! key-switching prime.
//!
//! The default parameters (N = 4096, ~105-bit modulus) are sized for
//! correctness headroom and are **not** certified for 128-bit security.

mod arith;
mod ntt;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use arith::{add_mod, find_primes, is_prime, reduce_i64, sub_mod, Modulus};
use ntt::NttTable;

use crate::container::{Reader, Writer, DTYPE_U64};
use crate::error::{Error, Result};

const CIPHERTEXT_MAGIC: &[u8; 4] = b"CKT1";
const DIGIT_BITS: u32 = 20;
const ERROR_STD: f64 = 3.2;
/// Largest magnitude accepted by the fixed-point encoder.
pub const ENCODE_BOUND: f64 = 2.0;
/// Total modulus must leave room for signed CRT reconstruction in 128 bits.
const MAX_TOTAL_BITS: u32 = 124;

/// Ring and modulus-chain parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeParams {
    ring_degree: usize,
    /// `q_0` first; rescaling drops from the end.
    moduli: Vec<u64>,
    scale: f64,
}

impl HeParams {
    pub fn new(ring_degree: usize, moduli: Vec<u64>, scale: f64) -> Result<Self> {
        if !ring_degree.is_power_of_two() || ring_degree < 8 {
            return Err(Error::param(format!(
                "ring degree {ring_degree} must be a power of two >= 8"
            )));
        }
        if moduli.len() < 2 {
            return Err(Error::param("modulus chain needs at least two primes"));
        }
        let two_n = 2 * ring_degree as u64;
        let mut total_bits = 0;
        for (i, &q) in moduli.iter().enumerate() {
            if q >= 1 << 62 || !is_prime(q) || q % two_n != 1 {
                return Err(Error::param(format!(
                    "modulus {q} must be a prime below 2^62 congruent to 1 mod {two_n}"
                )));
            }
            if moduli[..i].contains(&q) {
                return Err(Error::param(format!("modulus {q} repeated")));
            }
            total_bits += 64 - q.leading_zeros();
        }
        if total_bits > MAX_TOTAL_BITS {
            return Err(Error::param(format!(
                "total modulus of {total_bits} bits exceeds {MAX_TOTAL_BITS}"
            )));
        }
        let smallest = *moduli.iter().min().unwrap() as f64;
        if !(scale > 1.0 && scale < smallest) {
            return Err(Error::param(format!(
                "scale {scale} must lie in (1, smallest modulus {smallest})"
            )));
        }
        Ok(Self {
            ring_degree,
            moduli,
            scale,
        })
    }

    /// Generates a chain of one `first_bits`-bit prime followed by primes just
    /// above `2^scale_bits`, and uses `2^scale_bits` as the encoding scale.
    pub fn generate(ring_degree: usize, first_bits: u32, scale_bits: u32, levels: usize) -> Result<Self> {
        if !ring_degree.is_power_of_two() {
            return Err(Error::param("ring degree must be a power of two"));
        }
        if first_bits > 61 || scale_bits > 61 || scale_bits >= first_bits || levels == 0 {
            return Err(Error::param("invalid modulus bit sizes"));
        }
        let step = 2 * ring_degree as u64;
        let q0 = find_primes(1 << first_bits, step, 1, false, &[]);
        let rest = find_primes(1 << scale_bits, step, levels, true, &q0);
        let moduli = q0.into_iter().chain(rest).collect();
        Self::new(ring_degree, moduli, (1u64 << scale_bits) as f64)
    }

    pub fn ring_degree(&self) -> usize {
        self.ring_degree
    }

    pub fn moduli(&self) -> &[u64] {
        &self.moduli
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Number of rescalings available to a fresh ciphertext.
    pub fn levels(&self) -> usize {
        self.moduli.len() - 1
    }

    /// Largest vector length whose inner product fits one ciphertext product.
    pub fn max_dim(&self) -> usize {
        self.ring_degree / 2
    }
}

impl Default for HeParams {
    /// N = 4096; moduli ≈ 2^45, 2^30, 2^30; scale 2^30; two levels.
    fn default() -> Self {
        Self::generate(4096, 45, 30, 2).expect("default parameters are valid")
    }
}

/// Parameters plus precomputed NTT tables, shared by all keys and ciphertexts.
pub struct CkksContext {
    params: HeParams,
    tables: Vec<NttTable>,
    moduli: Vec<Modulus>,
}

impl fmt::Debug for CkksContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CkksContext").field("params", &self.params).finish()
    }
}

impl CkksContext {
    pub fn new(params: HeParams) -> Arc<Self> {
        let tables = params
            .moduli
            .iter()
            .map(|&q| NttTable::new(params.ring_degree, q))
            .collect();
        let moduli = params.moduli.iter().map(|&q| Modulus::new(q)).collect();
        Arc::new(Self {
            params,
            tables,
            moduli,
        })
    }

    pub fn params(&self) -> &HeParams {
        &self.params
    }

    fn n(&self) -> usize {
        self.params.ring_degree
    }

    fn top_limbs(&self) -> usize {
        self.params.moduli.len()
    }
}

/// A ring element in RNS form; `ntt` records the representation.
#[derive(Clone, PartialEq, Eq)]
pub struct RingPoly {
    limbs: Vec<Vec<u64>>,
    ntt: bool,
}

impl fmt::Debug for RingPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RingPoly")
            .field("limbs", &self.limbs.len())
            .field("ntt", &self.ntt)
            .finish()
    }
}

impl RingPoly {
    fn zero(ctx: &CkksContext, limbs: usize, ntt: bool) -> Self {
        Self {
            limbs: vec![vec![0; ctx.n()]; limbs],
            ntt,
        }
    }

    fn from_signed(ctx: &CkksContext, coeffs: &[i64], limbs: usize) -> Self {
        let limbs = ctx.params.moduli[..limbs]
            .iter()
            .map(|&q| coeffs.iter().map(|&c| reduce_i64(c, q)).collect())
            .collect();
        Self { limbs, ntt: false }
    }

    /// Active RNS limbs minus one.
    pub fn level(&self) -> usize {
        self.limbs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.limbs.iter().all(|l| l.iter().all(|&c| c == 0))
    }

    fn into_ntt(mut self, ctx: &CkksContext) -> Self {
        if !self.ntt {
            for (limb, t) in self.limbs.iter_mut().zip(&ctx.tables) {
                t.forward(limb);
            }
            self.ntt = true;
        }
        self
    }

    fn into_coeff(mut self, ctx: &CkksContext) -> Self {
        if self.ntt {
            for (limb, t) in self.limbs.iter_mut().zip(&ctx.tables) {
                t.inverse(limb);
            }
            self.ntt = false;
        }
        self
    }

    fn add_assign(&mut self, ctx: &CkksContext, other: &Self) {
        debug_assert_eq!(self.ntt, other.ntt);
        for ((a, b), m) in self.limbs.iter_mut().zip(&other.limbs).zip(&ctx.moduli) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = add_mod(*x, y, m.q);
            }
        }
    }

    fn neg(mut self, ctx: &CkksContext) -> Self {
        for (a, m) in self.limbs.iter_mut().zip(&ctx.moduli) {
            for x in a.iter_mut() {
                *x = sub_mod(0, *x, m.q);
            }
        }
        self
    }

    /// Pointwise product; both operands in NTT form.
    fn mul(&self, ctx: &CkksContext, other: &Self) -> Self {
        debug_assert!(self.ntt && other.ntt);
        let limbs = self
            .limbs
            .iter()
            .zip(&other.limbs)
            .zip(&ctx.moduli)
            .map(|((a, b), m)| a.iter().zip(b).map(|(&x, &y)| m.mul(x, y)).collect())
            .collect();
        Self { limbs, ntt: true }
    }

    /// `self += a * b` pointwise.
    fn mul_acc(&mut self, ctx: &CkksContext, a: &Self, b: &Self) {
        for (((acc, x), y), m) in self
            .limbs
            .iter_mut()
            .zip(&a.limbs)
            .zip(&b.limbs)
            .zip(&ctx.moduli)
        {
            for ((r, &u), &v) in acc.iter_mut().zip(x).zip(y) {
                *r = add_mod(*r, m.mul(u, v), m.q);
            }
        }
    }

    fn truncate(&self, limbs: usize) -> Self {
        Self {
            limbs: self.limbs[..limbs].to_vec(),
            ntt: self.ntt,
        }
    }

    /// Negacyclic product of two plaintext polynomials at the same level.
    pub fn multiply(&self, ctx: &CkksContext, other: &Self) -> Result<Self> {
        if self.limbs.len() != other.limbs.len() {
            return Err(Error::param("polynomials at different levels"));
        }
        let a = self.clone().into_ntt(ctx);
        let b = other.clone().into_ntt(ctx);
        Ok(a.mul(ctx, &b).into_coeff(ctx))
    }

    /// Signed CRT reconstruction of every coefficient.
    fn centered_coeffs(&self, ctx: &CkksContext) -> Vec<i128> {
        debug_assert!(!self.ntt);
        let moduli = &ctx.params.moduli[..self.limbs.len()];
        let big_q: u128 = moduli.iter().map(|&q| q as u128).product();
        // (Q / q_i) and its inverse mod q_i
        let parts: Vec<(u128, u64)> = moduli
            .iter()
            .map(|&q| {
                let hat = big_q / q as u128;
                let hat_mod = (hat % q as u128) as u64;
                (hat, arith::inv_mod(hat_mod, q))
            })
            .collect();
        (0..ctx.n())
            .map(|k| {
                let mut acc: u128 = 0;
                for (i, &q) in moduli.iter().enumerate() {
                    let (hat, inv) = parts[i];
                    let t = arith::mul_mod(self.limbs[i][k], inv, q) as u128;
                    acc = (acc + t * hat) % big_q;
                }
                if acc > big_q / 2 {
                    -((big_q - acc) as i128)
                } else {
                    acc as i128
                }
            })
            .collect()
    }
}

/// An encoded (not encrypted) vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Plaintext {
    pub poly: RingPoly,
    pub scale: f64,
}

impl Plaintext {
    /// Value of coefficient `k` divided by the scale.
    pub fn coefficient(&self, ctx: &CkksContext, k: usize) -> f64 {
        self.poly.centered_coeffs(ctx)[k] as f64 / self.scale
    }
}

fn fixed_point(v: &[f32], scale: f64, ctx: &CkksContext) -> Result<Vec<i64>> {
    if v.len() > ctx.params.max_dim() {
        return Err(Error::param(format!(
            "vector of length {} exceeds capacity {}",
            v.len(),
            ctx.params.max_dim()
        )));
    }
    if let Some(i) = v.iter().position(|x| !(x.abs() as f64 <= ENCODE_BOUND)) {
        return Err(Error::param(format!(
            "component {i} = {} outside the encodable range [-{ENCODE_BOUND}, {ENCODE_BOUND}]",
            v[i]
        )));
    }
    Ok(v.iter().map(|&x| (x as f64 * scale).round() as i64).collect())
}

/// Encodes `v` in ascending coefficient order.
pub fn encode_query(ctx: &CkksContext, v: &[f32], scale: f64) -> Result<Plaintext> {
    let fixed = fixed_point(v, scale, ctx)?;
    let mut coeffs = vec![0i64; ctx.n()];
    coeffs[..fixed.len()].copy_from_slice(&fixed);
    Ok(Plaintext {
        poly: RingPoly::from_signed(ctx, &coeffs, ctx.top_limbs()),
        scale,
    })
}

/// Encodes `v` reversed with negated tail so that it pairs with
/// [`encode_query`] into an inner product at coefficient 0.
pub fn encode_record(ctx: &CkksContext, v: &[f32], scale: f64) -> Result<Plaintext> {
    let fixed = fixed_point(v, scale, ctx)?;
    let n = ctx.n();
    let mut coeffs = vec![0i64; n];
    if let Some(&first) = fixed.first() {
        coeffs[0] = first;
    }
    for (i, &x) in fixed.iter().enumerate().skip(1) {
        coeffs[n - i] = -x;
    }
    Ok(Plaintext {
        poly: RingPoly::from_signed(ctx, &coeffs, ctx.top_limbs()),
        scale,
    })
}

pub fn decode_query(ctx: &CkksContext, p: &Plaintext, dim: usize) -> Vec<f64> {
    let c = p.poly.clone().into_coeff(ctx).centered_coeffs(ctx);
    c[..dim].iter().map(|&x| x as f64 / p.scale).collect()
}

pub fn decode_record(ctx: &CkksContext, p: &Plaintext, dim: usize) -> Vec<f64> {
    let c = p.poly.clone().into_coeff(ctx).centered_coeffs(ctx);
    let n = ctx.n();
    (0..dim)
        .map(|i| {
            if i == 0 {
                c[0] as f64 / p.scale
            } else {
                -(c[n - i] as f64) / p.scale
            }
        })
        .collect()
}

#[derive(Clone)]
pub struct SecretKey {
    ctx: Arc<CkksContext>,
    coeffs: Vec<i8>,
    s: RingPoly,
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

impl SecretKey {
    /// Ternary coefficients as raw bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.coeffs.iter().map(|&c| c as u8).collect()
    }
}

#[derive(Clone)]
pub struct PublicKey {
    ctx: Arc<CkksContext>,
    b: RingPoly,
    a: RingPoly,
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PublicKey(..)")
    }
}

impl PublicKey {
    pub fn context(&self) -> &Arc<CkksContext> {
        &self.ctx
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        for poly in [&self.b, &self.a] {
            for limb in &poly.limbs {
                w.u64s(limb);
            }
        }
        w.finish()
    }
}

/// Relinearization key: encryptions of `s^2 * 2^(DIGIT_BITS * t)` in RNS limb `i`.
#[derive(Clone)]
pub struct RelinKey {
    ctx: Arc<CkksContext>,
    /// Indexed by (limb, digit) in order.
    parts: Vec<(usize, u32, RingPoly, RingPoly)>,
    fingerprint_source: Vec<u64>,
}

impl fmt::Debug for RelinKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RelinKey({} parts)", self.parts.len())
    }
}

impl RelinKey {
    /// A short digest input that differs between key sets.
    pub fn identity_words(&self) -> &[u64] {
        &self.fingerprint_source
    }
}

fn sample_ternary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<i8> {
    (0..n).map(|_| rng.random_range(-1i8..=1)).collect()
}

fn sample_error<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<i64> {
    let normal = Normal::new(0.0, ERROR_STD).expect("valid std");
    let bound = 6.0 * ERROR_STD;
    (0..n)
        .map(|_| {
            let e: f64 = normal.sample(rng);
            e.clamp(-bound, bound).round() as i64
        })
        .collect()
}

fn sample_uniform<R: Rng + ?Sized>(ctx: &CkksContext, rng: &mut R, limbs: usize) -> RingPoly {
    let limbs = ctx.params.moduli[..limbs]
        .iter()
        .map(|&q| (0..ctx.n()).map(|_| rng.random_range(0..q)).collect())
        .collect();
    // Uniform in coefficient form is uniform in NTT form.
    RingPoly { limbs, ntt: true }
}

fn digit_count(q: u64) -> u32 {
    (64 - q.leading_zeros()).div_ceil(DIGIT_BITS)
}

/// Generates a secret key, public key and relinearization key.
pub fn keygen<R: Rng + ?Sized>(ctx: &Arc<CkksContext>, rng: &mut R) -> (SecretKey, PublicKey, RelinKey) {
    let n = ctx.n();
    let top = ctx.top_limbs();
    let coeffs = sample_ternary(rng, n);
    let wide: Vec<i64> = coeffs.iter().map(|&c| c as i64).collect();
    let s = RingPoly::from_signed(ctx, &wide, top).into_ntt(ctx);

    let a = sample_uniform(ctx, rng, top);
    let e = RingPoly::from_signed(ctx, &sample_error(rng, n), top).into_ntt(ctx);
    let mut b = a.mul(ctx, &s).neg(ctx);
    b.add_assign(ctx, &e);

    let s2 = s.mul(ctx, &s);
    let mut parts = Vec::new();
    for (i, &q) in ctx.params.moduli.iter().enumerate() {
        for t in 0..digit_count(q) {
            let ka = sample_uniform(ctx, rng, top);
            let ke = RingPoly::from_signed(ctx, &sample_error(rng, n), top).into_ntt(ctx);
            let mut kb = ka.mul(ctx, &s).neg(ctx);
            kb.add_assign(ctx, &ke);
            let factor = arith::pow_mod(2, (DIGIT_BITS * t) as u64, q);
            let m = ctx.moduli[i];
            for (x, &y) in kb.limbs[i].iter_mut().zip(&s2.limbs[i]) {
                *x = add_mod(*x, m.mul(y, factor), q);
            }
            parts.push((i, t, kb, ka));
        }
    }
    let fingerprint_source = parts
        .iter()
        .flat_map(|(_, _, kb, _)| kb.limbs[0][..4].to_vec())
        .collect();

    (
        SecretKey {
            ctx: ctx.clone(),
            coeffs,
            s: s.clone(),
        },
        PublicKey {
            ctx: ctx.clone(),
            b,
            a,
        },
        RelinKey {
            ctx: ctx.clone(),
            parts,
            fingerprint_source,
        },
    )
}

/// RLWE ciphertext with two (or transiently three) components in NTT form.
#[derive(Clone, PartialEq)]
pub struct Ciphertext {
    comps: Vec<RingPoly>,
    scale: f64,
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ciphertext")
            .field("level", &self.level())
            .field("scale", &self.scale)
            .field("components", &self.comps.len())
            .finish()
    }
}

impl Ciphertext {
    pub fn level(&self) -> usize {
        self.comps[0].level()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn components(&self) -> usize {
        self.comps.len()
    }

    /// Raw NTT-form words of component `i`, limb `l` (for tests and audits).
    pub fn component_words(&self, i: usize, l: usize) -> &[u64] {
        &self.comps[i].limbs[l]
    }

    pub fn to_bytes(&self, ctx: &CkksContext) -> Result<Vec<u8>> {
        let mut w = Writer::with_preamble(CIPHERTEXT_MAGIC, DTYPE_U64);
        w.len_u32(ctx.n())?;
        w.len_u32(self.level())?;
        w.f64(self.scale);
        w.len_u32(self.comps.len())?;
        for c in &self.comps {
            let coeff = c.clone().into_coeff(ctx);
            for limb in &coeff.limbs {
                w.u64s(limb);
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(ctx: &CkksContext, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.preamble(CIPHERTEXT_MAGIC)?;
        let at = r.offset();
        let degree = r.usize()?;
        if degree != ctx.n() {
            return Err(Error::format(
                at,
                format!("ring degree {degree} does not match context {}", ctx.n()),
            ));
        }
        let at = r.offset();
        let level = r.usize()?;
        if level >= ctx.top_limbs() {
            return Err(Error::format(at, format!("level {level} beyond modulus chain")));
        }
        let scale = r.f64()?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(r.err("invalid scale"));
        }
        let at = r.offset();
        let count = r.usize()?;
        if !(2..=3).contains(&count) {
            return Err(Error::format(at, format!("{count} components")));
        }
        let mut comps = Vec::with_capacity(count);
        for _ in 0..count {
            let mut limbs = Vec::with_capacity(level + 1);
            for &q in &ctx.params.moduli[..=level] {
                let at = r.offset();
                let limb = r.u64s(ctx.n())?;
                if let Some(p) = limb.iter().position(|&c| c >= q) {
                    return Err(Error::format(at + 8 * p as u64, "coefficient not reduced"));
                }
                limbs.push(limb);
            }
            comps.push(RingPoly { limbs, ntt: false }.into_ntt(ctx));
        }
        r.expect_end()?;
        Ok(Self { comps, scale })
    }
}

/// Public-key encryption of a plaintext at its level.
pub fn encrypt<R: Rng + ?Sized>(pk: &PublicKey, p: &Plaintext, rng: &mut R) -> Result<Ciphertext> {
    let ctx = &pk.ctx;
    let n = ctx.n();
    let limbs = p.poly.limbs.len();
    if limbs == 0 || limbs > ctx.top_limbs() {
        return Err(Error::State("plaintext level exhausted".into()));
    }
    let u: Vec<i64> = sample_ternary(rng, n).into_iter().map(i64::from).collect();
    let u = RingPoly::from_signed(ctx, &u, limbs).into_ntt(ctx);
    let e0 = RingPoly::from_signed(ctx, &sample_error(rng, n), limbs).into_ntt(ctx);
    let e1 = RingPoly::from_signed(ctx, &sample_error(rng, n), limbs).into_ntt(ctx);
    let m = p.poly.clone().into_ntt(ctx);

    let mut c0 = pk.b.truncate(limbs).mul(ctx, &u);
    c0.add_assign(ctx, &e0);
    c0.add_assign(ctx, &m);
    let mut c1 = pk.a.truncate(limbs).mul(ctx, &u);
    c1.add_assign(ctx, &e1);
    Ok(Ciphertext {
        comps: vec![c0, c1],
        scale: p.scale,
    })
}

pub fn decrypt(sk: &SecretKey, c: &Ciphertext) -> Plaintext {
    let ctx = &sk.ctx;
    let limbs = c.comps[0].limbs.len();
    let s = sk.s.truncate(limbs);
    let mut acc = c.comps[0].clone();
    let mut s_pow = s.clone();
    for comp in &c.comps[1..] {
        acc.mul_acc(ctx, comp, &s_pow);
        s_pow = s_pow.mul(ctx, &s);
    }
    Plaintext {
        poly: acc.into_coeff(ctx),
        scale: c.scale,
    }
}

fn check_compatible(a: &Ciphertext, b: &Ciphertext) -> Result<()> {
    if a.level() != b.level() {
        return Err(Error::param(format!(
            "level mismatch: {} vs {}",
            a.level(),
            b.level()
        )));
    }
    let tol = f64::EPSILON * a.scale.max(b.scale);
    if (a.scale - b.scale).abs() > tol {
        return Err(Error::param(format!(
            "scale mismatch: {} vs {}",
            a.scale, b.scale
        )));
    }
    Ok(())
}

pub fn add(ctx: &CkksContext, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
    check_compatible(a, b)?;
    if a.comps.len() != 2 || b.comps.len() != 2 {
        return Err(Error::param("addition requires relinearized ciphertexts"));
    }
    let mut out = a.clone();
    for (x, y) in out.comps.iter_mut().zip(&b.comps) {
        x.add_assign(ctx, y);
    }
    Ok(out)
}

/// Ciphertext product followed by relinearization back to two components.
pub fn multiply_relin(rk: &RelinKey, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
    let ctx = &rk.ctx;
    if a.level() != b.level() {
        return Err(Error::param(format!(
            "level mismatch: {} vs {}",
            a.level(),
            b.level()
        )));
    }
    if a.level() == 0 {
        return Err(Error::State("no level left for multiplication".into()));
    }
    if a.comps.len() != 2 || b.comps.len() != 2 {
        return Err(Error::param("multiplication requires relinearized ciphertexts"));
    }
    let (a0, a1) = (&a.comps[0], &a.comps[1]);
    let (b0, b1) = (&b.comps[0], &b.comps[1]);
    let mut d0 = a0.mul(ctx, b0);
    let mut d1 = a0.mul(ctx, b1);
    d1.mul_acc(ctx, a1, b0);
    let d2 = a1.mul(ctx, b1);
    relinearize(rk, &mut d0, &mut d1, d2);
    Ok(Ciphertext {
        comps: vec![d0, d1],
        scale: a.scale * b.scale,
    })
}

fn relinearize(rk: &RelinKey, d0: &mut RingPoly, d1: &mut RingPoly, d2: RingPoly) {
    let ctx = &rk.ctx;
    let limbs = d2.limbs.len();
    let d2 = d2.into_coeff(ctx);
    let mask = (1u64 << DIGIT_BITS) - 1;
    let mut digit = RingPoly::zero(ctx, limbs, false);
    for (i, t, kb, ka) in &rk.parts {
        if *i >= limbs {
            continue;
        }
        let shift = DIGIT_BITS * t;
        for (k, limb) in digit.limbs.iter_mut().enumerate() {
            for (dst, &c) in limb.iter_mut().zip(&d2.limbs[*i]) {
                *dst = (c >> shift) & mask;
            }
            ctx.tables[k].forward(limb);
        }
        digit.ntt = true;
        d0.mul_acc(ctx, &digit, kb);
        d1.mul_acc(ctx, &digit, ka);
        digit.ntt = false;
    }
}

/// Divides by the last active prime and drops it.
pub fn rescale(ctx: &CkksContext, c: &Ciphertext) -> Result<Ciphertext> {
    let limbs = c.comps[0].limbs.len();
    if limbs < 2 {
        return Err(Error::State("no level left to rescale".into()));
    }
    let last = limbs - 1;
    let q_last = ctx.params.moduli[last];
    let mut comps = Vec::with_capacity(c.comps.len());
    for comp in &c.comps {
        let mut top = comp.limbs[last].clone();
        ctx.tables[last].inverse(&mut top);
        let mut out = RingPoly {
            limbs: Vec::with_capacity(last),
            ntt: true,
        };
        for k in 0..last {
            let q = ctx.params.moduli[k];
            let m = ctx.moduli[k];
            let inv = arith::inv_mod(q_last % q, q);
            let mut centered: Vec<u64> = top
                .iter()
                .map(|&x| {
                    let signed = if x > q_last / 2 {
                        x as i64 - q_last as i64
                    } else {
                        x as i64
                    };
                    reduce_i64(signed, q)
                })
                .collect();
            ctx.tables[k].forward(&mut centered);
            let limb = comp.limbs[k]
                .iter()
                .zip(&centered)
                .map(|(&x, &y)| m.mul(sub_mod(x, y, q), inv))
                .collect();
            out.limbs.push(limb);
        }
        comps.push(out);
    }
    Ok(Ciphertext {
        comps,
        scale: c.scale / q_last as f64,
    })
}
