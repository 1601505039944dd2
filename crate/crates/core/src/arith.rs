//! Elementary modular and prime arithmetic shared across the crate.
//!
//! Everything here is a pure function of its inputs. The only state is the
//! optional smallest-prime-factor table, which is immutable once built.

use crate::error::{domain, RaceError, Result};
use serde::{Deserialize, Serialize};

/// Moduli below this bound count square roots by direct enumeration.
pub const SQRT_ENUMERATION_LIMIT: u64 = 1_000_000;

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

pub fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

pub fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    if m == 1 {
        return 0;
    }
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Inverse of `a` modulo `m`, if it exists.
pub fn inv_mod(a: u64, m: u64) -> Option<u64> {
    let (mut old_r, mut r) = (a as i128 % m as i128, m as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let quot = old_r / r;
        (old_r, r) = (r, old_r - quot * r);
        (old_s, s) = (s, old_s - quot * s);
    }
    if old_r != 1 {
        return None;
    }
    Some(old_s.rem_euclid(m as i128) as u64)
}

/// Reduce a signed integer into `[0, q)`.
pub fn reduce(a: i64, q: u64) -> u64 {
    (a as i128).rem_euclid(q as i128) as u64
}

/// Representative of `a mod q` in `(-q/2, q/2]`.
pub fn signed_rep(a: i64, q: u64) -> i64 {
    let r = reduce(a, q);
    if 2 * r > q {
        r as i64 - q as i64
    } else {
        r as i64
    }
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    const SMALL: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &SMALL {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &SMALL {
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

/// Prime factorization as `(p, e)` pairs with `p` increasing.
///
/// Trial division by 2, 3 and then the 6k±1 wheel; fine for the desk-scale
/// moduli used here (q ≤ 10⁹, and anything below ~10¹²).
pub fn factorize(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    if n < 2 {
        return out;
    }
    for p in [2u64, 3] {
        if n % p == 0 {
            let mut e = 0;
            while n % p == 0 {
                n /= p;
                e += 1;
            }
            out.push((p, e));
        }
    }
    let mut p = 5u64;
    let mut step = 2u64;
    while p.saturating_mul(p) <= n {
        if n % p == 0 {
            let mut e = 0;
            while n % p == 0 {
                n /= p;
                e += 1;
            }
            out.push((p, e));
        }
        p += step;
        step = 6 - step;
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

pub fn euler_phi(n: u64) -> u64 {
    factorize(n)
        .iter()
        .fold(n, |acc, &(p, _)| acc / p * (p - 1))
}

/// `Some((p, k))` when `n = p^k` with `k ≥ 1`.
pub fn prime_power(n: u64) -> Option<(u64, u32)> {
    let f = factorize(n);
    if f.len() == 1 {
        Some(f[0])
    } else {
        None
    }
}

/// Λ(n): `log p` on prime powers, zero elsewhere.
pub fn von_mangoldt(n: u64) -> Result<f64> {
    if n == 0 {
        return domain("von Mangoldt function is undefined at 0");
    }
    Ok(prime_power(n).map_or(0.0, |(p, _)| (p as f64).ln()))
}

/// Λ₀(n) = Λ(n)/n on positive integers.
pub fn lambda0(n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    prime_power(n).map_or(0.0, |(p, _)| (p as f64).ln() / n as f64)
}

/// Λ₀ evaluated at the positive rational `num/den`; zero off the integers.
pub fn lambda0_ratio(num: u64, den: u64) -> f64 {
    if den == 0 || num % den != 0 {
        0.0
    } else {
        lambda0(num / den)
    }
}

fn check_modulus(q: u64) -> Result<()> {
    if q < 3 {
        return domain(format!("modulus must be at least 3, got {q}"));
    }
    Ok(())
}

fn check_unit(a: i64, q: u64) -> Result<u64> {
    check_modulus(q)?;
    let r = reduce(a, q);
    if gcd(r, q) != 1 {
        return domain(format!("{a} is not a unit modulo {q}"));
    }
    Ok(r)
}

/// A residue class modulo `q`, carrying both its least non-negative and its
/// balanced representative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Residue {
    pub q: u64,
    pub value: u64,
    pub signed_rep: i64,
}

impl Residue {
    pub fn new(a: i64, q: u64) -> Result<Self> {
        check_modulus(q)?;
        Ok(Self {
            q,
            value: reduce(a, q),
            signed_rep: signed_rep(a, q),
        })
    }

    /// Like [`Residue::new`], additionally requiring `gcd(a, q) = 1`.
    pub fn unit(a: i64, q: u64) -> Result<Self> {
        check_unit(a, q)?;
        Self::new(a, q)
    }

    pub fn is_unit(&self) -> bool {
        gcd(self.value, self.q) == 1
    }
}

/// A residue together with its value `C_q(a)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChebyshevWeight {
    pub a: Residue,
    pub c: i64,
}

impl ChebyshevWeight {
    pub fn new(a: i64, q: u64) -> Result<Self> {
        let c = chebyshev_c(a, q)?;
        Ok(Self {
            a: Residue::new(a, q)?,
            c,
        })
    }
}

/// Number of `b mod q` with `b² ≡ a (mod q)`, for `a` a unit.
pub fn count_sqrt(a: i64, q: u64) -> Result<u64> {
    let r = check_unit(a, q)?;
    if q <= SQRT_ENUMERATION_LIMIT {
        Ok(count_sqrt_enumerate(r, q))
    } else {
        Ok(count_sqrt_factored(r, q))
    }
}

pub(crate) fn count_sqrt_enumerate(a: u64, q: u64) -> u64 {
    (0..q).filter(|&b| mul_mod(b, b, q) == a % q).count() as u64
}

/// Hensel/CRT count: each odd prime power contributes 2 or 0 by the
/// Legendre symbol; the 2-part contributes 1, 2 or 4 by `a mod 8`.
pub(crate) fn count_sqrt_factored(a: u64, q: u64) -> u64 {
    let mut count = 1u64;
    for (p, e) in factorize(q) {
        let local = if p == 2 {
            match e {
                1 => 1,
                2 => {
                    if a % 4 == 1 {
                        2
                    } else {
                        0
                    }
                }
                _ => {
                    if a % 8 == 1 {
                        4
                    } else {
                        0
                    }
                }
            }
        } else if pow_mod(a % p, (p - 1) / 2, p) == 1 {
            2
        } else {
            0
        };
        if local == 0 {
            return 0;
        }
        count *= local;
    }
    count
}

/// C_q(a) = #{b : b² ≡ a} − 1.
pub fn chebyshev_c(a: i64, q: u64) -> Result<i64> {
    Ok(count_sqrt(a, q)? as i64 - 1)
}

pub fn is_square_mod(a: i64, q: u64) -> Result<bool> {
    Ok(count_sqrt(a, q)? > 0)
}

/// Smallest prime quadratic non-residue modulo the prime `p` (3 when p = 2).
pub fn least_nonresidue(p: u64) -> Result<u64> {
    if !is_prime(p) {
        return domain(format!("{p} is not prime"));
    }
    if p == 2 {
        return Ok(3);
    }
    let mut l = 2u64;
    loop {
        if is_prime(l) && pow_mod(l % p, (p - 1) / 2, p) == p - 1 {
            return Ok(l);
        }
        l += 1;
    }
}

/// The auxiliary primes used by the explicit biased constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxPrimes {
    /// Least non-residue of the largest prime factor of q; a non-square mod q.
    pub p0: u64,
    pub p1: u64,
    pub p2: u64,
}

pub fn aux_primes(q: u64) -> Result<AuxPrimes> {
    check_modulus(q)?;
    let largest = factorize(q).last().map(|&(p, _)| p).unwrap_or(2);
    let p0 = least_nonresidue(largest)?;
    let mut found = Vec::with_capacity(2);
    let mut l = 2u64;
    while found.len() < 2 {
        if is_prime(l) && l != p0 && q % l != 0 {
            found.push(l);
        }
        l += 1;
    }
    Ok(AuxPrimes {
        p0,
        p1: found[0],
        p2: found[1],
    })
}

/// Whether `(a1, a2, a3) = (a1, a1ρ, a1ρ²)` for some `ρ ≢ 1` with `ρ³ ≡ 1 (mod q)`.
pub fn cube_root_condition(a1: i64, a2: i64, a3: i64, q: u64) -> Result<bool> {
    let x1 = check_unit(a1, q)?;
    let x2 = check_unit(a2, q)?;
    let x3 = check_unit(a3, q)?;
    let rho = mul_mod(x2, inv_mod(x1, q).expect("unit"), q);
    Ok(rho != 1 && pow_mod(rho, 3, q) == 1 && mul_mod(x1, mul_mod(rho, rho, q), q) == x3)
}

/// Smallest-prime-factor table for dense Λ access up to a fixed bound,
/// falling back to trial division above it.
pub struct SpfTable {
    spf: Vec<u32>,
}

impl SpfTable {
    pub fn new(bound: usize) -> Result<Self> {
        if bound > u32::MAX as usize {
            return Err(RaceError::Config(format!("SPF bound {bound} exceeds u32 range")));
        }
        let mut spf = vec![0u32; bound + 1];
        for i in 2..=bound {
            if spf[i] == 0 {
                spf[i] = i as u32;
                if let Some(start) = i.checked_mul(i) {
                    let mut j = start;
                    while j <= bound {
                        if spf[j] == 0 {
                            spf[j] = i as u32;
                        }
                        j += i;
                    }
                }
            }
        }
        Ok(Self { spf })
    }

    pub fn bound(&self) -> u64 {
        (self.spf.len() - 1) as u64
    }

    pub fn von_mangoldt(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return domain("von Mangoldt function is undefined at 0");
        }
        if n > self.bound() {
            return von_mangoldt(n);
        }
        if n == 1 {
            return Ok(0.0);
        }
        let p = self.spf[n as usize] as u64;
        let mut m = n;
        while m % p == 0 {
            m /= p;
        }
        Ok(if m == 1 { (p as f64).ln() } else { 0.0 })
    }
}
