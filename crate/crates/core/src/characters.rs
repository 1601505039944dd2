//! Dirichlet characters modulo q.
//!
//! The unit group is decomposed into cyclic factors by CRT: an odd prime
//! power contributes one cyclic factor generated by a primitive root, 4
//! contributes ⟨−1⟩, and 2^e with e ≥ 3 contributes ⟨−1⟩ × ⟨5⟩. A character
//! is an exponent vector over these factors; values are computed from exact
//! integer phases modulo the group exponent and converted to floating point
//! only at the end.

use crate::arith::{factorize, gcd, inv_mod, pow_mod, von_mangoldt};
use crate::error::{domain, RaceError, Result};
use crate::sieve::{segmented_sieve, DEFAULT_SEGMENT_SIZE};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Mutex;

/// Largest modulus for which a full character group is materialised.
pub const MAX_GROUP_MODULUS: u64 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FactorKind {
    Odd,
    /// The ⟨−1⟩ factor of the 2-part (modulus 4 or 2^e, e ≥ 3).
    MinusOne,
    /// The ⟨5⟩ factor of 2^e, e ≥ 3.
    Five,
}

#[derive(Debug, Clone)]
pub struct CyclicFactor {
    pub prime: u64,
    pub prime_exp: u32,
    pub modulus: u64,
    pub order: u64,
    pub generator: u64,
    kind: FactorKind,
    dlog: Vec<u32>,
}

impl CyclicFactor {
    fn log_of(&self, n: u64) -> u64 {
        self.dlog[(n % self.modulus) as usize] as u64
    }
}

/// Smallest odd-prime primitive root that also generates mod p², hence mod
/// every power of p. Using one rule for all exponents keeps generators
/// compatible between q and its divisors.
fn primitive_root(p: u64) -> u64 {
    let order = p - 1;
    let divisors: Vec<u64> = factorize(order).iter().map(|&(l, _)| l).collect();
    let p2 = p * p;
    (2..)
        .find(|&g| {
            g % p != 0
                && divisors.iter().all(|&l| pow_mod(g, order / l, p) != 1)
                && pow_mod(g, order, p2) != 1
        })
        .expect("primitive roots exist")
}

fn odd_factor(p: u64, e: u32) -> CyclicFactor {
    let modulus = p.pow(e);
    let order = modulus / p * (p - 1);
    let g = primitive_root(p) % modulus;
    let mut dlog = vec![u32::MAX; modulus as usize];
    let mut x = 1u64;
    for j in 0..order {
        dlog[x as usize] = j as u32;
        x = x * g % modulus;
    }
    CyclicFactor {
        prime: p,
        prime_exp: e,
        modulus,
        order,
        generator: g,
        kind: FactorKind::Odd,
        dlog,
    }
}

fn two_factors(e: u32) -> Vec<CyclicFactor> {
    match e {
        0 | 1 => Vec::new(),
        2 => vec![CyclicFactor {
            prime: 2,
            prime_exp: 2,
            modulus: 4,
            order: 2,
            generator: 3,
            kind: FactorKind::MinusOne,
            dlog: vec![u32::MAX, 0, u32::MAX, 1],
        }],
        _ => {
            let modulus = 1u64 << e;
            let order5 = modulus / 4;
            let mut dlog_m1 = vec![u32::MAX; modulus as usize];
            let mut dlog_5 = vec![u32::MAX; modulus as usize];
            let mut x = 1u64;
            for j in 0..order5 {
                dlog_5[x as usize] = j as u32;
                dlog_5[(modulus - x) as usize] = j as u32;
                dlog_m1[x as usize] = 0;
                dlog_m1[(modulus - x) as usize] = 1;
                x = x * 5 % modulus;
            }
            vec![
                CyclicFactor {
                    prime: 2,
                    prime_exp: e,
                    modulus,
                    order: 2,
                    generator: modulus - 1,
                    kind: FactorKind::MinusOne,
                    dlog: dlog_m1,
                },
                CyclicFactor {
                    prime: 2,
                    prime_exp: e,
                    modulus,
                    order: order5,
                    generator: 5,
                    kind: FactorKind::Five,
                    dlog: dlog_5,
                },
            ]
        }
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// A character, identified by its exponent vector over the group's cyclic factors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Character {
    pub modulus: u64,
    pub index: usize,
    pub exponents: Vec<u64>,
    pub conductor: u64,
    /// χ(−1) ∈ {+1, −1}.
    pub parity: i8,
}

impl Character {
    pub fn is_principal(&self) -> bool {
        self.exponents.iter().all(|&k| k == 0)
    }
}

/// All φ(q) Dirichlet characters modulo q.
#[derive(Debug, Clone)]
pub struct CharacterGroup {
    pub q: u64,
    pub phi: u64,
    pub factors: Vec<CyclicFactor>,
    /// Least common multiple of the factor orders.
    pub exponent: u64,
    roots: Vec<Complex64>,
    characters: Vec<Character>,
}

impl CharacterGroup {
    pub fn new(q: u64) -> Result<Self> {
        if q < 3 {
            return domain(format!("character groups need q ≥ 3, got {q}"));
        }
        if q > MAX_GROUP_MODULUS {
            return Err(RaceError::Config(format!(
                "modulus {q} exceeds the materialisable bound {MAX_GROUP_MODULUS}"
            )));
        }
        let mut factors = Vec::new();
        for (p, e) in factorize(q) {
            if p == 2 {
                factors.extend(two_factors(e));
            } else {
                factors.push(odd_factor(p, e));
            }
        }
        let phi: u64 = factors.iter().map(|f| f.order).product();
        let exponent = factors.iter().fold(1, |acc, f| lcm(acc, f.order));
        let roots = (0..exponent)
            .map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / exponent as f64))
            .collect();
        let mut group = Self {
            q,
            phi,
            factors,
            exponent,
            roots,
            characters: Vec::with_capacity(phi as usize),
        };
        for index in 0..phi as usize {
            let mut rest = index as u64;
            let exponents: Vec<u64> = group
                .factors
                .iter()
                .map(|f| {
                    let k = rest % f.order;
                    rest /= f.order;
                    k
                })
                .collect();
            let conductor = group.conductor_of(&exponents);
            let parity = group.parity_of(&exponents);
            group.characters.push(Character {
                modulus: q,
                index,
                exponents,
                conductor,
                parity,
            });
        }
        Ok(group)
    }

    pub fn len(&self) -> usize {
        self.characters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.characters.is_empty()
    }

    pub fn characters(&self) -> &[Character] {
        &self.characters
    }

    pub fn character(&self, index: usize) -> &Character {
        &self.characters[index]
    }

    pub fn principal(&self) -> &Character {
        &self.characters[0]
    }

    /// Shape of the unit group as the list of cyclic orders.
    pub fn structure(&self) -> Vec<u64> {
        self.factors.iter().map(|f| f.order).collect()
    }

    /// χ(n) as a numerator over `self.exponent`, or `None` when gcd(n, q) > 1.
    pub fn phase(&self, chi: &Character, n: u64) -> Option<u64> {
        let n = n % self.q;
        if gcd(n, self.q) != 1 {
            return None;
        }
        let mut acc = 0u64;
        for (f, &k) in self.factors.iter().zip(&chi.exponents) {
            if k == 0 {
                continue;
            }
            let step = self.exponent / f.order;
            acc = (acc + (k * f.log_of(n) % f.order) * step) % self.exponent;
        }
        Some(acc)
    }

    pub fn eval(&self, chi: &Character, n: i64) -> Complex64 {
        let r = (n as i128).rem_euclid(self.q as i128) as u64;
        match self.phase(chi, r) {
            Some(k) => self.roots[k as usize],
            None => Complex64::new(0.0, 0.0),
        }
    }

    /// Root of unity e^{2πik/exponent}.
    pub fn root(&self, k: u64) -> Complex64 {
        self.roots[(k % self.exponent) as usize]
    }

    fn conductor_of(&self, exponents: &[u64]) -> u64 {
        let mut conductor = 1u64;
        let mut i = 0;
        while i < self.factors.len() {
            let f = &self.factors[i];
            match f.kind {
                FactorKind::Odd => {
                    let k = exponents[i];
                    if k != 0 {
                        // smallest t ≥ 1 with p^{e−t} | k
                        let mut t = f.prime_exp;
                        let mut pe = 1u64;
                        for _ in 0..f.prime_exp - 1 {
                            if k % (pe * f.prime) == 0 {
                                pe *= f.prime;
                                t -= 1;
                            } else {
                                break;
                            }
                        }
                        conductor *= f.prime.pow(t);
                    }
                    i += 1;
                }
                FactorKind::MinusOne if f.modulus == 4 => {
                    if exponents[i] != 0 {
                        conductor *= 4;
                    }
                    i += 1;
                }
                FactorKind::MinusOne => {
                    let k_m1 = exponents[i];
                    let k5 = exponents[i + 1];
                    if k5 != 0 {
                        let v = k5.trailing_zeros();
                        conductor *= 1u64 << (f.prime_exp - v);
                    } else if k_m1 != 0 {
                        conductor *= 4;
                    }
                    i += 2;
                }
                FactorKind::Five => unreachable!("⟨5⟩ always follows ⟨−1⟩"),
            }
        }
        conductor
    }

    fn parity_of(&self, exponents: &[u64]) -> i8 {
        // −1 is g^{order/2} in odd factors and the generator of ⟨−1⟩ in the 2-part.
        let odd = self
            .factors
            .iter()
            .zip(exponents)
            .map(|(f, &k)| match f.kind {
                FactorKind::Odd | FactorKind::MinusOne => k % 2,
                FactorKind::Five => 0,
            })
            .sum::<u64>();
        if odd % 2 == 0 {
            1
        } else {
            -1
        }
    }

    /// Conductor by brute force: the least d | q with χ trivial on units ≡ 1 mod d.
    pub fn conductor_by_scan(&self, chi: &Character) -> u64 {
        let mut divisors: Vec<u64> = (1..=self.q).filter(|d| self.q % d == 0).collect();
        divisors.sort_unstable();
        for d in divisors {
            let trivial = (1..self.q)
                .step_by(d as usize)
                .filter(|&n| gcd(n, self.q) == 1)
                .all(|n| self.phase(chi, n) == Some(0));
            if trivial {
                return d;
            }
        }
        self.q
    }

    /// The part of q supported on the primes dividing `d`.
    fn support_part(&self, d: u64) -> u64 {
        factorize(self.q)
            .iter()
            .filter(|&&(p, _)| d % p == 0)
            .map(|&(p, e)| p.pow(e))
            .product()
    }

    /// χ*(n) for the primitive character χ* inducing χ, at any n ≥ 1.
    ///
    /// n is lifted to a unit n' mod q with n' ≡ n modulo the prime powers of q
    /// supported on the conductor and n' ≡ 1 elsewhere; then χ*(n) = χ(n').
    pub fn eval_primitive(&self, chi: &Character, n: u64) -> Complex64 {
        match self.primitive_phase(chi, n) {
            Some(k) => self.roots[k as usize],
            None => Complex64::new(0.0, 0.0),
        }
    }

    pub fn primitive_phase(&self, chi: &Character, n: u64) -> Option<u64> {
        let d = chi.conductor;
        if gcd(n, d) != 1 {
            return None;
        }
        if d == 1 {
            return Some(0);
        }
        let m1 = self.support_part(d);
        let m2 = self.q / m1;
        let lifted = if m2 == 1 {
            n % m1
        } else {
            // n' ≡ n (mod m1), n' ≡ 1 (mod m2)
            let r1 = n % m1;
            let t = ((1 + m2 - r1 % m2) % m2) * inv_mod(m1 % m2, m2).expect("coprime parts") % m2;
            (r1 + m1 * t) % self.q
        };
        self.phase(chi, lifted)
    }

    /// The primitive character inducing χ, realised in the group mod its conductor.
    pub fn induce_primitive(&self, chi: &Character) -> Result<PrimitiveCharacter> {
        let d = chi.conductor;
        if d == 1 {
            return Ok(PrimitiveCharacter {
                conductor: 1,
                group: None,
                character: None,
            });
        }
        let target = CharacterGroup::new(d)?;
        let mut exps = vec![0u64; target.factors.len()];
        let mut ti = 0;
        let mut si = 0;
        while ti < target.factors.len() {
            let tf = &target.factors[ti];
            while self.factors[si].prime != tf.prime {
                si += 1;
            }
            let sf = &self.factors[si];
            match (tf.kind, sf.kind) {
                (FactorKind::Odd, FactorKind::Odd) => {
                    let shrink = sf.order / tf.order;
                    exps[ti] = chi.exponents[si] / shrink;
                    ti += 1;
                    si += 1;
                }
                (FactorKind::MinusOne, _) if tf.modulus == 4 => {
                    exps[ti] = chi.exponents[si];
                    ti += 1;
                    si += 1 + usize::from(sf.modulus > 4);
                }
                (FactorKind::MinusOne, FactorKind::MinusOne) => {
                    exps[ti] = chi.exponents[si];
                    let shrink = self.factors[si + 1].order / target.factors[ti + 1].order;
                    exps[ti + 1] = chi.exponents[si + 1] / shrink;
                    ti += 2;
                    si += 2;
                }
                _ => unreachable!("factor layouts of q and its divisors agree"),
            }
        }
        let index = exps
            .iter()
            .zip(&target.factors)
            .rev()
            .fold(0u64, |acc, (&k, f)| acc * f.order + k) as usize;
        let character = target.character(index).clone();
        Ok(PrimitiveCharacter {
            conductor: d,
            character: Some(character),
            group: Some(Box::new(target)),
        })
    }
}

/// χ* together with the group mod its conductor. The trivial character
/// (conductor 1) carries no group.
#[derive(Debug, Clone)]
pub struct PrimitiveCharacter {
    pub conductor: u64,
    pub group: Option<Box<CharacterGroup>>,
    pub character: Option<Character>,
}

impl PrimitiveCharacter {
    pub fn eval(&self, n: u64) -> Complex64 {
        match (&self.group, &self.character) {
            (Some(g), Some(c)) => g.eval(c, n as i64),
            _ => Complex64::new(1.0, 0.0),
        }
    }

    pub fn is_primitive(&self) -> bool {
        match (&self.group, &self.character) {
            (Some(g), Some(c)) => c.conductor == g.q,
            _ => true,
        }
    }
}

/// Σ_χ χ(a) log q*_χ by direct summation and by its closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogConductorSum {
    pub direct: f64,
    pub closed_form: f64,
}

pub fn log_conductor_sum(group: &CharacterGroup, a: i64) -> Result<LogConductorSum> {
    let q = group.q;
    let r = (a as i128).rem_euclid(q as i128) as u64;
    if gcd(r, q) != 1 {
        return domain(format!("{a} is not a unit modulo {q}"));
    }
    let direct: Complex64 = group
        .characters()
        .iter()
        .map(|chi| group.eval(chi, r as i64) * (chi.conductor as f64).ln())
        .sum();
    Ok(LogConductorSum {
        direct: direct.re,
        closed_form: log_conductor_closed_form(q, r),
    })
}

/// φ(q)(log q − Σ_{p|q} log p/(p−1)) at a ≡ 1, else −φ(q) Λ(m)/φ(m) with m = q/(q, a−1).
pub fn log_conductor_closed_form(q: u64, a: u64) -> f64 {
    let phi = crate::arith::euler_phi(q) as f64;
    let a = a % q;
    if a == 1 {
        let correction: f64 = factorize(q)
            .iter()
            .map(|&(p, _)| (p as f64).ln() / (p - 1) as f64)
            .sum();
        phi * ((q as f64).ln() - correction)
    } else {
        let m = q / gcd(q, (a + q - 1) % q);
        -phi * von_mangoldt(m).expect("m ≥ 1") / crate::arith::euler_phi(m) as f64
    }
}

/// Upper end of the smoothed sums: n ≤ 2y log y.
pub fn truncation_point(y: f64) -> u64 {
    (2.0 * y * y.ln()).ceil() as u64
}

/// Bound on Σ_{n > 2y log y} Λ(n) n⁻¹ e^{−n/y}.
pub fn truncation_tail(y: f64) -> f64 {
    let t = 2.0 * y * y.ln();
    t.ln() / (t * y)
}

/// Visit every prime power n = p^k ≤ limit as (n, p).
fn for_each_prime_power<F: FnMut(u64, u64)>(limit: u64, mut visit: F) -> Result<()> {
    segmented_sieve(limit, DEFAULT_SEGMENT_SIZE, |p| {
        let mut n = p;
        loop {
            visit(n, p);
            match n.checked_mul(p) {
                Some(m) if m <= limit => n = m,
                _ => break,
            }
        }
    })
}

/// Compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Smoothed value of L'/L(1, χ*), i.e. −Σ χ*(n)Λ(n)n⁻¹e^{−n/y}, with its error budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedLogDeriv {
    pub q: u64,
    pub chi_index: usize,
    pub y: f64,
    pub truncation: u64,
    pub value: Complex64,
    /// smoothing constant · log q / √y plus the truncated tail.
    pub tail_bound: f64,
}

pub fn smoothing_budget(q: u64, y: f64, constant: f64) -> f64 {
    constant * (q as f64).ln() / y.sqrt() + truncation_tail(y)
}

fn check_smoothing(q: u64, y: f64) -> Result<()> {
    if !(y >= q as f64) {
        return Err(RaceError::Precondition(format!(
            "smoothing parameter y = {y} must be at least q = {q}"
        )));
    }
    if truncation_point(y) >= u32::MAX as u64 * 4 {
        return Err(RaceError::Config(format!("smoothing parameter y = {y} is too large to sum")));
    }
    Ok(())
}

/// Single-character evaluation by direct summation over prime powers.
pub fn log_deriv_l_at_1(
    group: &CharacterGroup,
    chi: &Character,
    y: f64,
    smoothing_constant: f64,
) -> Result<SmoothedLogDeriv> {
    if chi.is_principal() {
        return Err(RaceError::Precondition(
            "principal character: use principal_smoothed_sum".into(),
        ));
    }
    check_smoothing(group.q, y)?;
    let limit = truncation_point(y);
    let (mut re, mut im) = (Neumaier::default(), Neumaier::default());
    for_each_prime_power(limit, |n, p| {
        if let Some(k) = group.primitive_phase(chi, n) {
            let w = (p as f64).ln() / n as f64 * (-(n as f64) / y).exp();
            let z = group.root(k);
            re.add(-w * z.re);
            im.add(-w * z.im);
        }
    })?;
    Ok(SmoothedLogDeriv {
        q: group.q,
        chi_index: chi.index,
        y,
        truncation: limit,
        value: Complex64::new(re.value(), im.value()),
        tail_bound: smoothing_budget(group.q, y, smoothing_constant),
    })
}

/// Smoothed L'/L(1, χ*) for every non-principal χ in one pass.
///
/// Prime powers coprime to q are bucketed by residue class, so each character
/// costs one φ(q)-term sum; the few prime powers sharing a factor with q are
/// handled through the primitive lift.
pub fn log_deriv_table(
    group: &CharacterGroup,
    y: f64,
    smoothing_constant: f64,
) -> Result<Vec<SmoothedLogDeriv>> {
    check_smoothing(group.q, y)?;
    let q = group.q;
    let limit = truncation_point(y);
    let mut buckets = vec![Neumaier::default(); q as usize];
    let mut shared: Vec<(u64, f64)> = Vec::new();
    for_each_prime_power(limit, |n, p| {
        let w = (p as f64).ln() / n as f64 * (-(n as f64) / y).exp();
        if q % p == 0 {
            shared.push((n, w));
        } else {
            buckets[(n % q) as usize].add(w);
        }
    })?;
    let classes: Vec<(u64, f64)> = (1..q)
        .filter(|&c| gcd(c, q) == 1)
        .map(|c| (c, buckets[c as usize].value()))
        .collect();
    let budget = smoothing_budget(q, y, smoothing_constant);
    use rayon::prelude::*;
    Ok(group
        .characters()
        .par_iter()
        .filter(|chi| !chi.is_principal())
        .map(|chi| {
            let (mut re, mut im) = (Neumaier::default(), Neumaier::default());
            for &(c, w) in &classes {
                let z = group.root(group.phase(chi, c).expect("unit"));
                re.add(-w * z.re);
                im.add(-w * z.im);
            }
            for &(n, w) in &shared {
                if let Some(k) = group.primitive_phase(chi, n) {
                    let z = group.root(k);
                    re.add(-w * z.re);
                    im.add(-w * z.im);
                }
            }
            SmoothedLogDeriv {
                q,
                chi_index: chi.index,
                y,
                truncation: limit,
                value: Complex64::new(re.value(), im.value()),
                tail_bound: budget,
            }
        })
        .collect())
}

/// How a smoothed principal sum was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SumMethod {
    Direct,
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedSum {
    pub value: f64,
    pub method: SumMethod,
    pub error_bound: f64,
}

/// Direct summation is used while 2y log y stays below this.
pub const DIRECT_SUM_LIMIT: u64 = 400_000_000;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Σ_{n ≥ 1} Λ(n) n⁻¹ e^{−n/y} over all n.
///
/// Large y uses log y − 2γ (the double pole of −ζ'/ζ(1+s)Γ(s)y^s at s = 0);
/// the remaining terms are O(1/y) under RH.
pub fn full_smoothed_sum(y: f64) -> Result<SmoothedSum> {
    if !(y >= 2.0) {
        return Err(RaceError::Precondition(format!("y = {y} must be at least 2")));
    }
    let limit = truncation_point(y);
    if limit <= DIRECT_SUM_LIMIT {
        let mut acc = Neumaier::default();
        for_each_prime_power(limit, |n, p| {
            acc.add((p as f64).ln() / n as f64 * (-(n as f64) / y).exp())
        })?;
        Ok(SmoothedSum {
            value: acc.value(),
            method: SumMethod::Direct,
            error_bound: truncation_tail(y),
        })
    } else {
        Ok(SmoothedSum {
            value: y.ln() - 2.0 * EULER_GAMMA,
            method: SumMethod::Asymptotic,
            error_bound: 4.0 / y.sqrt(),
        })
    }
}

/// Σ_{(n,q)=1} Λ(n) n⁻¹ e^{−n/y}, the principal-character contribution.
pub fn principal_smoothed_sum(q: u64, y: f64) -> Result<SmoothedSum> {
    if q < 3 {
        return domain(format!("modulus must be at least 3, got {q}"));
    }
    if !(y >= q as f64) {
        return Err(RaceError::Precondition(format!(
            "smoothing parameter y = {y} must be at least q = {q}"
        )));
    }
    let full = full_smoothed_sum(y)?;
    let mut shared = Neumaier::default();
    for (p, _) in factorize(q) {
        let lp = (p as f64).ln();
        let mut n = p as f64;
        while n <= 2.0 * y * y.ln() {
            shared.add(lp / n * (-n / y).exp());
            n *= p as f64;
        }
    }
    Ok(SmoothedSum {
        value: full.value - shared.value(),
        ..full
    })
}

/// One persisted smoothed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub q: u64,
    pub chi_index: u64,
    pub y: f64,
    pub truncation: u64,
    pub value: Complex64,
    pub error_budget: f64,
}

impl From<&SmoothedLogDeriv> for CacheRecord {
    fn from(s: &SmoothedLogDeriv) -> Self {
        Self {
            q: s.q,
            chi_index: s.chi_index as u64,
            y: s.y,
            truncation: s.truncation,
            value: s.value,
            error_budget: s.tail_bound,
        }
    }
}

const CACHE_MAGIC: &[u8; 8] = b"LDRVCACH";
pub const CACHE_VERSION: u32 = 1;
const RECORD_BYTES: usize = 8 * 6;

/// Encode records: magic, version (u32), record count (u64), then per record
/// q, χ-index, truncation as u64 and y, Re, Im, budget as f64, all little-endian.
pub fn encode_cache(records: &[CacheRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + records.len() * (RECORD_BYTES + 8));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.q.to_le_bytes());
        out.extend_from_slice(&r.chi_index.to_le_bytes());
        out.extend_from_slice(&r.truncation.to_le_bytes());
        for x in [r.y, r.value.re, r.value.im, r.error_budget] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_cache(bytes: &[u8]) -> Result<Vec<CacheRecord>> {
    let bad = |m: &str| RaceError::Format(format!("smoothed-sum cache: {m}"));
    if bytes.len() < 20 || &bytes[..8] != CACHE_MAGIC {
        return Err(bad("missing header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    let stride = RECORD_BYTES + 8;
    if body.len() != count * stride {
        return Err(bad("truncated body"));
    }
    let u = |c: &[u8], i: usize| u64::from_le_bytes(c[8 * i..8 * i + 8].try_into().unwrap());
    let f = |c: &[u8], i: usize| f64::from_le_bytes(c[8 * i..8 * i + 8].try_into().unwrap());
    Ok(body
        .chunks_exact(stride)
        .map(|c| CacheRecord {
            q: u(c, 0),
            chi_index: u(c, 1),
            truncation: u(c, 2),
            y: f(c, 3),
            value: Complex64::new(f(c, 4), f(c, 5)),
            error_budget: f(c, 6),
        })
        .collect())
}

static CACHE_WRITE: Mutex<()> = Mutex::new(());

/// Merge records into the cache file, replacing entries with the same key.
pub fn store_cache(path: &Path, records: &[CacheRecord]) -> Result<()> {
    let _guard = CACHE_WRITE.lock().unwrap_or_else(|e| e.into_inner());
    let mut merged = if path.exists() { load_cache(path)? } else { Vec::new() };
    let key = |r: &CacheRecord| (r.q, r.chi_index, r.y.to_bits(), r.truncation);
    for r in records {
        match merged.iter_mut().find(|m| key(m) == key(r)) {
            Some(slot) => *slot = *r,
            None => merged.push(*r),
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&encode_cache(&merged))?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_cache(path: &Path) -> Result<Vec<CacheRecord>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_cache(&bytes)
}

/// [`log_deriv_table`] backed by an on-disk cache keyed by (q, χ-index, y, truncation).
pub fn log_deriv_table_cached(
    group: &CharacterGroup,
    y: f64,
    smoothing_constant: f64,
    cache: &Path,
) -> Result<Vec<SmoothedLogDeriv>> {
    let truncation = truncation_point(y);
    if cache.exists() {
        let hits: Vec<CacheRecord> = load_cache(cache)?
            .into_iter()
            .filter(|r| r.q == group.q && r.y == y && r.truncation == truncation)
            .collect();
        if hits.len() + 1 == group.len() {
            let mut out: Vec<SmoothedLogDeriv> = hits
                .iter()
                .map(|r| SmoothedLogDeriv {
                    q: r.q,
                    chi_index: r.chi_index as usize,
                    y: r.y,
                    truncation: r.truncation,
                    value: r.value,
                    tail_bound: smoothing_budget(group.q, y, smoothing_constant),
                })
                .collect();
            out.sort_by_key(|s| s.chi_index);
            return Ok(out);
        }
    }
    let table = log_deriv_table(group, y, smoothing_constant)?;
    let records: Vec<CacheRecord> = table.iter().map(CacheRecord::from).collect();
    store_cache(cache, &records)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::euler_phi;

    #[test]
    fn group_shapes() {
        let g8 = CharacterGroup::new(8).unwrap();
        assert_eq!(g8.len(), 4);
        assert_eq!(g8.structure(), vec![2, 2]);
        let g9 = CharacterGroup::new(9).unwrap();
        assert_eq!(g9.len(), 6);
        assert_eq!(g9.structure(), vec![6]);
        let g3 = CharacterGroup::new(3).unwrap();
        assert_eq!(g3.len(), 2);
        assert!(g3.principal().is_principal());
        assert!(CharacterGroup::new(2).is_err());
        assert_eq!(CharacterGroup::new(420).unwrap().len(), 96);
    }

    #[test]
    fn characters_are_distinct_and_multiplicative() {
        for q in [5u64, 8, 12, 16, 21, 45, 64, 105] {
            let g = CharacterGroup::new(q).unwrap();
            let units: Vec<u64> = (1..q).filter(|&n| gcd(n, q) == 1).collect();
            let mut tables: Vec<Vec<Option<u64>>> = Vec::new();
            for chi in g.characters() {
                for &m in &units {
                    for &n in &units {
                        let lhs = g.phase(chi, m * n % q).unwrap();
                        let rhs = (g.phase(chi, m).unwrap() + g.phase(chi, n).unwrap()) % g.exponent;
                        assert_eq!(lhs, rhs);
                    }
                }
                assert_eq!(g.eval(chi, 0), Complex64::new(0.0, 0.0));
                let table: Vec<Option<u64>> = (0..q).map(|n| g.phase(chi, n)).collect();
                assert!(!tables.contains(&table), "duplicate character mod {q}");
                tables.push(table);
            }
        }
    }

    #[test]
    fn orthogonality_up_to_500() {
        for q in 3..=500u64 {
            let g = CharacterGroup::new(q).unwrap();
            let phi = euler_phi(q) as f64;
            for a in 1..q {
                if gcd(a, q) != 1 {
                    continue;
                }
                let s: Complex64 = g.characters().iter().map(|chi| g.eval(chi, a as i64)).sum();
                if a == 1 {
                    assert_eq!(s.re, phi);
                } else {
                    assert!(s.norm() <= 1e-9 * phi, "q={q} a={a} |Σ|={}", s.norm());
                }
            }
        }
    }

    #[test]
    fn conductor_examples() {
        let g = CharacterGroup::new(9).unwrap();
        let quad = g
            .characters()
            .iter()
            .find(|c| c.exponents == vec![3])
            .unwrap();
        assert_eq!(quad.conductor, 3);
        assert_eq!(g.principal().conductor, 1);
        let g8 = CharacterGroup::new(8).unwrap();
        let chi = g8
            .characters()
            .iter()
            .find(|c| {
                g8.eval(c, 3).re < 0.0 && g8.eval(c, 5).re < 0.0 && g8.eval(c, 7).re > 0.0
            })
            .unwrap();
        assert_eq!(chi.conductor, 8);
        assert_eq!(g8.conductor_by_scan(chi), 8);
    }

    #[test]
    fn conductor_matches_scan_and_is_multiplicative() {
        for q in 3..=500u64 {
            let g = CharacterGroup::new(q).unwrap();
            for chi in g.characters() {
                let scan = g.conductor_by_scan(chi);
                assert_eq!(chi.conductor, scan, "q={q} χ#{}", chi.index);
                assert_eq!(q % scan, 0);
            }
        }
    }

    #[test]
    fn parity_matches_evaluation() {
        for q in 3..=300u64 {
            let g = CharacterGroup::new(q).unwrap();
            for chi in g.characters() {
                let v = g.eval(chi, q as i64 - 1);
                assert!((v.re - chi.parity as f64).abs() < 1e-12 && v.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn induced_characters_are_primitive_and_agree() {
        for q in [8u64, 9, 12, 16, 24, 32, 36, 45, 48, 60, 63, 64, 72, 100, 120, 125, 128] {
            let g = CharacterGroup::new(q).unwrap();
            for chi in g.characters() {
                let prim = g.induce_primitive(chi).unwrap();
                assert_eq!(prim.conductor, chi.conductor);
                assert!(prim.is_primitive(), "q={q} χ#{}", chi.index);
                for n in 1..4 * q {
                    let via_lift = g.eval_primitive(chi, n);
                    let via_group = prim.eval(n);
                    assert!((via_lift - via_group).norm() < 1e-12, "q={q} χ#{} n={n}", chi.index);
                    if gcd(n, q) == 1 {
                        assert!((g.eval(chi, n as i64) - via_group).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn log_conductor_examples() {
        let ln2 = 2f64.ln();
        let g4 = CharacterGroup::new(4).unwrap();
        let s = log_conductor_sum(&g4, 1).unwrap();
        assert!((s.direct - 2.0 * ln2).abs() < 1e-12 && (s.closed_form - 2.0 * ln2).abs() < 1e-12);
        let s = log_conductor_sum(&g4, 3).unwrap();
        assert!((s.direct + 2.0 * ln2).abs() < 1e-12 && (s.closed_form + 2.0 * ln2).abs() < 1e-12);
        let g5 = CharacterGroup::new(5).unwrap();
        let s = log_conductor_sum(&g5, 2).unwrap();
        assert!((s.direct + 5f64.ln()).abs() < 1e-12);
        assert!((s.closed_form + 5f64.ln()).abs() < 1e-12);
        assert!(log_conductor_sum(&g4, 2).is_err());
    }

    #[test]
    fn log_conductor_routes_agree() {
        for q in 3..=300u64 {
            let g = CharacterGroup::new(q).unwrap();
            for a in 1..q {
                if gcd(a, q) != 1 {
                    continue;
                }
                let s = log_conductor_sum(&g, a as i64).unwrap();
                let scale = s.closed_form.abs().max(1.0);
                assert!((s.direct - s.closed_form).abs() <= 1e-9 * scale, "q={q} a={a} {s:?}");
            }
        }
    }

    #[test]
    fn prime_power_collapse() {
        // Σ_χ χ(a/b) χ*(p^e) = φ(q) when p ∤ q and a p^e ≡ b, else 0 (p ∤ q).
        for q in 3..=200u64 {
            let g = CharacterGroup::new(q).unwrap();
            let phi = g.phi as f64;
            for pe in [2u64, 3, 4, 5, 7, 8, 9, 11, 13, 25, 27, 49] {
                let p = factorize(pe)[0].0;
                if q % p == 0 {
                    continue;
                }
                for c in 1..q {
                    if gcd(c, q) != 1 {
                        continue;
                    }
                    let s: Complex64 = g
                        .characters()
                        .iter()
                        .map(|chi| g.eval(chi, c as i64) * g.eval_primitive(chi, pe))
                        .sum();
                    let expected = if c * pe % q == 1 { phi } else { 0.0 };
                    assert!((s.re - expected).abs() < 1e-9 * phi && s.im.abs() < 1e-9 * phi);
                }
            }
        }
    }

    #[test]
    fn cache_round_trip_and_rejects_garbage() {
        let rec = CacheRecord {
            q: 101,
            chi_index: 7,
            y: 1e6,
            truncation: truncation_point(1e6),
            value: Complex64::new(-0.25, 1.5),
            error_budget: 3e-3,
        };
        let bytes = encode_cache(&[rec, rec]);
        assert_eq!(decode_cache(&bytes).unwrap(), vec![rec, rec]);
        assert!(decode_cache(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(decode_cache(&wrong).is_err());
    }
}
