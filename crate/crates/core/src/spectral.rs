//! The variance-scale quantities N_q, B_q(a, b) and V_q(a₁, a₂).
//!
//! B_q has two independent evaluations. The character route sums the
//! zero-sum formula per character using smoothed values of L'/L(1, χ*);
//! it is slow and used for validation. The residue route is the closed
//! expression in terms of Λ at a handful of residues and costs
//! O(polylog q) per pair.

use crate::arith::{chebyshev_c, euler_phi, factorize, gcd, inv_mod, is_prime, pow_mod, reduce};
use crate::characters::{
    log_conductor_closed_form, log_deriv_table, log_deriv_table_cached, smoothing_budget,
    truncation_point, CharacterGroup, Neumaier, DIRECT_SUM_LIMIT, EULER_GAMMA,
};
use crate::config::{default_smoothing, Calibration};
use crate::error::{domain, RaceError, Result};
use crate::sieve::{segmented_sieve, DEFAULT_SEGMENT_SIZE};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::LN_2;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

/// Γ'(1)/Γ(1) − log 2.
pub const GAMMA0: f64 = -EULER_GAMMA - LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BRoute {
    Character,
    Residue,
}

impl std::fmt::Display for BRoute {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BRoute::Character => "character",
            BRoute::Residue => "residue",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BValue {
    pub value: f64,
    pub route: BRoute,
    pub error_budget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NqValue {
    pub value: f64,
    pub route: BRoute,
    pub y: f64,
    pub error_budget: f64,
}

fn check_modulus(q: u64, y: f64) -> Result<()> {
    if q < 3 {
        return domain(format!("modulus must be at least 3, got {q}"));
    }
    if !(y >= q as f64) {
        return Err(RaceError::Precondition(format!(
            "smoothing parameter y = {y} must be at least q = {q}"
        )));
    }
    Ok(())
}

fn iroot(n: u64, k: u32) -> u64 {
    let mut r = (n as f64).powf(1.0 / k as f64).round() as u64;
    while r > 0 && (r as u128).pow(k) > n as u128 {
        r -= 1;
    }
    while ((r + 1) as u128).pow(k) <= n as u128 {
        r += 1;
    }
    r
}

/// Λ(n) for large n without trial division: primality test plus perfect-power roots.
fn mangoldt_large(n: u64) -> f64 {
    if is_prime(n) {
        return (n as f64).ln();
    }
    for k in 2..=63u32 {
        let r = iroot(n, k);
        if r < 2 {
            break;
        }
        if (r as u128).pow(k) == n as u128 && is_prime(r) {
            return (r as f64).ln();
        }
    }
    0.0
}

/// N_q with the character sum collapsed by orthogonality:
///
/// N_q = Σ_{χ≠χ₀} log q*_χ + log 2 + γ₀(φ − 1) + 2P(y)
///       − 2φ Σ_{n≡1 (q)} Λ(n)n⁻¹e^{−n/y} − 2 Σ_{p^ν‖q} φ(q/p^ν) Σ_{p^e≡1 (q/p^ν)} log p · p^{−e} e^{−p^e/y},
///
/// where P(y) = Σ_n Λ(n)n⁻¹e^{−n/y}.
pub fn n_q(q: u64, y: f64, calibration: &Calibration) -> Result<NqValue> {
    check_modulus(q, y)?;
    let phi = euler_phi(q);
    let limit = truncation_point(y);
    let parts: Vec<(u64, u64, u64)> = factorize(q)
        .into_iter()
        .map(|(p, v)| (p, q / p.pow(v), euler_phi(q / p.pow(v))))
        .collect();
    let weight = |n: u64, p: u64| (p as f64).ln() / n as f64 * (-(n as f64) / y).exp();
    let mut full = Neumaier::default();
    let mut ones = Neumaier::default();
    let mut shared = Neumaier::default();
    let mut full_bound = crate::characters::truncation_tail(y);
    if limit <= DIRECT_SUM_LIMIT {
        segmented_sieve(limit, DEFAULT_SEGMENT_SIZE, |p| {
            let mut n = p;
            loop {
                let w = weight(n, p);
                full.add(w);
                if q % p != 0 {
                    if n % q == 1 {
                        ones.add(w);
                    }
                } else {
                    let &(_, m, phi_m) = parts.iter().find(|t| t.0 == p).expect("p | q");
                    if m == 1 || n % m == 1 {
                        shared.add(phi_m as f64 * w);
                    }
                }
                match n.checked_mul(p) {
                    Some(next) if next <= limit => n = next,
                    _ => break,
                }
            }
        })?;
    } else {
        let asymptotic = crate::characters::full_smoothed_sum(y)?;
        full.add(asymptotic.value);
        full_bound = asymptotic.error_bound;
        let mut n = 1 + q;
        while n <= limit {
            let l = mangoldt_large(n);
            if l > 0.0 {
                ones.add(l / n as f64 * (-(n as f64) / y).exp());
            }
            n += q;
        }
        for &(p, m, phi_m) in &parts {
            let mut pe = p;
            while pe <= limit {
                if m == 1 || pe % m == 1 {
                    shared.add(phi_m as f64 * weight(pe, p));
                }
                match pe.checked_mul(p) {
                    Some(next) => pe = next,
                    None => break,
                }
            }
        }
    }
    let phi_f = phi as f64;
    let value = log_conductor_closed_form(q, 1)
        + LN_2
        + GAMMA0 * (phi_f - 1.0)
        + 2.0 * full.value()
        - 2.0 * phi_f * ones.value()
        - 2.0 * shared.value();
    let error_budget = 2.0 * (phi_f - 1.0) * smoothing_budget(q, y, calibration.smoothing_constant)
        + 2.0 * full_bound;
    Ok(NqValue {
        value,
        route: BRoute::Residue,
        y,
        error_budget,
    })
}

/// Per-character data for the validation route: the bracket
/// log q* + 2 Re L'/L(1, χ*) − χ(−1) log 2 + γ₀ for every χ ≠ χ₀.
#[derive(Debug, Clone)]
pub struct CharacterSpectrum {
    pub group: CharacterGroup,
    pub y: f64,
    /// Indexed by character index; zero at the principal character.
    pub brackets: Vec<f64>,
    /// Error of each bracket.
    pub bracket_budget: f64,
}

impl CharacterSpectrum {
    pub fn new(q: u64, y: f64, calibration: &Calibration, cache: Option<&std::path::Path>) -> Result<Self> {
        check_modulus(q, y)?;
        let group = CharacterGroup::new(q)?;
        let table = match cache {
            Some(path) => log_deriv_table_cached(&group, y, calibration.smoothing_constant, path)?,
            None => log_deriv_table(&group, y, calibration.smoothing_constant)?,
        };
        let mut brackets = vec![0.0; group.len()];
        for s in &table {
            let chi = group.character(s.chi_index);
            brackets[s.chi_index] = (chi.conductor as f64).ln() + 2.0 * s.value.re
                - chi.parity as f64 * LN_2
                + GAMMA0;
        }
        let bracket_budget = 2.0 * smoothing_budget(q, y, calibration.smoothing_constant);
        Ok(Self {
            group,
            y,
            brackets,
            bracket_budget,
        })
    }

    pub fn n_q(&self) -> NqValue {
        let mut acc = Neumaier::default();
        self.brackets.iter().for_each(|&b| acc.add(b));
        NqValue {
            value: acc.value(),
            route: BRoute::Character,
            y: self.y,
            error_budget: (self.group.phi as f64 - 1.0) * self.bracket_budget,
        }
    }

    /// B_q(a, b) = ½ Σ_{χ≠χ₀} (χ(a/b) + χ(b/a)) · bracket_χ.
    pub fn b(&self, a: i64, b: i64) -> Result<BValue> {
        let q = self.group.q;
        let (ra, rb) = check_pair(a, b, q)?;
        let c = ra * inv_mod(rb, q).expect("unit") % q;
        let c_inv = inv_mod(c, q).expect("unit");
        let mut sum = Complex64::new(0.0, 0.0);
        let mut weight = 0.0;
        for chi in self.group.characters().iter().skip(1) {
            let z = self.group.eval(chi, c as i64) + self.group.eval(chi, c_inv as i64);
            sum += z * (0.5 * self.brackets[chi.index]);
            weight += 0.5 * z.re.abs();
        }
        let phi = self.group.phi as f64;
        if sum.im.abs() > 1e-9 * phi {
            return Err(RaceError::Degenerate(format!(
                "imaginary residual {} in B_{q}({a}, {b})",
                sum.im
            )));
        }
        Ok(BValue {
            value: sum.re,
            route: BRoute::Character,
            error_budget: weight * self.bracket_budget,
        })
    }
}

fn check_pair(a: i64, b: i64, q: u64) -> Result<(u64, u64)> {
    if q < 3 {
        return domain(format!("modulus must be at least 3, got {q}"));
    }
    let (ra, rb) = (reduce(a, q), reduce(b, q));
    for (x, r) in [(a, ra), (b, rb)] {
        if gcd(r, q) != 1 {
            return domain(format!("{x} is not a unit modulo {q}"));
        }
    }
    if ra == rb {
        return domain(format!("{a} ≡ {b} (mod {q}): the pair must be distinct"));
    }
    Ok((ra, rb))
}

/// The closed residue expression for B_q(a, b):
///
/// 4 log q − φ(q)[ l log 2 + Λ(m)/φ(m) + Λ(s₁)/s₁ + Λ(s₂)/s₂ + Σ_{p^ν‖q} corrections ],
///
/// with m = q/(q, a − b), s₁ and s₂ the least positive residues of b/a and
/// a/b, l = 1 iff a + b ≡ 0, and the corrections summing
/// log p / (p^{e+ν−1}(p − 1)) over 1 ≤ e ≤ 2 log x with a p^e ≡ b (mod q/p^ν)
/// and symmetrically, x = (q log q)².
pub fn b_q_residue_route(q: u64, a: i64, b: i64, calibration: &Calibration) -> Result<BValue> {
    let (ra, rb) = check_pair(a, b, q)?;
    let qf = q as f64;
    let phi = euler_phi(q) as f64;
    let l = if (ra + rb) % q == 0 { 1.0 } else { 0.0 };
    let m = q / gcd(q, (ra + q - rb) % q);
    let conductor_term = crate::arith::von_mangoldt(m)? / euler_phi(m) as f64;
    let s1 = rb * inv_mod(ra, q).expect("unit") % q;
    let s2 = ra * inv_mod(rb, q).expect("unit") % q;
    let lam0 = |s: u64| crate::arith::lambda0(s);
    let x = (qf * qf.ln()).powi(2);
    let e_max = (2.0 * x.ln()).floor() as u64;
    let mut corrections = 0.0;
    for (p, nu) in factorize(q) {
        let modulus = q / p.pow(nu);
        let lp = (p as f64).ln();
        for e in 1..=e_max {
            let term = lp / ((p as f64).powi((e + nu as u64 - 1) as i32) * (p - 1) as f64);
            if term == 0.0 {
                break;
            }
            let pe = pow_mod(p, e, modulus.max(1));
            if modulus == 1 || ra * pe % modulus == rb % modulus {
                corrections += term;
            }
            if modulus == 1 || rb * pe % modulus == ra % modulus {
                corrections += term;
            }
        }
    }
    let value = 4.0 * qf.ln()
        - phi * (l * LN_2 + conductor_term + lam0(s1) + lam0(s2) + corrections);
    Ok(BValue {
        value,
        route: BRoute::Residue,
        error_budget: calibration.cross_route_c0 * qf.ln().ln().max(0.0),
    })
}

#[derive(Debug, Clone)]
pub struct SpectralOptions {
    pub y: Option<f64>,
    pub route: BRoute,
    pub calibration: Calibration,
    pub cache: Option<PathBuf>,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            y: None,
            route: BRoute::Residue,
            calibration: Calibration::default(),
            cache: None,
        }
    }
}

type BSlot = Arc<OnceLock<Result<BValue>>>;

/// Everything the density formulas need for one modulus. Immutable once
/// built; B values are computed lazily, once per unordered pair.
#[derive(Debug)]
pub struct SpectralContext {
    pub q: u64,
    pub phi: u64,
    pub n_q: NqValue,
    pub y: f64,
    /// Truncation parameter (q log q)² of the residue route.
    pub x: f64,
    pub gamma0: f64,
    pub route: BRoute,
    pub calibration: Calibration,
    spectrum: Option<CharacterSpectrum>,
    memo: Mutex<HashMap<(u64, u64), BSlot>>,
}

impl SpectralContext {
    pub fn new(q: u64, options: SpectralOptions) -> Result<Self> {
        options.calibration.validate()?;
        let y = options.y.unwrap_or_else(|| default_smoothing(q));
        check_modulus(q, y)?;
        let (spectrum, n_q) = match options.route {
            BRoute::Character => {
                let s = CharacterSpectrum::new(q, y, &options.calibration, options.cache.as_deref())?;
                let n = s.n_q();
                (Some(s), n)
            }
            BRoute::Residue => (None, n_q(q, y, &options.calibration)?),
        };
        if !(n_q.value > 0.0) {
            return Err(RaceError::Degenerate(format!("N_{q} = {} is not positive", n_q.value)));
        }
        let qf = q as f64;
        Ok(Self {
            q,
            phi: euler_phi(q),
            n_q,
            y,
            x: (qf * qf.ln()).powi(2),
            gamma0: GAMMA0,
            route: options.route,
            calibration: options.calibration,
            spectrum,
            memo: Mutex::new(HashMap::new()),
        })
    }

    pub fn residue(q: u64) -> Result<Self> {
        Self::new(q, SpectralOptions::default())
    }

    pub fn character(q: u64) -> Result<Self> {
        Self::new(
            q,
            SpectralOptions {
                route: BRoute::Character,
                ..SpectralOptions::default()
            },
        )
    }

    pub fn spectrum(&self) -> Option<&CharacterSpectrum> {
        self.spectrum.as_ref()
    }

    pub fn c(&self, a: i64) -> Result<i64> {
        chebyshev_c(a, self.q)
    }

    /// B_q(a, b) through the context's route, memoised per unordered pair.
    pub fn b(&self, a: i64, b: i64) -> Result<BValue> {
        let (ra, rb) = check_pair(a, b, self.q)?;
        let key = (ra.min(rb), ra.max(rb));
        let slot = {
            let mut memo = self.memo.lock().unwrap_or_else(|e| e.into_inner());
            memo.entry(key).or_default().clone()
        };
        slot.get_or_init(|| self.compute_b(key.0 as i64, key.1 as i64)).clone()
    }

    fn compute_b(&self, a: i64, b: i64) -> Result<BValue> {
        match (&self.spectrum, self.route) {
            (Some(s), BRoute::Character) => s.b(a, b),
            _ => b_q_residue_route(self.q, a, b, &self.calibration),
        }
    }

    pub fn b_char(&self, a: i64, b: i64) -> Result<BValue> {
        match &self.spectrum {
            Some(s) => s.b(a, b),
            None => Err(RaceError::Precondition(
                "character route needs a context built with the character route".into(),
            )),
        }
    }

    pub fn b_residue(&self, a: i64, b: i64) -> Result<BValue> {
        b_q_residue_route(self.q, a, b, &self.calibration)
    }

    /// V_q(a₁, a₂) = 2N_q − 2B_q(a₁, a₂).
    pub fn v(&self, a1: i64, a2: i64) -> Result<BValue> {
        let b = self.b(a1, a2)?;
        Ok(BValue {
            value: 2.0 * self.n_q.value - 2.0 * b.value,
            route: b.route,
            error_budget: 2.0 * self.n_q.error_budget + 2.0 * b.error_budget,
        })
    }

    pub fn units(&self) -> Vec<u64> {
        (1..self.q).filter(|&a| gcd(a, self.q) == 1).collect()
    }

    /// All ordered pairs of distinct units with their B values.
    pub fn b_matrix(&self) -> Result<Vec<(u64, u64, BValue)>> {
        let units = self.units();
        let rows: Vec<Vec<(u64, u64, BValue)>> = units
            .par_iter()
            .map(|&a| {
                units
                    .iter()
                    .filter(|&&b| b != a)
                    .map(|&b| self.b(a as i64, b as i64).map(|v| (a, b, v)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(rows.into_iter().flatten().collect())
    }

    pub fn pair_average(&self) -> Result<PairAverage> {
        let matrix = self.b_matrix()?;
        let (mut sum, mut abs) = (Neumaier::default(), Neumaier::default());
        for (_, _, v) in &matrix {
            sum.add(v.value);
            abs.add(v.value.abs());
        }
        let n = matrix.len() as f64;
        let log_q = (self.q as f64).ln();
        Ok(PairAverage {
            q: self.q,
            pairs: matrix.len(),
            mean: sum.value() / n,
            mean_abs: abs.value() / n,
            mean_abs_over_log_q: abs.value() / n / log_q,
            route: self.route,
        })
    }

    pub fn write_b_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "a,b,B,route,error_budget")?;
        for (a, b, v) in self.b_matrix()? {
            writeln!(out, "{a},{b},{},{},{}", v.value, v.route, v.error_budget)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairAverage {
    pub q: u64,
    pub pairs: usize,
    pub mean: f64,
    pub mean_abs: f64,
    pub mean_abs_over_log_q: f64,
    pub route: BRoute,
}
