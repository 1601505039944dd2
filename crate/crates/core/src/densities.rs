//! Densities of prime number races: the asymptotic series, the two-way
//! formula, a Gaussian surrogate, bias classification and the explicit
//! biased constructions.

use crate::arith::{
    aux_primes, chebyshev_c, cube_root_condition, is_square_mod, lambda0_ratio, pow_mod, reduce,
    AuxPrimes, Residue,
};
use crate::config::Calibration;
use crate::error::{domain, RaceError, Result};
use crate::simplex::SimplexCoefficients;
use crate::spectral::SpectralContext;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// An ordered tuple of distinct units modulo q.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaceTuple {
    pub q: u64,
    pub entries: Vec<Residue>,
    pub squares: Vec<bool>,
    /// C_q(a_j).
    pub c: Vec<i64>,
}

impl RaceTuple {
    pub fn new(q: u64, entries: &[i64]) -> Result<Self> {
        let residues = entries
            .iter()
            .map(|&a| Residue::unit(a, q))
            .collect::<Result<Vec<_>>>()?;
        let r = residues.len();
        if r < 2 {
            return domain(format!("a race needs at least two classes, got {r}"));
        }
        if r as u64 > crate::arith::euler_phi(q) {
            return domain(format!("r = {r} exceeds φ({q})"));
        }
        for i in 0..r {
            for j in i + 1..r {
                if residues[i].value == residues[j].value {
                    return domain(format!(
                        "entries {} and {} coincide modulo {q}",
                        entries[i], entries[j]
                    ));
                }
            }
        }
        Ok(Self {
            q,
            squares: entries.iter().map(|&a| is_square_mod(a, q)).collect::<Result<_>>()?,
            c: entries.iter().map(|&a| chebyshev_c(a, q)).collect::<Result<_>>()?,
            entries: residues,
        })
    }

    pub fn r(&self) -> usize {
        self.entries.len()
    }

    /// Balanced representatives in (−q/2, q/2].
    pub fn signed(&self) -> Vec<i64> {
        self.entries.iter().map(|e| e.signed_rep).collect()
    }

    pub fn values(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    /// The tuple reordered so that position i holds entry `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            q: self.q,
            entries: order.iter().map(|&i| self.entries[i]).collect(),
            squares: order.iter().map(|&i| self.squares[i]).collect(),
            c: order.iter().map(|&i| self.c[i]).collect(),
        }
    }

    pub fn mixes_squares(&self) -> bool {
        self.squares.iter().any(|&s| s) && self.squares.iter().any(|&s| !s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityMethod {
    Theorem1,
    Corollary2,
    Corollary3,
    TwoWay,
    SurrogateMc,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DensityTerms {
    pub baseline: f64,
    pub alpha_term: f64,
    pub beta_term: f64,
    pub c2_term: f64,
}

impl DensityTerms {
    pub fn total(&self) -> f64 {
        self.baseline + self.alpha_term + self.beta_term + self.c2_term
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub q: u64,
    pub tuple: Vec<i64>,
    pub r: usize,
    pub method: DensityMethod,
    pub delta: f64,
    pub terms: DensityTerms,
    pub error_budget: f64,
    pub seed: Option<u64>,
    pub coefficient_errors: f64,
    /// Monte Carlo standard error, when sampled.
    pub std_error: Option<f64>,
    /// Two-way closed form Φ((C₂ − C₁)/√V), reported by r = 2 surrogate runs.
    pub closed_form: Option<f64>,
    /// Set when the error budget reaches 1/r!.
    pub degenerate: bool,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn check_coeffs(coeffs: &SimplexCoefficients, tuple: &RaceTuple, ctx: &SpectralContext) -> Result<()> {
    if coeffs.r != tuple.r() {
        return domain(format!("coefficients are for r = {}, tuple has r = {}", coeffs.r, tuple.r()));
    }
    if ctx.q != tuple.q {
        return domain(format!("context is for q = {}, tuple is modulo {}", ctx.q, tuple.q));
    }
    Ok(())
}

/// B_q(a_j, a_k) for all j < k, as a dense matrix (zero diagonal).
fn b_matrix(ctx: &SpectralContext, tuple: &RaceTuple) -> Result<Vec<Vec<f64>>> {
    let r = tuple.r();
    let v = tuple.values();
    let mut b = vec![vec![0.0; r]; r];
    for j in 0..r {
        for k in j + 1..r {
            let x = ctx.b(v[j] as i64, v[k] as i64)?.value;
            b[j][k] = x;
            b[k][j] = x;
        }
    }
    Ok(b)
}

/// The four-term asymptotic series for δ_{q; a₁, …, a_r}.
pub fn density_theorem1(
    ctx: &SpectralContext,
    coeffs: &SimplexCoefficients,
    tuple: &RaceTuple,
) -> Result<DensityReport> {
    check_coeffs(coeffs, tuple, ctx)?;
    let b = b_matrix(ctx, tuple)?;
    series(ctx, coeffs, tuple, &b, DensityMethod::Theorem1)
}

/// The series without the second-order C terms.
pub fn density_corollary2(
    ctx: &SpectralContext,
    coeffs: &SimplexCoefficients,
    tuple: &RaceTuple,
) -> Result<DensityReport> {
    check_coeffs(coeffs, tuple, ctx)?;
    let b = b_matrix(ctx, tuple)?;
    series(ctx, coeffs, tuple, &b, DensityMethod::Corollary2)
}

/// The series terms for raw inputs N, C_j and the symmetric matrix B_jk,
/// with the coefficient error they inherit. `second_order` keeps the C² term.
pub fn series_terms(
    coeffs: &SimplexCoefficients,
    n: f64,
    c: &[f64],
    b: &[Vec<f64>],
    second_order: bool,
) -> Result<(DensityTerms, f64)> {
    let r = coeffs.r;
    if c.len() != r || b.len() != r || b.iter().any(|row| row.len() != r) {
        return domain(format!("series inputs must have r = {r} entries"));
    }
    if !(n > 0.0) {
        return Err(RaceError::Degenerate(format!("N = {n} is not positive")));
    }
    let e = &coeffs.errors;
    let mut alpha_sum = 0.0;
    let mut alpha_err = 0.0;
    let mut lambda_sum = 0.0;
    let mut lambda_err = 0.0;
    for j in 0..r {
        alpha_sum += coeffs.alpha[j] * c[j];
        alpha_err += e.alpha[j] * c[j].abs();
        lambda_sum += coeffs.lambda[j] * c[j] * c[j];
        lambda_err += e.lambda[j] * c[j] * c[j];
    }
    let mut beta_b = 0.0;
    let mut beta_b_err = 0.0;
    let mut beta_cc = 0.0;
    let mut beta_cc_err = 0.0;
    for j in 0..r {
        for k in j + 1..r {
            beta_b += coeffs.beta[j][k] * b[j][k];
            beta_b_err += e.beta[j][k] * b[j][k].abs();
            beta_cc += coeffs.beta[j][k] * c[j] * c[k];
            beta_cc_err += e.beta[j][k] * (c[j] * c[k]).abs();
        }
    }
    let mut terms = DensityTerms {
        baseline: 1.0 / factorial(r),
        alpha_term: -alpha_sum / n.sqrt(),
        beta_term: beta_b / n,
        c2_term: (lambda_sum + 2.0 * beta_cc) / (2.0 * n),
    };
    let mut coefficient_errors = alpha_err / n.sqrt() + beta_b_err / n;
    if second_order {
        coefficient_errors += (lambda_err + 2.0 * beta_cc_err) / (2.0 * n);
    } else {
        terms.c2_term = 0.0;
    }
    Ok((terms, coefficient_errors))
}

fn series(
    ctx: &SpectralContext,
    coeffs: &SimplexCoefficients,
    tuple: &RaceTuple,
    b: &[Vec<f64>],
    method: DensityMethod,
) -> Result<DensityReport> {
    let r = tuple.r();
    let n = ctx.n_q.value;
    let c: Vec<f64> = tuple.c.iter().map(|&x| x as f64).collect();
    let (terms, coefficient_errors) = series_terms(coeffs, n, &c, b, method == DensityMethod::Theorem1)?;
    let c_max = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let b_max = b.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let error_budget = match method {
        DensityMethod::Theorem1 => {
            ctx.calibration.series_budget_c
                * (1.0 / n + c_max * b_max / n.powf(1.5) + b_max * b_max / (n * n))
        }
        _ => ctx.calibration.series_budget_c * (c_max * c_max / n + b_max * b_max / (n * n)),
    };
    Ok(DensityReport {
        q: tuple.q,
        tuple: tuple.signed(),
        r,
        method,
        delta: terms.total(),
        terms,
        error_budget,
        seed: None,
        coefficient_errors,
        std_error: None,
        closed_form: None,
        degenerate: error_budget >= terms.baseline,
    })
}

/// The r = 3 closed form
/// 1/6 + (C₃ − C₁)/(4√(πN)) + (B₁₂ + B₂₃ − 2B₁₃)/(4π√3 N).
pub fn density_corollary3(ctx: &SpectralContext, tuple: &RaceTuple) -> Result<DensityReport> {
    if tuple.r() != 3 {
        return domain(format!("the three-way closed form needs r = 3, got {}", tuple.r()));
    }
    let b = b_matrix(ctx, tuple)?;
    let n = ctx.n_q.value;
    let c = &tuple.c;
    let terms = DensityTerms {
        baseline: 1.0 / 6.0,
        alpha_term: (c[2] - c[0]) as f64 / (4.0 * (PI * n).sqrt()),
        beta_term: (b[0][1] + b[1][2] - 2.0 * b[0][2]) / (4.0 * PI * 3f64.sqrt() * n),
        c2_term: 0.0,
    };
    let c_max = c.iter().fold(0i64, |m, x| m.max(x.abs())) as f64;
    let b_max = b.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let error_budget = ctx.calibration.series_budget_c * (c_max * c_max / n + b_max * b_max / (n * n));
    Ok(DensityReport {
        q: tuple.q,
        tuple: tuple.signed(),
        r: 3,
        method: DensityMethod::Corollary3,
        delta: terms.total(),
        terms,
        error_budget,
        seed: None,
        coefficient_errors: 0.0,
        std_error: None,
        closed_form: None,
        degenerate: error_budget >= 1.0 / 6.0,
    })
}

/// δ_{q; a₁, a₂} = 1/2 − (C(a₁) − C(a₂))/√(2π V_q(a₁, a₂)).
pub fn density_two_way(ctx: &SpectralContext, a1: i64, a2: i64) -> Result<DensityReport> {
    let tuple = RaceTuple::new(ctx.q, &[a1, a2])?;
    let v = ctx.v(a1, a2)?.value;
    if !(v > 0.0) {
        return Err(RaceError::Degenerate(format!("V_{}({a1}, {a2}) = {v} is not positive", ctx.q)));
    }
    let diff = (tuple.c[0] - tuple.c[1]) as f64;
    let terms = DensityTerms {
        baseline: 0.5,
        alpha_term: -diff / (2.0 * PI * v).sqrt(),
        beta_term: 0.0,
        c2_term: 0.0,
    };
    let c1 = chebyshev_c(1, ctx.q)? as f64;
    let log_q = (ctx.q as f64).ln();
    let error_budget = ctx.calibration.two_way_budget_c * c1 * c1 * log_q * log_q / v;
    Ok(DensityReport {
        q: ctx.q,
        tuple: tuple.signed(),
        r: 2,
        method: DensityMethod::TwoWay,
        delta: terms.total(),
        terms,
        error_budget,
        seed: None,
        coefficient_errors: 0.0,
        std_error: None,
        closed_form: None,
        degenerate: error_budget >= 0.5,
    })
}

/// Lower-triangular L with L Lᵀ = m, or `None` when m is not positive definite.
fn cholesky(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (m[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

const SURROGATE_SHARDS: u64 = 64;

/// P(X₁ > … > X_r) for X Gaussian with mean −C_q(a_j) and covariance
/// N_q on the diagonal and B_q(a_j, a_k) off it.
pub fn surrogate_density_mc(
    ctx: &SpectralContext,
    tuple: &RaceTuple,
    samples: u64,
    seed: u64,
) -> Result<DensityReport> {
    if tuple.q != ctx.q {
        return domain(format!("context is for q = {}, tuple is modulo {}", ctx.q, tuple.q));
    }
    if samples == 0 {
        return Err(RaceError::Precondition("at least one sample is required".into()));
    }
    let r = tuple.r();
    let n = ctx.n_q.value;
    let mut cov = b_matrix(ctx, tuple)?;
    for (j, row) in cov.iter_mut().enumerate() {
        row[j] = n;
    }
    let l = cholesky(&cov).ok_or_else(|| {
        RaceError::Degenerate(format!("covariance for {:?} mod {} is not positive definite", tuple.signed(), ctx.q))
    })?;
    let mean: Vec<f64> = tuple.c.iter().map(|&c| -(c as f64)).collect();
    let hits: u64 = (0..SURROGATE_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let count = samples / SURROGATE_SHARDS + u64::from(shard < samples % SURROGATE_SHARDS);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard);
            let mut z = vec![0.0; r];
            let mut x = vec![0.0; r];
            let mut hits = 0u64;
            for _ in 0..count {
                for v in z.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                for i in 0..r {
                    x[i] = mean[i] + (0..=i).map(|k| l[i][k] * z[k]).sum::<f64>();
                }
                if x.windows(2).all(|w| w[0] > w[1]) {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let p = hits as f64 / samples as f64;
    let sigma = (p * (1.0 - p) / samples as f64).sqrt();
    let closed_form = (r == 2).then(|| {
        let v = 2.0 * n - 2.0 * cov[0][1];
        normal_cdf((tuple.c[1] - tuple.c[0]) as f64 / v.sqrt())
    });
    let baseline = 1.0 / factorial(r);
    Ok(DensityReport {
        q: ctx.q,
        tuple: tuple.signed(),
        r,
        method: DensityMethod::SurrogateMc,
        delta: p,
        terms: DensityTerms {
            baseline,
            ..Default::default()
        },
        error_budget: 3.0 * sigma,
        seed: Some(seed),
        coefficient_errors: 0.0,
        std_error: Some(sigma),
        closed_form,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasClass {
    SymmetricUnbiasedCandidate,
    Biased,
    QExtremePredicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Witness {
    /// Entries j and k with a_j = −a_k.
    OppositePair { j: usize, k: usize },
    /// Entries j and k of the same sign whose ratio is a prime power.
    PrimePowerRatio { j: usize, k: usize, ratio: u64 },
    /// Indices of three entries and a permutation σ of their pair ratios
    /// X₁, X₂, X₃ with Λ₀(X_σ1) + Λ₀(X_σ2) − 2Λ₀(X_σ3) ≠ 0.
    Triple {
        indices: [usize; 3],
        permutation: [usize; 3],
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVerdict {
    pub classification: BiasClass,
    pub witness: Option<Witness>,
    /// τ in the threshold |δ − 1/r!| ≥ τ / log q.
    pub threshold: f64,
    /// max_σ |δ_σ − 1/r!| − τ/log q under the series, when evaluated.
    pub margin: Option<f64>,
}

/// Same-sign ratio weight Λ₀(max/min); zero for pairs of opposite sign.
fn pair_weight(a: i64, b: i64) -> f64 {
    if (a > 0) != (b > 0) {
        return 0.0;
    }
    let (x, y) = (a.unsigned_abs(), b.unsigned_abs());
    lambda0_ratio(x.max(y), x.min(y))
}

fn prime_power_ratio(a: i64, b: i64) -> Option<u64> {
    if (a > 0) != (b > 0) {
        return None;
    }
    let (x, y) = (a.unsigned_abs(), b.unsigned_abs());
    let (hi, lo) = (x.max(y), x.min(y));
    (hi % lo == 0 && crate::arith::prime_power(hi / lo).is_some()).then_some(hi / lo)
}

/// The structural verdict on a tuple, using balanced representatives.
pub fn classify_bias(tuple: &RaceTuple) -> BiasVerdict {
    classify_with(tuple, Calibration::default().tau)
}

fn classify_with(tuple: &RaceTuple, tau: f64) -> BiasVerdict {
    let a = tuple.signed();
    let r = a.len();
    let verdict = |classification, witness| BiasVerdict {
        classification,
        witness,
        threshold: tau,
        margin: None,
    };
    if r == 3 && cube_root_condition(a[0], a[1], a[2], tuple.q).unwrap_or(false) {
        return verdict(BiasClass::SymmetricUnbiasedCandidate, None);
    }
    for j in 0..r {
        for k in j + 1..r {
            if a[j] == -a[k] {
                return verdict(BiasClass::QExtremePredicted, Some(Witness::OppositePair { j, k }));
            }
        }
    }
    for j in 0..r {
        for k in j + 1..r {
            if let Some(ratio) = prime_power_ratio(a[j], a[k]) {
                return verdict(
                    BiasClass::QExtremePredicted,
                    Some(Witness::PrimePowerRatio { j, k, ratio }),
                );
            }
        }
    }
    verdict(BiasClass::Biased, None)
}

/// [`classify_bias`] plus the series margin max_σ |δ_σ − 1/r!| − τ/log q.
pub fn classify_bias_with_margin(
    ctx: &SpectralContext,
    coeffs: &SimplexCoefficients,
    tuple: &RaceTuple,
) -> Result<BiasVerdict> {
    let tau = ctx.calibration.tau;
    let mut verdict = classify_with(tuple, tau);
    let baseline = 1.0 / factorial(tuple.r());
    let worst = permutations(tuple.r())
        .par_iter()
        .map(|order| density_theorem1(ctx, coeffs, &tuple.permuted(order)).map(|d| (d.delta - baseline).abs()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    verdict.margin = Some(worst - tau / (ctx.q as f64).ln());
    Ok(verdict)
}

/// A certificate of extreme bias for distinct nonzero integers: an opposite
/// pair, or three entries and a permutation of their pair ratios making
/// Λ₀(X_σ1) + Λ₀(X_σ2) − 2Λ₀(X_σ3) nonzero. Cross-sign pairs weigh zero.
pub fn extreme_bias_witness(a: &[i64]) -> Result<Option<Witness>> {
    let r = a.len();
    if r < 3 {
        return domain(format!("a witness needs at least three entries, got {r}"));
    }
    if a.contains(&0) {
        return domain("entries must be nonzero");
    }
    for j in 0..r {
        for k in j + 1..r {
            if a[j] == a[k] {
                return domain(format!("entries must be distinct, {} repeats", a[j]));
            }
        }
    }
    for j in 0..r {
        for k in j + 1..r {
            if a[j] == -a[k] {
                return Ok(Some(Witness::OppositePair { j, k }));
            }
        }
    }
    for i1 in 0..r {
        for i2 in i1 + 1..r {
            for i3 in i2 + 1..r {
                let x = [
                    pair_weight(a[i1], a[i2]),
                    pair_weight(a[i2], a[i3]),
                    pair_weight(a[i1], a[i3]),
                ];
                for p in permutations(3) {
                    let value = x[p[0]] + x[p[1]] - 2.0 * x[p[2]];
                    if value != 0.0 {
                        return Ok(Some(Witness::Triple {
                            indices: [i1, i2, i3],
                            permutation: [p[0], p[1], p[2]],
                            value,
                        }));
                    }
                }
            }
        }
    }
    Ok(None)
}

/// All permutations of 0..n in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n).collect();
    let mut out = vec![current.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| current[j] > current[i - 1]).unwrap();
        current.swap(i - 1, j);
        current[i..].reverse();
        out.push(current.clone());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    MixedThm2,
    SquaresThm4,
    NonsquaresThm4,
}

impl std::str::FromStr for Variant {
    type Err = RaceError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed-thm2" => Ok(Variant::MixedThm2),
            "squares-thm4" => Ok(Variant::SquaresThm4),
            "nonsquares-thm4" => Ok(Variant::NonsquaresThm4),
            _ => Err(RaceError::Config(format!("unknown variant {s}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Construction {
    pub tuple: RaceTuple,
    pub variant: Variant,
    pub aux: AuxPrimes,
    /// Predicted sign of δ − 1/r! for `tuple`; the opposite holds after [`Construction::swapped`].
    pub predicted_sign: i8,
    /// How many times the middle exponents were raised by 2r to avoid collisions.
    pub exponent_shifts: u32,
    pub notes: Vec<String>,
}

impl Construction {
    /// Positions 1 and r − 1 exchanged.
    pub fn swapped(&self) -> RaceTuple {
        let r = self.tuple.r();
        let mut order: Vec<usize> = (0..r).collect();
        order.swap(0, r - 2);
        self.tuple.permuted(&order)
    }
}

const MAX_EXPONENT_SHIFTS: u32 = 16;

/// Build entries from a generator taking the exponent shift, retrying on collisions.
fn distinct_tuple<F: Fn(u64) -> Vec<u64>>(q: u64, build: F) -> Result<(RaceTuple, u32)> {
    for shift in 0..=MAX_EXPONENT_SHIFTS {
        let values: Vec<i64> = build(shift as u64).into_iter().map(|v| v as i64).collect();
        let distinct = (0..values.len()).all(|i| (i + 1..values.len()).all(|j| values[i] != values[j]));
        if distinct {
            let signed: Vec<i64> = values.iter().map(|&v| crate::arith::signed_rep(v, q)).collect();
            return Ok((RaceTuple::new(q, &signed)?, shift));
        }
    }
    Err(RaceError::Construction(format!(
        "entries keep colliding modulo {q}; q is too small for this construction"
    )))
}

/// The explicit tuples with δ − 1/r! of order 1/log q (mixed) or 1/log³ q (squares, non-squares).
///
/// mixed-thm2: (1, (p₁p₂)⁴, …, (p₁p₂)^{2(r−1)}, −1);
/// squares-thm4: (1, (p₁p₂)⁴, …, (p₁p₂)^{2(r−1)}, p₁²);
/// nonsquares-thm4: the squares tuple times p₀.
pub fn construct_biased_tuple(q: u64, r: usize, variant: Variant) -> Result<Construction> {
    if r < 3 {
        return domain(format!("constructions need r ≥ 3, got {r}"));
    }
    let aux = aux_primes(q)?;
    let m = aux.p1 * aux.p2 % q;
    let r64 = r as u64;
    let (tuple, shifts) = distinct_tuple(q, |shift| {
        let mut v = vec![1u64];
        for j in 2..r64 {
            v.push(pow_mod(m, 2 * j + 2 * r64 * shift, q));
        }
        v.push(match variant {
            Variant::MixedThm2 => q - 1,
            _ => aux.p1 * aux.p1 % q,
        });
        if variant == Variant::NonsquaresThm4 {
            v.iter_mut().for_each(|x| *x = *x * (aux.p0 % q) % q);
        }
        v
    })?;
    let mut notes = Vec::new();
    if shifts > 0 {
        notes.push(format!("middle exponents raised by {} to keep entries distinct", 2 * r64 * shifts as u64));
    }
    if variant != Variant::MixedThm2 && is_square_mod(-1, q)? {
        notes.push("−1 is a square mod q: the deviation scale improves from 1/log³ q to 1/log q".into());
    }
    Ok(Construction {
        tuple,
        variant,
        aux,
        predicted_sign: 1,
        exponent_shifts: shifts,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub kappa: Vec<f64>,
    pub a: RaceTuple,
    pub b: RaceTuple,
    /// Σ κ_j C_q(a_j) − Σ κ_j C_q(b_j), positive by construction.
    pub kappa_gap: f64,
    pub case: String,
    pub aux: AuxPrimes,
}

/// Two tuples with Σκ_jC(a_j) > Σκ_jC(b_j) but δ(a) < δ(b), showing that no
/// linear functional of the C_q(a_j) ranks densities for r ≥ 3.
pub fn bias_factor_counterexample(q: u64, r: usize, kappa: &[f64]) -> Result<Counterexample> {
    if kappa.len() != r {
        return domain(format!("κ has {} entries, expected r = {r}", kappa.len()));
    }
    if r < 3 {
        return domain(format!("counterexamples need r ≥ 3, got {r}"));
    }
    if kappa.iter().all(|&k| k == 0.0) {
        return Err(RaceError::Precondition("κ must be nonzero".into()));
    }
    let aux = aux_primes(q)?;
    let (p0, p1) = (aux.p0 % q, aux.p1 % q);
    let m = aux.p1 * aux.p2 % q;
    let r64 = r as u64;
    let pw = |e: u64| pow_mod(m, e, q);
    // Each builder returns (a, b) as residues for a given exponent shift.
    type Pair = (Vec<u64>, Vec<u64>);
    let (case, build): (String, Box<dyn Fn(u64) -> Pair>) = if kappa[r - 1] != 0.0 || kappa[0] != 0.0 {
        let use_last = kappa[r - 1] != 0.0;
        let k = if use_last { kappa[r - 1] } else { kappa[0] };
        let mirror = !use_last;
        let positive = k > 0.0;
        let name = format!(
            "κ_{} {} 0",
            if use_last { r } else { 1 },
            if positive { ">" } else { "<" }
        );
        (
            name,
            Box::new(move |s: u64| {
                let mut a = vec![1u64];
                for j in 2..r64 {
                    a.push(p0 * pw(2 * j + 2 * r64 * s) % q);
                }
                let mut b = a.clone();
                if positive {
                    a.push(pw(2));
                    b.push(p0);
                } else {
                    a.push(p0 * pw(2 * r64 + 2 * r64 * s) % q);
                    b.push(p1 * p1 % q);
                }
                if mirror {
                    a.swap(0, r - 1);
                    b.swap(0, r - 1);
                }
                (a, b)
            }),
        )
    } else {
        let l = (1..r - 1).find(|&l| kappa[l] != 0.0).expect("some κ_l ≠ 0");
        let positive = kappa[l] > 0.0;
        let name = format!("κ_{} {} 0", l + 1, if positive { ">" } else { "<" });
        (
            name,
            Box::new(move |s: u64| {
                let shifted = |j: u64| p0 * pw(4 * j + 2 * r64 * s) % q;
                let mut a = vec![0u64; r];
                a[0] = 1;
                if positive {
                    for j in 1..r {
                        a[j] = shifted(j as u64 + 1);
                    }
                    a[l] = pw(2);
                    let mut b = a.clone();
                    b[l] = shifted(l as u64 + 1);
                    b[r - 1] = p0;
                    (a, b)
                } else {
                    for j in 1..r - 1 {
                        a[j] = shifted(j as u64 + 1);
                    }
                    a[r - 1] = pw(4);
                    let mut b = a.clone();
                    b[l] = pw(4);
                    b[r - 1] = p1 * p1 % q;
                    (a, b)
                }
            }),
        )
    };
    for shift in 0..=MAX_EXPONENT_SHIFTS as u64 {
        let (a, b) = build(shift);
        let ok = |v: &[u64]| (0..v.len()).all(|i| (i + 1..v.len()).all(|j| v[i] != v[j]));
        if ok(&a) && ok(&b) {
            let to_tuple = |v: &[u64]| {
                let signed: Vec<i64> = v.iter().map(|&x| crate::arith::signed_rep(x as i64, q)).collect();
                RaceTuple::new(q, &signed)
            };
            let (ta, tb) = (to_tuple(&a)?, to_tuple(&b)?);
            let gap: f64 = kappa
                .iter()
                .zip(ta.c.iter().zip(&tb.c))
                .map(|(&k, (&ca, &cb))| k * (ca - cb) as f64)
                .sum();
            return Ok(Counterexample {
                kappa: kappa.to_vec(),
                a: ta,
                b: tb,
                kappa_gap: gap,
                case,
                aux,
            });
        }
    }
    Err(RaceError::Construction(format!(
        "entries keep colliding modulo {q}; q is too small for this construction"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    /// δ of the sub-tuple in its given order.
    pub sub_delta: f64,
    /// Σ of δ over the orderings of the full tuple that keep the sub-tuple's order.
    pub summed: f64,
    pub orderings: usize,
    pub residual: f64,
    /// Sum of the coefficient errors of every evaluation involved.
    pub budget: f64,
}

/// Check δ(a_{j₁}, a_{j₂}, a_{j₃}) = Σ δ over full orderings keeping that sub-order.
pub fn marginalize_check(
    ctx: &SpectralContext,
    coeffs: &SimplexCoefficients,
    coeffs3: &SimplexCoefficients,
    tuple: &RaceTuple,
    sub: [usize; 3],
) -> Result<MarginalReport> {
    let r = tuple.r();
    if r < 3 {
        return domain(format!("marginalising needs r ≥ 3, got {r}"));
    }
    if sub.iter().any(|&i| i >= r) || sub[0] == sub[1] || sub[1] == sub[2] || sub[0] == sub[2] {
        return domain(format!("sub-indices {sub:?} must be three distinct positions below {r}"));
    }
    let sub_tuple = tuple.permuted(&sub);
    let lhs = density_theorem1(ctx, coeffs3, &sub_tuple)?;
    let orders: Vec<Vec<usize>> = permutations(r)
        .into_iter()
        .filter(|order| {
            let pos = |x: usize| order.iter().position(|&i| i == x).unwrap();
            pos(sub[0]) < pos(sub[1]) && pos(sub[1]) < pos(sub[2])
        })
        .collect();
    let reports = orders
        .par_iter()
        .map(|order| density_theorem1(ctx, coeffs, &tuple.permuted(order)))
        .collect::<Result<Vec<_>>>()?;
    let summed: f64 = reports.iter().map(|d| d.delta).sum();
    let budget = lhs.coefficient_errors + reports.iter().map(|d| d.coefficient_errors).sum::<f64>() + 1e-13;
    Ok(MarginalReport {
        sub_delta: lhs.delta,
        summed,
        orderings: orders.len(),
        residual: (lhs.delta - summed).abs(),
        budget,
    })
}

/// Reduce an integer to its balanced representative mod q.
pub fn balanced(a: i64, q: u64) -> i64 {
    crate::arith::signed_rep(reduce(a, q) as i64, q)
}
