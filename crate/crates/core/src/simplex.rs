//! Gaussian moments over the ordered region x₁ > x₂ > … > x_r.
//!
//! Each coefficient is 1/r! times a moment of the order statistics
//! Y₁ > … > Y_r of r independent standard normals, because every ordering of
//! an i.i.d. sample is equally likely. The deterministic path integrates the
//! order-statistic densities; the Monte Carlo path samples sorted normals.

use crate::error::{domain, RaceError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

pub const MIN_R: usize = 2;
pub const MAX_R: usize = 8;
pub const MIN_MC_SAMPLES: u64 = 10_000;

/// Integration range; the Gaussian mass beyond ±9 is below 1e−18.
const HALF_WIDTH: f64 = 9.0;
const GL_ORDER: usize = 20;
const MAX_PANELS: usize = 1024;
/// Shards of a Monte Carlo run; fixed so results do not depend on thread count.
const MC_SHARDS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientMethod {
    ClosedForm,
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientErrors {
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
}

/// α_j(r), λ_j(r) and β_{j,k}(r), stored 0-based; `beta[j][k]` is meaningful for j < k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexCoefficients {
    pub r: usize,
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub errors: CoefficientErrors,
    pub alpha_method: CoefficientMethod,
    pub beta_method: CoefficientMethod,
}

impl SimplexCoefficients {
    pub fn max_error(&self) -> f64 {
        let e = &self.errors;
        e.alpha
            .iter()
            .chain(&e.lambda)
            .chain(e.beta.iter().flatten())
            .fold(0.0, |m, &x| m.max(x))
    }
}

fn check_r(r: usize) -> Result<()> {
    if !(MIN_R..=MAX_R).contains(&r) {
        return domain(format!("r must lie in [{MIN_R}, {MAX_R}], got {r}"));
    }
    Ok(())
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Gauss–Legendre nodes and weights on [−1, 1].
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn upper(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

struct Grid {
    panels: Vec<(f64, f64)>,
    ref_x: Vec<f64>,
    ref_w: Vec<f64>,
}

impl Grid {
    fn new(panels: usize) -> Self {
        let h = 2.0 * HALF_WIDTH / panels as f64;
        let (ref_x, ref_w) = gauss_legendre(GL_ORDER);
        Self {
            panels: (0..panels)
                .map(|i| (-HALF_WIDTH + i as f64 * h, -HALF_WIDTH + (i + 1) as f64 * h))
                .collect(),
            ref_x,
            ref_w,
        }
    }

    fn map(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (c, h) = ((a + b) / 2.0, (b - a) / 2.0);
        self.ref_x.iter().zip(&self.ref_w).map(move |(&t, &w)| (c + h * t, h * w))
    }

    fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.panels
            .iter()
            .map(|&(a, b)| self.map(a, b).map(|(x, w)| w * f(x)).sum::<f64>())
            .sum()
    }

    /// ∫∫_{u > v} g(u, v) dv du, the inner integral running from −L to u.
    fn integrate_ordered<G: Fn(f64, f64) -> f64 + Sync>(&self, g: G) -> f64 {
        self.panels
            .par_iter()
            .enumerate()
            .map(|(pi, &(a, b))| {
                self.map(a, b)
                    .map(|(u, wu)| {
                        let mut inner: f64 = self.panels[..pi]
                            .iter()
                            .map(|&(c, d)| self.map(c, d).map(|(v, wv)| wv * g(u, v)).sum::<f64>())
                            .sum();
                        inner += self.map(a, u).map(|(v, wv)| wv * g(u, v)).sum::<f64>();
                        wu * inner
                    })
                    .sum::<f64>()
            })
            .sum()
    }
}

/// α_j, λ_j (1-based j) from the density of the j-th largest order statistic.
fn single_moments(grid: &Grid, r: usize, j: usize) -> (f64, f64) {
    let norm = factorial(j - 1) * factorial(r - j);
    let a = grid.integrate(|x| x * pdf(x) * cdf(x).powi((r - j) as i32) * upper(x).powi((j - 1) as i32));
    let l = grid.integrate(|x| {
        (x * x - 1.0) * pdf(x) * cdf(x).powi((r - j) as i32) * upper(x).powi((j - 1) as i32)
    });
    (a / norm, l / norm)
}

/// β_{j,k} (1-based, j < k) from the joint density of the j-th and k-th largest.
fn pair_moment(grid: &Grid, r: usize, j: usize, k: usize) -> f64 {
    let norm = factorial(j - 1) * factorial(k - j - 1) * factorial(r - k);
    let v = grid.integrate_ordered(|u, v| {
        u * v
            * pdf(u)
            * pdf(v)
            * upper(u).powi((j - 1) as i32)
            * (cdf(u) - cdf(v)).powi((k - j - 1) as i32)
            * cdf(v).powi((r - k) as i32)
    });
    v / norm
}

struct RawTable {
    alpha: Vec<f64>,
    lambda: Vec<f64>,
    beta: Vec<Vec<f64>>,
}

fn raw_table(r: usize, panels: usize) -> RawTable {
    let grid = Grid::new(panels);
    let singles: Vec<(f64, f64)> = (1..=r).map(|j| single_moments(&grid, r, j)).collect();
    let mut beta = vec![vec![0.0; r]; r];
    for j in 1..=r {
        for k in j + 1..=r {
            beta[j - 1][k - 1] = pair_moment(&grid, r, j, k);
        }
    }
    RawTable {
        alpha: singles.iter().map(|s| s.0).collect(),
        lambda: singles.iter().map(|s| s.1).collect(),
        beta,
    }
}

/// Closed forms: r = 2 gives α₁ = 1/(2√π), β₁₂ = 0; r = 3 gives
/// α₁ = −α₃ = 1/(4√π), α₂ = 0, β₁₂ = β₂₃ = 1/(4π√3), β₁₃ = −1/(2π√3).
fn closed_forms(r: usize) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let sp = PI.sqrt();
    match r {
        2 => Some((vec![0.5 / sp, -0.5 / sp], vec![vec![0.0, 0.0], vec![0.0, 0.0]])),
        3 => {
            let b = 1.0 / (4.0 * PI * 3f64.sqrt());
            Some((
                vec![0.25 / sp, 0.0, -0.25 / sp],
                vec![vec![0.0, b, -2.0 * b], vec![0.0, 0.0, b], vec![0.0; 3]],
            ))
        }
        _ => None,
    }
}

/// The coefficient table for r, with every numerical entry's error estimate
/// at most `precision`.
pub fn coefficient_table(r: usize, precision: f64) -> Result<SimplexCoefficients> {
    check_r(r)?;
    if !(precision > 0.0) {
        return Err(RaceError::Config(format!("precision target must be positive, got {precision}")));
    }
    let mut panels = 32;
    let mut coarse = raw_table(r, panels);
    loop {
        let fine = raw_table(r, 2 * panels);
        let diff = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| (x - y).abs().max(4.0 * f64::EPSILON * x.abs().max(1e-3))).collect()
        };
        let errors = CoefficientErrors {
            alpha: diff(&coarse.alpha, &fine.alpha),
            lambda: diff(&coarse.lambda, &fine.lambda),
            beta: (0..r)
                .map(|j| {
                    (0..r)
                        .map(|k| if k > j { (coarse.beta[j][k] - fine.beta[j][k]).abs().max(1e-16) } else { 0.0 })
                        .collect()
                })
                .collect(),
        };
        let worst = errors
            .alpha
            .iter()
            .chain(&errors.lambda)
            .chain(errors.beta.iter().flatten())
            .fold(0.0f64, |m, &x| m.max(x));
        if worst <= precision {
            let mut table = SimplexCoefficients {
                r,
                alpha: fine.alpha,
                lambda: fine.lambda,
                beta: fine.beta,
                errors,
                alpha_method: CoefficientMethod::Quadrature,
                beta_method: CoefficientMethod::Quadrature,
            };
            if let Some((alpha, beta)) = closed_forms(r) {
                table.alpha = alpha;
                table.beta = beta;
                table.errors.alpha = vec![f64::EPSILON; r];
                table.errors.beta = (0..r)
                    .map(|j| (0..r).map(|k| if k > j { f64::EPSILON } else { 0.0 }).collect())
                    .collect();
                table.alpha_method = CoefficientMethod::ClosedForm;
                table.beta_method = CoefficientMethod::ClosedForm;
            }
            return Ok(table);
        }
        panels *= 2;
        if panels > MAX_PANELS {
            return Err(RaceError::Config(format!(
                "precision {precision} not reached for r = {r} (best {worst:e})"
            )));
        }
        coarse = fine;
    }
}

/// Precision of the shared tables returned by [`standard_table`].
pub const STANDARD_PRECISION: f64 = 1e-10;

/// The table for r at [`STANDARD_PRECISION`], computed once per process.
pub fn standard_table(r: usize) -> Result<Arc<SimplexCoefficients>> {
    static TABLES: OnceLock<Mutex<HashMap<usize, Arc<SimplexCoefficients>>>> = OnceLock::new();
    check_r(r)?;
    let tables = TABLES.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = tables.lock().unwrap_or_else(|e| e.into_inner()).get(&r) {
        return Ok(t.clone());
    }
    let table = Arc::new(coefficient_table(r, STANDARD_PRECISION)?);
    let mut guard = tables.lock().unwrap_or_else(|e| e.into_inner());
    Ok(guard.entry(r).or_insert(table).clone())
}

/// Tables for several r, keyed by r, as JSON.
pub fn tables_to_json(tables: &[SimplexCoefficients]) -> Result<String> {
    let map: BTreeMap<String, &SimplexCoefficients> = tables.iter().map(|t| (t.r.to_string(), t)).collect();
    serde_json::to_string_pretty(&map).map_err(|e| RaceError::Format(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Moment {
    /// α_j, 1-based.
    Alpha { j: usize },
    Lambda { j: usize },
    /// β_{j,k}, 1-based with j < k.
    Beta { j: usize, k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McTable {
    pub r: usize,
    pub samples: u64,
    pub seed: u64,
    pub alpha: Vec<McEstimate>,
    pub lambda: Vec<McEstimate>,
    /// Upper triangle, 0-based.
    pub beta: Vec<Vec<McEstimate>>,
    /// Σ_j α_j, Σ_j λ_j and Σ_{j<k} β_{j,k}, each estimated from its own per-sample statistic.
    pub alpha_sum: McEstimate,
    pub lambda_sum: McEstimate,
    pub beta_sum: McEstimate,
}

impl McTable {
    pub fn get(&self, m: Moment) -> Result<McEstimate> {
        let r = self.r;
        match m {
            Moment::Alpha { j } if (1..=r).contains(&j) => Ok(self.alpha[j - 1]),
            Moment::Lambda { j } if (1..=r).contains(&j) => Ok(self.lambda[j - 1]),
            Moment::Beta { j, k } if j >= 1 && j < k && k <= r => Ok(self.beta[j - 1][k - 1]),
            _ => domain(format!("{m:?} is not a coefficient for r = {r}")),
        }
    }
}

/// Running mean and squared deviation per statistic.
#[derive(Debug, Clone)]
struct Welford {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    fn merge(mut self, other: &Welford) -> Self {
        if other.n == 0 {
            return self;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.n += other.n;
        self
    }

    fn estimate(&self, i: usize, scale: f64) -> McEstimate {
        let n = self.n as f64;
        let var = self.m2[i] / (n - 1.0);
        McEstimate {
            estimate: self.mean[i] * scale,
            std_error: (var / n).sqrt() * scale,
        }
    }
}

fn shard_sizes(samples: u64) -> Vec<u64> {
    (0..MC_SHARDS)
        .map(|i| samples / MC_SHARDS + u64::from(i < samples % MC_SHARDS))
        .collect()
}

/// All coefficients for r by sampling sorted normals. Deterministic in (r, samples, seed).
pub fn mc_table(r: usize, samples: u64, seed: u64) -> Result<McTable> {
    check_r(r)?;
    if samples < MIN_MC_SAMPLES {
        return Err(RaceError::Precondition(format!(
            "at least {MIN_MC_SAMPLES} samples are required, got {samples}"
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..r).flat_map(|j| (j + 1..r).map(move |k| (j, k))).collect();
    let dim = 2 * r + pairs.len() + 3;
    let shards: Vec<Welford> = shard_sizes(samples)
        .into_par_iter()
        .enumerate()
        .map(|(i, n)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut acc = Welford::new(dim);
            let mut y = vec![0.0; r];
            let mut stat = vec![0.0; dim];
            for _ in 0..n {
                for v in y.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                y.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
                for j in 0..r {
                    stat[j] = y[j];
                    stat[r + j] = y[j] * y[j] - 1.0;
                }
                let mut pair_sum = 0.0;
                for (p, &(j, k)) in pairs.iter().enumerate() {
                    stat[2 * r + p] = y[j] * y[k];
                    pair_sum += y[j] * y[k];
                }
                let base = 2 * r + pairs.len();
                stat[base] = y.iter().sum();
                stat[base + 1] = y.iter().map(|v| v * v - 1.0).sum();
                stat[base + 2] = pair_sum;
                acc.push(&stat);
            }
            acc
        })
        .collect();
    let merged = shards
        .iter()
        .skip(1)
        .fold(shards[0].clone(), |acc, s| acc.merge(s));
    let scale = 1.0 / factorial(r);
    let mut beta = vec![vec![McEstimate { estimate: 0.0, std_error: 0.0 }; r]; r];
    for (p, &(j, k)) in pairs.iter().enumerate() {
        beta[j][k] = merged.estimate(2 * r + p, scale);
    }
    let base = 2 * r + pairs.len();
    Ok(McTable {
        r,
        samples,
        seed,
        alpha: (0..r).map(|j| merged.estimate(j, scale)).collect(),
        lambda: (0..r).map(|j| merged.estimate(r + j, scale)).collect(),
        beta,
        alpha_sum: merged.estimate(base, scale),
        lambda_sum: merged.estimate(base + 1, scale),
        beta_sum: merged.estimate(base + 2, scale),
    })
}

pub fn mc_estimate(r: usize, which: Moment, samples: u64, seed: u64) -> Result<McEstimate> {
    mc_table(r, samples, seed)?.get(which)
}
