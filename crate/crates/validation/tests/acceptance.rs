//! Acceptance criteria 1–10, one PASS/FAIL line each.
//!
//! Run with `cargo test -p race-validation --test acceptance`; pass criterion
//! numbers (e.g. `-- 3 7`) to run a subset.

use race_core::arith::euler_phi;
use race_core::config::CALIBRATION;
use race_core::densities::{
    bias_factor_counterexample, classify_bias, construct_biased_tuple, density_corollary2, density_corollary3,
    density_theorem1, density_two_way, extreme_bias_witness, permutations, surrogate_density_mc, BiasClass,
    RaceTuple, Variant, Witness,
};
use race_core::race::{empirical_log_density, geometric_schedule, race_counts, all_orderings};
use race_core::sieve::prime_pi;
use race_core::simplex::{coefficient_table, mc_table, standard_table};
use race_core::spectral::SpectralContext;
use std::collections::HashMap;
use std::f64::consts::{LN_2, PI};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---- independent oracles ----

fn oracle_primes(n: usize) -> Vec<bool> {
    let mut is = vec![true; n + 1];
    is[0] = false;
    if n >= 1 {
        is[1] = false;
    }
    let mut i = 2;
    while i * i <= n {
        if is[i] {
            (i * i..=n).step_by(i).for_each(|j| is[j] = false);
        }
        i += 1;
    }
    is
}

fn oracle_gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { oracle_gcd(b, a % b) }
}

fn oracle_phi(q: u64) -> u64 {
    (1..=q).filter(|&a| oracle_gcd(a, q) == 1).count() as u64
}

/// #{x mod q : x² ≡ a} − 1 by enumeration.
fn oracle_c(a: i64, q: u64) -> i64 {
    let a = a.rem_euclid(q as i64) as u64;
    (0..q).filter(|&x| x * x % q == a).count() as i64 - 1
}

/// Λ(n)/n by trial division.
fn oracle_lambda0(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let mut p = 2;
    while p * p <= n && n % p != 0 {
        p += 1;
    }
    if n % p != 0 {
        p = n;
    }
    let mut m = n;
    while m % p == 0 {
        m /= p;
    }
    if m == 1 { (p as f64).ln() / n as f64 } else { 0.0 }
}

fn oracle_pair_weight(a: i64, b: i64) -> f64 {
    if (a > 0) != (b > 0) {
        return 0.0;
    }
    let (x, y) = (a.unsigned_abs(), b.unsigned_abs());
    let (hi, lo) = (x.max(y), x.min(y));
    if hi % lo == 0 { oracle_lambda0(hi / lo) } else { 0.0 }
}

/// Whether some pair is opposite or some triple admits a permutation σ of
/// its three pair ratios with Λ₀(X_σ1) + Λ₀(X_σ2) − 2Λ₀(X_σ3) ≠ 0.
fn oracle_has_witness(a: &[i64]) -> bool {
    let r = a.len();
    for i in 0..r {
        for j in i + 1..r {
            if a[i] == -a[j] {
                return true;
            }
        }
    }
    for i in 0..r {
        for j in i + 1..r {
            for k in j + 1..r {
                let x = [oracle_pair_weight(a[i], a[j]), oracle_pair_weight(a[j], a[k]), oracle_pair_weight(a[i], a[k])];
                for s in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
                    if x[s[0]] + x[s[1]] - 2.0 * x[s[2]] != 0.0 {
                        return true;
                    }
                }
            }
        }
    }
    false
}

// ---- shared contexts ----

fn character_ctx(q: u64) -> Arc<SpectralContext> {
    static CTX: OnceLock<Mutex<HashMap<u64, Arc<SpectralContext>>>> = OnceLock::new();
    let map = CTX.get_or_init(Default::default);
    if let Some(c) = map.lock().unwrap().get(&q) {
        return c.clone();
    }
    let c = Arc::new(SpectralContext::character(q).unwrap());
    map.lock().unwrap().insert(q, c.clone());
    c
}

fn residue_ctx(q: u64) -> Arc<SpectralContext> {
    static CTX: OnceLock<Mutex<HashMap<u64, Arc<SpectralContext>>>> = OnceLock::new();
    let map = CTX.get_or_init(Default::default);
    if let Some(c) = map.lock().unwrap().get(&q) {
        return c.clone();
    }
    let c = Arc::new(SpectralContext::residue(q).unwrap());
    map.lock().unwrap().insert(q, c.clone());
    c
}

fn within(start: Instant, limit: Duration) -> (bool, String) {
    let t = start.elapsed();
    (t <= limit, format!("{:.1} s of {} s", t.as_secs_f64(), limit.as_secs()))
}

// ---- criteria ----

fn simplex_closed_forms() -> Outcome {
    let start = Instant::now();
    let t3 = coefficient_table(3, 1e-10).unwrap();
    let t2 = coefficient_table(2, 1e-10).unwrap();
    let a = 1.0 / (4.0 * PI.sqrt());
    let b = 1.0 / (4.0 * PI * 3f64.sqrt());
    let expected = [
        (t3.alpha[0], a, "α₁(3)"),
        (t3.alpha[1], 0.0, "α₂(3)"),
        (t3.alpha[2], -a, "α₃(3)"),
        (t3.beta[0][1], b, "β₁₂(3)"),
        (t3.beta[1][2], b, "β₂₃(3)"),
        (t3.beta[0][2], -2.0 * b, "β₁₃(3)"),
        (t2.beta[0][1], 0.0, "β₁₂(2)"),
    ];
    let printed = [0.1410474, 0.0, -0.1410474, 0.0459441, 0.0459441, -0.0918881, 0.0];
    let mut worst = 0.0f64;
    let mut ok = true;
    for ((got, exact, name), shown) in expected.iter().zip(printed) {
        worst = worst.max((got - exact).abs());
        ok &= (got - exact).abs() <= 1e-8 && (got - shown).abs() <= 1e-7;
        if (got - exact).abs() > 1e-8 {
            eprintln!("    {name}: {got} vs {exact}");
        }
    }
    let mc = mc_table(3, 10_000_000, 2024).unwrap();
    let mut zmax = 0.0f64;
    for j in 0..3 {
        zmax = zmax.max((mc.alpha[j].estimate - t3.alpha[j]).abs() / mc.alpha[j].std_error.max(1e-300));
        for k in j + 1..3 {
            let e = mc.beta[j][k];
            zmax = zmax.max((e.estimate - t3.beta[j][k]).abs() / e.std_error.max(1e-300));
        }
    }
    let (fast, time) = within(start, Duration::from_secs(30));
    outcome(
        ok && zmax <= 3.0 && fast,
        format!("closed forms max |Δ| = {worst:.1e}; MC 10⁷ samples max |z| = {zmax:.2}; {time}"),
    )
}

fn simplex_identities() -> Outcome {
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut min_margin = f64::INFINITY;
    for r in 2..=6 {
        let t = coefficient_table(r, 1e-10).unwrap();
        let tol = t.max_error() * (r * r) as f64 + 1e-13;
        let bsum: f64 = (0..r).flat_map(|j| (j + 1..r).map(move |k| (j, k))).map(|(j, k)| t.beta[j][k]).sum();
        let mut devs = vec![t.alpha.iter().sum::<f64>(), t.lambda.iter().sum::<f64>(), bsum];
        for j in 0..r {
            devs.push(t.alpha[j] + t.alpha[r - 1 - j]);
            devs.push(t.lambda[j] - t.lambda[r - 1 - j]);
            for k in j + 1..r {
                devs.push(t.beta[j][k] - t.beta[r - 1 - k][r - 1 - j]);
            }
        }
        let d = devs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        worst = worst.max(d);
        ok &= d <= tol;
        if r >= 3 {
            // Sign facts judged against Monte Carlo noise at 10⁶ samples.
            let mc = mc_table(r, 1_000_000, 7 + r as u64).unwrap();
            let first = mc.beta[0][r - 1];
            let last = mc.beta[r - 2][r - 1];
            let margin = (-first.estimate / first.std_error).min(last.estimate / last.std_error);
            min_margin = min_margin.min(margin);
            ok &= t.beta[0][r - 1] < 0.0 && t.beta[r - 2][r - 1] > 0.0 && margin > 5.0;
        }
    }
    outcome(
        ok,
        format!("r = 2..6: zero sums and reversal symmetries max |dev| = {worst:.1e}; β₁,ᵣ < 0 < βᵣ₋₁,ᵣ with min margin {min_margin:.0}σ"),
    )
}

fn two_route_agreement() -> Outcome {
    let start = Instant::now();
    let c0 = CALIBRATION.cross_route_c0;
    let mut ok = c0 <= 25.0;
    let mut worst_ratio = 0.0f64;
    let mut pairs = 0usize;
    for q in [12u64, 101, 420] {
        let ctx = character_ctx(q);
        let units = ctx.units();
        for &a in &units {
            for &b in &units {
                if a == b {
                    continue;
                }
                let ch = ctx.b_char(a as i64, b as i64).unwrap();
                let re = ctx.b_residue(a as i64, b as i64).unwrap();
                let allowed = c0 * (q as f64).ln().ln() + ch.error_budget;
                let diff = (ch.value - re.value).abs();
                worst_ratio = worst_ratio.max(diff / allowed);
                ok &= diff <= allowed;
                pairs += 1;
            }
        }
    }
    let (fast, time) = within(start, Duration::from_secs(300));
    outcome(
        ok && fast,
        format!("{pairs} pairs over q ∈ {{12, 101, 420}}: max |char − residue| / (C₀ log log q + budget) = {worst_ratio:.3}, C₀ = {c0}; {time}"),
    )
}

fn pair_average() -> Outcome {
    let mut literal = true;
    let mut notes = Vec::new();
    for q in [12u64, 101] {
        let ctx = character_ctx(q);
        let avg = ctx.pair_average().unwrap();
        let phi = ctx.phi as f64;
        let stated = -2.0 * ctx.n_q.value / (phi - 1.0);
        let halved = -ctx.n_q.value / (phi - 1.0);
        let rel = (avg.mean - stated).abs() / stated.abs();
        literal &= rel <= 1e-6;
        notes.push(format!(
            "q={q}: mean B / (−2N/(φ−1)) = {:.6}, vs −N/(φ−1) rel {:.1e}",
            avg.mean / stated,
            (avg.mean - halved).abs() / halved.abs()
        ));
    }
    let mut desk = true;
    for q in [101u64, 211, 420] {
        let ratio = residue_ctx(q).pair_average().unwrap().mean_abs_over_log_q;
        desk &= (0.5..=12.0).contains(&ratio);
        notes.push(format!("q={q}: mean|B|/log q = {ratio:.2}"));
    }
    outcome(
        literal && desk,
        format!("exact identity {}; log q scale check {}; {}", pf(literal), pf(desk), notes.join("; ")),
    )
}

fn pf(b: bool) -> &'static str {
    if b { "pass" } else { "FAIL" }
}

fn structured_b_values() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for q in [10_007u64, 20_011] {
        let ctx = residue_ctx(q);
        let phi = oracle_phi(q) as f64;
        assert_eq!(phi as u64, euler_phi(q));
        let bound = CALIBRATION.structure_c * (q as f64).ln().powi(2);
        let e1 = ctx.b(1, q as i64 - 1).unwrap().value + phi * LN_2;
        let e2 = ctx.b(1, 3).unwrap().value + phi * 3f64.ln() / 3.0;
        let b23 = ctx.b(2, 3).unwrap().value;
        ok &= e1.abs() <= bound && e2.abs() <= bound && b23.abs() <= bound;
        let l2 = (q as f64).ln().powi(2);
        notes.push(format!(
            "q={q}: |E(1,−1)| = {:.2}, |E(1,3)| = {:.2}, |B(2,3)| = {:.2} (log² q units)",
            e1.abs() / l2,
            e2.abs() / l2,
            b23.abs() / l2
        ));
    }
    outcome(ok, format!("bound 30 log² q; {}", notes.join("; ")))
}

fn evaluator() -> Outcome {
    let ctx = residue_ctx(101);
    let c3 = standard_table(3).unwrap();
    let mut ok = true;
    let mut sum_dev = 0.0f64;
    let mut cor_dev = 0.0f64;
    for t in [[2i64, 5, 11], [1, 24, 100], [3, 7, 50], [1, 2, 4]] {
        let tuple = RaceTuple::new(101, &t).unwrap();
        for (j, &a) in t.iter().enumerate() {
            ok &= tuple.c[j] == oracle_c(a, 101);
        }
        let sum: f64 = permutations(3)
            .iter()
            .map(|o| density_theorem1(&ctx, &c3, &tuple.permuted(o)).unwrap().delta)
            .sum();
        sum_dev = sum_dev.max((sum - 1.0).abs());
        let series = density_corollary2(&ctx, &c3, &tuple).unwrap().delta;
        let closed = density_corollary3(&ctx, &tuple).unwrap().delta;
        cor_dev = cor_dev.max((series - closed).abs());
    }
    let c2 = standard_table(2).unwrap();
    let alpha_dev = (c2.alpha[0] - 1.0 / (2.0 * PI.sqrt())).abs();
    let n = ctx.n_q.value;
    let mut two_way_dev = 0.0f64;
    for (a, b) in [(2i64, 1i64), (1, 2), (3, 5), (2, 100)] {
        let tuple = RaceTuple::new(101, &[a, b]).unwrap();
        let series = density_theorem1(&ctx, &c2, &tuple).unwrap().terms.alpha_term;
        let reduced = -((oracle_c(a, 101) - oracle_c(b, 101)) as f64) / (2.0 * PI * 2.0 * n).sqrt();
        two_way_dev = two_way_dev.max((series - reduced).abs());
        let v = ctx.v(a, b).unwrap().value;
        let tw = density_two_way(&ctx, a, b).unwrap();
        let direct = 0.5 - (oracle_c(a, 101) - oracle_c(b, 101)) as f64 / (2.0 * PI * v).sqrt();
        ok &= (tw.delta - direct).abs() < 1e-14;
    }
    ok &= sum_dev <= 1e-10 && cor_dev <= 1e-12 && alpha_dev <= 1e-9 && two_way_dev <= 1e-9;
    outcome(
        ok,
        format!(
            "permutation sum |Σ − 1| = {sum_dev:.1e}; r = 3 closed form |Δ| = {cor_dev:.1e}; |α₁(2) − 1/(2√π)| = {alpha_dev:.1e}; r = 2 linear term vs V → 2N |Δ| = {two_way_dev:.1e}"
        ),
    )
}

fn surrogate_vs_series() -> Outcome {
    let start = Instant::now();
    let battery: [(u64, &[i64]); 20] = [
        (101, &[2, 5, 11]),
        (101, &[1, 24, 100]),
        (101, &[100, 24, 1]),
        (101, &[3, 7, 50]),
        (101, &[1, 2, 3, 4]),
        (101, &[6, 1, 13, 99]),
        (101, &[1, 5, 19]),
        (420, &[1, 11, 13]),
        (420, &[13, 11, 1]),
        (420, &[1, 17, 19, 23]),
        (420, &[1, 169, 121]),
        (420, &[29, 31, 37]),
        (420, &[1, 419, 211]),
        (10_007, &[1, -1, 3]),
        (10_007, &[2, 5, 11]),
        (10_007, &[1, 4, 9]),
        (10_007, &[5, 1, 6, 10]),
        (10_007, &[1, 2, 5]),
        (10_007, &[1, 6, 10]),
        (10_007, &[3, 7, 2, 1]),
    ];
    let mut ok = true;
    let mut worst = 0.0f64;
    for (i, (q, t)) in battery.iter().enumerate() {
        let ctx = residue_ctx(*q);
        let tuple = RaceTuple::new(*q, t).unwrap();
        let coeffs = standard_table(tuple.r()).unwrap();
        let series = density_theorem1(&ctx, &coeffs, &tuple).unwrap();
        let mc = surrogate_density_mc(&ctx, &tuple, 10_000_000, 100 + i as u64).unwrap();
        let allowed = 3.0 * mc.std_error.unwrap() + series.error_budget;
        let diff = (mc.delta - series.delta).abs();
        worst = worst.max(diff / allowed);
        if diff > allowed {
            ok = false;
            eprintln!("    q={q} {t:?}: MC {} series {} allowed {allowed:.2e}", mc.delta, series.delta);
        }
    }
    let (fast, time) = within(start, Duration::from_secs(600));
    outcome(ok && fast, format!("20 tuples, 10⁷ samples each: max |MC − series| / (3σ + budget) = {worst:.3}; {time}"))
}

fn constructions() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let beta13 = standard_table(3).unwrap().beta[0][2].abs();
    for q in [101u64, 1009, 10_007] {
        let ctx = residue_ctx(q);
        let coeffs = standard_table(3).unwrap();
        let c = construct_biased_tuple(q, 3, Variant::MixedThm2).unwrap();
        let dev = density_theorem1(&ctx, &coeffs, &c.tuple).unwrap().delta - 1.0 / 6.0;
        let swapped = density_theorem1(&ctx, &coeffs, &c.swapped()).unwrap().delta - 1.0 / 6.0;
        let scale = beta13 * LN_2 / (q as f64).ln();
        let ratio = dev / scale;
        ok &= dev > 0.0 && (0.1..=10.0).contains(&ratio) && swapped < 0.0;
        notes.push(format!("q={q}: {:?} δ−1/6 = {dev:.4} ({ratio:.2}× scale), swapped {swapped:.4}", c.tuple.signed()));
    }
    let ctx = residue_ctx(10_007);
    let coeffs = standard_table(3).unwrap();
    for kappa in [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]] {
        let ce = bias_factor_counterexample(10_007, 3, &kappa).unwrap();
        let gap: f64 = (0..3)
            .map(|j| kappa[j] * (oracle_c(ce.a.signed()[j], 10_007) - oracle_c(ce.b.signed()[j], 10_007)) as f64)
            .sum();
        let da = density_theorem1(&ctx, &coeffs, &ce.a).unwrap().delta;
        let db = density_theorem1(&ctx, &coeffs, &ce.b).unwrap().delta;
        ok &= gap > 0.0 && da < db;
        notes.push(format!("κ={kappa:?}: gap {gap}, δ(a) − δ(b) = {:.2e}", da - db));
    }
    outcome(ok, notes.join("; "))
}

fn classification() -> Outcome {
    let q = 10_007;
    let verdict = |t: &[i64]| classify_bias(&RaceTuple::new(q, t).unwrap()).classification;
    let mut ok = verdict(&[1, -1, 3]) == BiasClass::QExtremePredicted
        && verdict(&[1, 2, 5]) == BiasClass::QExtremePredicted
        && verdict(&[1, 6, 10]) == BiasClass::Biased;
    ok &= matches!(extreme_bias_witness(&[1, -1, 3]).unwrap(), Some(Witness::OppositePair { .. }));
    ok &= extreme_bias_witness(&[1, 6, 10]).unwrap().is_none();
    let values: Vec<i64> = (-15..=15).filter(|&x| x != 0).collect();
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    let n = values.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let t = [values[i], values[j], values[k]];
                checked += 1;
                if extreme_bias_witness(&t).unwrap().is_some() != oracle_has_witness(&t) {
                    mismatches += 1;
                }
                for l in k + 1..n {
                    let t4 = [values[i], values[j], values[k], values[l]];
                    checked += 1;
                    if extreme_bias_witness(&t4).unwrap().is_some() != oracle_has_witness(&t4) {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    ok &= mismatches == 0;
    outcome(
        ok,
        format!("verdicts on (1,−1,3), (1,2,5), (1,6,10) as stated; witness search vs exhaustive oracle: {mismatches} mismatches in {checked} tuples"),
    )
}

fn empirical_races() -> Outcome {
    let start = Instant::now();
    let oracle = oracle_primes(1_000_000).iter().filter(|&&p| p).count() as u64;
    let pi = prime_pi(1_000_000).unwrap();
    let mut ok = pi == 78_498 && oracle == 78_498;
    let mut notes = vec![format!("π(10⁶) = {pi}")];
    let x = 10_000_000;
    for (q, classes) in [(4u64, [3i64, 1]), (3, [2, 1])] {
        let t0 = Instant::now();
        let trace = race_counts(q, &classes, x, &geometric_schedule(x, 4)).unwrap();
        let d = empirical_log_density(&trace, &[0, 1]).unwrap();
        let all = all_orderings(&trace).unwrap();
        let total: f64 = all.iter().map(|e| e.strict_measure).sum::<f64>() + d.tie_measure;
        let fast = t0.elapsed() <= Duration::from_secs(120);
        ok &= d.strict_measure >= 0.95 && (total - 1.0).abs() <= 1e-12 && fast;
        notes.push(format!(
            "({q};{},{}) strict {:.4} ties {:.4} lead changes {} [{}]",
            classes[0],
            classes[1],
            d.strict_measure,
            d.tie_measure,
            d.lead_changes,
            pf(d.strict_measure >= 0.95)
        ));
    }
    let (_, time) = within(start, Duration::from_secs(240));
    outcome(ok, format!("{}; {time}", notes.join("; ")))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "simplex closed forms", simplex_closed_forms),
        (2, "simplex identities and signs", simplex_identities),
        (3, "two-route B agreement", two_route_agreement),
        (4, "pair-average identity and log q scale check", pair_average),
        (5, "structured B values", structured_b_values),
        (6, "series evaluator", evaluator),
        (7, "surrogate vs series", surrogate_vs_series),
        (8, "biased constructions and counterexamples", constructions),
        (9, "bias classification and witnesses", classification),
        (10, "empirical races", empirical_races),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<_> = criteria
        .iter()
        .filter(|(n, name, _)| filters.is_empty() || filters.iter().any(|f| f == &n.to_string() || name.contains(f.as_str())))
        .collect();
    println!("running {} acceptance criteria", selected.len());
    let mut failed = Vec::new();
    for (n, name, run) in selected {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {n:>2} {} {name} ({:.1} s): {}",
            if result.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            result.detail
        );
        if !result.pass {
            failed.push(*n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
