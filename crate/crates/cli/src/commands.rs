use crate::output::{envelope, render};
use crate::{Cli, Command, Method, Route};
use anyhow::{Context, Result};
use clap::ValueEnum;
use race_core::config::Calibration;
use race_core::densities::{
    bias_factor_counterexample, classify_bias, classify_bias_with_margin, construct_biased_tuple,
    density_corollary2, density_corollary3, density_theorem1, density_two_way, extreme_bias_witness,
    permutations, surrogate_density_mc, DensityReport, RaceTuple, Variant,
};
use race_core::error::RaceError;
use race_core::race::{all_orderings, geometric_schedule, race_counts, race_counts_resumable};
use race_core::simplex::{coefficient_table, mc_table, standard_table};
use race_core::spectral::{BRoute, SpectralContext, SpectralOptions};
use serde_json::{json, Value};

fn context(cli: &Cli, q: u64, calibration: &Calibration) -> Result<SpectralContext> {
    let g = &cli.global;
    let cache = match &g.cache_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating cache directory {}", dir.display()))?;
            Some(dir.join(format!("logderiv-q{q}.bin")))
        }
        None => None,
    };
    let options = SpectralOptions {
        y: g.y,
        route: match g.route {
            Route::Residue => BRoute::Residue,
            Route::Character => BRoute::Character,
        },
        calibration: *calibration,
        cache,
    };
    Ok(SpectralContext::new(q, options)?)
}

fn spectral_params(ctx: &SpectralContext) -> Value {
    json!({ "q": ctx.q, "phi": ctx.phi, "y": ctx.y, "route": ctx.route, "n_q": ctx.n_q })
}

fn density_csv(reports: &[DensityReport]) -> String {
    let mut s = String::from("tuple,method,delta,baseline,alpha_term,beta_term,c2_term,error_budget,std_error\n");
    for d in reports {
        let tuple: Vec<String> = d.tuple.iter().map(i64::to_string).collect();
        let method = serde_json::to_value(d.method).unwrap();
        s += &format!(
            "{},{},{},{},{},{},{},{},{}\n",
            tuple.join(" "),
            method.as_str().unwrap_or_default(),
            d.delta,
            d.terms.baseline,
            d.terms.alpha_term,
            d.terms.beta_term,
            d.terms.c2_term,
            d.error_budget,
            d.std_error.map(|x| x.to_string()).unwrap_or_default()
        );
    }
    s
}

pub fn run(cli: &Cli) -> Result<String> {
    let cal = cli.global.calibration.resolve()?;
    let format = cli.global.format;
    let (name, params, result, csv): (&str, Value, Value, Option<String>) = match &cli.command {
        Command::Density { q, tuple, method, all_orders, samples, seed } => {
            let base = RaceTuple::new(*q, tuple)?;
            let ctx = context(cli, *q, &cal)?;
            let orders = if *all_orders { permutations(base.r()) } else { vec![(0..base.r()).collect()] };
            let mut reports = Vec::with_capacity(orders.len());
            for order in &orders {
                let t = base.permuted(order);
                reports.push(match method {
                    Method::Theorem1 => density_theorem1(&ctx, &*standard_table(t.r())?, &t)?,
                    Method::Corollary2 => density_corollary2(&ctx, &*standard_table(t.r())?, &t)?,
                    Method::Corollary3 => density_corollary3(&ctx, &t)?,
                    Method::TwoWay => {
                        if t.r() != 2 {
                            return Err(RaceError::Domain(format!("two-way needs two classes, got {}", t.r())).into());
                        }
                        let s = t.signed();
                        density_two_way(&ctx, s[0], s[1])?
                    }
                    Method::Surrogate => surrogate_density_mc(&ctx, &t, *samples, *seed)?,
                });
            }
            let sum: f64 = reports.iter().map(|d| d.delta).sum();
            let mut params = spectral_params(&ctx);
            params["tuple"] = json!(base.signed());
            params["method"] = json!(method.to_possible_value().map(|v| v.get_name().to_string()));
            if *method == Method::Surrogate {
                params["samples"] = json!(samples);
                params["seed"] = json!(seed);
            }
            let csv = density_csv(&reports);
            let result = if *all_orders {
                json!({ "reports": reports, "sum": sum })
            } else {
                json!(reports[0])
            };
            ("density", params, result, Some(csv))
        }
        Command::Bq { q, a, b, scan_all } => {
            let ctx = context(cli, *q, &cal)?;
            let params = spectral_params(&ctx);
            if *scan_all {
                let mut buf = Vec::new();
                ctx.write_b_csv(&mut buf)?;
                let rows: Vec<Value> = ctx
                    .b_matrix()?
                    .into_iter()
                    .map(|(a, b, v)| json!({ "a": a, "b": b, "value": v.value, "error_budget": v.error_budget }))
                    .collect();
                ("bq", params, json!({ "pairs": rows }), Some(String::from_utf8(buf)?))
            } else {
                let (a, b) = (a.context("--a is required")?, b.context("--b is required")?);
                let v = ctx.b(a, b)?;
                let csv = format!("a,b,B,route,error_budget\n{a},{b},{},{},{}\n", v.value, v.route, v.error_budget);
                ("bq", params, json!({ "a": a, "b": b, "b_q": v }), Some(csv))
            }
        }
        Command::Nq { q } => {
            let ctx = context(cli, *q, &cal)?;
            ("nq", json!({ "q": q }), json!({ "phi": ctx.phi, "n_q": ctx.n_q, "gamma0": ctx.gamma0 }), None)
        }
        Command::Simplex { r, precision, samples, seed } => {
            let table = coefficient_table(*r, *precision)?;
            let mut csv = String::from("coefficient,j,k,value,error\n");
            for j in 0..*r {
                csv += &format!("alpha,{},,{},{}\n", j + 1, table.alpha[j], table.errors.alpha[j]);
            }
            for j in 0..*r {
                csv += &format!("lambda,{},,{},{}\n", j + 1, table.lambda[j], table.errors.lambda[j]);
            }
            for j in 0..*r {
                for k in j + 1..*r {
                    csv += &format!("beta,{},{},{},{}\n", j + 1, k + 1, table.beta[j][k], table.errors.beta[j][k]);
                }
            }
            let mc = samples.map(|n| mc_table(*r, n, *seed)).transpose()?;
            let params = json!({ "r": r, "precision": precision, "samples": samples, "seed": seed });
            ("simplex", params, json!({ "table": table, "monte_carlo": mc }), Some(csv))
        }
        Command::Construct { q, r, variant, no_evaluate } => {
            let variant: Variant = variant.parse()?;
            let c = construct_biased_tuple(*q, *r, variant)?;
            let mut result = json!({ "construction": c, "swapped": c.swapped().signed() });
            if !no_evaluate {
                let ctx = context(cli, *q, &cal)?;
                let coeffs = standard_table(*r)?;
                let d = density_theorem1(&ctx, &coeffs, &c.tuple)?;
                let s = density_theorem1(&ctx, &coeffs, &c.swapped())?;
                result["deviation"] = json!(d.delta - d.terms.baseline);
                result["swapped_deviation"] = json!(s.delta - s.terms.baseline);
                result["density"] = json!(d);
                result["swapped_density"] = json!(s);
            }
            ("construct", json!({ "q": q, "r": r, "variant": variant }), result, None)
        }
        Command::Counterexample { q, kappa } => {
            let ce = bias_factor_counterexample(*q, kappa.len(), kappa)?;
            let ctx = context(cli, *q, &cal)?;
            let coeffs = standard_table(kappa.len())?;
            let da = density_theorem1(&ctx, &coeffs, &ce.a)?;
            let db = density_theorem1(&ctx, &coeffs, &ce.b)?;
            let result = json!({
                "counterexample": ce,
                "density_a": da.delta,
                "density_b": db.delta,
                "reversed": da.delta < db.delta,
            });
            ("counterexample", json!({ "q": q, "kappa": kappa }), result, None)
        }
        Command::Classify { q, tuple, margin } => {
            let t = RaceTuple::new(*q, tuple)?;
            let verdict = if *margin {
                let ctx = context(cli, *q, &cal)?;
                classify_bias_with_margin(&ctx, &*standard_table(t.r())?, &t)?
            } else {
                let mut v = classify_bias(&t);
                v.threshold = cal.tau;
                v
            };
            let signed = t.signed();
            let witness = if signed.len() >= 3 { extreme_bias_witness(&signed)? } else { None };
            let result = json!({ "verdict": verdict, "witness": witness, "squares": t.squares, "c": t.c });
            ("classify", json!({ "q": q, "tuple": signed }), result, None)
        }
        Command::Race { q, classes, x, per_decade, trace, csv } => {
            let schedule = geometric_schedule(*x, *per_decade);
            let t = match trace {
                Some(path) => race_counts_resumable(*q, classes, *x, &schedule, path)?,
                None => race_counts(*q, classes, *x, &schedule)?,
            };
            let mut buf = Vec::new();
            t.write_csv(&mut buf)?;
            let trace_csv = String::from_utf8(buf)?;
            if let Some(path) = csv {
                std::fs::write(path, &trace_csv).with_context(|| format!("writing {}", path.display()))?;
            }
            let measures = all_orderings(&t)?;
            let checkpoints: Vec<Value> =
                t.checkpoints().map(|row| json!({ "x": row.x, "pi": row.pi, "counts": row.counts })).collect();
            let result = json!({
                "x_max": t.x_max,
                "rows": t.len(),
                "tie_measure": measures[0].tie_measure,
                "orderings": measures
                    .iter()
                    .map(|d| json!({ "classes": d.classes, "strict_measure": d.strict_measure, "lead_changes": d.lead_changes }))
                    .collect::<Vec<_>>(),
                "checkpoints": checkpoints,
                "note": "finite-X measures; any tolerance applied to them is an engineering choice",
            });
            let params = json!({ "q": q, "classes": t.classes, "x": x, "per_decade": per_decade });
            ("race", params, result, Some(trace_csv))
        }
        Command::AvgBq { q } => {
            let ctx = context(cli, *q, &cal)?;
            let avg = ctx.pair_average()?;
            ("avg-bq", spectral_params(&ctx), json!(avg), None)
        }
    };
    let report = envelope(name, &cal, params, result);
    Ok(render(format, &report, csv)?)
}
