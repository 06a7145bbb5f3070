//! Command implementations. Each writes machine-readable outputs (full
//! precision) plus a manifest, and prints a rounded summary to stdout.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use serde_json::json;

use twoset_core::dataio::{
    build_geyser, load_csv, partition_diabetes, partition_generic, standardize, Ingested,
    StandardizedData,
};
use twoset_core::gibbs::{gibbs_run, pe_posterior};
use twoset_core::linmodel::{Direction, ErrorBreakdown, ModelPair};
use twoset_core::montecarlo::{
    design_model_pair, designs_as_standardized, empirical_pe, SimConfig, SimDesigns,
};
use twoset_core::linmodel::{pe_grcm, VarianceEstimates};
use twoset_core::search::{
    compare_approaches, compat_table, mlsel, similarity_search, CompareOptions, Objective,
    SearchOptions,
};

use crate::emit::{full, short, write_json, write_text};
use crate::manifest::RunManifest;
use crate::{DataArgs, Kind, UsageError};

/// Load, construct, and standardize the two-set data for a command.
pub fn load_standardized(args: &DataArgs) -> anyhow::Result<(StandardizedData, Vec<String>)> {
    let path = args
        .data
        .to_str()
        .ok_or_else(|| UsageError("non-unicode data path".into()))?;
    let table = load_csv(path, !args.no_header)?;
    let Ingested { data, warnings } = match args.kind {
        Kind::Geyser => build_geyser(&table)?,
        Kind::Diabetes => partition_diabetes(&table)?,
        Kind::Generic => {
            let label = args
                .label_column
                .as_deref()
                .ok_or_else(|| UsageError("--label-column is required for --kind generic".into()))?;
            partition_generic(&table, label, args.response_column.as_deref())?
        }
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let std = standardize(&data)?;
    Ok((std, warnings))
}

/// Resolve comma-separated predictor names against the dataset's columns.
fn resolve_names(data: &StandardizedData, list: &str) -> anyhow::Result<Vec<usize>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let idx = data
            .data
            .names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| UsageError(format!("unknown predictor {name:?}")))?;
        out.push(idx);
    }
    Ok(out)
}

fn breakdown_json(b: &ErrorBreakdown) -> serde_json::Value {
    json!({
        "direction": b.direction.to_string(),
        "term1": b.term1,
        "term2": b.term2,
        "term3": b.term3,
        "total": b.total,
    })
}

fn start_manifest(
    command: &str,
    config: serde_json::Value,
    seed: u64,
    data: Option<&Path>,
) -> anyhow::Result<RunManifest> {
    let mut manifest = RunManifest::new(command, config, seed);
    if let Some(path) = data {
        manifest
            .add_input(path)
            .with_context(|| format!("fingerprinting {}", path.display()))?;
    }
    Ok(manifest)
}

pub fn cmd_compat(
    data_args: &DataArgs,
    predictors: Option<&str>,
    out_dir: &Path,
    seed: u64,
) -> anyhow::Result<()> {
    let (data, _) = load_standardized(data_args)?;
    let sets: Vec<Vec<usize>> = match predictors {
        // semicolon-separated predictor sets, comma-separated members
        Some(spec) => spec
            .split(';')
            .map(|s| resolve_names(&data, s))
            .collect::<anyhow::Result<_>>()?,
        // default: every subset of the candidate predictors, smallest first
        None => {
            let p = data.n_predictors();
            if p > 4 {
                return Err(UsageError(format!(
                    "{p} predictors give {} subsets; pass --predictors to choose sets",
                    1u64 << p
                ))
                .into());
            }
            let mut sets: Vec<Vec<usize>> =
                (0u32..(1 << p)).map(|m| (0..p).filter(|i| m >> i & 1 == 1).collect()).collect();
            sets.sort_by_key(|s: &Vec<usize>| (s.len(), s.clone()));
            sets
        }
    };
    let rows = compat_table(&data, &sets)?;

    let mut csv = String::from("predictors,direction,term1,term2,term3,total\n");
    let mut json_rows = Vec::new();
    println!("predictors            direction   term1     term2     term3     total");
    for row in &rows {
        let label = row.names.join("+");
        let _ = writeln!(
            csv,
            "{label},{},{},{},{},{}",
            row.direction,
            full(row.breakdown.term1),
            full(row.breakdown.term2),
            full(row.breakdown.term3),
            full(row.breakdown.total),
        );
        let mut j = breakdown_json(&row.breakdown);
        j["predictors"] = json!(row.names);
        json_rows.push(j);
        println!(
            "{:<20}  {:>9}   {}  {}  {}  {}",
            if label.is_empty() { "(intercept)" } else { &label },
            row.direction.to_string(),
            short(row.breakdown.term1),
            short(row.breakdown.term2),
            short(row.breakdown.term3),
            short(row.breakdown.total)
        );
    }

    let mut manifest = start_manifest(
        "compat",
        json!({"kind": format!("{:?}", data_args.kind), "predictors": predictors}),
        seed,
        Some(&data_args.data),
    )?;
    let p1 = write_text(out_dir, "compat_table.csv", &csv)?;
    let p2 = write_json(out_dir, "compat_table.json", &json!({ "rows": json_rows }))?;
    manifest.record_output(&p1);
    manifest.record_output(&p2);
    manifest.write(out_dir, "compat_table")?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_search(
    data_args: &DataArgs,
    min_common: usize,
    max_common: Option<usize>,
    objective: Objective,
    top: Option<usize>,
    seed: u64,
    out_dir: &Path,
) -> anyhow::Result<()> {
    let (data, _) = load_standardized(data_args)?;
    let options = SearchOptions {
        min_common,
        max_common,
        objective,
    };
    let results = similarity_search(&data, &options)?;
    let shown = top.unwrap_or(results.len()).min(results.len());

    let mut csv = String::from(
        "rank,common,objective_value,pe_total,\
         fwd_term1,fwd_term2,fwd_term3,fwd_total,\
         bwd_term1,bwd_term2,bwd_term3,bwd_total\n",
    );
    let mut jsonl = String::new();
    for r in results.iter().take(shown) {
        let label = r.names.join("+");
        let _ = writeln!(
            csv,
            "{},{label},{},{},{},{},{},{},{},{},{},{}",
            r.rank,
            full(r.objective_value),
            full(r.pe_total),
            full(r.pe_forward.term1),
            full(r.pe_forward.term2),
            full(r.pe_forward.term3),
            full(r.pe_forward.total),
            full(r.pe_backward.term1),
            full(r.pe_backward.term2),
            full(r.pe_backward.term3),
            full(r.pe_backward.total),
        );
        let line = json!({
            "rank": r.rank,
            "common": r.names,
            "objective_value": r.objective_value,
            "pe_total": r.pe_total,
            "forward": breakdown_json(&r.pe_forward),
            "backward": breakdown_json(&r.pe_backward),
        });
        jsonl.push_str(&serde_json::to_string(&line)?);
        jsonl.push('\n');
    }

    println!("evaluated {} common sets; top {}:", results.len(), shown.min(10));
    for r in results.iter().take(10.min(shown)) {
        println!(
            "  #{:<4} {:<28} total {}  (fwd {}, bwd {})",
            r.rank,
            if r.names.is_empty() { "(intercept)".to_string() } else { r.names.join("+") },
            short(r.pe_total),
            short(r.pe_forward.total),
            short(r.pe_backward.total)
        );
    }

    let mut manifest = start_manifest(
        "search",
        json!({
            "kind": format!("{:?}", data_args.kind),
            "min_common": min_common,
            "max_common": max_common,
            "objective": objective,
            "top": top,
            "evaluated": results.len(),
        }),
        seed,
        Some(&data_args.data),
    )?;
    let p1 = write_text(out_dir, "search_results.csv", &csv)?;
    let p2 = write_text(out_dir, "search_results.jsonl", &jsonl)?;
    manifest.record_output(&p1);
    manifest.record_output(&p2);
    manifest.write(out_dir, "search_results")?;
    Ok(())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = q * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    let w = idx - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

fn summary_json(values: &[f64]) -> serde_json::Value {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    json!({
        "min": sorted[0],
        "q1": quantile(&sorted, 0.25),
        "median": quantile(&sorted, 0.5),
        "mean": mean,
        "sd": sd,
        "q3": quantile(&sorted, 0.75),
        "max": sorted[sorted.len() - 1],
    })
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_compare(
    data_args: &DataArgs,
    min_common: usize,
    iters: usize,
    burnin: usize,
    seed: u64,
    subset: Option<usize>,
    out_dir: &Path,
) -> anyhow::Result<()> {
    let (data, _) = load_standardized(data_args)?;
    let options = CompareOptions {
        min_common,
        iters,
        burnin,
        seed,
        subset,
    };
    let records = compare_approaches(&data, &options)?;

    let mut csv = String::from(
        "index,common,specific0,specific1,pe_approx,pe_mcmc_mean,pe_mcmc_sd,\
         standardized_abs_deviance,d_sigma_eta_sq,d_sigma0_sq,d_sigma1_sq\n",
    );
    let names = |cols: &[usize]| -> String {
        cols.iter()
            .map(|&c| data.data.names[c].clone())
            .collect::<Vec<_>>()
            .join("+")
    };
    let mut json_records = Vec::new();
    for r in &records {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.model.index,
            names(&r.model.common),
            names(&r.model.specific0),
            names(&r.model.specific1),
            full(r.pe_approx),
            full(r.pe_mcmc_mean),
            full(r.pe_mcmc_sd),
            full(r.standardized_abs_deviance),
            full(r.d_sigma_eta_sq),
            full(r.d_sigma0_sq),
            full(r.d_sigma1_sq),
        );
        json_records.push(json!({
            "index": r.model.index,
            "common": r.model.common,
            "specific0": r.model.specific0,
            "specific1": r.model.specific1,
            "pe_approx": r.pe_approx,
            "pe_mcmc_mean": r.pe_mcmc_mean,
            "pe_mcmc_sd": r.pe_mcmc_sd,
            "standardized_abs_deviance": r.standardized_abs_deviance,
            "d_sigma_eta_sq": r.d_sigma_eta_sq,
            "d_sigma0_sq": r.d_sigma0_sq,
            "d_sigma1_sq": r.d_sigma1_sq,
        }));
    }

    let deta: Vec<f64> = records.iter().map(|r| r.d_sigma_eta_sq).collect();
    let d0: Vec<f64> = records.iter().map(|r| r.d_sigma0_sq).collect();
    let d1: Vec<f64> = records.iter().map(|r| r.d_sigma1_sq).collect();
    let report = json!({
        "models": records.len(),
        "records": json_records,
        "summary": {
            "d_sigma_eta_sq": summary_json(&deta),
            "d_sigma0_sq": summary_json(&d0),
            "d_sigma1_sq": summary_json(&d1),
        },
    });

    println!("{} models compared", records.len());
    println!(
        "sigma_eta_sq difference (mcmc - closed form): median {}, q3 {}",
        short(report["summary"]["d_sigma_eta_sq"]["median"].as_f64().unwrap_or(f64::NAN)),
        short(report["summary"]["d_sigma_eta_sq"]["q3"].as_f64().unwrap_or(f64::NAN)),
    );

    let mut manifest = start_manifest(
        "compare",
        json!({
            "kind": format!("{:?}", data_args.kind),
            "min_common": min_common,
            "iters": iters,
            "burnin": burnin,
            "subset": subset,
        }),
        seed,
        Some(&data_args.data),
    )?;
    let p1 = write_text(out_dir, "compare_results.csv", &csv)?;
    let p2 = write_json(out_dir, "compare_results.json", &report)?;
    manifest.record_output(&p1);
    manifest.record_output(&p2);
    manifest.write(out_dir, "compare_results")?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_mcmc(
    data_args: &DataArgs,
    common: &str,
    specific0: Option<&str>,
    specific1: Option<&str>,
    intercept_random: bool,
    iters: usize,
    burnin: usize,
    seed: u64,
    dump_draws: Option<&Path>,
    out_dir: &Path,
) -> anyhow::Result<()> {
    let (data, _) = load_standardized(data_args)?;
    let common_ix = resolve_names(&data, common)?;
    let s0 = specific0.map(|s| resolve_names(&data, s)).transpose()?.unwrap_or_default();
    let s1 = specific1.map(|s| resolve_names(&data, s)).transpose()?.unwrap_or_default();
    let pair = ModelPair::new(common_ix, s0, s1)?.with_intercept_random(intercept_random);

    let draws = gibbs_run(&pair, &data, iters, burnin, seed)?;
    for w in &draws.warnings {
        eprintln!("warning: {w}");
    }
    let pe = pe_posterior(&draws, &pair, &data)?;

    let stat = |f: &dyn Fn(&twoset_core::gibbs::ChainState) -> f64| -> serde_json::Value {
        let mut vs: Vec<f64> = draws.states.iter().map(f).collect();
        vs.sort_by(f64::total_cmp);
        let n = vs.len() as f64;
        let mean = vs.iter().sum::<f64>() / n;
        let sd = if vs.len() > 1 {
            (vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        json!({"mean": mean, "median": quantile(&vs, 0.5), "sd": sd})
    };
    let mut pe_sorted = pe.samples.clone();
    pe_sorted.sort_by(f64::total_cmp);

    let summary = json!({
        "model": {
            "common": pair.common(),
            "specific0": pair.specific(0),
            "specific1": pair.specific(1),
            "intercept_random": intercept_random,
        },
        "iters": iters,
        "burnin": burnin,
        "seed": seed,
        "acceptance_rate": [draws.acceptance_rate(0), draws.acceptance_rate(1)],
        "warnings": draws.warnings,
        "posterior": {
            "sigma0_sq": stat(&|s| s.sigma_sq[0]),
            "sigma1_sq": stat(&|s| s.sigma_sq[1]),
            "sigma_eta_sq": stat(&|s| s.sigma_eta_sq),
        },
        "prediction_error": {
            "mean": pe.mean,
            "sd": pe.sd,
            "median": quantile(&pe_sorted, 0.5),
            "degenerate": pe.degenerate,
        },
    });

    println!(
        "retained {} draws; acceptance rates {:?}",
        draws.states.len(),
        [draws.acceptance_rate(0), draws.acceptance_rate(1)]
    );
    println!(
        "prediction error (both directions): mean {} sd {}",
        short(pe.mean),
        short(pe.sd)
    );

    let mut manifest = start_manifest(
        "mcmc",
        json!({
            "kind": format!("{:?}", data_args.kind),
            "common": common,
            "specific0": specific0,
            "specific1": specific1,
            "iters": iters,
            "burnin": burnin,
            "intercept_random": intercept_random,
        }),
        seed,
        Some(&data_args.data),
    )?;
    let p1 = write_json(out_dir, "mcmc_summary.json", &summary)?;
    manifest.record_output(&p1);
    if let Some(path) = dump_draws {
        let mut buf = Vec::new();
        draws.write_csv(&mut buf)?;
        std::fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
        std::fs::write(path, buf)?;
        manifest.record_output(path);
    }
    manifest.write(out_dir, "mcmc_summary")?;
    Ok(())
}

pub fn cmd_mlsel(
    data_args: &DataArgs,
    dataset: u8,
    top: Option<usize>,
    out_dir: &Path,
    seed: u64,
) -> anyhow::Result<()> {
    if dataset > 1 {
        return Err(UsageError("--dataset must be 0 or 1".into()).into());
    }
    let (data, _) = load_standardized(data_args)?;
    let ranking = mlsel(&data, dataset)?;
    let shown = top.unwrap_or(ranking.len()).min(ranking.len());

    let mut csv = String::from("rank,predictors,log_marginal\n");
    let mut entries = Vec::new();
    for (i, e) in ranking.iter().take(shown).enumerate() {
        let _ = writeln!(csv, "{},{},{}", i + 1, e.names.join("+"), full(e.log_marginal));
        entries.push(json!({
            "rank": i + 1,
            "predictors": e.names,
            "log_marginal": e.log_marginal,
        }));
    }
    println!("dataset {dataset}: best subsets by log marginal likelihood");
    for (i, e) in ranking.iter().take(5).enumerate() {
        println!(
            "  #{} {:<30} {}",
            i + 1,
            if e.names.is_empty() { "(intercept)".to_string() } else { e.names.join("+") },
            short(e.log_marginal)
        );
    }

    let mut manifest = start_manifest(
        "mlsel",
        json!({"kind": format!("{:?}", data_args.kind), "dataset": dataset, "top": top}),
        seed,
        Some(&data_args.data),
    )?;
    let p1 = write_text(out_dir, "mlsel_results.csv", &csv)?;
    let p2 = write_json(
        out_dir,
        "mlsel_results.json",
        &json!({"dataset": dataset, "entries": entries}),
    )?;
    manifest.record_output(&p1);
    manifest.record_output(&p2);
    manifest.write(out_dir, "mlsel_results")?;
    Ok(())
}

#[derive(serde::Deserialize)]
struct SuiteEntry {
    #[serde(default)]
    name: Option<String>,
    #[serde(flatten)]
    config: SimConfig,
}

#[derive(serde::Deserialize)]
struct Suite {
    configs: Vec<SuiteEntry>,
}

pub fn cmd_simulate(config_path: &Path, out_dir: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let suite: Suite = serde_json::from_str(&text).context("parsing simulation config")?;

    let mut checks = Vec::new();
    let mut all_pass = true;
    for (i, entry) in suite.configs.iter().enumerate() {
        let name = entry
            .name
            .clone()
            .unwrap_or_else(|| format!("config{}", i + 1));
        let cfg = &entry.config;
        let designs = SimDesigns::for_config(cfg)?;
        let std = designs_as_standardized(&designs);
        let pair = design_model_pair(&designs, cfg);
        let v = VarianceEstimates::new(cfg.sigma0_sq, cfg.sigma1_sq, cfg.sigma_eta_sq)?;
        for direction in Direction::BOTH {
            let closed = pe_grcm(&v, &pair, &std, direction)?;
            let mc = empirical_pe(cfg, direction)?;
            let z = (mc.mean - closed.total).abs() / mc.mc_standard_error;
            let pass = z <= 3.0;
            all_pass &= pass;
            println!(
                "{name} {direction}: mc {} +- {}  closed {}  z {}  {}",
                short(mc.mean),
                short(mc.mc_standard_error),
                short(closed.total),
                short(z),
                if pass { "pass" } else { "FAIL" }
            );
            checks.push(json!({
                "name": name,
                "direction": direction.to_string(),
                "mc_mean": mc.mean,
                "mc_se": mc.mc_standard_error,
                "replications": mc.replications,
                "closed_form": closed.total,
                "z": z,
                "pass": pass,
            }));
        }
    }
    let report = json!({"checks": checks, "all_pass": all_pass});
    let mut manifest = start_manifest("simulate", json!({"config": config_path}), 0, None)?;
    manifest.add_input(config_path)?;
    let p1 = write_json(out_dir, "simulate_report.json", &report)?;
    manifest.record_output(&p1);
    manifest.write(out_dir, "simulate_report")?;
    if !all_pass {
        anyhow::bail!(FormulaCheckFailed);
    }
    Ok(())
}

/// Marker for a failed formula verification (exit code 4).
#[derive(Debug)]
pub struct FormulaCheckFailed;

impl std::fmt::Display for FormulaCheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "one or more formula checks fell outside 3 Monte Carlo standard errors")
    }
}

impl std::error::Error for FormulaCheckFailed {}
