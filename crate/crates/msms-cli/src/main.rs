//! Batch front end for the multi-state multi-spell hazard toolkit.
//!
//! Subcommands: `simulate` (synthetic datasets from a scenario), `ingest`
//! (raw events to spells), `fit` (simulated maximum likelihood), `att`
//! (duration-scale treatment effects), `trend-test` (pre-reform parallel
//! trend test). Exit codes: 0 success, 2 input error, 3 non-convergence,
//! 4 numerical failure. Machine-readable diagnostics go to stderr as
//! line-delimited JSON; human summaries go to stdout. Every command writes a
//! `manifest.json` with input hashes, seeds and the tool version.

mod manifest;

use clap::{Parser, Subcommand};
use manifest::RunManifest;
use msms_core::att::{att_duration, AttGroup, AttOptions};
use msms_core::design::{build_pretrend_design, ModelSpec};
use msms_core::error::Error as CoreError;
use msms_core::estimate::{fit, fit_prepared, wald_test, FitOptions, FitResult};
use msms_core::ingest::{build_spells, load_event_csv, summarize, write_exclusions};
use msms_core::simulate::{simulate_to_dir, ScenarioSpec};
use msms_core::spells::{load_spell_csv, write_spell_csv};
use msms_core::states::Transition;
use msms_core::time::parse_day;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_INPUT: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "msms",
    version,
    about = "Recurrent multi-state multi-spell hazard models: simulate, ingest, fit, and treatment effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (events.csv, spells.csv, truth.json).
    Simulate {
        /// Scenario config (JSON).
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert raw events into spells with the censoring rules applied.
    Ingest {
        /// Raw event stream (events.csv).
        #[arg(long)]
        events: PathBuf,
        /// Observation window start (ISO date or day number).
        #[arg(long, value_parser = parse_day)]
        window_start: f64,
        /// Observation window end (ISO date or day number).
        #[arg(long, value_parser = parse_day)]
        window_end: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the model by simulated maximum likelihood.
    Fit {
        #[arg(long)]
        spells: PathBuf,
        /// Model spec (JSON).
        #[arg(long)]
        model: PathBuf,
        /// Monte Carlo draws per patient (default: model spec value).
        #[arg(long)]
        draws: Option<usize>,
        /// Seed of the frozen frailty draws (default: model spec value).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = all cores). Results do not depend on this.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Convergence tolerance: gradient sup-norm <= tol * (1 + |logL|).
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Duration-scale treatment effects from a fitted model.
    Att {
        /// Directory written by `fit`.
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        spells: PathBuf,
        /// `overall` or `specialty`.
        #[arg(long, default_value = "overall")]
        group: String,
        /// Parameter redraws for the Krinsky-Robb standard deviation.
        #[arg(long, default_value_t = 500)]
        draws: usize,
        /// Frailty draws per covariate row.
        #[arg(long, default_value_t = 100)]
        eps_draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Transitions to report (ids 1..=4).
        #[arg(long, value_delimiter = ',', default_values_t = vec![1u8, 2, 3, 4])]
        transitions: Vec<u8>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-reform parallel-trend test (joint Wald on the trend interactions).
    TrendTest {
        #[arg(long)]
        spells: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// End of the pre-reform window (ISO date or day number).
        #[arg(long, value_parser = parse_day)]
        cutoff: f64,
        /// Add a cubic trend interaction.
        #[arg(long, default_value_t = false)]
        cubic: bool,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn diag(level: &str, code: &str, message: &str) {
    eprintln!(
        "{}",
        json!({"level": level, "code": code, "message": message})
    );
}

/// Map core errors onto the documented exit codes.
fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::Io { .. }
        | CoreError::Csv { .. }
        | CoreError::Json { .. }
        | CoreError::CsvValidation { .. }
        | CoreError::InvalidGrid(_)
        | CoreError::ModelSpec(_)
        | CoreError::Scenario(_)
        | CoreError::Design(_)
        | CoreError::Layout(_) => EXIT_INPUT,
        CoreError::NotConverged { .. } => EXIT_NOT_CONVERGED,
        CoreError::DegenerateLoadings(_)
        | CoreError::NonFiniteLikelihood { .. }
        | CoreError::Optimizer(_)
        | CoreError::Covariance(_)
        | CoreError::Wald(_)
        | CoreError::Att(_) => EXIT_NUMERICAL,
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CoreError> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir.display().to_string(), e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            let code = exit_code_for(&err);
            diag("error", "failed", &err.to_string());
            eprintln!("error: {err}");
            code
        }
    };
    ExitCode::from(code)
}

fn run(cli: Cli) -> Result<u8, CoreError> {
    match cli.command {
        Command::Simulate { scenario, out } => cmd_simulate(&scenario, &out),
        Command::Ingest {
            events,
            window_start,
            window_end,
            out,
        } => cmd_ingest(&events, (window_start, window_end), &out),
        Command::Fit {
            spells,
            model,
            draws,
            seed,
            threads,
            tol,
            max_iter,
            out,
        } => cmd_fit(
            &spells,
            &model,
            FitOptions {
                draws,
                seed,
                tol,
                max_iter,
                threads,
                ..FitOptions::default()
            },
            &out,
        ),
        Command::Att {
            fit,
            spells,
            group,
            draws,
            eps_draws,
            seed,
            transitions,
            out,
        } => cmd_att(&fit, &spells, &group, draws, eps_draws, seed, &transitions, &out),
        Command::TrendTest {
            spells,
            model,
            cutoff,
            cubic,
            threads,
            out,
        } => cmd_trend_test(&spells, &model, cutoff, cubic, threads, &out),
    }
}

fn cmd_simulate(scenario_path: &Path, out: &Path) -> Result<u8, CoreError> {
    let scenario = ScenarioSpec::from_json_file(scenario_path)?;
    ensure_dir(out)?;
    let truth = simulate_to_dir(&scenario, out)?;
    let mut manifest = RunManifest::new("simulate");
    manifest
        .add_input(scenario_path)
        .map_err(|e| CoreError::io(scenario_path.display().to_string(), e))?;
    manifest.add_seed("scenario", scenario.seed);
    for name in ["events.csv", "spells.csv", "truth.json"] {
        manifest.add_output(name);
    }
    manifest
        .write(out)
        .map_err(|e| CoreError::io(out.display().to_string(), e))?;
    println!(
        "simulated {} patients: {} spells, {} events -> {}",
        scenario.n_patients,
        truth.n_spells,
        truth.n_events,
        out.display()
    );
    Ok(0)
}

fn cmd_ingest(events_path: &Path, window: (f64, f64), out: &Path) -> Result<u8, CoreError> {
    let events = load_event_csv(events_path)?;
    let result = build_spells(&events, window);
    ensure_dir(out)?;
    write_spell_csv(&result.spells, out.join("spells.csv"))?;
    write_exclusions(&result.exclusions, out.join("exclusions.ndjson"))?;
    let summary = summarize(&result.spells);
    let summary_path = out.join("summary.json");
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary)
            .map_err(|e| CoreError::json(summary_path.display().to_string(), e))?,
    )
    .map_err(|e| CoreError::io(summary_path.display().to_string(), e))?;

    let mut manifest = RunManifest::new("ingest");
    manifest
        .add_input(events_path)
        .map_err(|e| CoreError::io(events_path.display().to_string(), e))?;
    for name in ["spells.csv", "exclusions.ndjson", "summary.json"] {
        manifest.add_output(name);
    }
    manifest
        .write(out)
        .map_err(|e| CoreError::io(out.display().to_string(), e))?;

    println!("{summary}");
    if result.exclusions.is_empty() {
        println!(
            "ingested {} events into {} spells, no exclusions",
            events.len(),
            result.spells.len()
        );
        Ok(0)
    } else {
        for ex in &result.exclusions {
            diag(
                "warning",
                &format!("excluded:{}", ex.reason),
                &format!("patient {}: {}", ex.patient_id, ex.detail),
            );
        }
        println!(
            "ingested {} events into {} spells; {} patients excluded (see exclusions.ndjson)",
            events.len(),
            result.spells.len(),
            result.exclusions.len()
        );
        Ok(EXIT_INPUT)
    }
}

fn cmd_fit(
    spells_path: &Path,
    model_path: &Path,
    options: FitOptions,
    out: &Path,
) -> Result<u8, CoreError> {
    let spells = load_spell_csv(spells_path)?;
    let spec = ModelSpec::from_json_file(model_path)?;
    let mut result = fit(&spells, &spec, &options)?;
    ensure_dir(out)?;
    result.save(out)?;

    let mut manifest = RunManifest::new("fit");
    for p in [spells_path, model_path] {
        manifest
            .add_input(p)
            .map_err(|e| CoreError::io(p.display().to_string(), e))?;
    }
    manifest.add_seed("frailty", result.draws_seed);
    manifest.threads = options.threads;
    for name in ["fit.json", "coefficients.csv", "cov.bin"] {
        manifest.add_output(name);
    }
    manifest
        .write(out)
        .map_err(|e| CoreError::io(out.display().to_string(), e))?;

    if !result.full_rank {
        diag(
            "warning",
            "rank_deficient",
            &format!("design null space: {:?}", result.rank_null_space),
        );
    }
    if let Some(note) = &result.covariance_note {
        diag("warning", "covariance", note);
    }
    if result.clamps_at_optimum > 0 {
        diag(
            "warning",
            "clamps",
            &format!(
                "{} exponential clamps at the optimum",
                result.clamps_at_optimum
            ),
        );
    }
    println!(
        "logL {:.4} after {} iterations; {} parameters, {} patients, {} spells",
        result.loglik,
        result.iterations,
        result.estimates.len(),
        result.n_patients,
        result.n_spells
    );
    if result.converged {
        println!(
            "converged (gradient sup-norm {:.3e} <= {:.3e}) -> {}",
            result.grad_norm,
            result.grad_threshold,
            out.display()
        );
        Ok(0)
    } else {
        diag(
            "error",
            "not_converged",
            &format!(
                "{} after {} iterations (gradient {:.3e}, threshold {:.3e})",
                result.message, result.iterations, result.grad_norm, result.grad_threshold
            ),
        );
        println!("NOT converged: {} -> {}", result.message, out.display());
        Ok(EXIT_NOT_CONVERGED)
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_att(
    fit_dir: &Path,
    spells_path: &Path,
    group: &str,
    draws: usize,
    eps_draws: usize,
    seed: u64,
    transitions: &[u8],
    out: &Path,
) -> Result<u8, CoreError> {
    let fit_result = FitResult::load(fit_dir)?;
    let spells = load_spell_csv(spells_path)?;
    let group = match group {
        "overall" => AttGroup::Overall,
        "specialty" => AttGroup::BySpecialty,
        other => {
            return Err(CoreError::Att(format!(
                "unknown group `{other}` (expected overall or specialty)"
            )))
        }
    };
    let trs: Vec<Transition> = transitions
        .iter()
        .map(|id| {
            Transition::from_id(*id)
                .ok_or_else(|| CoreError::Att(format!("unknown transition id {id}")))
        })
        .collect::<Result<_, _>>()?;
    if fit_result.covariance.is_none() {
        diag(
            "warning",
            "covariance",
            "fit has no covariance; duration effects reported without standard errors",
        );
    }
    let result = att_duration(
        &fit_result,
        &spells,
        &trs,
        group,
        &AttOptions {
            eps_draws,
            param_draws: draws,
            seed,
            ..AttOptions::default()
        },
    )?;
    ensure_dir(out)?;
    result.write_csv(out.join("att.csv"))?;
    let json_path = out.join("att.json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&result)
            .map_err(|e| CoreError::json(json_path.display().to_string(), e))?,
    )
    .map_err(|e| CoreError::io(json_path.display().to_string(), e))?;

    let mut manifest = RunManifest::new("att");
    for p in [&fit_dir.join("fit.json"), &spells_path.to_path_buf()] {
        manifest
            .add_input(p)
            .map_err(|e| CoreError::io(p.display().to_string(), e))?;
    }
    manifest.add_seed("att", seed);
    manifest.add_output("att.csv");
    manifest.add_output("att.json");
    manifest
        .write(out)
        .map_err(|e| CoreError::io(out.display().to_string(), e))?;

    println!(
        "{:<22}{:<12}{:>14}{:>12}{:>10}{:>10}",
        "transition", "group", "days", "sd", "theta", "theta_se"
    );
    for row in &result.rows {
        println!(
            "{:<22}{:<12}{:>14.4}{:>12}{:>10.4}{:>10}",
            row.transition,
            row.group,
            row.duration_att,
            row.duration_se
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
            row.theta,
            row.theta_se
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
        );
        if !row.opposite_sign {
            diag(
                "warning",
                "sign",
                &format!(
                    "{}: duration effect and hazard effect share a sign",
                    row.transition
                ),
            );
        }
    }
    Ok(0)
}

fn cmd_trend_test(
    spells_path: &Path,
    model_path: &Path,
    cutoff: f64,
    cubic: bool,
    threads: usize,
    out: &Path,
) -> Result<u8, CoreError> {
    let spells = load_spell_csv(spells_path)?;
    let spec = ModelSpec::from_json_file(model_path)?;
    let (design, kept) = build_pretrend_design(&spells, &spec, cutoff, cubic)?;
    let window: Vec<_> = kept.iter().map(|&i| spells[i].clone()).collect();
    let result = fit_prepared(
        &window,
        &design,
        &spec,
        &FitOptions {
            threads,
            ..FitOptions::default()
        },
    )?;
    if !result.converged {
        diag("error", "not_converged", &result.message);
        return Ok(EXIT_NOT_CONVERGED);
    }
    if let Some(note) = &result.covariance_note {
        diag("warning", "covariance", note);
    }

    let mut labels = vec!["pretrend_q".to_string(), "pretrend_q2".to_string()];
    if cubic {
        labels.push("pretrend_q3".to_string());
    }
    #[derive(serde::Serialize)]
    struct TrendRow {
        transition: u8,
        statistic: Option<f64>,
        df: usize,
        p_value: Option<f64>,
        note: Option<String>,
    }
    let mut rows = Vec::new();
    for tr in Transition::ALL {
        // The test cannot run when no later-adopter spell is at risk of this
        // transition in the window (the interaction columns carry no
        // information there).
        let any_treated = window
            .iter()
            .any(|s| s.origin == tr.origin() && s.adoption_day.is_some());
        let full: Vec<String> = labels
            .iter()
            .map(|l| format!("{}:{}", tr.label(), l))
            .collect();
        let refs: Vec<&str> = full.iter().map(|s| s.as_str()).collect();
        let outcome = if any_treated {
            wald_test(&result, &refs).map(Some)
        } else {
            Ok(None)
        };
        match outcome {
            Ok(Some(test)) => {
                println!(
                    "{}: statistic {:.4}, df {}, p = {:.4}",
                    tr, test.statistic, test.df, test.p_value
                );
                rows.push(TrendRow {
                    transition: tr.id(),
                    statistic: Some(test.statistic),
                    df: test.df,
                    p_value: Some(test.p_value),
                    note: None,
                });
            }
            Ok(None) => {
                println!("{tr}: NA (no later-adopting departments at risk in the window)");
                rows.push(TrendRow {
                    transition: tr.id(),
                    statistic: None,
                    df: labels.len(),
                    p_value: None,
                    note: Some("no later-adopting departments at risk".into()),
                });
            }
            Err(e) => {
                println!("{tr}: NA ({e})");
                rows.push(TrendRow {
                    transition: tr.id(),
                    statistic: None,
                    df: labels.len(),
                    p_value: None,
                    note: Some(e.to_string()),
                });
            }
        }
    }

    ensure_dir(out)?;
    let json_path = out.join("trend_test.json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&rows)
            .map_err(|e| CoreError::json(json_path.display().to_string(), e))?,
    )
    .map_err(|e| CoreError::io(json_path.display().to_string(), e))?;
    let csv_path = out.join("trend_test.csv");
    write_trend_csv(&csv_path, &rows)?;

    let mut manifest = RunManifest::new("trend-test");
    for p in [spells_path, model_path] {
        manifest
            .add_input(p)
            .map_err(|e| CoreError::io(p.display().to_string(), e))?;
    }
    manifest.add_seed("frailty", result.draws_seed);
    manifest.add_output("trend_test.json");
    manifest.add_output("trend_test.csv");
    manifest
        .write(out)
        .map_err(|e| CoreError::io(out.display().to_string(), e))?;
    return Ok(0);

    fn write_trend_csv(
        csv_path: &Path,
        rows: &[TrendRow],
    ) -> Result<(), CoreError> {
        let to_err = |e: csv::Error| CoreError::Csv {
            path: csv_path.display().to_string(),
            source: e,
        };
        let mut w = csv::Writer::from_path(csv_path).map_err(to_err)?;
        w.write_record(["transition", "statistic", "df", "p_value", "note"])
            .map_err(to_err)?;
        for r in rows {
            w.write_record([
                r.transition.to_string(),
                r.statistic
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "NA".into()),
                r.df.to_string(),
                r.p_value
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "NA".into()),
                r.note.clone().unwrap_or_default(),
            ])
            .map_err(to_err)?;
        }
        w.flush()
            .map_err(|e| CoreError::io(csv_path.display().to_string(), e))?;
        Ok(())
    }
}
