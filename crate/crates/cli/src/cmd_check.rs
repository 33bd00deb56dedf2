//! `nsplat check`: run the numerical verification suites.

use std::process::ExitCode;

use nsplat_core::checks::{check_gradients, check_integrals, check_invariances, check_render_oracle};
use nsplat_core::error::Result;
use serde::Serialize;
use serde_json::Value;

use crate::common::print_json;
use crate::{CheckArgs, SuiteChoice};

#[derive(Serialize)]
struct SuiteResult {
    suite: &'static str,
    passed: bool,
    report: Value,
}

#[derive(Serialize)]
struct CheckSummary {
    seed: u64,
    passed: bool,
    suites: Vec<SuiteResult>,
}

fn record(
    summary: &mut CheckSummary,
    suite: &'static str,
    passed: bool,
    worst: f64,
    failures: usize,
    detail: String,
    report: Value,
) {
    eprintln!("{suite}: {} (worst-case error {worst:.3e})", if passed { "pass" } else { "FAIL" });
    if !passed {
        eprintln!("  {failures} violation(s); {detail}");
        eprintln!("  replay: nsplat check --seed {} ...", summary.seed);
    }
    summary.passed &= passed;
    summary.suites.push(SuiteResult { suite, passed, report });
}

pub fn run(args: CheckArgs) -> Result<ExitCode> {
    let mut summary = CheckSummary { seed: args.seed, passed: true, suites: Vec::new() };
    let wants = |s: SuiteChoice| args.suite == s || args.suite == SuiteChoice::All;

    if wants(SuiteChoice::Integrals) {
        for temporal in [false, true] {
            if temporal && !args.temporal {
                continue;
            }
            let r = check_integrals(args.pairs, args.seed, temporal)?;
            let passed = match args.tolerance {
                Some(tol) => r.worst_rel_err <= tol,
                None => r.passed(),
            };
            let suite = if temporal { "integrals (temporal)" } else { "integrals" };
            let detail = format!("worst case is pair {} of this seed", r.worst_pair);
            record(&mut summary, suite, passed, r.worst_rel_err, r.failures, detail, serde_json::to_value(&r).unwrap());
        }
    }
    if wants(SuiteChoice::Invariances) {
        let r = check_invariances(args.pairs, args.seed)?;
        let worst = r.worst_additivity.max(r.worst_origin_shift).max(r.worst_naive_gap);
        let passed = match args.tolerance {
            Some(tol) => worst <= tol,
            None => r.passed(),
        };
        let detail = format!(
            "additivity {:.3e}, origin shift {:.3e}, naive-form gap {:.3e}",
            r.worst_additivity, r.worst_origin_shift, r.worst_naive_gap
        );
        record(&mut summary, "invariances", passed, worst, r.failures, detail, serde_json::to_value(&r).unwrap());
    }
    if wants(SuiteChoice::Gradients) {
        let r = check_gradients(args.seed)?;
        let passed = match args.tolerance {
            Some(tol) => r.worst_rel_err <= tol,
            None => r.passed(),
        };
        eprintln!(
            "gradients: {:.1}% of {} components within {:.0e}",
            100.0 * r.tight_fraction,
            r.components,
            r.tight_tolerance
        );
        let detail = format!(
            "{:.1}% within {:.0e} (need {:.0}%), {} excluded as clamp-straddling",
            100.0 * r.tight_fraction,
            r.tight_tolerance,
            100.0 * r.required_tight_fraction,
            r.excluded
        );
        record(&mut summary, "gradients", passed, r.worst_rel_err, r.failures, detail, serde_json::to_value(&r).unwrap());
    }
    if wants(SuiteChoice::RenderOracle) {
        let r = check_render_oracle(args.seed, args.samples)?;
        let passed = match args.tolerance {
            Some(tol) => r.max_pixel_err <= tol,
            None => r.passed(),
        };
        let detail = format!("{} ray-march samples on a {}x{} frame", r.oracle_samples, r.width, r.height);
        let failures = usize::from(!passed);
        record(&mut summary, "render-oracle", passed, r.max_pixel_err, failures, detail, serde_json::to_value(&r).unwrap());
    }

    let ok = summary.passed;
    print_json(&summary);
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
