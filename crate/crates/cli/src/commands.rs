use std::path::Path;

use rbsde_lab::generator::{check_assumptions, AssumptionReport, SampleSpec};
use rbsde_lab::market::price_strike_family;
use rbsde_lab::theorems::suites::{run_suite, SuiteOutcome, SUITE_NAMES};
use rbsde_lab::{recover_theta, solve_rbsde, RbsdeDiagnostics};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{ensure_dir, float, write_csv, write_json};

/// Creates the output directory and records the canonical config there.
fn prepare(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let path = out.join("config.json");
    std::fs::write(&path, cfg.canonical()? + "\n")
        .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct SolveDiagnostics {
    root: f64,
    #[serde(flatten)]
    solver: RbsdeDiagnostics,
    assumptions: AssumptionReport,
}

/// Writes `solution.csv` and `diagnostics.json`.
pub fn solve(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let tree = cfg.tree()?;
    let g = cfg.generator()?;
    let xi = cfg.terminal(tree)?;
    let s = cfg.obstacle(tree)?;
    let sol = solve_rbsde(tree, &g, &xi, &s)?;
    prepare(cfg, out)?;
    let rows = sol.y.iter().map(|(i, j, y)| {
        vec![
            i.to_string(),
            j.to_string(),
            float(tree.time(i)),
            float(y),
            float(sol.z.value(i, j)),
            sol.k
                .as_ref()
                .map(|k| float(k.value(i, j)))
                .unwrap_or_default(),
            float(s.process().value(i, j)),
        ]
    });
    write_csv(
        &out.join("solution.csv"),
        &["level", "node", "t", "Y", "Z", "K", "S"],
        rows,
    )?;
    let report = SolveDiagnostics {
        root: sol.root(),
        solver: sol.diagnostics.clone(),
        assumptions: check_assumptions(&g, &SampleSpec::default_for(tree.grid().horizon())),
    };
    write_json(&out.join("diagnostics.json"), &report)
}

#[derive(Serialize)]
struct VerifyReport {
    seed: u64,
    pass: bool,
    suites: Vec<SuiteOutcome>,
}

/// Runs the selected suites (all by default); returns whether all passed.
pub fn verify(
    cfg: &RunConfig,
    suite: Option<&str>,
    seed: Option<u64>,
    out: &Path,
) -> Result<bool, CliError> {
    let block = cfg.verify.clone().unwrap_or_default();
    let name = suite
        .map(str::to_string)
        .or(block.suite)
        .unwrap_or_else(|| "all".into());
    let names: Vec<&str> = if name == "all" {
        SUITE_NAMES.to_vec()
    } else if let Some(n) = SUITE_NAMES.iter().find(|n| **n == name) {
        vec![n]
    } else {
        return Err(CliError::Config(format!(
            "unknown suite {name}; expected one of all, {}",
            SUITE_NAMES.join(", ")
        )));
    };
    if block.instances == Some(0) {
        return Err(CliError::Config(
            "verify.instances must be at least 1".into(),
        ));
    }
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let suites = names
        .iter()
        .map(|n| run_suite(n, seed, block.instances))
        .collect::<Result<Vec<_>, _>>()?;
    let pass = suites.iter().all(|s| s.pass);
    prepare(cfg, out)?;
    write_json(
        &out.join("report.json"),
        &VerifyReport { seed, pass, suites },
    )?;
    Ok(pass)
}

/// Writes `prices.csv` for the configured strikes.
pub fn price(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let tree = cfg.tree()?;
    let model = cfg.market_model()?;
    let strikes = cfg.strike_list()?;
    let prices = price_strike_family(tree, &model, &strikes)?;
    prepare(cfg, out)?;
    let rows = prices.iter().map(|p| {
        vec![
            float(p.strike),
            float(p.price),
            float(p.exercise_boundary_t0),
        ]
    });
    write_csv(
        &out.join("prices.csv"),
        &["strike", "price", "exercise_boundary_t0"],
        rows,
    )
}

/// Writes `theta.json`. Without an `observed` block the prices are
/// synthesised from the market block at the configured strikes.
pub fn recover(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let tree = cfg.tree()?;
    let known = cfg.known_market()?;
    let observed = match cfg.observed_prices()? {
        Some(o) if o.is_empty() => {
            return Err(CliError::Config("observed prices are empty".into()))
        }
        Some(o) => o,
        None => price_strike_family(tree, &cfg.market_model()?, &cfg.strike_list()?)?
            .iter()
            .map(|p| (p.strike, p.price))
            .collect(),
    };
    let est = recover_theta(tree, &observed, &known)?;
    prepare(cfg, out)?;
    write_json(&out.join("theta.json"), &est)
}
