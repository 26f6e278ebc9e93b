//! Reflected backward stochastic differential equations on discrete
//! Brownian lattices.
//!
//! * [`lattice`]: time grid, scenario trees, adapted processes, stopping rules.
//! * [`generator`]: drivers `g(t, y, z)` as expressions, assumption checks.
//! * [`bsde`]: implicit backward solver and g-expectations.
//! * [`rbsde`]: discretely reflected solver and optimal-stopping oracles.
//! * [`theorems`]: comparison checks, strict-comparison witness, closed-form
//!   examples, obstacle constructions, converse probes and seeded suites.
//! * [`market`]: American options, the risk-neutral oracle, and recovery of
//!   the market price of risk.

pub mod bsde;
pub mod error;
pub mod generator;
pub mod lattice;
pub mod market;
pub mod rbsde;
pub mod theorems;

pub use bsde::{
    conditional_g_expectation, g_expectation, solve_bsde, BsdeSolution, TerminalCondition,
};
pub use error::{Error, Result};
pub use generator::{
    check_assumptions, restrict_generator, AssumptionFlags, AssumptionReport, Expr, GeneratorSpec,
    SampleSpec,
};
pub use lattice::{
    build_tree, conditional_expectation, event_probability, hitting_rule, lift_deterministic,
    martingale_coefficient, AdaptedProcess, ScenarioTree, StoppingRule, TimeGrid, TreeMode,
};
pub use market::{
    price_american_rbsde, price_american_riskneutral_dp, price_strike_family, recover_theta,
    simulate_stock, AmericanPrice, KnownMarket, MarketModel, OptionKind, StrikePrice,
    ThetaEstimate,
};
pub use rbsde::{
    enumerate_stopping_oracle, exercise_rule, reflected_conditional, reflected_value, snell_oracle,
    solve_rbsde, ObstacleSpec, RbsdeDiagnostics, RbsdeSolution,
};
pub use theorems::RbsdeData;
