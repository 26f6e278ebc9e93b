use crate::bsde::{solve_bsde, TerminalCondition};
use crate::error::{Error, Result};
use crate::generator::{restrict_generator, AssumptionFlags, Expr, GeneratorSpec};
use crate::lattice::{ScenarioTree, StoppingRule};
use crate::rbsde::ObstacleSpec;

/// `−L|y| − L|z|`.
fn damping(l: f64) -> Expr {
    Expr::add(
        Expr::neg(Expr::scale(l, Expr::abs(Expr::Y))),
        Expr::neg(Expr::scale(l, Expr::abs(Expr::Z))),
    )
}

/// Solution of the BSDE with driver `−L|y| − L|z|` and terminal `xi`.
///
/// Every driver with `g(t, y, 0) = 0` and Lipschitz constant at most `L`
/// satisfies `g >= −L|y| − L|z|`, so its solution with the same terminal
/// data stays above this obstacle and never reflects.
pub fn build_dominating_obstacle(
    tree: ScenarioTree,
    xi: &TerminalCondition,
    l: f64,
) -> Result<ObstacleSpec> {
    let g = GeneratorSpec::new(damping(l), l, AssumptionFlags::default().with_a3())?;
    Ok(ObstacleSpec::unbounded(solve_bsde(tree, &g, xi)?.y))
}

/// Solution of the BSDE with driver `g1(t,0,0) ∧ g2(t,0,0) − L|y| − L|z|`
/// on `[0, τ]`, frozen at `ξ_τ` afterwards.
///
/// `xi` must be measurable at `tau`: its rule has to stop no later than
/// `tau`.
pub fn build_floor_obstacle(
    tree: ScenarioTree,
    xi: &TerminalCondition,
    tau: &StoppingRule,
    g1: &GeneratorSpec,
    g2: &GeneratorSpec,
    l: f64,
) -> Result<ObstacleSpec> {
    if !xi.rule().precedes(tau)? {
        return Err(Error::RuleOrderViolated(
            "terminal data must be measurable at the freezing rule",
        ));
    }
    let at_tau = if xi.rule().equivalent(tau)? {
        TerminalCondition::new(tau.clone(), xi.values().clone())?
    } else {
        TerminalCondition::new(tau.clone(), xi.values().stopped_at(xi.rule())?)?
    };
    let floor = Expr::min(g1.expr().at_origin(), g2.expr().at_origin());
    let g = GeneratorSpec::new(Expr::add(floor, damping(l)), l, AssumptionFlags::default())?;
    let g = restrict_generator(&g, tau)?;
    Ok(ObstacleSpec::unbounded(solve_bsde(tree, &g, &at_tau)?.y))
}
