use serde::{Deserialize, Serialize};

use super::THEOREM_TOL;
use crate::bsde::TerminalCondition;
use crate::error::{Error, Result};
use crate::generator::{Expr, GeneratorSpec, Point, SampleSpec};
use crate::lattice::{hitting_rule, AdaptedProcess, ScenarioTree, StoppingRule};
use crate::rbsde::{solve_rbsde, ObstacleSpec};

/// A sampled point where `g1 < g2` by `gap`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationSite {
    pub t: f64,
    pub y: f64,
    pub z: f64,
    pub gap: f64,
}

impl ViolationSite {
    /// Re-evaluates the gap `g2 − g1` at the recorded point.
    pub fn recheck(&self, g1: &GeneratorSpec, g2: &GeneratorSpec) -> f64 {
        g2.eval(self.t, self.y, self.z) - g1.eval(self.t, self.y, self.z)
    }
}

/// Stopping rules and payoffs whose combinations form the terminal family
/// `ξ = C + payoff(B_σ)` at rule `σ`.
#[derive(Clone, Debug)]
pub struct FamilySpec {
    pub rules: Vec<StoppingRule>,
    /// Nonnegative expressions in `b`.
    pub payoffs: Vec<Expr>,
    /// Generator sampling region; `None` picks the default.
    pub sample: Option<SampleSpec>,
}

impl FamilySpec {
    /// Rules: root, first hit of `|B| >= 1` (deterministic mid level on
    /// recombining trees), terminal. Payoffs: `0, 0.5, ..., 3, |b|, b⁺, (−b)⁺`.
    pub fn default_for(tree: ScenarioTree) -> Self {
        let mid = if tree.is_full_binary() {
            let b = AdaptedProcess::brownian(tree).map(|x| 1.0 - x.abs());
            hitting_rule(&b, &AdaptedProcess::zeros(tree), 0.0).expect("same tree")
        } else {
            StoppingRule::at_level(tree, tree.steps() / 2)
        };
        let mut payoffs: Vec<Expr> = (0..=6).map(|k| Expr::Const(0.5 * k as f64)).collect();
        payoffs.push(Expr::abs(Expr::B));
        payoffs.push(Expr::neg_part(Expr::neg(Expr::B)));
        payoffs.push(Expr::neg_part(Expr::B));
        Self {
            rules: vec![StoppingRule::root(tree), mid, StoppingRule::terminal(tree)],
            payoffs,
            sample: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConverseProbeReport {
    pub members: usize,
    pub pairs_checked: usize,
    /// Verdict A: `ε^{r,S}_{g1,σ}[ξ|F_τ] >= ε^{r,S}_{g2,σ}[ξ|F_τ]` on every
    /// family member and every `τ <= σ` in the family.
    pub solution_order_holds: bool,
    /// Largest `(ε_{g2} − ε_{g1})⁺` observed.
    pub max_solution_shortfall: f64,
    /// Verdict B: `g1 >= g2` on the sampled region.
    pub generator_order_holds: bool,
    pub max_generator_shortfall: f64,
    /// Worst sampled violations of `g1 >= g2`, largest gap first.
    pub violation_sites: Vec<ViolationSite>,
    pub region: SampleSpec,
    /// `10 dt L`.
    pub allowance: f64,
    /// A held while B failed beyond the allowance.
    pub falsified: bool,
}

const MAX_SITES: usize = 16;

/// Compares reflected values over a terminal family against the sampled
/// ordering of the drivers on `[0, T] × [C, C + 5] × [−5, 5]` (the whole
/// `y` range `[−5, 5]` when neither driver depends on `y`).
pub fn converse_probe(
    tree: ScenarioTree,
    g1: &GeneratorSpec,
    g2: &GeneratorSpec,
    obstacle: &ObstacleSpec,
    family: &FamilySpec,
) -> Result<ConverseProbeReport> {
    let c = obstacle
        .bound()
        .ok_or_else(|| Error::Precondition("the probe needs an obstacle bound C".into()))?;
    if obstacle.tree() != tree || family.rules.iter().any(|r| r.tree() != tree) {
        return Err(Error::TreeMismatch);
    }
    if let Some(p) = family
        .payoffs
        .iter()
        .find(|p| p.depends_on_y() || p.depends_on_z())
    {
        return Err(Error::Precondition(format!(
            "payoff {p} must depend on (t, b) only"
        )));
    }
    let mut members = 0;
    let mut pairs = 0;
    let mut shortfall = 0.0f64;
    for sigma in &family.rules {
        let preceding: Vec<&StoppingRule> = family
            .rules
            .iter()
            .filter(|tau| tau.precedes(sigma).unwrap_or(false))
            .collect();
        let stops = sigma.stop_nodes();
        for payoff in &family.payoffs {
            let values = AdaptedProcess::from_fn(tree, |i, j| {
                c + payoff.eval(&Point {
                    t: tree.time(i),
                    b: tree.brownian(i, j),
                    ..Point::default()
                })
            });
            if let Some(&(i, j)) = stops.iter().find(|&&(i, j)| values.value(i, j) < c) {
                return Err(Error::Precondition(format!(
                    "family member below the obstacle bound at level {i}, node {j}"
                )));
            }
            let xi = TerminalCondition::new(sigma.clone(), values)?;
            let y1 = solve_rbsde(tree, g1, &xi, obstacle)?.y;
            let y2 = solve_rbsde(tree, g2, &xi, obstacle)?.y;
            members += 1;
            for tau in &preceding {
                pairs += 1;
                for (i, j) in tau.stop_nodes() {
                    shortfall = shortfall.max(y2.value(i, j) - y1.value(i, j));
                }
            }
        }
    }
    let y_free = !g1.expr().depends_on_y() && !g2.expr().depends_on_y();
    let horizon = tree.grid().horizon();
    let region = family.sample.unwrap_or(SampleSpec {
        t_range: (0.0, horizon),
        y_range: if y_free { (-5.0, 5.0) } else { (c, c + 5.0) },
        z_range: (-5.0, 5.0),
        points: 21,
    });
    let mut sites: Vec<ViolationSite> = Vec::new();
    let mut g_short = 0.0f64;
    for t in region.ts() {
        for y in region.ys() {
            for z in region.zs() {
                let gap = g2.eval(t, y, z) - g1.eval(t, y, z);
                g_short = g_short.max(gap);
                if gap > THEOREM_TOL {
                    sites.push(ViolationSite { t, y, z, gap });
                }
            }
        }
    }
    sites.sort_by(|a, b| b.gap.total_cmp(&a.gap));
    sites.truncate(MAX_SITES);
    let solution_order_holds = shortfall <= THEOREM_TOL;
    let generator_order_holds = g_short <= THEOREM_TOL;
    let allowance = 10.0 * tree.dt() * g1.lipschitz().max(g2.lipschitz());
    Ok(ConverseProbeReport {
        members,
        pairs_checked: pairs,
        solution_order_holds,
        max_solution_shortfall: shortfall.max(0.0),
        generator_order_holds,
        max_generator_shortfall: g_short.max(0.0),
        violation_sites: sites,
        region,
        allowance,
        falsified: solution_order_holds && !generator_order_holds && g_short > allowance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::AssumptionFlags;
    use crate::lattice::{build_tree, TimeGrid, TreeMode};

    fn tree() -> ScenarioTree {
        build_tree(TimeGrid::new(1.0, 6).unwrap(), TreeMode::FullBinary).unwrap()
    }

    #[test]
    fn equal_drivers() {
        let tr = tree();
        let g =
            GeneratorSpec::parse("(+ (* 0.3 y) (abs z))", 1.3, AssumptionFlags::default()).unwrap();
        let r = converse_probe(
            tr,
            &g,
            &g,
            &ObstacleSpec::constant(tr, 0.2),
            &FamilySpec::default_for(tr),
        )
        .unwrap();
        assert!(r.solution_order_holds && r.generator_order_holds && !r.falsified);
        assert_eq!(r.max_solution_shortfall, 0.0);
        assert_eq!(r.max_generator_shortfall, 0.0);
        assert_eq!(r.members, 30);
    }

    #[test]
    fn y_free_pair() {
        let tr = tree();
        let g1 = GeneratorSpec::parse("(abs z)", 1.0, AssumptionFlags::default()).unwrap();
        let g2 = GeneratorSpec::parse("(* 0.5 (abs z))", 0.5, AssumptionFlags::default()).unwrap();
        let r = converse_probe(
            tr,
            &g1,
            &g2,
            &ObstacleSpec::constant(tr, 0.0),
            &FamilySpec::default_for(tr),
        )
        .unwrap();
        assert!(r.solution_order_holds && r.generator_order_holds);
        assert_eq!(r.region.y_range, (-5.0, 5.0));
        let back = converse_probe(
            tr,
            &g2,
            &g1,
            &ObstacleSpec::constant(tr, 0.0),
            &FamilySpec::default_for(tr),
        )
        .unwrap();
        assert!(!back.solution_order_holds && !back.generator_order_holds && !back.falsified);
        for s in &back.violation_sites {
            assert_eq!(s.recheck(&g2, &g1), s.gap);
        }
    }

    #[test]
    fn needs_bound() {
        let tr = tree();
        let s = ObstacleSpec::unbounded(AdaptedProcess::zeros(tr));
        let g = GeneratorSpec::zero();
        assert!(matches!(
            converse_probe(tr, &g, &g, &s, &FamilySpec::default_for(tr)),
            Err(Error::Precondition(_))
        ));
    }
}
