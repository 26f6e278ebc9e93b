//! Discretely reflected BSDE solver and optimal-stopping oracles.
//!
//! At a live node the unreflected implicit step gives `Ỹ`; the solution is
//! `Y = max(Ỹ, S)` with reflection increment `ΔK = Y − Ỹ`. The increasing
//! process accumulates forward, `K_{i+1} = K_i + ΔK_i`, from `K_0 = 0`, so
//! that `Y_i = E[Y_{i+1}] + g dt + (K_{i+1} − K_i)` on every edge.

use serde::{Deserialize, Serialize};

use crate::bsde::{sweep, NodeKind, TerminalCondition};
use crate::error::{Error, Result};
use crate::generator::GeneratorSpec;
use crate::lattice::{
    compensated_sum, conditional_expectation, hitting_rule, AdaptedProcess, ScenarioTree,
    StoppingRule,
};

/// Default absolute tolerance for contact and exercise detection.
pub const CONTACT_TOL: f64 = 1e-9;

/// Tolerance for a declared obstacle bound.
const BOUND_SLACK: f64 = 1e-12;

/// Largest spread of `K` over the paths into a recombining node that still
/// counts as path-independent.
const K_SPREAD_TOL: f64 = 1e-12;

/// Largest depth accepted by [`enumerate_stopping_oracle`].
pub const ENUMERATION_DEPTH: usize = 4;

/// Lower barrier `S` with an optional declared upper bound `sup S <= C`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObstacleSpec {
    s: AdaptedProcess,
    bound: Option<f64>,
}

impl ObstacleSpec {
    pub fn new(s: AdaptedProcess, bound: Option<f64>) -> Result<Self> {
        if let Some(c) = bound {
            let max = s.max_value();
            if max > c + BOUND_SLACK {
                return Err(Error::ObstacleAboveBound {
                    value: max,
                    bound: c,
                });
            }
        }
        Ok(Self { s, bound })
    }

    pub fn unbounded(s: AdaptedProcess) -> Self {
        Self { s, bound: None }
    }

    /// `S ≡ c`, declared bounded by `c`.
    pub fn constant(tree: ScenarioTree, c: f64) -> Self {
        Self {
            s: AdaptedProcess::constant(tree, c),
            bound: Some(c),
        }
    }

    pub fn process(&self) -> &AdaptedProcess {
        &self.s
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    pub fn tree(&self) -> ScenarioTree {
        self.s.tree()
    }

    /// Largest `|S_{i+1} − S_i| / sqrt(dt)` over all edges, a continuity proxy.
    pub fn increment_ratio(&self) -> f64 {
        let tree = self.tree();
        let sq = tree.grid().sqrt_dt();
        let mut worst = 0.0f64;
        for i in 0..tree.steps() {
            for j in 0..tree.width(i) {
                let v = self.s.value(i, j);
                for c in [tree.up_child(i, j), tree.down_child(i, j)] {
                    worst = worst.max((self.s.value(i + 1, c) - v).abs() / sq);
                }
            }
        }
        worst
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbsdeDiagnostics {
    /// `max |(Y − S) ΔK|` over live nodes; zero by construction.
    pub skorokhod_residual: f64,
    /// `min (Y − S)` over nodes not past the terminal rule.
    pub min_y_minus_s: f64,
    pub max_iterations: usize,
    pub max_residual: f64,
    /// Largest spread of `K` across the paths reaching a node (0 on full trees).
    pub k_path_spread: f64,
    /// Largest value of `K` when defined.
    pub k_max: Option<f64>,
    /// Smallest `ΔK`; negative values would break monotonicity of `K`.
    pub min_increment: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RbsdeSolution {
    pub y: AdaptedProcess,
    pub z: AdaptedProcess,
    /// Reflection applied at each node.
    pub dk: AdaptedProcess,
    /// Cumulative reflection. `None` on recombining trees when `K` depends on
    /// the path into some node.
    pub k: Option<AdaptedProcess>,
    pub diagnostics: RbsdeDiagnostics,
    kinds: Vec<Vec<NodeKind>>,
}

impl RbsdeSolution {
    pub fn root(&self) -> f64 {
        self.y.root()
    }

    /// Whether `(level, node)` lies strictly past the terminal rule.
    pub fn is_past_terminal_rule(&self, level: usize, node: usize) -> bool {
        self.kinds[level][node] == NodeKind::Beyond
    }

    /// `K` on full binary trees, where it is always defined.
    pub fn k_full(&self) -> Result<&AdaptedProcess> {
        self.k.as_ref().ok_or(Error::RequiresFullBinary(
            "path-dependent reflection process",
        ))
    }
}

/// Forward accumulation of `ΔK`.
fn accumulate(tree: ScenarioTree, dk: &AdaptedProcess) -> (Option<AdaptedProcess>, f64) {
    let n = tree.steps();
    let mut lo = vec![vec![0.0f64]];
    let mut hi = vec![vec![0.0f64]];
    let mut spread = 0.0f64;
    for i in 1..=n {
        let mut l = vec![f64::INFINITY; tree.width(i)];
        let mut h = vec![f64::NEG_INFINITY; tree.width(i)];
        for j in 0..tree.width(i) {
            for (p, _) in tree.parents(i, j) {
                l[j] = l[j].min(lo[i - 1][p] + dk.value(i - 1, p));
                h[j] = h[j].max(hi[i - 1][p] + dk.value(i - 1, p));
            }
            spread = spread.max(h[j] - l[j]);
        }
        lo.push(l);
        hi.push(h);
    }
    let k = (spread <= K_SPREAD_TOL)
        .then(|| AdaptedProcess::from_levels(tree, lo).expect("shape matches the tree"));
    (k, spread)
}

/// Solves the reflected BSDE with driver `g`, terminal data `xi` and lower
/// barrier `obstacle`. Past the terminal rule the solution is frozen at
/// `(ξ_σ, 0)` with no reflection.
pub fn solve_rbsde(
    tree: ScenarioTree,
    g: &GeneratorSpec,
    xi: &TerminalCondition,
    obstacle: &ObstacleSpec,
) -> Result<RbsdeSolution> {
    let s = obstacle.process();
    let sw = sweep(tree, g, xi, Some(s))?;
    let (k, spread) = accumulate(tree, &sw.dk);
    let mut skorokhod = 0.0f64;
    let mut min_gap = f64::INFINITY;
    let mut min_increment = f64::INFINITY;
    for (i, j, y) in sw.y.iter() {
        if sw.kinds[i][j] == NodeKind::Beyond {
            continue;
        }
        let gap = y - s.value(i, j);
        let d = sw.dk.value(i, j);
        skorokhod = skorokhod.max((gap * d).abs());
        min_gap = min_gap.min(gap);
        min_increment = min_increment.min(d);
    }
    let diagnostics = RbsdeDiagnostics {
        skorokhod_residual: skorokhod,
        min_y_minus_s: min_gap,
        max_iterations: sw.max_iterations,
        max_residual: sw.max_residual,
        k_path_spread: spread,
        k_max: k.as_ref().map(|k| k.max_value()),
        min_increment,
    };
    Ok(RbsdeSolution {
        y: sw.y,
        z: sw.z,
        dk: sw.dk,
        k,
        diagnostics,
        kinds: sw.kinds,
    })
}

/// `ε^r_g[ξ]`, the root value.
pub fn reflected_value(
    tree: ScenarioTree,
    g: &GeneratorSpec,
    xi: &TerminalCondition,
    obstacle: &ObstacleSpec,
) -> Result<f64> {
    Ok(solve_rbsde(tree, g, xi, obstacle)?.root())
}

/// `ε^{r,S}_g[ξ | F_τ]` as terminal data measurable at `at`.
pub fn reflected_conditional(
    tree: ScenarioTree,
    g: &GeneratorSpec,
    xi: &TerminalCondition,
    obstacle: &ObstacleSpec,
    at: &StoppingRule,
) -> Result<TerminalCondition> {
    if !at.precedes(xi.rule())? {
        return Err(Error::RuleOrderViolated(
            "conditioning rule must stop no later than the terminal rule",
        ));
    }
    let sol = solve_rbsde(tree, g, xi, obstacle)?;
    TerminalCondition::new(at.clone(), sol.y)
}

fn horizon_data(tree: ScenarioTree, xi: &TerminalCondition, obstacle: &ObstacleSpec) -> Result<()> {
    if xi.tree() != tree || obstacle.tree() != tree {
        return Err(Error::TreeMismatch);
    }
    if !xi.rule().is_terminal() {
        return Err(Error::Precondition(
            "optimal-stopping oracles take terminal data at the horizon".into(),
        ));
    }
    let n = tree.steps();
    for j in 0..tree.width(n) {
        let (v, s) = (xi.value(n, j), obstacle.process().value(n, j));
        if v < s {
            return Err(Error::TerminalBelowObstacle {
                level: n,
                node: j,
                xi: v,
                obstacle: s,
            });
        }
    }
    Ok(())
}

/// Snell envelope `Y_i = max(S_i, E[Y_{i+1}])` of the obstacle with terminal
/// reward `ξ`.
pub fn snell_oracle(
    tree: ScenarioTree,
    xi: &TerminalCondition,
    obstacle: &ObstacleSpec,
) -> Result<AdaptedProcess> {
    horizon_data(tree, xi, obstacle)?;
    let n = tree.steps();
    let s = obstacle.process();
    let mut levels: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    levels[n] = xi.values().level(n).to_vec();
    for i in (0..n).rev() {
        levels[i] = (0..tree.width(i))
            .map(|j| {
                let next = &levels[i + 1];
                let cont =
                    conditional_expectation(next[tree.up_child(i, j)], next[tree.down_child(i, j)]);
                s.value(i, j).max(cont)
            })
            .collect();
    }
    AdaptedProcess::from_levels(tree, levels)
}

/// `sup_τ E[S_τ 1{τ<N} + ξ 1{τ=N}]` by exhaustive enumeration of every
/// first-hit rule on a full binary tree with at most four steps.
pub fn enumerate_stopping_oracle(
    tree: ScenarioTree,
    xi: &TerminalCondition,
    obstacle: &ObstacleSpec,
) -> Result<f64> {
    if !tree.is_full_binary() {
        return Err(Error::RequiresFullBinary("stopping-rule enumeration"));
    }
    let n = tree.steps();
    if n > ENUMERATION_DEPTH {
        return Err(Error::DepthExceeded {
            depth: n,
            limit: ENUMERATION_DEPTH,
        });
    }
    horizon_data(tree, xi, obstacle)?;
    let s = obstacle.process();
    let inner = (1usize << n) - 1;
    let weight = 0.5f64.powi(n as i32);
    let mut best = f64::NEG_INFINITY;
    for mask in 0u64..(1u64 << inner) {
        // bit (2^i - 1 + j) flags node j at level i
        let flagged = |i: usize, j: usize| mask >> ((1usize << i) - 1 + j) & 1 == 1;
        let value = compensated_sum((0..tree.width(n)).map(|leaf| {
            let stop = (0..n).find(|&i| flagged(i, tree.ancestor_of_leaf(leaf, i)));
            weight
                * match stop {
                    Some(i) => s.value(i, tree.ancestor_of_leaf(leaf, i)),
                    None => xi.value(n, leaf),
                }
        }));
        best = best.max(value);
    }
    Ok(best)
}

/// First time the solution touches the obstacle, `inf{t : Y_t <= S_t + tol}`.
pub fn exercise_rule(
    sol: &RbsdeSolution,
    obstacle: &ObstacleSpec,
    tol: f64,
) -> Result<StoppingRule> {
    hitting_rule(&sol.y, obstacle.process(), tol)
}
