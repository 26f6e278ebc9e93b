//! Implicit backward solver for `y_t = ξ + ∫ g(s, y, z) ds − ∫ z dB` and the
//! g-expectation operators built on it.
//!
//! One step at a live node reads
//!
//! ```text
//! z = (y_up − y_down) / (2 sqrt(dt)),   y = E[y'] + g(t, y, z) dt,
//! ```
//!
//! solved in closed form when `g` is affine in `y` and by fixed-point
//! iteration otherwise. Past the stopping rule of the terminal condition the
//! pair is extended by `(ξ_σ, 0)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generator::GeneratorSpec;
use crate::lattice::{
    conditional_expectation, martingale_coefficient, AdaptedProcess, ScenarioTree, StoppingRule,
};

/// Fixed-point residual target.
pub const FIXED_POINT_TOL: f64 = 1e-12;
/// Fixed-point iteration cap.
pub const MAX_ITERATIONS: usize = 200;

const PARALLEL_WIDTH: usize = 4096;

/// Terminal data `ξ`, measurable at the stopping rule `σ`.
///
/// Only the values at the nodes where some path stops are read. On
/// recombining trees the values at nodes lying past `σ` serve as the
/// extension of the solution there.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalCondition {
    rule: StoppingRule,
    values: AdaptedProcess,
}

impl TerminalCondition {
    pub fn new(rule: StoppingRule, values: AdaptedProcess) -> Result<Self> {
        if rule.tree() != values.tree() {
            return Err(Error::TreeMismatch);
        }
        Ok(Self { rule, values })
    }

    /// `ξ` at the horizon; only level `N` of `values` is used.
    pub fn at_horizon(values: AdaptedProcess) -> Self {
        Self {
            rule: StoppingRule::terminal(values.tree()),
            values,
        }
    }

    pub fn constant(tree: ScenarioTree, c: f64) -> Self {
        Self::at_horizon(AdaptedProcess::constant(tree, c))
    }

    /// `f(B_T)`.
    pub fn of_brownian(tree: ScenarioTree, f: impl Fn(f64) -> f64) -> Self {
        Self::at_horizon(AdaptedProcess::from_fn(tree, |i, j| f(tree.brownian(i, j))))
    }

    pub fn tree(&self) -> ScenarioTree {
        self.values.tree()
    }

    pub fn rule(&self) -> &StoppingRule {
        &self.rule
    }

    pub fn values(&self) -> &AdaptedProcess {
        &self.values
    }

    pub fn value(&self, level: usize, node: usize) -> f64 {
        self.values.value(level, node)
    }

    /// `ξ` read on every stopping node, as `(level, node, value)`.
    pub fn stop_values(&self) -> Vec<(usize, usize, f64)> {
        self.rule
            .stop_nodes()
            .into_iter()
            .map(|(i, j)| (i, j, self.values.value(i, j)))
            .collect()
    }

    /// Nodewise `a <= b + tol` on the stopping nodes of a shared rule.
    pub fn dominated_by(&self, other: &Self, tol: f64) -> Result<bool> {
        if self.rule.first_hit_nodes() != other.rule.first_hit_nodes() {
            return Err(Error::Precondition(
                "terminal conditions use different stopping rules".into(),
            ));
        }
        Ok(self
            .rule
            .stop_nodes()
            .into_iter()
            .all(|(i, j)| self.value(i, j) <= other.value(i, j) + tol))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BsdeSolution {
    pub y: AdaptedProcess,
    pub z: AdaptedProcess,
    /// Most fixed-point iterations used at any node (0 for closed-form steps).
    pub max_iterations: usize,
    /// Largest one-step residual `|y − E[y'] − g dt|` left at a live node.
    pub max_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum NodeKind {
    Live,
    Stop,
    Beyond,
}

/// Classification of every node with respect to the terminal rule.
pub(crate) fn classify(rule: &StoppingRule) -> Result<Vec<Vec<NodeKind>>> {
    let mask = rule.stopped_mask()?;
    let first = rule.first_hit_nodes();
    Ok(mask
        .iter()
        .zip(&first)
        .map(|(m, f)| {
            m.iter()
                .zip(f)
                .map(|(&stopped, &hit)| match (stopped, hit) {
                    (_, true) => NodeKind::Stop,
                    (true, false) => NodeKind::Beyond,
                    (false, false) => NodeKind::Live,
                })
                .collect()
        })
        .collect())
}

/// Output of the shared backward sweep.
pub(crate) struct Sweep {
    pub y: AdaptedProcess,
    pub z: AdaptedProcess,
    pub dk: AdaptedProcess,
    pub kinds: Vec<Vec<NodeKind>>,
    pub max_iterations: usize,
    pub max_residual: f64,
}

struct Step {
    y: f64,
    z: f64,
    dk: f64,
    iterations: usize,
    residual: f64,
}

/// Solves `y = e + g(t, y, z) dt` at one node.
fn implicit_step(
    g: &GeneratorSpec,
    level: usize,
    node: usize,
    t: f64,
    e: f64,
    z: f64,
    dt: f64,
) -> Result<(f64, usize, f64)> {
    let residual_of = |y: f64| (y - e - g.eval_at(level, node, t, y, z) * dt).abs();
    if let Some((c0, c1)) = g.affine_at(level, node, t, z) {
        let y = (e + c0 * dt) / (1.0 - c1 * dt);
        return Ok((y, 0, residual_of(y)));
    }
    let mut y = e;
    for k in 1..=MAX_ITERATIONS {
        let next = e + g.eval_at(level, node, t, y, z) * dt;
        y = next;
        let r = residual_of(y);
        if r <= FIXED_POINT_TOL.max(4.0 * f64::EPSILON * y.abs()) {
            return Ok((y, k, r));
        }
    }
    Err(Error::NonConvergence {
        level,
        node,
        residual: residual_of(y),
    })
}

pub(crate) fn check_contraction(tree: ScenarioTree, g: &GeneratorSpec) -> Result<()> {
    let dt = tree.dt();
    if g.lipschitz() * dt >= 1.0 {
        return Err(Error::ContractionViolated {
            l: g.lipschitz(),
            dt,
        });
    }
    if !g.restriction_shape_matches(&tree) {
        return Err(Error::TreeMismatch);
    }
    Ok(())
}

/// Backward sweep, reflected at `obstacle` when one is given.
pub(crate) fn sweep(
    tree: ScenarioTree,
    g: &GeneratorSpec,
    xi: &TerminalCondition,
    obstacle: Option<&AdaptedProcess>,
) -> Result<Sweep> {
    if xi.tree() != tree || obstacle.is_some_and(|s| s.tree() != tree) {
        return Err(Error::TreeMismatch);
    }
    check_contraction(tree, g)?;
    let kinds = classify(xi.rule())?;
    let frozen = if tree.is_full_binary() {
        xi.values().stopped_at(xi.rule())?
    } else {
        xi.values().clone()
    };
    let n = tree.steps();
    let dt = tree.dt();
    let mut y = AdaptedProcess::zeros(tree);
    let mut z = AdaptedProcess::zeros(tree);
    let mut dk = AdaptedProcess::zeros(tree);
    let mut max_iterations = 0;
    let mut max_residual = 0.0f64;

    for i in (0..=n).rev() {
        let t = tree.time(i);
        let next = (i < n).then(|| y.level(i + 1).to_vec());
        let node_step = |j: usize| -> Result<Step> {
            match kinds[i][j] {
                NodeKind::Stop => {
                    let v = xi.value(i, j);
                    if let Some(s) = obstacle {
                        if v < s.value(i, j) {
                            return Err(Error::TerminalBelowObstacle {
                                level: i,
                                node: j,
                                xi: v,
                                obstacle: s.value(i, j),
                            });
                        }
                    }
                    Ok(Step {
                        y: v,
                        z: 0.0,
                        dk: 0.0,
                        iterations: 0,
                        residual: 0.0,
                    })
                }
                NodeKind::Beyond => Ok(Step {
                    y: frozen.value(i, j),
                    z: 0.0,
                    dk: 0.0,
                    iterations: 0,
                    residual: 0.0,
                }),
                NodeKind::Live => {
                    let next = next.as_ref().expect("live nodes lie before the horizon");
                    let up = next[tree.up_child(i, j)];
                    let down = next[tree.down_child(i, j)];
                    let e = conditional_expectation(up, down);
                    let zz = martingale_coefficient(up, down, dt);
                    let (raw, iterations, residual) = implicit_step(g, i, j, t, e, zz, dt)?;
                    let (yy, k) = match obstacle {
                        Some(s) if s.value(i, j) > raw => (s.value(i, j), s.value(i, j) - raw),
                        _ => (raw, 0.0),
                    };
                    Ok(Step {
                        y: yy,
                        z: zz,
                        dk: k,
                        iterations,
                        residual,
                    })
                }
            }
        };
        let width = tree.width(i);
        let steps: Vec<Step> = if width >= PARALLEL_WIDTH {
            (0..width)
                .into_par_iter()
                .map(node_step)
                .collect::<Result<_>>()?
        } else {
            (0..width).map(node_step).collect::<Result<_>>()?
        };
        for (j, s) in steps.into_iter().enumerate() {
            y.set(i, j, s.y);
            z.set(i, j, s.z);
            dk.set(i, j, s.dk);
            max_iterations = max_iterations.max(s.iterations);
            max_residual = max_residual.max(s.residual);
        }
    }
    Ok(Sweep {
        y,
        z,
        dk,
        kinds,
        max_iterations,
        max_residual,
    })
}

/// Solves the BSDE with driver `g` and terminal data `xi`.
///
/// Fails with [`Error::ContractionViolated`] when `L dt >= 1` and with
/// [`Error::RequiresFullBinary`] for a path-dependent terminal rule on a
/// recombining tree.
pub fn solve_bsde(
    tree: ScenarioTree,
    g: &GeneratorSpec,
    xi: &TerminalCondition,
) -> Result<BsdeSolution> {
    let s = sweep(tree, g, xi, None)?;
    Ok(BsdeSolution {
        y: s.y,
        z: s.z,
        max_iterations: s.max_iterations,
        max_residual: s.max_residual,
    })
}

/// `ε_g[ξ]`, the root value of the solution.
pub fn g_expectation(tree: ScenarioTree, g: &GeneratorSpec, xi: &TerminalCondition) -> Result<f64> {
    Ok(solve_bsde(tree, g, xi)?.y.root())
}

/// `ε_g[ξ | F_τ]` as terminal data measurable at `at`.
pub fn conditional_g_expectation(
    tree: ScenarioTree,
    g: &GeneratorSpec,
    xi: &TerminalCondition,
    at: &StoppingRule,
) -> Result<TerminalCondition> {
    if !at.precedes(xi.rule())? {
        return Err(Error::RuleOrderViolated(
            "conditioning rule must stop no later than the terminal rule",
        ));
    }
    let sol = solve_bsde(tree, g, xi)?;
    TerminalCondition::new(at.clone(), sol.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{restrict_generator, AssumptionFlags, Expr};
    use crate::lattice::{build_tree, hitting_rule, TimeGrid, TreeMode};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tree(t: f64, n: usize, mode: TreeMode) -> ScenarioTree {
        build_tree(TimeGrid::new(t, n).unwrap(), mode).unwrap()
    }

    fn driver(text: &str, l: f64) -> GeneratorSpec {
        GeneratorSpec::parse(text, l, AssumptionFlags::default()).unwrap()
    }

    #[test]
    fn driverless_solution_is_the_martingale() {
        let tr = tree(1.0, 6, TreeMode::FullBinary);
        let xi = TerminalCondition::at_horizon(AdaptedProcess::from_fn(tr, |i, j| {
            (i * 7 + j * 13 % 5) as f64 * 0.1
        }));
        let sol = solve_bsde(tr, &GeneratorSpec::zero(), &xi).unwrap();
        let mut m = xi.values().clone();
        for i in (0..6).rev() {
            for j in 0..tr.width(i) {
                let (u, d) = (
                    m.value(i + 1, tr.up_child(i, j)),
                    m.value(i + 1, tr.down_child(i, j)),
                );
                m.set(i, j, (u + d) / 2.0);
                assert_eq!(sol.z.value(i, j), (u - d) / (2.0 * tr.dt().sqrt()));
            }
        }
        assert_eq!(sol.y, m);
        assert_eq!(sol.max_iterations, 0);
    }

    #[test]
    fn constant_driver_example() {
        let tr = tree(1.0, 50, TreeMode::Recombining);
        let g = GeneratorSpec::constant(1.0 / 3.0);
        let sol = solve_bsde(tr, &g, &TerminalCondition::constant(tr, 1.0 / 3.0)).unwrap();
        for (i, _, v) in sol.y.iter() {
            assert_abs_diff_eq!(v, 2.0 / 3.0 - tr.time(i) / 3.0, epsilon = 1e-14);
        }
        assert_eq!(sol.z.max_value(), 0.0);
        assert_abs_diff_eq!(sol.y.root(), 2.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn girsanov_drift() {
        let tr = tree(1.0, 1000, TreeMode::Recombining);
        let g = driver("(* 0.3 z)", 0.3);
        let y0 = g_expectation(tr, &g, &TerminalCondition::of_brownian(tr, |b| b)).unwrap();
        assert!((y0 - 0.3).abs() < 5e-3, "{y0}");
        // z = 1 on every node, so each step adds exactly 0.3 dt
        assert_abs_diff_eq!(y0, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn girsanov_by_enumeration() {
        // hand recursion on a 10-step tree: y_i = E[y_{i+1}] + θ z dt with z ≡ 1
        let tr = tree(1.0, 10, TreeMode::FullBinary);
        let sol = solve_bsde(
            tr,
            &driver("(* 0.3 z)", 0.3),
            &TerminalCondition::of_brownian(tr, |b| b),
        )
        .unwrap();
        for (i, j, v) in sol.y.iter() {
            let expected = tr.brownian(i, j) + 0.3 * (1.0 - tr.time(i));
            assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_preservation_under_a3() {
        let tr = tree(1.0, 40, TreeMode::Recombining);
        let g = GeneratorSpec::parse(
            "(min (* 2 (negpart (+ y -1))) (abs z))",
            2.0,
            AssumptionFlags::default().with_a3(),
        )
        .unwrap();
        for c in [-1.0, 0.0, 0.7, 3.0] {
            assert_eq!(
                g_expectation(tr, &g, &TerminalCondition::constant(tr, c)).unwrap(),
                c
            );
        }
        assert_eq!(
            g_expectation(
                tr,
                &GeneratorSpec::zero(),
                &TerminalCondition::of_brownian(tr, |b| b)
            )
            .unwrap(),
            0.0
        );
    }

    #[test]
    fn nonlinear_steps_converge_with_small_residual() {
        let tr = tree(1.0, 12, TreeMode::FullBinary);
        let g = driver("(+ (abs y) (min z (* -1 y)))", 2.0);
        let sol = solve_bsde(tr, &g, &TerminalCondition::of_brownian(tr, |b| b.sin())).unwrap();
        assert!(sol.max_iterations > 0);
        assert!(sol.max_residual <= FIXED_POINT_TOL);
        for i in 0..12 {
            for j in 0..tr.width(i) {
                let (u, d) = (sol.y.value(i + 1, 2 * j + 1), sol.y.value(i + 1, 2 * j));
                let z = (u - d) / (2.0 * tr.dt().sqrt());
                let y = sol.y.value(i, j);
                let r = y - (u + d) / 2.0 - g.eval(tr.time(i), y, z) * tr.dt();
                assert!(r.abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn contraction_guard() {
        let tr = tree(1.0, 4, TreeMode::Recombining);
        let g = driver("(* 4 y)", 4.0);
        assert!(matches!(
            solve_bsde(tr, &g, &TerminalCondition::constant(tr, 1.0)),
            Err(Error::ContractionViolated { .. })
        ));
    }

    #[test]
    fn conditional_expectation_endpoints() {
        let tr = tree(1.0, 6, TreeMode::FullBinary);
        let g = driver("(+ (* 0.5 y) (* -0.4 (abs z)))", 0.5);
        let xi = TerminalCondition::of_brownian(tr, |b| b * b);
        let root = conditional_g_expectation(tr, &g, &xi, &StoppingRule::root(tr)).unwrap();
        assert_eq!(root.value(0, 0), g_expectation(tr, &g, &xi).unwrap());
        let term = conditional_g_expectation(tr, &g, &xi, &StoppingRule::terminal(tr)).unwrap();
        for j in 0..tr.width(6) {
            assert_eq!(term.value(6, j), xi.value(6, j));
        }
        let late =
            TerminalCondition::new(StoppingRule::at_level(tr, 3), xi.values().clone()).unwrap();
        assert!(matches!(
            conditional_g_expectation(tr, &g, &late, &StoppingRule::at_level(tr, 4)),
            Err(Error::RuleOrderViolated(_))
        ));
    }

    fn random_rule(tr: ScenarioTree, seed: u64) -> StoppingRule {
        let b = AdaptedProcess::brownian(tr);
        let level = 0.3 + (seed % 7) as f64 * 0.2;
        let a = b.map(|x| level - x.abs());
        hitting_rule(&a, &AdaptedProcess::zeros(tr), 0.0).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn tower_property(seed in 0u64..1000, a in -0.8f64..0.8, b in -1.5f64..1.5) {
            let tr = tree(1.0, 8, TreeMode::FullBinary);
            let g = GeneratorSpec::new(
                Expr::add(Expr::scale(a, Expr::Y), Expr::scale(b, Expr::abs(Expr::Z))),
                a.abs() + b.abs(),
                AssumptionFlags::default(),
            ).unwrap();
            let sigma = random_rule(tr, seed);
            let tau = sigma.earliest(&StoppingRule::at_level(tr, (seed % 5) as usize)).unwrap();
            let xi = TerminalCondition::new(sigma, AdaptedProcess::from_fn(tr, |i, j| (tr.brownian(i, j) * 3.0).cos() + i as f64 * 0.1)).unwrap();
            let inner = conditional_g_expectation(tr, &g, &xi, &tau).unwrap();
            let nested = g_expectation(tr, &g, &inner).unwrap();
            let direct = g_expectation(tr, &g, &xi).unwrap();
            prop_assert!((nested - direct).abs() <= 1e-12);
        }

        #[test]
        fn restriction_identity(seed in 0u64..1000, a in -1.0f64..1.0, c in -1.0f64..1.0) {
            let tr = tree(1.0, 10, TreeMode::FullBinary);
            let g = GeneratorSpec::new(
                Expr::add(Expr::scale(a, Expr::Y), Expr::add(Expr::abs(Expr::Z), Expr::scale(c, Expr::Time))),
                a.abs() + 1.0,
                AssumptionFlags::default(),
            ).unwrap();
            let tau = random_rule(tr, seed);
            let values = AdaptedProcess::from_fn(tr, |i, j| tr.brownian(i, j).powi(2) - i as f64 * 0.05);
            let at_tau = TerminalCondition::new(tau.clone(), values.clone()).unwrap();
            let lifted = TerminalCondition::at_horizon(values.stopped_at(&tau).unwrap());
            let left = g_expectation(tr, &g, &at_tau).unwrap();
            let right = g_expectation(tr, &restrict_generator(&g, &tau).unwrap(), &lifted).unwrap();
            prop_assert!((left - right).abs() <= 1e-12);
        }

        #[test]
        fn monotone_in_data(a in -1.0f64..1.0, b in -1.0f64..1.0, c1 in -1.0f64..1.0, gap in 0.0f64..1.0, shift in 0.0f64..0.5) {
            let tr = tree(1.0, 8, TreeMode::FullBinary);
            let l = a.abs() + b.abs();
            let mk = |c: f64| GeneratorSpec::new(
                Expr::add(Expr::add(Expr::scale(a, Expr::Y), Expr::scale(b, Expr::Z)), Expr::Const(c)),
                l,
                AssumptionFlags::default(),
            ).unwrap();
            let xi1 = TerminalCondition::of_brownian(tr, |x| x.sin());
            let xi2 = TerminalCondition::of_brownian(tr, |x| x.sin() + shift * x.abs());
            let y1 = solve_bsde(tr, &mk(c1), &xi1).unwrap().y;
            let y2 = solve_bsde(tr, &mk(c1 + gap), &xi2).unwrap().y;
            for (i, j, v) in y1.iter() {
                prop_assert!(v <= y2.value(i, j) + 1e-10);
            }
        }

        #[test]
        fn strict_at_root(seed in 0usize..256, bump in 1e-6f64..1.0) {
            let tr = tree(1.0, 8, TreeMode::FullBinary);
            let g = driver("(+ (* -0.7 y) (* 0.9 z))", 1.6);
            let xi1 = TerminalCondition::of_brownian(tr, |x| x.cos());
            let v2 = AdaptedProcess::from_fn(tr, |i, j| xi1.value(i, j) + if i == 8 && j == seed { bump } else { 0.0 });
            let xi2 = TerminalCondition::at_horizon(v2);
            let y1 = g_expectation(tr, &g, &xi1).unwrap();
            let y2 = g_expectation(tr, &g, &xi2).unwrap();
            prop_assert!(y2 - y1 > 1e-12);
        }
    }
}
