//! Seeded random instances for the verification suites.
//!
//! Instance `k` of a suite seeded with `s` draws from a ChaCha8 stream
//! `(s, k)`, so every instance is reproducible on its own and suites can fan
//! out in any order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::RbsdeData;
use crate::bsde::TerminalCondition;
use crate::generator::{AssumptionFlags, Expr, GeneratorSpec};
use crate::lattice::{AdaptedProcess, ScenarioTree, StoppingRule};
use crate::rbsde::ObstacleSpec;

pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Largest `z` coefficient keeping the one-step scheme monotone:
/// `|b| sqrt(dt) <= 0.9`.
fn z_bound(tree: ScenarioTree) -> f64 {
    (0.9 / tree.grid().sqrt_dt()).min(2.0)
}

/// `a y + b z + c`.
pub fn affine(a: f64, b: f64, c: f64) -> GeneratorSpec {
    let e = Expr::add(
        Expr::add(Expr::scale(a, Expr::Y), Expr::scale(b, Expr::Z)),
        Expr::Const(c),
    );
    let flags = AssumptionFlags {
        a3: c == 0.0,
        ..AssumptionFlags::default()
    };
    GeneratorSpec::new(e, a.abs() + b.abs(), flags).expect("finite coefficients")
}

/// Two affine drivers sharing `(a, b)` with `c1 <= c2`.
pub fn ordered_affine_pair(
    rng: &mut impl Rng,
    tree: ScenarioTree,
) -> (GeneratorSpec, GeneratorSpec) {
    let zb = z_bound(tree);
    let a = rng.gen_range(-1.0..=1.0);
    let b = rng.gen_range(-zb..=zb);
    let c1 = rng.gen_range(-1.0..=1.0);
    let c2 = c1 + rng.gen_range(0.0..=1.0);
    (affine(a, b, c1), affine(a, b, c2))
}

pub fn random_affine(rng: &mut impl Rng, tree: ScenarioTree) -> GeneratorSpec {
    ordered_affine_pair(rng, tree).0
}

/// `p z + q |z| + u (w (y − c)⁻ ∧ |z|)`, which vanishes at `z = 0`, with
/// Lipschitz constant at most `l`.
pub fn random_a3(rng: &mut impl Rng, l: f64) -> GeneratorSpec {
    let share = l / 3.0;
    let p = rng.gen_range(-share..=share);
    let q = rng.gen_range(-share..=share);
    let u = rng.gen_range(-share..=share);
    let w = rng.gen_range(0.0..=1.0);
    let c = rng.gen_range(-1.0..=1.0);
    let e = Expr::add(
        Expr::add(Expr::scale(p, Expr::Z), Expr::scale(q, Expr::abs(Expr::Z))),
        Expr::scale(
            u,
            Expr::min(
                Expr::scale(w, Expr::neg_part(Expr::add(Expr::Y, Expr::Const(-c)))),
                Expr::abs(Expr::Z),
            ),
        ),
    );
    let lip = p.abs() + q.abs() + u.abs() * w.max(1.0);
    GeneratorSpec::new(e, lip, AssumptionFlags::default().with_a3()).expect("finite coefficients")
}

/// Independent uniform values on every node.
pub fn random_process(rng: &mut impl Rng, tree: ScenarioTree, lo: f64, hi: f64) -> AdaptedProcess {
    AdaptedProcess::from_fn(tree, |_, _| rng.gen_range(lo..=hi))
}

/// Rule flagging each node before the horizon with probability `p`.
pub fn random_rule(rng: &mut impl Rng, tree: ScenarioTree, p: f64) -> StoppingRule {
    StoppingRule::from_fn(tree, |_, _| rng.gen_bool(p))
}

/// Obstacle and terminal data with `ξ >= S` at the horizon.
pub fn random_obstacle_and_terminal(
    rng: &mut impl Rng,
    tree: ScenarioTree,
) -> (ObstacleSpec, TerminalCondition) {
    let s = random_process(rng, tree, -1.0, 0.5);
    let n = tree.steps();
    let xi = AdaptedProcess::from_fn(tree, |i, j| {
        let v: f64 = rng.gen_range(-1.0..=1.0);
        if i == n {
            v.max(s.value(i, j))
        } else {
            v
        }
    });
    (
        ObstacleSpec::unbounded(s),
        TerminalCondition::at_horizon(xi),
    )
}

/// Ordered pair: `ξ¹ <= ξ²`, `g¹ <= g²`, `S¹ <= S²`.
pub fn comparison_instance(seed: u64, index: u64, tree: ScenarioTree) -> (RbsdeData, RbsdeData) {
    let mut rng = instance_rng(seed, index);
    let (g1, g2) = ordered_affine_pair(&mut rng, tree);
    let (s1, xi1) = random_obstacle_and_terminal(&mut rng, tree);
    let s2 = s1
        .process()
        .zip_with(&random_process(&mut rng, tree, 0.0, 0.3), |a, b| a + b)
        .expect("same tree");
    let n = tree.steps();
    let bump = random_process(&mut rng, tree, 0.0, 0.3);
    let xi2 = AdaptedProcess::from_fn(tree, |i, j| {
        let v = xi1.value(i, j) + bump.value(i, j);
        if i == n {
            v.max(s2.value(i, j))
        } else {
            v
        }
    });
    (
        RbsdeData {
            generator: g1,
            terminal: xi1,
            obstacle: s1,
        },
        RbsdeData {
            generator: g2,
            terminal: TerminalCondition::at_horizon(xi2),
            obstacle: ObstacleSpec::unbounded(s2),
        },
    )
}

/// Ordered pair with a common obstacle.
pub fn k_comparison_instance(seed: u64, index: u64, tree: ScenarioTree) -> (RbsdeData, RbsdeData) {
    let (d1, mut d2) = comparison_instance(seed, index, tree);
    d2.obstacle = d1.obstacle.clone();
    (d1, d2)
}

/// Common driver and obstacle; `ξ² = ξ¹ + bump` on a random nonempty set of
/// leaves.
pub fn witness_instance(seed: u64, index: u64, tree: ScenarioTree) -> (RbsdeData, RbsdeData) {
    let mut rng = instance_rng(seed, index);
    let g = random_affine(&mut rng, tree);
    let (s, xi1) = random_obstacle_and_terminal(&mut rng, tree);
    let n = tree.steps();
    let forced = rng.gen_range(0..tree.width(n));
    let xi2 = AdaptedProcess::from_fn(tree, |i, j| {
        let bumped = i == n && (j == forced || rng.gen_bool(0.3));
        xi1.value(i, j)
            + if bumped {
                rng.gen_range(0.01..=1.0)
            } else {
                0.0
            }
    });
    (
        RbsdeData {
            generator: g.clone(),
            terminal: xi1,
            obstacle: s.clone(),
        },
        RbsdeData {
            generator: g,
            terminal: TerminalCondition::at_horizon(xi2),
            obstacle: s,
        },
    )
}

/// Driverless optimal-stopping instance.
pub fn oracle_instance(
    seed: u64,
    index: u64,
    tree: ScenarioTree,
) -> (TerminalCondition, ObstacleSpec) {
    let mut rng = instance_rng(seed, index);
    let (s, xi) = random_obstacle_and_terminal(&mut rng, tree);
    (xi, s)
}

/// Driver, stopping rule, data measurable at the rule, and an obstacle
/// below the data at the rule's stopping nodes.
pub struct RestrictionInstance {
    pub generator: GeneratorSpec,
    pub tau: StoppingRule,
    pub values: AdaptedProcess,
    pub obstacle: ObstacleSpec,
}

pub fn restriction_instance(seed: u64, index: u64, tree: ScenarioTree) -> RestrictionInstance {
    let mut rng = instance_rng(seed, index);
    let zb = z_bound(tree);
    let a = rng.gen_range(-1.0..=1.0);
    let b = rng.gen_range(-zb..=zb);
    let q = rng.gen_range(-0.5..=0.5);
    let c = rng.gen_range(-1.0..=1.0);
    let e = Expr::add(
        Expr::add(Expr::scale(a, Expr::Y), Expr::scale(b, Expr::Z)),
        Expr::add(
            Expr::scale(q, Expr::abs(Expr::Z)),
            Expr::scale(c, Expr::Time),
        ),
    );
    let generator = GeneratorSpec::new(e, a.abs() + b.abs() + q.abs(), AssumptionFlags::default())
        .expect("finite coefficients");
    let tau = random_rule(&mut rng, tree, 0.15);
    let s = random_process(&mut rng, tree, -1.0, 0.5);
    let raw = random_process(&mut rng, tree, -1.0, 1.0);
    let values = raw.zip_with(&s, f64::max).expect("same tree");
    RestrictionInstance {
        generator,
        tau,
        values,
        obstacle: ObstacleSpec::unbounded(s),
    }
}
