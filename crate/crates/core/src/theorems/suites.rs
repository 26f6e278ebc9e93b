//! Seeded verification suites. Each suite fans out over its instances with
//! rayon and reduces to one [`SuiteOutcome`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::random::{self, instance_rng};
use super::{
    build_dominating_obstacle, check_comparison, check_k_comparison, closed_form_example,
    converse_probe, last_contact_level, local_strict_witness, masked_driver_example,
    time_driver_example, Example, FamilySpec, THEOREM_TOL,
};
use crate::bsde::{g_expectation, TerminalCondition};
use crate::error::{Error, Result};
use crate::generator::{restrict_generator, GeneratorSpec};
use crate::lattice::{build_tree, event_probability, ScenarioTree, TimeGrid, TreeMode};
use crate::rbsde::{
    enumerate_stopping_oracle, reflected_value, snell_oracle, solve_rbsde, ObstacleSpec,
};

/// Tolerance for identities that hold exactly up to rounding.
pub const IDENTITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub instances: usize,
    pub passed: usize,
    /// Largest violation over all instances, in the suite's own measure.
    pub max_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Failed instances and other remarks.
    pub notes: Vec<String>,
}

/// Result of one instance: measured violation, or an error message.
type Check = std::result::Result<f64, String>;

fn reduce(name: &str, tolerance: f64, results: Vec<Check>) -> SuiteOutcome {
    let mut passed = 0;
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    for (k, r) in results.iter().enumerate() {
        match r {
            Ok(v) => {
                worst = worst.max(*v);
                if *v <= tolerance {
                    passed += 1;
                } else {
                    notes.push(format!("instance {k}: violation {v:e}"));
                }
            }
            Err(e) => notes.push(format!("instance {k}: {e}")),
        }
    }
    SuiteOutcome {
        name: name.to_string(),
        instances: results.len(),
        passed,
        max_violation: worst,
        tolerance,
        pass: passed == results.len(),
        notes,
    }
}

fn run(instances: usize, f: impl Fn(u64) -> Result<f64> + Sync) -> Vec<Check> {
    (0..instances as u64)
        .into_par_iter()
        .map(|k| f(k).map_err(|e| e.to_string()))
        .collect()
}

fn tree(horizon: f64, steps: usize, mode: TreeMode) -> ScenarioTree {
    build_tree(TimeGrid::new(horizon, steps).expect("valid grid"), mode).expect("valid depth")
}

/// Ordered random pairs on `N = 8` full binary trees; measures `max (Y¹ − Y²)⁺`.
pub fn comparison_suite(seed: u64, instances: usize) -> SuiteOutcome {
    let tr = tree(1.0, 8, TreeMode::FullBinary);
    let results = run(instances, |k| {
        let (d1, d2) = random::comparison_instance(seed, k, tr);
        Ok(check_comparison(&d1, &d2)?.y_violation)
    });
    reduce("comparison", THEOREM_TOL, results)
}

/// Ordered pairs with a common obstacle; measures the worse of the nodewise
/// `K¹ >= K²` and per-edge monotonicity violations.
pub fn k_comparison_suite(seed: u64, instances: usize) -> SuiteOutcome {
    let tr = tree(1.0, 8, TreeMode::FullBinary);
    let results = run(instances, |k| {
        let (d1, d2) = random::k_comparison_instance(seed, k, tr);
        let r = check_k_comparison(&d1, &d2)?;
        Ok(r.k_violation
            .unwrap_or(f64::INFINITY)
            .max(r.k_monotonicity_violation.unwrap_or(f64::INFINITY))
            .max(r.y_violation))
    });
    reduce("k-comparison", THEOREM_TOL, results)
}

/// Random strict pairs on `N = 8`; an instance passes when `p > 0`, every
/// `τ̃ < N`, and the event probability re-derived from the rule equals `p`.
pub fn witness_suite(seed: u64, instances: usize) -> SuiteOutcome {
    let tr = tree(1.0, 8, TreeMode::FullBinary);
    let results = run(instances, |k| {
        let (d1, d2) = random::witness_instance(seed, k, tr);
        let w = local_strict_witness(&d1, &d2)?;
        let y1 = d1.solve()?.y;
        let y2 = d2.solve()?.y;
        let again = event_probability(&w.rule, |i, j| {
            y2.value(i, j) - y1.value(i, j) > super::witness::EQUALITY_TOL
        });
        let ok = w.probability > 0.0 && w.max_level() < tr.steps() && again == w.probability;
        Ok(if ok { 0.0 } else { 1.0 })
    });
    reduce("witness", 0.0, results)
}

/// Driverless instances on `N = 3`: solver root, Snell envelope and
/// exhaustive enumeration must agree.
pub fn oracle_suite(seed: u64, instances: usize) -> SuiteOutcome {
    let tr = tree(1.0, 3, TreeMode::FullBinary);
    let results = run(instances, |k| {
        let (xi, s) = random::oracle_instance(seed, k, tr);
        let solver = reflected_value(tr, &GeneratorSpec::zero(), &xi, &s)?;
        let snell = snell_oracle(tr, &xi, &s)?.root();
        let brute = enumerate_stopping_oracle(tr, &xi, &s)?;
        Ok((solver - snell)
            .abs()
            .max((solver - brute).abs())
            .max((snell - brute).abs()))
    });
    reduce("oracle", IDENTITY_TOL, results)
}

/// Random rules on `N = 10`: `ε_{g,τ}[ξ] = ε_{ḡ,T}[ξ]` and
/// `ε^{r,S}_{g,τ}[ξ] = ε^{r,S̄}_{ḡ,T}[ξ]` with `S̄ = S_{·∧τ}`.
pub fn restriction_suite(seed: u64, instances: usize) -> SuiteOutcome {
    let tr = tree(1.0, 10, TreeMode::FullBinary);
    let results = run(instances, |k| {
        let inst = random::restriction_instance(seed, k, tr);
        let at_tau = TerminalCondition::new(inst.tau.clone(), inst.values.clone())?;
        let lifted = TerminalCondition::at_horizon(inst.values.stopped_at(&inst.tau)?);
        let g_bar = restrict_generator(&inst.generator, &inst.tau)?;
        let plain = (g_expectation(tr, &inst.generator, &at_tau)?
            - g_expectation(tr, &g_bar, &lifted)?)
        .abs();
        let s_bar = ObstacleSpec::unbounded(inst.obstacle.process().stopped_at(&inst.tau)?);
        let left = reflected_value(tr, &inst.generator, &at_tau, &inst.obstacle)?;
        let right = reflected_value(tr, &g_bar, &lifted, &s_bar)?;
        Ok(plain.max((left - right).abs()))
    });
    reduce("restriction-identity", IDENTITY_TOL, results)
}

/// Lipschitz bound of the random drivers in [`dominating_obstacle_suite`].
pub const DOMINATING_L: f64 = 2.0;

/// Random drivers vanishing at `z = 0` against the dominating obstacle
/// built from the same terminal data; measures `max K`.
pub fn dominating_obstacle_suite(seed: u64, instances: usize) -> SuiteOutcome {
    let tr = tree(1.0, 12, TreeMode::FullBinary);
    let results = run(instances, |k| {
        let mut rng = instance_rng(seed, k);
        let g = random::random_a3(&mut rng, DOMINATING_L);
        let xi = TerminalCondition::at_horizon(random::random_process(&mut rng, tr, -1.0, 1.0));
        let s = build_dominating_obstacle(tr, &xi, DOMINATING_L)?;
        let sol = solve_rbsde(tr, &g, &xi, &s)?;
        Ok(sol.k_full()?.max_value())
    });
    reduce("dominating-obstacle", THEOREM_TOL, results)
}

/// Random parameters `c1 < c2`, `μ1 > μ2 > 0` with `S ≡ c2` and a random
/// terminal value above `c2`: equal solutions at every node, generators
/// equal above `c2` and disagreeing below.
pub fn masked_driver_suite(seed: u64, instances: usize) -> SuiteOutcome {
    use rand::Rng;
    let tr = tree(1.0, 8, TreeMode::FullBinary);
    let results = run(instances, |k| {
        let mut rng = instance_rng(seed, k);
        let mu2 = rng.gen_range(0.5..=2.0);
        let mu1 = mu2 + rng.gen_range(0.1..=2.0);
        let c1 = rng.gen_range(-1.0..=0.5);
        let c2 = c1 + rng.gen_range(0.1..=1.5);
        let xi = TerminalCondition::at_horizon(random::random_process(&mut rng, tr, c2, c2 + 3.0));
        let r = masked_driver_example(tr, mu1, c1, mu2, c2, &[xi])?;
        if !(r.generators_equal_above && r.disagreement_certified) {
            return Ok(f64::INFINITY);
        }
        Ok(r.max_solution_gap)
    });
    reduce("masked-driver", IDENTITY_TOL, results)
}

/// Converse probes over random driver pairs (dominating, dominated and
/// unrelated); an instance fails only if the falsification flag is raised.
pub fn converse_suite(seed: u64, instances: usize) -> SuiteOutcome {
    use rand::Rng;
    let tr = tree(1.0, 6, TreeMode::FullBinary);
    let family = FamilySpec::default_for(tr);
    let results = run(instances, |k| {
        let mut rng = instance_rng(seed, k);
        let base = random::random_affine(&mut rng, tr);
        let shift = rng.gen_range(0.0..=0.5);
        let other = match k % 3 {
            0 => GeneratorSpec::new(
                crate::generator::Expr::add(
                    base.expr().clone(),
                    crate::generator::Expr::Const(shift),
                ),
                base.lipschitz(),
                base.flags(),
            )?,
            1 => GeneratorSpec::new(
                crate::generator::Expr::add(
                    base.expr().clone(),
                    crate::generator::Expr::Const(-shift),
                ),
                base.lipschitz(),
                base.flags(),
            )?,
            _ => random::random_affine(&mut rng, tr),
        };
        let c = rng.gen_range(-1.0..=1.0);
        let r = converse_probe(tr, &other, &base, &ObstacleSpec::constant(tr, c), &family)?;
        Ok(if r.falsified { 1.0 } else { 0.0 })
    });
    reduce("converse", 0.0, results)
}

/// Closed-form examples on a recombining `N = 2000` tree, the equal root
/// values of the first pair, the time-only driver pair, and the
/// witness on the first pair.
pub fn counterexamples_suite() -> SuiteOutcome {
    let n = 2000;
    let tr = tree(1.0, n, TreeMode::Recombining);
    let dt = tr.dt();
    let mut checks: Vec<Check> = Vec::new();
    let mut notes = Vec::new();
    for ex in Example::ALL {
        let cf = closed_form_example(ex);
        let data = cf.data(tr);
        let r: Result<f64> = (|| {
            let sol = data.solve()?;
            let (ey, ek) = cf.grid_errors(&sol)?;
            let contact = last_contact_level(&sol, &data.obstacle)
                .ok_or(Error::Precondition("no contact".into()))?;
            let contact_err = (tr.time(contact) - cf.contact).abs();
            let plateau = (sol.k_full()?.value(n, 0) - cf.k_plateau).abs();
            notes.push(format!(
                "{ex:?}: |Y err| {ey:.3e}, |K err| {ek:.3e}, contact t {:.6}, K plateau {:.6}",
                tr.time(contact),
                sol.k_full()?.value(n, 0)
            ));
            let tol = 2e-3;
            Ok(
                if ey <= tol && ek <= tol && contact_err <= dt + 1e-12 && plateau <= tol {
                    0.0
                } else {
                    ey.max(ek).max(plateau).max(contact_err)
                },
            )
        })();
        checks.push(r.map_err(|e| e.to_string()));
    }
    let pair = (
        closed_form_example(Example::DrivenThird).data(tr),
        closed_form_example(Example::DrivenHalf).data(tr),
    );
    let strict: Result<f64> = (|| {
        let y1 = pair.0.solve()?.root();
        let y2 = pair.1.solve()?.root();
        notes.push(format!("equal roots: {y1} vs {y2}"));
        Ok(if (y1 - y2).abs() <= IDENTITY_TOL {
            0.0
        } else {
            1.0
        })
    })();
    checks.push(strict.map_err(|e| e.to_string()));
    let time_drivers: Result<f64> = (|| {
        let r = time_driver_example(
            tr,
            &TerminalCondition::constant(tr, 0.0),
            &ObstacleSpec::constant(tr, -10.0),
        )?;
        notes.push(format!(
            "time-only drivers: {} <= {}",
            r.value_g1, r.value_g2
        ));
        Ok(if r.ordering_holds && r.incomparable {
            0.0
        } else {
            1.0
        })
    })();
    checks.push(time_drivers.map_err(|e| e.to_string()));
    let witness: Result<f64> = (|| {
        let w = local_strict_witness(&pair.0, &pair.1)?;
        notes.push(format!(
            "witness: k~ = {}, tau~ = {}, p = {}",
            w.k_tilde,
            tr.time(w.tau_tilde[0]),
            w.probability
        ));
        Ok(if tr.time(w.tau_tilde[0]) == 0.5 && w.probability == 1.0 {
            0.0
        } else {
            1.0
        })
    })();
    checks.push(witness.map_err(|e| e.to_string()));
    let mut out = reduce("counterexamples", 0.0, checks);
    out.notes.splice(0..0, notes);
    out
}

pub const SUITE_NAMES: [&str; 9] = [
    "comparison",
    "k-comparison",
    "witness",
    "oracle",
    "restriction-identity",
    "dominating-obstacle",
    "masked-driver",
    "converse",
    "counterexamples",
];

/// Default instance count of each suite.
pub fn default_instances(name: &str) -> usize {
    match name {
        "comparison" => 200,
        "k-comparison" => 100,
        "witness" => 50,
        "oracle" | "restriction-identity" => 25,
        "dominating-obstacle" | "masked-driver" => 20,
        "converse" => 30,
        _ => 1,
    }
}

/// Runs a suite by name; `instances = None` uses the default count.
pub fn run_suite(name: &str, seed: u64, instances: Option<usize>) -> Result<SuiteOutcome> {
    let n = instances.unwrap_or_else(|| default_instances(name));
    Ok(match name {
        "comparison" => comparison_suite(seed, n),
        "k-comparison" => k_comparison_suite(seed, n),
        "witness" => witness_suite(seed, n),
        "oracle" => oracle_suite(seed, n),
        "restriction-identity" => restriction_suite(seed, n),
        "dominating-obstacle" => dominating_obstacle_suite(seed, n),
        "masked-driver" => masked_driver_suite(seed, n),
        "converse" => converse_suite(seed, n),
        "counterexamples" => counterexamples_suite(),
        other => return Err(Error::Precondition(format!("unknown suite {other}"))),
    })
}
