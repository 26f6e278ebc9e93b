use serde::{Deserialize, Serialize};

use super::{RbsdeData, THEOREM_TOL};
use crate::error::{Error, Result};
use crate::generator::{GeneratorSpec, SampleSpec};
use crate::lattice::AdaptedProcess;
use crate::rbsde::RbsdeSolution;

/// Input orderings between two sets of data. Every gap is the largest
/// positive excess of the first datum over the second, so zero means ordered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingCertificate {
    /// `max (ξ¹ − ξ²)⁺` over the stopping nodes.
    pub terminal_gap: f64,
    /// `max (S¹ − S²)⁺` over all nodes.
    pub obstacle_gap: f64,
    pub common_obstacle: bool,
    /// `max (g¹ − g²)⁺` evaluated at the arguments each step of either
    /// solution actually used.
    pub generator_gap_along_solutions: f64,
    pub samples_along_solutions: usize,
    /// `max (g¹ − g²)⁺` on the default `(t, y, z)` grid.
    pub generator_gap_on_grid: f64,
    pub samples_on_grid: usize,
}

/// Orderings count as established up to this slack.
const ORDER_SLACK: f64 = 1e-12;

impl OrderingCertificate {
    pub fn established(&self) -> bool {
        self.terminal_gap <= ORDER_SLACK
            && self.obstacle_gap <= ORDER_SLACK
            && self.generator_gap_along_solutions <= ORDER_SLACK
            && self.generator_gap_on_grid <= ORDER_SLACK
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub certificate: OrderingCertificate,
    /// `max (Y¹ − Y²)⁺` over all nodes.
    pub y_violation: f64,
    pub y_pass: bool,
    /// `max (K² − K¹)⁺`, present for K comparisons.
    pub k_violation: Option<f64>,
    /// Largest decrease of `K¹ − K²` along an edge.
    pub k_monotonicity_violation: Option<f64>,
    pub k_pass: Option<bool>,
    /// Set when the input orderings could not be established.
    pub vacuous: bool,
}

impl ComparisonReport {
    pub fn pass(&self) -> bool {
        !self.vacuous && self.y_pass && self.k_pass.unwrap_or(true)
    }
}

fn positive_excess(a: &AdaptedProcess, b: &AdaptedProcess) -> Result<f64> {
    Ok(a.zip_with(b, |x, y| (x - y).max(0.0))?.max_value())
}

fn generator_gap_along(
    g1: &GeneratorSpec,
    g2: &GeneratorSpec,
    sols: [&RbsdeSolution; 2],
) -> (f64, usize) {
    let tree = sols[0].y.tree();
    let mut gap = 0.0f64;
    let mut count = 0;
    for sol in sols {
        for i in 0..tree.steps() {
            let t = tree.time(i);
            for j in 0..tree.width(i) {
                if sol.is_past_terminal_rule(i, j) {
                    continue;
                }
                let z = sol.z.value(i, j);
                let y = sol.y.value(i, j);
                for arg in [y - sol.dk.value(i, j), y] {
                    let d = g1.eval_at(i, j, t, arg, z) - g2.eval_at(i, j, t, arg, z);
                    gap = gap.max(d);
                    count += 1;
                }
            }
        }
    }
    (gap, count)
}

fn generator_gap_on_grid(
    g1: &GeneratorSpec,
    g2: &GeneratorSpec,
    sample: &SampleSpec,
) -> (f64, usize) {
    let mut gap = 0.0f64;
    let mut count = 0;
    for t in sample.ts() {
        for y in sample.ys() {
            for z in sample.zs() {
                gap = gap.max(g1.eval(t, y, z) - g2.eval(t, y, z));
                count += 1;
            }
        }
    }
    (gap, count)
}

fn solve_pair(
    d1: &RbsdeData,
    d2: &RbsdeData,
) -> Result<(RbsdeSolution, RbsdeSolution, OrderingCertificate)> {
    if d1.tree() != d2.tree() {
        return Err(Error::TreeMismatch);
    }
    let s1 = d1.solve()?;
    let s2 = d2.solve()?;
    let rule = d1.terminal.rule();
    if rule.first_hit_nodes() != d2.terminal.rule().first_hit_nodes() {
        return Err(Error::Precondition(
            "terminal conditions must share a stopping rule".into(),
        ));
    }
    let terminal_gap = rule
        .stop_nodes()
        .into_iter()
        .map(|(i, j)| (d1.terminal.value(i, j) - d2.terminal.value(i, j)).max(0.0))
        .fold(0.0, f64::max);
    let p1 = d1.obstacle.process();
    let p2 = d2.obstacle.process();
    let (along, n_along) = generator_gap_along(&d1.generator, &d2.generator, [&s1, &s2]);
    let sample = SampleSpec::default_for(d1.tree().grid().horizon());
    let (grid, n_grid) = generator_gap_on_grid(&d1.generator, &d2.generator, &sample);
    let certificate = OrderingCertificate {
        terminal_gap,
        obstacle_gap: positive_excess(p1, p2)?,
        common_obstacle: p1 == p2,
        generator_gap_along_solutions: along,
        samples_along_solutions: n_along,
        generator_gap_on_grid: grid,
        samples_on_grid: n_grid,
    };
    Ok((s1, s2, certificate))
}

fn finish(report: ComparisonReport) -> Result<ComparisonReport> {
    if report.vacuous {
        Err(Error::OrderingNotEstablished(Box::new(report)))
    } else {
        Ok(report)
    }
}

/// Solves both equations and measures `max (Y¹ − Y²)⁺` once the orderings
/// `ξ¹ <= ξ²`, `g¹ <= g²`, `S¹ <= S²` have been established.
pub fn check_comparison(d1: &RbsdeData, d2: &RbsdeData) -> Result<ComparisonReport> {
    let (s1, s2, certificate) = solve_pair(d1, d2)?;
    let y_violation = positive_excess(&s1.y, &s2.y)?;
    let vacuous = !certificate.established();
    finish(ComparisonReport {
        certificate,
        y_violation,
        y_pass: y_violation <= THEOREM_TOL,
        k_violation: None,
        k_monotonicity_violation: None,
        k_pass: None,
        vacuous,
    })
}

/// With a common obstacle: `K¹ >= K²` at every node and `K¹ − K²`
/// nondecreasing along every edge.
pub fn check_k_comparison(d1: &RbsdeData, d2: &RbsdeData) -> Result<ComparisonReport> {
    let (s1, s2, certificate) = solve_pair(d1, d2)?;
    let y_violation = positive_excess(&s1.y, &s2.y)?;
    let vacuous = !(certificate.established() && certificate.common_obstacle);
    let (k1, k2) = match (&s1.k, &s2.k) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::RequiresFullBinary(
                "reflection process depends on the path",
            ))
        }
    };
    let k_violation = positive_excess(k2, k1)?;
    let diff = k1.zip_with(k2, |a, b| a - b)?;
    let tree = diff.tree();
    let mut mono = 0.0f64;
    for i in 0..tree.steps() {
        for j in 0..tree.width(i) {
            let v = diff.value(i, j);
            for c in [tree.up_child(i, j), tree.down_child(i, j)] {
                mono = mono.max(v - diff.value(i + 1, c));
            }
        }
    }
    finish(ComparisonReport {
        certificate,
        y_violation,
        y_pass: y_violation <= THEOREM_TOL,
        k_violation: Some(k_violation),
        k_monotonicity_violation: Some(mono),
        k_pass: Some(k_violation <= THEOREM_TOL && mono <= THEOREM_TOL),
        vacuous,
    })
}
