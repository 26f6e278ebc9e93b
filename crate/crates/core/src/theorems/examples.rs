use serde::{Deserialize, Serialize};

use super::converse::ViolationSite;
use super::RbsdeData;
use crate::bsde::TerminalCondition;
use crate::error::{Error, Result};
use crate::generator::{AssumptionFlags, Expr, GeneratorSpec, SampleSpec};
use crate::lattice::{lift_deterministic, AdaptedProcess, ScenarioTree};
use crate::rbsde::{solve_rbsde, ObstacleSpec, RbsdeSolution, CONTACT_TOL};

/// The four closed-form reflected examples on `[0, 1]` with obstacle
/// `S_t = 1 − 2t` and constant terminal value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Example {
    /// `g = 1/3`, `ξ = 1/3`.
    DrivenThird,
    /// `g = 1/3`, `ξ = 1/2`.
    DrivenHalf,
    /// `g = 0`, `ξ = 1/3`.
    DriftlessThird,
    /// `g = 0`, `ξ = 1/2`.
    DriftlessHalf,
}

impl Example {
    pub const ALL: [Example; 4] = [
        Example::DrivenThird,
        Example::DrivenHalf,
        Example::DriftlessThird,
        Example::DriftlessHalf,
    ];
}

/// Piecewise solution: `Y = S` and `K` growing linearly up to the contact
/// time, then the unreflected solution with `K` frozen. `Z ≡ 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedForm {
    pub example: Example,
    pub driver: f64,
    pub terminal: f64,
    pub contact: f64,
    pub k_plateau: f64,
}

pub fn closed_form_example(which: Example) -> ClosedForm {
    let (driver, terminal) = match which {
        Example::DrivenThird => (1.0 / 3.0, 1.0 / 3.0),
        Example::DrivenHalf => (1.0 / 3.0, 0.5),
        Example::DriftlessThird => (0.0, 1.0 / 3.0),
        Example::DriftlessHalf => (0.0, 0.5),
    };
    // 1 − 2t* = ξ + g (1 − t*)
    let contact = (1.0 - terminal - driver) / (2.0 - driver);
    ClosedForm {
        example: which,
        driver,
        terminal,
        contact,
        k_plateau: (2.0 - driver) * contact,
    }
}

impl ClosedForm {
    pub const HORIZON: f64 = 1.0;

    pub fn obstacle(t: f64) -> f64 {
        1.0 - 2.0 * t
    }

    pub fn y(&self, t: f64) -> f64 {
        if t <= self.contact {
            Self::obstacle(t)
        } else {
            self.terminal + self.driver * (Self::HORIZON - t)
        }
    }

    pub fn z(&self, _t: f64) -> f64 {
        0.0
    }

    pub fn k(&self, t: f64) -> f64 {
        (2.0 - self.driver) * t.min(self.contact)
    }

    /// The example's data on `tree`.
    pub fn data(&self, tree: ScenarioTree) -> RbsdeData {
        RbsdeData {
            generator: GeneratorSpec::constant(self.driver),
            terminal: TerminalCondition::constant(tree, self.terminal),
            obstacle: ObstacleSpec::unbounded(lift_deterministic(Self::obstacle, tree)),
        }
    }

    /// Largest nodewise `|Y − y(t_i)|` and `|K − k(t_i)|`.
    pub fn grid_errors(&self, sol: &RbsdeSolution) -> Result<(f64, f64)> {
        let tree = sol.y.tree();
        let k = sol.k_full()?;
        let mut ey = 0.0f64;
        let mut ek = 0.0f64;
        for (i, j, v) in sol.y.iter() {
            let t = tree.time(i);
            ey = ey.max((v - self.y(t)).abs());
            ek = ek.max((k.value(i, j) - self.k(t)).abs());
        }
        Ok((ey, ek))
    }

    /// Sup-norm distance between the piecewise-constant interpolants
    /// `Y(t) = Y_i`, `K(t) = K_i` on `[t_i, t_{i+1})` and the closed forms.
    /// Needs level-constant (deterministic) solutions.
    pub fn step_interpolant_errors(&self, sol: &RbsdeSolution) -> Result<(f64, f64)> {
        let tree = sol.y.tree();
        let k = sol.k_full()?;
        let ys = level_constant(&sol.y)?;
        let ks = level_constant(k)?;
        let n = tree.steps();
        let mut ey = 0.0f64;
        let mut ek = 0.0f64;
        for i in 0..n {
            let (a, b) = (tree.time(i), tree.time(i + 1));
            let mut probes = vec![a, b];
            if a < self.contact && self.contact < b {
                probes.push(self.contact);
            }
            for t in probes {
                ey = ey.max((ys[i] - self.y(t)).abs());
                ek = ek.max((ks[i] - self.k(t)).abs());
            }
        }
        ey = ey.max((ys[n] - self.y(tree.time(n))).abs());
        ek = ek.max((ks[n] - self.k(tree.time(n))).abs());
        Ok((ey, ek))
    }
}

fn level_constant(p: &AdaptedProcess) -> Result<Vec<f64>> {
    p.levels()
        .iter()
        .map(|l| {
            let first = l[0];
            if l.iter().all(|&v| v == first) {
                Ok(first)
            } else {
                Err(Error::Precondition("process is not deterministic".into()))
            }
        })
        .collect()
}

/// Last level at which the solution touches the obstacle along the lowest
/// path, i.e. the end of the initial contact period for deterministic data.
pub fn last_contact_level(sol: &RbsdeSolution, obstacle: &ObstacleSpec) -> Option<usize> {
    let tree = sol.y.tree();
    (0..=tree.steps())
        .rev()
        .find(|&i| sol.y.value(i, 0) <= obstacle.process().value(i, 0) + CONTACT_TOL)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeDriverReport {
    pub value_g1: f64,
    pub value_g2: f64,
    /// `ε^r_{g1}[ξ] <= ε^r_{g2}[ξ]`.
    pub ordering_holds: bool,
    /// `(g1(0), g2(0))`.
    pub at_start: (f64, f64),
    /// `(g1(T), g2(T))`.
    pub at_horizon: (f64, f64),
    /// `g1(0) < g2(0)` and `g1(T) > g2(T)`: neither driver dominates.
    pub incomparable: bool,
}

/// `g1(t) = t on [0, T/2), T/2 after`; `g2(t) = T/2 on [0, T/2), T − t after`.
pub fn time_driver_pair(horizon: f64) -> (GeneratorSpec, GeneratorSpec) {
    let half = horizon / 2.0;
    let g1 = Expr::Piecewise {
        breaks: vec![half],
        pieces: vec![Expr::Time, Expr::Const(half)],
    };
    let g2 = Expr::Piecewise {
        breaks: vec![half],
        pieces: vec![
            Expr::Const(half),
            Expr::add(Expr::Const(horizon), Expr::neg(Expr::Time)),
        ],
    };
    let flags = AssumptionFlags::default();
    (
        GeneratorSpec::new(g1, 0.0, flags).expect("time-only driver"),
        GeneratorSpec::new(g2, 0.0, flags).expect("time-only driver"),
    )
}

/// Solves with the two time-only drivers whose root values are ordered
/// although the drivers themselves are not.
pub fn time_driver_example(
    tree: ScenarioTree,
    xi: &TerminalCondition,
    obstacle: &ObstacleSpec,
) -> Result<TimeDriverReport> {
    let horizon = tree.grid().horizon();
    let (g1, g2) = time_driver_pair(horizon);
    let v1 = solve_rbsde(tree, &g1, xi, obstacle)?.root();
    let v2 = solve_rbsde(tree, &g2, xi, obstacle)?.root();
    let at_start = (g1.eval(0.0, 0.0, 0.0), g2.eval(0.0, 0.0, 0.0));
    let at_horizon = (g1.eval(horizon, 0.0, 0.0), g2.eval(horizon, 0.0, 0.0));
    Ok(TimeDriverReport {
        value_g1: v1,
        value_g2: v2,
        ordering_holds: v1 <= v2 + super::THEOREM_TOL,
        at_start,
        at_horizon,
        incomparable: at_start.0 < at_start.1 && at_horizon.0 > at_horizon.1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedDriverReport {
    pub family_size: usize,
    /// `max |Y¹ − Y²|` over every node of every family member.
    pub max_solution_gap: f64,
    pub solutions_equal: bool,
    /// `max |g1 − g2|` sampled on `y >= c2`.
    pub max_generator_gap_above: f64,
    pub generators_equal_above: bool,
    /// Sampled site below `c2` with `g1 < g2`, if any.
    pub site_g1_below: Option<ViolationSite>,
    /// Sampled site below `c2` with `g1 > g2`, if any.
    pub site_g1_above: Option<ViolationSite>,
    pub disagreement_certified: bool,
}

/// Equality tolerance for the value comparison.
const VALUE_TOL: f64 = 1e-12;
const DISAGREEMENT_TOL: f64 = 1e-9;

/// `g_i(t, y, z) = μ_i (y − c_i)⁻ ∧ |z|`.
pub fn masked_generator(mu: f64, c: f64) -> Result<GeneratorSpec> {
    GeneratorSpec::new(
        Expr::min(
            Expr::scale(mu, Expr::neg_part(Expr::add(Expr::Y, Expr::Const(-c)))),
            Expr::abs(Expr::Z),
        ),
        mu.max(1.0),
        AssumptionFlags::default().with_a3(),
    )
}

/// With `S ≡ c2` the two drivers give identical reflected solutions for
/// every terminal value above `c2`, while disagreeing below `c2`.
pub fn masked_driver_example(
    tree: ScenarioTree,
    mu1: f64,
    c1: f64,
    mu2: f64,
    c2: f64,
    xi_family: &[TerminalCondition],
) -> Result<MaskedDriverReport> {
    if !(c1 < c2 && mu1 > mu2 && mu2 > 0.0) {
        return Err(Error::Precondition(format!(
            "need c1 < c2 and mu1 > mu2 > 0, got c1={c1}, c2={c2}, mu1={mu1}, mu2={mu2}"
        )));
    }
    let g1 = masked_generator(mu1, c1)?;
    let g2 = masked_generator(mu2, c2)?;
    let obstacle = ObstacleSpec::constant(tree, c2);
    let mut gap = 0.0f64;
    for xi in xi_family {
        let y1 = solve_rbsde(tree, &g1, xi, &obstacle)?.y;
        let y2 = solve_rbsde(tree, &g2, xi, &obstacle)?.y;
        gap = gap.max(y1.max_abs_diff(&y2)?);
    }
    let horizon = tree.grid().horizon();
    let above = SampleSpec {
        t_range: (0.0, horizon),
        y_range: (c2, c2 + 5.0),
        z_range: (-5.0, 5.0),
        points: 21,
    };
    let mut gap_above = 0.0f64;
    for t in above.ts() {
        for y in above.ys() {
            for z in above.zs() {
                gap_above = gap_above.max((g1.eval(t, y, z) - g2.eval(t, y, z)).abs());
            }
        }
    }
    let below = SampleSpec {
        y_range: (c2 - 5.0, c2),
        ..above
    };
    let mut site_lo: Option<ViolationSite> = None;
    let mut site_hi: Option<ViolationSite> = None;
    for t in below.ts() {
        for y in below.ys().into_iter().filter(|&y| y < c2) {
            for z in below.zs() {
                let d = g2.eval(t, y, z) - g1.eval(t, y, z);
                let site = ViolationSite { t, y, z, gap: d };
                if d > DISAGREEMENT_TOL && site_lo.as_ref().is_none_or(|s| d > s.gap) {
                    site_lo = Some(site);
                } else if -d > DISAGREEMENT_TOL && site_hi.as_ref().is_none_or(|s| d < s.gap) {
                    site_hi = Some(site);
                }
            }
        }
    }
    Ok(MaskedDriverReport {
        family_size: xi_family.len(),
        max_solution_gap: gap,
        solutions_equal: gap <= VALUE_TOL,
        max_generator_gap_above: gap_above,
        generators_equal_above: gap_above <= DISAGREEMENT_TOL,
        disagreement_certified: site_lo.is_some() || site_hi.is_some(),
        site_g1_below: site_lo,
        site_g1_above: site_hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_tree, TimeGrid, TreeMode};

    #[test]
    fn closed_forms() {
        let a = closed_form_example(Example::DrivenThird);
        assert_eq!((a.y(0.0), a.k(0.0)), (1.0, 0.0));
        assert!((a.contact - 0.2).abs() < 1e-15);
        assert!((a.k_plateau - 1.0 / 3.0).abs() < 1e-15);
        assert!((a.y(0.5) - (2.0 / 3.0 - 0.5 / 3.0)).abs() < 1e-15);
        let b = closed_form_example(Example::DrivenHalf);
        assert!((b.contact - 0.1).abs() < 1e-15);
        assert!((b.k_plateau - 1.0 / 6.0).abs() < 1e-15);
        assert!((b.y(0.4) - (5.0 / 6.0 - 0.4 / 3.0)).abs() < 1e-15);
        let c = closed_form_example(Example::DriftlessThird);
        assert!((c.contact - 1.0 / 3.0).abs() < 1e-15);
        assert!((c.k_plateau - 2.0 / 3.0).abs() < 1e-15);
        let d = closed_form_example(Example::DriftlessHalf);
        assert!((d.contact - 0.25).abs() < 1e-15);
        assert_eq!(d.k_plateau, 0.5);
        assert_eq!(d.y(0.9), 0.5);
    }

    #[test]
    fn time_driver_values() {
        let n = 40;
        let tr = build_tree(TimeGrid::new(1.0, n).unwrap(), TreeMode::Recombining).unwrap();
        let r = time_driver_example(
            tr,
            &TerminalCondition::constant(tr, 0.0),
            &ObstacleSpec::constant(tr, -10.0),
        )
        .unwrap();
        let nf = n as f64;
        assert!((r.value_g1 - (3.0 / 8.0 - 1.0 / (4.0 * nf))).abs() < 1e-14);
        assert!((r.value_g2 - (3.0 / 8.0 + 1.0 / (4.0 * nf))).abs() < 1e-14);
        assert!(r.ordering_holds && r.incomparable);
        assert_eq!(r.at_start, (0.0, 0.5));
        assert_eq!(r.at_horizon, (0.5, 0.0));
    }

    #[test]
    fn masked_driver_samples() {
        let g1 = masked_generator(2.0, 0.0).unwrap();
        let g2 = masked_generator(1.0, 1.0).unwrap();
        assert_eq!(g1.eval(0.0, 0.5, 1.0), 0.0);
        assert_eq!(g2.eval(0.0, 0.5, 1.0), 0.5);
        assert_eq!(g1.eval(0.0, 1.2, 1.0), 0.0);
        assert_eq!(g2.eval(0.0, 1.2, 1.0), 0.0);
        assert_eq!(g1.eval(0.0, -2.0, 4.0), 4.0);
        assert_eq!(g2.eval(0.0, -2.0, 4.0), 3.0);

        let tr = build_tree(TimeGrid::new(1.0, 6).unwrap(), TreeMode::FullBinary).unwrap();
        let fam = vec![TerminalCondition::constant(tr, 1.5)];
        let r = masked_driver_example(tr, 2.0, 0.0, 1.0, 1.0, &fam).unwrap();
        assert_eq!(r.max_solution_gap, 0.0);
        assert!(r.generators_equal_above && r.disagreement_certified);
        assert!(r.site_g1_below.is_some() && r.site_g1_above.is_some());
        assert!(masked_driver_example(tr, 1.0, 0.0, 2.0, 1.0, &fam).is_err());
    }
}
