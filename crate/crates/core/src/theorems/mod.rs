//! Executable checks of the comparison and converse-comparison results,
//! the closed-form counterexamples, and the obstacle constructions.

mod comparison;
mod converse;
mod examples;
mod obstacles;
pub mod random;
pub mod suites;
mod witness;

pub use comparison::{check_comparison, check_k_comparison, ComparisonReport, OrderingCertificate};
pub use converse::{converse_probe, ConverseProbeReport, FamilySpec, ViolationSite};
pub use examples::{
    closed_form_example, last_contact_level, masked_driver_example, time_driver_example,
    ClosedForm, Example, MaskedDriverReport, TimeDriverReport,
};
pub use obstacles::{build_dominating_obstacle, build_floor_obstacle};
pub use witness::{local_strict_witness, StrictWitness};

use crate::bsde::TerminalCondition;
use crate::error::{Error, Result};
use crate::generator::GeneratorSpec;
use crate::lattice::ScenarioTree;
use crate::rbsde::{solve_rbsde, ObstacleSpec, RbsdeSolution};

/// Violations at or below this level count as a pass.
pub const THEOREM_TOL: f64 = 1e-10;

/// Inputs of one reflected equation: driver, terminal data and obstacle.
#[derive(Clone, Debug, PartialEq)]
pub struct RbsdeData {
    pub generator: GeneratorSpec,
    pub terminal: TerminalCondition,
    pub obstacle: ObstacleSpec,
}

impl RbsdeData {
    pub fn new(
        generator: GeneratorSpec,
        terminal: TerminalCondition,
        obstacle: ObstacleSpec,
    ) -> Result<Self> {
        if terminal.tree() != obstacle.tree() {
            return Err(Error::TreeMismatch);
        }
        Ok(Self {
            generator,
            terminal,
            obstacle,
        })
    }

    pub fn tree(&self) -> ScenarioTree {
        self.terminal.tree()
    }

    pub fn solve(&self) -> Result<RbsdeSolution> {
        solve_rbsde(self.tree(), &self.generator, &self.terminal, &self.obstacle)
    }
}
