//! Discrete Brownian substrate.
//!
//! Time runs on a uniform grid `t_i = i * dt`, `i = 0..=N`. The Brownian
//! motion moves by `+sqrt(dt)` or `-sqrt(dt)` with probability 1/2 each.
//! Two node layouts are supported:
//!
//! * [`TreeMode::FullBinary`]: node `j` at level `i` is the path bit string of
//!   length `i` (most significant bit = first move, `1` = up). Every node has a
//!   unique history, so path-dependent quantities (stopped processes, the
//!   cumulative reflection process) are node-local.
//! * [`TreeMode::Recombining`]: node `j` at level `i` is the number of up moves.
//!   Only Markovian inputs are meaningful here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest depth accepted for [`TreeMode::FullBinary`] trees.
pub const MAX_FULL_BINARY_DEPTH: usize = 25;

/// Largest level whose binomial weights are exact dyadic rationals in `f64`.
const EXACT_BINOMIAL_LEVEL: usize = 56;

/// Uniform time grid on `[0, T]` with `N` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::InvalidGrid { horizon, steps });
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.dt().sqrt()
    }

    /// Grid time `t_i`; the last level is pinned to the horizon.
    pub fn time(&self, level: usize) -> f64 {
        if level == self.steps {
            self.horizon
        } else {
            level as f64 * self.dt()
        }
    }

    /// Smallest level whose time is `>= t` (clamped to `N`).
    pub fn level_at_or_after(&self, t: f64) -> usize {
        let raw = (t / self.dt() - 1e-9).ceil();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.steps)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeMode {
    FullBinary,
    Recombining,
}

/// The lattice filtration. Cheap to copy; processes carry it by value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioTree {
    grid: TimeGrid,
    mode: TreeMode,
}

/// Builds the tree for `grid`, refusing full binary trees deeper than
/// [`MAX_FULL_BINARY_DEPTH`].
pub fn build_tree(grid: TimeGrid, mode: TreeMode) -> Result<ScenarioTree> {
    ScenarioTree::new(grid, mode)
}

impl ScenarioTree {
    pub fn new(grid: TimeGrid, mode: TreeMode) -> Result<Self> {
        if mode == TreeMode::FullBinary && grid.steps() > MAX_FULL_BINARY_DEPTH {
            return Err(Error::DepthExceeded {
                depth: grid.steps(),
                limit: MAX_FULL_BINARY_DEPTH,
            });
        }
        Ok(Self { grid, mode })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn mode(&self) -> TreeMode {
        self.mode
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn time(&self, level: usize) -> f64 {
        self.grid.time(level)
    }

    pub fn is_full_binary(&self) -> bool {
        self.mode == TreeMode::FullBinary
    }

    /// Number of nodes at `level`.
    pub fn width(&self, level: usize) -> usize {
        match self.mode {
            TreeMode::FullBinary => 1usize << level,
            TreeMode::Recombining => level + 1,
        }
    }

    pub fn up_child(&self, _level: usize, node: usize) -> usize {
        match self.mode {
            TreeMode::FullBinary => 2 * node + 1,
            TreeMode::Recombining => node + 1,
        }
    }

    pub fn down_child(&self, _level: usize, node: usize) -> usize {
        match self.mode {
            TreeMode::FullBinary => 2 * node,
            TreeMode::Recombining => node,
        }
    }

    /// Parents of `node` at `level` (level >= 1): `(parent, moved_up)` pairs.
    pub fn parents(&self, level: usize, node: usize) -> Vec<(usize, bool)> {
        debug_assert!(level >= 1);
        match self.mode {
            TreeMode::FullBinary => vec![(node >> 1, node & 1 == 1)],
            TreeMode::Recombining => {
                let mut out = Vec::with_capacity(2);
                if node >= 1 {
                    out.push((node - 1, true));
                }
                if node < level {
                    out.push((node, false));
                }
                out
            }
        }
    }

    /// Number of up moves on the way to `node`.
    pub fn up_moves(&self, _level: usize, node: usize) -> usize {
        match self.mode {
            TreeMode::FullBinary => node.count_ones() as usize,
            TreeMode::Recombining => node,
        }
    }

    /// Value of the cumulative Brownian increment `B_{t_i}` at a node.
    pub fn brownian(&self, level: usize, node: usize) -> f64 {
        let ups = self.up_moves(level, node) as f64;
        (2.0 * ups - level as f64) * self.grid.sqrt_dt()
    }

    /// Node index reached after following `moves` (true = up) from the root.
    pub fn node_along(&self, moves: &[bool]) -> usize {
        moves
            .iter()
            .fold(0usize, |node, &up| match (self.mode, up) {
                (TreeMode::FullBinary, up) => 2 * node + usize::from(up),
                (TreeMode::Recombining, true) => node + 1,
                (TreeMode::Recombining, false) => node,
            })
    }

    /// For full binary trees: the ancestor of leaf `leaf` at `level`.
    pub fn ancestor_of_leaf(&self, leaf: usize, level: usize) -> usize {
        debug_assert!(self.is_full_binary());
        leaf >> (self.steps() - level)
    }

    /// Probability of every node at `level`; the weights sum to one.
    pub fn level_probabilities(&self, level: usize) -> Vec<f64> {
        match self.mode {
            TreeMode::FullBinary => vec![0.5f64.powi(level as i32); 1usize << level],
            TreeMode::Recombining if level <= EXACT_BINOMIAL_LEVEL => {
                let scale = 0.5f64.powi(level as i32);
                let mut c: u128 = 1;
                let mut row = Vec::with_capacity(level + 1);
                for j in 0..=level {
                    row.push(c as f64 * scale);
                    c = c * (level - j) as u128 / (j + 1) as u128;
                }
                row
            }
            TreeMode::Recombining => {
                // Pascal halving, then renormalised with a compensated sum.
                let mut row = vec![1.0f64];
                for i in 1..=level {
                    let mut next = vec![0.0f64; i + 1];
                    for (j, p) in row.iter().enumerate() {
                        next[j] += 0.5 * p;
                        next[j + 1] += 0.5 * p;
                    }
                    row = next;
                }
                let total = compensated_sum(row.iter().copied());
                row.iter_mut().for_each(|p| *p /= total);
                row
            }
        }
    }

    /// `E[process_{t_level}]` with compensated summation.
    pub fn expectation(&self, process: &AdaptedProcess, level: usize) -> Result<f64> {
        if process.tree() != *self {
            return Err(Error::TreeMismatch);
        }
        let probs = self.level_probabilities(level);
        Ok(compensated_sum(
            probs.iter().zip(process.level(level)).map(|(p, v)| p * v),
        ))
    }
}

/// Neumaier summation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// One-step conditional expectation under the symmetric walk.
pub fn conditional_expectation(child_up: f64, child_down: f64) -> f64 {
    (child_up + child_down) / 2.0
}

/// The unique `z` with `child = mean + z * (+-sqrt(dt))`.
pub fn martingale_coefficient(child_up: f64, child_down: f64, dt: f64) -> f64 {
    (child_up - child_down) / (2.0 * dt.sqrt())
}

/// A real value at every node of every level.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedProcess {
    tree: ScenarioTree,
    levels: Vec<Vec<f64>>,
}

impl AdaptedProcess {
    pub fn zeros(tree: ScenarioTree) -> Self {
        Self::constant(tree, 0.0)
    }

    pub fn constant(tree: ScenarioTree, value: f64) -> Self {
        let levels = (0..=tree.steps())
            .map(|i| vec![value; tree.width(i)])
            .collect();
        Self { tree, levels }
    }

    /// Builds a process from `f(level, node)`.
    pub fn from_fn(tree: ScenarioTree, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let levels = (0..=tree.steps())
            .map(|i| (0..tree.width(i)).map(|j| f(i, j)).collect())
            .collect();
        Self { tree, levels }
    }

    /// Builds a process from per-level vectors; each must match the level width.
    pub fn from_levels(tree: ScenarioTree, levels: Vec<Vec<f64>>) -> Result<Self> {
        if levels.len() != tree.steps() + 1
            || levels
                .iter()
                .enumerate()
                .any(|(i, l)| l.len() != tree.width(i))
        {
            return Err(Error::TreeMismatch);
        }
        Ok(Self { tree, levels })
    }

    /// Markovian process `f(t_i, B_{t_i})`.
    pub fn from_markov(tree: ScenarioTree, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_fn(tree, |i, j| f(tree.time(i), tree.brownian(i, j)))
    }

    /// The Brownian motion itself.
    pub fn brownian(tree: ScenarioTree) -> Self {
        Self::from_fn(tree, |i, j| tree.brownian(i, j))
    }

    pub fn tree(&self) -> ScenarioTree {
        self.tree
    }

    pub fn value(&self, level: usize, node: usize) -> f64 {
        self.levels[level][node]
    }

    pub(crate) fn set(&mut self, level: usize, node: usize, value: f64) {
        self.levels[level][node] = value;
    }

    pub fn level(&self, level: usize) -> &[f64] {
        &self.levels[level]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn root(&self) -> f64 {
        self.levels[0][0]
    }

    /// Iterates `(level, node, value)` over every node.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().enumerate().map(move |(j, &v)| (i, j, v)))
    }

    pub fn max_value(&self) -> f64 {
        self.iter()
            .map(|(_, _, v)| v)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.iter().map(|(_, _, v)| v).fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            tree: self.tree,
            levels: self
                .levels
                .iter()
                .map(|l| l.iter().map(|&v| f(v)).collect())
                .collect(),
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.tree != other.tree {
            return Err(Error::TreeMismatch);
        }
        Ok(Self {
            tree: self.tree,
            levels: self
                .levels
                .iter()
                .zip(&other.levels)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
        })
    }

    /// Largest nodewise `|self - other|`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self.zip_with(other, |a, b| (a - b).abs())?.max_value())
    }

    /// The stopped process `X_{t ∧ τ}`. Needs node-unique histories.
    pub fn stopped_at(&self, rule: &StoppingRule) -> Result<Self> {
        if rule.tree() != self.tree {
            return Err(Error::TreeMismatch);
        }
        if !self.tree.is_full_binary() {
            return Err(Error::RequiresFullBinary("stopped process"));
        }
        let mut out = self.clone();
        for i in 1..=self.tree.steps() {
            for j in 0..self.tree.width(i) {
                let parent = j >> 1;
                if rule.stopped_mask_full_binary(i - 1, parent) {
                    let frozen = out.levels[i - 1][parent];
                    out.levels[i][j] = frozen;
                }
            }
        }
        Ok(out)
    }
}

/// Deterministic process `f(t_i)` on every node of level `i`.
pub fn lift_deterministic(f: impl Fn(f64) -> f64, tree: ScenarioTree) -> AdaptedProcess {
    AdaptedProcess::from_fn(tree, |i, _| f(tree.time(i)))
}

/// A first-hit stopping rule. A path stops at the first flagged node it
/// visits; every path stops at level `N` at the latest.
#[derive(Clone, Debug, PartialEq)]
pub struct StoppingRule {
    tree: ScenarioTree,
    flags: Vec<Vec<bool>>,
    // FullBinary only: ancestor-or-self flagged.
    stopped: Option<Vec<Vec<bool>>>,
}

impl StoppingRule {
    pub fn from_fn(tree: ScenarioTree, mut flag: impl FnMut(usize, usize) -> bool) -> Self {
        let n = tree.steps();
        let flags: Vec<Vec<bool>> = (0..=n)
            .map(|i| (0..tree.width(i)).map(|j| i == n || flag(i, j)).collect())
            .collect();
        let stopped = tree.is_full_binary().then(|| {
            let mut s: Vec<Vec<bool>> = Vec::with_capacity(n + 1);
            s.push(vec![flags[0][0]]);
            for i in 1..=n {
                let row = (0..tree.width(i))
                    .map(|j| s[i - 1][j >> 1] || flags[i][j])
                    .collect();
                s.push(row);
            }
            s
        });
        Self {
            tree,
            flags,
            stopped,
        }
    }

    pub fn from_flags(tree: ScenarioTree, flags: Vec<Vec<bool>>) -> Result<Self> {
        if flags.len() != tree.steps() + 1
            || flags
                .iter()
                .enumerate()
                .any(|(i, l)| l.len() != tree.width(i))
        {
            return Err(Error::TreeMismatch);
        }
        Ok(Self::from_fn(tree, |i, j| flags[i][j]))
    }

    /// Stops everywhere at time zero.
    pub fn root(tree: ScenarioTree) -> Self {
        Self::at_level(tree, 0)
    }

    /// Never stops before the horizon.
    pub fn terminal(tree: ScenarioTree) -> Self {
        Self::from_fn(tree, |_, _| false)
    }

    /// Deterministic stopping at `level` (clamped to `N`).
    pub fn at_level(tree: ScenarioTree, level: usize) -> Self {
        Self::from_fn(tree, |i, _| i >= level)
    }

    pub fn tree(&self) -> ScenarioTree {
        self.tree
    }

    pub fn is_flagged(&self, level: usize, node: usize) -> bool {
        self.flags[level][node]
    }

    pub fn flags(&self) -> &[Vec<bool>] {
        &self.flags
    }

    pub(crate) fn stopped_mask_full_binary(&self, level: usize, node: usize) -> bool {
        self.stopped.as_ref().expect("full binary tree")[level][node]
    }

    /// Per node: has every path through it stopped at or before it?
    ///
    /// On full binary trees this is always defined. On recombining trees it
    /// exists only if the answer does not depend on the path taken.
    pub fn stopped_mask(&self) -> Result<Vec<Vec<bool>>> {
        if let Some(s) = &self.stopped {
            return Ok(s.clone());
        }
        let n = self.tree.steps();
        // (some path stopped, some path open) per node
        let mut any_stopped = vec![vec![self.flags[0][0]]];
        let mut any_open = vec![vec![!self.flags[0][0]]];
        for i in 1..=n {
            let mut st = vec![false; self.tree.width(i)];
            let mut op = vec![false; self.tree.width(i)];
            for j in 0..self.tree.width(i) {
                for (p, _) in self.tree.parents(i, j) {
                    st[j] |= any_stopped[i - 1][p];
                    op[j] |= any_open[i - 1][p];
                }
                if self.flags[i][j] {
                    st[j] |= op[j];
                    op[j] = false;
                }
            }
            any_stopped.push(st);
            any_open.push(op);
        }
        let mut out = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let mut row = Vec::with_capacity(self.tree.width(i));
            for j in 0..self.tree.width(i) {
                if any_stopped[i][j] && any_open[i][j] {
                    return Err(Error::RequiresFullBinary(
                        "stopping status depends on the path on a recombining tree",
                    ));
                }
                row.push(any_stopped[i][j]);
            }
            out.push(row);
        }
        Ok(out)
    }

    /// Nodes reached by some path that has not stopped earlier.
    fn open_reach(&self) -> Vec<Vec<bool>> {
        let n = self.tree.steps();
        let mut reach = vec![vec![true]];
        for i in 1..=n {
            let mut row = vec![false; self.tree.width(i)];
            for (j, r) in row.iter_mut().enumerate() {
                *r = self
                    .tree
                    .parents(i, j)
                    .into_iter()
                    .any(|(p, _)| reach[i - 1][p] && !self.flags[i - 1][p]);
            }
            reach.push(row);
        }
        reach
    }

    /// Nodes at which some path actually stops.
    pub fn first_hit_nodes(&self) -> Vec<Vec<bool>> {
        let reach = self.open_reach();
        reach
            .iter()
            .zip(&self.flags)
            .map(|(r, f)| r.iter().zip(f).map(|(&a, &b)| a && b).collect())
            .collect()
    }

    /// `(level, node)` pairs of [`Self::first_hit_nodes`].
    pub fn stop_nodes(&self) -> Vec<(usize, usize)> {
        self.first_hit_nodes()
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &h)| h)
                    .map(move |(j, _)| (i, j))
            })
            .collect()
    }

    /// Stopping level along the path given by `moves` (length `N`, true = up).
    pub fn stop_level_along(&self, moves: &[bool]) -> usize {
        let mut node = 0usize;
        for (i, &up) in moves.iter().enumerate() {
            if self.flags[i][node] {
                return i;
            }
            node = if up {
                self.tree.up_child(i, node)
            } else {
                self.tree.down_child(i, node)
            };
        }
        self.tree.steps()
    }

    /// Stopping level of every leaf path of a full binary tree.
    pub fn stopping_levels(&self) -> Result<Vec<usize>> {
        if !self.tree.is_full_binary() {
            return Err(Error::RequiresFullBinary("per-path stopping levels"));
        }
        let n = self.tree.steps();
        Ok((0..self.tree.width(n))
            .map(|leaf| {
                (0..=n)
                    .find(|&i| self.flags[i][self.tree.ancestor_of_leaf(leaf, i)])
                    .unwrap_or(n)
            })
            .collect())
    }

    /// `min(self, other)`, the first hit of either rule.
    pub fn earliest(&self, other: &Self) -> Result<Self> {
        if self.tree != other.tree {
            return Err(Error::TreeMismatch);
        }
        Ok(Self::from_fn(self.tree, |i, j| {
            self.flags[i][j] || other.flags[i][j]
        }))
    }

    /// Whether `self <= other` on every path.
    pub fn precedes(&self, other: &Self) -> Result<bool> {
        if self.tree != other.tree {
            return Err(Error::TreeMismatch);
        }
        // Nodes reachable with both rules still open.
        let n = self.tree.steps();
        let mut both_open = vec![vec![true]];
        for i in 0..=n {
            if i > 0 {
                let mut row = vec![false; self.tree.width(i)];
                for (j, r) in row.iter_mut().enumerate() {
                    *r = self.tree.parents(i, j).into_iter().any(|(p, _)| {
                        both_open[i - 1][p] && !self.flags[i - 1][p] && !other.flags[i - 1][p]
                    });
                }
                both_open.push(row);
            }
            for j in 0..self.tree.width(i) {
                if both_open[i][j] && other.flags[i][j] && !self.flags[i][j] {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Same stopping time on every path.
    pub fn equivalent(&self, other: &Self) -> Result<bool> {
        if self.tree != other.tree {
            return Err(Error::TreeMismatch);
        }
        Ok(self.first_hit_nodes() == other.first_hit_nodes())
    }

    pub fn is_terminal(&self) -> bool {
        let n = self.tree.steps();
        self.flags[..n].iter().all(|l| l.iter().all(|f| !f))
    }
}

/// First-hit rule of the event `a <= b + tol`.
pub fn hitting_rule(a: &AdaptedProcess, b: &AdaptedProcess, tol: f64) -> Result<StoppingRule> {
    if a.tree() != b.tree() {
        return Err(Error::TreeMismatch);
    }
    Ok(StoppingRule::from_fn(a.tree(), |i, j| {
        a.value(i, j) <= b.value(i, j) + tol
    }))
}

/// Probability of the paths on which `predicate` holds at every node from
/// the path's stopping node up to the horizon.
///
/// The result is normalised by the propagated stopped mass, so an event
/// holding on every path has probability exactly 1.
pub fn event_probability(rule: &StoppingRule, predicate: impl Fn(usize, usize) -> bool) -> f64 {
    let tree = rule.tree();
    let n = tree.steps();
    // open: mass not yet stopped; good: stopped and predicate held so far;
    // done: stopped.
    let mut open = vec![1.0f64];
    let mut good = vec![0.0f64];
    let mut done = vec![0.0f64];
    for i in 0..=n {
        for j in 0..tree.width(i) {
            let holds = predicate(i, j);
            if !holds {
                good[j] = 0.0;
            }
            if rule.is_flagged(i, j) {
                if holds {
                    good[j] += open[j];
                }
                done[j] += open[j];
                open[j] = 0.0;
            }
        }
        if i == n {
            break;
        }
        let w = tree.width(i + 1);
        let mut next_open = vec![0.0f64; w];
        let mut next_good = vec![0.0f64; w];
        let mut next_done = vec![0.0f64; w];
        for j in 0..tree.width(i) {
            for child in [tree.down_child(i, j), tree.up_child(i, j)] {
                next_open[child] += 0.5 * open[j];
                next_good[child] += 0.5 * good[j];
                next_done[child] += 0.5 * done[j];
            }
        }
        open = next_open;
        good = next_good;
        done = next_done;
    }
    compensated_sum(good) / compensated_sum(done)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(t: f64, n: usize, mode: TreeMode) -> ScenarioTree {
        build_tree(TimeGrid::new(t, n).unwrap(), mode).unwrap()
    }

    #[test]
    fn one_step_full_binary() {
        let tr = tree(1.0, 1, TreeMode::FullBinary);
        assert_eq!(tr.width(1), 2);
        assert_eq!(tr.brownian(1, 0), -1.0);
        assert_eq!(tr.brownian(1, 1), 1.0);
        assert_eq!(tr.level_probabilities(1), vec![0.5, 0.5]);
    }

    #[test]
    fn two_step_recombining() {
        let tr = tree(1.0, 2, TreeMode::Recombining);
        let b: Vec<f64> = (0..3).map(|j| tr.brownian(2, j)).collect();
        let s = 0.5f64.sqrt();
        assert_eq!(b, vec![-2.0 * s, 0.0, 2.0 * s]);
        assert_eq!(tr.level_probabilities(2), vec![0.25, 0.5, 0.25]);
    }

    #[test]
    fn depth_guard_and_invalid_grid() {
        let g = TimeGrid::new(1.0, 30).unwrap();
        assert_eq!(
            build_tree(g, TreeMode::FullBinary),
            Err(Error::DepthExceeded {
                depth: 30,
                limit: MAX_FULL_BINARY_DEPTH
            })
        );
        assert!(build_tree(g, TreeMode::Recombining).is_ok());
        assert!(matches!(
            TimeGrid::new(1.0, 0),
            Err(Error::InvalidGrid { .. })
        ));
        assert!(matches!(
            TimeGrid::new(0.0, 3),
            Err(Error::InvalidGrid { .. })
        ));
        assert!(matches!(
            TimeGrid::new(-1.0, 3),
            Err(Error::InvalidGrid { .. })
        ));
    }

    #[test]
    fn expectation_and_coefficient_helpers() {
        assert_eq!(conditional_expectation(2.0, 0.0), 1.0);
        assert_eq!(conditional_expectation(0.7, 0.7), 0.7);
        assert_eq!(conditional_expectation(1.0 / 3.0, 1.0 / 3.0), 1.0 / 3.0);
        assert_eq!(martingale_coefficient(0.4, 0.4, 0.1), 0.0);
        assert_eq!(martingale_coefficient(1.0, 0.0, 0.25), 1.0);
        // planted z is recovered exactly for dyadic dt
        let dt: f64 = 0.0625;
        for &z in &[-3.5, 0.0, 0.25, 7.0] {
            let y = 1.25;
            let up = y + z * dt.sqrt();
            let down = y - z * dt.sqrt();
            assert_eq!(martingale_coefficient(up, down, dt), z);
        }
    }

    #[test]
    fn lift_deterministic_examples() {
        let tr = tree(1.0, 2, TreeMode::FullBinary);
        let s = lift_deterministic(|t| -2.0 * t + 1.0, tr);
        assert_eq!(s.level(0), &[1.0]);
        assert_eq!(s.level(1), &[0.0, 0.0]);
        assert_eq!(s.level(2), &[-1.0; 4]);
        let zero = lift_deterministic(|_| 0.0, tr);
        assert_eq!(zero, AdaptedProcess::zeros(tr));
        let tr4 = tree(1.0, 4, TreeMode::Recombining);
        let id = lift_deterministic(|t| t, tr4);
        let firsts: Vec<f64> = (0..=4).map(|i| id.value(i, 0)).collect();
        assert_eq!(firsts, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn hitting_rule_examples() {
        let tr = tree(1.0, 3, TreeMode::FullBinary);
        let one = AdaptedProcess::constant(tr, 1.0);
        let zero = AdaptedProcess::zeros(tr);
        let never = hitting_rule(&one, &zero, 0.0).unwrap();
        assert_eq!(never.stopping_levels().unwrap(), vec![3; 8]);
        assert!(never.is_terminal());
        let now = hitting_rule(&one, &one, 0.0).unwrap();
        assert_eq!(now.stopping_levels().unwrap(), vec![0; 8]);
        let other = tree(1.0, 4, TreeMode::FullBinary);
        assert_eq!(
            hitting_rule(&one, &AdaptedProcess::zeros(other), 0.0),
            Err(Error::TreeMismatch)
        );
    }

    #[test]
    fn event_probability_examples() {
        let tr = tree(1.0, 4, TreeMode::FullBinary);
        let rule = StoppingRule::terminal(tr);
        assert_eq!(event_probability(&rule, |_, _| true), 1.0);
        assert_eq!(event_probability(&rule, |_, _| false), 0.0);
        assert_eq!(event_probability(&rule, |i, j| i < 4 || j == 5), 0.0625);
        let rec = tree(1.0, 4, TreeMode::Recombining);
        let rule = StoppingRule::terminal(rec);
        assert_eq!(event_probability(&rule, |i, j| i < 4 || j == 2), 0.375);
    }

    #[test]
    fn event_probability_after_stopping_only() {
        // predicate fails before the stop, holds afterwards
        let tr = tree(1.0, 3, TreeMode::FullBinary);
        let rule = StoppingRule::at_level(tr, 2);
        assert_eq!(event_probability(&rule, |i, _| i >= 2), 1.0);
        assert_eq!(event_probability(&rule, |i, _| i != 3), 0.0);
    }

    #[test]
    fn stopped_mask_on_recombining() {
        let rec = tree(1.0, 3, TreeMode::Recombining);
        let fixed = StoppingRule::at_level(rec, 2);
        let mask = fixed.stopped_mask().unwrap();
        assert_eq!(mask[1], vec![false, false]);
        assert_eq!(mask[2], vec![true; 3]);
        // stop on the first up move: node (2,1) is reached stopped and open
        let up = StoppingRule::from_fn(rec, |i, j| i == 1 && j == 1);
        assert!(up.stopped_mask().is_err());
    }

    #[test]
    fn precedence() {
        let tr = tree(1.0, 3, TreeMode::FullBinary);
        let root = StoppingRule::root(tr);
        let term = StoppingRule::terminal(tr);
        let mid = StoppingRule::at_level(tr, 2);
        assert!(root.precedes(&term).unwrap());
        assert!(mid.precedes(&term).unwrap());
        assert!(!term.precedes(&mid).unwrap());
        assert!(mid.precedes(&mid).unwrap());
        let random = StoppingRule::from_fn(tr, |i, j| i == 1 && j == 1);
        assert!(random.precedes(&term).unwrap());
        assert!(!random.precedes(&root).unwrap());
        assert!(root.precedes(&random).unwrap());
    }

    #[test]
    fn stopped_process_freezes_values() {
        let tr = tree(1.0, 3, TreeMode::FullBinary);
        let b = AdaptedProcess::brownian(tr);
        let rule = StoppingRule::from_fn(tr, |i, j| i == 1 && j == 1);
        let stopped = b.stopped_at(&rule).unwrap();
        let s = tr.grid().sqrt_dt();
        // up branch frozen at B_{t1}
        assert_eq!(stopped.level(3)[4..], [s; 4]);
        assert_eq!(stopped.level(3)[..4], b.level(3)[..4]);
        let rec = tree(1.0, 3, TreeMode::Recombining);
        assert!(AdaptedProcess::zeros(rec)
            .stopped_at(&StoppingRule::terminal(rec))
            .is_err());
    }
}
