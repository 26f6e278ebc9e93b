use serde::Serialize;

use super::RbsdeData;
use crate::error::{Error, Result};
use crate::lattice::{event_probability, StoppingRule};

/// Equality tolerance between the two solutions.
pub const EQUALITY_TOL: f64 = 1e-9;

/// A stopping rule `τ̃ < T` after which `Y¹ < Y²` holds with positive
/// probability.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrictWitness {
    #[serde(skip)]
    pub rule: StoppingRule,
    /// Exact probability of `{Y¹ < Y² at every level in [τ̃, N]}`.
    pub probability: f64,
    /// Smallest `k` with `P(τ_k = T) > 0`.
    pub k_tilde: usize,
    /// `τ̃` per path (one entry when the construction is deterministic).
    pub tau_tilde: Vec<usize>,
    /// `τ_1, ..., τ_k̃` per path, flattened with stride `k_tilde`.
    pub trace: Vec<usize>,
    pub paths: usize,
}

impl StrictWitness {
    pub fn trace_of(&self, path: usize) -> &[usize] {
        &self.trace[path * self.k_tilde..(path + 1) * self.k_tilde]
    }

    /// Latest `τ̃` over all paths.
    pub fn max_level(&self) -> usize {
        self.tau_tilde.iter().copied().max().unwrap_or(0)
    }
}

/// `τ_1 = 0`, `τ_{k+1}` = first equality level at or after
/// `τ_k + ceil((N − τ_k)/2)`, capped at `N`. Runs until `N` is reached.
fn tau_sequence(n: usize, equal: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut seq = vec![0usize];
    let mut tau = 0usize;
    while tau < n {
        let start = tau + (n - tau).div_ceil(2);
        tau = (start..n).find(|&i| equal(i)).unwrap_or(n);
        seq.push(tau);
    }
    seq
}

/// Runs the `τ_k` construction on two reflected equations that share driver
/// and obstacle and have ordered, not identical, terminal data.
///
/// On full binary trees the construction runs path by path. On recombining
/// trees it is accepted when the equality set `{|Y¹ − Y²| <= tol}` is the
/// same on every node of a level, which makes every `τ_k` deterministic.
pub fn local_strict_witness(d1: &RbsdeData, d2: &RbsdeData) -> Result<StrictWitness> {
    let tree = d1.tree();
    if d2.tree() != tree {
        return Err(Error::TreeMismatch);
    }
    if d1.generator != d2.generator || d1.obstacle != d2.obstacle {
        return Err(Error::Precondition(
            "the witness needs a common driver and obstacle".into(),
        ));
    }
    if !d1.terminal.rule().is_terminal() || !d2.terminal.rule().is_terminal() {
        return Err(Error::Precondition(
            "the witness needs terminal data at the horizon".into(),
        ));
    }
    let n = tree.steps();
    let leaves = tree.width(n);
    let mut strict = false;
    for j in 0..leaves {
        let (a, b) = (d1.terminal.value(n, j), d2.terminal.value(n, j));
        if a > b {
            return Err(Error::Precondition(format!(
                "terminal data not ordered at leaf {j}: {a} > {b}"
            )));
        }
        strict |= a < b;
    }
    if !strict {
        return Err(Error::NoStrictGap);
    }
    let y1 = d1.solve()?.y;
    let y2 = d2.solve()?.y;
    let equal = |i: usize, j: usize| (y1.value(i, j) - y2.value(i, j)).abs() <= EQUALITY_TOL;

    let sequences: Vec<Vec<usize>> = if tree.is_full_binary() {
        (0..leaves)
            .map(|leaf| tau_sequence(n, |i| equal(i, tree.ancestor_of_leaf(leaf, i))))
            .collect()
    } else {
        for i in 0..=n {
            let first = equal(i, 0);
            if (1..tree.width(i)).any(|j| equal(i, j) != first) {
                return Err(Error::RequiresFullBinary(
                    "equality set of the two solutions depends on the node",
                ));
            }
        }
        vec![tau_sequence(n, |i| equal(i, 0))]
    };
    // index k (1-based) of the first τ_k equal to N on each path
    let k_tilde = sequences
        .iter()
        .map(|s| s.iter().position(|&t| t == n).expect("sequence ends at N") + 1)
        .min()
        .expect("at least one path");
    let tau_tilde: Vec<usize> = sequences
        .iter()
        .map(|s| {
            let prev = s[k_tilde - 2];
            prev + (n - prev) / 2
        })
        .collect();
    let trace: Vec<usize> = sequences
        .iter()
        .flat_map(|s| s[..k_tilde].iter().copied())
        .collect();

    let rule = if tree.is_full_binary() {
        StoppingRule::from_fn(tree, |i, j| {
            let leaf = j << (n - i);
            tau_tilde[leaf] == i
        })
    } else {
        StoppingRule::at_level(tree, tau_tilde[0])
    };
    let probability =
        event_probability(&rule, |i, j| y2.value(i, j) - y1.value(i, j) > EQUALITY_TOL);
    Ok(StrictWitness {
        rule,
        probability,
        k_tilde,
        tau_tilde,
        trace,
        paths: sequences.len(),
    })
}
