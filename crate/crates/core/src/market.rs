//! American options on a multiplicative Euler stock lattice.
//!
//! The stock moves by `X_{i+1} = X_i (1 + μ dt ± σ sqrt(dt))`. The option
//! value solves the reflected equation with driver `g(t, y, z) = −(r y + θ z)`,
//! `θ = (μ − r)/σ`, obstacle `payoff(X_t)` and terminal `payoff(X_T)`. Note
//! the sign: the discount and the risk premium enter the driver negatively.
//!
//! On the same tree this coincides with the classical risk-neutral dynamic
//! program with `q_up = (1 − θ sqrt(dt))/2` and discount `1/(1 + r dt)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::{solve_bsde, TerminalCondition};
use crate::error::{Error, Result};
use crate::generator::{AssumptionFlags, Expr, GeneratorSpec};
use crate::lattice::{AdaptedProcess, ScenarioTree, StoppingRule};
use crate::rbsde::{solve_rbsde, ObstacleSpec, RbsdeSolution, CONTACT_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    x0: f64,
    mu: f64,
    sigma: f64,
    r: f64,
    strike: f64,
    kind: OptionKind,
}

impl MarketModel {
    pub fn new(
        x0: f64,
        mu: f64,
        sigma: f64,
        r: f64,
        strike: f64,
        kind: OptionKind,
    ) -> Result<Self> {
        if ![x0, mu, sigma, r, strike].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("parameters must be finite".into()));
        }
        if x0 <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "initial price must be positive, got {x0}"
            )));
        }
        if sigma <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "volatility must be positive, got {sigma}"
            )));
        }
        if strike < 0.0 {
            return Err(Error::InvalidModel(format!(
                "strike must be nonnegative, got {strike}"
            )));
        }
        Ok(Self {
            x0,
            mu,
            sigma,
            r,
            strike,
            kind,
        })
    }

    /// Model with drift `μ = r + σ θ`.
    pub fn from_theta(
        x0: f64,
        theta: f64,
        sigma: f64,
        r: f64,
        strike: f64,
        kind: OptionKind,
    ) -> Result<Self> {
        Self::new(x0, r + sigma * theta, sigma, r, strike, kind)
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn strike(&self) -> f64 {
        self.strike
    }

    pub fn kind(&self) -> OptionKind {
        self.kind
    }

    /// Market price of risk `(μ − r)/σ`.
    pub fn theta(&self) -> f64 {
        (self.mu - self.r) / self.sigma
    }

    pub fn with_strike(&self, strike: f64) -> Result<Self> {
        Self::new(self.x0, self.mu, self.sigma, self.r, strike, self.kind)
    }

    pub fn payoff(&self, x: f64) -> f64 {
        match self.kind {
            OptionKind::Call => (x - self.strike).max(0.0),
            OptionKind::Put => (self.strike - x).max(0.0),
        }
    }

    /// `g(t, y, z) = −(r y + θ z)` with Lipschitz constant `|r| + |θ|`.
    pub fn generator(&self) -> GeneratorSpec {
        let theta = self.theta();
        let e = Expr::add(Expr::scale(-self.r, Expr::Y), Expr::scale(-theta, Expr::Z));
        let flags = AssumptionFlags {
            a3: self.r == 0.0,
            ..AssumptionFlags::default()
        };
        GeneratorSpec::new(e, self.r.abs() + theta.abs(), flags).expect("finite coefficients")
    }
}

/// Stock prices `X0 (1 + μ dt + σ sqrt(dt))^ups (1 + μ dt − σ sqrt(dt))^downs`.
pub fn simulate_stock(tree: ScenarioTree, model: &MarketModel) -> Result<AdaptedProcess> {
    let dt = tree.dt();
    let sq = tree.grid().sqrt_dt();
    let up = 1.0 + model.mu * dt + model.sigma * sq;
    let down = 1.0 + model.mu * dt - model.sigma * sq;
    if down <= 0.0 {
        return Err(Error::PositivityViolated { factor: down });
    }
    Ok(AdaptedProcess::from_fn(tree, |i, j| {
        let ups = tree.up_moves(i, j);
        model.x0 * up.powi(ups as i32) * down.powi((i - ups) as i32)
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmericanPrice {
    pub price: f64,
    pub solution: RbsdeSolution,
    pub obstacle: ObstacleSpec,
    /// First node where `Y` touches a positive payoff; the horizon otherwise.
    pub exercise: StoppingRule,
}

impl AmericanPrice {
    /// Earliest grid time at which exercise happens on some path (`T` if never).
    pub fn earliest_exercise_time(&self) -> f64 {
        let tree = self.solution.y.tree();
        let level = self
            .exercise
            .stop_nodes()
            .into_iter()
            .map(|(i, _)| i)
            .min()
            .unwrap_or(tree.steps());
        tree.time(level)
    }
}

fn payoff_process(tree: ScenarioTree, model: &MarketModel) -> Result<AdaptedProcess> {
    Ok(simulate_stock(tree, model)?.map(|x| model.payoff(x)))
}

/// Exercise nodes: `Y <= S + tol` where the payoff is positive. Nodes with
/// zero payoff never count, so out-of-the-money paths run to the horizon.
fn exercise_mask(y: &AdaptedProcess, s: &AdaptedProcess, tol: f64) -> StoppingRule {
    StoppingRule::from_fn(y.tree(), |i, j| {
        let pay = s.value(i, j);
        pay > 0.0 && y.value(i, j) <= pay + tol
    })
}

/// Price as the root of the reflected equation.
pub fn price_american_rbsde(tree: ScenarioTree, model: &MarketModel) -> Result<AmericanPrice> {
    let s = payoff_process(tree, model)?;
    let xi = TerminalCondition::at_horizon(s.clone());
    let obstacle = ObstacleSpec::unbounded(s);
    let solution = solve_rbsde(tree, &model.generator(), &xi, &obstacle)?;
    let exercise = exercise_mask(&solution.y, obstacle.process(), CONTACT_TOL);
    Ok(AmericanPrice {
        price: solution.root(),
        solution,
        obstacle,
        exercise,
    })
}

/// European value under the same driver (no early exercise).
pub fn price_european_rbsde(tree: ScenarioTree, model: &MarketModel) -> Result<f64> {
    let s = payoff_process(tree, model)?;
    Ok(
        solve_bsde(tree, &model.generator(), &TerminalCondition::at_horizon(s))?
            .y
            .root(),
    )
}

/// Values and exercise flags of the risk-neutral dynamic program.
#[derive(Clone, Debug, PartialEq)]
pub struct DpSolution {
    pub values: AdaptedProcess,
    /// Payoff positive and at least the continuation value.
    pub exercise: Vec<Vec<bool>>,
}

fn risk_neutral_up(tree: ScenarioTree, model: &MarketModel) -> Result<f64> {
    let v = model.theta() * tree.grid().sqrt_dt();
    if v.abs() >= 1.0 {
        return Err(Error::ProbabilityOutOfRange { value: v });
    }
    Ok((1.0 - v) / 2.0)
}

/// `V_i = max(payoff(X_i), (q V_up + (1 − q) V_down)/(1 + r dt))`.
pub fn riskneutral_dp(tree: ScenarioTree, model: &MarketModel) -> Result<DpSolution> {
    let q = risk_neutral_up(tree, model)?;
    let disc = 1.0 + model.r * tree.dt();
    let s = payoff_process(tree, model)?;
    let n = tree.steps();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut exercise: Vec<Vec<bool>> = vec![Vec::new(); n + 1];
    values[n] = s.level(n).to_vec();
    exercise[n] = s.level(n).iter().map(|&p| p > 0.0).collect();
    for i in (0..n).rev() {
        let (vals, ex): (Vec<f64>, Vec<bool>) = (0..tree.width(i))
            .map(|j| {
                let next = &values[i + 1];
                let cont = (q * next[tree.up_child(i, j)]
                    + (1.0 - q) * next[tree.down_child(i, j)])
                    / disc;
                let pay = s.value(i, j);
                (pay.max(cont), pay > 0.0 && pay >= cont)
            })
            .unzip();
        values[i] = vals;
        exercise[i] = ex;
    }
    Ok(DpSolution {
        values: AdaptedProcess::from_levels(tree, values)?,
        exercise,
    })
}

/// Root value of [`riskneutral_dp`].
pub fn price_american_riskneutral_dp(tree: ScenarioTree, model: &MarketModel) -> Result<f64> {
    Ok(riskneutral_dp(tree, model)?.values.root())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrikePrice {
    pub strike: f64,
    pub price: f64,
    /// Earliest grid time with exercise on some path, `T` if never.
    pub exercise_boundary_t0: f64,
}

/// Prices for each strike, in input order.
pub fn price_strike_family(
    tree: ScenarioTree,
    model: &MarketModel,
    strikes: &[f64],
) -> Result<Vec<StrikePrice>> {
    strikes
        .par_iter()
        .map(|&k| {
            let p = price_american_rbsde(tree, &model.with_strike(k)?)?;
            Ok(StrikePrice {
                strike: k,
                price: p.price,
                exercise_boundary_t0: p.earliest_exercise_time(),
            })
        })
        .collect()
}

/// Parameters assumed known when recovering `θ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnownMarket {
    pub x0: f64,
    pub sigma: f64,
    pub r: f64,
    pub kind: OptionKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub theta_hat: f64,
    /// Sum of squared pricing errors at `theta_hat`.
    pub objective: f64,
    pub iterations: usize,
}

/// Search bracket for `θ`.
pub const THETA_BRACKET: (f64, f64) = (-3.0, 3.0);
const THETA_WIDTH: f64 = 1e-12;
const MAX_SEARCH: usize = 200;
const SCAN_CELLS: usize = 600;
/// Distance from a bracket end below which the optimum counts as not interior.
const EDGE: f64 = 1e-9;

fn model_prices(
    tree: ScenarioTree,
    known: &KnownMarket,
    theta: f64,
    strikes: &[f64],
) -> Result<Vec<f64>> {
    strikes
        .par_iter()
        .map(|&k| {
            let m = MarketModel::from_theta(known.x0, theta, known.sigma, known.r, k, known.kind)?;
            Ok(price_american_rbsde(tree, &m)?.price)
        })
        .collect()
}

fn sse(
    tree: ScenarioTree,
    known: &KnownMarket,
    theta: f64,
    observed: &[(f64, f64)],
) -> Result<f64> {
    let strikes: Vec<f64> = observed.iter().map(|o| o.0).collect();
    let prices = model_prices(tree, known, theta, &strikes)?;
    Ok(prices
        .iter()
        .zip(observed)
        .map(|(p, o)| (p - o.1).powi(2))
        .sum())
}

/// Least-squares `θ` on `[−3, 3]` from observed `(strike, price)` pairs.
///
/// Prices depend on `θ` only through the lattice geometry, so the objective
/// is small, flat and jagged. A uniform scan with spacing `0.01` locates the
/// best cell, then golden-section search refines it to width `1e-12`.
pub fn recover_theta(
    tree: ScenarioTree,
    observed: &[(f64, f64)],
    known: &KnownMarket,
) -> Result<ThetaEstimate> {
    if observed.is_empty() {
        return Err(Error::Precondition(
            "at least one observed price is needed".into(),
        ));
    }
    let (lo0, hi0) = THETA_BRACKET;
    let step = (hi0 - lo0) / SCAN_CELLS as f64;
    let scan: Vec<f64> = (0..=SCAN_CELLS)
        .into_par_iter()
        .map(|k| sse(tree, known, lo0 + step * k as f64, observed))
        .collect::<Result<_>>()?;
    let best = (0..=SCAN_CELLS)
        .min_by(|&a, &b| scan[a].total_cmp(&scan[b]))
        .expect("nonempty scan");
    let mut lo = lo0 + step * best.saturating_sub(1) as f64;
    let mut hi = lo0 + step * (best + 1).min(SCAN_CELLS) as f64;
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let mut fa = sse(tree, known, a, observed)?;
    let mut fb = sse(tree, known, b, observed)?;
    let mut iterations = 0;
    while hi - lo > THETA_WIDTH && iterations < MAX_SEARCH {
        iterations += 1;
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = sse(tree, known, a, observed)?;
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = sse(tree, known, b, observed)?;
        }
    }
    let mut theta = 0.5 * (lo + hi);
    let mut objective = sse(tree, known, theta, observed)?;
    if scan[best] < objective {
        theta = lo0 + step * best as f64;
        objective = scan[best];
    }
    if theta - lo0 < EDGE || hi0 - theta < EDGE {
        return Err(Error::NoBracket { lo: lo0, hi: hi0 });
    }
    Ok(ThetaEstimate {
        theta_hat: theta,
        objective,
        iterations,
    })
}

/// Strict monotonicity of a sequence, used by callers checking price vectors.
pub fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_tree, conditional_expectation, TimeGrid, TreeMode};
    use approx::assert_abs_diff_eq;

    fn tree(n: usize) -> ScenarioTree {
        build_tree(TimeGrid::new(1.0, n).unwrap(), TreeMode::Recombining).unwrap()
    }

    fn baseline(strike: f64) -> MarketModel {
        MarketModel::new(100.0, 0.08, 0.2, 0.02, strike, OptionKind::Call).unwrap()
    }

    #[test]
    fn theta_and_generator_sign() {
        let m = baseline(100.0);
        assert_abs_diff_eq!(m.theta(), 0.3, epsilon = 1e-15);
        let g = m.generator();
        assert_abs_diff_eq!(
            g.eval(0.0, 2.0, 1.0),
            -(0.02 * 2.0 + m.theta()),
            epsilon = 1e-15
        );
    }

    #[test]
    fn stock_examples() {
        let tr = build_tree(TimeGrid::new(0.01, 1).unwrap(), TreeMode::FullBinary).unwrap();
        let x = simulate_stock(tr, &baseline(100.0)).unwrap();
        assert_abs_diff_eq!(x.value(1, 1), 102.08, epsilon = 1e-12);
        let flat = MarketModel::new(100.0, 0.0, 0.3, 0.0, 100.0, OptionKind::Call).unwrap();
        let tr = tree(40);
        let x = simulate_stock(tr, &flat).unwrap();
        for i in 0..=40 {
            assert_abs_diff_eq!(tr.expectation(&x, i).unwrap(), 100.0, epsilon = 1e-10);
        }
        assert!(MarketModel::new(100.0, 0.0, 0.0, 0.0, 100.0, OptionKind::Call).is_err());
        let wild = MarketModel::new(100.0, 0.0, 2.0, 0.0, 100.0, OptionKind::Call).unwrap();
        assert!(matches!(
            simulate_stock(tree(2), &wild),
            Err(Error::PositivityViolated { .. })
        ));
    }

    #[test]
    fn same_tree_identity_and_exercise_consistency() {
        let tr = tree(128);
        for kind in [OptionKind::Call, OptionKind::Put] {
            let m = MarketModel::new(100.0, 0.08, 0.25, 0.05, 105.0, kind).unwrap();
            let a = price_american_rbsde(tr, &m).unwrap();
            let dp = riskneutral_dp(tr, &m).unwrap();
            assert!(a.solution.y.max_abs_diff(&dp.values).unwrap() <= 1e-10);
            for (i, row) in dp.exercise.iter().enumerate() {
                for (j, &ex) in row.iter().enumerate() {
                    if ex {
                        assert!(
                            (a.solution.y.value(i, j) - a.obstacle.process().value(i, j)).abs()
                                <= 1e-10
                        );
                        assert!(a.exercise.is_flagged(i, j));
                    }
                }
            }
            let euro = price_european_rbsde(tr, &m).unwrap();
            assert!(a.price >= euro - 1e-12 && a.price >= a.obstacle.process().root());
        }
    }

    #[test]
    fn call_without_premium_is_european() {
        let tr = tree(64);
        let m = MarketModel::new(100.0, 0.0, 0.2, 0.0, 100.0, OptionKind::Call).unwrap();
        let a = price_american_rbsde(tr, &m).unwrap();
        let x = simulate_stock(tr, &m).unwrap();
        let mut v: Vec<f64> = x
            .level(64)
            .iter()
            .map(|&s| (s - 100.0f64).max(0.0))
            .collect();
        for i in (0..64).rev() {
            v = (0..=i)
                .map(|j| conditional_expectation(v[j + 1], v[j]))
                .collect();
        }
        assert_abs_diff_eq!(a.price, v[0], epsilon = 1e-12);
        for (i, j) in a.exercise.stop_nodes() {
            assert!(a.solution.y.value(i, j) <= a.obstacle.process().value(i, j) + 1e-9);
        }
    }

    #[test]
    fn deep_put_exercises_immediately() {
        let tr = tree(64);
        let m = MarketModel::new(100.0, 0.08, 0.2, 0.02, 1000.0, OptionKind::Put).unwrap();
        let a = price_american_rbsde(tr, &m).unwrap();
        assert_eq!(a.price, 900.0);
        assert_eq!(a.exercise.stop_nodes(), vec![(0, 0)]);
    }

    #[test]
    fn strike_family_is_decreasing() {
        let tr = tree(128);
        let fam =
            price_strike_family(tr, &baseline(100.0), &[80.0, 90.0, 100.0, 110.0, 120.0]).unwrap();
        let prices: Vec<f64> = fam.iter().map(|p| p.price).collect();
        assert!(strictly_decreasing(&prices));
        let zero = price_strike_family(tr, &baseline(100.0), &[0.0]).unwrap();
        assert_abs_diff_eq!(zero[0].price, 100.0, epsilon = 1e-9);
    }

    #[test]
    fn probability_guard() {
        let tr = tree(4);
        let m = MarketModel::from_theta(100.0, 2.5, 0.2, 0.0, 100.0, OptionKind::Call).unwrap();
        assert!(matches!(
            price_american_riskneutral_dp(tr, &m),
            Err(Error::ProbabilityOutOfRange { .. })
        ));
        let edge = MarketModel::from_theta(100.0, 1.0, 0.2, 0.0, 100.0, OptionKind::Call).unwrap();
        assert!(price_american_riskneutral_dp(tr, &edge).is_ok());
    }

    #[test]
    fn one_strike_does_not_identify_theta() {
        let tr = tree(128);
        let at = |th: f64| {
            let m = MarketModel::from_theta(100.0, th, 0.2, 0.02, 100.0, OptionKind::Call).unwrap();
            price_american_rbsde(tr, &m).unwrap().price
        };
        assert!((at(0.3) - at(-0.5858210832496273)).abs() < 1e-9);
        assert!(at(0.0) < at(0.1) && at(0.1) > at(0.3));
    }

    #[test]
    fn theta_recovery() {
        let tr = tree(128);
        let known = KnownMarket {
            x0: 100.0,
            sigma: 0.2,
            r: 0.02,
            kind: OptionKind::Call,
        };
        for target in [0.3, 0.0] {
            let m =
                MarketModel::from_theta(100.0, target, 0.2, 0.02, 100.0, OptionKind::Call).unwrap();
            let obs: Vec<(f64, f64)> =
                price_strike_family(tr, &m, &[80.0, 90.0, 100.0, 110.0, 120.0])
                    .unwrap()
                    .iter()
                    .map(|p| (p.strike, p.price))
                    .collect();
            let est = recover_theta(tr, &obs, &known).unwrap();
            assert!((est.theta_hat - target).abs() < 1e-6, "{est:?}");
            assert!(est.objective < 1e-20);
            let single = recover_theta(tr, &obs[2..3], &known).unwrap();
            assert!(single.objective < 1e-18, "{single:?}");
        }
    }
}
