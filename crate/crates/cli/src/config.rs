//! Run configuration: one JSON document per invocation.
//!
//! ```json
//! {
//!   "tree": { "horizon": 1.0, "steps": 2000, "mode": "recombining" },
//!   "generator": { "expr": "1/3", "lipschitz": 0.0 },
//!   "terminal": { "kind": "constant", "value": 0.3333333333333333 },
//!   "obstacle": { "kind": "affine", "intercept": 1.0, "slope": -2.0 }
//! }
//! ```

use std::path::{Path, PathBuf};

use rbsde_lab::{
    build_tree, AdaptedProcess, AssumptionFlags, Expr, GeneratorSpec, KnownMarket, MarketModel,
    ObstacleSpec, OptionKind, ScenarioTree, TerminalCondition, TimeGrid, TreeMode,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tree: TreeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<TerminalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<ObstacleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub market: Option<MarketConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strikes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<Observed>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    #[serde(default = "unit_horizon")]
    pub horizon: f64,
    pub steps: usize,
    #[serde(default = "default_mode")]
    pub mode: TreeMode,
}

fn unit_horizon() -> f64 {
    1.0
}

fn default_mode() -> TreeMode {
    TreeMode::Recombining
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Prefix expression in `t`, `y`, `z`.
    pub expr: String,
    pub lipschitz: f64,
    #[serde(default)]
    pub flags: AssumptionFlags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerminalConfig {
    Constant {
        value: f64,
    },
    /// Prefix expression in `t` and `b`, read at the horizon.
    Expression {
        expr: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObstacleConfig {
    /// `S ≡ value`, with bound `C = value`.
    Constant { value: f64 },
    /// `S_t = intercept + slope · t`.
    Affine {
        intercept: f64,
        slope: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bound: Option<f64>,
    },
    /// Prefix expression in `t` and `b`.
    Expression {
        expr: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bound: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub x0: f64,
    pub mu: f64,
    pub sigma: f64,
    pub r: f64,
    /// Defaults to `x0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strike: Option<f64>,
    pub kind: OptionKind,
}

/// Observed `(strike, price)` pairs, inline or from a `strike,price` CSV
/// file resolved relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observed {
    Inline(Vec<(f64, f64)>),
    File { csv: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// A suite name or `all`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<usize>,
}

fn config_err(what: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{what}: {e}"))
}

fn finite(what: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{what} must be finite, got {v}")))
    }
}

fn parse_tb(what: &str, text: &str) -> Result<Expr, CliError> {
    let e = Expr::parse(text).map_err(|e| config_err(what, e))?;
    if e.depends_on_y() || e.depends_on_z() {
        return Err(CliError::Config(format!("{what} may only use t and b")));
    }
    Ok(e)
}

fn eval_tb(e: &Expr, t: f64, b: f64) -> f64 {
    e.eval(&rbsde_lab::generator::Point {
        t,
        b,
        ..Default::default()
    })
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| config_err("invalid config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(&path.display().to_string(), e))?;
        let mut cfg = Self::from_text(&text)?;
        if let Some(Observed::File { csv }) = &mut cfg.observed {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    /// Checks finiteness and grid sizes and that every expression parses.
    pub fn validate(&self) -> Result<(), CliError> {
        finite("tree.horizon", self.tree.horizon)?;
        if self.tree.steps == 0 {
            return Err(CliError::Config("tree.steps must be at least 1".into()));
        }
        self.tree()?;
        if self.generator.is_some() {
            self.generator()?;
        }
        if let Some(t) = &self.terminal {
            match t {
                TerminalConfig::Constant { value } => {
                    finite("terminal.value", *value)?;
                }
                TerminalConfig::Expression { expr } => {
                    parse_tb("terminal.expr", expr)?;
                }
            }
        }
        if let Some(o) = &self.obstacle {
            match o {
                ObstacleConfig::Constant { value } => {
                    finite("obstacle.value", *value)?;
                }
                ObstacleConfig::Affine {
                    intercept,
                    slope,
                    bound,
                } => {
                    finite("obstacle.intercept", *intercept)?;
                    finite("obstacle.slope", *slope)?;
                    if let Some(c) = bound {
                        finite("obstacle.bound", *c)?;
                    }
                }
                ObstacleConfig::Expression { expr, bound } => {
                    parse_tb("obstacle.expr", expr)?;
                    if let Some(c) = bound {
                        finite("obstacle.bound", *c)?;
                    }
                }
            }
        }
        if self.market.is_some() {
            self.market_model()?;
        }
        for &k in self.strikes.iter().flatten() {
            finite("strike", k)?;
            if k < 0.0 {
                return Err(CliError::Config(format!(
                    "strike must be nonnegative, got {k}"
                )));
            }
        }
        if let Some(Observed::Inline(pairs)) = &self.observed {
            for &(k, p) in pairs {
                finite("observed strike", k)?;
                finite("observed price", p)?;
            }
        }
        Ok(())
    }

    /// Canonical JSON: expressions re-emitted in normal prefix form.
    pub fn canonical(&self) -> Result<String, CliError> {
        let mut c = self.clone();
        if let Some(g) = &mut c.generator {
            g.expr = Expr::parse(&g.expr)
                .map_err(|e| config_err("generator.expr", e))?
                .to_prefix();
        }
        if let Some(TerminalConfig::Expression { expr }) = &mut c.terminal {
            *expr = parse_tb("terminal.expr", expr)?.to_prefix();
        }
        if let Some(ObstacleConfig::Expression { expr, .. }) = &mut c.obstacle {
            *expr = parse_tb("obstacle.expr", expr)?.to_prefix();
        }
        serde_json::to_string_pretty(&c).map_err(|e| config_err("serialize", e))
    }

    pub fn tree(&self) -> Result<ScenarioTree, CliError> {
        let grid =
            TimeGrid::new(self.tree.horizon, self.tree.steps).map_err(|e| config_err("tree", e))?;
        build_tree(grid, self.tree.mode).map_err(|e| config_err("tree", e))
    }

    pub fn generator(&self) -> Result<GeneratorSpec, CliError> {
        let g = self
            .generator
            .as_ref()
            .ok_or_else(|| CliError::Config("missing generator block".into()))?;
        GeneratorSpec::parse(&g.expr, g.lipschitz, g.flags).map_err(|e| config_err("generator", e))
    }

    pub fn terminal(&self, tree: ScenarioTree) -> Result<TerminalCondition, CliError> {
        match self
            .terminal
            .as_ref()
            .ok_or_else(|| CliError::Config("missing terminal block".into()))?
        {
            TerminalConfig::Constant { value } => Ok(TerminalCondition::constant(tree, *value)),
            TerminalConfig::Expression { expr } => {
                let e = parse_tb("terminal.expr", expr)?;
                Ok(TerminalCondition::at_horizon(AdaptedProcess::from_fn(
                    tree,
                    |i, j| eval_tb(&e, tree.time(i), tree.brownian(i, j)),
                )))
            }
        }
    }

    pub fn obstacle(&self, tree: ScenarioTree) -> Result<ObstacleSpec, CliError> {
        let spec = match self
            .obstacle
            .as_ref()
            .ok_or_else(|| CliError::Config("missing obstacle block".into()))?
        {
            ObstacleConfig::Constant { value } => return Ok(ObstacleSpec::constant(tree, *value)),
            ObstacleConfig::Affine {
                intercept,
                slope,
                bound,
            } => ObstacleSpec::new(
                AdaptedProcess::from_fn(tree, |i, _| intercept + slope * tree.time(i)),
                *bound,
            ),
            ObstacleConfig::Expression { expr, bound } => {
                let e = parse_tb("obstacle.expr", expr)?;
                ObstacleSpec::new(
                    AdaptedProcess::from_fn(tree, |i, j| {
                        eval_tb(&e, tree.time(i), tree.brownian(i, j))
                    }),
                    *bound,
                )
            }
        };
        spec.map_err(|e| config_err("obstacle", e))
    }

    pub fn market_model(&self) -> Result<MarketModel, CliError> {
        let m = self
            .market
            .as_ref()
            .ok_or_else(|| CliError::Config("missing market block".into()))?;
        MarketModel::new(m.x0, m.mu, m.sigma, m.r, m.strike.unwrap_or(m.x0), m.kind)
            .map_err(|e| config_err("market", e))
    }

    pub fn known_market(&self) -> Result<KnownMarket, CliError> {
        let m = self.market_model()?;
        Ok(KnownMarket {
            x0: m.x0(),
            sigma: m.sigma(),
            r: m.r(),
            kind: m.kind(),
        })
    }

    /// Strike list, or the market block's single strike.
    pub fn strike_list(&self) -> Result<Vec<f64>, CliError> {
        match &self.strikes {
            Some(k) if !k.is_empty() => Ok(k.clone()),
            Some(_) => Err(CliError::Config("strikes must not be empty".into())),
            None => Ok(vec![self.market_model()?.strike()]),
        }
    }

    /// Observed prices; `None` when the config has no `observed` block.
    pub fn observed_prices(&self) -> Result<Option<Vec<(f64, f64)>>, CliError> {
        match &self.observed {
            None => Ok(None),
            Some(Observed::Inline(p)) => Ok(Some(p.clone())),
            Some(Observed::File { csv }) => {
                let mut reader = csv::Reader::from_path(csv)
                    .map_err(|e| config_err(&csv.display().to_string(), e))?;
                let mut out = Vec::new();
                for row in reader.deserialize::<(f64, f64)>() {
                    let (k, p) = row.map_err(|e| config_err(&csv.display().to_string(), e))?;
                    out.push((finite("observed strike", k)?, finite("observed price", p)?));
                }
                Ok(Some(out))
            }
        }
    }
}
