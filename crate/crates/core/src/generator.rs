//! Drivers `g(t, y, z)` as small expression trees.
//!
//! The canonical text form is a prefix s-expression:
//!
//! ```text
//! atom   := number | p/q | t | y | z | b
//! form   := (abs e) | (neg e) | (negpart e) | (+ e e ...) | (- e e)
//!         | (* c e) | (min e e ...) | (pw (b1 .. bn) e0 .. en)
//! ```
//!
//! `(negpart e)` is `max(-e, 0)`; `(pw ...)` selects piece `k` on
//! `[b_k, b_{k+1})` with `b_0 = -inf`. The variable `b` (the Brownian value)
//! is only legal in terminal and obstacle expressions, never in drivers.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::StoppingRule;

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Time,
    Y,
    Z,
    B,
    Abs(Box<Expr>),
    Neg(Box<Expr>),
    NegPart(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Scale(f64, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Piecewise { breaks: Vec<f64>, pieces: Vec<Expr> },
}

/// Evaluation point.
#[derive(Clone, Copy, Debug, Default)]
pub struct Point {
    pub t: f64,
    pub y: f64,
    pub z: f64,
    pub b: f64,
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(a: Expr, b: Expr) -> Self {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn scale(c: f64, e: Expr) -> Self {
        Expr::Scale(c, Box::new(e))
    }

    pub fn min(a: Expr, b: Expr) -> Self {
        Expr::Min(Box::new(a), Box::new(b))
    }

    pub fn abs(e: Expr) -> Self {
        Expr::Abs(Box::new(e))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(e: Expr) -> Self {
        Expr::Neg(Box::new(e))
    }

    pub fn neg_part(e: Expr) -> Self {
        Expr::NegPart(Box::new(e))
    }

    pub fn eval(&self, p: &Point) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Time => p.t,
            Expr::Y => p.y,
            Expr::Z => p.z,
            Expr::B => p.b,
            Expr::Abs(e) => e.eval(p).abs(),
            Expr::Neg(e) => -e.eval(p),
            Expr::NegPart(e) => (-e.eval(p)).max(0.0),
            Expr::Add(a, b) => a.eval(p) + b.eval(p),
            Expr::Scale(c, e) => c * e.eval(p),
            Expr::Min(a, b) => a.eval(p).min(b.eval(p)),
            Expr::Piecewise { breaks, pieces } => pieces[piece_index(breaks, p.t)].eval(p),
        }
    }

    /// If the expression is affine in `y` at the given `(t, z, b)`, returns
    /// `(c0, c1)` with `g = c0 + c1 * y`.
    pub fn affine_in_y(&self, p: &Point) -> Option<(f64, f64)> {
        match self {
            Expr::Const(c) => Some((*c, 0.0)),
            Expr::Time => Some((p.t, 0.0)),
            Expr::Z => Some((p.z, 0.0)),
            Expr::B => Some((p.b, 0.0)),
            Expr::Y => Some((0.0, 1.0)),
            Expr::Neg(e) => e.affine_in_y(p).map(|(a, b)| (-a, -b)),
            Expr::Scale(c, e) => e.affine_in_y(p).map(|(a, b)| (c * a, c * b)),
            Expr::Add(l, r) => {
                let (a0, a1) = l.affine_in_y(p)?;
                let (b0, b1) = r.affine_in_y(p)?;
                Some((a0 + b0, a1 + b1))
            }
            Expr::Abs(e) => match e.affine_in_y(p)? {
                (a, b) if b == 0.0 => Some((a.abs(), 0.0)),
                _ => None,
            },
            Expr::NegPart(e) => match e.affine_in_y(p)? {
                (a, b) if b == 0.0 => Some(((-a).max(0.0), 0.0)),
                _ => None,
            },
            Expr::Min(l, r) => match (l.affine_in_y(p)?, r.affine_in_y(p)?) {
                ((a, 0.0), (b, 0.0)) => Some((a.min(b), 0.0)),
                _ => None,
            },
            Expr::Piecewise { breaks, pieces } => pieces[piece_index(breaks, p.t)].affine_in_y(p),
        }
    }

    fn any(&self, f: &impl Fn(&Expr) -> bool) -> bool {
        if f(self) {
            return true;
        }
        match self {
            Expr::Const(_) | Expr::Time | Expr::Y | Expr::Z | Expr::B => false,
            Expr::Abs(e) | Expr::Neg(e) | Expr::NegPart(e) | Expr::Scale(_, e) => e.any(f),
            Expr::Add(a, b) | Expr::Min(a, b) => a.any(f) || b.any(f),
            Expr::Piecewise { pieces, .. } => pieces.iter().any(|e| e.any(f)),
        }
    }

    pub fn depends_on_y(&self) -> bool {
        self.any(&|e| matches!(e, Expr::Y))
    }

    pub fn depends_on_z(&self) -> bool {
        self.any(&|e| matches!(e, Expr::Z))
    }

    pub fn depends_on_b(&self) -> bool {
        self.any(&|e| matches!(e, Expr::B))
    }

    /// `y` and `z` replaced by zero, i.e. `t -> g(t, 0, 0)`.
    pub fn at_origin(&self) -> Expr {
        self.substitute(&|e| match e {
            Expr::Y | Expr::Z => Some(Expr::Const(0.0)),
            _ => None,
        })
    }

    fn substitute(&self, f: &impl Fn(&Expr) -> Option<Expr>) -> Expr {
        if let Some(e) = f(self) {
            return e;
        }
        let sub = |e: &Expr| Box::new(e.substitute(f));
        match self {
            Expr::Const(_) | Expr::Time | Expr::Y | Expr::Z | Expr::B => self.clone(),
            Expr::Abs(e) => Expr::Abs(sub(e)),
            Expr::Neg(e) => Expr::Neg(sub(e)),
            Expr::NegPart(e) => Expr::NegPart(sub(e)),
            Expr::Scale(c, e) => Expr::Scale(*c, sub(e)),
            Expr::Add(a, b) => Expr::Add(sub(a), sub(b)),
            Expr::Min(a, b) => Expr::Min(sub(a), sub(b)),
            Expr::Piecewise { breaks, pieces } => Expr::Piecewise {
                breaks: breaks.clone(),
                pieces: pieces.iter().map(|e| e.substitute(f)).collect(),
            },
        }
    }

    /// Canonical prefix form.
    pub fn to_prefix(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Expr> {
        let mut p = Parser {
            src: text,
            tokens: tokenize(text)?,
            pos: 0,
        };
        let e = p.expr()?;
        if let Some(tok) = p.tokens.get(p.pos) {
            return Err(p.err_at(tok.1, "trailing input"));
        }
        Ok(e)
    }
}

fn piece_index(breaks: &[f64], t: f64) -> usize {
    breaks.iter().take_while(|&&b| t >= b).count()
}

fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{}", fmt_num(*c)),
            Expr::Time => write!(f, "t"),
            Expr::Y => write!(f, "y"),
            Expr::Z => write!(f, "z"),
            Expr::B => write!(f, "b"),
            Expr::Abs(e) => write!(f, "(abs {e})"),
            Expr::Neg(e) => write!(f, "(neg {e})"),
            Expr::NegPart(e) => write!(f, "(negpart {e})"),
            Expr::Add(a, b) => write!(f, "(+ {a} {b})"),
            Expr::Scale(c, e) => write!(f, "(* {} {e})", fmt_num(*c)),
            Expr::Min(a, b) => write!(f, "(min {a} {b})"),
            Expr::Piecewise { breaks, pieces } => {
                write!(f, "(pw (")?;
                for (i, b) in breaks.iter().enumerate() {
                    if i > 0 {
                        write!(f, " ")?;
                    }
                    write!(f, "{}", fmt_num(*b))?;
                }
                write!(f, ")")?;
                for p in pieces {
                    write!(f, " {p}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Atom(String),
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c == '(' {
            out.push((Tok::Open, i));
            i += 1;
        } else if c == ')' {
            out.push((Tok::Close, i));
            i += 1;
        } else {
            let start = i;
            while i < bytes.len() {
                let c = bytes[i] as char;
                if c.is_whitespace() || c == '(' || c == ')' {
                    break;
                }
                i += 1;
            }
            out.push((Tok::Atom(src[start..i].to_string()), start));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser<'_> {
    fn err_at(&self, position: usize, message: &str) -> Error {
        Error::Parse {
            position,
            message: message.to_string(),
        }
    }

    fn here(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|t| t.1)
            .unwrap_or(self.src.len())
    }

    fn next(&mut self) -> Result<(Tok, usize)> {
        let t = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| self.err_at(self.src.len(), "unexpected end of input"))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect_close(&mut self) -> Result<()> {
        match self.next()? {
            (Tok::Close, _) => Ok(()),
            (_, at) => Err(self.err_at(at, "expected ')'")),
        }
    }

    fn number(&mut self) -> Result<f64> {
        match self.next()? {
            (Tok::Atom(a), at) => {
                parse_number(&a).ok_or_else(|| self.err_at(at, "expected a number"))
            }
            (_, at) => Err(self.err_at(at, "expected a number")),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let (tok, at) = self.next()?;
        match tok {
            Tok::Close => Err(self.err_at(at, "unexpected ')'")),
            Tok::Atom(a) => match a.as_str() {
                "t" => Ok(Expr::Time),
                "y" => Ok(Expr::Y),
                "z" => Ok(Expr::Z),
                "b" => Ok(Expr::B),
                _ => parse_number(&a)
                    .map(Expr::Const)
                    .ok_or_else(|| self.err_at(at, "unknown atom")),
            },
            Tok::Open => {
                let (head, hat) = self.next()?;
                let Tok::Atom(head) = head else {
                    return Err(self.err_at(hat, "expected an operator"));
                };
                let e = match head.as_str() {
                    "abs" => Expr::abs(self.expr()?),
                    "neg" => Expr::neg(self.expr()?),
                    "negpart" => Expr::neg_part(self.expr()?),
                    "*" => {
                        let c = self.number()?;
                        Expr::scale(c, self.expr()?)
                    }
                    "-" => {
                        let a = self.expr()?;
                        Expr::add(a, Expr::neg(self.expr()?))
                    }
                    "+" | "min" => {
                        let mut acc = self.expr()?;
                        let mut count = 1;
                        while !matches!(self.tokens.get(self.pos), Some((Tok::Close, _)) | None) {
                            let rhs = self.expr()?;
                            acc = if head == "+" {
                                Expr::add(acc, rhs)
                            } else {
                                Expr::min(acc, rhs)
                            };
                            count += 1;
                        }
                        if count < 2 {
                            return Err(self.err_at(self.here(), "needs at least two operands"));
                        }
                        acc
                    }
                    "pw" => {
                        match self.next()? {
                            (Tok::Open, _) => {}
                            (_, at) => {
                                return Err(self.err_at(at, "expected '(' before breakpoints"))
                            }
                        }
                        let mut breaks = Vec::new();
                        while !matches!(self.tokens.get(self.pos), Some((Tok::Close, _)) | None) {
                            breaks.push(self.number()?);
                        }
                        self.expect_close()?;
                        if breaks.windows(2).any(|w| w[0] >= w[1]) {
                            return Err(self.err_at(hat, "breakpoints must increase"));
                        }
                        let mut pieces = Vec::new();
                        while !matches!(self.tokens.get(self.pos), Some((Tok::Close, _)) | None) {
                            pieces.push(self.expr()?);
                        }
                        if pieces.len() != breaks.len() + 1 {
                            return Err(
                                self.err_at(hat, "pw needs one more piece than breakpoints")
                            );
                        }
                        Expr::Piecewise { breaks, pieces }
                    }
                    _ => return Err(self.err_at(hat, "unknown operator")),
                };
                self.expect_close()?;
                Ok(e)
            }
        }
    }
}

fn parse_number(a: &str) -> Option<f64> {
    let v = if let Some((p, q)) = a.split_once('/') {
        let p: f64 = p.parse().ok()?;
        let q: f64 = q.parse().ok()?;
        p / q
    } else {
        a.parse().ok()?
    };
    v.is_finite().then_some(v)
}

/// Declared assumptions of a driver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssumptionFlags {
    pub a1: bool,
    pub a2: bool,
    pub a3: bool,
    pub a4: bool,
}

impl Default for AssumptionFlags {
    fn default() -> Self {
        Self {
            a1: true,
            a2: true,
            a3: false,
            a4: true,
        }
    }
}

impl AssumptionFlags {
    pub fn with_a3(mut self) -> Self {
        self.a3 = true;
        self
    }
}

/// A driver with its declared Lipschitz constant and assumption flags.
///
/// The optional restriction multiplies the driver by `1_{[0, τ]}(t)`:
/// the driver vanishes on every step taken at or after the stopping node.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    expr: Expr,
    lipschitz: f64,
    flags: AssumptionFlags,
    restriction: Option<Arc<Vec<Vec<bool>>>>,
}

impl GeneratorSpec {
    pub fn new(expr: Expr, lipschitz: f64, flags: AssumptionFlags) -> Result<Self> {
        if expr.depends_on_b() {
            return Err(Error::InvalidGenerator(
                "drivers depend on (t, y, z) only".into(),
            ));
        }
        if !lipschitz.is_finite() || lipschitz < 0.0 {
            return Err(Error::InvalidGenerator(format!(
                "Lipschitz constant must be finite and >= 0, got {lipschitz}"
            )));
        }
        Ok(Self {
            expr,
            lipschitz,
            flags,
            restriction: None,
        })
    }

    pub fn parse(text: &str, lipschitz: f64, flags: AssumptionFlags) -> Result<Self> {
        Self::new(Expr::parse(text)?, lipschitz, flags)
    }

    /// `g ≡ c`.
    pub fn constant(c: f64) -> Self {
        let flags = AssumptionFlags {
            a3: c == 0.0,
            ..AssumptionFlags::default()
        };
        Self::new(Expr::Const(c), 0.0, flags).expect("constant driver")
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn flags(&self) -> AssumptionFlags {
        self.flags
    }

    pub fn is_restricted(&self) -> bool {
        self.restriction.is_some()
    }

    /// `g(t, y, z)` ignoring any restriction.
    pub fn eval(&self, t: f64, y: f64, z: f64) -> f64 {
        self.expr.eval(&Point { t, y, z, b: 0.0 })
    }

    fn active(&self, level: usize, node: usize) -> bool {
        self.restriction
            .as_ref()
            .is_none_or(|mask| !mask[level][node])
    }

    /// Driver value for the step leaving `(level, node)`.
    pub fn eval_at(&self, level: usize, node: usize, t: f64, y: f64, z: f64) -> f64 {
        if self.active(level, node) {
            self.eval(t, y, z)
        } else {
            0.0
        }
    }

    pub(crate) fn affine_at(
        &self,
        level: usize,
        node: usize,
        t: f64,
        z: f64,
    ) -> Option<(f64, f64)> {
        if self.active(level, node) {
            self.expr.affine_in_y(&Point {
                t,
                y: 0.0,
                z,
                b: 0.0,
            })
        } else {
            Some((0.0, 0.0))
        }
    }

    pub(crate) fn restriction_shape_matches(&self, tree: &crate::lattice::ScenarioTree) -> bool {
        self.restriction.as_ref().is_none_or(|mask| {
            mask.len() == tree.steps() + 1
                && mask
                    .iter()
                    .enumerate()
                    .all(|(i, l)| l.len() == tree.width(i))
        })
    }
}

/// `ḡ(t, y, z) = g(t, y, z) 1_{[0, τ]}(t)`, keeping the declared constant.
///
/// Fails on recombining trees when the stopping status of a node depends on
/// the path that reached it.
pub fn restrict_generator(g: &GeneratorSpec, tau: &StoppingRule) -> Result<GeneratorSpec> {
    let mut mask = tau.stopped_mask()?;
    if let Some(prev) = &g.restriction {
        if prev.len() != mask.len() || prev.iter().zip(&mask).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::TreeMismatch);
        }
        for (row, prev_row) in mask.iter_mut().zip(prev.iter()) {
            for (m, p) in row.iter_mut().zip(prev_row) {
                *m |= *p;
            }
        }
    }
    Ok(GeneratorSpec {
        restriction: Some(Arc::new(mask)),
        ..g.clone()
    })
}

/// Sampling box for [`check_assumptions`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub t_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    /// Points per axis.
    pub points: usize,
}

impl SampleSpec {
    /// 21 x 21 x 21 points on `[0, T] x [-5, 5] x [-5, 5]`.
    pub fn default_for(horizon: f64) -> Self {
        Self {
            t_range: (0.0, horizon),
            y_range: (-5.0, 5.0),
            z_range: (-5.0, 5.0),
            points: 21,
        }
    }

    pub fn axis(range: (f64, f64), points: usize) -> Vec<f64> {
        if points <= 1 {
            return vec![range.0];
        }
        let h = (range.1 - range.0) / (points - 1) as f64;
        (0..points)
            .map(|k| {
                if k + 1 == points {
                    range.1
                } else {
                    range.0 + k as f64 * h
                }
            })
            .collect()
    }

    pub fn ts(&self) -> Vec<f64> {
        Self::axis(self.t_range, self.points)
    }

    pub fn ys(&self) -> Vec<f64> {
        Self::axis(self.y_range, self.points)
    }

    pub fn zs(&self) -> Vec<f64> {
        Self::axis(self.z_range, self.points)
    }
}

/// Bound beyond which a sampled assumption counts as violated.
pub const ASSUMPTION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub declared: bool,
    pub holds: bool,
    /// Declared but not observed.
    pub violated: bool,
    pub measured: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub declared_lipschitz: f64,
    /// Largest sampled difference quotient, compared against the declared constant.
    pub a1: AssumptionCheck,
    /// Largest `|g(t, y, 0)|`.
    pub a3: AssumptionCheck,
    /// Largest time jump left after bisecting each grid interval down to ~1e-12.
    pub a4: AssumptionCheck,
}

/// Samples the driver on `sample` and compares the declared assumptions
/// against what is observed. (A2) always holds on a finite lattice.
pub fn check_assumptions(g: &GeneratorSpec, sample: &SampleSpec) -> AssumptionReport {
    let (ts, ys, zs) = (sample.ts(), sample.ys(), sample.zs());
    let mut quotient = 0.0f64;
    let mut at_zero = 0.0f64;
    let mut jump = 0.0f64;
    for (ti, &t) in ts.iter().enumerate() {
        for (yi, &y) in ys.iter().enumerate() {
            at_zero = at_zero.max(g.eval(t, y, 0.0).abs());
            for (zi, &z) in zs.iter().enumerate() {
                let v = g.eval(t, y, z);
                if yi + 1 < ys.len() {
                    let y2 = ys[yi + 1];
                    quotient = quotient.max((g.eval(t, y2, z) - v).abs() / (y2 - y).abs());
                }
                if zi + 1 < zs.len() {
                    let z2 = zs[zi + 1];
                    quotient = quotient.max((g.eval(t, y, z2) - v).abs() / (z2 - z).abs());
                }
                if ti + 1 < ts.len() {
                    jump = jump.max(refined_jump(g, t, ts[ti + 1], y, z));
                }
            }
        }
    }
    let flags = g.flags();
    let check = |declared: bool, measured: f64, bound: f64| {
        let holds = measured <= bound;
        AssumptionCheck {
            declared,
            holds,
            violated: declared && !holds,
            measured,
        }
    };
    AssumptionReport {
        declared_lipschitz: g.lipschitz(),
        a1: check(flags.a1, quotient, g.lipschitz() + ASSUMPTION_TOL),
        a3: check(flags.a3, at_zero, ASSUMPTION_TOL),
        a4: check(flags.a4, jump, ASSUMPTION_TOL),
    }
}

/// Bisects `[a, b]` towards the larger half-jump; a continuous map leaves a
/// vanishing residue while a jump discontinuity keeps its size.
fn refined_jump(g: &GeneratorSpec, a: f64, b: f64, y: f64, z: f64) -> f64 {
    let (mut lo, mut hi) = (a, b);
    let (mut glo, mut ghi) = (g.eval(lo, y, z), g.eval(hi, y, z));
    for _ in 0..40 {
        if glo == ghi {
            return 0.0;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g.eval(mid, y, z);
        if (gm - glo).abs() >= (ghi - gm).abs() {
            hi = mid;
            ghi = gm;
        } else {
            lo = mid;
            glo = gm;
        }
    }
    (ghi - glo).abs()
}
