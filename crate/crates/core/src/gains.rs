//! Class-K comparison functions.
//!
//! A [`ScalarGain`] is an expression tree over one nonnegative variable `t`,
//! built from a handful of primitives and closed under sums, compositions and
//! positive scaling. Gains are parsed from a small DSL:
//!
//! ```text
//! gain  := "zero" | "id" | "linear(" num ")" | "power(" num "," num ")" | "satexp"
//!        | "pwl(" point ("," point)* ")" | "sum(" gain "," gain ")"
//!        | "compose(" gain "," gain ")" | "scale(" num "," gain ")"
//! point := "(" num "," num ")"
//! ```
//!
//! `compose(f, g)` is `f ∘ g`, i.e. `f` applied after `g`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, Result};

/// Default absolute tolerance for [`ScalarGain::inverse_eval`].
pub const DEFAULT_INVERSE_TOL: f64 = 1e-10;
const BRACKET_GROWTH: f64 = 2.0;
const MAX_BISECTIONS: usize = 200;
/// Bracket growth gives up past this argument; values of bounded gains
/// beyond their supremum are reported as range errors.
const OVERFLOW_HORIZON: f64 = 1e150;

/// A piecewise-linear gain through strictly increasing breakpoints.
///
/// When the first breakpoint is not at `t = 0` the function is extended
/// linearly through the origin. Past the last breakpoint it continues with
/// the slope of its last segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Pwl {
    nodes: Vec<(f64, f64)>,
}

impl Pwl {
    /// Builds a piecewise-linear gain, rejecting breakpoints that are not
    /// strictly increasing in `t` or that lie outside the first quadrant.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        Self::build(points).map_err(|message| Error::Semantic(ParseError { pos: 0, message }))
    }

    fn build(points: Vec<(f64, f64)>) -> std::result::Result<Self, String> {
        if points.is_empty() {
            return Err("pwl needs at least one breakpoint".into());
        }
        for &(x, y) in &points {
            if !x.is_finite() || !y.is_finite() || x < 0.0 || y < 0.0 {
                return Err(format!("pwl breakpoint ({x}, {y}) must be finite and nonnegative"));
            }
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(format!(
                    "pwl breakpoints must be strictly increasing in t: {} follows {}",
                    w[1].0, w[0].0
                ));
            }
        }
        let mut nodes = points;
        if nodes[0].0 > 0.0 {
            nodes.insert(0, (0.0, 0.0));
        }
        if nodes.len() < 2 {
            return Err("pwl needs a breakpoint with t > 0".into());
        }
        Ok(Self { nodes })
    }

    /// Breakpoints including the implicit origin, if one was added.
    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    fn last_slope(&self) -> f64 {
        let k = self.nodes.len();
        let (x0, y0) = self.nodes[k - 2];
        let (x1, y1) = self.nodes[k - 1];
        (y1 - y0) / (x1 - x0)
    }

    fn value(&self, t: f64) -> f64 {
        let nodes = &self.nodes;
        // index of the first node strictly to the right of t
        let idx = nodes.partition_point(|&(x, _)| x <= t);
        let seg = idx.clamp(1, nodes.len() - 1);
        let (x0, y0) = nodes[seg - 1];
        let (x1, y1) = nodes[seg];
        if t == x0 {
            return y0;
        }
        y0 + (t - x0) * (y1 - y0) / (x1 - x0)
    }
}

/// Expression tree of a comparison function `γ: ℝ₊ → ℝ₊`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarGain {
    Zero,
    Identity,
    /// `a·t`, `a > 0`.
    Linear(f64),
    /// `a·t^p`, `a > 0`, `p > 0`.
    Power { coef: f64, exp: f64 },
    /// `t·(1 − e^{−t})`.
    SatExp,
    Pwl(Pwl),
    Sum(Box<ScalarGain>, Box<ScalarGain>),
    /// `Compose(f, g)` evaluates `f(g(t))`.
    Compose(Box<ScalarGain>, Box<ScalarGain>),
    Scale(f64, Box<ScalarGain>),
}

/// A gain value together with a record of lost strictness.
///
/// `below` is set when an exact computation would have produced a value
/// strictly smaller than one already reached in floating point (for example
/// `t·(1 − e^{−t})` rounding to `t` once `e^{−t}` underflows the mantissa).
/// Comparisons that end in an exact tie resolve downward when it is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tracked {
    pub value: f64,
    pub below: bool,
}

impl Tracked {
    pub fn exact(value: f64) -> Self {
        Self { value, below: false }
    }

    /// `self ≥ rhs` with ties resolved by the strictness record.
    pub fn geq(self, rhs: f64) -> bool {
        self.value > rhs || (self.value == rhs && !self.below)
    }

    /// `self < rhs` with ties resolved by the strictness record.
    pub fn lt(self, rhs: f64) -> bool {
        !self.geq(rhs)
    }
}

impl ScalarGain {
    pub fn linear(a: f64) -> Self {
        Self::Linear(a)
    }

    pub fn power(coef: f64, exp: f64) -> Self {
        Self::Power { coef, exp }
    }

    pub fn pwl(points: Vec<(f64, f64)>) -> Result<Self> {
        Pwl::new(points).map(Self::Pwl)
    }

    pub fn sum(f: ScalarGain, g: ScalarGain) -> Self {
        Self::Sum(Box::new(f), Box::new(g))
    }

    /// `f ∘ g`.
    pub fn compose(f: ScalarGain, g: ScalarGain) -> Self {
        Self::Compose(Box::new(f), Box::new(g))
    }

    pub fn scale(c: f64, g: ScalarGain) -> Self {
        Self::Scale(c, Box::new(g))
    }

    /// Evaluates the gain at `t ≥ 0`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if t.is_nan() || t < 0.0 {
            return Err(Error::Domain(format!("gain evaluated at t = {t} < 0")));
        }
        Ok(self.value(t))
    }

    /// Unchecked evaluation; callers guarantee `t ≥ 0`.
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Identity => t,
            Self::Linear(a) => a * t,
            Self::Power { coef, exp } => coef * t.powf(*exp),
            Self::SatExp => t * -(-t).exp_m1(),
            Self::Pwl(p) => p.value(t),
            Self::Sum(f, g) => f.value(t) + g.value(t),
            Self::Compose(f, g) => f.value(g.value(t)),
            Self::Scale(c, g) => c * g.value(t),
        }
    }

    /// Evaluation that carries the strictness record of [`Tracked`].
    pub fn eval_tracked(&self, t: Tracked) -> Tracked {
        match self {
            Self::Zero => Tracked::exact(0.0),
            Self::Identity => t,
            Self::Compose(f, g) => f.eval_tracked(g.eval_tracked(t)),
            Self::Sum(f, g) => {
                let a = f.eval_tracked(t);
                let b = g.eval_tracked(t);
                Tracked { value: a.value + b.value, below: a.below || b.below }
            }
            Self::Scale(c, g) => {
                let a = g.eval_tracked(t);
                Tracked { value: c * a.value, below: a.below }
            }
            Self::SatExp => {
                let value = self.value(t.value);
                Tracked { value, below: t.below || (t.value > 0.0 && value >= t.value) }
            }
            _ => Tracked { value: self.value(t.value), below: t.below },
        }
    }

    /// The slope when the gain is exactly `t ↦ a·t` by construction.
    pub fn as_linear(&self) -> Option<f64> {
        match self {
            Self::Zero => Some(0.0),
            Self::Identity => Some(1.0),
            Self::Linear(a) => Some(*a),
            Self::Power { coef, exp } if *exp == 1.0 => Some(*coef),
            Self::Sum(f, g) => Some(f.as_linear()? + g.as_linear()?),
            Self::Compose(f, g) => Some(f.as_linear()? * g.as_linear()?),
            Self::Scale(c, g) => Some(c * g.as_linear()?),
            _ => None,
        }
    }

    /// Structural class-K∞ rule: identity, linear, power and satexp are
    /// unbounded; a pwl is unbounded when its last slope is positive; a sum
    /// is unbounded when either summand is; a composition when both parts
    /// are; scaling preserves the property.
    pub fn is_kinf_structural(&self) -> bool {
        match self {
            Self::Zero => false,
            Self::Identity | Self::Linear(_) | Self::Power { .. } | Self::SatExp => true,
            Self::Pwl(p) => p.last_slope() > 0.0,
            Self::Sum(f, g) => f.is_kinf_structural() || g.is_kinf_structural(),
            Self::Compose(f, g) => f.is_kinf_structural() && g.is_kinf_structural(),
            Self::Scale(_, g) => g.is_kinf_structural(),
        }
    }

    /// Solves `γ(t) = y` by bracketing bisection with geometric bracket
    /// growth. The result satisfies `|γ(t) − y| ≤ tol` unless the bracket
    /// collapses to floating-point resolution first.
    pub fn inverse_eval(&self, y: f64, tol: f64) -> Result<f64> {
        if y.is_nan() || y < 0.0 {
            return Err(Error::Domain(format!("inverse evaluated at y = {y} < 0")));
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        let mut lo = 0.0_f64;
        let mut hi = 1.0_f64;
        while self.value(hi) < y {
            lo = hi;
            hi *= BRACKET_GROWTH;
            if hi > OVERFLOW_HORIZON {
                return Err(Error::Range { value: y, bound: self.value(OVERFLOW_HORIZON) });
            }
        }
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..MAX_BISECTIONS {
            mid = 0.5 * (lo + hi);
            let v = self.value(mid);
            if v == y {
                return Ok(mid);
            }
            let collapsed = mid <= lo || mid >= hi;
            if v < y {
                lo = mid;
            } else {
                hi = mid;
            }
            let width = hi - lo;
            if collapsed || (width <= tol && (v - y).abs() <= tol) {
                return Ok(mid);
            }
        }
        if (self.value(mid) - y).abs() <= tol {
            Ok(mid)
        } else {
            Err(Error::NonConvergence { what: "inverse_eval", iterations: MAX_BISECTIONS, last: vec![mid] })
        }
    }

    /// Samples the defining properties of a class-K function. Violations are
    /// reported, not raised.
    pub fn validate_class_k(&self, grid_size: usize, horizon: f64, kinf_bound: f64) -> ValidationReport {
        let grid_size = grid_size.max(2);
        let zero_at_zero = self.value(0.0) == 0.0;

        let mut first_violation = None;
        if let Self::Pwl(p) = self {
            first_violation = p
                .nodes
                .windows(2)
                .find(|w| w[1].1 <= w[0].1)
                .map(|w| (w[0].0, w[1].0));
        }
        if first_violation.is_none() {
            let step = horizon / (grid_size - 1) as f64;
            let mut prev = (0.0, self.value(0.0));
            for i in 1..grid_size {
                let t = step * i as f64;
                let v = self.value(t);
                if !(v > prev.1) {
                    first_violation = Some((prev.0, t));
                    break;
                }
                prev = (t, v);
            }
        }
        let probe = self.value(horizon);
        ValidationReport {
            zero_at_zero,
            strictly_increasing_on_grid: first_violation.is_none(),
            kinf_probe_passed: probe > kinf_bound,
            kinf_structural: self.is_kinf_structural(),
            first_violation,
        }
    }

    /// Validation with the grid used for gain-matrix entries.
    pub fn validate_default(&self) -> ValidationReport {
        self.validate_class_k(256, 100.0, 0.0)
    }
}

/// Outcome of [`ScalarGain::validate_class_k`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub zero_at_zero: bool,
    pub strictly_increasing_on_grid: bool,
    pub kinf_probe_passed: bool,
    pub kinf_structural: bool,
    /// First pair `t1 < t2` with `γ(t1) ≥ γ(t2)`.
    pub first_violation: Option<(f64, f64)>,
}

impl ValidationReport {
    pub fn is_class_k(&self) -> bool {
        self.zero_at_zero && self.strictly_increasing_on_grid
    }

    pub fn is_class_kinf(&self) -> bool {
        self.is_class_k() && self.kinf_structural && self.kinf_probe_passed
    }
}

/// The diagonal operator `D(s) = ((Id + α_1)(s_1), …, (Id + α_n)(s_n))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingOperator {
    alphas: Vec<ScalarGain>,
}

impl ScalingOperator {
    /// Every `α_i` must be class-K∞ (structurally and by probe).
    pub fn new(alphas: Vec<ScalarGain>) -> Result<Self> {
        for (i, a) in alphas.iter().enumerate() {
            let report = a.validate_class_k(256, 1e6, 1.0);
            if !report.is_class_kinf() {
                let at = report.first_violation.map(|(t, _)| format!(" near t = {t}")).unwrap_or_default();
                return Err(Error::Construction(format!("alpha_{} = {a} is not class-K∞{at}", i + 1)).at(format!("/{i}")));
            }
        }
        Ok(Self { alphas })
    }

    /// `α_i = linear(a)` for every component.
    pub fn uniform_linear(n: usize, a: f64) -> Result<Self> {
        Self::new(vec![ScalarGain::linear(a); n])
    }

    pub fn dim(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[ScalarGain] {
        &self.alphas
    }

    /// The `α_i` slopes when every component is linear.
    pub fn linear_coefficients(&self) -> Option<Vec<f64>> {
        self.alphas.iter().map(ScalarGain::as_linear).collect()
    }

    pub fn apply(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(s.len())?;
        Ok(s.iter().zip(&self.alphas).map(|(&x, a)| x + a.value(x)).collect())
    }

    pub fn apply_tracked(&self, s: &[Tracked]) -> Vec<Tracked> {
        s.iter()
            .zip(&self.alphas)
            .map(|(&x, a)| {
                let y = a.eval_tracked(x);
                Tracked { value: x.value + y.value, below: x.below || y.below }
            })
            .collect()
    }

    /// `(D − Id)^{-1}`, i.e. `α_i^{-1}` componentwise.
    pub fn inverse_alpha(&self, v: &[f64], tol: f64) -> Result<Vec<f64>> {
        self.check_dim(v.len())?;
        v.iter().zip(&self.alphas).map(|(&y, a)| a.inverse_eval(y, tol)).collect()
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.alphas.len() {
            return Err(Error::DimensionMismatch { expected: self.alphas.len(), got });
        }
        Ok(())
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

impl fmt::Display for ScalarGain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "zero"),
            Self::Identity => write!(f, "id"),
            Self::Linear(a) => write!(f, "linear({})", fmt_num(*a)),
            Self::Power { coef, exp } => write!(f, "power({},{})", fmt_num(*coef), fmt_num(*exp)),
            Self::SatExp => write!(f, "satexp"),
            Self::Pwl(p) => {
                // an origin node is implied on parse, so it is left out here
                let pts: Vec<String> = p
                    .nodes
                    .iter()
                    .skip(usize::from(p.nodes[0] == (0.0, 0.0)))
                    .map(|(x, y)| format!("({},{})", fmt_num(*x), fmt_num(*y)))
                    .collect();
                write!(f, "pwl({})", pts.join(","))
            }
            Self::Sum(a, b) => write!(f, "sum({a},{b})"),
            Self::Compose(a, b) => write!(f, "compose({a},{b})"),
            Self::Scale(c, g) => write!(f, "scale({},{g})", fmt_num(*c)),
        }
    }
}

impl FromStr for ScalarGain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_gain(s)
    }
}

/// Parses a gain from the DSL.
pub fn parse_gain(text: &str) -> Result<ScalarGain> {
    let mut p = GainParser { src: text.as_bytes(), pos: 0 };
    let g = p.gain()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.syntax("trailing input after gain"));
    }
    Ok(g)
}

struct GainParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl GainParser<'_> {
    fn syntax(&self, message: impl Into<String>) -> Error {
        Error::Syntax(ParseError { pos: self.pos, message: message.into() })
    }

    fn semantic(pos: usize, message: impl Into<String>) -> Error {
        Error::Semantic(ParseError { pos, message: message.into() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(format!("expected '{}'", c as char)))
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn ident(&mut self) -> Result<&str> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphabetic() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.syntax("expected a gain name"));
        }
        Ok(std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default())
    }

    fn num(&mut self) -> Result<(f64, usize)> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.src;
        let mut i = self.pos;
        if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
            i += 1;
        }
        let digits_start = i;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        if i == digits_start {
            return Err(self.syntax("expected a number"));
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            let exp_digits = j;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j > exp_digits {
                i = j;
            }
        }
        let text = std::str::from_utf8(&bytes[start..i]).unwrap_or_default();
        let value: f64 = text.parse().map_err(|_| self.syntax(format!("malformed number '{text}'")))?;
        if !value.is_finite() {
            return Err(Self::semantic(start, format!("number '{text}' is not finite")));
        }
        self.pos = i;
        Ok((value, start))
    }

    fn positive(&mut self, what: &str) -> Result<f64> {
        let (v, at) = self.num()?;
        if v <= 0.0 {
            return Err(Self::semantic(at, format!("{what} must be positive, got {v}")));
        }
        Ok(v)
    }

    fn gain(&mut self) -> Result<ScalarGain> {
        let start = {
            self.skip_ws();
            self.pos
        };
        let name = self.ident()?.to_owned();
        let g = match name.as_str() {
            "zero" => ScalarGain::Zero,
            "id" => ScalarGain::Identity,
            "satexp" => ScalarGain::SatExp,
            "linear" => {
                self.expect(b'(')?;
                let a = self.positive("linear coefficient")?;
                self.expect(b')')?;
                ScalarGain::Linear(a)
            }
            "power" => {
                self.expect(b'(')?;
                let coef = self.positive("power coefficient")?;
                self.expect(b',')?;
                let exp = self.positive("power exponent")?;
                self.expect(b')')?;
                ScalarGain::Power { coef, exp }
            }
            "pwl" => {
                self.expect(b'(')?;
                let mut points = Vec::new();
                loop {
                    self.expect(b'(')?;
                    let (x, _) = self.num()?;
                    self.expect(b',')?;
                    let (y, _) = self.num()?;
                    self.expect(b')')?;
                    points.push((x, y));
                    if self.peek() == Some(b',') {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                self.expect(b')')?;
                let pwl = Pwl::build(points).map_err(|m| Self::semantic(start, m))?;
                ScalarGain::Pwl(pwl)
            }
            "sum" | "compose" => {
                self.expect(b'(')?;
                let f = self.gain()?;
                self.expect(b',')?;
                let g = self.gain()?;
                self.expect(b')')?;
                if name == "sum" {
                    ScalarGain::sum(f, g)
                } else {
                    ScalarGain::compose(f, g)
                }
            }
            "scale" => {
                self.expect(b'(')?;
                let c = self.positive("scale factor")?;
                self.expect(b',')?;
                let g = self.gain()?;
                self.expect(b')')?;
                ScalarGain::scale(c, g)
            }
            other => {
                return Err(Error::Syntax(ParseError { pos: start, message: format!("unknown gain '{other}'") }));
            }
        };
        Ok(g)
    }
}
