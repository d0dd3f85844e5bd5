//! ODE simulation of interconnected subsystems.
//!
//! Systems are given as equations `dx1 = <expr>` grouped into subsystems and
//! integrated with fixed-step classical Runge–Kutta. On top of trajectories
//! this module estimates `limsup |x_i(t)|` by tail suprema, tabulates
//! empirical asymptotic gains and checks ISS estimates sample by sample.
//! Suprema are taken over the sample grid.

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, Result};
use crate::euclid_norm;
use crate::expr::Expr;
use crate::gains::ScalarGain;

/// States beyond this magnitude end the integration with `blew_up` set.
pub const BLOWUP_BOUND: f64 = 1e12;
/// Tail suprema settle when doubling the horizon moves them less than this.
pub const SETTLE_TOL: f64 = 1e-6;

/// Right-hand side `ẋ = f(t, x, u)` with a partition of the state into
/// subsystems.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Coordinate ranges of the subsystems.
    fn partition(&self) -> Vec<Range<usize>>;
    fn eval(&self, t: f64, x: &[f64], u: &[f64], dx: &mut [f64]);

    fn state_names(&self) -> Vec<String> {
        (1..=self.dim()).map(|k| format!("x{k}")).collect()
    }

    fn input_names(&self) -> Vec<String> {
        (1..=self.input_dim()).map(|k| format!("u{k}")).collect()
    }
}

/// Configuration form of a [`NetworkSystem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    /// Number of input coordinates, named `u1..uL`.
    #[serde(default = "default_inputs")]
    pub inputs: usize,
    pub subsystems: Vec<SubsystemSpec>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

fn default_inputs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemSpec {
    #[serde(default)]
    pub name: Option<String>,
    /// Equations `d<state> = <expr>`.
    pub equations: Vec<String>,
}

/// Interconnected subsystems with expression right-hand sides over the state
/// names, `u1..uL` and `t`.
#[derive(Debug, Clone)]
pub struct NetworkSystem {
    names: Vec<String>,
    state_names: Vec<String>,
    input_names: Vec<String>,
    rhs: Vec<Expr>,
    ranges: Vec<Range<usize>>,
}

impl NetworkSystem {
    /// Builds the system; errors carry a JSON pointer relative to the spec.
    pub fn parse(spec: &SystemSpec) -> Result<Self> {
        if spec.subsystems.is_empty() {
            return Err(Error::Construction("system has no subsystems".into()).at("/subsystems"));
        }
        let mut state_names = Vec::new();
        let mut bodies = Vec::new();
        let mut ranges = Vec::new();
        for (i, sub) in spec.subsystems.iter().enumerate() {
            if sub.equations.is_empty() {
                return Err(Error::Construction("subsystem has no equations".into()).at(format!("/subsystems/{i}/equations")));
            }
            let start = state_names.len();
            for (k, eq) in sub.equations.iter().enumerate() {
                let path = format!("/subsystems/{i}/equations/{k}");
                let (name, offset) = split_equation(eq).map_err(|e| e.at(&path))?;
                if state_names.contains(&name) {
                    let err = ParseError { pos: 0, message: format!("state '{name}' defined twice") };
                    return Err(Error::Semantic(err).at(path));
                }
                state_names.push(name);
                bodies.push((path, eq.clone(), offset));
            }
            ranges.push(start..state_names.len());
        }
        let input_names: Vec<String> = (1..=spec.inputs).map(|k| format!("u{k}")).collect();
        for u in &input_names {
            if state_names.contains(u) {
                let err = ParseError { pos: 0, message: format!("state name '{u}' clashes with an input") };
                return Err(Error::Semantic(err).at("/subsystems"));
            }
        }
        let vars: Vec<&str> = state_names.iter().chain(&input_names).map(String::as_str).chain(["t"]).collect();
        let mut rhs = Vec::new();
        for (path, eq, offset) in &bodies {
            let e = Expr::parse(&eq[*offset..], &vars).map_err(|e| shift(e, *offset).at(path))?;
            rhs.push(e);
        }
        let names = spec
            .subsystems
            .iter()
            .enumerate()
            .map(|(i, s)| s.name.clone().unwrap_or_else(|| format!("S{}", i + 1)))
            .collect();
        let sys = Self { names, state_names, input_names, rhs, ranges };
        let mut dx = vec![0.0; sys.dim()];
        sys.eval(0.0, &vec![0.0; sys.dim()], &vec![0.0; sys.input_dim()], &mut dx);
        if let Some(k) = dx.iter().position(|v| !v.is_finite()) {
            let err = Error::Eval(format!("right-hand side is not finite at the origin ({})", dx[k]));
            return Err(err.at(&bodies[k].0));
        }
        Ok(sys)
    }

    pub fn subsystem_names(&self) -> &[String] {
        &self.names
    }
}

fn split_equation(eq: &str) -> Result<(String, usize)> {
    let Some(eq_pos) = eq.find('=') else {
        return Err(Error::Syntax(ParseError { pos: eq.len(), message: "expected 'd<state> = <expr>'".into() }));
    };
    let lhs = eq[..eq_pos].trim();
    let name = lhs.strip_prefix('d').unwrap_or("");
    let valid = !name.is_empty()
        && name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if !valid {
        let pos = eq.len() - eq.trim_start().len();
        return Err(Error::Syntax(ParseError { pos, message: format!("left-hand side '{lhs}' is not of the form d<state>") }));
    }
    if name == "t" {
        return Err(Error::Semantic(ParseError { pos: 0, message: "'t' is reserved for time".into() }));
    }
    Ok((name.to_owned(), eq_pos + 1))
}

fn shift(e: Error, offset: usize) -> Error {
    match e {
        Error::Syntax(p) => Error::Syntax(ParseError { pos: p.pos + offset, ..p }),
        Error::Semantic(p) => Error::Semantic(ParseError { pos: p.pos + offset, ..p }),
        other => other,
    }
}

impl VectorField for NetworkSystem {
    fn dim(&self) -> usize {
        self.state_names.len()
    }

    fn input_dim(&self) -> usize {
        self.input_names.len()
    }

    fn partition(&self) -> Vec<Range<usize>> {
        self.ranges.clone()
    }

    fn eval(&self, t: f64, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let mut slots = Vec::with_capacity(x.len() + u.len() + 1);
        slots.extend_from_slice(x);
        slots.extend_from_slice(u);
        slots.push(t);
        for (d, e) in dx.iter_mut().zip(&self.rhs) {
            *d = e.eval(&slots);
        }
    }

    fn state_names(&self) -> Vec<String> {
        self.state_names.clone()
    }

    fn input_names(&self) -> Vec<String> {
        self.input_names.clone()
    }
}

/// `ẋ = A x` with a given subsystem partition.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub a: DMatrix<f64>,
    pub ranges: Vec<Range<usize>>,
}

impl LinearField {
    /// One subsystem per coordinate.
    pub fn new(a: DMatrix<f64>) -> Self {
        let ranges = (0..a.nrows()).map(|k| k..k + 1).collect();
        Self { a, ranges }
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        0
    }

    fn partition(&self) -> Vec<Range<usize>> {
        self.ranges.clone()
    }

    fn eval(&self, _t: f64, x: &[f64], _u: &[f64], dx: &mut [f64]) {
        for (i, d) in dx.iter_mut().enumerate() {
            *d = self.a.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

/// Input signal `u(t)`.
#[derive(Debug, Clone)]
pub enum InputSignal {
    Constant(Vec<f64>),
    /// `values[k]` on `[breaks[k], breaks[k+1])`; `values[0]` before `breaks[0]`.
    Piecewise { breaks: Vec<f64>, values: Vec<Vec<f64>> },
    /// One expression in `t` per coordinate.
    Expr(Vec<Expr>),
}

impl InputSignal {
    pub fn zero(dim: usize) -> Self {
        Self::Constant(vec![0.0; dim])
    }

    /// Parses `"<v>[,<v>…]"` (constant, a single value is broadcast),
    /// `"pw:<t>=<v>[,<v>…];<t>=…"` (piecewise constant) or an expression in
    /// `t`, several separated by `;`, a single one broadcast.
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        let text = text.trim();
        let broadcast = |v: Vec<f64>| -> Result<Vec<f64>> {
            match v.len() {
                1 => Ok(vec![v[0]; dim]),
                k if k == dim => Ok(v),
                k => Err(Error::DimensionMismatch { expected: dim, got: k }),
            }
        };
        let numbers = |s: &str| s.split(',').map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>();
        if let Some(rest) = text.strip_prefix("pw:") {
            let mut breaks = Vec::new();
            let mut values = Vec::new();
            for piece in rest.split(';') {
                let (t, v) = piece.split_once('=').ok_or_else(|| Error::Domain(format!("piece '{piece}' is not <t>=<values>")))?;
                let t: f64 = t.trim().parse().map_err(|_| Error::Domain(format!("bad breakpoint '{t}'")))?;
                let v = numbers(v).map_err(|_| Error::Domain(format!("bad values '{v}'")))?;
                breaks.push(t);
                values.push(broadcast(v)?);
            }
            if breaks.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Domain("piecewise breakpoints must increase strictly".into()));
            }
            return Ok(Self::Piecewise { breaks, values });
        }
        if let Ok(v) = numbers(text) {
            return Ok(Self::Constant(broadcast(v)?));
        }
        let exprs = text.split(';').map(|e| Expr::parse(e, &["t"])).collect::<Result<Vec<_>>>()?;
        let exprs = match exprs.len() {
            1 => vec![exprs[0].clone(); dim],
            k if k == dim => exprs,
            k => return Err(Error::DimensionMismatch { expected: dim, got: k }),
        };
        Ok(Self::Expr(exprs))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Constant(v) => v.len(),
            Self::Piecewise { values, .. } => values.first().map_or(0, Vec::len),
            Self::Expr(e) => e.len(),
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        match self {
            Self::Constant(v) => v.clone(),
            Self::Piecewise { breaks, values } => {
                let k = breaks.partition_point(|&b| b <= t).saturating_sub(1);
                values[k].clone()
            }
            Self::Expr(e) => e.iter().map(|e| e.eval(&[t])).collect(),
        }
    }
}

/// Sampled solution `ξ(t; x0, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    /// `channels[k][i] = |x_i(t_k)|`, Euclidean norm over subsystem `i`.
    pub channels: Vec<Vec<f64>>,
    pub partition: Vec<Range<usize>>,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    /// Set when integration stopped early on a non-finite or huge state.
    pub blew_up: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map_or(&[], Vec::as_slice)
    }

    /// Time series of channel `i`.
    pub fn channel(&self, i: usize) -> Vec<f64> {
        self.channels.iter().map(|c| c[i]).collect()
    }

    pub fn input_norms(&self) -> Vec<f64> {
        self.inputs.iter().map(|u| euclid_norm(u)).collect()
    }

    /// Whitespace-free CSV with columns `t, x…, u…`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for n in self.state_names.iter().chain(&self.input_names) {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for k in 0..self.len() {
            let _ = write!(out, "{}", self.times[k]);
            for v in self.states[k].iter().chain(&self.inputs[k]) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    fn record(&mut self, t: f64, x: &[f64], u: Vec<f64>) {
        self.times.push(t);
        self.channels.push(self.partition.iter().map(|r| euclid_norm(&x[r.clone()])).collect());
        self.states.push(x.to_vec());
        self.inputs.push(u);
    }
}

/// Fixed-step RK4 on `[0, T]` with `round(T/h)` steps.
pub fn integrate<F: VectorField + ?Sized>(f: &F, x0: &[f64], u: &InputSignal, t_end: f64, h: f64) -> Result<Trajectory> {
    let n = f.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
    }
    if u.dim() != f.input_dim() {
        return Err(Error::DimensionMismatch { expected: f.input_dim(), got: u.dim() });
    }
    if !(h > 0.0) || !h.is_finite() || !(t_end >= h) || !t_end.is_finite() {
        return Err(Error::Domain(format!("need h > 0 and T ≥ h, got h = {h}, T = {t_end}")));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("initial state is not finite".into()));
    }
    let steps = (t_end / h).round() as usize;
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
        channels: Vec::with_capacity(steps + 1),
        partition: f.partition(),
        state_names: f.state_names(),
        input_names: f.input_names(),
        blew_up: false,
    };
    let mut x = x0.to_vec();
    traj.record(0.0, &x, u.eval(0.0));
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..steps {
        let t = k as f64 * h;
        let (u0, um, u1) = (u.eval(t), u.eval(t + 0.5 * h), u.eval(t + h));
        f.eval(t, &x, &u0, &mut k1);
        axpy(&x, 0.5 * h, &k1, &mut tmp);
        f.eval(t + 0.5 * h, &tmp, &um, &mut k2);
        axpy(&x, 0.5 * h, &k2, &mut tmp);
        f.eval(t + 0.5 * h, &tmp, &um, &mut k3);
        axpy(&x, h, &k3, &mut tmp);
        f.eval(t + h, &tmp, &u1, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_BOUND) {
            traj.blew_up = true;
            break;
        }
        traj.record((k + 1) as f64 * h, &x, u1);
    }
    Ok(traj)
}

fn axpy(x: &[f64], a: f64, y: &[f64], out: &mut [f64]) {
    for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
        *o = xi + a * yi;
    }
}

/// Tail-supremum estimate of `limsup_{t→∞} v(t)` from samples on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimsupEstimate {
    /// `sup v` over `[T/2, T]`.
    pub tail_sup: f64,
    /// The same construction at horizon `T/2`: `sup v` over `[T/4, T/2]`.
    pub previous: f64,
    /// Pointwise estimate, `sup v` over the last quarter `[3T/4, T]`.
    pub pointwise: f64,
    /// `|tail_sup − previous| < SETTLE_TOL`.
    pub settled: bool,
}

impl LimsupEstimate {
    /// Gap between the pointwise and tail-sup estimates, zero in the limit.
    pub fn lemma_gap(&self) -> f64 {
        (self.tail_sup - self.pointwise).abs()
    }
}

pub fn limsup_series(times: &[f64], values: &[f64]) -> LimsupEstimate {
    let t_end = times.last().copied().unwrap_or(0.0);
    let sup_on = |lo: f64, hi: f64| {
        times
            .iter()
            .zip(values)
            .filter(|(&t, _)| t >= lo && t <= hi)
            .fold(f64::NEG_INFINITY, |acc, (_, &v)| acc.max(v))
    };
    let tail_sup = sup_on(0.5 * t_end, t_end);
    let previous = sup_on(0.25 * t_end, 0.5 * t_end);
    let pointwise = sup_on(0.75 * t_end, t_end);
    LimsupEstimate { tail_sup, previous, pointwise, settled: (tail_sup - previous).abs() < SETTLE_TOL }
}

/// Per-channel limsup estimates of `|x_i(t)|`.
pub fn limsup_estimates(traj: &Trajectory) -> Vec<LimsupEstimate> {
    (0..traj.partition.len()).map(|i| limsup_series(&traj.times, &traj.channel(i))).collect()
}

/// Per-channel `limsup |x_i(t)|` by the tail-supremum construction.
pub fn tail_sup_limsup(traj: &Trajectory) -> Vec<f64> {
    limsup_estimates(traj).iter().map(|e| e.tail_sup).collect()
}

/// `count` seeded states uniform in `[−radius, radius]^dim`.
pub fn random_states(dim: usize, count: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..dim).map(|_| rng.gen_range(-radius..=radius)).collect()).collect()
}

/// Initial states for [`estimate_asymptotic_gain`].
#[derive(Debug, Clone, PartialEq)]
pub enum InitialStates {
    /// The same set for every input level.
    Shared(Vec<Vec<f64>>),
    /// One set per input level.
    PerLevel(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgRow {
    pub level: f64,
    /// `‖u‖_∞` on the sample grid.
    pub input_sup: f64,
    /// Max over initial states and channels of the limsup estimate.
    pub limsup: f64,
    pub settled: bool,
    pub blew_up: bool,
}

/// Empirical asymptotic-gain table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgTable {
    /// Rows sorted by input level.
    pub rows: Vec<AgRow>,
    /// Nondecreasing least-squares fit of `limsup` against the level.
    pub fitted: Vec<f64>,
    pub max_fit_residual: f64,
    /// False when the data contradict a class-K bound `limsup ≤ γ(‖u‖)`:
    /// the limsup grows as the input shrinks, or stays away from zero at
    /// level zero.
    pub monotone_bound_exists: bool,
}

/// Tabulates `r ↦ max_{x0} limsup |x(t)|` under constant inputs `u ≡ r`.
pub fn estimate_asymptotic_gain<F: VectorField + ?Sized>(
    f: &F,
    levels: &[f64],
    x0s: &InitialStates,
    t_end: f64,
    h: f64,
) -> Result<AgTable> {
    if levels.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
        return Err(Error::Domain("input levels must be finite and nonnegative".into()));
    }
    let sets: Vec<&Vec<Vec<f64>>> = match x0s {
        InitialStates::Shared(s) => vec![s; levels.len()],
        InitialStates::PerLevel(p) if p.len() == levels.len() => p.iter().collect(),
        InitialStates::PerLevel(p) => return Err(Error::DimensionMismatch { expected: levels.len(), got: p.len() }),
    };
    if sets.iter().any(|s| s.is_empty()) {
        return Err(Error::Domain("every input level needs at least one initial state".into()));
    }
    let jobs: Vec<(usize, &Vec<f64>)> = sets.iter().enumerate().flat_map(|(k, s)| s.iter().map(move |x| (k, x))).collect();
    let results = jobs
        .par_iter()
        .map(|&(k, x0)| {
            let u = InputSignal::Constant(vec![levels[k]; f.input_dim()]);
            integrate(f, x0, &u, t_end, h).map(|traj| {
                let est = limsup_estimates(&traj);
                let limsup = est.iter().fold(0.0_f64, |a, e| a.max(e.tail_sup));
                (k, limsup, est.iter().all(|e| e.settled), traj.blew_up)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<AgRow> = levels
        .iter()
        .map(|&level| AgRow { level, input_sup: level, limsup: 0.0, settled: true, blew_up: false })
        .collect();
    for (k, limsup, settled, blew_up) in results {
        let row = &mut rows[k];
        row.limsup = row.limsup.max(limsup);
        row.settled &= settled;
        row.blew_up |= blew_up;
        if blew_up {
            row.limsup = f64::INFINITY;
        }
    }
    rows.sort_by(|a, b| a.level.total_cmp(&b.level));
    let data: Vec<f64> = rows.iter().map(|r| r.limsup).collect();
    let fitted = isotonic_fit(&data);
    let max_fit_residual = data
        .iter()
        .zip(&fitted)
        .fold(0.0_f64, |acc, (a, b)| if a.is_finite() { acc.max((a - b).abs()) } else { acc });
    let scale = 1.0 + data.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let zero_level_ok = rows.iter().filter(|r| r.level == 0.0).all(|r| r.limsup <= 1e-3);
    let monotone_bound_exists =
        zero_level_ok && max_fit_residual <= 1e-3 * scale && rows.iter().all(|r| !r.blew_up);
    Ok(AgTable { rows, fitted, max_fit_residual, monotone_bound_exists })
}

/// Pool-adjacent-violators fit of a nondecreasing sequence.
pub fn isotonic_fit(data: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in data {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let merged = if a.is_infinite() || b.is_infinite() { a.max(b) } else { (a * na as f64 + b * nb as f64) / (na + nb) as f64 };
            *blocks.last_mut().unwrap() = (merged, na + nb);
        }
    }
    blocks.into_iter().flat_map(|(v, k)| std::iter::repeat_n(v, k)).collect()
}

/// Exponential class-KL bound `β(r, t) = M·r·e^{−λt}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlBound {
    pub m: f64,
    pub lambda: f64,
}

impl KlBound {
    pub fn new(m: f64, lambda: f64) -> Result<Self> {
        if !(m > 0.0) || !(lambda > 0.0) || !m.is_finite() || !lambda.is_finite() {
            return Err(Error::Domain(format!("KL bound needs M > 0 and λ > 0, got M = {m}, λ = {lambda}")));
        }
        Ok(Self { m, lambda })
    }

    pub fn eval(&self, r: f64, t: f64) -> f64 {
        self.m * r * (-self.lambda * t).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssResidualReport {
    pub subsystem: usize,
    pub max_residual: f64,
    pub time_of_max: f64,
    pub samples: usize,
    pub satisfied: bool,
}

/// Checks `|x_i(t)| ≤ β(|x_i(0)|, t) + Σ_{j≠i} γ_ij(sup_{[0,t]} |x_j|) + γ(sup_{[0,t]} |u|)`
/// at every sample. `gains_row[j]` is `γ_ij`; the own channel is skipped.
pub fn iss_residual_check(
    traj: &Trajectory,
    i: usize,
    beta: &KlBound,
    gains_row: &[Option<ScalarGain>],
    u_gain: &ScalarGain,
    tol: f64,
) -> Result<IssResidualReport> {
    let n = traj.partition.len();
    if i >= n {
        return Err(Error::DimensionMismatch { expected: n, got: i + 1 });
    }
    if gains_row.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: gains_row.len() });
    }
    if traj.is_empty() {
        return Err(Error::Domain("empty trajectory".into()));
    }
    let x0 = traj.channels[0][i];
    let mut sup = vec![0.0_f64; n];
    let mut sup_u = 0.0_f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..traj.len() {
        for (s, c) in sup.iter_mut().zip(&traj.channels[k]) {
            *s = s.max(*c);
        }
        sup_u = sup_u.max(euclid_norm(&traj.inputs[k]));
        let t = traj.times[k];
        let cross: f64 = gains_row
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .filter_map(|(j, g)| g.as_ref().map(|g| g.value(sup[j])))
            .sum();
        let r = traj.channels[k][i] - (beta.eval(x0, t) + cross + u_gain.value(sup_u));
        if r > best.0 {
            best = (r, t);
        }
    }
    Ok(IssResidualReport { subsystem: i, max_residual: best.0, time_of_max: best.1, samples: traj.len(), satisfied: best.0 <= tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn system(eqs: &[&[&str]], inputs: usize) -> Result<NetworkSystem> {
        NetworkSystem::parse(&SystemSpec {
            inputs,
            subsystems: eqs
                .iter()
                .map(|e| SubsystemSpec { name: None, equations: e.iter().map(|s| s.to_string()).collect() })
                .collect(),
            x0: None,
        })
    }

    fn ex42() -> NetworkSystem {
        system(&[&["dx1 = -x1 + x2*(1-exp(-x2)) + u1"], &["dx2 = -x2 + x1*(1-exp(-x1)) + u1"]], 1).unwrap()
    }

    #[test]
    fn parse_examples() {
        let s = system(&[&["dx1 = -x1 + u1"]], 1).unwrap();
        assert_eq!(s.dim(), 1);
        assert_eq!(ex42().partition(), vec![0..1, 1..2]);
        match system(&[&["dx1 = -x1 + y3"]], 1) {
            Err(Error::Located { path, source }) => {
                assert_eq!(path, "/subsystems/0/equations/0");
                match *source {
                    Error::Semantic(p) => {
                        assert!(p.message.contains("y3"));
                        assert_eq!(p.pos, 12);
                    }
                    other => panic!("{other:?}"),
                }
            }
            other => panic!("{other:?}"),
        }
        assert!(system(&[&["x1 = 1"]], 0).is_err());
        assert!(system(&[&["dx1 = 1", "dx1 = 2"]], 0).is_err());
        assert!(system(&[&["dx1 = log(x1)"]], 0).is_err());
    }

    #[test]
    fn integrate_examples() {
        let s = system(&[&["dx1 = -x1"]], 0).unwrap();
        let tr = integrate(&s, &[1.0], &InputSignal::zero(0), 1.0, 0.01).unwrap();
        assert!((tr.final_state()[0] - (-1.0f64).exp()).abs() < 1e-8);
        assert_eq!(tr.len(), 101);

        let s = system(&[&["dx1 = -x1 + u1"]], 1).unwrap();
        let tr = integrate(&s, &[0.0], &InputSignal::zero(1), 5.0, 0.01).unwrap();
        assert!(tr.states.iter().all(|x| x[0] == 0.0));

        let c = 10.0_f64;
        let u = InputSignal::Constant(vec![c * (-c).exp()]);
        let tr = integrate(&ex42(), &[c, c], &u, 50.0, 0.01).unwrap();
        assert!(tr.states.iter().all(|x| (x[0] - c).abs() < 1e-3 && (x[1] - c).abs() < 1e-3));

        assert!(integrate(&s, &[0.0], &InputSignal::zero(1), 0.001, 0.01).is_err());
        assert!(integrate(&s, &[0.0, 1.0], &InputSignal::zero(1), 1.0, 0.01).is_err());
    }

    #[test]
    fn blowup_is_flagged() {
        let s = system(&[&["dx1 = x1^2"]], 0).unwrap();
        let tr = integrate(&s, &[1.0], &InputSignal::zero(0), 2.0, 0.01).unwrap();
        assert!(tr.blew_up);
        assert!(tr.times.last().unwrap() < &1.01);
    }

    #[test]
    fn rk4_order() {
        let s = system(&[&["dx1 = -x1"]], 0).unwrap();
        let err = |h: f64| (integrate(&s, &[1.0], &InputSignal::zero(0), 1.0, h).unwrap().final_state()[0] - (-1.0f64).exp()).abs();
        let ratio = err(0.1) / err(0.05);
        assert!((12.0..20.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn input_signals() {
        let u = InputSignal::parse("0.5", 2).unwrap();
        assert_eq!(u.eval(3.0), vec![0.5, 0.5]);
        let u = InputSignal::parse("pw:0=1;2=0", 1).unwrap();
        assert_eq!(u.eval(1.0), vec![1.0]);
        assert_eq!(u.eval(2.0), vec![0.0]);
        let u = InputSignal::parse("exp(-t); min(t, 1)", 2).unwrap();
        assert_eq!(u.eval(0.0), vec![1.0, 0.0]);
        assert!(InputSignal::parse("1,2,3", 2).is_err());
    }

    #[test]
    fn limsup_examples() {
        let times: Vec<f64> = (0..=10_000).map(|k| k as f64 * 0.01).collect();
        let dec: Vec<f64> = times.iter().map(|t| (-t).exp()).collect();
        assert!(limsup_series(&times, &dec).tail_sup < 1e-6);
        let c: Vec<f64> = times.iter().map(|_| 3.0).collect();
        assert_eq!(limsup_series(&times, &c).tail_sup, 3.0);
        let osc: Vec<f64> = times.iter().map(|t| 1.0 + t.sin() * (-t).exp()).collect();
        let e = limsup_series(&times, &osc);
        assert!((e.tail_sup - 1.0).abs() < 1e-4);
        assert!(e.settled && e.lemma_gap() < 1e-6);
    }

    #[test]
    fn ag_examples() {
        let s = system(&[&["dx1 = -x1 + u1"]], 1).unwrap();
        let levels = [0.0, 0.5, 1.0, 2.0];
        let t = estimate_asymptotic_gain(&s, &levels, &InitialStates::Shared(vec![vec![0.0], vec![3.0]]), 40.0, 0.01).unwrap();
        assert!(t.monotone_bound_exists);
        for r in &t.rows {
            assert!((r.limsup - r.level).abs() < 1e-4, "{r:?}");
        }

        let cs = [5.0, 10.0, 15.0_f64];
        let levels: Vec<f64> = cs.iter().map(|c| c * (-c).exp()).collect();
        let x0 = InitialStates::PerLevel(cs.iter().map(|&c| vec![vec![c, c]]).collect());
        let t = estimate_asymptotic_gain(&ex42(), &levels, &x0, 50.0, 0.01).unwrap();
        assert!(!t.monotone_bound_exists);
        assert!((t.rows[0].limsup - 15.0).abs() < 1e-3);
    }

    #[test]
    fn isotonic() {
        assert_eq!(isotonic_fit(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic_fit(&[15.0, 10.0, 5.0]), vec![10.0; 3]);
    }

    #[test]
    fn iss_residual_examples() {
        let s = system(&[&["dx1 = -x1 + u1"]], 1).unwrap();
        let row = [None];
        let tr = integrate(&s, &[2.0], &InputSignal::Constant(vec![0.7]), 10.0, 0.01).unwrap();
        let ok = iss_residual_check(&tr, 0, &KlBound::new(1.0, 1.0).unwrap(), &row, &ScalarGain::Identity, 1e-9).unwrap();
        assert!(ok.satisfied, "{ok:?}");

        let zero = integrate(&s, &[0.0], &InputSignal::zero(1), 1.0, 0.01).unwrap();
        assert!(iss_residual_check(&zero, 0, &KlBound::new(1.0, 1.0).unwrap(), &row, &ScalarGain::Identity, 0.0).unwrap().satisfied);

        let tr = integrate(&s, &[1.0], &InputSignal::zero(1), 1.0, 0.01).unwrap();
        let bad = iss_residual_check(&tr, 0, &KlBound::new(0.5, 1.0).unwrap(), &row, &ScalarGain::Identity, 1e-9).unwrap();
        assert!(!bad.satisfied);
        assert_eq!(bad.time_of_max, 0.0);
        assert!((bad.max_residual - 0.5).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let s = system(&[&["dx1 = -x1 + u1"]], 1).unwrap();
        let tr = integrate(&s, &[1.0], &InputSignal::zero(1), 0.02, 0.01).unwrap();
        let csv = tr.to_csv();
        assert_eq!(csv.lines().next(), Some("t,x1,u1"));
        assert_eq!(csv.lines().count(), 4);
    }

    proptest! {
        #[test]
        fn lemma_equality_on_settled_signals(a in 0.0..5.0f64, b in -3.0..3.0f64, w in 0.5..5.0f64, lam in 0.5..3.0f64) {
            let times: Vec<f64> = (0..=10_000).map(|k| k as f64 * 0.01).collect();
            let v: Vec<f64> = times.iter().map(|t| a + b * (w * t).sin() * (-lam * t).exp()).collect();
            let e = limsup_series(&times, &v);
            prop_assert!(e.lemma_gap() <= 1e-6);
            prop_assert!((e.tail_sup - a).abs() <= 1e-6);
        }
    }
}
