//! Small-gain conditions: exact checks for linear gains, witness search and
//! fixed-point evidence for nonlinear ones, the constructive bound `φ`, and
//! the aggregated implication report.
//!
//! Nonlinear conditions of the form "for all `s ≠ 0`" cannot be decided by
//! sampling. `Violated` is always exact (the witness is re-verified), `Holds`
//! is exact only for linear gains, and anything else is `Evidence` with the
//! sample counts that produced it.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::random_starts;
use crate::error::{Error, Result};
use crate::gains::{ScalarGain, ScalingOperator, Tracked, DEFAULT_INVERSE_TOL};
use crate::lyapunov::omega_cover_check;
use crate::network::{spectral_radius, GainMatrix, DEFAULT_RHO_TOL};
use crate::{max_norm, network};

/// `ρ < 1` is only reported when `ρ < 1 − EPS_MARGIN`.
pub const EPS_MARGIN: f64 = 1e-9;
const MAGNITUDE_RANGE: (f64, f64) = (1e-6, 1e6);
const ORBIT_STEPS: usize = 2000;
const ORBIT_SUPPORT_CUT: f64 = 1e-9;

pub const GAMMA_NOT_GEQ: &str = "gamma_not_geq";
pub const GAMMA_D_NOT_GEQ: &str = "gamma_D_not_geq";
pub const RHO_LT_1: &str = "rho_lt_1";
pub const GAMMA_K_TO_ZERO: &str = "gamma_k_to_zero";
pub const OMEGA_COVER: &str = "omega_cover";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Holds,
    Violated,
    Evidence,
    Inconclusive,
}

/// Verdict for one condition, serialized as
/// `{status, witness?, rho?, samples?, iterations?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

impl Verdict {
    fn bare(status: Status) -> Self {
        Self { status, witness: None, rho: None, samples: None, iterations: None }
    }

    pub fn holds() -> Self {
        Self::bare(Status::Holds)
    }

    pub fn holds_with_rho(rho: f64) -> Self {
        Self { rho: Some(rho), ..Self::holds() }
    }

    pub fn violated(witness: Vec<f64>) -> Self {
        Self { witness: Some(witness), ..Self::bare(Status::Violated) }
    }

    pub fn evidence(samples: usize, iterations: usize) -> Self {
        Self { samples: Some(samples), iterations: Some(iterations), ..Self::bare(Status::Evidence) }
    }

    pub fn inconclusive() -> Self {
        Self::bare(Status::Inconclusive)
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = Some(rho);
        self
    }

    /// Holds or Evidence.
    pub fn supports(&self) -> bool {
        matches!(self.status, Status::Holds | Status::Evidence)
    }

    pub fn is_violated(&self) -> bool {
        self.status == Status::Violated
    }
}

/// Verdicts keyed by condition name plus the implication checks performed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    #[serde(flatten)]
    pub verdicts: BTreeMap<String, Verdict>,
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn get(&self, condition: &str) -> Option<&Verdict> {
        self.verdicts.get(condition)
    }

    fn set(&mut self, condition: &str, verdict: Verdict) {
        self.verdicts.insert(condition.to_owned(), verdict);
    }

    /// False when any implication note recorded an inconsistency.
    pub fn consistent(&self) -> bool {
        !self.notes.iter().any(|n| n.starts_with("INCONSISTENT"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

/// The operator a witness search runs on.
#[derive(Debug, Clone, Copy)]
pub enum Operator<'a> {
    Gamma(&'a GainMatrix),
    GammaD(&'a GainMatrix, &'a ScalingOperator),
}

impl Operator<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Self::Gamma(g) | Self::GammaD(g, _) => g.dim(),
        }
    }

    pub fn apply_tracked(&self, s: &[f64]) -> Vec<Tracked> {
        let s: Vec<Tracked> = s.iter().copied().map(Tracked::exact).collect();
        match self {
            Self::Gamma(g) => g.apply_tracked(&s),
            Self::GammaD(g, d) => g.apply_tracked(&d.apply_tracked(&s)),
        }
    }

    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        self.apply_tracked(s).into_iter().map(|t| t.value).collect()
    }

    /// `s ≠ 0` and `op(s) ≥ s` componentwise, ties resolved by strictness
    /// records.
    pub fn is_witness(&self, s: &[f64]) -> bool {
        if s.len() != self.dim() || s.iter().all(|&x| x == 0.0) || s.iter().any(|&x| !(x >= 0.0)) {
            return false;
        }
        self.apply_tracked(s).iter().zip(s).all(|(y, &x)| y.geq(x))
    }
}

/// Sampling parameters for the nonlinear checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPolicy {
    /// Simplex-grid directions; `None` means `max(50, 10n)`.
    pub directions: Option<usize>,
    pub magnitudes: usize,
    pub starts: usize,
    pub kmax: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self { directions: None, magnitudes: 40, starts: 20, kmax: 10_000, tol: 1e-8, seed: 0 }
    }
}

impl SamplingPolicy {
    pub fn directions_for(&self, n: usize) -> usize {
        self.directions.unwrap_or((10 * n).max(50))
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.directions_for(n) == 0 || self.magnitudes < 2 || self.starts == 0 || self.kmax == 0 {
            return Err(Error::InvalidPolicy(format!(
                "need directions ≥ 1, magnitudes ≥ 2, starts ≥ 1, kmax ≥ 1; got {self:?}"
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidPolicy(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Points of the regular simplex grid `{c/k : c ∈ ℕⁿ, Σc = k}` with the
/// smallest `k` giving at least `count` points, thinned evenly to `count`.
pub fn simplex_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    if n == 0 {
        return Vec::new();
    }
    let mut k = 1;
    let mut grid = compositions(n, k);
    while grid.len() < count && k < 64 {
        k += 1;
        grid = compositions(n, k);
    }
    let pts: Vec<Vec<f64>> = grid
        .into_iter()
        .map(|c| c.into_iter().map(|x| x as f64 / k as f64).collect())
        .collect();
    if pts.len() <= count {
        return pts;
    }
    let stride = pts.len() as f64 / count as f64;
    (0..count).map(|i| pts[(i as f64 * stride) as usize].clone()).collect()
}

fn compositions(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for c in (0..=left).rev() {
            cur.push(c);
            rec(n, left - c, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, k, &mut Vec::with_capacity(n), &mut out);
    out
}

pub fn log_magnitudes(count: usize) -> Vec<f64> {
    let (lo, hi) = (MAGNITUDE_RANGE.0.ln(), MAGNITUDE_RANGE.1.ln());
    let count = count.max(2);
    (0..count).map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// Looks for `s ≠ 0` with `op(s) ≥ s`.
///
/// Samples `s = m·d` over simplex-grid directions `d` and log-spaced
/// magnitudes `m ∈ [1e−6, 1e6]`, then follows the rescaled orbit
/// `s ← m·(s + op(s))/|s + op(s)|` from the barycenter at each magnitude,
/// which converges to the dominant direction for linear operators; each
/// orbit point is also tried with its components below `1e−9·m` zeroed.
/// Returns
/// the first witness in that deterministic order.
pub fn search_violation(op: Operator<'_>, directions: usize, magnitudes: usize) -> Option<Vec<f64>> {
    let n = op.dim();
    if n == 0 {
        return None;
    }
    let dirs = simplex_directions(n, directions.max(n));
    let mags = log_magnitudes(magnitudes);
    let candidates: Vec<(usize, usize)> =
        (0..dirs.len()).flat_map(|d| (0..mags.len()).map(move |m| (d, m))).collect();
    let found = candidates.par_iter().find_map_first(|&(d, m)| {
        let s: Vec<f64> = dirs[d].iter().map(|x| x * mags[m]).collect();
        op.is_witness(&s).then_some(s)
    });
    if found.is_some() {
        return found;
    }
    mags.par_iter().find_map_first(|&m| orbit_search(op, m))
}

fn orbit_search(op: Operator<'_>, magnitude: f64) -> Option<Vec<f64>> {
    let n = op.dim();
    let mut s = vec![magnitude; n];
    let cut = ORBIT_SUPPORT_CUT * magnitude;
    for _ in 0..ORBIT_STEPS {
        if op.is_witness(&s) {
            return Some(s);
        }
        // Blocks the dominant one does not feed decay only geometrically
        // along the orbit; dropping them exposes the dominant support.
        if s.iter().any(|&x| x > 0.0 && x < cut) {
            let support: Vec<f64> = s.iter().map(|&x| if x < cut { 0.0 } else { x }).collect();
            if op.is_witness(&support) {
                return Some(support);
            }
        }
        let image = op.apply(&s);
        let mut next: Vec<f64> = s.iter().zip(&image).map(|(a, b)| a + b).collect();
        let norm = max_norm(&next);
        if !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        next.iter_mut().for_each(|x| *x *= magnitude / norm);
        let change = next.iter().zip(&s).fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        s = next;
        if change <= 1e-15 * magnitude {
            break;
        }
    }
    op.is_witness(&s).then_some(s)
}

/// Exact check of `ρ(Γ) < 1` and `Γ(s) ≱ s` for linear gains.
///
/// Returns verdicts for `rho_lt_1` and `gamma_not_geq`. When `ρ ≥ 1` the
/// witness is the Perron vector of a block attaining `ρ`, zero elsewhere,
/// which satisfies `Γs ≥ ρs ≥ s`.
pub fn check_linear(g: &GainMatrix) -> Result<CheckReport> {
    let Some(m) = g.linear_values() else {
        let (row, col) = first_nonlinear(g);
        return Err(Error::NotLinear { row, col });
    };
    let (rho_v, gamma_v, note) = linear_verdicts(m, Operator::Gamma(g))?;
    let mut report = CheckReport::default();
    report.set(RHO_LT_1, rho_v);
    report.set(GAMMA_NOT_GEQ, gamma_v);
    report.notes.extend(note);
    Ok(report)
}

fn first_nonlinear(g: &GainMatrix) -> (usize, usize) {
    let n = g.dim();
    for i in 0..n {
        for j in 0..n {
            if g.entry(i, j).is_some_and(|e| e.as_linear().is_none()) {
                return (i + 1, j + 1);
            }
        }
    }
    (0, 0)
}

fn linear_verdicts(m: &nalgebra::DMatrix<f64>, op: Operator<'_>) -> Result<(Verdict, Verdict, Option<String>)> {
    let spec = spectral_radius(m, DEFAULT_RHO_TOL)?;
    let rho = spec.rho;
    if rho < 1.0 - EPS_MARGIN {
        return Ok((Verdict::holds_with_rho(rho), Verdict::holds_with_rho(rho), None));
    }
    if rho < 1.0 {
        let note = format!("rho = {rho} lies within the {EPS_MARGIN:e} margin below 1");
        return Ok((Verdict::inconclusive().with_rho(rho), Verdict::inconclusive().with_rho(rho), Some(note)));
    }
    let witness = spec.dominant_vector;
    if op.is_witness(&witness) {
        Ok((Verdict::violated(witness.clone()).with_rho(rho), Verdict::violated(witness).with_rho(rho), None))
    } else {
        let note = format!("rho = {rho} ≥ 1 but the Perron witness did not re-verify in floating point");
        Ok((Verdict::inconclusive().with_rho(rho), Verdict::inconclusive().with_rho(rho), Some(note)))
    }
}

/// Iterates `op` from the given starts; returns total iterations when all
/// reach max-norm below `tol` within `kmax` steps.
fn fixed_point_evidence(op: Operator<'_>, starts: &[Vec<f64>], kmax: usize, tol: f64) -> std::result::Result<usize, Vec<f64>> {
    let mut total = 0;
    for s0 in starts {
        let mut s = s0.clone();
        let mut k = 0;
        while max_norm(&s) >= tol {
            if k == kmax {
                return Err(s0.clone());
            }
            s = op.apply(&s);
            k += 1;
        }
        total += k;
    }
    Ok(total)
}

/// Full small-gain check for `(Γ, D)`.
///
/// Linear `Γ` with linear `D` is decided exactly on `Γ·diag(1 + a)`;
/// otherwise `Γ∘D` is searched for a witness and, if none turns up, iterated
/// from `policy.starts` random points to gather fixed-point evidence.
pub fn check_small_gain(g: &GainMatrix, d: &ScalingOperator, policy: &SamplingPolicy) -> Result<CheckReport> {
    let n = g.dim();
    if d.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: d.dim() });
    }
    policy.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let starts = random_starts(n, policy.starts, &mut rng);
    let directions = policy.directions_for(n);
    let samples = simplex_directions(n, directions.max(n)).len() * policy.magnitudes;
    let structure = g.analyze_structure();
    let mut report = CheckReport::default();

    // plain Γ
    if let Some(m) = g.linear_values() {
        let (rho_v, gamma_v, note) = linear_verdicts(m, Operator::Gamma(g))?;
        report.set(RHO_LT_1, rho_v);
        report.set(GAMMA_NOT_GEQ, gamma_v);
        report.notes.extend(note);
    } else {
        let v = match search_violation(Operator::Gamma(g), directions, policy.magnitudes) {
            Some(w) => Verdict::violated(w),
            None => Verdict::evidence(samples, 0),
        };
        report.set(GAMMA_NOT_GEQ, v);
    }

    // Γ ∘ D
    let scaled_op = Operator::GammaD(g, d);
    let empty = (0..n).all(|i| g.row(i).iter().all(Option::is_none));
    let gamma_d = if empty {
        Verdict::holds()
    } else if let Some(m) = g.scaled_linear(d) {
        let (v, _, note) = linear_verdicts(&m, scaled_op)?;
        report.notes.extend(note);
        v
    } else {
        match search_violation(scaled_op, directions, policy.magnitudes) {
            Some(w) => Verdict::violated(w),
            None => match fixed_point_evidence(scaled_op, &starts, policy.kmax, policy.tol) {
                Ok(iterations) => Verdict::evidence(samples, iterations),
                Err(s0) => {
                    report.notes.push(format!("Γ∘D iteration from {s0:?} did not reach tol within kmax"));
                    Verdict::inconclusive()
                }
            },
        }
    };
    report.set(GAMMA_D_NOT_GEQ, gamma_d);

    // Γ^k(s) → 0
    let plain = report.get(GAMMA_NOT_GEQ).cloned().unwrap_or_else(Verdict::inconclusive);
    let gk = if plain.is_violated() {
        Verdict { status: Status::Violated, witness: plain.witness.clone(), ..Verdict::inconclusive() }
    } else {
        match fixed_point_evidence(Operator::Gamma(g), &starts, policy.kmax, policy.tol) {
            Ok(iterations) if plain.status == Status::Holds => Verdict { iterations: Some(iterations), samples: Some(starts.len()), ..Verdict::holds() },
            Ok(iterations) => Verdict::evidence(starts.len(), iterations),
            Err(s0) => {
                report.notes.push(format!("Γ^k from {s0:?} did not reach tol within kmax"));
                Verdict::inconclusive()
            }
        }
    };
    report.set(GAMMA_K_TO_ZERO, gk);
    if structure.is_irreducible {
        report.notes.push("Γ irreducible: Γ^k(s) → 0 for all s holds if and only if Γ(s) ≱ s".into());
    } else {
        report.notes.push("Γ reducible: Γ(s) ≱ s does not imply Γ^k(s) → 0; only the converse holds".into());
    }

    // Ω covering
    let cover = omega_cover_check(g, (policy.directions_for(n) * 200).max(n), policy.seed)?;
    let omega = match &cover.uncovered_witness {
        Some(w) => Verdict::violated(w.clone()),
        None if plain.status == Status::Holds => Verdict { samples: Some(cover.samples), ..Verdict::holds() },
        None => Verdict::evidence(cover.samples, 0),
    };
    report.set(OMEGA_COVER, omega);

    add_implication_notes(&mut report, g, d, structure.is_irreducible);
    Ok(report)
}

fn add_implication_notes(report: &mut CheckReport, g: &GainMatrix, d: &ScalingOperator, irreducible: bool) {
    let get = |k: &str| report.get(k).cloned().unwrap_or_else(Verdict::inconclusive);
    let plain = get(GAMMA_NOT_GEQ);
    let mut notes = Vec::new();
    let mut rule = |ok: bool, text: &str| {
        notes.push(format!("{}: {text}", if ok { "consistent" } else { "INCONSISTENT" }));
    };
    if let Some(v) = report.get(RHO_LT_1) {
        if v.status == Status::Holds {
            rule(!plain.is_violated(), "rho_lt_1 ⇒ gamma_not_geq");
        }
    }
    if get(GAMMA_D_NOT_GEQ).supports() {
        rule(!plain.is_violated(), "gamma_D_not_geq ⇒ gamma_not_geq (monotonicity of Γ)");
    }
    let omega = get(OMEGA_COVER);
    if omega.is_violated() || plain.is_violated() {
        rule(omega.is_violated() == plain.is_violated() || omega.status == Status::Inconclusive, "omega_cover ⇔ gamma_not_geq");
    }
    if irreducible && plain.status == Status::Holds {
        rule(get(GAMMA_K_TO_ZERO).supports(), "gamma_not_geq ⇒ gamma_k_to_zero (Γ irreducible)");
    }
    for (name, v) in &report.verdicts {
        if let Some(w) = v.witness.as_ref().filter(|_| v.is_violated()) {
            let op = if name == GAMMA_D_NOT_GEQ { Operator::GammaD(g, d) } else { Operator::Gamma(g) };
            rule(op.is_witness(w), &format!("{name} witness re-verifies"));
        }
    }
    report.notes.extend(notes);
}

/// The constructive bound `φ(vmax) = |[D∘(D−Id)^{-1}∘(Id+Γ)]^n (vmax·𝟙)|_max`.
///
/// Meaningful when the small-gain condition holds for `(Γ, D)`; then every
/// `w ≥ 0` with `(Id − Γ)(w) ≤ v` satisfies `|w|_max ≤ φ(|v|_max)`.
pub fn phi_bound(g: &GainMatrix, d: &ScalingOperator, vmax: f64) -> Result<f64> {
    let n = g.dim();
    if d.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: d.dim() });
    }
    if vmax.is_nan() || vmax < 0.0 {
        return Err(Error::Domain(format!("phi_bound needs vmax ≥ 0, got {vmax}")));
    }
    let mut x = vec![vmax; n];
    for _ in 0..n {
        let gx = g.apply_unchecked(&x);
        let y: Vec<f64> = x.iter().zip(&gx).map(|(a, b)| a + b).collect();
        let r = d.inverse_alpha(&y, DEFAULT_INVERSE_TOL)?;
        x = d.apply(&r)?;
    }
    Ok(max_norm(&x))
}

/// Outcome of [`check_two_system`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSystemVerdict {
    pub status: Status,
    /// `s` with `γ12∘(Id+α2)∘γ21∘(Id+α1)(s) ≥ s`.
    pub scalar_witness: Option<f64>,
    /// `(s, γ21((Id+α1)(s)))`, a witness for `Γ∘D` built from the scalar one.
    pub matrix_witness: Option<Vec<f64>>,
    pub matrix_witness_verified: bool,
    /// Verdict of [`check_small_gain`] on the induced 2×2 matrix.
    pub matrix_status: Status,
    pub agrees: bool,
    pub samples: usize,
}

/// Log grid for [`check_two_system`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogGrid {
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for LogGrid {
    fn default() -> Self {
        Self { points: 200, lo: MAGNITUDE_RANGE.0, hi: MAGNITUDE_RANGE.1 }
    }
}

impl LogGrid {
    pub fn samples(&self) -> Vec<f64> {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        let k = self.points.max(2);
        (0..k).map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp()).collect()
    }
}

/// Two-subsystem condition `γ12∘(Id+α2)∘γ21∘(Id+α1)(s) < s`, sampled on a
/// log grid and cross-checked against [`check_small_gain`] on the induced
/// matrix `[[·, γ12], [γ21, ·]]`.
pub fn check_two_system(
    g12: &ScalarGain,
    g21: &ScalarGain,
    a1: &ScalarGain,
    a2: &ScalarGain,
    grid: LogGrid,
) -> Result<TwoSystemVerdict> {
    let d = ScalingOperator::new(vec![a1.clone(), a2.clone()])?;
    let inflate = |a: &ScalarGain, x: Tracked| {
        let y = a.eval_tracked(x);
        Tracked { value: x.value + y.value, below: x.below || y.below }
    };
    let samples = grid.samples();
    let mut scalar_witness = None;
    for &s in &samples {
        let inner = g21.eval_tracked(inflate(a1, Tracked::exact(s)));
        let outer = g12.eval_tracked(inflate(a2, inner));
        if outer.geq(s) {
            scalar_witness = Some(s);
            break;
        }
    }
    let entry = |g: &ScalarGain| (*g != ScalarGain::Zero).then(|| g.clone());
    let matrix = GainMatrix::new(vec![vec![None, entry(g12)], vec![entry(g21), None]])?;
    let matrix_report = check_small_gain(&matrix, &d, &SamplingPolicy::default())?;
    let matrix_status = matrix_report.get(GAMMA_D_NOT_GEQ).map_or(Status::Inconclusive, |v| v.status);

    let matrix_witness = scalar_witness.map(|s| vec![s, g21.value(s + a1.value(s))]);
    let matrix_witness_verified =
        matrix_witness.as_ref().is_some_and(|w| Operator::GammaD(&matrix, &d).is_witness(w));
    let status = if scalar_witness.is_some() { Status::Violated } else { Status::Holds };
    let agrees = (status == Status::Violated) == (matrix_status == Status::Violated);
    Ok(TwoSystemVerdict {
        status,
        scalar_witness,
        matrix_witness,
        matrix_witness_verified,
        matrix_status,
        agrees,
        samples: samples.len(),
    })
}

/// Spectral radius of the linear coefficients, for callers that only need ρ.
pub fn linear_rho(g: &GainMatrix) -> Option<f64> {
    g.linear_values().and_then(|m| network::spectral_radius(m, DEFAULT_RHO_TOL).ok()).map(|r| r.rho)
}
