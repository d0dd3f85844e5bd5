//! Max-form Lyapunov functions `V(x) = max_i V_i(x_i)/s_i` built from a
//! weight vector `s` with `s_i > Σ_j γ_ij s_j`, the regions
//! `Ω_i = {x : |x_i| > Σ_{j≠i} γ_ij(|x_j|)}`, and decrease checks along
//! simulated trajectories.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::{simplex_directions, EPS_MARGIN};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::gains::{ScalarGain, Tracked};
use crate::network::{analyze_structure, spectral_radius, GainMatrix, DEFAULT_RHO_TOL};
use crate::sim::Trajectory;
use crate::{euclid_norm, max_norm};

/// Relative tolerance for ties in the active index set.
pub const ACTIVE_TIE_TOL: f64 = 1e-9;
const NEUMANN_TOL: f64 = 1e-14;
const NEUMANN_MAX_ITER: usize = 1_000_000;
const ASCENT_STEPS: usize = 200;

/// How [`weight_vector_with`] picks `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMethod {
    /// Perron vector when irreducible, Neumann series otherwise.
    Auto,
    Perron,
    /// `s = (I − M)^{-1} 𝟙`.
    Neumann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub s: Vec<f64>,
    /// `min_i (s_i − (M s)_i)`.
    pub margin: f64,
    pub method: WeightMethod,
}

/// [`weight_vector_with`] using [`WeightMethod::Auto`].
pub fn weight_vector(m: &DMatrix<f64>) -> Result<WeightVector> {
    weight_vector_with(m, WeightMethod::Auto)
}

/// A strictly positive `s` with `M s < s` componentwise.
///
/// The Perron vector is normalized to max-norm 1 and gives `M s = ρ s`.
pub fn weight_vector_with(m: &DMatrix<f64>, method: WeightMethod) -> Result<WeightVector> {
    let n = m.nrows();
    let spec = spectral_radius(m, DEFAULT_RHO_TOL)?;
    if spec.rho >= 1.0 - EPS_MARGIN {
        return Err(Error::SpectralRadiusTooLarge { rho: spec.rho });
    }
    let adj: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)] > 0.0).collect()).collect();
    let irreducible = n > 1 && analyze_structure(&adj).is_irreducible;
    let method = match method {
        WeightMethod::Auto if irreducible => WeightMethod::Perron,
        WeightMethod::Auto => WeightMethod::Neumann,
        other => other,
    };
    let s = match (method, spec.perron) {
        (WeightMethod::Perron, Some(v)) => v,
        (WeightMethod::Perron, None) => {
            return Err(Error::Domain("matrix is reducible; no positive Perron vector".into()));
        }
        _ => neumann(m)?,
    };
    let ms = m * DVector::from_column_slice(&s);
    let margin = s.iter().zip(ms.iter()).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
    Ok(WeightVector { s, margin, method })
}

fn neumann(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let ones = DVector::from_element(m.nrows(), 1.0);
    let mut s = ones.clone();
    for _ in 0..NEUMANN_MAX_ITER {
        let next = &ones + m * &s;
        let change = (&next - &s).amax();
        s = next;
        if change <= NEUMANN_TOL * s.amax() {
            return Ok(s.iter().copied().collect());
        }
    }
    Err(Error::NonConvergence { what: "Neumann series", iterations: NEUMANN_MAX_ITER, last: s.iter().copied().collect() })
}

/// Component functions `V_i`, each an expression over the full state names.
#[derive(Debug, Clone)]
pub struct LyapunovSpec {
    pub functions: Vec<Expr>,
    /// Optional `(ψ_{i1}, ψ_{i2})` with `ψ_{i1}(|x_i|) ≤ V_i ≤ ψ_{i2}(|x_i|)`.
    pub sandwich: Option<Vec<(ScalarGain, ScalarGain)>>,
    /// Linear Lyapunov gains `γ_ij` between the `V_i`.
    pub gains: Option<DMatrix<f64>>,
}

impl LyapunovSpec {
    pub fn new(functions: Vec<Expr>) -> Self {
        Self { functions, sandwich: None, gains: None }
    }

    /// Parses one expression per subsystem over the state names `vars`.
    pub fn parse<S: AsRef<str>>(functions: &[S], vars: &[&str]) -> Result<Self> {
        let functions = functions
            .iter()
            .enumerate()
            .map(|(i, f)| Expr::parse(f.as_ref(), vars).map_err(|e| e.at(format!("/functions/{i}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(functions))
    }

    pub fn dim(&self) -> usize {
        self.functions.len()
    }

    pub fn components(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.functions
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let v = f.eval(x);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Eval(format!("V_{} = {} is not finite at {x:?}", i + 1, f.source())))
                }
            })
            .collect()
    }

    /// Indices `i` where the sandwich bound fails at `x`; `norms[i] = |x_i|`.
    pub fn sandwich_violations(&self, x: &[f64], norms: &[f64]) -> Result<Vec<usize>> {
        let Some(pairs) = &self.sandwich else { return Ok(Vec::new()) };
        let v = self.components(x)?;
        Ok((0..pairs.len())
            .filter(|&i| {
                let (lo, hi) = &pairs[i];
                lo.value(norms[i]) > v[i] || v[i] > hi.value(norms[i])
            })
            .collect())
    }
}

/// `V(x) = max_i V_i(x)/s_i` with the zero-based active set
/// `{i : V_i/s_i ≥ V(x) − 1e−9·|V(x)|}`.
pub fn eval_v(spec: &LyapunovSpec, s: &WeightVector, x: &[f64]) -> Result<(f64, Vec<usize>)> {
    if spec.dim() != s.s.len() {
        return Err(Error::DimensionMismatch { expected: s.s.len(), got: spec.dim() });
    }
    let ratios: Vec<f64> = spec.components(x)?.iter().zip(&s.s).map(|(v, w)| v / w).collect();
    let value = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cut = value - ACTIVE_TIE_TOL * value.abs();
    let active = (0..ratios.len()).filter(|&i| ratios[i] >= cut).collect();
    Ok((value, active))
}

/// Zero-based `{i : x_i > Σ_{j≠i} γ_ij(x_j)}`, ties resolved as in
/// [`Tracked`].
pub fn omega_membership(g: &GainMatrix, x_norms: &[f64]) -> Result<Vec<usize>> {
    let n = g.dim();
    if x_norms.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x_norms.len() });
    }
    if x_norms.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Domain("norms must be nonnegative".into()));
    }
    Ok(membership(g, x_norms))
}

fn membership(g: &GainMatrix, x: &[f64]) -> Vec<usize> {
    (0..g.dim())
        .filter(|&i| {
            let rhs = g
                .row(i)
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .filter_map(|(j, e)| e.as_ref().map(|e| e.eval_tracked(Tracked::exact(x[j]))))
                .fold(Tracked::exact(0.0), |a, b| Tracked { value: a.value + b.value, below: a.below || b.below });
            rhs.lt(x[i])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaCoverReport {
    pub samples: usize,
    pub covered: usize,
    pub coverage: f64,
    /// A sampled point outside every region.
    pub uncovered_witness: Option<Vec<f64>>,
    /// A point inside every region.
    pub intersection_witness: Option<Vec<f64>>,
    /// `weight_vector`, `search` or `not_found`.
    pub intersection_source: String,
}

/// Samples points on the positive part of the unit sphere and reports how
/// many lie in at least one `Ω_i`.
///
/// The sample set starts with simplex-grid directions (including the
/// barycenter) and, for linear gains, the dominant eigenvector; the rest are
/// uniform on the simplex. For nonlinear gains each direction is scaled by a
/// log-uniform magnitude in `[1e−3, 1e3]`, since the regions are not cones.
pub fn omega_cover_check(g: &GainMatrix, samples: usize, seed: u64) -> Result<OmegaCoverReport> {
    let n = g.dim();
    if samples < n {
        return Err(Error::InvalidPolicy(format!("need at least {n} samples, got {samples}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = simplex_directions(n, (samples / 10).max(n).min(samples));
    dirs.push(vec![1.0; n]);
    if let Some(m) = g.linear_values() {
        if let Ok(spec) = spectral_radius(m, DEFAULT_RHO_TOL) {
            dirs.push(spec.dominant_vector);
        }
    }
    dirs.truncate(samples);
    while dirs.len() < samples {
        let e: Vec<f64> = (0..n).map(|_| -rng.gen_range(f64::MIN_POSITIVE..1.0).ln()).collect();
        dirs.push(e);
    }
    let linear = g.is_linear();
    let points: Vec<Vec<f64>> = dirs
        .into_iter()
        .map(|d| {
            let r = if linear { 1.0 } else { 10f64.powf(rng.gen_range(-3.0..3.0)) };
            let norm = euclid_norm(&d);
            d.iter().map(|x| x / norm * r).collect()
        })
        .collect();
    let members: Vec<Vec<usize>> = points.par_iter().map(|p| membership(g, p)).collect();
    let covered = members.iter().filter(|m| !m.is_empty()).count();
    let uncovered_witness = members.iter().position(Vec::is_empty).map(|k| points[k].clone());

    let (intersection_witness, source) = intersection_witness(g, &points, &members);
    Ok(OmegaCoverReport {
        samples,
        covered,
        coverage: covered as f64 / samples as f64,
        uncovered_witness,
        intersection_witness,
        intersection_source: source.into(),
    })
}

fn intersection_witness(g: &GainMatrix, points: &[Vec<f64>], members: &[Vec<usize>]) -> (Option<Vec<f64>>, &'static str) {
    let n = g.dim();
    if let Some(m) = g.linear_values() {
        if let Ok(w) = weight_vector(m) {
            if membership(g, &w.s).len() == n {
                return (Some(w.s), "weight_vector");
            }
        }
    }
    if let Some(k) = members.iter().position(|m| m.len() == n) {
        return (Some(points[k].clone()), "search");
    }
    // coordinate ascent from the barycenter: raise each failing coordinate
    // just above its gain-weighted requirement
    let mut s = vec![1.0; n];
    for _ in 0..ASCENT_STEPS {
        let inside = membership(g, &s);
        if inside.len() == n {
            return (Some(s), "search");
        }
        let need = g.apply_unchecked(&s);
        for i in (0..n).filter(|i| !inside.contains(i)) {
            let own = g.entry(i, i).map_or(0.0, |e| e.value(s[i]));
            s[i] = s[i].max(1.01 * (need[i] - own) + 1e-12);
        }
        let m = max_norm(&s);
        if !m.is_finite() || m > 1e12 {
            break;
        }
    }
    (None, "not_found")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecreaseReport {
    /// Samples where `V(x) ≥ χ(|u|)` and the step was checked.
    pub checked: usize,
    pub violations: usize,
    /// Largest `V(x(t+h)) − V(x(t))` over checked samples.
    pub worst_increase: f64,
    pub worst_time: Option<f64>,
}

impl DecreaseReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Forward-difference decrease check of `V` along a trajectory: wherever
/// `V(x(t)) ≥ u_gain(|u(t)|)` the next sample must satisfy
/// `V(x(t+h)) ≤ V(x(t)) + tol`.
pub fn decrease_check(traj: &Trajectory, spec: &LyapunovSpec, s: &WeightVector, u_gain: &ScalarGain, tol: f64) -> Result<DecreaseReport> {
    let values = traj.states.iter().map(|x| eval_v(spec, s, x).map(|v| v.0)).collect::<Result<Vec<_>>>()?;
    let mut report = DecreaseReport { checked: 0, violations: 0, worst_increase: f64::NEG_INFINITY, worst_time: None };
    for k in 0..values.len().saturating_sub(1) {
        if values[k] < u_gain.value(euclid_norm(&traj.inputs[k])) {
            continue;
        }
        report.checked += 1;
        let inc = values[k + 1] - values[k];
        if inc > report.worst_increase {
            report.worst_increase = inc;
            report.worst_time = Some(traj.times[k]);
        }
        if inc > tol {
            report.violations += 1;
        }
    }
    Ok(report)
}
