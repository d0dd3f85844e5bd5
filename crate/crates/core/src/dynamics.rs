//! The discrete monotone system `s_{k+1} = Γ(s_k)` on the nonnegative
//! orthant, and the counterexample showing that `Γ(s) ≱ s` alone does not
//! force `Γ^k(s) → 0` when `Γ` is reducible.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gains::ScalarGain;
use crate::network::{spectral_radius, GainMatrix, DEFAULT_RHO_TOL};
use crate::max_norm;

/// A component above this bound counts as diverging.
pub const DIVERGENCE_BOUND: f64 = 1e12;
/// Length of the tail window used to tell oscillation from convergence.
pub const TAIL_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Classification {
    ConvergedToZero { k_hit: usize },
    Bounded,
    ComponentDiverging { index: usize },
    Oscillating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub states: Vec<Vec<f64>>,
    pub classification: Classification,
    /// Componentwise running maximum of the states.
    pub sup_envelope: Vec<Vec<f64>>,
}

impl IterationTrace {
    /// CSV with columns `k, s_1..s_n`.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let mut out = String::from("k");
        for i in 1..=n {
            let _ = write!(out, ",s_{i}");
        }
        out.push('\n');
        for (k, s) in self.states.iter().enumerate() {
            let _ = write!(out, "{k}");
            for v in s {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Iterates `Γ` from `s0` for at most `kmax` steps.
///
/// Stops early on convergence (`|s_k|_max < tol`) or divergence (a component
/// above [`DIVERGENCE_BOUND`]). Otherwise the last [`TAIL_WINDOW`] iterates
/// decide between `Oscillating` (some component moves up and down with
/// variance above `tol`) and `Bounded`.
pub fn iterate(g: &GainMatrix, s0: &[f64], kmax: usize, tol: f64) -> Result<IterationTrace> {
    if s0.len() != g.dim() {
        return Err(Error::DimensionMismatch { expected: g.dim(), got: s0.len() });
    }
    if s0.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain("start vector must be finite and nonnegative".into()));
    }
    let mut states = vec![s0.to_vec()];
    let mut sup_envelope = vec![s0.to_vec()];
    let classify = |s: &[f64], k: usize| {
        if max_norm(s) < tol {
            Some(Classification::ConvergedToZero { k_hit: k })
        } else {
            s.iter()
                .position(|&v| !v.is_finite() || v > DIVERGENCE_BOUND)
                .map(|index| Classification::ComponentDiverging { index })
        }
    };
    if let Some(c) = classify(s0, 0) {
        return Ok(IterationTrace { states, classification: c, sup_envelope });
    }
    for k in 1..=kmax {
        let next = g.apply_unchecked(&states[k - 1]);
        let env = sup_envelope[k - 1].iter().zip(&next).map(|(a, b)| a.max(*b)).collect();
        states.push(next);
        sup_envelope.push(env);
        if let Some(c) = classify(&states[k], k) {
            return Ok(IterationTrace { states, classification: c, sup_envelope });
        }
    }
    let classification = if oscillates(&states, tol) { Classification::Oscillating } else { Classification::Bounded };
    Ok(IterationTrace { states, classification, sup_envelope })
}

fn oscillates(states: &[Vec<f64>], tol: f64) -> bool {
    let tail = &states[states.len().saturating_sub(TAIL_WINDOW)..];
    if tail.len() < 3 {
        return false;
    }
    (0..tail[0].len()).any(|i| {
        let v: Vec<f64> = tail.iter().map(|s| s[i]).collect();
        let up = v.windows(2).any(|w| w[1] > w[0]);
        let down = v.windows(2).any(|w| w[1] < w[0]);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        up && down && var > tol
    })
}

/// Log-uniform magnitudes in `[1e−3, 1e3]` times random directions with
/// max-norm 1.
pub fn random_starts(n: usize, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let mag = 10f64.powf(rng.gen_range(-3.0..3.0));
            let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(f64::EPSILON..1.0)).collect();
            let m = max_norm(&dir);
            dir.iter().map(|d| d / m * mag).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict")]
pub enum GasVerdict {
    AttractsAll,
    FailsAt { s0: Vec<f64>, classification: Classification },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasReport {
    #[serde(flatten)]
    pub verdict: GasVerdict,
    pub starts: usize,
    pub max_iterations: usize,
    pub irreducible: bool,
    pub note: String,
}

impl GasReport {
    pub fn attracts_all(&self) -> bool {
        self.verdict == GasVerdict::AttractsAll
    }
}

/// Iterates from `starts` seeded random points; see [`gas_test_from`].
pub fn gas_test(g: &GainMatrix, starts: usize, kmax: usize, tol: f64, seed: u64) -> Result<GasReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gas_test_from(g, &random_starts(g.dim(), starts, &mut rng), kmax, tol)
}

/// `AttractsAll` when every start reaches `|s|_max < tol` within `kmax`
/// steps, else the first failing start.
pub fn gas_test_from(g: &GainMatrix, starts: &[Vec<f64>], kmax: usize, tol: f64) -> Result<GasReport> {
    let irreducible = g.analyze_structure().is_irreducible;
    let note = if irreducible {
        "Γ irreducible: attraction of all starts holds if and only if Γ(s) ≱ s for all s ≠ 0".to_owned()
    } else {
        "Γ reducible: attraction implies Γ(s) ≱ s, but not conversely".to_owned()
    };
    let mut max_iterations = 0;
    for s0 in starts {
        let trace = iterate(g, s0, kmax, tol)?;
        match trace.classification {
            Classification::ConvergedToZero { k_hit } => max_iterations = max_iterations.max(k_hit),
            classification => {
                return Ok(GasReport {
                    verdict: GasVerdict::FailsAt { s0: s0.clone(), classification },
                    starts: starts.len(),
                    max_iterations: kmax,
                    irreducible,
                    note,
                });
            }
        }
    }
    Ok(GasReport { verdict: GasVerdict::AttractsAll, starts: starts.len(), max_iterations, irreducible, note })
}

/// For irreducible linear `Γ` with `ρ < 1`: `δ` such that `|s0|_max ≤ δ`
/// keeps every iterate within max-norm `eps`, taken from the Perron vector.
pub fn stability_delta(g: &GainMatrix, eps: f64) -> Result<f64> {
    let m = g.linear_values().ok_or(Error::NotLinear { row: 0, col: 0 })?;
    let spec = spectral_radius(m, DEFAULT_RHO_TOL)?;
    if spec.rho >= 1.0 {
        return Err(Error::SpectralRadiusTooLarge { rho: spec.rho });
    }
    let v = spec.perron.ok_or_else(|| Error::Domain("Γ is reducible; no positive Perron vector".into()))?;
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(eps * vmin / max_norm(&v))
}

/// The reducible counterexample with `ε_k = 1/k`.
#[derive(Debug, Clone)]
pub struct DivergenceExample {
    /// `[[γ11, id], [·, γ22]]`, diagonal relaxed.
    pub gain: GainMatrix,
    pub s1: Vec<f64>,
    /// `(t_k, t_{k+1})` for `k = 1..K`.
    pub anchors: Vec<(f64, f64)>,
}

/// `t_k = ε_k + (1 + S_{k−1}) e^{−(1 + S_{k−1})}` with `S_k = Σ_{j≤k} 1/j`.
pub fn divergence_anchor(k: usize, partial_sum: f64) -> f64 {
    let a = 1.0 + partial_sum;
    1.0 / k as f64 + a * (-a).exp()
}

/// Builds `Γ = [[satexp, id], [·, γ22]]` and `s¹ = (1, 1 + e^{−1})` so that
/// the k-th iterate is `(1 + H_{k−1}, t_k)`: the first component diverges
/// like the harmonic series while the second decreases to zero, although
/// `Γ(s) ≱ s` everywhere. `γ22` interpolates `t_k ↦ t_{k+1}` for
/// `k = 1..K`, runs linearly through the origin below the smallest anchor
/// and continues with slope 0.5 above the largest.
pub fn build_divergence_example(k_anchors: usize) -> Result<DivergenceExample> {
    if k_anchors < 2 {
        return Err(Error::Construction(format!("need at least 2 anchor points, got {k_anchors}")));
    }
    let mut t = Vec::with_capacity(k_anchors + 1);
    let mut partial = 0.0;
    for k in 1..=k_anchors + 1 {
        t.push(divergence_anchor(k, partial));
        partial += 1.0 / k as f64;
    }
    if t.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Construction("anchor sequence is not strictly decreasing".into()));
    }
    let anchors: Vec<(f64, f64)> = t.windows(2).map(|w| (w[0], w[1])).collect();
    let mut points: Vec<(f64, f64)> = anchors.iter().rev().copied().collect();
    let (x_top, y_top) = anchors[0];
    points.push((x_top + 1.0, y_top + 0.5));
    let g22 = ScalarGain::pwl(points)?;
    let probe_hi = 4.0 * (x_top + 1.0);
    for k in 1..=10_000 {
        let s = probe_hi * k as f64 / 10_000.0;
        if g22.value(s) >= s {
            return Err(Error::Construction(format!("γ22({s}) ≥ {s}")));
        }
    }
    let gain = GainMatrix::with_diagonal(vec![
        vec![Some(ScalarGain::SatExp), Some(ScalarGain::Identity)],
        vec![None, Some(g22)],
    ])?;
    Ok(DivergenceExample { gain, s1: vec![1.0, t[0]], anchors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditions::{search_violation, Operator};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn two(a: f64, b: f64) -> GainMatrix {
        GainMatrix::from_linear(&DMatrix::from_row_slice(2, 2, &[0.0, a, b, 0.0])).unwrap()
    }

    fn id_loop() -> GainMatrix {
        GainMatrix::new(vec![vec![None, Some(ScalarGain::Identity)], vec![Some(ScalarGain::Identity), None]]).unwrap()
    }

    #[test]
    fn iterate_examples() {
        let tr = iterate(&two(0.5, 0.5), &[1.0, 1.0], 1000, 1e-8).unwrap();
        assert_eq!(tr.states[1], vec![0.5, 0.5]);
        assert_eq!(tr.states[2], vec![0.25, 0.25]);
        assert!(matches!(tr.classification, Classification::ConvergedToZero { .. }));

        let tr = iterate(&two(0.5, 0.5), &[0.0, 0.0], 10, 1e-8).unwrap();
        assert_eq!(tr.classification, Classification::ConvergedToZero { k_hit: 0 });

        let tr = iterate(&id_loop(), &[1.0, 2.0], 100, 1e-8).unwrap();
        assert_eq!(tr.states[1], vec![2.0, 1.0]);
        assert_eq!(tr.states[2], vec![1.0, 2.0]);
        assert_eq!(tr.classification, Classification::Oscillating);
        assert!(tr.sup_envelope.last().unwrap() == &vec![2.0, 2.0]);

        let tr = iterate(&two(2.0, 2.0), &[1.0, 1.0], 100, 1e-8).unwrap();
        assert!(matches!(tr.classification, Classification::ComponentDiverging { .. }));

        assert!(iterate(&two(0.5, 0.5), &[-1.0, 0.0], 10, 1e-8).is_err());
    }

    #[test]
    fn gas_examples() {
        assert!(gas_test(&two(0.5, 0.5), 20, 10_000, 1e-8, 1).unwrap().attracts_all());
        assert!(!gas_test(&id_loop(), 5, 1000, 1e-8, 1).unwrap().attracts_all());
        let ex = build_divergence_example(200).unwrap();
        let r = gas_test_from(&ex.gain, std::slice::from_ref(&ex.s1), 100, 1e-8).unwrap();
        assert!(matches!(r.verdict, GasVerdict::FailsAt { .. }));
        assert!(!r.irreducible);
    }

    #[test]
    fn divergence_example() {
        let ex = build_divergence_example(2001).unwrap();
        let tr = iterate(&ex.gain, &ex.s1, 2000, 1e-12).unwrap();
        let s2 = &tr.states[1];
        assert!((s2[0] - 2.0).abs() < 1e-12);
        assert!((s2[1] - 0.7706705664732254).abs() < 1e-12);
        let last = &tr.states[2000];
        assert!((last[0] - 9.178368103610282).abs() < 1e-9, "{last:?}");
        assert!((last[1] - 0.0014474064).abs() < 1e-9, "{last:?}");
        assert!(tr.states.windows(2).all(|w| w[1][1] < w[0][1] && w[1][0] > w[0][0]));
        assert!(search_violation(Operator::Gamma(&ex.gain), 50, 40).is_none());
        assert!(build_divergence_example(1).is_err());
    }

    #[test]
    fn stability_delta_bounds_trace() {
        let g = two(0.9, 0.2);
        let eps = 0.1;
        let delta = stability_delta(&g, eps).unwrap();
        for s0 in [[delta, delta], [delta, 0.0], [0.0, delta]] {
            let tr = iterate(&g, &s0, 500, 1e-14).unwrap();
            assert!(tr.states.iter().all(|s| max_norm(s) <= eps));
        }
    }

    #[test]
    fn csv_layout() {
        let tr = iterate(&two(0.5, 0.5), &[1.0, 1.0], 2, 0.0).unwrap();
        let csv = tr.to_csv();
        assert_eq!(csv.lines().next(), Some("k,s_1,s_2"));
        assert_eq!(csv.lines().nth(2), Some("1,0.5,0.5"));
    }

    proptest! {
        #[test]
        fn monotone_sandwich(a in 0.0..1.5f64, b in 0.0..1.5f64, s in prop::collection::vec(0.0..10.0f64, 2), d in prop::collection::vec(0.0..5.0f64, 2)) {
            let g = GainMatrix::new(vec![
                vec![None, Some(ScalarGain::sum(ScalarGain::linear(a), ScalarGain::SatExp))],
                vec![Some(ScalarGain::linear(b)), None],
            ]).unwrap();
            let hi: Vec<f64> = s.iter().zip(&d).map(|(x, y)| x + y).collect();
            let lo_tr = iterate(&g, &s, 30, 0.0).unwrap();
            let hi_tr = iterate(&g, &hi, 30, 0.0).unwrap();
            for (x, y) in lo_tr.states.iter().zip(&hi_tr.states) {
                prop_assert!(x.iter().zip(y).all(|(p, q)| p <= q));
            }
        }

        #[test]
        fn powers_never_dominate_when_rho_below_one(a in 0.0..0.99f64, b in 0.0..0.99f64, s in prop::collection::vec(0.001..10.0f64, 2)) {
            let g = two(a, b);
            let mut x = s.clone();
            for _ in 0..20 {
                x = g.apply(&x).unwrap();
                prop_assert!(!(x[0] >= s[0] && x[1] >= s[1]));
            }
        }
    }
}
