#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smallgain::gains::ScalarGain;
use smallgain::network::GainMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Spectral radius from the full complex spectrum; independent of the
/// library's power iteration. A nonnegative matrix is nilpotent exactly when
/// `Mⁿ = 0`, and the eigensolver only resolves its zero spectrum to about
/// `ε^{1/n}`, so that case is answered exactly.
pub fn oracle_rho(m: &DMatrix<f64>) -> f64 {
    if m.clone().pow(m.nrows() as u32).iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Zero-diagonal nonnegative matrix, each off-diagonal entry present with
/// probability `density`.
pub fn random_nonneg(rng: &mut ChaCha8Rng, n: usize, density: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i != j && rng.gen_bool(density) { rng.gen_range(0.05..1.0) } else { 0.0 })
}

/// Adds the ring `i → i+1` so the digraph is strongly connected.
pub fn random_irreducible(rng: &mut ChaCha8Rng, n: usize, density: f64) -> DMatrix<f64> {
    let mut m = random_nonneg(rng, n, density);
    for i in 0..n {
        let j = (i + 1) % n;
        if m[(i, j)] == 0.0 {
            m[(i, j)] = rng.gen_range(0.05..1.0);
        }
    }
    m
}

/// Rescales so the spectral radius equals `target`. Nilpotent inputs are
/// returned unchanged.
pub fn with_rho(m: DMatrix<f64>, target: f64) -> DMatrix<f64> {
    let rho = oracle_rho(&m);
    if rho > 0.0 { m * (target / rho) } else { m }
}

/// A gain `γ` with `γ(t) ≤ a·t`, drawn from several DSL shapes.
pub fn gain_below_linear(rng: &mut ChaCha8Rng, a: f64) -> ScalarGain {
    match rng.gen_range(0..5) {
        0 => ScalarGain::linear(a),
        1 => ScalarGain::scale(a, ScalarGain::SatExp),
        2 => ScalarGain::compose(ScalarGain::linear(a), ScalarGain::SatExp),
        3 => ScalarGain::sum(ScalarGain::linear(0.5 * a), ScalarGain::scale(0.5 * a, ScalarGain::SatExp)),
        _ => ScalarGain::pwl(vec![(0.0, 0.0), (1.0, 0.5 * a), (2.0, 1.5 * a), (4.0, 3.0 * a)]).unwrap(),
    }
}

/// Nonlinear gain matrix dominated entrywise by the linear matrix `m`.
pub fn dominated_network(rng: &mut ChaCha8Rng, m: &DMatrix<f64>) -> GainMatrix {
    let n = m.nrows();
    let rows = (0..n)
        .map(|i| (0..n).map(|j| (m[(i, j)] > 0.0).then(|| gain_below_linear(rng, m[(i, j)]))).collect())
        .collect();
    GainMatrix::new(rows).unwrap()
}

/// A random gain for inverse round trips.
pub fn random_kinf(rng: &mut ChaCha8Rng) -> ScalarGain {
    match rng.gen_range(0..6) {
        0 => ScalarGain::linear(rng.gen_range(0.01..10.0)),
        1 => ScalarGain::power(rng.gen_range(0.1..3.0), rng.gen_range(0.3..3.0)),
        2 => ScalarGain::SatExp,
        3 => ScalarGain::sum(ScalarGain::linear(rng.gen_range(0.1..2.0)), ScalarGain::SatExp),
        4 => ScalarGain::compose(ScalarGain::power(1.0, rng.gen_range(0.5..2.0)), ScalarGain::linear(rng.gen_range(0.1..5.0))),
        _ => {
            let mut x = 0.0;
            let mut y = 0.0;
            let mut pts = vec![(0.0, 0.0)];
            for _ in 0..5 {
                x += rng.gen_range(0.1..2.0);
                y += rng.gen_range(0.1..2.0);
                pts.push((x, y));
            }
            ScalarGain::pwl(pts).unwrap()
        }
    }
}
