//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed; exits nonzero when any
//! criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use smallgain::conditions::{
    check_linear, check_two_system, phi_bound, search_violation, LogGrid, Operator, SamplingPolicy, Status, RHO_LT_1,
};
use smallgain::dynamics::{build_divergence_example, gas_test, iterate};
use smallgain::gains::{ScalarGain, ScalingOperator, Tracked, DEFAULT_INVERSE_TOL};
use smallgain::linsys::{corollary_check, eigenvalues, interconnection_gain, BlockLinearSystem, EnvelopeParams};
use smallgain::lyapunov::{decrease_check, omega_cover_check, omega_membership, weight_vector, LyapunovSpec};
use smallgain::network::GainMatrix;
use smallgain::sim::{
    estimate_asymptotic_gain, integrate, limsup_series, random_states, InitialStates, InputSignal, LinearField,
    NetworkSystem, SubsystemSpec, SystemSpec, VectorField,
};
use smallgain::{max_norm, Error};

use common::*;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn lib<T>(r: Result<T, Error>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn criterion_1() -> Check {
    let mut rng = rng(1);
    let policy = SamplingPolicy::default();
    let (mut below, mut above, mut worst) = (0, 0, 0.0_f64);
    for case in 0..200 {
        let n = rng.gen_range(2..=6);
        let density = rng.gen_range(0.3..1.0);
        let target = rng.gen_range(0.3..1.7);
        let m = with_rho(random_nonneg(&mut rng, n, density), target);
        let oracle = oracle_rho(&m);
        let g = lib(GainMatrix::from_linear(&m))?;
        let report = lib(check_linear(&g))?;
        let v = report.get(RHO_LT_1).ok_or("missing rho_lt_1")?;
        let rho = v.rho.ok_or("verdict without rho")?;
        worst = worst.max((rho - oracle).abs());
        ensure((rho - oracle).abs() <= 1e-8, || format!("case {case}: rho {rho} vs oracle {oracle}"))?;
        ensure((v.status == Status::Holds) == (oracle < 1.0), || format!("case {case}: {:?} at rho {oracle}", v.status))?;
        let witness = search_violation(Operator::Gamma(&g), policy.directions_for(n), policy.magnitudes);
        ensure(witness.is_some() == (oracle >= 1.0), || format!("case {case}: witness {witness:?} at rho {oracle}"))?;
        if oracle < 1.0 { below += 1 } else { above += 1 }
    }
    Ok(format!("200 matrices ({below} with rho<1, {above} with rho>=1), max |drho| = {worst:.1e}"))
}

fn criterion_2() -> Check {
    let mut rng = rng(2);
    let mut instances = 0;
    let mut worst_ratio = 0.0_f64;
    while instances < 50 {
        let n = rng.gen_range(2..=5);
        let m = with_rho(random_nonneg(&mut rng, n, 0.7), rng.gen_range(0.1..0.8));
        let alphas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.5)).collect();
        let scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * (1.0 + alphas[j]));
        if oracle_rho(&scaled) >= 0.95 {
            continue;
        }
        instances += 1;
        let g = lib(GainMatrix::from_linear(&m))?;
        let d = lib(ScalingOperator::new(alphas.iter().map(|&a| ScalarGain::linear(a)).collect()))?;
        for _ in 0..1000 {
            let w: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.gen_range(-3.0..3.0)) * rng.gen_range(0.0..1.0)).collect();
            let gw = &m * DMatrix::from_column_slice(n, 1, &w);
            let v: Vec<f64> = (0..n).map(|i| (w[i] - gw[i]).max(0.0) + rng.gen_range(0.0..0.1) * w[i]).collect();
            let vmax = max_norm(&v);
            let phi = lib(phi_bound(&g, &d, vmax))?;
            let wmax = max_norm(&w);
            ensure(wmax <= phi * (1.0 + 1e-12), || format!("|w| = {wmax} > phi({vmax}) = {phi}"))?;
            if phi > 0.0 {
                worst_ratio = worst_ratio.max(wmax / phi);
            }
        }
    }
    let g = lib(GainMatrix::from_linear(&DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0])))?;
    let d = lib(ScalingOperator::uniform_linear(2, 0.2))?;
    let phi = lib(phi_bound(&g, &d, 1.0))?;
    ensure((phi - 81.0).abs() <= 1e-9 * 81.0, || format!("hand case phi = {phi}, expected 81"))?;
    Ok(format!("50000 pairs, no violation (max |w|/phi = {worst_ratio:.3}); hand case phi = {phi}"))
}

fn criterion_3() -> Check {
    let mut rng = rng(3);
    let policy = SamplingPolicy::default();
    let mut nonlinear = 0;
    for case in 0..50 {
        let n = rng.gen_range(2..=6);
        let m = with_rho(random_irreducible(&mut rng, n, 0.4), rng.gen_range(0.2..0.9));
        let g = if case % 2 == 0 {
            lib(GainMatrix::from_linear(&m))?
        } else {
            nonlinear += 1;
            dominated_network(&mut rng, &m)
        };
        ensure(g.analyze_structure().is_irreducible, || format!("case {case}: not irreducible"))?;
        let w = search_violation(Operator::Gamma(&g), policy.directions_for(n), policy.magnitudes);
        ensure(w.is_none(), || format!("case {case}: condition fails at {w:?}"))?;
        let report = lib(gas_test(&g, 20, 10_000, 1e-6, case))?;
        ensure(report.attracts_all(), || format!("case {case}: {:?}", report.verdict))?;
    }
    Ok(format!("50 irreducible instances ({nonlinear} nonlinear) x 20 starts reach |s| < 1e-6"))
}

fn criterion_4() -> Check {
    let k = 2000;
    let ex = lib(build_divergence_example(k + 1))?;
    let trace = lib(iterate(&ex.gain, &ex.s1, k, 0.0))?;
    let s = trace.states.get(k).ok_or("trace shorter than k")?;
    let harmonic = 1.0 + (1..=k).map(|j| 1.0 / j as f64).sum::<f64>();
    ensure(s[0] >= 9.0 && (s[0] - harmonic).abs() <= 1e-9 * harmonic, || format!("s1 = {} vs 1 + H = {harmonic}", s[0]))?;
    ensure(s[1] <= 0.01, || format!("s2 = {}", s[1]))?;
    let decreasing = trace.states.windows(2).all(|w| w[1][1] < w[0][1]);
    ensure(decreasing, || "component 2 not strictly decreasing".into())?;
    let policy = SamplingPolicy::default();
    let w = search_violation(Operator::Gamma(&ex.gain), policy.directions_for(2), policy.magnitudes);
    ensure(w.is_none(), || format!("search found {w:?}"))?;
    Ok(format!("s(2000) = ({:.6}, {:.3e}), 1 + H_2000 = {harmonic:.6}, no witness", s[0], s[1]))
}

fn ex42_system() -> NetworkSystem {
    let spec = SystemSpec {
        inputs: 1,
        subsystems: vec![
            SubsystemSpec { name: None, equations: vec!["dx1 = -x1 + x2*(1-exp(-x2)) + u1".into()] },
            SubsystemSpec { name: None, equations: vec!["dx2 = -x2 + x1*(1-exp(-x1)) + u1".into()] },
        ],
        x0: None,
    };
    NetworkSystem::parse(&spec).unwrap()
}

fn criterion_5() -> Check {
    let sys = ex42_system();
    let cs = [5.0_f64, 10.0, 15.0];
    let mut worst = 0.0_f64;
    for &c in &cs {
        let u = InputSignal::Constant(vec![c * (-c).exp()]);
        let traj = lib(integrate(&sys, &[c, c], &u, 50.0, 0.01))?;
        ensure(!traj.blew_up, || format!("c = {c} blew up"))?;
        let dev = traj.states.iter().flatten().fold(0.0_f64, |m, v| m.max((v - c).abs()));
        worst = worst.max(dev);
        ensure(dev <= 1e-3, || format!("c = {c}: deviation {dev}"))?;
    }
    let levels: Vec<f64> = cs.iter().map(|c| c * (-c).exp()).collect();
    let x0s = InitialStates::PerLevel(cs.iter().map(|&c| vec![vec![c, c]]).collect());
    let table = lib(estimate_asymptotic_gain(&sys, &levels, &x0s, 50.0, 0.01))?;
    ensure(!table.monotone_bound_exists, || "AG table flag is true".into())?;
    let grid = LogGrid::default();
    let samples = grid.samples();
    ensure(samples.len() == 200, || format!("grid has {} points", samples.len()))?;
    let sat = ScalarGain::SatExp;
    let below = samples.iter().all(|&s| sat.eval_tracked(sat.eval_tracked(Tracked::exact(s))).lt(s));
    ensure(below, || "satexp∘satexp ≥ id somewhere".into())?;
    let alphas = [
        ScalarGain::linear(0.01),
        ScalarGain::linear(0.1),
        ScalarGain::linear(1.0),
        ScalarGain::power(0.1, 2.0),
        ScalarGain::SatExp,
    ];
    for a in &alphas {
        let v = lib(check_two_system(&sat, &sat, a, a, grid))?;
        ensure(v.status == Status::Violated, || format!("alpha = {a}: {:?}", v.status))?;
    }
    Ok(format!(
        "max deviation {worst:.1e}, AG fit residual {:.2}, satexp∘satexp < id on 200 points, {} alphas Violated",
        table.max_fit_residual,
        alphas.len()
    ))
}

fn random_hurwitz(rng: &mut rand_chacha::ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let shift = smallgain::linsys::spectral_abscissa(&b) + rng.gen_range(0.2..1.5);
    b - DMatrix::identity(d, d) * shift
}

fn criterion_6() -> Check {
    let mut rng = rng(6);
    let params = EnvelopeParams::default();
    let (mut worst_abscissa, mut worst_decay) = (f64::NEG_INFINITY, 0.0_f64);
    for case in 0..100 {
        let k = rng.gen_range(2..=4);
        let dims: Vec<usize> = (0..k).map(|_| rng.gen_range(1..=3)).collect();
        let a: Vec<DMatrix<f64>> = dims.iter().map(|&d| random_hurwitz(&mut rng, d)).collect();
        let delta: Vec<Vec<DMatrix<f64>>> = (0..k)
            .map(|j| {
                (0..k)
                    .map(|l| {
                        if j == l || !rng.gen_bool(0.7) {
                            DMatrix::zeros(dims[j], dims[l])
                        } else {
                            DMatrix::from_fn(dims[j], dims[l], |_, _| rng.gen_range(-1.0..1.0))
                        }
                    })
                    .collect()
            })
            .collect();
        let mut sys = lib(BlockLinearSystem::new(a, delta))?;
        let mut ic = lib(interconnection_gain(&sys, &params))?;
        while ic.rho_dr >= 1.0 {
            sys.scale_couplings(0.5);
            ic = lib(interconnection_gain(&sys, &params))?;
        }
        let report = lib(corollary_check(&sys, &params, 3, case))?;
        ensure(report.certified, || format!("case {case}: not certified at rho {}", report.rho))?;
        ensure(report.abscissa < 0.0, || format!("case {case}: abscissa {}", report.abscissa))?;
        let sim = report.simulation.ok_or_else(|| format!("case {case}: no simulation"))?;
        ensure(sim.max_decay_ratio <= 1e-6, || format!("case {case}: decay ratio {}", sim.max_decay_ratio))?;
        worst_abscissa = worst_abscissa.max(report.abscissa);
        worst_decay = worst_decay.max(sim.max_decay_ratio);
    }
    let pair = lib(BlockLinearSystem::scalar(&[-1.0, -1.0], &DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0])))?;
    let mut ev: Vec<f64> = eigenvalues(&pair.full_matrix()).iter().map(|z| z.re).collect();
    ev.sort_by(f64::total_cmp);
    ensure((ev[0] + 1.5).abs() <= 1e-10 && (ev[1] + 0.5).abs() <= 1e-10, || format!("scalar pair eigenvalues {ev:?}"))?;
    Ok(format!("100 systems, max abscissa {worst_abscissa:.3}, max decay ratio {worst_decay:.1e}; pair eigenvalues {ev:?}"))
}

/// Scalar and rotating planar subsystems with `d|x_i|/dt ≤ −|x_i| + Σ m_ij|x_j|`.
fn lyapunov_network(rng: &mut rand_chacha::ChaCha8Rng, m: &DMatrix<f64>) -> (SystemSpec, Vec<String>) {
    let n = m.nrows();
    let planar: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    let lead: Vec<String> = (0..n).map(|i| if planar[i] { format!("p{}", i + 1) } else { format!("x{}", i + 1) }).collect();
    let mut subsystems = Vec::new();
    let mut functions = Vec::new();
    for i in 0..n {
        let mut coupling = String::new();
        for j in 0..n {
            if m[(i, j)] > 0.0 {
                let sign = if rng.gen_bool(0.5) { "+" } else { "-" };
                coupling.push_str(&format!(" {sign} {:.17}*{}", m[(i, j)], lead[j]));
            }
        }
        if planar[i] {
            let w = rng.gen_range(0.5..3.0);
            let (p, q) = (format!("p{}", i + 1), format!("q{}", i + 1));
            subsystems.push(SubsystemSpec {
                name: None,
                equations: vec![format!("d{p} = -{p} + {w}*{q}{coupling}"), format!("d{q} = -{q} - {w}*{p}")],
            });
            functions.push(format!("sqrt({p}^2 + {q}^2)"));
        } else {
            let x = &lead[i];
            subsystems.push(SubsystemSpec { name: None, equations: vec![format!("d{x} = -{x}{coupling}")] });
            functions.push(format!("abs({x})"));
        }
    }
    (SystemSpec { inputs: 1, subsystems, x0: None }, functions)
}

fn criterion_7() -> Check {
    let mut rng = rng(7);
    let mut checked = 0;
    let mut min_margin = f64::INFINITY;
    for case in 0..20 {
        let n = rng.gen_range(2..=5);
        let m = with_rho(random_nonneg(&mut rng, n, 0.6), rng.gen_range(0.1..0.9));
        let s = lib(weight_vector(&m))?;
        ensure(s.margin > 0.0, || format!("case {case}: margin {}", s.margin))?;
        min_margin = min_margin.min(s.margin);
        let (spec, functions) = lyapunov_network(&mut rng, &m);
        let sys = lib(NetworkSystem::parse(&spec))?;
        let names = sys.state_names();
        let vars: Vec<&str> = names.iter().map(String::as_str).collect();
        let v = lib(LyapunovSpec::parse(&functions, &vars))?;
        for x0 in random_states(sys.dim(), 10, 5.0, case) {
            let traj = lib(integrate(&sys, &x0, &InputSignal::zero(1), 10.0, 0.01))?;
            let r = lib(decrease_check(&traj, &v, &s, &ScalarGain::Zero, 1e-8))?;
            ensure(r.violations == 0, || format!("case {case}: {r:?}"))?;
            checked += r.checked;
        }
    }
    Ok(format!("20 networks x 10 trajectories, {checked} steps checked, 0 violations, min margin {min_margin:.3}"))
}

fn criterion_8() -> Check {
    let mut rng = rng(8);
    for case in 0..10 {
        let n = rng.gen_range(2..=5);
        let m = with_rho(random_irreducible(&mut rng, n, 0.5), rng.gen_range(0.2..0.95));
        let g = if case % 2 == 0 { lib(GainMatrix::from_linear(&m))? } else { dominated_network(&mut rng, &m) };
        let r = lib(omega_cover_check(&g, 10_000, case))?;
        ensure(r.covered == 10_000 && r.coverage == 1.0, || format!("case {case}: coverage {}", r.coverage))?;
        let s = lib(weight_vector(&m))?;
        let all = lib(omega_membership(&lib(GainMatrix::from_linear(&m))?, &s.s))?;
        ensure(all.len() == n, || format!("case {case}: weight vector only in {all:?}"))?;
    }
    let id = GainMatrix::new(vec![vec![None, Some(ScalarGain::Identity)], vec![Some(ScalarGain::Identity), None]]).unwrap();
    let r = lib(omega_cover_check(&id, 10_000, 0))?;
    ensure(r.coverage < 1.0, || "identity loop fully covered".into())?;
    Ok(format!("10 instances fully covered with 1e4 samples; identity loop coverage {:.4}", r.coverage))
}

fn criterion_9() -> Check {
    let field = LinearField::new(DMatrix::from_element(1, 1, -1.0));
    let err = |h: f64| -> Result<f64, String> {
        let tr = lib(integrate(&field, &[1.0], &InputSignal::zero(0), 1.0, h))?;
        Ok((tr.final_state()[0] - (-1.0_f64).exp()).abs())
    };
    let errs = [err(0.2)?, err(0.1)?, err(0.05)?];
    let ratios = [errs[0] / errs[1], errs[1] / errs[2]];
    ensure(ratios.iter().all(|r| (12.0..=20.0).contains(r)), || format!("RK4 ratios {ratios:?}"))?;

    let mut rng = rng(9);
    let tol = DEFAULT_INVERSE_TOL;
    let mut worst = 0.0_f64;
    for _ in 0..10_000 {
        let g = random_kinf(&mut rng);
        let y = 10f64.powf(rng.gen_range(-3.0..2.0));
        let y = if g.is_kinf_structural() { y } else { y.min(0.9) };
        let t = lib(g.inverse_eval(y, tol))?;
        let gap = (g.value(t) - y).abs();
        worst = worst.max(gap);
        ensure(gap <= 10.0 * tol, || format!("{g}: |g(g^-1({y})) - y| = {gap}"))?;
    }

    let mut worst_gap = 0.0_f64;
    for k in 0..20 {
        let level = rng.gen_range(0.1..5.0);
        let amp = rng.gen_range(0.0..1.0) * level;
        let transient = rng.gen_range(-5.0..5.0);
        let rate = rng.gen_range(0.5..3.0);
        let period = [0.5, 1.0, 2.0, 4.0][k % 4];
        let times: Vec<f64> = (0..=10_000).map(|i| i as f64 * 0.01).collect();
        let values: Vec<f64> = times
            .iter()
            .map(|&t| level + amp * (std::f64::consts::TAU * t / period).sin() + transient * (-rate * t).exp())
            .collect();
        let est = limsup_series(&times, &values);
        worst_gap = worst_gap.max(est.lemma_gap());
        ensure(est.lemma_gap() <= 1e-6, || format!("signal {k}: gap {}", est.lemma_gap()))?;
    }
    Ok(format!("RK4 ratios {:.2}, {:.2}; inverse max gap {worst:.1e}; tail-sup max gap {worst_gap:.1e}", ratios[0], ratios[1]))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("linear small-gain equivalence", criterion_1, Duration::from_secs(5)),
        ("phi-bound soundness", criterion_2, Duration::from_secs(10)),
        ("GAS of Gamma^k", criterion_3, Duration::from_secs(20)),
        ("divergence counterexample", criterion_4, Duration::from_secs(2)),
        ("saturating-loop counterexample", criterion_5, Duration::from_secs(10)),
        ("linear-systems corollary", criterion_6, Duration::from_secs(30)),
        ("Lyapunov construction", criterion_7, Duration::from_secs(30)),
        ("Omega covering", criterion_8, Duration::from_secs(5)),
        ("numerics hygiene", criterion_9, Duration::from_secs(5)),
    ];
    let mut failed = 0;
    for (k, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *budget => Err(format!("{detail}; runtime {elapsed:.2?} exceeds {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name} ({elapsed:.2?}): {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({elapsed:.2?}): {detail}", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
