mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use smallgain::conditions::{check_small_gain, SamplingPolicy, Status, GAMMA_D_NOT_GEQ, GAMMA_NOT_GEQ, RHO_LT_1};
use smallgain::gains::ScalingOperator;
use smallgain::linsys::{expm, op_norm2};
use smallgain::lyapunov::{eval_v, weight_vector, LyapunovSpec};
use smallgain::network::{spectral_radius, GainMatrix, DEFAULT_RHO_TOL};

use common::*;

fn arb_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..=5, any::<u64>(), 0.2f64..1.0, 0.1f64..1.8)
        .prop_map(|(n, seed, density, target)| with_rho(random_nonneg(&mut rng(seed), n, density), target))
}

fn quick_policy(seed: u64) -> SamplingPolicy {
    SamplingPolicy { magnitudes: 12, starts: 4, kmax: 2000, seed, ..SamplingPolicy::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rho_is_homogeneous(m in arb_matrix(), c in 0.1f64..10.0) {
        let a = spectral_radius(&m, DEFAULT_RHO_TOL).unwrap().rho;
        let b = spectral_radius(&(&m * c), DEFAULT_RHO_TOL).unwrap().rho;
        prop_assert!((b - c * a).abs() <= 1e-8 * (1.0 + c * a));
        prop_assert!((a - oracle_rho(&m)).abs() <= 1e-8);
    }

    #[test]
    fn violated_verdicts_carry_valid_witnesses(m in arb_matrix(), a in 0.01f64..0.5, seed in any::<u64>()) {
        let g = GainMatrix::from_linear(&m).unwrap();
        let d = ScalingOperator::uniform_linear(m.nrows(), a).unwrap();
        let report = check_small_gain(&g, &d, &quick_policy(seed)).unwrap();
        prop_assert!(report.consistent(), "{:?}", report.notes);
        for (name, v) in &report.verdicts {
            if v.status == Status::Violated {
                let w = v.witness.as_ref().expect("violated verdict without witness");
                let s = DMatrix::from_column_slice(w.len(), 1, w);
                let image = if name == GAMMA_D_NOT_GEQ {
                    &m * DMatrix::from_fn(w.len(), 1, |i, _| w[i] * (1.0 + a))
                } else {
                    &m * &s
                };
                prop_assert!(w.iter().any(|&x| x > 0.0));
                prop_assert!(image.iter().zip(w).all(|(x, y)| *x >= *y), "{name}: {w:?}");
            }
        }
        let rho = oracle_rho(&m);
        let lt = report.get(RHO_LT_1).unwrap();
        prop_assert_eq!(lt.status == Status::Holds, rho < 1.0);
        let not_geq = report.get(GAMMA_NOT_GEQ).unwrap();
        prop_assert_eq!(not_geq.is_violated(), rho >= 1.0);
    }

    #[test]
    fn weighted_max_is_a_norm_bound(m in arb_matrix(), x in prop::collection::vec(-10.0f64..10.0, 5)) {
        let n = m.nrows();
        prop_assume!(oracle_rho(&m) < 0.95);
        let s = weight_vector(&m).unwrap();
        let ms = &m * DMatrix::from_column_slice(n, 1, &s.s);
        prop_assert!(s.s.iter().all(|&v| v > 0.0));
        prop_assert!((0..n).all(|i| ms[i] < s.s[i]));
        let vars: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let vars: Vec<&str> = vars.iter().map(String::as_str).collect();
        let fns: Vec<String> = vars.iter().map(|v| format!("abs({v})")).collect();
        let spec = LyapunovSpec::parse(&fns, &vars).unwrap();
        let (v, active) = eval_v(&spec, &s, &x[..n]).unwrap();
        let smax = s.s.iter().copied().fold(0.0, f64::max);
        let smin = s.s.iter().copied().fold(f64::INFINITY, f64::min);
        let norm = x[..n].iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        prop_assert!(v >= norm / smax - 1e-12 && v <= norm / smin + 1e-12);
        prop_assert!(!active.is_empty());
    }

    #[test]
    fn expm_group_property(v in prop::collection::vec(-2.0f64..2.0, 9)) {
        let a = DMatrix::from_row_slice(3, 3, &v);
        let prod = expm(&a) * expm(&(-&a));
        prop_assert!(op_norm2(&(prod - DMatrix::identity(3, 3))) <= 1e-9);
    }
}
