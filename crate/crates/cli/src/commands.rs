//! Subcommand implementations. Every JSON artifact is an object
//! `{command, exit_code, ...result}` without timestamps, so reruns with the
//! same config and seed are byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use smallgain::conditions::{
    check_small_gain, check_two_system, phi_bound, search_violation, CheckReport, LogGrid, Operator, Status,
    TwoSystemVerdict, GAMMA_D_NOT_GEQ,
};
use smallgain::dynamics::{build_divergence_example, iterate, Classification};
use smallgain::gains::{parse_gain, ScalarGain, Tracked};
use smallgain::linsys::{corollary_check, CorollaryReport, EnvelopeParams};
use smallgain::lyapunov::{decrease_check, omega_cover_check, weight_vector, DecreaseReport, LyapunovSpec, OmegaCoverReport, WeightVector};
use smallgain::network::{GainMatrix, GraphStructure};
use smallgain::sim::{
    estimate_asymptotic_gain, integrate, limsup_estimates, random_states, AgTable, InitialStates, InputSignal,
    LimsupEstimate, NetworkSystem, SubsystemSpec, SystemSpec, VectorField,
};

use crate::config::{located, state_names, ProjectConfig};
use crate::{Cli, CliError, Command, Variant};

type Outcome = Result<u8, CliError>;

const OMEGA_SAMPLES: usize = 10_000;
const MERGED: &str = "merged_report.json";

pub fn run(cli: &Cli) -> Outcome {
    std::fs::create_dir_all(&cli.out).map_err(|source| CliError::Io { path: cli.out.clone(), source })?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Check => check(&load(cli, true)?, out),
        Command::Iterate { s0, kmax, tol } => run_iterate(&load(cli, true)?, out, s0.as_deref(), *kmax, *tol),
        Command::Lyapunov { check_decrease } => lyapunov(&load(cli, true)?, out, *check_decrease),
        Command::Simulate { t_end, h, u, c } => simulate(&load(cli, true)?, out, *t_end, *h, u.as_deref(), c.as_deref()),
        Command::Linsys { margin, horizon } => linsys(&load(cli, true)?, out, *margin, *horizon),
        Command::Counterexample { variant: Variant::GammaK, k, .. } => gamma_k(&load(cli, false)?, out, *k),
        Command::Counterexample { variant: Variant::Ex42, c, .. } => ex42(&load(cli, false)?, out, c.as_deref()),
        Command::Report => report(out),
    }
}

fn load(cli: &Cli, required: bool) -> Result<ProjectConfig, CliError> {
    match &cli.config {
        Some(path) => ProjectConfig::load(path),
        None if required => Err(CliError::Usage("this command needs --config <FILE>".into())),
        None => {
            let mut cfg = ProjectConfig::default();
            if let Ok(seed) = std::env::var(crate::config::SEED_ENV) {
                cfg.analysis.seed = seed
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("{}={seed:?} is not a nonnegative integer", crate::config::SEED_ENV)))?;
            }
            Ok(cfg)
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    exit_code: u8,
    #[serde(flatten)]
    result: &'a T,
}

fn write_json<T: Serialize>(out: &Path, file: &str, command: &str, exit_code: u8, result: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(&Envelope { command, exit_code, result })
        .map_err(|e| CliError::Usage(format!("cannot serialize {file}: {e}")))?;
    text.push('\n');
    write_file(out, file, &text)
}

fn write_file(out: &Path, file: &str, text: &str) -> Result<(), CliError> {
    let path = out.join(file);
    std::fs::write(&path, text).map_err(|source| CliError::Io { path, source })
}

fn code(ok: bool) -> u8 {
    if ok { 0 } else { 2 }
}

#[derive(Serialize)]
struct StructureSummary {
    irreducible: bool,
    primitive: bool,
    cyclicity: Option<usize>,
    scc_partition: Vec<Vec<usize>>,
    condensation_order: Vec<usize>,
}

impl From<&GraphStructure> for StructureSummary {
    fn from(g: &GraphStructure) -> Self {
        Self {
            irreducible: g.is_irreducible,
            primitive: g.is_primitive(),
            cyclicity: g.cyclicity,
            scc_partition: g.scc_partition.clone(),
            condensation_order: g.condensation_order.clone(),
        }
    }
}

#[derive(Serialize)]
struct GainCheck {
    #[serde(flatten)]
    report: CheckReport,
    structure: StructureSummary,
    /// `φ(1)` when the scaled condition is supported.
    phi_at_1: Option<f64>,
}

fn check(cfg: &ProjectConfig, out: &Path) -> Outcome {
    match (&cfg.gain_matrix, &cfg.linear_blocks) {
        (Some(_), None) => {}
        (None, Some(_)) => {
            let (report, exit) = corollary(cfg, cfg.analysis.envelope)?;
            write_json(out, "report.json", "check", exit, &report)?;
            return Ok(exit);
        }
        _ => return Err(CliError::config("/", "check needs exactly one of gain_matrix, linear_blocks")),
    }
    let g = cfg.gain_matrix()?;
    let d = cfg.scaling(g.dim())?;
    let report = check_small_gain(&g, &d, &cfg.analysis.policy())?;
    let supported = report.get(GAMMA_D_NOT_GEQ).is_some_and(|v| v.supports());
    let phi_at_1 = if supported { phi_bound(&g, &d, 1.0).ok().filter(|v| v.is_finite()) } else { None };
    let exit = code(supported);
    let result = GainCheck { report, structure: (&g.analyze_structure()).into(), phi_at_1 };
    write_json(out, "report.json", "check", exit, &result)?;
    Ok(exit)
}

#[derive(Serialize)]
struct IterateResult {
    s0: Vec<f64>,
    kmax: usize,
    tol: f64,
    steps: usize,
    classification: Classification,
    final_state: Vec<f64>,
    sup_envelope: Vec<f64>,
}

fn run_iterate(cfg: &ProjectConfig, out: &Path, s0: Option<&[f64]>, kmax: Option<usize>, tol: Option<f64>) -> Outcome {
    let g = cfg.gain_matrix()?;
    let s0 = s0.map_or_else(|| vec![1.0; g.dim()], <[f64]>::to_vec);
    let kmax = kmax.unwrap_or(cfg.analysis.kmax);
    let tol = tol.unwrap_or(cfg.analysis.tol);
    if !(tol >= 0.0) {
        return Err(CliError::Usage("--tol must be nonnegative".into()));
    }
    let trace = iterate(&g, &s0, kmax, tol).map_err(|e| CliError::Usage(format!("--s0: {e}")))?;
    write_file(out, "trace.csv", &trace.to_csv())?;
    let exit = code(matches!(trace.classification, Classification::ConvergedToZero { .. }));
    let result = IterateResult {
        s0,
        kmax,
        tol,
        steps: trace.states.len() - 1,
        classification: trace.classification,
        final_state: trace.states.last().cloned().unwrap_or_default(),
        sup_envelope: trace.sup_envelope.last().cloned().unwrap_or_default(),
    };
    write_json(out, "iterate.json", "iterate", exit, &result)?;
    Ok(exit)
}

#[derive(Serialize)]
struct LyapunovResult {
    weight_vector: WeightVector,
    omega_cover: OmegaCoverReport,
    decrease: Option<Vec<DecreaseReport>>,
}

fn lyapunov(cfg: &ProjectConfig, out: &Path, check_decrease: bool) -> Outcome {
    let gains = match cfg.lyapunov.as_ref().and_then(|l| l.gains.as_ref()) {
        Some(rows) => {
            let n = rows.len();
            nalgebra_rows(rows, n)
        }
        None => {
            let g = cfg.gain_matrix()?;
            match g.linear_values() {
                Some(m) => m.clone(),
                None => return Err(CliError::config("/gain_matrix", "lyapunov needs linear gains or lyapunov.gains")),
            }
        }
    };
    let weights = weight_vector(&gains)?;
    let g = GainMatrix::from_linear(&gains).map_err(|e| located(e, "/lyapunov/gains"))?;
    let omega_cover = omega_cover_check(&g, OMEGA_SAMPLES, cfg.analysis.seed)?;
    let mut ok = weights.margin > 0.0 && omega_cover.uncovered_witness.is_none();
    let decrease = if check_decrease { Some(decrease_runs(cfg, &weights)?) } else { None };
    if let Some(runs) = &decrease {
        ok &= runs.iter().all(DecreaseReport::passed);
    }
    let exit = code(ok);
    write_json(out, "lyapunov.json", "lyapunov", exit, &LyapunovResult { weight_vector: weights, omega_cover, decrease })?;
    Ok(exit)
}

fn nalgebra_rows(rows: &[Vec<f64>], n: usize) -> smallgain::nalgebra::DMatrix<f64> {
    smallgain::nalgebra::DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

fn decrease_runs(cfg: &ProjectConfig, weights: &WeightVector) -> Result<Vec<DecreaseReport>, CliError> {
    let Some(spec) = &cfg.system else {
        return Err(CliError::config("/system", "required by lyapunov --check-decrease but absent"));
    };
    let Some(l) = &cfg.lyapunov else {
        return Err(CliError::config("/lyapunov", "required by lyapunov --check-decrease but absent"));
    };
    let sys = NetworkSystem::parse(spec).map_err(|e| located(e, "/system"))?;
    let names = state_names(spec);
    let vars: Vec<&str> = names.iter().map(String::as_str).collect();
    let functions = LyapunovSpec::parse(&l.functions, &vars).map_err(|e| located(e, "/lyapunov"))?;
    if functions.dim() != weights.s.len() {
        let msg = format!("{} functions but the gain matrix has dimension {}", functions.dim(), weights.s.len());
        return Err(CliError::config("/lyapunov/functions", msg));
    }
    let u_gain = match &l.u_gain {
        Some(text) => parse_gain(text).map_err(|e| CliError::config("/lyapunov/u_gain", e))?,
        None => ScalarGain::Zero,
    };
    let a = &cfg.analysis;
    let x0s = initial_states(spec, sys.dim(), a.sims, a.seed);
    let u = InputSignal::zero(sys.input_dim());
    let mut reports = Vec::with_capacity(x0s.len());
    for x0 in &x0s {
        let traj = integrate(&sys, x0, &u, a.t_end, a.h)?;
        reports.push(decrease_check(&traj, &functions, weights, &u_gain, a.decrease_tol)?);
    }
    Ok(reports)
}

fn initial_states(spec: &SystemSpec, dim: usize, sims: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut x0s: Vec<Vec<f64>> = spec.x0.iter().cloned().collect();
    x0s.extend(random_states(dim, sims, 1.0, seed));
    if x0s.is_empty() {
        x0s.push(vec![0.0; dim]);
    }
    x0s
}

#[derive(Serialize)]
struct SimulateResult {
    t_end: f64,
    h: f64,
    input: String,
    samples: usize,
    blew_up: bool,
    final_state: Vec<f64>,
    limsup: Vec<LimsupEstimate>,
}

#[derive(Serialize)]
struct AgResult<'a> {
    t_end: f64,
    h: f64,
    /// Per-level `c` when levels are `c·e^{−c}`.
    c: Option<&'a [f64]>,
    table: &'a AgTable,
}

fn simulate(cfg: &ProjectConfig, out: &Path, t_end: Option<f64>, h: Option<f64>, u: Option<&str>, c: Option<&[f64]>) -> Outcome {
    let Some(spec) = &cfg.system else {
        return Err(CliError::config("/system", "required by simulate but absent"));
    };
    let sys = NetworkSystem::parse(spec).map_err(|e| located(e, "/system"))?;
    let t_end = t_end.unwrap_or(cfg.analysis.t_end);
    let h = h.unwrap_or(cfg.analysis.h);
    if !(h > 0.0) || !(t_end >= h) {
        return Err(CliError::Usage(format!("need 0 < h ≤ T, got h = {h}, T = {t_end}")));
    }
    if let Some(c) = c {
        let cs = probe_levels(c)?;
        let table = ag_table_for(&sys, &cs, t_end, h)?;
        let exit = code(table.monotone_bound_exists);
        write_json(out, "ag_table.json", "simulate", exit, &AgResult { t_end, h, c: Some(&cs), table: &table })?;
        return Ok(exit);
    }
    let input = u.unwrap_or("0");
    let signal = InputSignal::parse(input, sys.input_dim()).map_err(|e| CliError::Usage(format!("--u: {e}")))?;
    let x0 = spec.x0.clone().unwrap_or_else(|| vec![0.0; sys.dim()]);
    let traj = integrate(&sys, &x0, &signal, t_end, h)?;
    write_file(out, "trajectory.csv", &traj.to_csv())?;
    let mut exit = code(!traj.blew_up);
    if let Some(levels) = &cfg.analysis.levels {
        let x0s = initial_states(spec, sys.dim(), cfg.analysis.sims, cfg.analysis.seed);
        let table = estimate_asymptotic_gain(&sys, levels, &InitialStates::Shared(x0s), t_end, h)?;
        exit = exit.max(code(table.monotone_bound_exists));
        write_json(out, "ag_table.json", "simulate", exit, &AgResult { t_end, h, c: None, table: &table })?;
    }
    let result = SimulateResult {
        t_end,
        h,
        input: input.to_owned(),
        samples: traj.len(),
        blew_up: traj.blew_up,
        final_state: traj.final_state().to_vec(),
        limsup: limsup_estimates(&traj),
    };
    write_json(out, "simulate.json", "simulate", exit, &result)?;
    Ok(exit)
}

fn probe_levels(c: &[f64]) -> Result<Vec<f64>, CliError> {
    if c.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(CliError::Usage("--c values must be positive".into()));
    }
    Ok(match c {
        [c] => vec![c / 2.0, *c, 1.5 * c],
        _ => c.to_vec(),
    })
}

fn ag_table_for(sys: &NetworkSystem, cs: &[f64], t_end: f64, h: f64) -> Result<AgTable, CliError> {
    let levels: Vec<f64> = cs.iter().map(|c| c * (-c).exp()).collect();
    let x0s = InitialStates::PerLevel(cs.iter().map(|&c| vec![vec![c; sys.dim()]]).collect());
    Ok(estimate_asymptotic_gain(sys, &levels, &x0s, t_end, h)?)
}

fn corollary(cfg: &ProjectConfig, params: EnvelopeParams) -> Result<(CorollaryReport, u8), CliError> {
    let Some(spec) = &cfg.linear_blocks else {
        return Err(CliError::config("/linear_blocks", "required by this command but absent"));
    };
    let sys = spec.build().map_err(|e| located(e, "/linear_blocks"))?;
    let report = corollary_check(&sys, &params, cfg.analysis.sims, cfg.analysis.seed)?;
    let exit = code(report.certified && report.consistent);
    Ok((report, exit))
}

fn linsys(cfg: &ProjectConfig, out: &Path, margin: Option<f64>, horizon: Option<f64>) -> Outcome {
    let mut params = cfg.analysis.envelope;
    if let Some(m) = margin {
        if !(0.0..1.0).contains(&m) {
            return Err(CliError::Usage(format!("--margin must lie in [0, 1), got {m}")));
        }
        params.margin = m;
    }
    if let Some(hz) = horizon {
        if !(hz > 0.0) || !hz.is_finite() {
            return Err(CliError::Usage(format!("--horizon must be positive, got {hz}")));
        }
        params.horizon = Some(hz);
    }
    let (report, exit) = corollary(cfg, params)?;
    write_json(out, "linsys.json", "linsys", exit, &report)?;
    Ok(exit)
}

#[derive(Serialize)]
struct GammaKResult {
    variant: &'static str,
    k: usize,
    final_state: Vec<f64>,
    /// `1 + H_{k}`, the predicted first component after `k` steps.
    harmonic_prediction: f64,
    second_component_decreasing: bool,
    witness: Option<Vec<f64>>,
    reproduced: bool,
}

fn gamma_k(cfg: &ProjectConfig, out: &Path, k: usize) -> Outcome {
    if k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let ex = build_divergence_example(k + 1)?;
    let trace = iterate(&ex.gain, &ex.s1, k, 0.0)?;
    write_file(out, "trace.csv", &trace.to_csv())?;
    let final_state = trace.states.last().cloned().unwrap_or_default();
    let harmonic_prediction = 1.0 + (1..=k).map(|j| 1.0 / j as f64).sum::<f64>();
    let second_component_decreasing = trace.states.windows(2).all(|w| w[1][1] < w[0][1]);
    let policy = cfg.analysis.policy();
    let witness = search_violation(Operator::Gamma(&ex.gain), policy.directions_for(2), policy.magnitudes);
    let reproduced = trace.states.len() == k + 1
        && (final_state[0] - harmonic_prediction).abs() <= 1e-9 * harmonic_prediction
        && second_component_decreasing
        && witness.is_none();
    let exit = code(reproduced);
    let result = GammaKResult {
        variant: "gamma-k",
        k,
        final_state,
        harmonic_prediction,
        second_component_decreasing,
        witness,
        reproduced,
    };
    write_json(out, "counterexample.json", "counterexample", exit, &result)?;
    Ok(exit)
}

#[derive(Serialize)]
struct Ex42Result<'a> {
    variant: &'static str,
    c: &'a [f64],
    ag_table: &'a AgTable,
    /// Largest `|x_i(t) − c|` over the trajectory from `(c, c)`, per level.
    max_deviation: Vec<f64>,
    composed_below_identity: bool,
    two_system: BTreeMap<String, TwoSystemVerdict>,
    reproduced: bool,
}

fn ex42_system() -> SystemSpec {
    SystemSpec {
        inputs: 1,
        subsystems: vec![
            SubsystemSpec { name: Some("S1".into()), equations: vec!["dx1 = -x1 + x2*(1-exp(-x2)) + u1".into()] },
            SubsystemSpec { name: Some("S2".into()), equations: vec!["dx2 = -x2 + x1*(1-exp(-x1)) + u1".into()] },
        ],
        x0: None,
    }
}

fn ex42(cfg: &ProjectConfig, out: &Path, c: Option<&[f64]>) -> Outcome {
    let cs = match c {
        Some(c) => probe_levels(c)?,
        None => vec![5.0, 10.0, 15.0],
    };
    let spec = cfg.system.clone().unwrap_or_else(ex42_system);
    let sys = NetworkSystem::parse(&spec).map_err(|e| located(e, "/system"))?;
    let (t_end, h) = (cfg.analysis.t_end, cfg.analysis.h);
    let ag_table = ag_table_for(&sys, &cs, t_end, h)?;
    let mut max_deviation = Vec::with_capacity(cs.len());
    for &c in &cs {
        let u = InputSignal::Constant(vec![c * (-c).exp(); sys.input_dim()]);
        let traj = integrate(&sys, &vec![c; sys.dim()], &u, t_end, h)?;
        let dev = traj.states.iter().flatten().fold(0.0_f64, |m, v| m.max((v - c).abs()));
        max_deviation.push(if traj.blew_up { f64::INFINITY } else { dev });
    }
    let sat = ScalarGain::SatExp;
    let composed_below_identity = LogGrid::default().samples().iter().all(|&s| {
        let t = Tracked::exact(s);
        sat.eval_tracked(sat.eval_tracked(t)).lt(s)
    });
    let mut two_system = BTreeMap::new();
    for alpha in ["linear(0.1)", "linear(0.01)", "power(0.1, 2)"] {
        let a = parse_gain(alpha)?;
        two_system.insert(alpha.to_owned(), check_two_system(&sat, &sat, &a, &a, LogGrid::default())?);
    }
    let reproduced = !ag_table.monotone_bound_exists
        && composed_below_identity
        && two_system.values().all(|v| v.status == Status::Violated);
    let exit = code(reproduced);
    let result = Ex42Result {
        variant: "ex42",
        c: &cs,
        ag_table: &ag_table,
        max_deviation,
        composed_below_identity,
        two_system,
        reproduced,
    };
    write_json(out, "ex42.json", "counterexample", exit, &result)?;
    Ok(exit)
}

#[derive(Serialize)]
struct Merged {
    artifacts: BTreeMap<String, Value>,
}

fn report(out: &Path) -> Outcome {
    let entries = std::fs::read_dir(out).map_err(|source| CliError::Io { path: out.to_path_buf(), source })?;
    let mut artifacts = BTreeMap::new();
    let mut exit = 0u8;
    for entry in entries {
        let path = entry.map_err(|source| CliError::Io { path: out.to_path_buf(), source })?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if !name.ends_with(".json") || name == MERGED {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a JSON artifact: {e}", path.display())))?;
        if let Some(c) = value.get("exit_code").and_then(Value::as_u64) {
            exit = exit.max(c.min(2) as u8);
        }
        artifacts.insert(name.trim_end_matches(".json").to_owned(), value);
    }
    if artifacts.is_empty() {
        return Err(CliError::Usage(format!("no JSON artifacts in {}", out.display())));
    }
    write_json(out, MERGED, "report", exit, &Merged { artifacts })?;
    Ok(exit)
}
