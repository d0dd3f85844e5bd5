//! Project configuration: JSON schema, loading, and conversion into core
//! types with JSON-pointer diagnostics.

use std::path::Path;

use serde::Deserialize;
use serde_path_to_error::Segment;
use smallgain::conditions::SamplingPolicy;
use smallgain::gains::{parse_gain, ScalarGain, ScalingOperator};
use smallgain::linsys::{EnvelopeParams, LinearBlocksSpec};
use smallgain::network::GainMatrix;
use smallgain::sim::SystemSpec;
use smallgain::Error as CoreError;

use crate::CliError;

pub const SEED_ENV: &str = "SMALLGAIN_SEED";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    /// Row-major gain DSL strings, `null` for absent entries.
    #[serde(default)]
    pub gain_matrix: Option<Vec<Vec<Option<String>>>>,
    /// `α_i` for `D = diag(Id + α_i)`; defaults to `linear(0.1)`.
    #[serde(default)]
    pub scaling: Option<Vec<String>>,
    #[serde(default)]
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub lyapunov: Option<LyapunovConfig>,
    #[serde(default)]
    pub linear_blocks: Option<LinearBlocksSpec>,
    #[serde(default)]
    pub analysis: Analysis,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovConfig {
    /// `V_i` over the system's state names.
    pub functions: Vec<String>,
    /// Linear Lyapunov gains; defaults to the gain matrix coefficients.
    #[serde(default)]
    pub gains: Option<Vec<Vec<f64>>>,
    /// `χ` in the decrease condition `V(x) ≥ χ(|u|)`.
    #[serde(default)]
    pub u_gain: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Analysis {
    pub seed: u64,
    pub directions: Option<usize>,
    pub magnitudes: usize,
    pub starts: usize,
    pub kmax: usize,
    pub tol: f64,
    pub t_end: f64,
    pub h: f64,
    /// Number of random initial states for simulations.
    pub sims: usize,
    /// Constant input levels for an asymptotic-gain table.
    pub levels: Option<Vec<f64>>,
    pub decrease_tol: f64,
    pub envelope: EnvelopeParams,
}

impl Default for Analysis {
    fn default() -> Self {
        let p = SamplingPolicy::default();
        Self {
            seed: p.seed,
            directions: p.directions,
            magnitudes: p.magnitudes,
            starts: p.starts,
            kmax: p.kmax,
            tol: p.tol,
            t_end: 50.0,
            h: 0.01,
            sims: 10,
            levels: None,
            decrease_tol: 1e-8,
            envelope: EnvelopeParams::default(),
        }
    }
}

impl Analysis {
    pub fn policy(&self) -> SamplingPolicy {
        SamplingPolicy {
            directions: self.directions,
            magnitudes: self.magnitudes,
            starts: self.starts,
            kmax: self.kmax,
            tol: self.tol,
            seed: self.seed,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: &str| Err(CliError::config(format!("/analysis/{field}"), msg));
        if self.directions == Some(0) {
            return bad("directions", "must be at least 1");
        }
        if self.magnitudes < 2 {
            return bad("magnitudes", "must be at least 2");
        }
        if self.starts == 0 {
            return bad("starts", "must be at least 1");
        }
        if self.kmax == 0 {
            return bad("kmax", "must be at least 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol", "must be positive");
        }
        if !(self.h > 0.0) {
            return bad("h", "must be positive");
        }
        if !(self.t_end >= self.h) {
            return bad("t_end", "must be at least h");
        }
        if !(self.decrease_tol >= 0.0) {
            return bad("decrease_tol", "must be nonnegative");
        }
        if let Some(levels) = &self.levels {
            if let Some(k) = levels.iter().position(|v| !(*v >= 0.0)) {
                return bad(&format!("levels/{k}"), "must be nonnegative");
            }
        }
        if !(0.0..1.0).contains(&self.envelope.margin) {
            return bad("envelope/margin", "must lie in [0, 1)");
        }
        if self.envelope.grid < 2 {
            return bad("envelope/grid", "must be at least 2");
        }
        Ok(())
    }
}

impl ProjectConfig {
    /// Reads, parses and validates the config, then applies the seed
    /// override from the environment.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.analysis.seed = seed
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV}={seed:?} is not a nonnegative integer")))?;
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(e.path());
            CliError::config(pointer, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.analysis.validate()?;
        let n = match &self.gain_matrix {
            Some(_) => Some(self.gain_matrix()?.dim()),
            None => None,
        };
        if self.scaling.is_some() {
            let d = self.scaling(n.unwrap_or(0))?;
            if let Some(n) = n {
                if d.dim() != n {
                    return Err(CliError::config("/scaling", format!("expected {n} entries, got {}", d.dim())));
                }
            }
        }
        if let Some(sys) = &self.system {
            let built = smallgain::sim::NetworkSystem::parse(sys).map_err(|e| located(e, "/system"))?;
            if let Some(x0) = &sys.x0 {
                use smallgain::sim::VectorField;
                if x0.len() != built.dim() {
                    return Err(CliError::config("/system/x0", format!("expected {} entries, got {}", built.dim(), x0.len())));
                }
            }
        }
        if let Some(lb) = &self.linear_blocks {
            lb.build().map_err(|e| located(e, "/linear_blocks"))?;
        }
        if let Some(l) = &self.lyapunov {
            if let Some(g) = &l.u_gain {
                parse_gain(g).map_err(|e| CliError::config("/lyapunov/u_gain", e.to_string()))?;
            }
            if let Some(rows) = &l.gains {
                if rows.iter().any(|r| r.len() != rows.len()) {
                    return Err(CliError::config("/lyapunov/gains", "matrix must be square"));
                }
                if rows.iter().flatten().any(|v| !(*v >= 0.0)) {
                    return Err(CliError::config("/lyapunov/gains", "entries must be nonnegative"));
                }
            }
            if let Some(sys) = &self.system {
                let names = state_names(sys);
                let vars: Vec<&str> = names.iter().map(String::as_str).collect();
                let spec = smallgain::lyapunov::LyapunovSpec::parse(&l.functions, &vars).map_err(|e| located(e, "/lyapunov"))?;
                if spec.dim() != sys.subsystems.len() {
                    let msg = format!("expected one function per subsystem ({}), got {}", sys.subsystems.len(), spec.dim());
                    return Err(CliError::config("/lyapunov/functions", msg));
                }
            }
        }
        Ok(())
    }

    pub fn gain_matrix(&self) -> Result<GainMatrix, CliError> {
        let Some(rows) = &self.gain_matrix else {
            return Err(CliError::config("/gain_matrix", "required by this command but absent"));
        };
        let n = rows.len();
        let mut parsed = Vec::with_capacity(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(CliError::config(format!("/gain_matrix/{i}"), format!("expected {n} entries, got {}", row.len())));
            }
            let mut out = Vec::with_capacity(n);
            for (j, e) in row.iter().enumerate() {
                let g = match e {
                    Some(text) => Some(parse_gain(text).map_err(|err| CliError::config(format!("/gain_matrix/{i}/{j}"), err.to_string()))?),
                    None => None,
                };
                out.push(g);
            }
            parsed.push(out);
        }
        GainMatrix::new(parsed).map_err(|e| located(e, "/gain_matrix"))
    }

    pub fn scaling(&self, n: usize) -> Result<ScalingOperator, CliError> {
        let alphas = match &self.scaling {
            Some(list) => list
                .iter()
                .enumerate()
                .map(|(i, s)| parse_gain(s).map_err(|e| CliError::config(format!("/scaling/{i}"), e.to_string())))
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![ScalarGain::linear(0.1); n],
        };
        ScalingOperator::new(alphas).map_err(|e| located(e, "/scaling"))
    }
}

pub fn state_names(sys: &SystemSpec) -> Vec<String> {
    sys.subsystems
        .iter()
        .flat_map(|s| &s.equations)
        .filter_map(|eq| eq.split_once('=').map(|(lhs, _)| lhs.trim().trim_start_matches('d').to_owned()))
        .collect()
}

/// Converts a core error into a config error under `prefix`.
pub fn located(err: CoreError, prefix: &str) -> CliError {
    match err.at(prefix) {
        CoreError::Located { path, source } => CliError::config(path, source.to_string()),
        other => CliError::config(prefix, other.to_string()),
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}
