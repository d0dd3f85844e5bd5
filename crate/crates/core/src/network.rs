//! The gain matrix as a monotone operator on the nonnegative orthant, and the
//! graph structure of the interconnection.
//!
//! Edges are oriented along the matrix: `i → j` whenever `γ_ij` is present.
//! Strong connectivity and cyclicity do not depend on that choice; the
//! condensation order is reversed under transposition.

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gains::{parse_gain, ScalarGain, ScalingOperator, Tracked};

/// Default tolerance for [`spectral_radius`].
pub const DEFAULT_RHO_TOL: f64 = 1e-10;
const MAX_POWER_ITERATIONS: usize = 100_000;

/// `Γ = (γ_ij)`: an `n × n` grid of optional gains, absent meaning `γ_ij ≡ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    n: usize,
    entries: Vec<Option<ScalarGain>>,
    linear: Option<DMatrix<f64>>,
    diagonal_relaxed: bool,
}

impl GainMatrix {
    /// Builds a gain matrix with the zero-diagonal requirement.
    pub fn new(rows: Vec<Vec<Option<ScalarGain>>>) -> Result<Self> {
        Self::build(rows, false)
    }

    /// Builds a gain matrix that may carry diagonal entries. Used for the
    /// monotone-dynamics counterexample; the relaxation is recorded in
    /// [`GainMatrix::diagonal_relaxed`].
    pub fn with_diagonal(rows: Vec<Vec<Option<ScalarGain>>>) -> Result<Self> {
        Self::build(rows, true)
    }

    fn build(rows: Vec<Vec<Option<ScalarGain>>>, diagonal_relaxed: bool) -> Result<Self> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: row.len() });
            }
            for (j, entry) in row.into_iter().enumerate() {
                if let Some(g) = &entry {
                    if i == j && !diagonal_relaxed {
                        return Err(Error::InvalidMatrix(format!("diagonal entry ({}, {}) must be absent", i + 1, j + 1)));
                    }
                    let report = g.validate_default();
                    if !report.is_class_k() {
                        return Err(Error::InvalidMatrix(format!(
                            "entry ({}, {}) = {g} is not class-K: {report:?}",
                            i + 1,
                            j + 1
                        )));
                    }
                }
                entries.push(entry);
            }
        }
        let linear = entries
            .iter()
            .map(|e| e.as_ref().map_or(Some(0.0), ScalarGain::as_linear))
            .collect::<Option<Vec<f64>>>()
            .map(|v| DMatrix::from_row_slice(n, n, &v));
        Ok(Self { n, entries, linear, diagonal_relaxed })
    }

    /// Linear gains `γ_ij(t) = m_ij·t`; zero coefficients become absent entries.
    pub fn from_linear(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
        }
        let n = m.nrows();
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let a = m[(i, j)];
                        if a.is_nan() || a < 0.0 {
                            Err(Error::InvalidMatrix(format!("entry ({}, {}) = {a} is negative", i + 1, j + 1)))
                        } else if a == 0.0 {
                            Ok(None)
                        } else {
                            Ok(Some(ScalarGain::linear(a)))
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    /// Parses a grid of gain-DSL strings; `None` marks an absent entry.
    pub fn parse<S: AsRef<str>>(rows: &[Vec<Option<S>>]) -> Result<Self> {
        let parsed = rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| e.as_ref().map(|s| parse_gain(s.as_ref())).transpose())
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(parsed)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> Option<&ScalarGain> {
        self.entries[i * self.n + j].as_ref()
    }

    pub fn row(&self, i: usize) -> &[Option<ScalarGain>] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// Cached coefficients when every present entry is linear.
    pub fn linear_values(&self) -> Option<&DMatrix<f64>> {
        self.linear.as_ref()
    }

    pub fn is_linear(&self) -> bool {
        self.linear.is_some()
    }

    pub fn diagonal_relaxed(&self) -> bool {
        self.diagonal_relaxed
    }

    /// `Γ(s)_i = Σ_j γ_ij(s_j)` over present entries.
    pub fn apply(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_input(s)?;
        Ok(self.apply_unchecked(s))
    }

    pub(crate) fn apply_unchecked(&self, s: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(s)
                    .filter_map(|(g, &x)| g.as_ref().map(|g| g.value(x)))
                    .sum()
            })
            .collect()
    }

    /// [`GainMatrix::apply`] carrying strictness records; see [`Tracked`].
    pub fn apply_tracked(&self, s: &[Tracked]) -> Vec<Tracked> {
        (0..self.n)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(s)
                    .filter_map(|(g, &x)| g.as_ref().map(|g| g.eval_tracked(x)))
                    .fold(Tracked::exact(0.0), |acc, y| Tracked { value: acc.value + y.value, below: acc.below || y.below })
            })
            .collect()
    }

    /// `(Γ ∘ D)(s)`.
    pub fn apply_scaled(&self, d: &ScalingOperator, s: &[f64]) -> Result<Vec<f64>> {
        self.check_input(s)?;
        if d.dim() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: d.dim() });
        }
        Ok(self.apply_unchecked(&d.apply(s)?))
    }

    /// `Γ · diag(1 + a_i)` when both `Γ` and `D` are linear.
    pub fn scaled_linear(&self, d: &ScalingOperator) -> Option<DMatrix<f64>> {
        let m = self.linear.as_ref()?;
        let a = d.linear_coefficients()?;
        let mut out = m.clone();
        for (j, aj) in a.iter().enumerate() {
            out.column_mut(j).scale_mut(1.0 + aj);
        }
        Some(out)
    }

    /// Boolean adjacency, `adj[i][j]` iff `γ_ij` is present.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        (0..self.n).map(|i| self.row(i).iter().map(Option::is_some).collect()).collect()
    }

    pub fn analyze_structure(&self) -> GraphStructure {
        analyze_structure(&self.adjacency())
    }

    fn check_input(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: s.len() });
        }
        if let Some(x) = s.iter().find(|x| x.is_nan() || **x < 0.0) {
            return Err(Error::Domain(format!("gain matrix applied to a vector with component {x}")));
        }
        Ok(())
    }
}

/// Strongly connected components, irreducibility and cyclic structure of a
/// digraph on `n` vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStructure {
    /// Components, each sorted, ordered by smallest vertex.
    pub scc_partition: Vec<Vec<usize>>,
    pub is_irreducible: bool,
    /// Index of imprimitivity; present when irreducible.
    pub cyclicity: Option<usize>,
    /// Vertex order grouping the cyclic classes; present when irreducible.
    pub cyclic_permutation: Option<Vec<usize>>,
    /// Indices into `scc_partition`, sources first.
    pub condensation_order: Vec<usize>,
}

impl GraphStructure {
    pub fn is_primitive(&self) -> bool {
        self.is_irreducible && self.cyclicity == Some(1)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// SCC partition by depth-first search (Tarjan), cyclicity as the gcd of
/// level discrepancies over the edges of a breadth-first layering.
pub fn analyze_structure(adj: &[Vec<bool>]) -> GraphStructure {
    let n = adj.len();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (i, row) in adj.iter().enumerate() {
        for (j, &e) in row.iter().enumerate() {
            if e {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    // tarjan_scc yields components in reverse topological order
    let mut sccs: Vec<Vec<usize>> = tarjan_scc(&graph)
        .into_iter()
        .rev()
        .map(|c| {
            let mut c: Vec<usize> = c.into_iter().map(|v| v.index()).collect();
            c.sort_unstable();
            c
        })
        .collect();
    let topo_firsts: Vec<usize> = sccs.iter().map(|c| c[0]).collect();
    sccs.sort_by_key(|c| c[0]);
    let condensation_order = topo_firsts
        .iter()
        .map(|first| sccs.iter().position(|c| c[0] == *first).unwrap_or(0))
        .collect();

    let is_irreducible = n <= 1 || sccs.len() == 1;
    let (cyclicity, cyclic_permutation) = if is_irreducible {
        let (nu, perm) = cyclic_structure(adj);
        (Some(nu), Some(perm))
    } else {
        (None, None)
    };

    GraphStructure { scc_partition: sccs, is_irreducible, cyclicity, cyclic_permutation, condensation_order }
}

fn cyclic_structure(adj: &[Vec<bool>]) -> (usize, Vec<usize>) {
    let n = adj.len();
    if n == 0 {
        return (1, Vec::new());
    }
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if adj[u][v] && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut nu = 0;
    for u in 0..n {
        for v in 0..n {
            if adj[u][v] {
                nu = gcd(nu, (level[u] + 1).abs_diff(level[v]));
            }
        }
    }
    // no edges at all only happens for the n = 1 convention
    let nu = nu.max(1);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by_key(|&v| (level[v] % nu, v));
    (nu, perm)
}

/// Result of [`spectral_radius`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub rho: f64,
    /// Perron vector (max-norm 1) when the matrix is irreducible.
    pub perron: Option<Vec<f64>>,
    /// Perron vector of a diagonal block attaining `rho`, zero elsewhere,
    /// normalized to max-norm 1. Satisfies `M v ≥ rho_lower · v`.
    pub dominant_vector: Vec<f64>,
    /// Collatz–Wielandt lower bound on the dominant block's radius.
    pub rho_lower: f64,
    pub iterations: usize,
}

/// Spectral radius of a nonnegative matrix by power iteration on `B + I`
/// for each irreducible diagonal block `B` of the condensation.
///
/// Each block stops once the Collatz–Wielandt bounds
/// `min_i (Bx)_i/x_i ≤ ρ(B) ≤ max_i (Bx)_i/x_i` are within `2·tol`.
pub fn spectral_radius(m: &DMatrix<f64>, tol: f64) -> Result<SpectralResult> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    if let Some(x) = m.iter().find(|x| x.is_nan() || **x < 0.0) {
        return Err(Error::InvalidMatrix(format!("negative entry {x} in a nonnegative matrix")));
    }
    let n = m.nrows();
    let adj: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)] > 0.0).collect()).collect();
    let structure = analyze_structure(&adj);

    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut iterations = 0;
    for block in &structure.scc_partition {
        let (rho, lower, v, its) = block_radius(m, block, tol)?;
        iterations += its;
        if best.as_ref().is_none_or(|(r, _, _)| rho > *r) {
            let mut full = vec![0.0; n];
            for (k, &i) in block.iter().enumerate() {
                full[i] = v[k];
            }
            best = Some((rho, lower, full));
        }
    }
    let (rho, rho_lower, dominant_vector) = best.unwrap_or((0.0, 0.0, Vec::new()));
    let perron = (structure.is_irreducible && n > 0).then(|| dominant_vector.clone());
    Ok(SpectralResult { rho, perron, dominant_vector, rho_lower, iterations })
}

fn block_radius(m: &DMatrix<f64>, block: &[usize], tol: f64) -> Result<(f64, f64, Vec<f64>, usize)> {
    let k = block.len();
    if k == 1 {
        let r = m[(block[0], block[0])];
        return Ok((r, r, vec![1.0], 0));
    }
    let b = DMatrix::from_fn(k, k, |r, c| m[(block[r], block[c])] + if r == c { 1.0 } else { 0.0 });
    let mut x = nalgebra::DVector::from_element(k, 1.0);
    for it in 1..=MAX_POWER_ITERATIONS {
        let y = &b * &x;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for i in 0..k {
            let ratio = y[i] / x[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        if hi - lo <= 2.0 * tol {
            let rho = 0.5 * (lo + hi) - 1.0;
            let scale = x.amax();
            return Ok((rho.max(0.0), (lo - 1.0).max(0.0), x.iter().map(|v| v / scale).collect(), it));
        }
        let scale = y.amax();
        x = y / scale;
    }
    Err(Error::NonConvergence { what: "spectral_radius", iterations: MAX_POWER_ITERATIONS, last: x.iter().copied().collect() })
}
