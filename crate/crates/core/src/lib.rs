//! Stability analysis for networks of interconnected input-to-state stable
//! (ISS) subsystems.
//!
//! The crate represents nonlinear gain matrices as monotone operators on the
//! nonnegative orthant, decides or refutes the network small-gain conditions,
//! builds max-form Lyapunov functions from weight vectors, and cross-checks
//! every verdict by simulating the underlying dynamics.
//!
//! Module map:
//!
//! - [`gains`]: class-K comparison functions, their DSL and algebra.
//! - [`network`]: the gain matrix operator, graph structure, spectral radius.
//! - [`conditions`]: small-gain checks, the constructive bound, reports.
//! - [`dynamics`]: the discrete monotone system `s_{k+1} = Γ(s_k)`.
//! - [`lyapunov`]: weight vectors, max-form Lyapunov functions, Ω regions.
//! - [`linsys`]: gain extraction from block linear systems.
//! - [`sim`]: ODE simulation, asymptotic gain estimation, ISS residuals.
//! - [`expr`]: the arithmetic expression language used by [`sim`] and
//!   [`lyapunov`].

pub mod conditions;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod gains;
pub mod linsys;
pub mod lyapunov;
pub mod network;
pub mod sim;

pub use error::{Error, Result};
pub use nalgebra;

/// Max-norm of a vector; zero for an empty slice.
pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Euclidean norm of a vector.
pub fn euclid_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Serde adapter writing a dense matrix as a list of rows.
pub(crate) mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
    }
}
