//! Quadratic-manifold approximation of snapshot data.
//!
//! A snapshot matrix `S` (one state per column) is approximated on the set
//! `{ V z + Wbar h(z) }` where `V` has r orthonormal columns, `h` is the
//! condensed quadratic feature map, and `Wbar` weights the features. The
//! central fitting routine selects the columns of `V` greedily from the
//! left-singular vectors of `S` ([`greedy::greedy_fit`]); baselines keep the
//! leading r vectors ([`baselines::leading_fit`]) or optimize everything
//! jointly by alternating minimization ([`baselines::am_fit`]).
//!
//! Supporting modules: binary/CSV persistence ([`matrixio`]), thin SVD and
//! index bookkeeping ([`svdcore`]), the feature map ([`features`]), ridge
//! regression ([`ridge`]), linear and Gauss-Newton encoders ([`encoders`]),
//! error reports and correlation diagnostics ([`diagnostics`]), and
//! deterministic synthetic datasets ([`datagen`]).

pub mod baselines;
pub mod datagen;
pub mod diagnostics;
pub mod encoders;
pub mod error;
pub mod features;
pub mod greedy;
pub mod matrixio;
pub mod ridge;
pub mod svdcore;

pub use error::{ErrorClass, QmError, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
