//! Numerical laboratory for counting integer points `v` with `(F, M)(v)` in a
//! target box, where `F` is a polynomial and `M` a system of linear forms in
//! the orbit of a normal pair `(F₀, M₀)`.
//!
//! The crate provides exact counting (a full-scan oracle and a pruned
//! enumerator), Monte Carlo estimates of the region volume and of the
//! main-term constant, lattice discrepancy, effective approximation queries,
//! and the experiment drivers behind the `formlab` command-line tool.

pub mod discrepancy;
pub mod enumeration;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod forms;
pub mod sampling;
pub mod solver;
pub mod volume;

pub use error::{Error, Result};
pub use forms::{
    build_quadratic_normal_form, eval_normal, pull_back_box, validate_spec, Ends, EvalScratch, Monomial, NormSpec,
    PulledBackRegion, QuadraticSignatureSpec, SystemInstance, SystemSpec, TargetBox, ValidationReport,
};
