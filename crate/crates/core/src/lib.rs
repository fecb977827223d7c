//! Discrete-time optimal stopping on finite trees and lattices.
//!
//! Build a [`model::Model`] (binomial, CRR or from a TOML spec), attach a
//! [`reward::RewardFamily`], and [`snell::compute`] the envelope by backward
//! induction. [`stopping`] extracts the minimal and maximal optimal stopping
//! times and the ε-optimal rules; [`oracle`] checks all of it by enumerating
//! every stopping rule of a small tree; [`lsmc`] is the regression Monte
//! Carlo counterpart for GBM.
//!
//! Every numeric type is generic over [`scalar::Scalar`]: `Rational` for exact
//! results, `f64` for large lattices.
//!
//! ```
//! use optstop::model::{build_binomial, ModelKind, StoppingRule};
//! use optstop::reward::put;
//! use optstop::scalar::ratio;
//! use optstop::snell::compute;
//! use optstop::stopping::{evaluate, minimal_optimal};
//!
//! let m = build_binomial(ratio(4, 1), ratio(2, 1), ratio(1, 2), ratio(1, 2), 2, 2.0, ModelKind::ExactTree)?;
//! let phi = put(&m, ratio(5, 1))?;
//! let env = compute(&m, &phi)?;
//! assert_eq!(env.root_value(), &ratio(7, 4));
//!
//! let root = StoppingRule::stop_at_root(&m);
//! let star = minimal_optimal(&m, &env, &phi, &root)?;
//! assert!(evaluate(&m, &star, &phi, &env, &root)?.is_optimal());
//! # Ok::<(), optstop::Error>(())
//! ```

pub mod cli;
pub mod config;
pub mod error;
pub mod lsmc;
pub mod model;
pub mod oracle;
pub mod reward;
pub mod scalar;
pub mod snell;
pub mod stopping;

pub use error::{Error, Result};
