//! Artificial-earthquake generation and evaluation for dynamically adaptive
//! systems.
//!
//! The crate models a bounded environment ([`context`]), measures violent
//! variation in flows of environmental conditions ([`metric`]), tracks
//! pairwise value coverage ([`coverage`]), synthesizes earthquake-like flows
//! by two-level search ([`search`]), simulates a fuzzy-rule-driven adaptive
//! web server ([`policy`]) and scores flow suites by mutation analysis
//! ([`mutation`]).

pub mod context;
pub mod coverage;
pub mod error;
pub mod metric;
pub mod mutation;
pub mod policy;
pub mod search;

pub use error::{Error, Result};
