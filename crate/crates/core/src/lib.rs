//! Offline top-N recommender evaluation with configurable candidate sets.
//!
//! The crate covers the whole pipeline: loading interaction data
//! ([`corpus`]), user-partitioned splits ([`splitting`]), recommenders
//! ([`recommend`]), candidate-set strategies ([`candidates`]), ranking and
//! popularity metrics ([`metrics`]), synthetic complete-preference data
//! ([`simulate`]) and the two experiment drivers ([`experiment`]): a
//! strategy/decoy-size sweep over real data, and a repeated simulation that
//! measures how far observed metrics drift from their complete-data values.
//!
//! Data-parallel loops go through [`par`]; build without the default
//! `parallel` feature for a purely sequential binary.

pub mod candidates;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod par;
pub mod recommend;
pub mod rng;
pub mod sampling;
pub mod simulate;
pub mod splitting;

pub use error::{Error, Result};
