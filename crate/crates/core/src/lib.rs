//! Preference-data synthesis, reward modelling and evaluation for long-form
//! generation tasks.

pub mod annotation;
pub mod corpus;
pub mod eval;
pub mod generation;
pub mod judge;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod store;
