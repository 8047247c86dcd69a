//! Derivative-free trust-region optimization with quadratic interpolation
//! and neural-network surrogate models.

pub mod eval;
pub mod interp;
pub mod linalg;
pub mod neural;
pub mod newton_model;
pub mod problems;
pub mod sampling;
pub mod tr_blackbox;
pub mod tr_quadratic;
pub mod trs;
pub mod trust_region;
