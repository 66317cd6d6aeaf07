//! Crowd-navigation training laboratory.
//!
//! A 2-D crossing world with reciprocal-collision-avoidance obstacles, four
//! environment-state encoders (relational graph and three attention variants),
//! and a discrete soft actor-critic trainer, plus the evaluation and
//! verification harness driving them.
//!
//! The numeric core ([`diffcore`], [`orca`], [`vec2`]) is generic over the
//! scalar type; everything above it runs on the crate-wide [`scalar::Scalar`]
//! alias (`f64`).

pub mod diffcore;
pub mod dsac;
pub mod encoders;
pub mod harness;
pub mod orca;
pub mod scalar;
pub mod simulator;
pub mod vec2;

pub use scalar::{Real, Scalar};
pub use vec2::Vec2;

/// 2-D vector in the concrete scalar type.
pub type Vec2f = Vec2<Scalar>;
