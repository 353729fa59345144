//! Stochastic orienteering: exact lower-bound constructions for the
//! adaptivity gap, adaptive and non-adaptive policy evaluation, gap search,
//! the adaptive-to-non-adaptive reduction and the correlated approximation
//! pipeline.

pub mod field;
pub mod instance;
pub mod lowerbound;
pub mod policy;
pub mod gapsearch;
pub mod random;
pub mod reduce;
pub mod report;
pub mod corralg;
pub mod selftest;

pub use field::{Field, QuadSurd, Rational};
pub use instance::{
    validate_instance, ExactInt, Instance, InstanceError, JobDist, JobKind, Metric,
    OrderConstraint, Outcome, ValidationReport, Violation,
};
