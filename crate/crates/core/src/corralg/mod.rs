//! Approximation pipeline for correlated stochastic orienteering: deadline
//! copies, knapsack deadline orienteering, the configuration LP, randomized
//! rounding and the end-to-end driver.

pub mod copies;
pub mod kdo;
pub mod lp;
pub mod rounding;
pub mod pipeline;
