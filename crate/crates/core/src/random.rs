//! Seeded random instances for tests, acceptance runs and the self-test.

use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::Rational;
use crate::instance::{ExactInt, Instance, JobDist, Metric, OrderConstraint, Outcome};

/// Knobs for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct RandomSpec {
    pub n: usize,
    pub budget: u64,
    /// Coordinates are drawn from `0..=grid` in both axes; distances are L1.
    pub grid: u64,
    pub max_outcomes: usize,
    pub max_reward: u64,
    /// Largest job size as a fraction `1/size_div` of the budget.
    pub size_div: u64,
}

impl RandomSpec {
    pub fn small(n: usize, budget: u64) -> Self {
        RandomSpec {
            n,
            budget,
            grid: 4,
            max_outcomes: 3,
            max_reward: 9,
            size_div: 2,
        }
    }
}

fn weights_to_probs(w: &[u64]) -> Vec<Rational> {
    let total: u64 = w.iter().sum();
    w.iter()
        .map(|&x| Rational::new(BigInt::from(x), BigInt::from(total)))
        .collect()
}

/// Correlated instance on an L1 grid metric with table jobs.
pub fn random_instance(spec: RandomSpec, seed: u64) -> Instance<Rational> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<(u64, u64)> = (0..spec.n)
        .map(|_| (rng.gen_range(0..=spec.grid), rng.gen_range(0..=spec.grid)))
        .collect();
    let dist = pts
        .iter()
        .map(|a| {
            pts.iter()
                .map(|b| ExactInt::from(a.0.abs_diff(b.0) + a.1.abs_diff(b.1)))
                .collect()
        })
        .collect();
    let max_size = (spec.budget / spec.size_div.max(1)).max(1);
    let jobs = (0..spec.n)
        .map(|_| {
            let k = rng.gen_range(1..=spec.max_outcomes.max(1));
            let w: Vec<u64> = (0..k).map(|_| rng.gen_range(1..=4)).collect();
            let outcomes = weights_to_probs(&w)
                .into_iter()
                .map(|prob| Outcome {
                    prob,
                    size: ExactInt::from(rng.gen_range(0..=max_size)),
                    reward: Rational::from_integer(BigInt::from(rng.gen_range(0..=spec.max_reward))),
                })
                .collect();
            JobDist::table(outcomes)
        })
        .collect();
    Instance::new(
        Metric::Matrix(dist),
        jobs,
        0,
        ExactInt::from(spec.budget),
        OrderConstraint::None,
    )
    .expect("random instance is well formed")
}

/// A random table job with `1..=max_outcomes` outcomes and sizes up to
/// `max_size`.
pub fn random_table_job(rng: &mut impl Rng, max_outcomes: usize, max_size: u64) -> JobDist<Rational> {
    let k = rng.gen_range(1..=max_outcomes.max(1));
    let w: Vec<u64> = (0..k).map(|_| rng.gen_range(1..=9)).collect();
    JobDist::table(
        weights_to_probs(&w)
            .into_iter()
            .map(|prob| Outcome {
                prob,
                size: ExactInt::from(rng.gen_range(0..=max_size)),
                reward: Rational::from_integer(BigInt::from(rng.gen_range(0..=20u32))),
            })
            .collect(),
    )
}
