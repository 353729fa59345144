//! Randomized rounding of an equalized configuration LP solution into a
//! non-adaptive policy.

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::lp::{prefix_cap, ConfigLpSolution, LpProblem};
use crate::field::{rational_to_f64, Rational};
use crate::policy::NaPolicy;

/// Denominator used when the attempt probability is irrational.
const PROB_SCALE: u64 = 1 << 32;

/// Job sets (indices into each segment's copies) after the first four
/// rounding steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTrace {
    /// Column picked per segment; `None` is the direct portal edge.
    pub chosen: Vec<Option<usize>>,
    pub after_dedup: Vec<Vec<usize>>,
    /// True when the prefix-load check discarded everything.
    pub emptied: bool,
    pub after_load_check: Vec<Vec<usize>>,
    pub after_deadline: Vec<Vec<usize>>,
}

/// `max(2, ln L / ln ln L)` for `L >= 3`, else 2.
pub fn load_factor(levels: usize) -> f64 {
    if levels >= 3 {
        let l = levels as f64;
        (l.ln() / l.ln().ln()).max(2.0)
    } else {
        2.0
    }
}

/// Attempt probability `min(1/(4K), ln ln L / (4K ln L))` for `L >= 3`,
/// else `1/(4K)`. Irrational values are rounded down to a multiple of
/// 2^-32.
pub fn attempt_probability(k: &Rational, levels: usize) -> Rational {
    let base = (k * Rational::from_integer(BigInt::from(4))).recip();
    if levels < 3 {
        return base;
    }
    let l = levels as f64;
    let factor = l.ln().ln() / l.ln();
    if factor >= 1.0 {
        return base;
    }
    let scaled = (rational_to_f64(&base) * factor * PROB_SCALE as f64).floor() as i64;
    Rational::new(BigInt::from(scaled), BigInt::from(PROB_SCALE))
}

/// Number of bands `L` the problem was built for, `ceil(log2 B)`.
fn levels(p: &LpProblem) -> usize {
    p.segments().saturating_sub(1)
}

/// The first four steps: pick a column per segment, drop vertices used by
/// several segments, discard everything if a prefix load exceeds its
/// inflated capacity, and keep one copy per vertex.
pub fn round_trace(p: &LpProblem, sol: &ConfigLpSolution, seed: u64) -> RoundTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nseg = p.segments();
    let mut chosen = Vec::with_capacity(nseg);
    for j in 0..nseg {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = None;
        for (ci, c) in sol.columns.iter().enumerate().filter(|(_, c)| c.segment == j) {
            acc += c.weight / 2.0;
            if u < acc {
                pick = Some(ci);
                break;
            }
        }
        chosen.push(pick);
    }
    let sets: Vec<Vec<usize>> = chosen
        .iter()
        .map(|c| c.map(|ci| sol.columns[ci].jobs.clone()).unwrap_or_default())
        .collect();

    let mut segs_of = vec![0usize; p.n()];
    for (j, s) in sets.iter().enumerate() {
        let mut vs: Vec<usize> = s.iter().map(|&k| p.kdos[j].jobs[k].vertex).collect();
        vs.sort_unstable();
        vs.dedup();
        for v in vs {
            segs_of[v] += 1;
        }
    }
    let after_dedup: Vec<Vec<usize>> = sets
        .iter()
        .enumerate()
        .map(|(j, s)| s.iter().copied().filter(|&k| segs_of[p.kdos[j].jobs[k].vertex] <= 1).collect())
        .collect();

    let factor = load_factor(levels(p));
    let emptied = (0..nseg).any(|h| {
        let load: Rational = (0..=h)
            .flat_map(|l| after_dedup[l].iter().map(move |&k| (l, k)))
            .map(|(l, k)| p.mu[p.kdos[l].jobs[k].vertex][h].clone())
            .sum();
        rational_to_f64(&load) > factor * rational_to_f64(&prefix_cap(&p.k, h as u32))
    });
    let after_load_check = if emptied { vec![Vec::new(); nseg] } else { after_dedup.clone() };

    let after_deadline = after_load_check
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let jobs = &p.kdos[j].jobs;
            let mut keep: Vec<usize> = Vec::new();
            for &k in s {
                match keep.iter_mut().find(|x| jobs[**x].vertex == jobs[k].vertex) {
                    Some(x) => {
                        if jobs[k].deadline < jobs[*x].deadline {
                            *x = k;
                        }
                    }
                    None => keep.push(k),
                }
            }
            keep.sort_unstable();
            keep
        })
        .collect();

    RoundTrace {
        chosen,
        after_dedup,
        emptied,
        after_load_check,
        after_deadline,
    }
}

/// Full rounding. The route follows the chosen paths (or the direct portal
/// edges) with repeated vertices removed; surviving copies are attempted
/// with the fixed attempt probability, every other vertex is passed
/// through.
pub fn round_lp(p: &LpProblem, sol: &ConfigLpSolution, seed: u64) -> (NaPolicy<Rational>, RoundTrace) {
    let trace = round_trace(p, sol, seed);
    let q = attempt_probability(&p.k, levels(p));
    let mut route: Vec<usize> = Vec::new();
    let mut attempt: Vec<bool> = Vec::new();
    let root = p.kdos.first().map(|k| k.start);
    for (j, kdo) in p.kdos.iter().enumerate() {
        let path: Vec<usize> = match (trace.emptied, trace.chosen[j]) {
            (false, Some(ci)) => sol.columns[ci].vertices.clone(),
            _ => vec![kdo.start, kdo.end],
        };
        let tried: Vec<usize> = trace.after_deadline[j].iter().map(|&k| kdo.jobs[k].vertex).collect();
        for &v in &path {
            let wanted = tried.contains(&v);
            match route.iter().position(|&u| u == v) {
                Some(i) if wanted && !attempt[i] => {
                    // Move the vertex to the occurrence where it is attempted.
                    route.remove(i);
                    attempt.remove(i);
                    route.push(v);
                    attempt.push(true);
                }
                Some(_) => {}
                None => {
                    route.push(v);
                    attempt.push(wanted);
                }
            }
        }
    }
    // The walk starts at the root, so a leading unattempted root is implicit.
    if route.first().copied() == root && attempt.first() == Some(&false) {
        route.remove(0);
        attempt.remove(0);
    }
    let attempt_prob = attempt
        .into_iter()
        .map(|a| if a { q.clone() } else { Rational::zero() })
        .collect();
    (NaPolicy { route, attempt_prob }, trace)
}

/// True when `q` lies in `[0, 1]`.
pub fn is_probability(q: &Rational) -> bool {
    *q >= Rational::zero() && *q <= Rational::one()
}
