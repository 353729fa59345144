//! End-to-end driver: guess portals and segment lengths, build the KDO
//! instances, solve the configuration LP, round and evaluate exactly.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::copies::copies;
use super::kdo::{CopyJob, KdoError, KdoInstance, KdoMode};
use super::lp::{equalize_xy, prefix_cap, solve_config_lp, LpError, LpMode, LpProblem};
use super::rounding::round_lp;
use crate::field::{pow2, rational_to_f64, Rational};
use crate::gapsearch::{optimal_adaptive_dp, DP_MAX_BUDGET, DP_MAX_VERTICES};
use crate::instance::Instance;
use crate::policy::{eval_na_exact, NaPolicy, PolicyError};
use crate::reduce::{run_reduce, StarParams};

pub const ENUMERATE_MAX_VERTICES: usize = 5;
pub const ENUMERATE_MAX_LEVELS: u32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Kdo(#[from] KdoError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("bad guess: {0}")]
    BadGuess(String),
    #[error("instance too large: {0}")]
    TooLarge(String),
}

/// Portals `v_0..v_L` and segment length bounds `D_0..D_L`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Guess {
    pub portals: Vec<usize>,
    pub lengths: Vec<u64>,
}

fn small_budget(inst: &Instance<Rational>) -> Result<u64, PipelineError> {
    inst.budget()
        .to_u64()
        .filter(|&b| b <= 1 << 20)
        .ok_or_else(|| PipelineError::TooLarge(format!("budget {}", inst.budget())))
}

/// One KDO instance per band. Segment `j` runs from `v_{j-1}` (the root for
/// `j = 0`) to `v_j` within `D_j`; vertex `v` gets copies of the curve
/// `d -> eta_v(B - sum_{i<j} D_i - d - 2^j + 1)` on `[0, B]`, each of
/// knapsack size `mu^j_v`, with capacity `(K + 1) 2^j`.
pub fn build_kdo_instances(inst: &Instance<Rational>, guess: &Guess, k: &Rational) -> Result<Vec<KdoInstance>, PipelineError> {
    let bands = inst.max_band() as usize + 1;
    if guess.portals.len() != bands || guess.lengths.len() != bands {
        return Err(PipelineError::BadGuess(format!("expected {bands} portals and lengths")));
    }
    if let Some(&v) = guess.portals.iter().find(|&&v| v >= inst.n()) {
        return Err(PipelineError::BadGuess(format!("portal {v} out of range")));
    }
    let b = small_budget(inst)?;
    let dist = inst
        .small_dist_matrix()
        .ok_or_else(|| PipelineError::TooLarge("distances".into()))?;
    let mut out = Vec::with_capacity(bands);
    let mut offset: u64 = 0;
    for j in 0..bands {
        let band = j as u32;
        let mut jobs = Vec::new();
        for v in 0..inst.n() {
            let job = inst.job(v);
            let curve: Vec<Rational> = (0..=b)
                .map(|d| {
                    let arg = BigInt::from(b) - BigInt::from(offset) - BigInt::from(d) - BigInt::from(pow2(band)) + 1;
                    job.eta(&arg)
                })
                .collect();
            let ksize = job.capped_mean(band);
            for d in copies(&curve) {
                jobs.push(CopyJob {
                    vertex: v,
                    band,
                    deadline: d as u64,
                    reward: curve[d].clone(),
                    ksize: ksize.clone(),
                });
            }
        }
        out.push(KdoInstance {
            band,
            start: if j == 0 { inst.root() } else { guess.portals[j - 1] },
            end: guess.portals[j],
            length_bound: guess.lengths[j],
            capacity: prefix_cap(k, band),
            jobs,
            dist: dist.clone(),
        });
        offset = offset.saturating_add(guess.lengths[j]);
    }
    Ok(out)
}

/// How guesses are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Scale {
    /// Every portal tuple with every achievable length vector.
    Enumerate,
    /// Portals from the reduction of the optimal adaptive tree plus random
    /// perturbations.
    Sampled { guesses: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct E2eParams {
    /// `None` uses the default `K` for the budget.
    pub k: Option<Rational>,
    pub eps: f64,
    pub lp_mode: LpMode,
    pub oracle: KdoMode,
    /// Rounding trials per guess.
    pub trials: u64,
    pub seed: u64,
    /// `None` enumerates when the instance is small enough.
    pub scale: Option<Scale>,
}

impl Default for E2eParams {
    fn default() -> Self {
        E2eParams {
            k: None,
            eps: 0.05,
            lp_mode: LpMode::Dense,
            oracle: KdoMode::Exact,
            trials: 5,
            seed: 0,
            scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuessResult {
    pub guess: Guess,
    pub lp_objective: f64,
    #[serde(serialize_with = "crate::report::ser_rational")]
    pub best_value: Rational,
    /// First trial reaching `best_value`.
    pub best_trial: Option<u64>,
    /// Trials whose prefix-load check discarded every job.
    pub emptied: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct E2eResult {
    pub scale: Scale,
    pub k: Rational,
    pub guesses: Vec<GuessResult>,
    pub best_guess: Option<usize>,
    pub policy: NaPolicy<Rational>,
    pub value: Rational,
    pub best_lp_objective: f64,
    /// Optimal adaptive value, when the instance is small enough for the DP.
    pub dp_value: Option<Rational>,
}

impl E2eResult {
    /// `dp_value / value`, infinite when the policy earns nothing.
    pub fn ratio(&self) -> Option<f64> {
        let dp = rational_to_f64(self.dp_value.as_ref()?);
        let v = rational_to_f64(&self.value);
        Some(if v > 0.0 { dp / v } else if dp > 0.0 { f64::INFINITY } else { 1.0 })
    }
}

/// Candidate `D` values for a segment from `a` to `b`:
/// `d(a, m) + d(m, b) + 2^e - 1` over midpoints `m` and `e <= L`.
fn length_candidates(dist: &[Vec<u64>], a: usize, b: usize, levels: u32, budget: u64) -> Vec<u64> {
    let mut out = BTreeSet::new();
    for (am, row) in dist[a].iter().zip(dist) {
        for e in 0..=levels {
            let d = am + row[b] + (1u64 << e) - 1;
            if d <= budget {
                out.insert(d);
            }
        }
    }
    out.into_iter().collect()
}

/// All portal tuples with their length vectors of total at most `B`.
pub fn enumerate_guesses(inst: &Instance<Rational>) -> Result<Vec<Guess>, PipelineError> {
    let b = small_budget(inst)?;
    let dist = inst
        .small_dist_matrix()
        .ok_or_else(|| PipelineError::TooLarge("distances".into()))?;
    let levels = inst.max_band();
    let bands = levels as usize + 1;
    let n = inst.n();
    let mut out = BTreeSet::new();
    let mut portals = vec![0usize; bands];
    loop {
        let mut lengths: Vec<Vec<u64>> = vec![Vec::new()];
        for j in 0..bands {
            let a = if j == 0 { inst.root() } else { portals[j - 1] };
            let cands = length_candidates(&dist, a, portals[j], levels, b);
            lengths = lengths
                .into_iter()
                .flat_map(|pre| {
                    let used: u64 = pre.iter().sum();
                    cands
                        .iter()
                        .filter(move |&&d| used + d <= b)
                        .map(move |&d| {
                            let mut v = pre.clone();
                            v.push(d);
                            v
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
        }
        for l in lengths {
            out.insert(Guess {
                portals: portals.clone(),
                lengths: l,
            });
        }
        // Next portal tuple in lexicographic order.
        let mut i = bands;
        loop {
            if i == 0 {
                return Ok(out.into_iter().collect());
            }
            i -= 1;
            portals[i] += 1;
            if portals[i] < n {
                break;
            }
            portals[i] = 0;
        }
    }
}

/// Reduction-based guess followed by `count - 1` seeded perturbations.
pub fn sampled_guesses(inst: &Instance<Rational>, k: &Rational, count: usize, seed: u64) -> Result<Vec<Guess>, PipelineError> {
    let b = small_budget(inst)?;
    let bands = inst.max_band() as usize + 1;
    let base = StarParams::new(inst, k.clone())
        .ok()
        .and_then(|params| run_reduce(inst, params).ok())
        .map(|r| Guess {
            portals: r.portals.locations.clone(),
            lengths: r
                .segments
                .iter()
                .map(|s| s.length_bound.to_u64().unwrap_or(b).min(b))
                .collect(),
        })
        .unwrap_or_else(|| {
            let mut lengths = vec![0; bands];
            lengths[0] = b;
            Guess {
                portals: vec![inst.root(); bands],
                lengths,
            }
        });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![base.clone()];
    let mut seen: BTreeSet<Guess> = out.iter().cloned().collect();
    let mut attempts = 0;
    while out.len() < count.max(1) && attempts < 100 * count {
        attempts += 1;
        let mut g = base.clone();
        let j = rng.gen_range(0..bands);
        if rng.gen_bool(0.5) {
            g.portals[j] = rng.gen_range(0..inst.n());
        } else {
            g.lengths[j] = rng.gen_range(0..=b);
        }
        if seen.insert(g.clone()) {
            out.push(g);
        }
    }
    Ok(out)
}

fn trial_seed(seed: u64, guess: usize, trial: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((guess as u64) << 24) ^ trial
}

struct Evaluated {
    result: GuessResult,
    policy: NaPolicy<Rational>,
}

fn run_guess(inst: &Instance<Rational>, guess: &Guess, gi: usize, k: &Rational, params: &E2eParams) -> Result<Evaluated, PipelineError> {
    let kdos = build_kdo_instances(inst, guess, k)?;
    let problem = LpProblem::new(inst, kdos, k.clone());
    let sol = solve_config_lp(&problem, params.eps, params.oracle, params.lp_mode)?;
    let sol = equalize_xy(&problem, &sol);
    let mut best: Option<(Rational, u64, NaPolicy<Rational>)> = None;
    let mut emptied = 0;
    for t in 0..params.trials {
        let (policy, trace) = round_lp(&problem, &sol, trial_seed(params.seed, gi, t));
        emptied += u64::from(trace.emptied);
        let value = eval_na_exact(inst, &policy)?;
        if best.as_ref().is_none_or(|b| value > b.0) {
            best = Some((value, t, policy));
        }
    }
    let (best_value, best_trial, policy) = match best {
        Some((v, t, p)) => (v, Some(t), p),
        None => (Rational::zero(), None, NaPolicy::empty()),
    };
    Ok(Evaluated {
        result: GuessResult {
            guess: guess.clone(),
            lp_objective: sol.objective,
            best_value,
            best_trial,
            emptied,
        },
        policy,
    })
}

pub fn choose_scale(inst: &Instance<Rational>) -> Scale {
    if inst.n() <= ENUMERATE_MAX_VERTICES && inst.max_band() <= ENUMERATE_MAX_LEVELS {
        Scale::Enumerate
    } else {
        Scale::Sampled { guesses: 8 }
    }
}

/// Run every guess (in parallel), keep the best rounded policy. Ties go to
/// the earliest guess, so the result does not depend on scheduling.
pub fn end_to_end(inst: &Instance<Rational>, params: &E2eParams) -> Result<E2eResult, PipelineError> {
    let k = params.k.clone().unwrap_or_else(|| StarParams::default_k(inst.budget()));
    let scale = params.scale.unwrap_or_else(|| choose_scale(inst));
    let guesses = match scale {
        Scale::Enumerate => {
            if inst.n() > ENUMERATE_MAX_VERTICES || inst.max_band() > ENUMERATE_MAX_LEVELS {
                return Err(PipelineError::TooLarge(format!(
                    "enumeration needs n <= {ENUMERATE_MAX_VERTICES} and ceil(log2 B) <= {ENUMERATE_MAX_LEVELS}"
                )));
            }
            enumerate_guesses(inst)?
        }
        Scale::Sampled { guesses } => sampled_guesses(inst, &k, guesses, params.seed)?,
    };
    let evaluated = guesses
        .par_iter()
        .enumerate()
        .map(|(gi, g)| run_guess(inst, g, gi, &k, params))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best: Option<usize> = None;
    for (i, e) in evaluated.iter().enumerate() {
        if best.is_none_or(|b| e.result.best_value > evaluated[b].result.best_value) {
            best = Some(i);
        }
    }
    let (policy, value) = match best {
        Some(i) => (evaluated[i].policy.clone(), evaluated[i].result.best_value.clone()),
        None => (NaPolicy::empty(), Rational::zero()),
    };
    let best_lp_objective = evaluated.iter().map(|e| e.result.lp_objective).fold(0.0, f64::max);
    let dp_value = if inst.n() <= DP_MAX_VERTICES && inst.budget() <= &crate::instance::nat(DP_MAX_BUDGET) {
        Some(optimal_adaptive_dp(inst).map_err(|e| PipelineError::TooLarge(e.to_string()))?.1)
    } else {
        None
    };
    Ok(E2eResult {
        scale,
        k,
        guesses: evaluated.into_iter().map(|e| e.result).collect(),
        best_guess: best,
        policy,
        value,
        best_lp_objective,
        dp_value,
    })
}
