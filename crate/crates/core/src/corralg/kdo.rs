//! Knapsack deadline orienteering: exact dynamic program, greedy insertion,
//! and enumeration of all feasible job sets.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Add;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::field::{rational_to_f64, Rational};

pub const EXACT_MAX_VERTICES: usize = 10;
pub const EXACT_MAX_LENGTH: u64 = 64;
const MAX_UNIT_SCALE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KdoError {
    #[error("state space too large: {0}")]
    StateSpace(String),
    #[error("knapsack sizes have no small common denominator")]
    Incommensurable,
    #[error("more than {0} feasible solutions")]
    EnumerationOverflow(usize),
}

/// Objective values the solvers can maximise.
pub trait Score: Clone + PartialOrd + Add<Output = Self> + Zero + Send + Sync {
    fn as_f64(&self) -> f64;
}

impl Score for f64 {
    fn as_f64(&self) -> f64 {
        *self
    }
}

impl Score for Rational {
    fn as_f64(&self) -> f64 {
        rational_to_f64(self)
    }
}

/// Copy `<vertex, band, deadline>` of a vertex's job.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CopyJob {
    pub vertex: usize,
    pub band: u32,
    pub deadline: u64,
    #[serde(serialize_with = "crate::report::ser_rational")]
    pub reward: Rational,
    /// Knapsack size, the capped mean `mu^band` of the vertex.
    #[serde(serialize_with = "crate::report::ser_rational")]
    pub ksize: Rational,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KdoInstance {
    pub band: u32,
    pub start: usize,
    pub end: usize,
    pub length_bound: u64,
    #[serde(serialize_with = "crate::report::ser_rational")]
    pub capacity: Rational,
    pub jobs: Vec<CopyJob>,
    #[serde(skip)]
    pub dist: Vec<Vec<u64>>,
}

/// A start-end walk with the jobs it collects.
#[derive(Debug, Clone, PartialEq)]
pub struct KdoPath<S> {
    /// Start, intermediate vertices, end.
    pub vertices: Vec<usize>,
    /// Arrival time at each entry of `vertices`.
    pub arrival: Vec<u64>,
    /// Collected job indices, ascending.
    pub jobs: Vec<usize>,
    pub value: S,
}

impl<S> KdoPath<S> {
    pub fn length(&self) -> u64 {
        *self.arrival.last().unwrap_or(&0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KdoMode {
    Exact,
    Greedy,
}

impl KdoInstance {
    pub fn n(&self) -> usize {
        self.dist.len()
    }

    pub fn rewards(&self) -> Vec<Rational> {
        self.jobs.iter().map(|j| j.reward.clone()).collect()
    }

    fn arrivals(&self, route: &[usize]) -> Vec<u64> {
        let mut t = 0;
        let mut out = Vec::with_capacity(route.len());
        for (i, &v) in route.iter().enumerate() {
            if i > 0 {
                t += self.dist[route[i - 1]][v];
            }
            out.push(t);
        }
        out
    }

    /// Earliest arrival at `v` along `route`.
    fn arrival_at(route: &[usize], arrival: &[u64], v: usize) -> Option<u64> {
        route.iter().position(|&u| u == v).map(|i| arrival[i])
    }

    /// Length, deadlines and knapsack capacity of `path`, exactly.
    pub fn is_feasible<S>(&self, path: &KdoPath<S>) -> bool {
        let r = &path.vertices;
        if r.len() < 2 || r[0] != self.start || r[r.len() - 1] != self.end {
            return false;
        }
        let arrival = self.arrivals(r);
        if arrival != path.arrival || path.length() > self.length_bound {
            return false;
        }
        let mut used = Rational::zero();
        for &k in &path.jobs {
            let job = &self.jobs[k];
            match Self::arrival_at(r, &arrival, job.vertex) {
                Some(a) if a <= job.deadline => used += &job.ksize,
                _ => return false,
            }
        }
        used <= self.capacity && path.jobs.windows(2).all(|w| w[0] < w[1])
    }

    /// Sum of `mu` over collected jobs, for any per-vertex size table.
    pub fn load(&self, jobs: &[usize], mu: impl Fn(usize) -> Rational) -> Rational {
        jobs.iter().map(|&k| mu(self.jobs[k].vertex)).sum()
    }
}

/// Knapsack sizes scaled to integers.
struct Units {
    size: Vec<u128>,
    cap: u128,
}

fn units(kdo: &KdoInstance, ignore: bool) -> Result<Units, KdoError> {
    if ignore {
        return Ok(Units {
            size: vec![0; kdo.jobs.len()],
            cap: 0,
        });
    }
    let mut l = BigInt::from(1);
    for q in kdo.jobs.iter().map(|j| &j.ksize).chain([&kdo.capacity]) {
        l = l.lcm(q.denom());
        if l > BigInt::from(MAX_UNIT_SCALE) {
            return Err(KdoError::Incommensurable);
        }
    }
    let scale = Rational::from_integer(l);
    let conv = |q: &Rational| -> Result<u128, KdoError> {
        (q * &scale).floor().to_integer().to_u128().ok_or(KdoError::Incommensurable)
    };
    Ok(Units {
        size: kdo.jobs.iter().map(|j| conv(&j.ksize)).collect::<Result<_, _>>()?,
        cap: conv(&kdo.capacity)?,
    })
}

/// Non-empty subsets (or all, with `with_empty`) of the listed jobs as
/// `(jobs, units, score)`, within capacity.
fn subsets<S: Score>(
    eligible: &[usize],
    scores: &[S],
    u: &Units,
    ignore: bool,
    with_empty: bool,
) -> Vec<(Vec<usize>, u128, S)> {
    let mut out = Vec::new();
    let start = if with_empty { 0 } else { 1 };
    for mask in start..(1u32 << eligible.len()) {
        let picked: Vec<usize> = (0..eligible.len()).filter(|b| mask & (1 << b) != 0).map(|b| eligible[b]).collect();
        let w: u128 = picked.iter().map(|&k| u.size[k]).sum();
        if !ignore && w > u.cap {
            continue;
        }
        let s = picked.iter().fold(S::zero(), |a, &k| a + scores[k].clone());
        out.push((picked, w, s));
    }
    out
}

fn eligible_at<S: Score>(kdo: &KdoInstance, scores: &[S], v: usize, time: u64) -> Vec<usize> {
    (0..kdo.jobs.len())
        .filter(|&k| kdo.jobs[k].vertex == v && kdo.jobs[k].deadline >= time && scores[k] > S::zero())
        .collect()
}

type Key = (u32, usize, u64);

#[derive(Clone)]
struct Entry<S> {
    units: u128,
    score: S,
    back: Option<(Key, usize)>,
    picked: Vec<usize>,
}

fn pareto_insert<S: Score>(list: &mut Vec<Entry<S>>, e: Entry<S>) {
    if list.iter().any(|o| o.units <= e.units && o.score >= e.score) {
        return;
    }
    list.retain(|o| !(e.units <= o.units && e.score >= o.score));
    list.push(e);
}

fn check_limits(kdo: &KdoInstance) -> Result<(), KdoError> {
    if kdo.n() > EXACT_MAX_VERTICES {
        return Err(KdoError::StateSpace(format!("{} vertices (max {EXACT_MAX_VERTICES})", kdo.n())));
    }
    if kdo.length_bound > EXACT_MAX_LENGTH {
        return Err(KdoError::StateSpace(format!(
            "length bound {} (max {EXACT_MAX_LENGTH})",
            kdo.length_bound
        )));
    }
    Ok(())
}

/// Exact best path for per-job `scores`. `None` when even the direct
/// start-end edge is too long.
pub fn solve_exact_with<S: Score>(kdo: &KdoInstance, scores: &[S], ignore_knapsack: bool) -> Result<Option<KdoPath<S>>, KdoError> {
    check_limits(kdo)?;
    let (s, t, dmax) = (kdo.start, kdo.end, kdo.length_bound);
    if kdo.dist[s][t] > dmax {
        return Ok(None);
    }
    let u = units(kdo, ignore_knapsack)?;
    let hosts: Vec<usize> = (0..kdo.n())
        .filter(|&v| v != s && v != t && kdo.jobs.iter().zip(scores).any(|(j, sc)| j.vertex == v && *sc > S::zero()))
        .collect();
    let mut layers: Vec<BTreeMap<Key, Vec<Entry<S>>>> = Vec::new();
    let mut first = BTreeMap::new();
    let mut init = Vec::new();
    for (picked, w, sc) in subsets(&eligible_at(kdo, scores, s, 0), scores, &u, ignore_knapsack, true) {
        pareto_insert(&mut init, Entry { units: w, score: sc, back: None, picked });
    }
    first.insert((0u32, s, 0u64), init);
    layers.push(first);
    for _ in 0..hosts.len() {
        let mut next: BTreeMap<Key, Vec<Entry<S>>> = BTreeMap::new();
        for (key, entries) in layers.last().expect("non-empty") {
            let (mask, last, time) = *key;
            for (bit, &v) in hosts.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    continue;
                }
                let arrive = time + kdo.dist[last][v];
                if arrive + kdo.dist[v][t] > dmax {
                    continue;
                }
                let opts = subsets(&eligible_at(kdo, scores, v, arrive), scores, &u, ignore_knapsack, false);
                if opts.is_empty() {
                    continue;
                }
                let nk = (mask | (1 << bit), v, arrive);
                for (ei, e) in entries.iter().enumerate() {
                    for (picked, w, sc) in &opts {
                        let units = e.units + w;
                        if !ignore_knapsack && units > u.cap {
                            continue;
                        }
                        let list = next.entry(nk).or_default();
                        pareto_insert(
                            list,
                            Entry {
                                units,
                                score: e.score.clone() + sc.clone(),
                                back: Some((*key, ei)),
                                picked: picked.clone(),
                            },
                        );
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        layers.push(next);
    }
    let mut best: Option<(S, usize, Key, usize, Vec<usize>)> = None;
    for (li, layer) in layers.iter().enumerate() {
        for (key, entries) in layer {
            let (_, last, time) = *key;
            let arrive = time + kdo.dist[last][t];
            if arrive > dmax {
                continue;
            }
            let ends = if t == s {
                vec![(Vec::new(), 0, S::zero())]
            } else {
                subsets(&eligible_at(kdo, scores, t, arrive), scores, &u, ignore_knapsack, true)
            };
            for (ei, e) in entries.iter().enumerate() {
                for (picked, w, sc) in &ends {
                    if !ignore_knapsack && e.units + w > u.cap {
                        continue;
                    }
                    let total = e.score.clone() + sc.clone();
                    if best.as_ref().is_none_or(|b| total > b.0) {
                        best = Some((total, li, *key, ei, picked.clone()));
                    }
                }
            }
        }
    }
    let Some((value, li, key, ei, end_jobs)) = best else {
        return Ok(None);
    };
    let mut rev = Vec::new();
    let mut jobs = end_jobs;
    let (mut layer, mut cur) = (li, Some((key, ei)));
    while let Some((k, i)) = cur {
        let e = &layers[layer][&k][i];
        rev.push(k.1);
        jobs.extend(&e.picked);
        cur = e.back;
        layer = layer.saturating_sub(1);
    }
    rev.reverse();
    rev.push(t);
    jobs.sort_unstable();
    let arrival = kdo.arrivals(&rev);
    Ok(Some(KdoPath {
        vertices: rev,
        arrival,
        jobs,
        value,
    }))
}

/// Exact deadline orienteering on the copy rewards, with or without the
/// knapsack constraint.
pub fn solve_do_exact(kdo: &KdoInstance, ignore_knapsack: bool) -> Result<Option<KdoPath<Rational>>, KdoError> {
    solve_exact_with(kdo, &kdo.rewards(), ignore_knapsack)
}

/// Greedy insertion: repeatedly add the job with the best score per unit of
/// knapsack size plus detour that keeps the path feasible.
pub fn solve_greedy_with<S: Score>(kdo: &KdoInstance, scores: &[S]) -> Option<KdoPath<S>> {
    let (s, t) = (kdo.start, kdo.end);
    if kdo.dist[s][t] > kdo.length_bound {
        return None;
    }
    let mut route = vec![s, t];
    let mut chosen: Vec<usize> = Vec::new();
    let mut used = Rational::zero();
    let deadlines_ok = |route: &[usize], jobs: &[usize]| -> bool {
        let arr = kdo.arrivals(route);
        jobs.iter().all(|&k| {
            KdoInstance::arrival_at(route, &arr, kdo.jobs[k].vertex).is_some_and(|a| a <= kdo.jobs[k].deadline)
        })
    };
    loop {
        let len = *kdo.arrivals(&route).last().expect("non-empty");
        let mut best: Option<(f64, usize, Vec<usize>)> = None;
        for (k, job) in kdo.jobs.iter().enumerate() {
            if chosen.contains(&k) || scores[k] <= S::zero() || &used + &job.ksize > kdo.capacity {
                continue;
            }
            let mut with = chosen.clone();
            with.push(k);
            let mut options: Vec<Vec<usize>> = Vec::new();
            if route.contains(&job.vertex) {
                options.push(route.clone());
            } else {
                for i in 1..route.len() {
                    let mut r = route.clone();
                    r.insert(i, job.vertex);
                    options.push(r);
                }
            }
            for r in options {
                let nl = *kdo.arrivals(&r).last().expect("non-empty");
                if nl > kdo.length_bound || !deadlines_ok(&r, &with) {
                    continue;
                }
                let denom = rational_to_f64(&job.ksize) + (nl - len) as f64;
                let ratio = if denom > 0.0 { scores[k].as_f64() / denom } else { f64::INFINITY };
                if best.as_ref().is_none_or(|b| ratio > b.0) {
                    best = Some((ratio, k, r));
                }
            }
        }
        let Some((_, k, r)) = best else { break };
        used += &kdo.jobs[k].ksize;
        chosen.push(k);
        route = r;
    }
    chosen.sort_unstable();
    let value = chosen.iter().fold(S::zero(), |a, &k| a + scores[k].clone());
    let arrival = kdo.arrivals(&route);
    Some(KdoPath {
        vertices: route,
        arrival,
        jobs: chosen,
        value,
    })
}

pub fn solve_kdo(kdo: &KdoInstance, mode: KdoMode) -> Result<Option<KdoPath<Rational>>, KdoError> {
    match mode {
        KdoMode::Exact => solve_exact_with(kdo, &kdo.rewards(), false),
        KdoMode::Greedy => Ok(solve_greedy_with(kdo, &kdo.rewards())),
    }
}

/// Every distinct feasible set of positive-reward jobs (the empty set
/// included when the direct edge fits), each with one witnessing path.
pub fn enumerate_solutions(kdo: &KdoInstance, limit: usize) -> Result<Vec<KdoPath<Rational>>, KdoError> {
    check_limits(kdo)?;
    let (s, t) = (kdo.start, kdo.end);
    if kdo.dist[s][t] > kdo.length_bound {
        return Ok(Vec::new());
    }
    let scores = kdo.rewards();
    let u = units(kdo, false)?;
    let mut found: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    struct Ctx<'a> {
        kdo: &'a KdoInstance,
        scores: &'a [Rational],
        u: &'a Units,
        limit: usize,
    }
    fn record(
        cx: &Ctx,
        found: &mut BTreeMap<Vec<usize>, Vec<usize>>,
        jobs: Vec<usize>,
        route: &[usize],
    ) -> Result<(), KdoError> {
        let mut key = jobs;
        key.sort_unstable();
        if !found.contains_key(&key) {
            if found.len() >= cx.limit {
                return Err(KdoError::EnumerationOverflow(cx.limit));
            }
            found.insert(key, route.to_vec());
        }
        Ok(())
    }
    fn go(
        cx: &Ctx,
        found: &mut BTreeMap<Vec<usize>, Vec<usize>>,
        route: &mut Vec<usize>,
        visited: &mut BTreeSet<usize>,
        time: u64,
        jobs: &mut Vec<usize>,
        used: u128,
    ) -> Result<(), KdoError> {
        let kdo = cx.kdo;
        let (s, t) = (kdo.start, kdo.end);
        let last = *route.last().expect("non-empty");
        let arrive = time + kdo.dist[last][t];
        if arrive <= kdo.length_bound {
            route.push(t);
            let ends = if t == s {
                vec![(Vec::new(), 0, Rational::zero())]
            } else {
                subsets(&eligible_at(kdo, cx.scores, t, arrive), cx.scores, cx.u, false, true)
            };
            for (picked, w, _) in ends {
                if used + w <= cx.u.cap {
                    let mut all = jobs.clone();
                    all.extend(picked);
                    record(cx, found, all, route)?;
                }
            }
            route.pop();
        }
        for v in 0..kdo.n() {
            if v == s || v == t || visited.contains(&v) {
                continue;
            }
            let arrive = time + kdo.dist[last][v];
            if arrive + kdo.dist[v][t] > kdo.length_bound {
                continue;
            }
            for (picked, w, _) in subsets(&eligible_at(kdo, cx.scores, v, arrive), cx.scores, cx.u, false, false) {
                if used + w > cx.u.cap {
                    continue;
                }
                visited.insert(v);
                route.push(v);
                let before = jobs.len();
                jobs.extend(&picked);
                go(cx, found, route, visited, arrive, jobs, used + w)?;
                jobs.truncate(before);
                route.pop();
                visited.remove(&v);
            }
        }
        Ok(())
    }
    let cx = Ctx {
        kdo,
        scores: &scores,
        u: &u,
        limit,
    };
    for (picked, w, _) in subsets(&eligible_at(kdo, &scores, s, 0), &scores, &u, false, true) {
        let mut route = vec![s];
        let mut visited = BTreeSet::new();
        let mut jobs = picked;
        go(&cx, &mut found, &mut route, &mut visited, 0, &mut jobs, w)?;
    }
    Ok(found
        .into_iter()
        .map(|(jobs, route)| {
            let arrival = kdo.arrivals(&route);
            let value = jobs.iter().map(|&k| kdo.jobs[k].reward.clone()).sum();
            KdoPath {
                vertices: route,
                arrival,
                jobs,
                value,
            }
        })
        .collect())
}
