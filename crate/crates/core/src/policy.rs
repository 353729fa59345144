//! Adaptive policies (decision trees) and non-adaptive route policies, with
//! exact and Monte Carlo evaluation.

use std::collections::BTreeMap;

use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::field::{signed_diff, Field};
use crate::instance::{ExactInt, Instance};
use crate::lowerbound::LbTree;

pub const DEFAULT_ATTEMPT_CAP: usize = 22;
const MC_CHUNK: u64 = 4096;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("vertex {vertex} repeated on a root-leaf path at node {node}")]
    RepeatedVertex { node: usize, vertex: usize },
    #[error("node {node} has {got} branches but its job has {expected} outcomes")]
    BranchCount {
        node: usize,
        got: usize,
        expected: usize,
    },
    #[error("node {node} caches inconsistent travel or observed size")]
    Inconsistent { node: usize },
    #[error("node {node} has a bad parent link")]
    BadLink { node: usize },
    #[error("vertex {0} out of range")]
    UnknownVertex(usize),
    #[error("route visits vertex {0} twice")]
    DuplicateRouteVertex(usize),
    #[error("route and attempt probabilities differ in length")]
    LengthMismatch,
    #[error("attempt probability outside [0,1] at route position {0}")]
    BadProbability(usize),
    #[error("{attempted} stochastic attempts exceed the exact-evaluation cap {cap}")]
    CapExceeded { attempted: usize, cap: usize },
}

/// One node of a decision tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DtNode {
    pub vertex: usize,
    /// Parent node and the outcome index that leads here.
    pub parent: Option<(usize, usize)>,
    /// Child per outcome index of this vertex's job; `None` means stop.
    pub children: Vec<Option<usize>>,
    /// Distance travelled before processing this node.
    pub travel: ExactInt,
    /// Total size observed before this node (its own size excluded).
    pub observed: ExactInt,
}

/// Adaptive policy. Node 0 is the root when the tree is non-empty.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecisionTree {
    nodes: Vec<DtNode>,
}

impl DecisionTree {
    pub fn empty() -> Self {
        DecisionTree { nodes: Vec::new() }
    }

    pub fn with_root<F: Field>(inst: &Instance<F>, vertex: usize) -> Self {
        DecisionTree {
            nodes: vec![DtNode {
                vertex,
                parent: None,
                children: vec![None; inst.job(vertex).outcomes().len()],
                travel: inst.dist(inst.root(), vertex),
                observed: ExactInt::zero(),
            }],
        }
    }

    /// Unchecked construction; [`eval_adaptive_exact`] validates.
    pub fn from_nodes(nodes: Vec<DtNode>) -> Self {
        DecisionTree { nodes }
    }

    /// Attach `vertex` below `parent` on branch `outcome`, deriving cached
    /// travel and observed size.
    pub fn add_child<F: Field>(
        &mut self,
        inst: &Instance<F>,
        parent: usize,
        outcome: usize,
        vertex: usize,
    ) -> Result<usize, PolicyError> {
        if vertex >= inst.n() {
            return Err(PolicyError::UnknownVertex(vertex));
        }
        let pu = &self.nodes[parent];
        let out = inst
            .job(pu.vertex)
            .outcomes()
            .get(outcome)
            .ok_or(PolicyError::BranchCount {
                node: parent,
                got: outcome + 1,
                expected: pu.children.len(),
            })?;
        if self.path(parent).iter().any(|&a| self.nodes[a].vertex == vertex) {
            return Err(PolicyError::RepeatedVertex {
                node: self.nodes.len(),
                vertex,
            });
        }
        let node = DtNode {
            vertex,
            parent: Some((parent, outcome)),
            children: vec![None; inst.job(vertex).outcomes().len()],
            travel: &pu.travel + inst.dist(pu.vertex, vertex),
            observed: &pu.observed + &out.size,
        };
        let id = self.nodes.len();
        self.nodes.push(node);
        self.nodes[parent].children[outcome] = Some(id);
        Ok(id)
    }

    pub fn nodes(&self) -> &[DtNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &DtNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids from the root down to `id`.
    pub fn path(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some((p, _)) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    /// Node ids in depth-first preorder, lower outcome index first.
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![0];
        while let Some(u) = stack.pop() {
            out.push(u);
            for c in self.nodes[u].children.iter().rev().flatten() {
                stack.push(*c);
            }
        }
        out
    }
}

/// `eta_u(B - d_u - i_u)`: expected reward collected at node `u`.
pub fn node_reward<F: Field>(inst: &Instance<F>, node: &DtNode) -> F {
    let used = &node.travel + &node.observed;
    inst.job(node.vertex).eta(&signed_diff(inst.budget(), &used))
}

/// Check every cached value and link of `tree` against `inst`.
pub fn validate_tree<F: Field>(inst: &Instance<F>, tree: &DecisionTree) -> Result<(), PolicyError> {
    if tree.is_empty() {
        return Ok(());
    }
    let root = &tree.nodes[0];
    if root.vertex >= inst.n() {
        return Err(PolicyError::UnknownVertex(root.vertex));
    }
    if root.parent.is_some()
        || root.travel != inst.dist(inst.root(), root.vertex)
        || !root.observed.is_zero()
    {
        return Err(PolicyError::Inconsistent { node: 0 });
    }
    let mut on_path = vec![false; inst.n()];
    let mut seen = vec![false; tree.nodes.len()];
    fn walk<F: Field>(
        inst: &Instance<F>,
        tree: &DecisionTree,
        u: usize,
        on_path: &mut [bool],
        seen: &mut [bool],
    ) -> Result<(), PolicyError> {
        let node = &tree.nodes[u];
        if seen[u] {
            return Err(PolicyError::BadLink { node: u });
        }
        seen[u] = true;
        if on_path[node.vertex] {
            return Err(PolicyError::RepeatedVertex {
                node: u,
                vertex: node.vertex,
            });
        }
        let outcomes = inst.job(node.vertex).outcomes();
        if node.children.len() != outcomes.len() {
            return Err(PolicyError::BranchCount {
                node: u,
                got: node.children.len(),
                expected: outcomes.len(),
            });
        }
        on_path[node.vertex] = true;
        for (k, child) in node.children.iter().enumerate() {
            let Some(c) = *child else { continue };
            let cn = tree.nodes.get(c).ok_or(PolicyError::BadLink { node: u })?;
            if cn.vertex >= inst.n() {
                return Err(PolicyError::UnknownVertex(cn.vertex));
            }
            if cn.parent != Some((u, k)) {
                return Err(PolicyError::BadLink { node: c });
            }
            if cn.travel != &node.travel + inst.dist(node.vertex, cn.vertex)
                || cn.observed != &node.observed + &outcomes[k].size
            {
                return Err(PolicyError::Inconsistent { node: c });
            }
            walk(inst, tree, c, on_path, seen)?;
        }
        on_path[node.vertex] = false;
        Ok(())
    }
    walk(inst, tree, 0, &mut on_path, &mut seen)
}

/// Probability that the tree reaches each node.
pub fn reach_probabilities<F: Field>(inst: &Instance<F>, tree: &DecisionTree) -> Vec<F> {
    let mut reach = vec![F::zero(); tree.len()];
    if tree.is_empty() {
        return reach;
    }
    reach[0] = F::one();
    for u in tree.preorder() {
        let node = &tree.nodes[u];
        let outcomes = inst.job(node.vertex).outcomes();
        for (k, child) in node.children.iter().enumerate() {
            if let Some(c) = child {
                reach[*c] = reach[u].clone() * outcomes[k].prob.clone();
            }
        }
    }
    reach
}

/// Exact expected reward `sum_u Pr[reach u] * rbar_u`.
pub fn eval_adaptive_exact<F: Field>(inst: &Instance<F>, tree: &DecisionTree) -> Result<F, PolicyError> {
    validate_tree(inst, tree)?;
    let reach = reach_probabilities(inst, tree);
    Ok(tree
        .nodes
        .iter()
        .zip(reach)
        .fold(F::zero(), |acc, (node, pr)| acc + pr * node_reward(inst, node)))
}

/// The reference adaptive policy on the lower-bound tree: go left after a
/// zero size, right after a positive one.
pub fn adaptive_policy_a(tree: &LbTree) -> DecisionTree {
    let travel = tree.root_distances();
    let observed = tree.prefix_sizes();
    let nodes = (0..tree.len())
        .map(|v| DtNode {
            vertex: v,
            parent: tree.nodes[v].parent.map(|p| (p, if v % 2 == 1 { 0 } else { 1 })),
            children: vec![tree.left(v), tree.right(v)],
            travel: travel[v].clone(),
            observed: observed[v].clone(),
        })
        .collect();
    DecisionTree { nodes }
}

/// Non-adaptive policy: visit `route` in order, attempting the job at
/// `route[i]` independently with probability `attempt_prob[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NaPolicy<F> {
    pub route: Vec<usize>,
    pub attempt_prob: Vec<F>,
}

impl<F: Field> NaPolicy<F> {
    /// Attempt every job on the route.
    pub fn plain(route: Vec<usize>) -> Self {
        let attempt_prob = vec![F::one(); route.len()];
        NaPolicy { route, attempt_prob }
    }

    pub fn uniform(route: Vec<usize>, prob: F) -> Self {
        let attempt_prob = vec![prob; route.len()];
        NaPolicy { route, attempt_prob }
    }

    pub fn empty() -> Self {
        NaPolicy {
            route: Vec::new(),
            attempt_prob: Vec::new(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), PolicyError> {
        if self.route.len() != self.attempt_prob.len() {
            return Err(PolicyError::LengthMismatch);
        }
        let mut seen = vec![false; n];
        for &v in &self.route {
            if v >= n {
                return Err(PolicyError::UnknownVertex(v));
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(PolicyError::DuplicateRouteVertex(v));
            }
        }
        for (i, a) in self.attempt_prob.iter().enumerate() {
            if *a < F::zero() || *a > F::one() {
                return Err(PolicyError::BadProbability(i));
            }
        }
        Ok(())
    }

    pub fn map_field<G: Field>(&self, f: impl Fn(&F) -> G) -> NaPolicy<G> {
        NaPolicy {
            route: self.route.clone(),
            attempt_prob: self.attempt_prob.iter().map(f).collect(),
        }
    }
}

/// Partial evaluation of a non-adaptive route, extendable one vertex at a
/// time. Tracks the exact distribution of accumulated size over runs still
/// within budget.
#[derive(Debug, Clone)]
pub struct NaState<F> {
    at: usize,
    travel: ExactInt,
    alive: BTreeMap<ExactInt, F>,
    value: F,
    attempted: usize,
}

impl<F: Field> NaState<F> {
    pub fn start(inst: &Instance<F>) -> Self {
        let mut alive = BTreeMap::new();
        alive.insert(ExactInt::zero(), F::one());
        NaState {
            at: inst.root(),
            travel: ExactInt::zero(),
            alive,
            value: F::zero(),
            attempted: 0,
        }
    }

    pub fn value(&self) -> &F {
        &self.value
    }

    /// Number of attempted stochastic jobs so far.
    pub fn attempted(&self) -> usize {
        self.attempted
    }

    /// True when no run is still within budget.
    pub fn is_dead(&self) -> bool {
        self.alive.is_empty()
    }

    pub fn travel(&self) -> &ExactInt {
        &self.travel
    }

    pub fn extend(&self, inst: &Instance<F>, v: usize, attempt: &F) -> Self {
        let travel = &self.travel + inst.dist(self.at, v);
        let budget = inst.budget();
        let job = inst.job(v);
        let mut value = self.value.clone();
        let mut next: BTreeMap<ExactInt, F> = BTreeMap::new();
        let skip = F::one() - attempt.clone();
        let tries = !attempt.is_zero();
        for (size, pr) in &self.alive {
            let used = &travel + size;
            if &used > budget {
                continue;
            }
            if !skip.is_zero() {
                add_to(&mut next, size.clone(), pr.clone() * skip.clone());
            }
            if !tries {
                continue;
            }
            for o in job.outcomes() {
                if o.prob.is_zero() || &(&used + &o.size) > budget {
                    continue;
                }
                let w = pr.clone() * attempt.clone() * o.prob.clone();
                value = value + w.clone() * o.reward.clone();
                add_to(&mut next, size + &o.size, w);
            }
        }
        NaState {
            at: v,
            travel,
            alive: next,
            value,
            attempted: self.attempted + usize::from(tries && job.is_stochastic()),
        }
    }
}

fn add_to<F: Field>(map: &mut BTreeMap<ExactInt, F>, key: ExactInt, w: F) {
    match map.get_mut(&key) {
        Some(slot) => *slot = slot.clone() + w,
        None => {
            map.insert(key, w);
        }
    }
}

pub fn eval_na_exact<F: Field>(inst: &Instance<F>, pol: &NaPolicy<F>) -> Result<F, PolicyError> {
    eval_na_exact_capped(inst, pol, DEFAULT_ATTEMPT_CAP)
}

/// Exact expected reward of a non-adaptive policy. A job pays iff travel to
/// it plus all realized sizes including its own is at most `B`.
pub fn eval_na_exact_capped<F: Field>(
    inst: &Instance<F>,
    pol: &NaPolicy<F>,
    cap: usize,
) -> Result<F, PolicyError> {
    pol.validate(inst.n())?;
    let attempted = pol
        .route
        .iter()
        .zip(&pol.attempt_prob)
        .filter(|(&v, a)| !a.is_zero() && inst.job(v).is_stochastic())
        .count();
    if attempted > cap {
        return Err(PolicyError::CapExceeded { attempted, cap });
    }
    let mut state = NaState::start(inst);
    for (&v, a) in pol.route.iter().zip(&pol.attempt_prob) {
        state = state.extend(inst, v, a);
        if state.is_dead() {
            break;
        }
    }
    Ok(state.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
}

struct McStep {
    travel: ExactInt,
    attempt: f64,
    cumulative: Vec<f64>,
    sizes: Vec<ExactInt>,
    rewards: Vec<f64>,
}

fn mc_steps<F: Field>(inst: &Instance<F>, pol: &NaPolicy<F>) -> Vec<McStep> {
    let mut travel = ExactInt::zero();
    let mut at = inst.root();
    pol.route
        .iter()
        .zip(&pol.attempt_prob)
        .map(|(&v, a)| {
            travel += inst.dist(at, v);
            at = v;
            let outs = inst.job(v).outcomes();
            let mut acc = 0.0;
            McStep {
                travel: travel.clone(),
                attempt: a.to_f64(),
                cumulative: outs
                    .iter()
                    .map(|o| {
                        acc += o.prob.to_f64();
                        acc
                    })
                    .collect(),
                sizes: outs.iter().map(|o| o.size.clone()).collect(),
                rewards: outs.iter().map(|o| o.reward.to_f64()).collect(),
            }
        })
        .collect()
}

/// Index of the outcome selected by a uniform draw `u`.
pub(crate) fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len().saturating_sub(1))
}

fn mc_run(steps: &[McStep], budget: &ExactInt, rng: &mut ChaCha8Rng) -> f64 {
    let mut size = ExactInt::zero();
    let mut reward = 0.0;
    for st in steps {
        if &(&st.travel + &size) > budget {
            break;
        }
        if st.attempt < 1.0 && rng.gen::<f64>() >= st.attempt {
            continue;
        }
        let k = pick(&st.cumulative, rng.gen::<f64>());
        size += &st.sizes[k];
        if &(&st.travel + &size) > budget {
            break;
        }
        reward += st.rewards[k];
    }
    reward
}

/// Monte Carlo estimate of a non-adaptive policy's value. Deterministic in
/// `seed` and independent of the rayon thread count.
pub fn eval_na_mc<F: Field>(inst: &Instance<F>, pol: &NaPolicy<F>, samples: u64, seed: u64) -> McEstimate {
    let steps = mc_steps(inst, pol);
    let budget = inst.budget();
    mc_chunked(samples, seed, |rng| mc_run(&steps, budget, rng))
}

/// Run `sample` `samples` times in fixed-size chunks, one ChaCha stream per
/// chunk, and combine the sums in chunk order.
pub(crate) fn mc_chunked(samples: u64, seed: u64, sample: impl Fn(&mut ChaCha8Rng) -> f64 + Sync) -> McEstimate {
    let chunks = samples.div_ceil(MC_CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let r = sample(&mut rng);
                s += r;
                s2 += r * r;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    summarize(s, s2, samples)
}

pub(crate) fn summarize(s: f64, s2: f64, samples: u64) -> McEstimate {
    let n = samples as f64;
    let mean = if samples == 0 { 0.0 } else { s / n };
    let stderr = if samples < 2 {
        0.0
    } else {
        let var = ((s2 - s * s / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    };
    McEstimate {
        mean,
        stderr,
        samples,
    }
}
