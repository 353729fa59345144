//! The adaptivity-gap lower-bound family: a complete binary tree with
//! Bernoulli jobs whose sizes grow doubly exponentially along right branches,
//! its undirected version, and its embedding on the line.
//!
//! Node ids are breadth-first: root 0, left child `2k+1`, right child `2k+2`.

use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint};
use num_integer::Roots;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::field::{pow2, Field, QuadSurd, Rational};
use crate::instance::{ExactInt, Instance, JobDist, Metric, OrderConstraint};

pub const MAX_LEVELS: u32 = 12;

#[derive(Debug, thiserror::Error)]
pub enum LowerBoundError {
    #[error("tree height L={0} outside 1..={MAX_LEVELS}")]
    LevelsOutOfRange(u32),
    #[error("unknown variant `{0}` (expected dtree, utree or line)")]
    UnknownVariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Root,
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbNode {
    pub id: usize,
    pub level: u32,
    pub side: Side,
    pub parent: Option<usize>,
    pub size: ExactInt,
    /// Right branches taken on the path from the root.
    pub tau: u32,
    pub residual: ExactInt,
    pub edge_len: ExactInt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbTree {
    pub levels: u32,
    pub budget: ExactInt,
    pub root_size: ExactInt,
    pub nodes: Vec<LbNode>,
}

fn two_pow_two_pow(e: u32) -> BigUint {
    pow2(1u32 << e)
}

pub fn build_tree(levels: u32) -> Result<LbTree, LowerBoundError> {
    if !(1..=MAX_LEVELS).contains(&levels) {
        return Err(LowerBoundError::LevelsOutOfRange(levels));
    }
    let n = (1usize << levels) - 1;
    let budget = two_pow_two_pow(levels + 1);
    let root_size = two_pow_two_pow(levels);
    let mut nodes: Vec<LbNode> = Vec::with_capacity(n);
    nodes.push(LbNode {
        id: 0,
        level: levels,
        side: Side::Root,
        parent: None,
        size: root_size.clone(),
        tau: 0,
        residual: budget.clone(),
        edge_len: ExactInt::zero(),
    });
    for id in 1..n {
        let u = (id - 1) / 2;
        let pu = &nodes[u];
        let level = pu.level - 1;
        let shift = two_pow_two_pow(level);
        let node = if id % 2 == 1 {
            LbNode {
                id,
                level,
                side: Side::Left,
                parent: Some(u),
                size: &pu.size / &shift,
                tau: pu.tau,
                residual: pu.size.clone(),
                edge_len: &pu.residual - &pu.size,
            }
        } else {
            LbNode {
                id,
                level,
                side: Side::Right,
                parent: Some(u),
                size: &pu.size * &shift,
                tau: pu.tau + 1,
                residual: &pu.residual - &pu.size,
                edge_len: ExactInt::zero(),
            }
        };
        nodes.push(node);
    }
    Ok(LbTree {
        levels,
        budget,
        root_size,
        nodes,
    })
}

impl LbTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn left(&self, id: usize) -> Option<usize> {
        let c = 2 * id + 1;
        (c < self.nodes.len()).then_some(c)
    }

    pub fn right(&self, id: usize) -> Option<usize> {
        let c = 2 * id + 2;
        (c < self.nodes.len()).then_some(c)
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        self.nodes.iter().map(|n| n.parent).collect()
    }

    /// Root-to-`id` path, root first.
    pub fn path(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    /// All nodes in the subtree rooted at `id`.
    pub fn subtree(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(v) = stack.pop() {
            out.push(v);
            stack.extend(self.left(v));
            stack.extend(self.right(v));
        }
        out
    }

    pub fn is_ancestor(&self, a: usize, mut v: usize) -> bool {
        while let Some(p) = self.nodes[v].parent {
            if p == a {
                return true;
            }
            v = p;
        }
        false
    }

    /// Distance from the root along stored edge lengths.
    pub fn root_distances(&self) -> Vec<ExactInt> {
        let mut d = vec![ExactInt::zero(); self.nodes.len()];
        for v in 1..self.nodes.len() {
            let p = self.nodes[v].parent.expect("non-root has a parent");
            d[v] = &d[p] + &self.nodes[v].edge_len;
        }
        d
    }

    /// Size instantiated before reaching each node under the policy that
    /// turns right exactly when the current job instantiates.
    pub fn prefix_sizes(&self) -> Vec<ExactInt> {
        let mut a = vec![ExactInt::zero(); self.nodes.len()];
        for v in 1..self.nodes.len() {
            let p = self.nodes[v].parent.expect("non-root has a parent");
            a[v] = match self.nodes[v].side {
                Side::Right => &a[p] + &self.nodes[p].size,
                _ => a[p].clone(),
            };
        }
        a
    }

    pub fn metric(&self) -> Metric {
        Metric::tree(
            self.parents(),
            self.nodes.iter().map(|n| n.edge_len.clone()).collect(),
        )
    }

    /// Reward `(1-p)^tau` of every node.
    pub fn rewards<F: Field>(&self, p: &F) -> Vec<F> {
        let q = F::one() - p.clone();
        let mut pows = vec![F::one()];
        for _ in 0..self.levels {
            let next = pows.last().expect("non-empty").clone() * q.clone();
            pows.push(next);
        }
        self.nodes.iter().map(|n| pows[n.tau as usize].clone()).collect()
    }
}

/// Outcome of one structural claim over all nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClaimCheck {
    pub name: String,
    pub passed: bool,
    /// Offending node ids (for the line claims, the internal node `u`).
    pub violations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClaimReport {
    pub levels: u32,
    pub claims: Vec<ClaimCheck>,
}

impl ClaimReport {
    pub fn all_passed(&self) -> bool {
        self.claims.iter().all(|c| c.passed)
    }

    pub fn claim(&self, name: &str) -> Option<&ClaimCheck> {
        self.claims.iter().find(|c| c.name == name)
    }
}

fn int(n: &BigUint) -> BigInt {
    BigInt::from(n.clone())
}

fn claim(name: &str, violations: Vec<usize>) -> ClaimCheck {
    ClaimCheck {
        name: name.to_string(),
        passed: violations.is_empty(),
        violations,
    }
}

/// Check every structural property of the construction against the stored
/// node values. Nothing is recomputed from the recurrences except where a
/// claim is about the recurrences, so corrupted trees are caught.
pub fn check_structure(tree: &LbTree) -> ClaimReport {
    let n = tree.nodes.len();
    let b = int(&tree.budget);
    let dist = tree.root_distances();
    let prefix = tree.prefix_sizes();

    let mut recurrence = Vec::new();
    if tree.nodes[0].residual != tree.budget || tree.nodes[0].size != tree.root_size {
        recurrence.push(0);
    }
    for v in 1..n {
        let node = &tree.nodes[v];
        let u = &tree.nodes[node.parent.expect("non-root has a parent")];
        let shift = two_pow_two_pow(node.level);
        let ok = match node.side {
            Side::Right => {
                node.size == &u.size * &shift
                    && int(&node.residual) == int(&u.residual) - int(&u.size)
                    && node.edge_len.is_zero()
            }
            Side::Left => {
                &node.size * &shift == u.size
                    && node.residual == u.size
                    && int(&node.edge_len) == int(&u.residual) - int(&u.size)
            }
            Side::Root => false,
        };
        if !ok {
            recurrence.push(v);
        }
    }

    let budget_identity = (0..n)
        .filter(|&v| int(&tree.nodes[v].residual) != &b - int(&dist[v]) - int(&prefix[v]))
        .collect();

    let left_budget = (0..n)
        .filter(|&v| tree.nodes[v].side == Side::Left)
        .filter(|&v| {
            let node = &tree.nodes[v];
            node.residual != &node.size * two_pow_two_pow(node.level)
        })
        .collect();

    let three_sizes = (0..n)
        .filter(|&v| {
            let node = &tree.nodes[v];
            BigUint::from(3u8) * &node.size > node.residual
        })
        .collect();

    let prefix_size = (0..n).filter(|&v| prefix[v] >= tree.nodes[v].size).collect();

    let mut line_distance = Vec::new();
    let mut left_after_right = Vec::new();
    for u in 0..n {
        let (Some(l), Some(r)) = (tree.left(u), tree.right(u)) else {
            continue;
        };
        let s_u = int(&tree.nodes[u].size);
        let left_floor = &b - BigInt::from(2) * &s_u;
        let right_ceil = &b - BigInt::from(4) * &s_u;
        let lsub = tree.subtree(l);
        let rsub = tree.subtree(r);
        let lemma_ok = lsub.iter().all(|&v| int(&dist[v]) > left_floor)
            && rsub.iter().all(|&v| int(&dist[v]) <= right_ceil);
        if !lemma_ok {
            line_distance.push(u);
        }
        let max_r = rsub.iter().map(|&v| &dist[v]).max().expect("non-empty");
        let min_l = lsub.iter().map(|&v| &dist[v]).min().expect("non-empty");
        if max_r >= min_l {
            left_after_right.push(u);
        }
    }

    ClaimReport {
        levels: tree.levels,
        claims: vec![
            claim("recurrences", recurrence),
            claim("budget-identity", budget_identity),
            claim("left-child-budget", left_budget),
            claim("three-sizes-fit", three_sizes),
            claim("prefix-size", prefix_size),
            claim("line-distance", line_distance),
            claim("left-after-right", left_after_right),
        ],
    }
}

/// Tree nodes placed on the line at their distance from the root.
#[derive(Debug, Clone, PartialEq)]
pub struct LineEmbedding {
    pub coord: Vec<ExactInt>,
    /// Node ids by increasing coordinate, equal coordinates by decreasing
    /// level.
    pub order: Vec<usize>,
}

pub fn embed_line(tree: &LbTree) -> LineEmbedding {
    let coord = tree.root_distances();
    let mut order: Vec<usize> = (0..tree.nodes.len()).collect();
    order.sort_by(|&a, &b| {
        coord[a]
            .cmp(&coord[b])
            .then(tree.nodes[b].level.cmp(&tree.nodes[a].level))
            .then(a.cmp(&b))
    });
    LineEmbedding { coord, order }
}

impl LineEmbedding {
    pub fn dist(&self, a: usize, b: usize) -> ExactInt {
        if self.coord[a] >= self.coord[b] {
            &self.coord[a] - &self.coord[b]
        } else {
            &self.coord[b] - &self.coord[a]
        }
    }

    /// Pairs `(a, b)` whose line distance exceeds their tree distance.
    pub fn contraction_violations(&self, tree: &LbTree) -> Vec<(usize, usize)> {
        let metric = tree.metric();
        let n = self.coord.len();
        let mut out = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if self.dist(a, b) > metric.dist(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

/// Ordered pairs `(v, w)` with `coord(v) > coord(w)` where walking root to
/// `v` to `w` still fits in the budget. The ordering lemma says there are
/// none.
pub fn ordering_exceptions(tree: &LbTree, emb: &LineEmbedding) -> Vec<(usize, usize)> {
    let n = emb.coord.len();
    let mut out = Vec::new();
    for v in 0..n {
        for w in 0..n {
            if emb.coord[v] > emb.coord[w] {
                let walk = &emb.coord[v] + (&emb.coord[v] - &emb.coord[w]);
                if walk <= tree.budget {
                    out.push((v, w));
                }
            }
        }
    }
    out
}

/// Expected reward from two co-located Bernoulli jobs visited back to back
/// after `x` units of time and size have been used.
#[allow(clippy::too_many_arguments)]
pub fn pair_reward<F: Field>(
    x: &BigUint,
    budget: &BigUint,
    first: (&BigUint, &F),
    second: (&BigUint, &F),
    p: &F,
) -> F {
    let q = F::one() - p.clone();
    let mut total = F::zero();
    for (a, pa) in [(BigUint::zero(), q.clone()), (first.0.clone(), p.clone())] {
        for (c, pc) in [(BigUint::zero(), q.clone()), (second.0.clone(), p.clone())] {
            let w = pa.clone() * pc;
            let after_first = x + &a;
            if &after_first <= budget {
                total = total + w.clone() * first.1.clone();
                if &(&after_first + &c) <= budget {
                    total = total + w * second.1.clone();
                }
            }
        }
    }
    total
}

/// Row of the tie-break exchange table: rewards (descendant first, ancestor
/// first) for ancestor `u` and co-located descendant `v`, `s_u < s_v`.
pub fn exchange_table_row<F: Field>(
    x: &BigUint,
    budget: &BigUint,
    s_u: &BigUint,
    s_v: &BigUint,
    r_u: &F,
    r_v: &F,
    p: &F,
) -> (F, F) {
    let q = F::one() - p.clone();
    let p2 = F::one() - p.clone() * p.clone();
    let (ru, rv) = (r_u.clone(), r_v.clone());
    if x + s_u + s_v <= *budget {
        (ru.clone() + rv.clone(), ru + rv)
    } else if x + s_v <= *budget {
        (p2.clone() * ru.clone() + rv.clone(), ru + p2 * rv)
    } else if x + s_u <= *budget {
        (q.clone() * (ru.clone() + rv.clone()), ru + q * rv)
    } else if x <= budget {
        (
            q.clone() * q.clone() * ru.clone() + q.clone() * rv.clone(),
            q.clone() * ru + q.clone() * q * rv,
        )
    } else {
        (F::zero(), F::zero())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangeFailure {
    pub ancestor: usize,
    pub descendant: usize,
    pub x: BigUint,
    pub reason: &'static str,
}

/// For every co-located ancestor/descendant pair and every budget regime,
/// check that the table matches direct enumeration and that visiting the
/// ancestor first is never worse. Returns the number of checked cases.
pub fn check_tie_exchange<F: Field>(tree: &LbTree, p: &F) -> Result<usize, ExchangeFailure> {
    let emb = embed_line(tree);
    let rewards = tree.rewards(p);
    let b = &tree.budget;
    let mut checked = 0;
    for v in 0..tree.nodes.len() {
        for u in tree.path(v) {
            if u == v || emb.coord[u] != emb.coord[v] {
                continue;
            }
            let (s_u, s_v) = (&tree.nodes[u].size, &tree.nodes[v].size);
            let (r_u, r_v) = (&rewards[u], &rewards[v]);
            let mut xs: Vec<BigUint> = vec![BigUint::zero(), b.clone(), b + 1u32];
            for t in [s_u + s_v, s_v.clone(), s_u.clone()] {
                if &t <= b {
                    let edge = b - &t;
                    xs.push(edge.clone());
                    xs.push(&edge + 1u32);
                    if !edge.is_zero() {
                        xs.push(edge - 1u32);
                    }
                }
            }
            for x in xs {
                let desc_first = pair_reward(&x, b, (s_v, r_v), (s_u, r_u), p);
                let anc_first = pair_reward(&x, b, (s_u, r_u), (s_v, r_v), p);
                let (t_desc, t_anc) = exchange_table_row(&x, b, s_u, s_v, r_u, r_v, p);
                let fail = |reason| ExchangeFailure {
                    ancestor: u,
                    descendant: v,
                    x: x.clone(),
                    reason,
                };
                if desc_first != t_desc || anc_first != t_anc {
                    return Err(fail("table disagrees with enumeration"));
                }
                if anc_first < desc_first {
                    return Err(fail("descendant-first is better"));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Variant {
    #[serde(rename = "dtree")]
    DirectedTree,
    #[serde(rename = "utree")]
    UndirectedTree,
    #[serde(rename = "line")]
    Line,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::DirectedTree => "dtree",
            Variant::UndirectedTree => "utree",
            Variant::Line => "line",
        })
    }
}

impl FromStr for Variant {
    type Err = LowerBoundError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dtree" | "directed" | "directed_tree" => Ok(Variant::DirectedTree),
            "utree" | "undirected" | "undirected_tree" => Ok(Variant::UndirectedTree),
            "line" => Ok(Variant::Line),
            other => Err(LowerBoundError::UnknownVariant(other.to_string())),
        }
    }
}

/// Exact `p = 1/sqrt(L)`.
pub fn exact_p(levels: u32) -> QuadSurd {
    QuadSurd::one() / QuadSurd::sqrt(levels as u64)
}

/// Rational stand-in for `1/sqrt(L)`: exact when `L` is a perfect square,
/// otherwise rounded to the nearest multiple of `2^-30`.
pub fn rational_p(levels: u32) -> Rational {
    let l = levels as u64;
    let r = l.sqrt();
    if r * r == l {
        return Rational::new(BigInt::one(), BigInt::from(r));
    }
    // floor(2^31 / sqrt(L)) = isqrt(2^62 / L) up to the floor of the inner
    // division, which cannot move the integer square root here.
    let twice = ((1u128 << 62) / l as u128).sqrt();
    let rounded = twice.div_ceil(2);
    Rational::new(BigInt::from(rounded), BigInt::from(1u64 << 30))
}

pub fn to_instance<F: Field>(tree: &LbTree, variant: Variant, p: &F) -> Instance<F> {
    let rewards = tree.rewards(p);
    let jobs = tree
        .nodes
        .iter()
        .zip(rewards)
        .map(|(n, r)| JobDist::bernoulli(p.clone(), n.size.clone(), r))
        .collect();
    let (metric, order) = match variant {
        Variant::DirectedTree => (
            tree.metric(),
            OrderConstraint::DirectedTree {
                parent: tree.parents(),
            },
        ),
        Variant::UndirectedTree => (tree.metric(), OrderConstraint::None),
        Variant::Line => (Metric::Line(tree.root_distances()), OrderConstraint::None),
    };
    Instance::new(metric, jobs, 0, tree.budget.clone(), order)
        .expect("lower-bound instance is well formed")
}

pub fn to_exact_instance(tree: &LbTree, variant: Variant) -> Instance<QuadSurd> {
    to_instance(tree, variant, &exact_p(tree.levels))
}

pub fn to_rational_instance(tree: &LbTree, variant: Variant) -> Instance<Rational> {
    to_instance(tree, variant, &rational_p(tree.levels))
}

/// `sum_{t<L} (1-p^2)^t`, the expected reward of the reference adaptive
/// policy.
pub fn adaptive_value_formula<F: Field>(levels: u32, p: &F) -> F {
    let q = F::one() - p.clone() * p.clone();
    let mut term = F::one();
    let mut total = F::zero();
    for _ in 0..levels {
        total = total + term.clone();
        term = term * q.clone();
    }
    total
}
