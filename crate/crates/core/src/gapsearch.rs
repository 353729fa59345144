//! Searches for the best non-adaptive policy on the lower-bound instances,
//! exact optimal adaptive and non-adaptive policies on small instances, and
//! the resulting adaptivity-gap tables.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::field::{Field, QuadSurd};
use crate::instance::{Instance, OrderConstraint};
use crate::lowerbound::{build_tree, embed_line, to_exact_instance, LbTree, LineEmbedding, LowerBoundError, Variant};
use crate::policy::{adaptive_policy_a, eval_adaptive_exact, eval_na_exact_capped, eval_na_mc, DecisionTree, NaPolicy, NaState};

pub const DIRECTED_EXHAUSTIVE_MAX: u32 = 5;
pub const LINE_EXHAUSTIVE_MAX: u32 = 4;
pub const UNDIRECTED_STRUCTURED_MAX: u32 = 4;
pub const DP_MAX_VERTICES: usize = 7;
pub const DP_MAX_BUDGET: u64 = 64;
pub const BRUTEFORCE_MAX_VERTICES: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum GapError {
    #[error("L={levels} too large for {mode} search of the {variant} class (max {max})")]
    TooLarge {
        levels: u32,
        variant: Variant,
        mode: SearchMode,
        max: u32,
    },
    #[error("instance too large for exact search: {0}")]
    StateSpace(String),
    #[error(transparent)]
    LowerBound(#[from] LowerBoundError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Exhaustive,
    Structured,
    Heuristic,
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchMode::Exhaustive => "exhaustive",
            SearchMode::Structured => "structured",
            SearchMode::Heuristic => "heuristic",
        })
    }
}

impl FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exhaustive" => Ok(SearchMode::Exhaustive),
            "structured" => Ok(SearchMode::Structured),
            "heuristic" => Ok(SearchMode::Heuristic),
            other => Err(format!("unknown search mode `{other}`")),
        }
    }
}

/// Parameters of the heuristic (beam) search.
#[derive(Debug, Clone, Copy)]
pub struct BeamParams {
    pub width: usize,
    pub samples: u64,
    pub seed: u64,
    /// Candidates re-evaluated exactly at the end.
    pub finalists: usize,
}

impl Default for BeamParams {
    fn default() -> Self {
        BeamParams {
            width: 16,
            samples: 1024,
            seed: 0,
            finalists: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport<F> {
    pub levels: u32,
    pub variant: Variant,
    pub adaptive_value: F,
    pub best_na_value: F,
    pub best_na_policy: NaPolicy<F>,
    pub ratio: F,
    pub mode: SearchMode,
}

/// Running maximum with ties broken towards the lexicographically smallest
/// route.
#[derive(Debug, Clone)]
struct Best<F> {
    route: Vec<usize>,
    value: F,
}

impl<F: Field> Best<F> {
    fn new() -> Self {
        Best {
            route: Vec::new(),
            value: F::zero(),
        }
    }

    fn offer(&mut self, route: &[usize], value: &F) {
        let better = match value.partial_cmp(&self.value) {
            Some(Ordering::Greater) => true,
            Some(Ordering::Equal) => route < self.route.as_slice(),
            _ => false,
        };
        if better {
            self.route = route.to_vec();
            self.value = value.clone();
        }
    }

    fn into_result(self) -> (NaPolicy<F>, F) {
        (NaPolicy::plain(self.route), self.value)
    }
}

/// Position in the decision sequence that generates one class of routes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Cursor {
    /// Next node of the tree path to decide on; `None` once past a leaf.
    Directed(Option<usize>),
    /// Next index into the line order.
    Line(usize),
    /// Current right-edge chain (top-down) and the next chain index; at the
    /// end of the chain the walk leaves through some chain node's left edge.
    Chain(Vec<usize>, usize),
    Done,
}

fn chain_from(tree: &LbTree, top: usize) -> Vec<usize> {
    let mut chain = vec![top];
    while let Some(r) = tree.right(*chain.last().expect("non-empty")) {
        chain.push(r);
    }
    chain
}

struct Space<'a> {
    tree: &'a LbTree,
    emb: Option<LineEmbedding>,
}

impl Space<'_> {
    fn start(&self, variant: Variant) -> Cursor {
        match variant {
            Variant::DirectedTree => Cursor::Directed(Some(0)),
            Variant::Line => Cursor::Line(0),
            Variant::UndirectedTree => Cursor::Chain(chain_from(self.tree, 0), 0),
        }
    }

    /// Successor cursors, each with the vertex appended to the route (if any).
    fn successors(&self, cur: &Cursor) -> Vec<(Cursor, Option<usize>)> {
        match cur {
            Cursor::Done | Cursor::Directed(None) => Vec::new(),
            Cursor::Directed(Some(c)) => {
                let nexts: Vec<Cursor> = match (self.tree.left(*c), self.tree.right(*c)) {
                    (Some(l), Some(r)) => vec![Cursor::Directed(Some(l)), Cursor::Directed(Some(r))],
                    _ => vec![Cursor::Directed(None)],
                };
                let mut out = Vec::new();
                for nx in nexts {
                    out.push((nx.clone(), None));
                    out.push((nx, Some(*c)));
                }
                out
            }
            Cursor::Line(i) => {
                let order = &self.emb.as_ref().expect("line space has an embedding").order;
                if *i >= order.len() {
                    return Vec::new();
                }
                vec![(Cursor::Line(i + 1), None), (Cursor::Line(i + 1), Some(order[*i]))]
            }
            Cursor::Chain(chain, i) => {
                if *i < chain.len() {
                    let nx = Cursor::Chain(chain.clone(), i + 1);
                    return vec![(nx.clone(), None), (nx, Some(chain[*i]))];
                }
                let mut out = vec![(Cursor::Done, None)];
                for &x in chain {
                    if let Some(l) = self.tree.left(x) {
                        out.push((Cursor::Chain(chain_from(self.tree, l), 0), None));
                    }
                }
                out
            }
        }
    }
}

fn exhaustive<F: Field>(space: &Space, inst: &Instance<F>, start: Cursor) -> (NaPolicy<F>, F) {
    let mut best = Best::new();
    let mut route = Vec::new();
    fn go<F: Field>(
        space: &Space,
        inst: &Instance<F>,
        cur: &Cursor,
        state: &NaState<F>,
        route: &mut Vec<usize>,
        best: &mut Best<F>,
    ) {
        best.offer(route, state.value());
        if state.is_dead() {
            return;
        }
        for (next, add) in space.successors(cur) {
            match add {
                Some(v) => {
                    let st = state.extend(inst, v, &F::one());
                    route.push(v);
                    go(space, inst, &next, &st, route, best);
                    route.pop();
                }
                None => go(space, inst, &next, state, route, best),
            }
        }
    }
    go(space, inst, &start, &NaState::start(inst), &mut route, &mut best);
    best.into_result()
}

fn heuristic<F: Field>(space: &Space, inst: &Instance<F>, start: Cursor, params: BeamParams) -> Result<(NaPolicy<F>, F), GapError> {
    let mut scores: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut score = |route: &[usize]| -> f64 {
        if let Some(s) = scores.get(route) {
            return *s;
        }
        let s = eval_na_mc(inst, &NaPolicy::plain(route.to_vec()), params.samples, params.seed).mean;
        scores.insert(route.to_vec(), s);
        s
    };
    let mut beam: Vec<(Cursor, Vec<usize>)> = vec![(start, Vec::new())];
    loop {
        let mut next: Vec<(Cursor, Vec<usize>, f64)> = Vec::new();
        for (cur, route) in &beam {
            for (nc, add) in space.successors(cur) {
                let mut r = route.clone();
                r.extend(add);
                let s = score(&r);
                next.push((nc, r, s));
            }
        }
        if next.is_empty() {
            break;
        }
        next.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.1.cmp(&b.1)));
        next.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        next.truncate(params.width);
        beam = next.into_iter().map(|(c, r, _)| (c, r)).collect();
    }
    let mut pool: Vec<(Vec<usize>, f64)> = scores.into_iter().collect();
    pool.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    pool.truncate(params.finalists);
    let mut best = Best::new();
    for (route, _) in pool {
        let v = eval_na_exact_capped(inst, &NaPolicy::plain(route.clone()), usize::MAX)?;
        best.offer(&route, &v);
    }
    Ok(best.into_result())
}

fn check_size(levels: u32, variant: Variant, mode: SearchMode, max: u32) -> Result<(), GapError> {
    if levels > max {
        return Err(GapError::TooLarge {
            levels,
            variant,
            mode,
            max,
        });
    }
    Ok(())
}

/// Best policy that follows a root-leaf path of the directed tree, skipping
/// any subset of its nodes. Exhaustive.
pub fn best_directed_na<F: Field>(tree: &LbTree, inst: &Instance<F>) -> Result<(NaPolicy<F>, F), GapError> {
    check_size(tree.levels, Variant::DirectedTree, SearchMode::Exhaustive, DIRECTED_EXHAUSTIVE_MAX)?;
    let space = Space { tree, emb: None };
    Ok(exhaustive(&space, inst, space.start(Variant::DirectedTree)))
}

/// Best subset of nodes visited in line order (coordinate, then level
/// descending).
pub fn best_line_na<F: Field>(
    tree: &LbTree,
    inst: &Instance<F>,
    mode: SearchMode,
    params: BeamParams,
) -> Result<(NaPolicy<F>, F), GapError> {
    let space = Space {
        tree,
        emb: Some(embed_line(tree)),
    };
    let start = space.start(Variant::Line);
    match mode {
        SearchMode::Exhaustive => {
            check_size(tree.levels, Variant::Line, mode, LINE_EXHAUSTIVE_MAX)?;
            Ok(exhaustive(&space, inst, start))
        }
        SearchMode::Heuristic => heuristic(&space, inst, start, params),
        SearchMode::Structured => Err(GapError::TooLarge {
            levels: tree.levels,
            variant: Variant::Line,
            mode,
            max: 0,
        }),
    }
}

/// Best walk on the undirected tree that never backtracks over a left edge:
/// a subset of each right-edge chain, top-down, then a left edge out of one
/// of the chain's nodes.
pub fn best_undirected_tree_na<F: Field>(
    tree: &LbTree,
    inst: &Instance<F>,
    mode: SearchMode,
    params: BeamParams,
) -> Result<(NaPolicy<F>, F), GapError> {
    let space = Space { tree, emb: None };
    let start = space.start(Variant::UndirectedTree);
    match mode {
        SearchMode::Structured | SearchMode::Exhaustive => {
            check_size(tree.levels, Variant::UndirectedTree, SearchMode::Structured, UNDIRECTED_STRUCTURED_MAX)?;
            Ok(exhaustive(&space, inst, start))
        }
        SearchMode::Heuristic => heuristic(&space, inst, start, params),
    }
}

/// Gap report for one height and variant with exact `p = 1/sqrt(L)`.
/// Exhaustive (or structured) search is used inside its size limit and the
/// beam search beyond it.
pub fn gap_report(levels: u32, variant: Variant, params: BeamParams) -> Result<GapReport<QuadSurd>, GapError> {
    gap_report_with(levels, variant, None, params)
}

/// The search mode picked by [`gap_report`].
pub fn default_mode(levels: u32, variant: Variant) -> SearchMode {
    let (max, exact) = match variant {
        Variant::DirectedTree => (DIRECTED_EXHAUSTIVE_MAX, SearchMode::Exhaustive),
        Variant::Line => (LINE_EXHAUSTIVE_MAX, SearchMode::Exhaustive),
        Variant::UndirectedTree => (UNDIRECTED_STRUCTURED_MAX, SearchMode::Structured),
    };
    if levels <= max {
        exact
    } else {
        SearchMode::Heuristic
    }
}

/// [`gap_report`] with an explicit search mode; a mode outside its size
/// limit is an error.
pub fn gap_report_with(
    levels: u32,
    variant: Variant,
    mode: Option<SearchMode>,
    params: BeamParams,
) -> Result<GapReport<QuadSurd>, GapError> {
    let mode = mode.unwrap_or_else(|| default_mode(levels, variant));
    let tree = build_tree(levels)?;
    let inst = to_exact_instance(&tree, variant);
    let adaptive = eval_adaptive_exact(&inst, &adaptive_policy_a(&tree))?;
    let (policy, value) = match (variant, mode) {
        (Variant::DirectedTree, SearchMode::Heuristic) => {
            let space = Space { tree: &tree, emb: None };
            heuristic(&space, &inst, space.start(variant), params)?
        }
        (Variant::DirectedTree, _) => best_directed_na(&tree, &inst)?,
        (Variant::Line, _) => best_line_na(&tree, &inst, mode, params)?,
        (Variant::UndirectedTree, _) => best_undirected_tree_na(&tree, &inst, mode, params)?,
    };
    let ratio = adaptive.clone() / value.clone();
    Ok(GapReport {
        levels,
        variant,
        adaptive_value: adaptive,
        best_na_value: value,
        best_na_policy: policy,
        ratio,
        mode,
    })
}

/// One report per height per variant, heights ascending.
pub fn gap_table(
    levels: impl IntoIterator<Item = u32>,
    variants: &[Variant],
    params: BeamParams,
) -> Result<Vec<GapReport<QuadSurd>>, GapError> {
    let mut out = Vec::new();
    for l in levels {
        for &v in variants {
            out.push(gap_report(l, v, params)?);
        }
    }
    Ok(out)
}

/// Small-integer view of an instance for the DP searches.
struct SmallInst<'a, F> {
    inst: &'a Instance<F>,
    dist: Vec<Vec<u64>>,
    sizes: Vec<Vec<u64>>,
    budget: u64,
}

impl<'a, F: Field> SmallInst<'a, F> {
    fn new(inst: &'a Instance<F>, max_n: usize, max_budget: u64) -> Result<Self, GapError> {
        if inst.n() > max_n {
            return Err(GapError::StateSpace(format!("{} vertices (max {max_n})", inst.n())));
        }
        let budget = u64::try_from(inst.budget().clone())
            .ok()
            .filter(|&b| b <= max_budget)
            .ok_or_else(|| GapError::StateSpace(format!("budget {} (max {max_budget})", inst.budget())))?;
        let dist = inst
            .small_dist_matrix()
            .ok_or_else(|| GapError::StateSpace("distances exceed 64 bits".into()))?;
        let sizes = inst
            .jobs()
            .iter()
            .map(|j| {
                j.outcomes()
                    .iter()
                    .map(|o| u64::try_from(o.size.clone()).map_err(|_| GapError::StateSpace("size exceeds 64 bits".into())))
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        Ok(SmallInst {
            inst,
            dist,
            sizes,
            budget,
        })
    }
}

type DpKey = (u32, usize, u64);

struct AdaptiveDp<'a, F> {
    s: SmallInst<'a, F>,
    memo: HashMap<DpKey, (F, Option<usize>)>,
}

impl<F: Field> AdaptiveDp<'_, F> {
    fn value(&mut self, mask: u32, cur: usize, t: u64) -> F {
        if let Some((v, _)) = self.memo.get(&(mask, cur, t)) {
            return v.clone();
        }
        let mut best = F::zero();
        let mut choice = None;
        for v in 0..self.s.inst.n() {
            if mask & (1 << v) != 0 {
                continue;
            }
            let arrive = t + self.s.dist[cur][v];
            if arrive > self.s.budget {
                continue;
            }
            let mut val = F::zero();
            for (k, o) in self.s.inst.job(v).outcomes().iter().enumerate() {
                let done = arrive + self.s.sizes[v][k];
                if done > self.s.budget || o.prob.is_zero() {
                    continue;
                }
                let rest = self.value(mask | (1 << v), v, done);
                val = val + o.prob.clone() * (o.reward.clone() + rest);
            }
            if val > best {
                best = val;
                choice = Some(v);
            }
        }
        self.memo.insert((mask, cur, t), (best.clone(), choice));
        best
    }

    fn choice(&mut self, mask: u32, cur: usize, t: u64) -> Option<usize> {
        self.value(mask, cur, t);
        self.memo[&(mask, cur, t)].1
    }

    fn build(&mut self) -> DecisionTree {
        let inst = self.s.inst;
        let root = inst.root();
        let Some(first) = self.choice(0, root, 0) else {
            return DecisionTree::empty();
        };
        let mut tree = DecisionTree::with_root(inst, first);
        let mut stack = vec![(0usize, 1u32 << first, first, self.s.dist[root][first])];
        while let Some((node, mask, v, arrive)) = stack.pop() {
            for k in 0..inst.job(v).outcomes().len() {
                let done = arrive + self.s.sizes[v][k];
                if done > self.s.budget || inst.job(v).outcomes()[k].prob.is_zero() {
                    continue;
                }
                if let Some(w) = self.choice(mask, v, done) {
                    let child = tree.add_child(inst, node, k, w).expect("dp tree is consistent");
                    stack.push((child, mask | (1 << w), w, done + self.s.dist[v][w]));
                }
            }
        }
        tree
    }
}

/// Exact optimal adaptive policy by memoised recursion over (visited set,
/// current vertex, time used). Ties go to the smallest vertex.
pub fn optimal_adaptive_dp<F: Field>(inst: &Instance<F>) -> Result<(DecisionTree, F), GapError> {
    let s = SmallInst::new(inst, DP_MAX_VERTICES, DP_MAX_BUDGET)?;
    let mut dp = AdaptiveDp {
        s,
        memo: HashMap::new(),
    };
    let value = dp.value(0, inst.root(), 0);
    let tree = dp.build();
    Ok((tree, value))
}

/// Exact best non-adaptive route (every job attempted) over all ordered
/// subsets of vertices.
pub fn optimal_na_bruteforce<F: Field>(inst: &Instance<F>) -> Result<(NaPolicy<F>, F), GapError> {
    if inst.n() > BRUTEFORCE_MAX_VERTICES {
        return Err(GapError::StateSpace(format!(
            "{} vertices (max {BRUTEFORCE_MAX_VERTICES})",
            inst.n()
        )));
    }
    let allowed = |route: &[usize], v: usize| match inst.order() {
        OrderConstraint::None => true,
        OrderConstraint::DirectedTree { parent } => match route.last() {
            None => true,
            Some(&last) => {
                let mut cur = v;
                while let Some(p) = parent[cur] {
                    if p == last {
                        return true;
                    }
                    cur = p;
                }
                false
            }
        },
    };
    let mut best = Best::new();
    let mut route = Vec::new();
    let mut used = vec![false; inst.n()];
    #[allow(clippy::too_many_arguments)]
    fn go<F: Field>(
        inst: &Instance<F>,
        state: &NaState<F>,
        route: &mut Vec<usize>,
        used: &mut [bool],
        best: &mut Best<F>,
        allowed: &dyn Fn(&[usize], usize) -> bool,
    ) {
        best.offer(route, state.value());
        if state.is_dead() {
            return;
        }
        for v in 0..inst.n() {
            if used[v] || !allowed(route, v) {
                continue;
            }
            let st = state.extend(inst, v, &F::one());
            used[v] = true;
            route.push(v);
            go(inst, &st, route, used, best, allowed);
            route.pop();
            used[v] = false;
        }
    }
    go(inst, &NaState::start(inst), &mut route, &mut used, &mut best, &allowed);
    Ok(best.into_result())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{rat, Rational};
    use crate::instance::{JobDist, Metric, Outcome};
    use crate::lowerbound::exact_p;
    use crate::policy::eval_na_exact;
    use crate::random::{random_instance, RandomSpec};
    use num_traits::Zero;

    fn q(n: i64, d: i64) -> QuadSurd {
        QuadSurd::rational(rat(n, d))
    }

    fn nat(v: u64) -> crate::instance::ExactInt {
        crate::instance::ExactInt::from(v)
    }

    #[test]
    fn two_level_searches() {
        let t = build_tree(2).unwrap();
        let d = to_exact_instance(&t, Variant::DirectedTree);
        let (pol, v) = best_directed_na(&t, &d).unwrap();
        assert_eq!(v, q(3, 2));
        assert_eq!(pol.route, vec![0, 1]);
        let l = to_exact_instance(&t, Variant::Line);
        let (_, v) = best_line_na(&t, &l, SearchMode::Exhaustive, BeamParams::default()).unwrap();
        assert_eq!(v, q(3, 2));
        let u = to_exact_instance(&t, Variant::UndirectedTree);
        let (_, v) = best_undirected_tree_na(&t, &u, SearchMode::Structured, BeamParams::default()).unwrap();
        assert_eq!(v, q(3, 2));
    }

    #[test]
    fn single_level_everything_is_one() {
        for variant in [Variant::DirectedTree, Variant::UndirectedTree, Variant::Line] {
            let r = gap_report(1, variant, BeamParams::default()).unwrap();
            assert_eq!(r.best_na_value, q(1, 1));
            assert_eq!(r.ratio, q(1, 1));
        }
    }

    #[test]
    fn searched_classes_respect_paper_bounds() {
        for levels in 2..=4 {
            let t = build_tree(levels).unwrap();
            let p = exact_p(levels);
            let inv = QuadSurd::rational(rat(1, 1)) / p;
            let d = to_exact_instance(&t, Variant::DirectedTree);
            let (_, v) = best_directed_na(&t, &d).unwrap();
            assert!(v <= q(3, 1) * inv.clone());
            let u = to_exact_instance(&t, Variant::UndirectedTree);
            let (_, v) = best_undirected_tree_na(&t, &u, SearchMode::Structured, BeamParams::default()).unwrap();
            assert!(v <= q(5, 1) * inv.clone());
            let l = to_exact_instance(&t, Variant::Line);
            let (_, v) = best_line_na(&t, &l, SearchMode::Exhaustive, BeamParams::default()).unwrap();
            assert!(v <= q(634, 100) * inv);
        }
    }

    #[test]
    fn line_search_limits() {
        let t = build_tree(5).unwrap();
        let l = to_exact_instance(&t, Variant::Line);
        assert!(best_line_na(&t, &l, SearchMode::Exhaustive, BeamParams::default()).is_err());
    }

    #[test]
    fn top_down_chain_order_is_optimal() {
        // Within a chain all nodes share a location; compare the top-down
        // order against every permutation of the same subset.
        fn perms(v: &[usize]) -> Vec<Vec<usize>> {
            if v.len() <= 1 {
                return vec![v.to_vec()];
            }
            let mut out = Vec::new();
            for i in 0..v.len() {
                let mut rest = v.to_vec();
                let x = rest.remove(i);
                for mut p in perms(&rest) {
                    p.insert(0, x);
                    out.push(p);
                }
            }
            out
        }
        for levels in 2..=3 {
            let t = build_tree(levels).unwrap();
            let inst = to_exact_instance(&t, Variant::UndirectedTree);
            let chain = chain_from(&t, 0);
            for mask in 1u32..(1 << chain.len()) {
                let subset: Vec<usize> = (0..chain.len()).filter(|i| mask & (1 << i) != 0).map(|i| chain[i]).collect();
                let top_down = eval_na_exact(&inst, &NaPolicy::plain(subset.clone())).unwrap();
                for p in perms(&subset) {
                    assert!(eval_na_exact(&inst, &NaPolicy::plain(p)).unwrap() <= top_down);
                }
            }
        }
    }

    #[test]
    fn gap_rows() {
        let r = gap_report(2, Variant::Line, BeamParams::default()).unwrap();
        assert_eq!((r.adaptive_value.clone(), r.best_na_value.clone()), (q(3, 2), q(3, 2)));
        assert_eq!(r.ratio, q(1, 1));
        assert_eq!(r.mode, SearchMode::Exhaustive);
        let r = gap_report(4, Variant::DirectedTree, BeamParams::default()).unwrap();
        assert_eq!(r.adaptive_value, q(175, 64));
        let t = build_tree(4).unwrap();
        let (_, v) = best_directed_na(&t, &to_exact_instance(&t, Variant::DirectedTree)).unwrap();
        assert_eq!(r.ratio, q(175, 64) / v);
    }

    #[test]
    fn heuristic_is_a_lower_bound_on_exhaustive() {
        let t = build_tree(3).unwrap();
        let l = to_exact_instance(&t, Variant::Line);
        let params = BeamParams {
            seed: 5,
            ..BeamParams::default()
        };
        let (_, h) = best_line_na(&t, &l, SearchMode::Heuristic, params).unwrap();
        let (_, e) = best_line_na(&t, &l, SearchMode::Exhaustive, params).unwrap();
        assert!(h <= e);
        assert!(h > q(0, 1));
    }

    fn single(job: JobDist<Rational>, budget: u64) -> Instance<Rational> {
        Instance::new(
            Metric::Matrix(vec![vec![nat(0)]]),
            vec![job],
            0,
            nat(budget),
            OrderConstraint::None,
        )
        .unwrap()
    }

    #[test]
    fn dp_single_vertex() {
        let job = JobDist::bernoulli(rat(1, 3), nat(2), rat(5, 1));
        let inst = single(job, 4);
        let (tree, v) = optimal_adaptive_dp(&inst).unwrap();
        assert_eq!(v, rat(5, 1));
        assert_eq!(eval_adaptive_exact(&inst, &tree).unwrap(), v);
        let (pol, w) = optimal_na_bruteforce(&inst).unwrap();
        assert_eq!((pol.route, w), (vec![0], rat(5, 1)));
    }

    #[test]
    fn adaptivity_helps_on_crafted_pair() {
        // Root job: size 0 or 3 each w.p. 1/2. Vertex 1 (distance 0) pays
        // only when little budget is used; vertex 2 (distance 1) is a
        // consolation prize that fits after the large outcome.
        let root = JobDist::table(vec![
            Outcome { prob: rat(1, 2), size: nat(0), reward: rat(10, 1) },
            Outcome { prob: rat(1, 2), size: nat(3), reward: rat(10, 1) },
        ]);
        let big = JobDist::deterministic(nat(4), rat(4, 1));
        let small = JobDist::deterministic(nat(0), rat(1, 1));
        let m = vec![
            vec![nat(0), nat(0), nat(1)],
            vec![nat(0), nat(0), nat(1)],
            vec![nat(1), nat(1), nat(0)],
        ];
        let inst = Instance::new(Metric::Matrix(m), vec![root, big, small], 0, nat(4), OrderConstraint::None).unwrap();
        let (tree, ad) = optimal_adaptive_dp(&inst).unwrap();
        let (_, na) = optimal_na_bruteforce(&inst).unwrap();
        assert!(ad > na, "{ad} vs {na}");
        assert_eq!(eval_adaptive_exact(&inst, &tree).unwrap(), ad);
    }

    /// Best deterministic orienteering value by trying every ordered subset.
    fn deterministic_oracle(inst: &Instance<Rational>) -> Rational {
        let n = inst.n();
        let b = u64::try_from(inst.budget().clone()).unwrap();
        let size = |v: usize| u64::try_from(inst.job(v).outcomes()[0].size.clone()).unwrap();
        let d = inst.small_dist_matrix().unwrap();
        let mut best = Rational::zero();
        fn rec(
            inst: &Instance<Rational>,
            d: &[Vec<u64>],
            size: &dyn Fn(usize) -> u64,
            b: u64,
            at: usize,
            t: u64,
            used: &mut Vec<bool>,
            acc: Rational,
            best: &mut Rational,
        ) {
            if acc > *best {
                *best = acc.clone();
            }
            for v in 0..used.len() {
                if used[v] {
                    continue;
                }
                let done = t + d[at][v] + size(v);
                if done > b {
                    continue;
                }
                used[v] = true;
                let r = inst.job(v).outcomes()[0].reward.clone();
                rec(inst, d, size, b, v, done, used, acc.clone() + r, best);
                used[v] = false;
            }
        }
        rec(inst, &d, &size, b, inst.root(), 0, &mut vec![false; n], Rational::zero(), &mut best);
        best
    }

    #[test]
    fn deterministic_instances_have_no_gap() {
        for seed in 0..10 {
            let mut spec = RandomSpec::small(5, 12);
            spec.max_outcomes = 1;
            let inst = random_instance(spec, seed);
            let (_, ad) = optimal_adaptive_dp(&inst).unwrap();
            let (_, na) = optimal_na_bruteforce(&inst).unwrap();
            assert_eq!(ad, na);
            assert_eq!(ad, deterministic_oracle(&inst));
        }
    }

    #[test]
    fn adaptive_dominates_non_adaptive() {
        for seed in 0..25 {
            let inst = random_instance(RandomSpec::small(5, 20), 100 + seed);
            let (tree, ad) = optimal_adaptive_dp(&inst).unwrap();
            let (pol, na) = optimal_na_bruteforce(&inst).unwrap();
            assert!(na <= ad);
            assert_eq!(eval_adaptive_exact(&inst, &tree).unwrap(), ad);
            assert_eq!(eval_na_exact(&inst, &pol).unwrap(), na);
        }
    }

    #[test]
    fn dp_limits() {
        let inst = random_instance(RandomSpec::small(8, 20), 1);
        assert!(optimal_adaptive_dp(&inst).is_err());
        let inst = random_instance(RandomSpec::small(3, 100), 1);
        assert!(optimal_adaptive_dp(&inst).is_err());
    }
}
