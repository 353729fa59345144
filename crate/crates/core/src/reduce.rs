//! From an adaptive decision tree to a non-adaptive policy: star nodes, the
//! heavy path sigma, portal vertices and the shortcut segments used by the
//! approximation algorithm.

use std::ops::Range;

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;

use crate::field::{pow2, signed_diff, Field, Rational};
use crate::gapsearch::{optimal_adaptive_dp, GapError};
use crate::instance::{ExactInt, Instance};
use crate::policy::{
    eval_na_exact, mc_chunked, node_reward, reach_probabilities, validate_tree, DecisionTree, McEstimate, NaPolicy,
    PolicyError,
};

pub const MIN_K: u64 = 12;

#[derive(Debug, thiserror::Error)]
pub enum ReduceError {
    #[error("K = {0} is below {MIN_K}")]
    KTooSmall(Rational),
    #[error("truncation lost {lost} > Opt/2 (Opt = {opt})")]
    TruncationLoss { lost: String, opt: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Gap(#[from] GapError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarParams {
    pub k: Rational,
    /// Largest band index, `ceil(log2 B)`.
    pub bands: u32,
}

impl StarParams {
    /// `max(12, 3 ln(6 log2 B) + 12)` rounded up to a multiple of 1/1024.
    pub fn default_k(budget: &ExactInt) -> Rational {
        let lb = budget.to_f64().map(f64::log2).unwrap_or(budget.bits() as f64);
        let x = if lb > 0.0 { 3.0 * (6.0 * lb).ln() + 12.0 } else { 0.0 };
        let x = x.max(MIN_K as f64);
        Rational::new(BigInt::from((x * 1024.0).ceil() as i64), BigInt::from(1024))
    }

    pub fn auto<F: Field>(inst: &Instance<F>) -> Self {
        StarParams {
            k: Self::default_k(inst.budget()),
            bands: inst.max_band(),
        }
    }

    pub fn new<F: Field>(inst: &Instance<F>, k: Rational) -> Result<Self, ReduceError> {
        if k < Rational::from_integer(BigInt::from(MIN_K)) {
            return Err(ReduceError::KTooSmall(k));
        }
        Ok(StarParams {
            k,
            bands: inst.max_band(),
        })
    }

    fn k_times(&self, j: u32) -> Rational {
        &self.k * Rational::from_integer(BigInt::from(pow2(j)))
    }
}

fn capped(size: &ExactInt, j: u32) -> ExactInt {
    size.clone().min(pow2(j))
}

/// Smallest capped size among outcomes with positive probability.
fn min_capped<F: Field>(inst: &Instance<F>, v: usize, j: u32) -> ExactInt {
    inst.job(v)
        .outcomes()
        .iter()
        .filter(|o| o.prob > F::zero())
        .map(|o| capped(&o.size, j))
        .min()
        .unwrap_or_default()
}

/// Per node and band: realized capped size strictly above the node and
/// capped mean including the node.
struct BandSums<F> {
    x_before: Vec<Vec<ExactInt>>,
    mean_incl: Vec<Vec<F>>,
}

fn band_sums<F: Field>(inst: &Instance<F>, tree: &DecisionTree, bands: u32) -> BandSums<F> {
    let nb = bands as usize + 1;
    let mut x_before = vec![vec![ExactInt::zero(); nb]; tree.len()];
    let mut mean_incl = vec![vec![F::zero(); nb]; tree.len()];
    for u in tree.preorder() {
        let node = tree.node(u);
        let job = inst.job(node.vertex);
        for j in 0..=bands {
            let (xb, mb) = match node.parent {
                None => (ExactInt::zero(), F::zero()),
                Some((p, k)) => {
                    let pv = tree.node(p).vertex;
                    let s = &inst.job(pv).outcomes()[k].size;
                    (&x_before[p][j as usize] + capped(s, j), mean_incl[p][j as usize].clone())
                }
            };
            x_before[u][j as usize] = xb;
            mean_incl[u][j as usize] = mb + job.capped_mean(j);
        }
    }
    BandSums { x_before, mean_incl }
}

fn is_star<F: Field>(inst: &Instance<F>, tree: &DecisionTree, sums: &BandSums<F>, params: &StarParams, u: usize, j: u32) -> bool {
    let x = &sums.x_before[u][j as usize] + min_capped(inst, tree.node(u).vertex, j);
    x <= pow2(j + 1) && sums.mean_incl[u][j as usize] > F::from_rational(&params.k_times(j))
}

/// Band-`j` star nodes. A node is a star when some outcome of its own job
/// keeps the realized capped size (node included) at most `2 * 2^j` while
/// the capped means up to and including it exceed `K * 2^j`.
pub fn star_nodes<F: Field>(inst: &Instance<F>, tree: &DecisionTree, params: &StarParams, j: u32) -> Vec<usize> {
    let sums = band_sums(inst, tree, params.bands.max(j));
    (0..tree.len()).filter(|&u| is_star(inst, tree, &sums, params, u, j)).collect()
}

/// Monte Carlo frequency of runs of `tree` that realize a band-`j` star
/// event: reaching a node whose realized outcome keeps the capped sum at most
/// `2 * 2^j` while the capped means exceed `K * 2^j`.
pub fn star_hit_mc<F: Field>(
    inst: &Instance<F>,
    tree: &DecisionTree,
    params: &StarParams,
    j: u32,
    samples: u64,
    seed: u64,
) -> McEstimate {
    let sums = band_sums(inst, tree, params.bands.max(j));
    let limit = pow2(j + 1);
    let kj = F::from_rational(&params.k_times(j));
    let heavy: Vec<bool> = (0..tree.len()).map(|u| sums.mean_incl[u][j as usize] > kj).collect();
    let cumulative: Vec<Vec<f64>> = tree
        .nodes()
        .iter()
        .map(|n| {
            let mut acc = 0.0;
            inst.job(n.vertex)
                .outcomes()
                .iter()
                .map(|o| {
                    acc += o.prob.to_f64();
                    acc
                })
                .collect()
        })
        .collect();
    mc_chunked(samples, seed, |rng| {
        if tree.is_empty() {
            return 0.0;
        }
        let mut u = 0;
        loop {
            let k = crate::policy::pick(&cumulative[u], rng.gen::<f64>());
            let node = tree.node(u);
            if heavy[u] {
                let s = &inst.job(node.vertex).outcomes()[k].size;
                if &sums.x_before[u][j as usize] + capped(s, j) <= limit {
                    return 1.0;
                }
            }
            match node.children[k] {
                Some(c) => u = c,
                None => return 0.0,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaNode<F> {
    pub tree_node: usize,
    pub vertex: usize,
    /// `d_u`: distance travelled before the node.
    pub travel: ExactInt,
    /// `i_u`: size observed before the node.
    pub observed: ExactInt,
    pub rbar: F,
    /// Outcome leading to the next node; `None` on the last node.
    pub outcome: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPath<F> {
    pub nodes: Vec<SigmaNode<F>>,
    pub params: StarParams,
    pub tree_value: F,
    /// Expected reward removed by truncating before star nodes.
    pub lost: F,
}

impl<F: Field> SigmaPath<F> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn vertices(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.vertex).collect()
    }

    pub fn total_reward(&self) -> F {
        self.nodes.iter().fold(F::zero(), |a, n| a + n.rbar.clone())
    }

    /// Realized capped size of node `i`; for the last node, its smallest
    /// possible one.
    fn realized_x(&self, inst: &Instance<F>, i: usize, j: u32) -> ExactInt {
        let n = &self.nodes[i];
        match n.outcome {
            Some(k) => capped(&inst.job(n.vertex).outcomes()[k].size, j),
            None => min_capped(inst, n.vertex, j),
        }
    }

    /// `(index, band)` pairs where neither `sum X^j > 2 * 2^j` nor
    /// `sum mu^j <= K * 2^j` holds for the prefix ending at the index.
    pub fn prefix_size_violations(&self, inst: &Instance<F>) -> Vec<(usize, u32)> {
        let mut out = Vec::new();
        for j in 0..=self.params.bands {
            let kj = F::from_rational(&self.params.k_times(j));
            let mut x = ExactInt::zero();
            let mut m = F::zero();
            for i in 0..self.nodes.len() {
                x += self.realized_x(inst, i, j);
                m = m + inst.job(self.nodes[i].vertex).capped_mean(j);
                if x <= pow2(j + 1) && m > kj {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Truncate `tree` before every star node (of any band) and return the
/// root path with the largest total `rbar`. Errors when truncation loses
/// more than half of the tree's value.
pub fn extract_sigma<F: Field>(inst: &Instance<F>, tree: &DecisionTree, params: &StarParams) -> Result<SigmaPath<F>, ReduceError> {
    validate_tree(inst, tree)?;
    let sums = band_sums(inst, tree, params.bands);
    let star: Vec<bool> = (0..tree.len())
        .map(|u| (0..=params.bands).any(|j| is_star(inst, tree, &sums, params, u, j)))
        .collect();
    extract_sigma_with(inst, tree, params, &star)
}

fn extract_sigma_with<F: Field>(
    inst: &Instance<F>,
    tree: &DecisionTree,
    params: &StarParams,
    star: &[bool],
) -> Result<SigmaPath<F>, ReduceError> {
    let reach = reach_probabilities(inst, tree);
    let rbar: Vec<F> = tree.nodes().iter().map(|n| node_reward(inst, n)).collect();
    let mut cut = vec![false; tree.len()];
    let mut prefix = vec![F::zero(); tree.len()];
    let (mut total, mut lost) = (F::zero(), F::zero());
    let mut best: Option<usize> = None;
    for u in tree.preorder() {
        let parent = tree.node(u).parent.map(|(p, _)| p);
        cut[u] = star[u] || parent.is_some_and(|p| cut[p]);
        let contrib = reach[u].clone() * rbar[u].clone();
        total = total + contrib.clone();
        if cut[u] {
            lost = lost + contrib;
            continue;
        }
        prefix[u] = parent.map_or(F::zero(), |p| prefix[p].clone()) + rbar[u].clone();
        if best.is_none_or(|b| prefix[u] > prefix[b]) {
            best = Some(u);
        }
    }
    if lost.clone() + lost.clone() > total {
        return Err(ReduceError::TruncationLoss {
            lost: lost.to_string(),
            opt: total.to_string(),
        });
    }
    let nodes = match best {
        None => Vec::new(),
        Some(s) => {
            let path = tree.path(s);
            path.iter()
                .enumerate()
                .map(|(i, &u)| {
                    let n = tree.node(u);
                    SigmaNode {
                        tree_node: u,
                        vertex: n.vertex,
                        travel: n.travel.clone(),
                        observed: n.observed.clone(),
                        rbar: rbar[u].clone(),
                        outcome: path.get(i + 1).map(|&c| tree.node(c).parent.expect("child").1),
                    }
                })
                .collect()
        }
    };
    Ok(SigmaPath {
        nodes,
        params: params.clone(),
        tree_value: total,
        lost,
    })
}

/// Visit sigma in order, attempting each job with probability `1/(4K)`.
pub fn na_from_sigma<F: Field>(sigma: &SigmaPath<F>) -> NaPolicy<F> {
    let four_k = Rational::from_integer(BigInt::from(4)) * &sigma.params.k;
    let prob = F::from_rational(&(Rational::from_integer(BigInt::from(1)) / four_k));
    NaPolicy::uniform(sigma.vertices(), prob)
}

/// Portal vertices on sigma. Position `n` (= sigma length) marks a portal
/// whose threshold is never reached; its location is then the last vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortalSet {
    /// The root, standing in for `v_{-1}`.
    pub start: usize,
    pub positions: Vec<usize>,
    pub locations: Vec<usize>,
    /// `O_j` as index ranges into sigma.
    pub segments: Vec<Range<usize>>,
}

impl PortalSet {
    /// `j` values whose prefix mean size exceeds `(K + 1) * 2^j`.
    pub fn prefix_mean_violations<F: Field>(&self, inst: &Instance<F>, sigma: &SigmaPath<F>) -> Vec<u32> {
        let k1 = &sigma.params.k + Rational::from_integer(BigInt::from(1));
        (0..self.segments.len() as u32)
            .filter(|&j| {
                let end = self.segments[j as usize].end;
                let m = sigma.nodes[..end]
                    .iter()
                    .fold(F::zero(), |a, n| a + inst.job(n.vertex).capped_mean(j));
                m > F::from_rational(&(&k1 * Rational::from_integer(BigInt::from(pow2(j)))))
            })
            .collect()
    }

    /// Vertex where segment `j` starts (`v_{j-1}`).
    pub fn segment_start(&self, j: usize) -> usize {
        if j == 0 {
            self.start
        } else {
            self.locations[j - 1]
        }
    }
}

/// `v_j` is the first sigma node with `i_u >= 2^{j+1} - 1`.
pub fn portals<F: Field>(inst: &Instance<F>, sigma: &SigmaPath<F>) -> PortalSet {
    let n = sigma.len();
    let last = sigma.nodes.last().map_or(inst.root(), |s| s.vertex);
    let mut positions = Vec::new();
    let mut locations = Vec::new();
    let mut segments = Vec::new();
    let mut prev = 0;
    for j in 0..=sigma.params.bands {
        let threshold = pow2(j + 1) - 1u32;
        let p = sigma.nodes.iter().position(|s| s.observed >= threshold).unwrap_or(n);
        positions.push(p);
        locations.push(if p < n { sigma.nodes[p].vertex } else { last });
        segments.push(prev..p);
        prev = p;
    }
    PortalSet {
        start: inst.root(),
        positions,
        locations,
        segments,
    }
}

/// The guessed quantities for one segment and the shortcut path `P_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGuess<F> {
    pub j: u32,
    pub start: usize,
    pub end: usize,
    /// Midpoint `m_j` as an index into sigma; `None` for an empty segment.
    pub mid: Option<usize>,
    pub epsilon: ExactInt,
    pub e: u32,
    /// `D_j = d(v_{j-1}, m_j) + d(m_j, v_j) + 2^{e_j} - 1`.
    pub length_bound: ExactInt,
    /// Length of `O_j` along sigma.
    pub sigma_length: ExactInt,
    pub path: Vec<usize>,
    pub path_length: ExactInt,
    /// `q(O_j)`.
    pub profit: F,
    /// Profit of the vertices kept in `P_j`.
    pub kept_profit: F,
}

fn band_deadline_eta<F: Field>(inst: &Instance<F>, v: usize, used: &ExactInt, j: u32) -> F {
    let arg = signed_diff(inst.budget(), used) - BigInt::from(pow2(j)) + 1;
    inst.job(v).eta(&arg)
}

/// Midpoint split of every segment and the shorter of its two shortcuts.
pub fn enum_segments<F: Field>(inst: &Instance<F>, sigma: &SigmaPath<F>, portals: &PortalSet) -> Vec<SegmentGuess<F>> {
    let n = sigma.len();
    let travel_at = |p: usize| -> ExactInt {
        if p < n {
            sigma.nodes[p].travel.clone()
        } else {
            sigma.nodes.last().map_or(ExactInt::zero(), |s| s.travel.clone())
        }
    };
    let mut out = Vec::new();
    for (jj, seg) in portals.segments.iter().enumerate() {
        let j = jj as u32;
        let a = portals.segment_start(jj);
        let b = portals.locations[jj];
        let ta = if jj == 0 { ExactInt::zero() } else { travel_at(portals.positions[jj - 1]) };
        let tb = travel_at(portals.positions[jj]);
        let sigma_length = &tb - &ta;
        let q: Vec<F> = seg
            .clone()
            .map(|i| band_deadline_eta(inst, sigma.nodes[i].vertex, &sigma.nodes[i].travel, j))
            .collect();
        let total = q.iter().fold(F::zero(), |acc, x| acc + x.clone());
        if seg.is_empty() {
            let d = inst.dist(a, b);
            out.push(SegmentGuess {
                j,
                start: a,
                end: b,
                mid: None,
                epsilon: ExactInt::zero(),
                e: 0,
                length_bound: d.clone(),
                sigma_length,
                path: Vec::new(),
                path_length: d,
                profit: total,
                kept_profit: F::zero(),
            });
            continue;
        }
        let mut acc = F::zero();
        let mut mid_off = q.len() - 1;
        for (o, x) in q.iter().enumerate() {
            acc = acc + x.clone();
            if acc.clone() + acc.clone() >= total {
                mid_off = o;
                break;
            }
        }
        let m = seg.start + mid_off;
        let mv = sigma.nodes[m].vertex;
        let l1 = &sigma.nodes[m].travel - &ta;
        let l2 = &tb - &sigma.nodes[m].travel;
        let b1 = inst.dist(a, mv);
        let b2 = inst.dist(mv, b);
        let eps_signed = signed_diff(&sigma_length, &(&b1 + &b2));
        let epsilon = eps_signed.to_biguint().unwrap_or_default();
        let e = (&epsilon + 1u32).bits() as u32 - 1;
        let length_bound = &b1 + &b2 + pow2(e) - 1u32;
        let (range, kept) = if &l1 + &b2 <= &b1 + &l2 {
            (seg.start..m + 1, &q[..=mid_off])
        } else {
            (m..seg.end, &q[mid_off..])
        };
        let path: Vec<usize> = range.map(|i| sigma.nodes[i].vertex).collect();
        let path_length = walk_length(inst, a, &path, b);
        out.push(SegmentGuess {
            j,
            start: a,
            end: b,
            mid: Some(m),
            epsilon,
            e,
            length_bound,
            sigma_length,
            path,
            path_length,
            profit: total,
            kept_profit: kept.iter().fold(F::zero(), |acc, x| acc + x.clone()),
        });
    }
    out
}

fn walk_length<F: Field>(inst: &Instance<F>, start: usize, path: &[usize], end: usize) -> ExactInt {
    let mut at = start;
    let mut len = ExactInt::zero();
    for &v in path {
        len += inst.dist(at, v);
        at = v;
    }
    len + inst.dist(at, end)
}

/// `sum_j sum_{u in P_j} eta_u(B - sum_{i<j} D_i - t_u - 2^j + 1)` where
/// `t_u` is the distance to `u` along `P_j`.
pub fn segment_reward<F: Field>(inst: &Instance<F>, segs: &[SegmentGuess<F>]) -> F {
    let mut offset = ExactInt::zero();
    let mut total = F::zero();
    for s in segs {
        let mut at = s.start;
        let mut t = ExactInt::zero();
        for &v in &s.path {
            t += inst.dist(at, v);
            at = v;
            total = total + band_deadline_eta(inst, v, &(&offset + &t), s.j);
        }
        offset += &s.length_bound;
    }
    total
}

/// Everything the reduction produces for one instance.
#[derive(Debug, Clone)]
pub struct ReduceOutcome {
    pub params: StarParams,
    pub dp_value: Rational,
    pub tree: DecisionTree,
    pub stars: Vec<Vec<usize>>,
    pub sigma: SigmaPath<Rational>,
    pub portals: PortalSet,
    pub segments: Vec<SegmentGuess<Rational>>,
    pub policy: NaPolicy<Rational>,
    pub policy_value: Rational,
}

/// Optimal adaptive tree by DP, then sigma, portals, segments and the
/// sampled non-adaptive policy with its exact value.
pub fn run_reduce(inst: &Instance<Rational>, params: StarParams) -> Result<ReduceOutcome, ReduceError> {
    let (tree, dp_value) = optimal_adaptive_dp(inst)?;
    let stars = (0..=params.bands).map(|j| star_nodes(inst, &tree, &params, j)).collect();
    let sigma = extract_sigma(inst, &tree, &params)?;
    let portals = portals(inst, &sigma);
    let segments = enum_segments(inst, &sigma, &portals);
    let policy = na_from_sigma(&sigma);
    let policy_value = eval_na_exact(inst, &policy)?;
    Ok(ReduceOutcome {
        params,
        dp_value,
        tree,
        stars,
        sigma,
        portals,
        segments,
        policy,
        policy_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::rat;
    use crate::instance::{nat, JobDist, Metric, OrderConstraint, Outcome};
    use crate::random::{random_instance, RandomSpec};

    fn params(k: i64, bands: u32) -> StarParams {
        StarParams { k: rat(k, 1), bands }
    }

    /// Chain of `n` co-located coin jobs (size 0 or 1, reward 1) that
    /// continues only after size 0.
    fn coin_chain(n: usize, budget: u64) -> (Instance<Rational>, DecisionTree) {
        let job = JobDist::table(vec![
            Outcome { prob: rat(1, 2), size: nat(0), reward: rat(1, 1) },
            Outcome { prob: rat(1, 2), size: nat(1), reward: rat(1, 1) },
        ]);
        let inst = Instance::new(
            Metric::Matrix(vec![vec![nat(0); n]; n]),
            vec![job; n],
            0,
            nat(budget),
            OrderConstraint::None,
        )
        .unwrap();
        let mut tree = DecisionTree::with_root(&inst, 0);
        for v in 1..n {
            tree.add_child(&inst, v - 1, 0, v).unwrap();
        }
        (inst, tree)
    }

    #[test]
    fn default_k() {
        assert_eq!(StarParams::default_k(&nat(1)), rat(12, 1));
        let k = StarParams::default_k(&nat(30));
        let want = 3.0 * (6.0 * 30f64.log2()).ln() + 12.0;
        let got = crate::field::rational_to_f64(&k);
        assert!(got >= want && got - want < 1.0 / 1024.0);
        assert!(k.denom() <= &BigInt::from(1024));
    }

    #[test]
    fn k_below_twelve_rejected() {
        let (inst, _) = coin_chain(2, 4);
        assert!(StarParams::new(&inst, rat(23, 2)).is_err());
        assert!(StarParams::new(&inst, rat(12, 1)).is_ok());
    }

    #[test]
    fn zero_sizes_have_no_stars() {
        let job = JobDist::deterministic(nat(0), rat(1, 1));
        let inst = Instance::new(Metric::Matrix(vec![vec![nat(0); 3]; 3]), vec![job; 3], 0, nat(8), OrderConstraint::None).unwrap();
        let mut tree = DecisionTree::with_root(&inst, 0);
        tree.add_child(&inst, 0, 0, 1).unwrap();
        tree.add_child(&inst, 1, 0, 2).unwrap();
        for j in 0..=3 {
            assert!(star_nodes(&inst, &tree, &params(12, 3), j).is_empty());
        }
    }

    #[test]
    fn coin_chain_star_by_definition() {
        // mu^0 = 1/2 per node and the realized size along the chain is 0, so
        // the first band-0 star is where the mean prefix first exceeds K.
        let (inst, tree) = coin_chain(30, 64);
        let p = params(12, 0);
        let stars = star_nodes(&inst, &tree, &p, 0);
        assert_eq!(stars.first(), Some(&24));
        // Oracle: direct evaluation of both sums on the chain.
        for u in 0..30 {
            let mean = rat(u as i64 + 1, 2);
            let want = mean > rat(12, 1);
            assert_eq!(stars.contains(&u), want, "node {u}");
        }
    }

    #[test]
    fn star_event_is_rare() {
        let (inst, tree) = coin_chain(30, 64);
        let p = params(12, 0);
        let est = star_hit_mc(&inst, &tree, &p, 0, 20_000, 3);
        let bound = (-12.0f64 / 3.0).exp();
        assert!(est.mean <= bound + 3.0 * est.stderr);
    }

    #[test]
    fn no_stars_means_heaviest_path() {
        let (inst, tree) = coin_chain(4, 16);
        let sigma = extract_sigma(&inst, &tree, &params(12, 4)).unwrap();
        assert_eq!(sigma.vertices(), vec![0, 1, 2, 3]);
        assert_eq!(sigma.total_reward(), rat(4, 1));
        assert!(sigma.lost.is_zero());
    }

    #[test]
    fn injected_star_confines_sigma() {
        let root = JobDist::table(vec![
            Outcome { prob: rat(3, 4), size: nat(0), reward: rat(10, 1) },
            Outcome { prob: rat(1, 4), size: nat(1), reward: rat(10, 1) },
        ]);
        let rest = JobDist::deterministic(nat(0), rat(1, 1));
        let inst = Instance::new(
            Metric::Matrix(vec![vec![nat(0); 3]; 3]),
            vec![root, rest.clone(), rest],
            0,
            nat(8),
            OrderConstraint::None,
        )
        .unwrap();
        let mut tree = DecisionTree::with_root(&inst, 0);
        let c = tree.add_child(&inst, 0, 0, 1).unwrap();
        tree.add_child(&inst, c, 0, 2).unwrap();
        tree.add_child(&inst, 0, 1, 2).unwrap();
        let mut star = vec![false; tree.len()];
        star[c] = true;
        let sigma = extract_sigma_with(&inst, &tree, &params(12, 3), &star).unwrap();
        assert!(sigma.nodes.iter().all(|n| n.tree_node != c));
        assert_eq!(sigma.vertices(), vec![0, 2]);
        assert_eq!(sigma.lost, rat(3, 2));
        star[0] = true;
        assert!(matches!(
            extract_sigma_with(&inst, &tree, &params(12, 3), &star),
            Err(ReduceError::TruncationLoss { .. })
        ));
    }

    #[test]
    fn sampled_policy_plumbing() {
        let (inst, tree) = coin_chain(3, 16);
        let sigma = extract_sigma(&inst, &tree, &params(12, 4)).unwrap();
        let pol = na_from_sigma(&sigma);
        assert_eq!(pol.attempt_prob, vec![rat(1, 48); 3]);
        let empty = SigmaPath {
            nodes: Vec::new(),
            params: params(12, 4),
            tree_value: rat(0, 1),
            lost: rat(0, 1),
        };
        let pol = na_from_sigma(&empty);
        assert!(pol.route.is_empty());
        assert!(eval_na_exact(&inst, &pol).unwrap().is_zero());
    }

    fn sigma_from_sizes(sizes: &[u64]) -> (Instance<Rational>, SigmaPath<Rational>) {
        let n = sizes.len();
        let jobs = sizes.iter().map(|&s| JobDist::deterministic(nat(s), rat(1, 1))).collect();
        let inst = Instance::new(Metric::Matrix(vec![vec![nat(0); n]; n]), jobs, 0, nat(32), OrderConstraint::None).unwrap();
        let mut tree = DecisionTree::with_root(&inst, 0);
        for v in 1..n {
            tree.add_child(&inst, v - 1, 0, v).unwrap();
        }
        let sigma = extract_sigma(&inst, &tree, &params(12, inst.max_band())).unwrap();
        (inst, sigma)
    }

    #[test]
    fn portals_on_zero_sizes_never_trigger() {
        let (inst, sigma) = sigma_from_sizes(&[0, 0, 0]);
        let ps = portals(&inst, &sigma);
        assert!(ps.positions.iter().all(|&p| p == 3));
        assert_eq!(ps.segments[0], 0..3);
        assert!(ps.segments[1..].iter().all(|s| s.is_empty()));
        assert!(ps.locations.iter().all(|&v| v == 2));
    }

    #[test]
    fn first_portal_at_second_node() {
        let (inst, sigma) = sigma_from_sizes(&[1, 0, 2, 0]);
        let ps = portals(&inst, &sigma);
        assert_eq!(ps.positions[0], 1);
        assert_eq!(ps.locations[0], 1);
        // i = 0, 1, 1, 3: v_1 needs i >= 3.
        assert_eq!(ps.positions[1], 3);
    }

    #[test]
    fn single_vertex_segment() {
        let (inst, sigma) = sigma_from_sizes(&[5]);
        let ps = portals(&inst, &sigma);
        let segs = enum_segments(&inst, &sigma, &ps);
        assert_eq!(segs[0].mid, Some(0));
        assert_eq!(segs[0].path, vec![0]);
        assert_eq!(segs[0].epsilon, nat(0));
        assert_eq!(segs[0].e, 0);
    }

    #[test]
    fn equal_profit_tie_takes_earlier_midpoint() {
        // Two unit rewards in one segment: the first vertex already holds half.
        let (inst, sigma) = sigma_from_sizes(&[0, 0]);
        let ps = portals(&inst, &sigma);
        let segs = enum_segments(&inst, &sigma, &ps);
        assert_eq!(segs[0].mid, Some(0));
    }

    /// Oracle for the half-profit split: every midpoint candidate is scanned.
    fn split_ok(q: &[Rational], m: usize) -> bool {
        let total: Rational = q.iter().sum();
        let left: Rational = q[..=m].iter().sum();
        let right: Rational = q[m..].iter().sum();
        left.clone() + left >= total && right.clone() + right >= total
    }

    #[test]
    fn reduction_on_random_instances() {
        let mut succeeded = 0;
        for seed in 0..20 {
            let inst = random_instance(RandomSpec::small(5, 24), 500 + seed);
            for k in [12, 24] {
                let p = StarParams::new(&inst, rat(k, 1)).unwrap();
                let out = match run_reduce(&inst, p) {
                    Ok(o) => o,
                    Err(ReduceError::TruncationLoss { .. }) => continue,
                    Err(e) => panic!("{e}"),
                };
                succeeded += 1;
                let kr = rat(k, 1);
                let sigma = &out.sigma;
                assert!(sigma.prefix_size_violations(&inst).is_empty());
                assert!(out.portals.prefix_mean_violations(&inst, sigma).is_empty());
                let two = rat(2, 1);
                assert!(sigma.total_reward() * two.clone() >= out.dp_value);
                let six_k = rat(6, 1) * kr.clone();
                assert!(out.policy_value >= sigma.total_reward() / six_k);
                assert!(out.policy_value >= out.dp_value.clone() / (rat(12, 1) * kr));
                let mut half_q = rat(0, 1);
                for s in &out.segments {
                    assert!(s.path_length <= s.length_bound);
                    assert!(s.length_bound <= s.sigma_length);
                    let lo = pow2(s.e) - 1u32;
                    assert!(lo <= s.epsilon && s.epsilon < pow2(s.e + 1) - 1u32);
                    assert!(s.kept_profit.clone() * two.clone() >= s.profit);
                    if let Some(m) = s.mid {
                        let seg = out.portals.segments[s.j as usize].clone();
                        let q: Vec<Rational> = seg
                            .clone()
                            .map(|i| {
                                let nd = &sigma.nodes[i];
                                band_deadline_eta(&inst, nd.vertex, &nd.travel, s.j)
                            })
                            .collect();
                        assert!(split_ok(&q, m - seg.start));
                    }
                    half_q += s.profit.clone() / two.clone();
                }
                assert!(segment_reward(&inst, &out.segments) >= half_q);
            }
        }
        assert!(succeeded >= 20, "only {succeeded} reductions succeeded");
    }
}
