//! Instance model: metric, per-vertex job distributions, root and budget.
//!
//! Times and sizes are arbitrary-precision naturals. Probabilities and
//! rewards live in any [`Field`]; the JSON format is defined for
//! [`Rational`] instances.

use std::fmt;

use num_bigint::BigInt;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::field::{parse_rational, pow2, Field, Rational};

/// Arbitrary-precision time, distance or size.
pub type ExactInt = num_bigint::BigUint;

#[derive(Debug, thiserror::Error)]
pub enum InstanceError {
    #[error("distance matrix must be {n}x{n}")]
    BadMatrix { n: usize },
    #[error("root {root} out of range for {n} vertices")]
    BadRoot { root: usize, n: usize },
    #[error("parent array has length {got}, expected {n}")]
    BadParents { got: usize, n: usize },
    #[error("invalid number `{0}`")]
    BadNumber(String),
    #[error("unknown job type `{0}`")]
    BadJobType(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One `(probability, size, reward)` entry of a job distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<F> {
    pub prob: F,
    pub size: ExactInt,
    pub reward: F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Bernoulli,
    Table,
}

/// Joint size/reward distribution of the job at one vertex.
///
/// A Bernoulli job has exactly two outcomes in a fixed order: index 0 is
/// size zero (probability `1 - p`), index 1 is `size` (probability `p`),
/// both paying the same reward. Decision trees branch on these indices.
#[derive(Debug, Clone, PartialEq)]
pub struct JobDist<F> {
    kind: JobKind,
    outcomes: Vec<Outcome<F>>,
}

impl<F: Field> JobDist<F> {
    pub fn bernoulli(p: F, size: ExactInt, reward: F) -> Self {
        JobDist {
            kind: JobKind::Bernoulli,
            outcomes: vec![
                Outcome {
                    prob: F::one() - p.clone(),
                    size: ExactInt::zero(),
                    reward: reward.clone(),
                },
                Outcome { prob: p, size, reward },
            ],
        }
    }

    pub fn table(outcomes: Vec<Outcome<F>>) -> Self {
        JobDist {
            kind: JobKind::Table,
            outcomes,
        }
    }

    /// Size `size` with certainty.
    pub fn deterministic(size: ExactInt, reward: F) -> Self {
        Self::table(vec![Outcome {
            prob: F::one(),
            size,
            reward,
        }])
    }

    pub fn kind(&self) -> JobKind {
        self.kind
    }

    pub fn outcomes(&self) -> &[Outcome<F>] {
        &self.outcomes
    }

    /// The Bernoulli parameter, if this is a Bernoulli job.
    pub fn bernoulli_p(&self) -> Option<&F> {
        (self.kind == JobKind::Bernoulli).then(|| &self.outcomes[1].prob)
    }

    /// True when more than one size has positive probability.
    pub fn is_stochastic(&self) -> bool {
        let mut sizes = self
            .outcomes
            .iter()
            .filter(|o| o.prob > F::zero())
            .map(|o| &o.size);
        match sizes.next() {
            Some(first) => sizes.any(|s| s != first),
            None => false,
        }
    }

    /// Capped mean `E[min(S, 2^j)]`.
    pub fn capped_mean(&self, j: u32) -> F {
        let cap = pow2(j);
        self.outcomes.iter().fold(F::zero(), |acc, o| {
            let s = if o.size < cap { &o.size } else { &cap };
            acc + o.prob.clone() * F::from_biguint(s)
        })
    }

    /// Expected reward restricted to size instantiations at most `d`.
    /// Zero for negative `d`; non-decreasing in `d`.
    pub fn eta(&self, d: &BigInt) -> F {
        if d.sign() == num_bigint::Sign::Minus {
            return F::zero();
        }
        let d = d.magnitude();
        self.outcomes
            .iter()
            .filter(|o| &o.size <= d)
            .fold(F::zero(), |acc, o| acc + o.prob.clone() * o.reward.clone())
    }

    /// `E[R * 1{S <= budget}]`.
    pub fn expected_reward_within(&self, budget: &ExactInt) -> F {
        self.eta(&BigInt::from(budget.clone()))
    }

    pub fn max_size(&self) -> ExactInt {
        self.outcomes
            .iter()
            .map(|o| o.size.clone())
            .max()
            .unwrap_or_default()
    }

    pub fn map_field<G: Field>(&self, f: impl Fn(&F) -> G) -> JobDist<G> {
        JobDist {
            kind: self.kind,
            outcomes: self
                .outcomes
                .iter()
                .map(|o| Outcome {
                    prob: f(&o.prob),
                    size: o.size.clone(),
                    reward: f(&o.reward),
                })
                .collect(),
        }
    }
}

/// Distances between vertices.
///
/// `Matrix` is the general case. `Line` and `Tree` are structured metrics
/// produced by the lower-bound construction; they answer queries without
/// materialising an `n x n` table of huge integers.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Matrix(Vec<Vec<ExactInt>>),
    /// Points on the real line at the given non-negative coordinates.
    Line(Vec<ExactInt>),
    /// Weighted tree: `parent[v]` and the length of the edge to it.
    Tree {
        parent: Vec<Option<usize>>,
        edge_len: Vec<ExactInt>,
        depth: Vec<usize>,
        root_dist: Vec<ExactInt>,
    },
}

impl Metric {
    pub fn tree(parent: Vec<Option<usize>>, edge_len: Vec<ExactInt>) -> Self {
        let n = parent.len();
        let mut depth = vec![usize::MAX; n];
        let mut root_dist = vec![ExactInt::zero(); n];
        fn fill(
            v: usize,
            parent: &[Option<usize>],
            edge_len: &[ExactInt],
            depth: &mut [usize],
            root_dist: &mut [ExactInt],
        ) {
            if depth[v] != usize::MAX {
                return;
            }
            match parent[v] {
                None => {
                    depth[v] = 0;
                    root_dist[v] = ExactInt::zero();
                }
                Some(u) => {
                    fill(u, parent, edge_len, depth, root_dist);
                    depth[v] = depth[u] + 1;
                    root_dist[v] = &root_dist[u] + &edge_len[v];
                }
            }
        }
        for v in 0..n {
            fill(v, &parent, &edge_len, &mut depth, &mut root_dist);
        }
        Metric::Tree {
            parent,
            edge_len,
            depth,
            root_dist,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Metric::Matrix(m) => m.len(),
            Metric::Line(c) => c.len(),
            Metric::Tree { parent, .. } => parent.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dist(&self, a: usize, b: usize) -> ExactInt {
        match self {
            Metric::Matrix(m) => m[a][b].clone(),
            Metric::Line(c) => {
                if c[a] >= c[b] {
                    &c[a] - &c[b]
                } else {
                    &c[b] - &c[a]
                }
            }
            Metric::Tree {
                parent,
                depth,
                root_dist,
                ..
            } => {
                let (mut x, mut y) = (a, b);
                while depth[x] > depth[y] {
                    x = parent[x].expect("deeper node has a parent");
                }
                while depth[y] > depth[x] {
                    y = parent[y].expect("deeper node has a parent");
                }
                while x != y {
                    x = parent[x].expect("distinct nodes below the root");
                    y = parent[y].expect("distinct nodes below the root");
                }
                &root_dist[a] + &root_dist[b] - &root_dist[x] - &root_dist[x]
            }
        }
    }

    /// Whether the metric axioms hold by construction.
    fn is_structural(&self) -> bool {
        !matches!(self, Metric::Matrix(_))
    }

    pub fn to_matrix(&self) -> Vec<Vec<ExactInt>> {
        let n = self.len();
        (0..n)
            .map(|a| (0..n).map(|b| self.dist(a, b)).collect())
            .collect()
    }
}

/// Feasible-route restriction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OrderConstraint {
    None,
    /// Routes must follow root-to-leaf order in this rooted tree
    /// (vertices may be skipped).
    DirectedTree { parent: Vec<Option<usize>> },
}

/// A stochastic orienteering instance (deterministic or correlated rewards).
#[derive(Debug, Clone, PartialEq)]
pub struct Instance<F = Rational> {
    metric: Metric,
    jobs: Vec<JobDist<F>>,
    root: usize,
    budget: ExactInt,
    order: OrderConstraint,
}

impl<F: Field> Instance<F> {
    pub fn new(
        metric: Metric,
        jobs: Vec<JobDist<F>>,
        root: usize,
        budget: ExactInt,
        order: OrderConstraint,
    ) -> Result<Self, InstanceError> {
        let n = jobs.len();
        if metric.len() != n {
            return Err(InstanceError::BadMatrix { n });
        }
        if let Metric::Matrix(m) = &metric {
            if m.iter().any(|row| row.len() != n) {
                return Err(InstanceError::BadMatrix { n });
            }
        }
        if root >= n {
            return Err(InstanceError::BadRoot { root, n });
        }
        if let OrderConstraint::DirectedTree { parent } = &order {
            if parent.len() != n {
                return Err(InstanceError::BadParents {
                    got: parent.len(),
                    n,
                });
            }
        }
        Ok(Instance {
            metric,
            jobs,
            root,
            budget,
            order,
        })
    }

    pub fn n(&self) -> usize {
        self.jobs.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn budget(&self) -> &ExactInt {
        &self.budget
    }

    pub fn job(&self, v: usize) -> &JobDist<F> {
        &self.jobs[v]
    }

    pub fn jobs(&self) -> &[JobDist<F>] {
        &self.jobs
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn dist(&self, a: usize, b: usize) -> ExactInt {
        self.metric.dist(a, b)
    }

    pub fn order(&self) -> &OrderConstraint {
        &self.order
    }

    /// `ceil(log2 B)`: the largest size band.
    pub fn max_band(&self) -> u32 {
        crate::field::ceil_log2(&self.budget)
    }

    /// Same instance with probabilities and rewards mapped into another field.
    pub fn map_field<G: Field>(&self, f: impl Fn(&F) -> G) -> Instance<G> {
        Instance {
            metric: self.metric.clone(),
            jobs: self.jobs.iter().map(|j| j.map_field(&f)).collect(),
            root: self.root,
            budget: self.budget.clone(),
            order: self.order.clone(),
        }
    }

    /// Same jobs on a different metric.
    pub fn with_metric(&self, metric: Metric) -> Result<Self, InstanceError> {
        Instance::new(
            metric,
            self.jobs.clone(),
            self.root,
            self.budget.clone(),
            self.order.clone(),
        )
    }

    /// Distances as machine integers, for desk-scale solvers.
    pub fn small_dist_matrix(&self) -> Option<Vec<Vec<u64>>> {
        let n = self.n();
        let mut out = vec![vec![0u64; n]; n];
        for (a, row) in out.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                *cell = u64::try_from(self.dist(a, b)).ok()?;
            }
        }
        Some(out)
    }
}

/// One violated instance invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    NonzeroDiagonal { vertex: usize },
    Asymmetric { a: usize, b: usize },
    Triangle { a: usize, b: usize, c: usize },
    ProbSum { vertex: usize },
    ProbRange { vertex: usize, outcome: usize },
    SizeExceedsBudget { vertex: usize, outcome: usize },
    NegativeReward { vertex: usize, outcome: usize },
    ParentOutOfRange { vertex: usize },
    ParentCycle { vertex: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonzeroDiagonal { vertex } => write!(f, "nonzero diagonal at vertex {vertex}"),
            Violation::Asymmetric { a, b } => write!(f, "asymmetric distance ({a},{b})"),
            Violation::Triangle { a, b, c } => write!(f, "triangle ({a},{b},{c})"),
            Violation::ProbSum { vertex } => write!(f, "prob-sum at vertex {vertex}"),
            Violation::ProbRange { vertex, outcome } => {
                write!(f, "probability out of [0,1] at vertex {vertex} outcome {outcome}")
            }
            Violation::SizeExceedsBudget { vertex, outcome } => {
                write!(f, "size > B at vertex {vertex} outcome {outcome}")
            }
            Violation::NegativeReward { vertex, outcome } => {
                write!(f, "negative reward at vertex {vertex} outcome {outcome}")
            }
            Violation::ParentOutOfRange { vertex } => write!(f, "parent out of range at vertex {vertex}"),
            Violation::ParentCycle { vertex } => write!(f, "parent cycle through vertex {vertex}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// List every violated invariant. Empty iff the instance is valid.
///
/// Matrix metrics are checked for zero diagonal, symmetry and every
/// triangle `d(a,c) <= d(a,b) + d(b,c)`; line and tree metrics satisfy these
/// by construction.
pub fn validate_instance<F: Field>(inst: &Instance<F>) -> ValidationReport {
    let mut violations = Vec::new();
    let n = inst.n();
    if !inst.metric.is_structural() {
        let m = inst.metric.to_matrix();
        for a in 0..n {
            if !m[a][a].is_zero() {
                violations.push(Violation::NonzeroDiagonal { vertex: a });
            }
            for b in a + 1..n {
                if m[a][b] != m[b][a] {
                    violations.push(Violation::Asymmetric { a, b });
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                if b == a {
                    continue;
                }
                for c in 0..n {
                    if c == a || c == b {
                        continue;
                    }
                    if m[a][c] > &m[a][b] + &m[b][c] {
                        violations.push(Violation::Triangle { a, b, c });
                    }
                }
            }
        }
    }
    for (v, job) in inst.jobs.iter().enumerate() {
        let mut total = F::zero();
        for (i, o) in job.outcomes().iter().enumerate() {
            if o.prob < F::zero() || o.prob > F::one() {
                violations.push(Violation::ProbRange { vertex: v, outcome: i });
            }
            if o.size > inst.budget {
                violations.push(Violation::SizeExceedsBudget { vertex: v, outcome: i });
            }
            if o.reward < F::zero() {
                violations.push(Violation::NegativeReward { vertex: v, outcome: i });
            }
            total = total + o.prob.clone();
        }
        if total != F::one() {
            violations.push(Violation::ProbSum { vertex: v });
        }
    }
    if let OrderConstraint::DirectedTree { parent } = &inst.order {
        for v in 0..n {
            match parent[v] {
                Some(p) if p >= n => violations.push(Violation::ParentOutOfRange { vertex: v }),
                _ => {
                    let mut cur = v;
                    let mut steps = 0;
                    while let Some(p) = parent[cur] {
                        if p >= n {
                            break;
                        }
                        cur = p;
                        steps += 1;
                        if steps > n {
                            violations.push(Violation::ParentCycle { vertex: v });
                            break;
                        }
                    }
                }
            }
        }
    }
    ValidationReport { violations }
}

// ---------------------------------------------------------------------------
// JSON

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum DistJson {
    Flat(Vec<String>),
    Rows(Vec<Vec<String>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum JobJson {
    Bernoulli {
        p: String,
        size: String,
        reward: String,
    },
    Table {
        outcomes: Vec<OutcomeJson>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OutcomeJson {
    prob: String,
    size: String,
    reward: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum OrderJson {
    None,
    DirectedTree { parent: Vec<Option<usize>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceJson {
    n: usize,
    budget: String,
    root: usize,
    dist: DistJson,
    jobs: Vec<JobJson>,
    #[serde(default)]
    order_constraint: Option<OrderJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

fn num(s: &str) -> Result<ExactInt, InstanceError> {
    s.trim()
        .parse()
        .map_err(|_| InstanceError::BadNumber(s.to_string()))
}

fn frac(s: &str) -> Result<Rational, InstanceError> {
    parse_rational(s).ok_or_else(|| InstanceError::BadNumber(s.to_string()))
}

impl Instance<Rational> {
    /// Serialise to the JSON instance schema. Big integers and rationals are
    /// decimal strings; `dist` is the row-major flattened matrix.
    pub fn to_json_value(&self, meta: Option<serde_json::Value>) -> serde_json::Value {
        let n = self.n();
        let mut flat = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                flat.push(self.dist(a, b).to_string());
            }
        }
        let jobs = self
            .jobs
            .iter()
            .map(|j| match j.kind {
                JobKind::Bernoulli => JobJson::Bernoulli {
                    p: j.outcomes[1].prob.to_string(),
                    size: j.outcomes[1].size.to_string(),
                    reward: j.outcomes[1].reward.to_string(),
                },
                JobKind::Table => JobJson::Table {
                    outcomes: j
                        .outcomes
                        .iter()
                        .map(|o| OutcomeJson {
                            prob: o.prob.to_string(),
                            size: o.size.to_string(),
                            reward: o.reward.to_string(),
                        })
                        .collect(),
                },
            })
            .collect();
        let order_constraint = Some(match &self.order {
            OrderConstraint::None => OrderJson::None,
            OrderConstraint::DirectedTree { parent } => OrderJson::DirectedTree {
                parent: parent.clone(),
            },
        });
        serde_json::to_value(InstanceJson {
            n,
            budget: self.budget.to_string(),
            root: self.root,
            dist: DistJson::Flat(flat),
            jobs,
            order_constraint,
            meta,
        })
        .expect("instance serialises")
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self, InstanceError> {
        let raw: InstanceJson = serde_json::from_value(value)?;
        let n = raw.n;
        let matrix: Vec<Vec<ExactInt>> = match raw.dist {
            DistJson::Flat(flat) => {
                if flat.len() != n * n {
                    return Err(InstanceError::BadMatrix { n });
                }
                flat.chunks(n.max(1))
                    .take(n)
                    .map(|row| row.iter().map(|s| num(s)).collect())
                    .collect::<Result<_, _>>()?
            }
            DistJson::Rows(rows) => rows
                .iter()
                .map(|row| row.iter().map(|s| num(s)).collect())
                .collect::<Result<_, _>>()?,
        };
        let jobs = raw
            .jobs
            .iter()
            .map(|j| {
                Ok(match j {
                    JobJson::Bernoulli { p, size, reward } => {
                        JobDist::bernoulli(frac(p)?, num(size)?, frac(reward)?)
                    }
                    JobJson::Table { outcomes } => JobDist::table(
                        outcomes
                            .iter()
                            .map(|o| {
                                Ok(Outcome {
                                    prob: frac(&o.prob)?,
                                    size: num(&o.size)?,
                                    reward: frac(&o.reward)?,
                                })
                            })
                            .collect::<Result<_, InstanceError>>()?,
                    ),
                })
            })
            .collect::<Result<Vec<_>, InstanceError>>()?;
        if jobs.len() != n {
            return Err(InstanceError::BadMatrix { n });
        }
        let order = match raw.order_constraint {
            None | Some(OrderJson::None) => OrderConstraint::None,
            Some(OrderJson::DirectedTree { parent }) => OrderConstraint::DirectedTree { parent },
        };
        Instance::new(Metric::Matrix(matrix), jobs, raw.root, num(&raw.budget)?, order)
    }

    pub fn to_json_string(&self, meta: Option<serde_json::Value>) -> String {
        serde_json::to_string_pretty(&self.to_json_value(meta)).expect("instance serialises")
    }

    pub fn from_json_str(s: &str) -> Result<Self, InstanceError> {
        Self::from_json_value(serde_json::from_str(s)?)
    }
}

/// Shorthand for a natural from a machine integer.
pub fn nat(v: u64) -> ExactInt {
    ExactInt::from(v)
}

impl<F: Field> JobDist<F> {
    /// Sum of probabilities (1 for a valid job).
    pub fn total_prob(&self) -> F {
        self.outcomes
            .iter()
            .fold(F::zero(), |acc, o| acc + o.prob.clone())
    }
}
