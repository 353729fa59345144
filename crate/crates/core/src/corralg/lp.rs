//! Configuration LP over KDO solutions, with the `y` variables eliminated
//! (each copy's `y` is the total weight of the solutions containing it).
//! This leaves a packing LP with one row per segment, one per vertex and one
//! prefix-mean-size row per band.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use serde::Serialize;

use super::kdo::{enumerate_solutions, solve_exact_with, solve_greedy_with, KdoError, KdoInstance, KdoMode, KdoPath};
use crate::field::{pow2, rational_to_f64, Rational};
use crate::instance::Instance;

pub const DENSE_MAX_COLUMNS: usize = 100_000;
const EPS_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error(transparent)]
    Kdo(#[from] KdoError),
    #[error("MWU did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("simplex did not terminate within {0} pivots")]
    SimplexStall(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LpMode {
    Mwu,
    Dense,
}

impl std::str::FromStr for LpMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mwu" => Ok(LpMode::Mwu),
            "dense" => Ok(LpMode::Dense),
            other => Err(format!("unknown LP mode `{other}`")),
        }
    }
}

/// The KDO instances of one portal guess plus the capped means needed by
/// the vertex and prefix rows.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub kdos: Vec<KdoInstance>,
    /// `mu[v][h]` for every band `h`.
    pub mu: Vec<Vec<Rational>>,
    pub k: Rational,
    mu_f: Vec<Vec<f64>>,
    cap_f: Vec<f64>,
}

/// A column of the LP: one KDO solution of one segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub segment: usize,
    pub vertices: Vec<usize>,
    pub jobs: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigLpSolution {
    pub columns: Vec<Column>,
    /// `y[j][k]` for job `k` of segment `j`.
    pub y: Vec<Vec<f64>>,
    pub objective: f64,
    pub iterations: usize,
    /// Upper bound on the LP optimum certified during MWU with the exact
    /// oracle.
    pub dual_bound: Option<f64>,
}

impl LpProblem {
    pub fn new(inst: &Instance<Rational>, kdos: Vec<KdoInstance>, k: Rational) -> Self {
        let bands = kdos.len();
        let mu: Vec<Vec<Rational>> = (0..inst.n())
            .map(|v| (0..bands as u32).map(|h| inst.job(v).capped_mean(h)).collect())
            .collect();
        let mu_f = mu.iter().map(|r| r.iter().map(rational_to_f64).collect()).collect();
        let cap_f = (0..bands as u32).map(|h| rational_to_f64(&prefix_cap(&k, h))).collect();
        LpProblem {
            kdos,
            mu,
            k,
            mu_f,
            cap_f,
        }
    }

    pub fn segments(&self) -> usize {
        self.kdos.len()
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn rows(&self) -> usize {
        2 * self.segments() + self.n()
    }

    fn row_vertex(&self, v: usize) -> usize {
        self.segments() + v
    }

    fn row_prefix(&self, h: usize) -> usize {
        self.segments() + self.n() + h
    }

    fn rhs(&self) -> Vec<f64> {
        let mut b = vec![1.0; self.segments() + self.n()];
        b.extend(&self.cap_f);
        b
    }

    /// Sparse column coefficients `(row, a)` and objective of a job set.
    fn coefficients(&self, j: usize, jobs: &[usize]) -> (Vec<(usize, f64)>, f64) {
        let kdo = &self.kdos[j];
        let mut a: BTreeMap<usize, f64> = BTreeMap::new();
        a.insert(j, 1.0);
        let mut c = 0.0;
        for &k in jobs {
            let v = kdo.jobs[k].vertex;
            c += rational_to_f64(&kdo.jobs[k].reward);
            *a.entry(self.row_vertex(v)).or_default() += 1.0;
            for h in j..self.segments() {
                *a.entry(self.row_prefix(h)).or_default() += self.mu_f[v][h];
            }
        }
        (a.into_iter().filter(|&(_, x)| x > 0.0).collect(), c)
    }

    /// `y` from column weights.
    pub fn y_of(&self, columns: &[Column]) -> Vec<Vec<f64>> {
        let mut y: Vec<Vec<f64>> = self.kdos.iter().map(|k| vec![0.0; k.jobs.len()]).collect();
        for c in columns {
            for &k in &c.jobs {
                y[c.segment][k] += c.weight;
            }
        }
        y
    }

    pub fn objective_of(&self, y: &[Vec<f64>]) -> f64 {
        y.iter()
            .zip(&self.kdos)
            .map(|(ys, kdo)| ys.iter().zip(&kdo.jobs).map(|(w, j)| w * rational_to_f64(&j.reward)).sum::<f64>())
            .sum()
    }

    /// Constraints violated by more than `tol` (relative to the right-hand
    /// side), as readable labels.
    pub fn violations(&self, sol: &ConfigLpSolution, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        let nseg = self.segments();
        let xsum = self.y_of(&sol.columns);
        for j in 0..nseg {
            let s: f64 = sol.columns.iter().filter(|c| c.segment == j).map(|c| c.weight).sum();
            if s > 1.0 + tol {
                out.push(format!("segment {j}: {s}"));
            }
            for (k, (&y, &x)) in sol.y[j].iter().zip(&xsum[j]).enumerate() {
                if y > x + tol || y < -tol {
                    out.push(format!("copy ({j},{k}): y={y} x={x}"));
                }
            }
        }
        for v in 0..self.n() {
            let s: f64 = (0..nseg)
                .flat_map(|j| self.kdos[j].jobs.iter().zip(&sol.y[j]).filter(move |(c, _)| c.vertex == v))
                .map(|(_, y)| y)
                .sum();
            if s > 1.0 + tol {
                out.push(format!("vertex {v}: {s}"));
            }
        }
        for h in 0..nseg {
            let load = self.prefix_load(&sol.y, h);
            if load > self.cap_f[h] * (1.0 + tol) {
                out.push(format!("prefix {h}: {load} > {}", self.cap_f[h]));
            }
        }
        out
    }

    /// Left-hand side of the band-`h` prefix-mean-size row.
    pub fn prefix_load(&self, y: &[Vec<f64>], h: usize) -> f64 {
        (0..=h)
            .map(|l| {
                self.kdos[l]
                    .jobs
                    .iter()
                    .zip(&y[l])
                    .map(|(c, w)| self.mu_f[c.vertex][h] * w)
                    .sum::<f64>()
            })
            .sum()
    }

    fn finish(&self, columns: Vec<Column>, iterations: usize, dual_bound: Option<f64>) -> ConfigLpSolution {
        let columns: Vec<Column> = columns.into_iter().filter(|c| c.weight > EPS_ZERO).collect();
        let y = self.y_of(&columns);
        let objective = self.objective_of(&y);
        ConfigLpSolution {
            columns,
            y,
            objective,
            iterations,
            dual_bound,
        }
    }
}

/// `(K + 1) * 2^h`.
pub fn prefix_cap(k: &Rational, h: u32) -> Rational {
    (k + Rational::from_integer(BigInt::from(1))) * Rational::from_integer(BigInt::from(pow2(h)))
}

/// Dense tableau simplex for `max c.x` s.t. `Ax <= b`, `x >= 0`, `b >= 0`.
/// Dantzig pricing, switching to Bland's rule after a run of degenerate
/// pivots.
pub fn simplex_max(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<(Vec<f64>, f64), LpError> {
    let m = b.len();
    let n = c.len();
    let width = n + m + 1;
    let mut t = vec![vec![0.0; width]; m + 1];
    for i in 0..m {
        t[i][..n].copy_from_slice(&a[i]);
        t[i][n + i] = 1.0;
        t[i][width - 1] = b[i];
    }
    for j in 0..n {
        t[m][j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let tol = 1e-11;
    let max_pivots = 50 * (n + m) + 1000;
    let mut degenerate = 0usize;
    for _ in 0..max_pivots {
        let bland = degenerate > 50;
        let enter = if bland {
            (0..n + m).find(|&j| t[m][j] < -tol)
        } else {
            let (j, v) = (0..n + m).map(|j| (j, t[m][j])).fold((usize::MAX, -tol), |acc, x| if x.1 < acc.1 { x } else { acc });
            (v < -tol).then_some(j)
        };
        let Some(e) = enter else {
            let mut x = vec![0.0; n];
            for (i, &bv) in basis.iter().enumerate() {
                if bv < n {
                    x[bv] = t[i][width - 1].max(0.0);
                }
            }
            return Ok((x, t[m][width - 1]));
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if t[i][e] > tol {
                let r = t[i][width - 1] / t[i][e];
                let better = match leave {
                    None => true,
                    Some((li, lr)) => r < lr - 1e-13 || (r <= lr + 1e-13 && basis[i] < basis[li]),
                };
                if better {
                    leave = Some((i, r));
                }
            }
        }
        // A packing LP is bounded; an empty ratio test only arises from
        // round-off on a zero column.
        let Some((r, ratio)) = leave else {
            t[m][e] = 0.0;
            continue;
        };
        degenerate = if ratio.abs() < 1e-13 { degenerate + 1 } else { 0 };
        let p = t[r][e];
        for v in t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = t[r].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i != r {
                let f = row[e];
                if f != 0.0 {
                    for (x, pv) in row.iter_mut().zip(&pivot_row) {
                        *x -= f * pv;
                    }
                }
            }
        }
        basis[r] = e;
    }
    Err(LpError::SimplexStall(max_pivots))
}

fn solve_dense(p: &LpProblem) -> Result<ConfigLpSolution, LpError> {
    let mut cols: Vec<(usize, KdoPath<Rational>)> = Vec::new();
    for (j, kdo) in p.kdos.iter().enumerate() {
        let left = DENSE_MAX_COLUMNS.saturating_sub(cols.len());
        let sols = enumerate_solutions(kdo, left).map_err(|e| match e {
            KdoError::EnumerationOverflow(_) => KdoError::EnumerationOverflow(DENSE_MAX_COLUMNS),
            e => e,
        })?;
        cols.extend(sols.into_iter().filter(|s| !s.jobs.is_empty()).map(|s| (j, s)));
    }
    let m = p.rows();
    let mut a = vec![vec![0.0; cols.len()]; m];
    let mut c = vec![0.0; cols.len()];
    for (ci, (j, s)) in cols.iter().enumerate() {
        let (coef, obj) = p.coefficients(*j, &s.jobs);
        for (r, v) in coef {
            a[r][ci] = v;
        }
        c[ci] = obj;
    }
    let (x, _) = simplex_max(&a, &p.rhs(), &c)?;
    let mut columns: Vec<Column> = cols
        .into_iter()
        .zip(x)
        .map(|((segment, s), weight)| Column {
            segment,
            vertices: s.vertices,
            jobs: s.jobs,
            weight,
        })
        .collect();
    rescale(p, &mut columns);
    Ok(p.finish(columns, 0, None))
}

/// Scale all weights so the most loaded row is exactly tight.
fn rescale(p: &LpProblem, columns: &mut [Column]) {
    let b = p.rhs();
    let mut load = vec![0.0; b.len()];
    for col in columns.iter() {
        for (r, a) in p.coefficients(col.segment, &col.jobs).0 {
            load[r] += a * col.weight;
        }
    }
    let rho = load.iter().zip(&b).map(|(l, b)| l / b).fold(0.0, f64::max);
    if rho > 0.0 {
        for col in columns.iter_mut() {
            col.weight /= rho;
        }
    }
}

/// Best ratio `c(tau) / cost(tau)` over segment `j`'s solutions for row
/// lengths `len`, by Dinkelbach iteration over the KDO oracle.
fn best_ratio(p: &LpProblem, j: usize, len: &[f64], oracle: KdoMode) -> Result<Option<(f64, KdoPath<f64>)>, LpError> {
    let kdo = &p.kdos[j];
    let weights: Vec<f64> = kdo
        .jobs
        .iter()
        .map(|c| len[p.row_vertex(c.vertex)] + (j..p.segments()).map(|h| p.mu_f[c.vertex][h] * len[p.row_prefix(h)]).sum::<f64>())
        .collect();
    let rewards: Vec<f64> = kdo.jobs.iter().map(|c| rational_to_f64(&c.reward)).collect();
    let mut lambda = 0.0;
    let mut best: Option<(f64, KdoPath<f64>)> = None;
    for _ in 0..100 {
        let scores: Vec<f64> = rewards.iter().zip(&weights).map(|(r, w)| r - lambda * w).collect();
        let path = match oracle {
            KdoMode::Exact => solve_exact_with(kdo, &scores, false)?,
            KdoMode::Greedy => solve_greedy_with(kdo, &scores),
        };
        let Some(path) = path else { break };
        if path.jobs.is_empty() {
            break;
        }
        let gain = path.value - lambda * len[j];
        let c: f64 = path.jobs.iter().map(|&k| rewards[k]).sum();
        if gain <= 1e-12 * c {
            break;
        }
        let cost: f64 = len[j] + path.jobs.iter().map(|&k| weights[k]).sum::<f64>();
        let ratio = c / cost;
        if best.as_ref().is_some_and(|b| ratio <= b.0) {
            break;
        }
        lambda = ratio;
        best = Some((ratio, path));
    }
    Ok(best)
}

/// Garg-Koenemann packing with the KDO oracle as column generator.
fn solve_mwu(p: &LpProblem, eps: f64, oracle: KdoMode) -> Result<ConfigLpSolution, LpError> {
    let step = eps / 2.0;
    let b = p.rhs();
    let m = b.len();
    let delta = (1.0 + step) * ((1.0 + step) * m as f64).powf(-1.0 / step);
    let mut len: Vec<f64> = b.iter().map(|bi| delta / bi).collect();
    let mut load = vec![0.0; m];
    let mut columns: Vec<Column> = Vec::new();
    let mut index: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
    let mut dual = f64::INFINITY;
    let cap = 10_000 * m;
    for it in 1..=cap {
        let mut pick: Option<(f64, usize, KdoPath<f64>)> = None;
        for j in 0..p.segments() {
            if let Some((r, path)) = best_ratio(p, j, &len, oracle)? {
                if pick.as_ref().is_none_or(|q| r > q.0) {
                    pick = Some((r, j, path));
                }
            }
        }
        let Some((ratio, j, path)) = pick else {
            return Ok(p.finish(Vec::new(), it, Some(0.0)));
        };
        if oracle == KdoMode::Exact {
            let d: f64 = b.iter().zip(&len).map(|(bi, li)| bi * li).sum();
            dual = dual.min(d * ratio);
        }
        let (coef, _) = p.coefficients(j, &path.jobs);
        let amount = coef.iter().map(|&(r, a)| b[r] / a).fold(f64::INFINITY, f64::min);
        let key = (j, path.jobs.clone());
        let ci = *index.entry(key).or_insert_with(|| {
            columns.push(Column {
                segment: j,
                vertices: path.vertices.clone(),
                jobs: path.jobs.clone(),
                weight: 0.0,
            });
            columns.len() - 1
        });
        columns[ci].weight += amount;
        for &(r, a) in &coef {
            load[r] += a * amount;
            len[r] *= 1.0 + step * a * amount / b[r];
        }
        let rho = load.iter().zip(&b).map(|(l, bi)| l / bi).fold(0.0, f64::max);
        let primal: f64 = columns.iter().map(|c| c.weight * p.coefficients(c.segment, &c.jobs).1).sum::<f64>() / rho;
        // The exact oracle certifies a dual bound, so run until the gap is
        // half of `eps`; otherwise use the Garg-Koenemann stopping rule.
        let done = match oracle {
            KdoMode::Exact => primal >= (1.0 - eps / 2.0) * dual,
            KdoMode::Greedy => b.iter().zip(&len).map(|(bi, li)| bi * li).sum::<f64>() >= 1.0,
        };
        if done {
            rescale(p, &mut columns);
            let bound = (oracle == KdoMode::Exact).then_some(dual);
            return Ok(p.finish(columns, it, bound));
        }
    }
    Err(LpError::NoConvergence(cap))
}

pub fn solve_config_lp(p: &LpProblem, eps: f64, oracle: KdoMode, mode: LpMode) -> Result<ConfigLpSolution, LpError> {
    match mode {
        LpMode::Dense => solve_dense(p),
        LpMode::Mwu => solve_mwu(p, eps, oracle),
    }
}

/// Make every copy's `y` equal the weight of the columns containing it, by
/// splitting columns and dropping the copy from the excess weight. `y` and
/// the objective are unchanged.
pub fn equalize_xy(p: &LpProblem, sol: &ConfigLpSolution) -> ConfigLpSolution {
    let mut cols = sol.columns.clone();
    for (j, ys) in sol.y.iter().enumerate() {
        for (k, &target) in ys.iter().enumerate() {
            let mut acc = 0.0;
            let mut extra = Vec::new();
            for col in cols.iter_mut().filter(|c| c.segment == j && c.jobs.contains(&k)) {
                let w = col.weight;
                if acc >= target - EPS_ZERO {
                    col.jobs.retain(|&x| x != k);
                } else if acc + w > target + EPS_ZERO {
                    let mut without = col.clone();
                    without.jobs.retain(|&x| x != k);
                    without.weight = acc + w - target;
                    col.weight = target - acc;
                    extra.push(without);
                }
                acc += w;
            }
            cols.extend(extra);
        }
    }
    let mut merged: Vec<Column> = Vec::new();
    let mut index: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
    for c in cols {
        if c.jobs.is_empty() {
            continue;
        }
        match index.get(&(c.segment, c.jobs.clone())) {
            Some(&i) => merged[i].weight += c.weight,
            None => {
                index.insert((c.segment, c.jobs.clone()), merged.len());
                merged.push(c);
            }
        }
    }
    let merged: Vec<Column> = merged.into_iter().filter(|c| c.weight > EPS_ZERO).collect();
    ConfigLpSolution {
        objective: p.objective_of(&sol.y),
        y: sol.y.clone(),
        columns: merged,
        iterations: sol.iterations,
        dual_bound: sol.dual_bound,
    }
}

/// Largest `|y - sum x|` over all copies.
pub fn equality_gap(p: &LpProblem, sol: &ConfigLpSolution) -> f64 {
    let xs = p.y_of(&sol.columns);
    sol.y
        .iter()
        .zip(&xs)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

/// Exact check that a collected job set obeys the prefix rows of every band
/// at or after its own when taken alone.
pub fn capped_transfer_ok(p: &LpProblem, j: usize, jobs: &[usize]) -> bool {
    (j..p.segments()).all(|h| {
        let load: Rational = jobs.iter().map(|&k| p.mu[p.kdos[j].jobs[k].vertex][h].clone()).sum();
        load <= prefix_cap(&p.k, h as u32)
    })
}
