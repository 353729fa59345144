//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use stocorient::corralg::copies::copies;
use stocorient::corralg::kdo::{enumerate_solutions, KdoMode};
use stocorient::corralg::lp::{equalize_xy, solve_config_lp, LpMode, LpProblem};
use stocorient::corralg::pipeline::{build_kdo_instances, end_to_end, enumerate_guesses, E2eParams, Guess};
use stocorient::corralg::rounding::round_trace;
use stocorient::gapsearch::{best_directed_na, best_line_na, gap_report, BeamParams, SearchMode};
use stocorient::lowerbound::{
    build_tree, check_structure, embed_line, exact_p, ordering_exceptions, rational_p, to_exact_instance,
    to_rational_instance, Variant,
};
use stocorient::policy::{adaptive_policy_a, eval_adaptive_exact, eval_na_exact, eval_na_mc, NaPolicy};
use stocorient::random::{random_instance, random_table_job, RandomSpec};
use stocorient::reduce::{na_from_sigma, run_reduce, ReduceError, StarParams};
use stocorient::report::export_gap_csv;
use stocorient::{Field, Instance, JobDist, QuadSurd, Rational};

fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

fn pow2(j: u32) -> BigUint {
    BigUint::one() << j
}

/// `E[min(S, 2^j)]` straight from the outcome table.
fn capped_mean<F: Field>(job: &JobDist<F>, j: u32) -> F {
    let cap = pow2(j);
    job.outcomes().iter().fold(F::zero(), |acc, o| {
        let s = o.size.clone().min(cap.clone());
        acc + o.prob.clone() * F::from_biguint(&s)
    })
}

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_structure() -> Result<String, String> {
    for levels in 1..=8 {
        let report = check_structure(&build_tree(levels).map_err(|e| e.to_string())?);
        ensure(report.all_passed(), || format!("L={levels}: {report:?}"))?;
    }
    Ok("L = 1..8, all claims exact".into())
}

fn c2_closed_form() -> Result<String, String> {
    for levels in 1..=6 {
        let t = build_tree(levels).map_err(|e| e.to_string())?;
        let inst = to_rational_instance(&t, Variant::DirectedTree);
        let got = eval_adaptive_exact(&inst, &adaptive_policy_a(&t)).map_err(|e| e.to_string())?;
        let p = rational_p(levels);
        let q = Rational::one() - p.clone() * p;
        let mut want = Rational::zero();
        let mut term = Rational::one();
        for _ in 0..levels {
            want += &term;
            term *= &q;
        }
        ensure(got == want, || format!("L={levels}: {got} != {want}"))?;
    }
    let t = build_tree(2).map_err(|e| e.to_string())?;
    let v = eval_adaptive_exact(&to_exact_instance(&t, Variant::DirectedTree), &adaptive_policy_a(&t)).map_err(|e| e.to_string())?;
    ensure(v == QuadSurd::rational(rat(3, 2)), || format!("L=2 exact p: {v}"))?;
    Ok("L <= 6 exact; L=2 with p^2=1/2 gives 3/2".into())
}

fn c3_na_bounds() -> Result<String, String> {
    let mut worst_dir: f64 = 0.0;
    let mut worst_line: f64 = 0.0;
    for levels in 1..=4 {
        let t = build_tree(levels).map_err(|e| e.to_string())?;
        let inv_p = QuadSurd::rational(Rational::one()) / exact_p(levels);
        let d = to_exact_instance(&t, Variant::DirectedTree);
        let (_, v) = best_directed_na(&t, &d).map_err(|e| e.to_string())?;
        let bound = QuadSurd::rational(rat(3, 1)) * inv_p.clone();
        ensure(v <= bound, || format!("directed L={levels}: {v} > {bound}"))?;
        worst_dir = worst_dir.max(v.to_f64() / bound.to_f64());
        let l = to_exact_instance(&t, Variant::Line);
        let (_, v) = best_line_na(&t, &l, SearchMode::Exhaustive, BeamParams::default()).map_err(|e| e.to_string())?;
        let bound = QuadSurd::rational(rat(634, 100)) * inv_p;
        ensure(v <= bound, || format!("line L={levels}: {v} > {bound}"))?;
        worst_line = worst_line.max(v.to_f64() / bound.to_f64());
        if levels == 2 {
            ensure(v == QuadSurd::rational(rat(3, 2)), || format!("line L=2 value {v}"))?;
        }
    }
    Ok(format!("max value/bound: directed {worst_dir:.3}, line {worst_line:.3}; line L=2 = 3/2"))
}

fn c4_ordering() -> Result<String, String> {
    for levels in 1..=5 {
        let t = build_tree(levels).map_err(|e| e.to_string())?;
        let emb = embed_line(&t);
        // Independent scan from the tree metric: root to u, then back down
        // the line to a closer v.
        let metric = t.metric();
        let n = t.nodes.len();
        let b = BigInt::from(t.budget.clone());
        for u in 0..n {
            for v in 0..n {
                let (cu, cv) = (BigInt::from(metric.dist(0, u)), BigInt::from(metric.dist(0, v)));
                if cu > cv {
                    let walk = &cu * 2 - &cv;
                    ensure(walk > b, || format!("L={levels}: pair ({u},{v}) walk {walk} <= {b}"))?;
                }
            }
        }
        let ex = ordering_exceptions(&t, &emb);
        ensure(ex.is_empty(), || format!("L={levels}: {} exceptions", ex.len()))?;
    }
    Ok("L <= 5, zero exceptions".into())
}

fn c5_reduction() -> Result<String, String> {
    let mut ok = 0;
    let mut skipped = 0;
    for seed in 0..20 {
        let inst = random_instance(RandomSpec::small(5, 24), 500 + seed);
        for k in [12, 24] {
            let kr = rat(k, 1);
            let params = StarParams::new(&inst, kr.clone()).map_err(|e| e.to_string())?;
            let out = match run_reduce(&inst, params) {
                Ok(o) => o,
                Err(ReduceError::TruncationLoss { .. }) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e.to_string()),
            };
            let value = eval_na_exact(&inst, &na_from_sigma(&out.sigma)).map_err(|e| e.to_string())?;
            let bound = out.dp_value.clone() / (rat(12, 1) * kr.clone());
            ensure(value >= bound, || format!("seed {seed} K={k}: {value} < {bound}"))?;
            let sigma = &out.sigma;
            let bands = inst.max_band();
            for j in 0..=bands {
                let two_j = Rational::from_integer(BigInt::from(pow2(j)));
                // Prefix sizes: either the realized capped size exceeds 2^{j+1}
                // or the capped means stay within K 2^j.
                let mut x = BigUint::zero();
                let mut m = Rational::zero();
                for node in &sigma.nodes {
                    let job = inst.job(node.vertex);
                    let s = match node.outcome {
                        Some(o) => job.outcomes()[o].size.clone(),
                        None => job.outcomes().iter().filter(|o| !o.prob.is_zero()).map(|o| o.size.clone()).min().unwrap_or_default(),
                    };
                    x += s.min(pow2(j));
                    m += capped_mean(job, j);
                    ensure(x > pow2(j + 1) || m <= &kr * &two_j, || format!("seed {seed} K={k}: sigma prefix j={j}"))?;
                }
                // Portal prefix means stay within (K + 1) 2^j.
                let end = out.portals.positions[j as usize];
                let pm: Rational = sigma.nodes[..end].iter().map(|n| capped_mean(inst.job(n.vertex), j)).sum();
                ensure(pm <= (&kr + Rational::one()) * &two_j, || format!("seed {seed} K={k}: portal j={j}"))?;
            }
            ok += 1;
        }
    }
    ensure(ok >= 20, || format!("only {ok} successful reductions"))?;
    Ok(format!("{ok} reductions checked, {skipped} truncation refusals"))
}

/// Both sandwich inequalities over the whole curve.
fn sandwich_ok(f: &[Rational], set: &[usize]) -> bool {
    (0..f.len()).filter(|&d| f[d] > Rational::zero()).all(|d| {
        let later: Vec<&Rational> = set.iter().filter(|&&y| y >= d).map(|&y| &f[y]).collect();
        let sum: Rational = later.iter().copied().sum();
        let max = later.iter().copied().max().cloned().unwrap_or_else(Rational::zero);
        sum <= &f[d] * rat(3, 1) && f[d] <= max * rat(2, 1)
    })
}

fn c6_copies() -> Result<String, String> {
    let worked: Vec<Rational> = [8, 8, 8, 8, 3, 3, 3, 3, 3, 1, 0, 0].iter().map(|&x| rat(x, 1)).collect();
    let set = copies(&worked);
    ensure(sandwich_ok(&worked, &set), || format!("worked example {set:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..100 {
        let len = rng.gen_range(1..40);
        let mut v: Vec<Rational> = (0..len).map(|_| rat(rng.gen_range(0..1000), rng.gen_range(1..10))).collect();
        v.sort_by(|a, b| b.cmp(a));
        let set = copies(&v);
        ensure(sandwich_ok(&v, &set), || format!("curve {i}: {set:?}"))?;
    }
    Ok("worked example and 100 random curves".into())
}

fn tiny(seed: u64) -> Instance<Rational> {
    random_instance(
        RandomSpec {
            grid: 1,
            ..RandomSpec::small(4, 4)
        },
        seed,
    )
}

fn tiny_problem(seed: u64) -> Result<(Instance<Rational>, LpProblem, Guess), String> {
    let inst = tiny(seed);
    let all = enumerate_guesses(&inst).map_err(|e| e.to_string())?;
    let g = all[(seed as usize * 7919) % all.len()].clone();
    let k = rat(12, 1);
    let kdos = build_kdo_instances(&inst, &g, &k).map_err(|e| e.to_string())?;
    Ok((inst.clone(), LpProblem::new(&inst, kdos, k), g))
}

fn c7_lp_agreement() -> Result<String, String> {
    let mut checked = 0;
    let mut worst: f64 = 1.0;
    for seed in 700..730 {
        let (_, p, _) = tiny_problem(seed)?;
        let paths: usize = p
            .kdos
            .iter()
            .map(|k| enumerate_solutions(k, 10_000).map(|s| s.len()))
            .sum::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        if paths > 10_000 {
            continue;
        }
        let dense = solve_config_lp(&p, 0.05, KdoMode::Exact, LpMode::Dense).map_err(|e| e.to_string())?;
        if dense.objective < 1e-9 {
            continue;
        }
        let mwu = solve_config_lp(&p, 0.05, KdoMode::Exact, LpMode::Mwu).map_err(|e| e.to_string())?;
        let r = mwu.objective / dense.objective;
        ensure(r >= 0.95 && mwu.objective <= dense.objective + 1e-6, || format!("seed {seed}: ratio {r}"))?;
        worst = worst.min(r);
        checked += 1;
    }
    ensure(checked >= 10, || format!("only {checked} instances with positive LP"))?;
    Ok(format!("{checked} instances, worst MWU/dense {worst:.4}"))
}

fn c8_survival() -> Result<String, String> {
    // Pick the first tiny problem whose LP has several fractional copies.
    let mut chosen = None;
    for seed in 800..900 {
        let (_, p, _) = tiny_problem(seed)?;
        let sol = solve_config_lp(&p, 0.05, KdoMode::Exact, LpMode::Dense).map_err(|e| e.to_string())?;
        let sol = equalize_xy(&p, &sol);
        let positive = sol.y.iter().flatten().filter(|&&y| y > 1e-9).count();
        if positive >= 3 && p.segments() >= 2 {
            chosen = Some((p, sol));
            break;
        }
    }
    let (p, sol) = chosen.ok_or("no suitable instance")?;
    let trials = 100_000u64;
    let counts = (0..trials)
        .into_par_iter()
        .fold(
            || sol.y.iter().map(|ys| vec![0u64; ys.len()]).collect::<Vec<_>>(),
            |mut acc, t| {
                let tr = round_trace(&p, &sol, t);
                for (j, set) in tr.after_load_check.iter().enumerate() {
                    for &k in set {
                        acc[j][k] += 1;
                    }
                }
                acc
            },
        )
        .reduce(
            || sol.y.iter().map(|ys| vec![0u64; ys.len()]).collect::<Vec<_>>(),
            |mut a, b| {
                for (x, y) in a.iter_mut().flatten().zip(b.iter().flatten()) {
                    *x += y;
                }
                a
            },
        );
    let mut copies_checked = 0;
    let mut min_margin = f64::INFINITY;
    for (j, ys) in sol.y.iter().enumerate() {
        for (k, &y) in ys.iter().enumerate() {
            if y <= 1e-12 {
                continue;
            }
            let target = y / 8.0;
            let freq = counts[j][k] as f64 / trials as f64;
            let se = (target * (1.0 - target) / trials as f64).sqrt();
            ensure(freq >= target - 3.0 * se, || format!("copy ({j},{k}): {freq} < {target}"))?;
            min_margin = min_margin.min(freq / target);
            copies_checked += 1;
        }
    }
    Ok(format!("{copies_checked} copies, {trials} trials, min freq/(y/8) {min_margin:.2}"))
}

fn c9_capped_means() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..1000 {
        let job = random_table_job(&mut rng, 4, 3000);
        for j in 0..10u32 {
            let a = capped_mean(&job, j + 1) / Rational::from_integer(BigInt::from(pow2(j + 1)));
            let b = capped_mean(&job, j) / Rational::from_integer(BigInt::from(pow2(j)));
            ensure(a <= b, || format!("job {i} j={j}"))?;
            ensure(job.capped_mean(j) == capped_mean(&job, j), || format!("job {i} library mismatch at j={j}"))?;
        }
    }
    Ok("1000 jobs, j <= 10".into())
}

fn c10_determinism() -> Result<String, String> {
    let run = || -> Result<Vec<String>, String> {
        let mut out = Vec::new();
        let r = gap_report(3, Variant::Line, BeamParams { seed: 4, ..BeamParams::default() }).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        export_gap_csv(&[r], &mut buf).map_err(|e| e.to_string())?;
        out.push(String::from_utf8(buf).map_err(|e| e.to_string())?);
        let inst = tiny(31);
        let e = end_to_end(&inst, &E2eParams { seed: 2, ..E2eParams::default() }).map_err(|e| e.to_string())?;
        out.push(format!("{:?} {} {:?}", e.policy, e.value, e.guesses));
        let t = build_tree(3).map_err(|e| e.to_string())?;
        let rinst = to_rational_instance(&t, Variant::Line);
        let mc = eval_na_mc(&rinst, &NaPolicy::plain(vec![0, 1, 2]), 20_000, 8);
        out.push(format!("{mc:?}"));
        out.push(inst.to_json_string(None));
        Ok(out)
    };
    let a = run()?;
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?
        .install(run)?;
    ensure(a == b, || "outputs differ between runs".into())?;
    Ok(format!("{} seeded outputs identical across runs and thread counts", a.len()))
}

fn main() {
    let checks: [(&str, Check, Duration); 10] = [
        ("construction suite", c1_structure, Duration::from_secs(5)),
        ("adaptive closed form", c2_closed_form, Duration::from_secs(10)),
        ("non-adaptive bounds", c3_na_bounds, Duration::from_secs(120)),
        ("ordering lemma", c4_ordering, Duration::from_secs(30)),
        ("reduction", c5_reduction, Duration::from_secs(120)),
        ("copies sandwich", c6_copies, Duration::from_secs(5)),
        ("LP agreement", c7_lp_agreement, Duration::from_secs(180)),
        ("rounding survival", c8_survival, Duration::from_secs(60)),
        ("capped-mean monotonicity", c9_capped_means, Duration::from_secs(5)),
        ("determinism", c10_determinism, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in checks.iter().enumerate() {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let res = res.and_then(|msg| {
            if took > *limit {
                Err(format!("{msg}; took {took:.1?} > {limit:?}"))
            } else {
                Ok(msg)
            }
        });
        match res {
            Ok(msg) => println!("criterion {:>2} PASS  {name}: {msg} ({took:.2?})", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {msg} ({took:.2?})", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
