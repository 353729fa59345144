//! Quick invariant suite behind the `selftest` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corralg::copies::{copies, sandwich_violations};
use crate::corralg::kdo::KdoMode;
use crate::corralg::lp::{equality_gap, equalize_xy, solve_config_lp, LpMode, LpProblem};
use crate::corralg::pipeline::{build_kdo_instances, end_to_end, enumerate_guesses, E2eParams};
use crate::corralg::rounding::round_lp;
use crate::field::{rat, Rational};
use crate::gapsearch::{gap_report, BeamParams};
use crate::lowerbound::{
    adaptive_value_formula, build_tree, check_structure, embed_line, ordering_exceptions, rational_p,
    to_rational_instance, Variant,
};
use crate::policy::{adaptive_policy_a, eval_adaptive_exact};
use crate::random::{random_instance, random_table_job, RandomSpec};
use crate::QuadSurd;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> SelfCheck {
    match f() {
        Ok(detail) => SelfCheck { name, passed: true, detail },
        Err(detail) => SelfCheck { name, passed: false, detail },
    }
}

fn tiny(seed: u64) -> crate::Instance<Rational> {
    random_instance(
        RandomSpec {
            grid: 1,
            ..RandomSpec::small(4, 4)
        },
        seed,
    )
}

pub fn run_selftest() -> Vec<SelfCheck> {
    let mut out = Vec::new();
    out.push(check("construction claims", || {
        for levels in 1..=8 {
            let t = build_tree(levels).map_err(|e| e.to_string())?;
            if !check_structure(&t).all_passed() {
                return Err(format!("L={levels}"));
            }
            if !ordering_exceptions(&t, &embed_line(&t)).is_empty() && levels <= 5 {
                return Err(format!("ordering L={levels}"));
            }
        }
        Ok("L <= 8".into())
    }));
    out.push(check("adaptive closed form", || {
        for levels in 1..=6 {
            let t = build_tree(levels).map_err(|e| e.to_string())?;
            let inst = to_rational_instance(&t, Variant::DirectedTree);
            let v = eval_adaptive_exact(&inst, &adaptive_policy_a(&t)).map_err(|e| e.to_string())?;
            if v != adaptive_value_formula(levels, &rational_p(levels)) {
                return Err(format!("L={levels}: {v}"));
            }
        }
        Ok("L <= 6".into())
    }));
    out.push(check("two-level line gap", || {
        let r = gap_report(2, Variant::Line, BeamParams::default()).map_err(|e| e.to_string())?;
        let half3 = QuadSurd::rational(rat(3, 2));
        if r.best_na_value == half3 && r.adaptive_value == half3 {
            Ok("3/2 vs 3/2".into())
        } else {
            Err(format!("{} vs {}", r.adaptive_value, r.best_na_value))
        }
    }));
    out.push(check("copies sandwich", || {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for i in 0..100 {
            let mut f: Vec<Rational> = (0..rng.gen_range(1..30)).map(|_| rat(rng.gen_range(0..500), 1)).collect();
            f.sort_by(|a, b| b.cmp(a));
            if !sandwich_violations(&f, &copies(&f)).is_empty() {
                return Err(format!("curve {i}"));
            }
        }
        Ok("100 curves".into())
    }));
    out.push(check("capped-mean monotonicity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..1000 {
            let job = random_table_job(&mut rng, 4, 3000);
            for j in 0..10u32 {
                if job.capped_mean(j + 1) > job.capped_mean(j) * rat(2, 1) {
                    return Err(format!("job {i} j={j}"));
                }
            }
        }
        Ok("1000 jobs".into())
    }));
    out.push(check("configuration LP", || {
        let mut worst: f64 = 1.0;
        for seed in 0..5u64 {
            let inst = tiny(700 + seed);
            let guesses = enumerate_guesses(&inst).map_err(|e| e.to_string())?;
            let g = &guesses[(seed as usize * 7919) % guesses.len()];
            let k = rat(12, 1);
            let kdos = build_kdo_instances(&inst, g, &k).map_err(|e| e.to_string())?;
            let p = LpProblem::new(&inst, kdos, k);
            let dense = solve_config_lp(&p, 0.05, KdoMode::Exact, LpMode::Dense).map_err(|e| e.to_string())?;
            let mwu = solve_config_lp(&p, 0.05, KdoMode::Exact, LpMode::Mwu).map_err(|e| e.to_string())?;
            if dense.objective > 1e-9 {
                worst = worst.min(mwu.objective / dense.objective);
            }
            let eq = equalize_xy(&p, &dense);
            if equality_gap(&p, &eq) > 1e-9 || equalize_xy(&p, &eq).columns.len() != eq.columns.len() {
                return Err(format!("equalize seed {seed}"));
            }
            for t in 0..20 {
                let (pol, _) = round_lp(&p, &eq, t);
                pol.validate(inst.n()).map_err(|e| format!("rounding seed {seed}: {e}"))?;
            }
        }
        if worst < 0.95 {
            return Err(format!("MWU/dense {worst}"));
        }
        Ok(format!("worst MWU/dense {worst:.4}"))
    }));
    out.push(check("end-to-end determinism", || {
        let inst = tiny(31);
        let params = E2eParams { seed: 2, ..E2eParams::default() };
        let a = end_to_end(&inst, &params).map_err(|e| e.to_string())?;
        let b = end_to_end(&inst, &params).map_err(|e| e.to_string())?;
        if a == b {
            Ok(format!("value {}", a.value))
        } else {
            Err("runs differ".into())
        }
    }));
    out
}
