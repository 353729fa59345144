//! CSV export of gap tables and serde helpers for exact numbers.

use std::io::{Read, Write};

use serde::Serializer;

use crate::field::{parse_rational, Field, QuadSurd, Rational};
use crate::gapsearch::{GapReport, SearchMode};
use crate::lowerbound::Variant;
use crate::policy::NaPolicy;

/// Serialize a rational as `"num/den"` (or `"n"` for integers).
pub fn ser_rational<S: Serializer>(q: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&q.to_string())
}

pub fn ser_rationals<S: Serializer>(qs: &[Rational], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(qs.iter().map(|q| q.to_string()))
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("bad field `{field}` in row {row}: {value}")]
    Field { row: usize, field: &'static str, value: String },
}

pub const GAP_HEADER: [&str; 11] = [
    "L",
    "variant",
    "adaptive",
    "best_na",
    "ratio",
    "mode",
    "adaptive_f64",
    "best_na_f64",
    "ratio_f64",
    "route",
    "attempt_prob",
];

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

/// One row per report; exact values first, then their float forms.
pub fn export_gap_csv<W: Write>(reports: &[GapReport<QuadSurd>], out: W) -> Result<(), ReportError> {
    export_gap_csv_tagged(reports, &[], out)
}

/// As [`export_gap_csv`], with constant `(column, value)` pairs appended to
/// every row.
pub fn export_gap_csv_tagged<W: Write>(
    reports: &[GapReport<QuadSurd>],
    tags: &[(&str, String)],
    out: W,
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = GAP_HEADER.iter().copied().chain(tags.iter().map(|t| t.0)).collect();
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.levels.to_string(),
            r.variant.to_string(),
            r.adaptive_value.to_string(),
            r.best_na_value.to_string(),
            r.ratio.to_string(),
            r.mode.to_string(),
            format!("{:.12}", r.adaptive_value.to_f64()),
            format!("{:.12}", r.best_na_value.to_f64()),
            format!("{:.12}", r.ratio.to_f64()),
            join(&r.best_na_policy.route),
            join(&r.best_na_policy.attempt_prob),
        ];
        row.extend(tags.iter().map(|t| t.1.clone()));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Inverse of [`export_gap_csv`]; float and tag columns are ignored.
pub fn parse_gap_csv<R: Read>(input: R) -> Result<Vec<GapReport<QuadSurd>>, ReportError> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let bad = |field: &'static str, value: &str| ReportError::Field {
            row,
            field,
            value: value.to_string(),
        };
        let num = |i: usize, field: &'static str| get(i).parse::<QuadSurd>().map_err(|_| bad(field, get(i)));
        let levels = get(0).parse().map_err(|_| bad("levels", get(0)))?;
        let variant: Variant = get(1).parse().map_err(|_| bad("variant", get(1)))?;
        let mode: SearchMode = get(5).parse().map_err(|_| bad("mode", get(5)))?;
        let route = get(9)
            .split_whitespace()
            .map(|s| s.parse::<usize>().map_err(|_| bad("route", s)))
            .collect::<Result<Vec<_>, _>>()?;
        let attempt_prob = get(10)
            .split_whitespace()
            .map(|s| s.parse::<QuadSurd>().map_err(|_| bad("attempt_prob", s)))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(GapReport {
            levels,
            variant,
            adaptive_value: num(2, "adaptive")?,
            best_na_value: num(3, "best_na")?,
            ratio: num(4, "ratio")?,
            mode,
            best_na_policy: NaPolicy { route, attempt_prob },
        });
    }
    Ok(out)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct PolicyJson {
    route: Vec<usize>,
    attempt_prob: Vec<String>,
}

/// `{"route": [...], "attempt_prob": ["num/den", ...]}`.
pub fn policy_to_json(pol: &NaPolicy<Rational>) -> serde_json::Value {
    serde_json::to_value(PolicyJson {
        route: pol.route.clone(),
        attempt_prob: pol.attempt_prob.iter().map(|q| q.to_string()).collect(),
    })
    .expect("policy serialises")
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyJsonError {
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("bad probability `{0}`")]
    Number(String),
}

pub fn policy_from_json(value: serde_json::Value) -> Result<NaPolicy<Rational>, PolicyJsonError> {
    let raw: PolicyJson = serde_json::from_value(value)?;
    let attempt_prob = raw
        .attempt_prob
        .iter()
        .map(|s| parse_rational(s).ok_or_else(|| PolicyJsonError::Number(s.clone())))
        .collect::<Result<_, _>>()?;
    Ok(NaPolicy {
        route: raw.route,
        attempt_prob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::rat;
    use crate::gapsearch::{gap_report, BeamParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn csv_of(reports: &[GapReport<QuadSurd>]) -> String {
        let mut buf = Vec::new();
        export_gap_csv(reports, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn two_level_line_row() {
        let r = gap_report(2, Variant::Line, BeamParams::default()).unwrap();
        let text = csv_of(&[r]);
        let row = text.lines().nth(1).unwrap();
        assert!(row.starts_with("2,line,3/2,3/2,1,exhaustive"), "{row}");
    }

    #[test]
    fn empty_report_is_header_only() {
        let text = csv_of(&[]);
        assert_eq!(text.lines().count(), 1);
        assert!(parse_gap_csv(text.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn round_trip_random_reports() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let variants = [Variant::DirectedTree, Variant::UndirectedTree, Variant::Line];
        let modes = [SearchMode::Exhaustive, SearchMode::Structured, SearchMode::Heuristic];
        let mut reports = Vec::new();
        for _ in 0..10 {
            let q = |rng: &mut ChaCha8Rng| {
                QuadSurd::new(
                    rat(rng.gen_range(-9..9), rng.gen_range(1..9)),
                    rat(rng.gen_range(-9..9), rng.gen_range(1..9)),
                    [2, 3, 5][rng.gen_range(0..3)],
                )
            };
            let len = rng.gen_range(0..5);
            reports.push(GapReport {
                levels: rng.gen_range(1..9),
                variant: variants[rng.gen_range(0..3)],
                adaptive_value: q(&mut rng),
                best_na_value: q(&mut rng),
                ratio: q(&mut rng),
                mode: modes[rng.gen_range(0..3)],
                best_na_policy: NaPolicy {
                    route: (0..len).map(|_| rng.gen_range(0..60)).collect(),
                    attempt_prob: (0..len).map(|_| QuadSurd::rational(rat(1, rng.gen_range(1..5)))).collect(),
                },
            });
        }
        let text = csv_of(&reports);
        assert_eq!(parse_gap_csv(text.as_bytes()).unwrap(), reports);
    }

    #[test]
    fn tags_are_appended_and_ignored_on_parse() {
        let r = gap_report(1, Variant::Line, BeamParams::default()).unwrap();
        let mut buf = Vec::new();
        export_gap_csv_tagged(std::slice::from_ref(&r), &[("config_hash", "ab12".into())], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().ends_with(",config_hash"));
        assert!(text.lines().nth(1).unwrap().ends_with(",ab12"));
        assert_eq!(parse_gap_csv(text.as_bytes()).unwrap(), vec![r]);
    }

    #[test]
    fn policy_json_round_trip() {
        let pol = NaPolicy {
            route: vec![3, 0, 2],
            attempt_prob: vec![rat(1, 48), rat(0, 1), rat(1, 1)],
        };
        let v = policy_to_json(&pol);
        assert_eq!(v["attempt_prob"][0], "1/48");
        assert_eq!(policy_from_json(v).unwrap(), pol);
        let bad = serde_json::json!({"route": [0], "attempt_prob": ["x"]});
        assert!(matches!(policy_from_json(bad), Err(PolicyJsonError::Number(_))));
    }
}
