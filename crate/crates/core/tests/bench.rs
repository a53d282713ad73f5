use std::path::Path;

use sdr_core::bench::{emit_table, parse_plan, run_monte_carlo, ExperimentPlan, TableFormat};
use sdr_core::Method;

fn plans_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../plans"))
}

fn small_plan(reps: usize, workers: usize) -> ExperimentPlan {
    let text = format!(
        r#"{{
            "scenarios": [
                {{"name": "a", "n": 160, "p": 30, "s_theta": 2, "s_beta": 2}},
                {{"name": "b", "n": 120, "p": 20, "s_theta": 4, "s_beta": 2, "heteroskedastic": true}}
            ],
            "methods": ["sdr", "aipw", "arb"],
            "reps": {reps},
            "master_seed": 11,
            "parallelism": {workers}
        }}"#
    );
    ExperimentPlan::from_json(&text).unwrap()
}

#[test]
fn aggregates_recompute_from_records() {
    let result = run_monte_carlo(&small_plan(6, 2)).unwrap();
    for scenario in &result.scenarios {
        for m in &scenario.methods {
            assert_eq!(m.rep_records.len(), 6);
            assert_eq!(m.completed + m.failures, 6);
            let ok: Vec<_> = m.rep_records.iter().filter(|r| r.error.is_none()).collect();
            let sq: Vec<f64> = ok.iter().map(|r| (r.tau_hat.unwrap() - scenario.tau_true).powi(2)).collect();
            let mse = sq.iter().sum::<f64>() / sq.len() as f64;
            assert_eq!(m.mse, Some(mse));
            let covered = ok.iter().filter(|r| r.covered == Some(true)).count() as f64;
            let cp = covered / ok.len() as f64;
            assert_eq!(m.cp, Some(cp));
            assert!((0.0..=1.0).contains(&cp));
            assert_eq!(m.mc_se_cp, Some((cp * (1.0 - cp) / ok.len() as f64).sqrt()));
            for r in &ok {
                let (lo, hi) = (r.ci_lower.unwrap(), r.ci_upper.unwrap());
                assert_eq!(r.covered, Some(lo <= scenario.tau_true && scenario.tau_true <= hi));
            }
        }
    }
}

#[test]
fn single_replication_is_degenerate() {
    let result = run_monte_carlo(&small_plan(1, 1)).unwrap();
    let m = result.cell("a", Method::Sdr).unwrap();
    let tau = m.rep_records[0].tau_hat.unwrap();
    assert_eq!(m.mse, Some((tau - result.scenarios[0].tau_true).powi(2)));
    assert!(m.cp == Some(0.0) || m.cp == Some(1.0));
    assert_eq!(m.mc_se_cp, Some(0.0));
}

#[test]
fn results_independent_of_worker_count() {
    let one = serde_json::to_string(&run_monte_carlo(&small_plan(5, 1)).unwrap()).unwrap();
    let four = serde_json::to_string(&run_monte_carlo(&small_plan(5, 4)).unwrap()).unwrap();
    assert_eq!(one, four);
}

#[test]
fn methods_share_each_replication_dataset() {
    let mut plan = small_plan(3, 1);
    plan.methods = vec![Method::Sdr];
    let sdr_only = run_monte_carlo(&plan).unwrap();
    let all = run_monte_carlo(&small_plan(3, 1)).unwrap();
    assert_eq!(
        sdr_only.cell("b", Method::Sdr).unwrap().rep_records,
        all.cell("b", Method::Sdr).unwrap().rep_records
    );
}

#[test]
fn shipped_plans_parse() {
    let table1 = parse_plan(&plans_dir().join("table1.json")).unwrap();
    assert_eq!(table1.scenarios.len(), 8);
    assert_eq!(table1.methods, vec![Method::Aipw, Method::Arb, Method::Sdr]);
    assert_eq!(table1.reps, 500);
    let mut cells: Vec<(usize, usize, bool)> = table1
        .scenarios
        .iter()
        .map(|s| (s.s_theta, s.s_beta, s.heteroskedastic))
        .collect();
    cells.sort();
    let mut expected = Vec::new();
    for st in [2, 30] {
        for sb in [2, 30] {
            for h in [false, true] {
                expected.push((st, sb, h));
            }
        }
    }
    assert_eq!(cells, expected);
    assert!(table1.scenarios.iter().all(|s| (s.n, s.p, s.rho, s.r_squared) == (500, 600, 0.6, 0.5)));

    let table2 = parse_plan(&plans_dir().join("table2.json")).unwrap();
    assert_eq!(table2.scenarios.len(), 8);
    assert!(table2.scenarios.iter().all(|s| s.r_squared == 0.1));

    let smoke = parse_plan(&plans_dir().join("smoke.json")).unwrap();
    assert_eq!((smoke.scenarios[0].n, smoke.scenarios[0].p, smoke.reps), (200, 300, 100));
}

#[test]
fn table_shape_follows_plan() {
    let mut plan = parse_plan(&plans_dir().join("table1.json")).unwrap();
    // shrink the designs so the shape check stays cheap
    for s in &mut plan.scenarios {
        s.n = 120;
        s.p = 80;
    }
    plan.reps = 1;
    let result = run_monte_carlo(&plan).unwrap();
    let md = emit_table(&result, TableFormat::Markdown);
    let lines: Vec<&str> = md.lines().collect();
    assert_eq!(lines.len(), 2 + 3);
    for row in &lines[2..] {
        assert_eq!(row.matches('|').count(), 2 + 16);
    }
    assert!(lines[2].starts_with("| AIPW |"));

    let csv = emit_table(&result, TableFormat::Csv);
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    assert_eq!(reader.headers().unwrap().len(), 17);
    for (record, m) in reader.records().zip(&plan.methods) {
        let record = record.unwrap();
        assert_eq!(&record[0], m.as_str());
        for (k, scenario) in result.scenarios.iter().enumerate() {
            let cell = scenario.methods.iter().find(|r| r.method == *m).unwrap();
            for (field, value) in [(&record[1 + 2 * k], cell.mse), (&record[2 + 2 * k], cell.cp)] {
                match value {
                    Some(v) => assert_eq!(field.parse::<f64>().unwrap(), (v * 1000.0).round() / 1000.0),
                    None => assert_eq!(field, "NA"),
                }
            }
        }
    }
}
