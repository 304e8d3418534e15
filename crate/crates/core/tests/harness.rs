use std::collections::BTreeSet;

use dkf_core::filters::Algorithm;
use dkf_core::harness::{
    emit_qws_report, emit_report, emit_steady_state_report, qws_benchmark, relative_degradation, run_experiment,
    run_experiment_with, steady_state_report, write_long_csv, ExperimentConfig, ExperimentReport, CSV_HEADER,
};
use dkf_core::DkfError;

fn small_config(edit: impl FnOnce(&mut ExperimentConfig)) -> ExperimentConfig {
    let mut config = ExperimentConfig::from_json(
        r#"{
            "name": "small",
            "network": { "kind": "named", "topology": "circle", "nodes": 6 },
            "model": { "T": 0.1, "horizon_steps": 40 },
            "gammas": [1, 2],
            "trials": 30,
            "base_seed": 7
        }"#,
    )
    .unwrap();
    edit(&mut config);
    config.validate().unwrap();
    config
}

fn csv_text(report: &ExperimentReport) -> String {
    let mut buf = Vec::new();
    write_long_csv(report, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn smoke_single_trial_three_steps() {
    let config = ExperimentConfig::from_json(
        r#"{"network": {"kind": "named", "topology": "line", "nodes": 3},
            "model": {"T": 0.1, "horizon_steps": 3}, "algorithms": ["ckf"], "trials": 1}"#,
    )
    .unwrap();
    let report = run_experiment(&config).unwrap();
    assert_eq!(report.cells.len(), 1);
    let cell = &report.cells[0];
    assert!(cell.is_ok());
    assert_eq!(cell.mse.len(), 3);
    assert!(cell.mse.iter().flatten().all(|v| v.is_finite()));
    assert_eq!(report.steady_window, (3, 3));
}

#[test]
fn long_csv_has_one_row_per_cell_node_and_step() {
    let config = small_config(|_| {});
    let report = run_experiment(&config).unwrap();
    assert_eq!(report.cells.len(), 2 * Algorithm::ALL.len());
    assert!(report.cells.iter().all(|c| c.is_ok()), "{:?}", report.cells.iter().find(|c| !c.is_ok()));
    let text = csv_text(&report);
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rows.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER.to_vec());
    let mut keys = BTreeSet::new();
    for rec in rows.records() {
        let rec = rec.unwrap();
        let node: usize = rec[4].parse().unwrap();
        let k: usize = rec[5].parse().unwrap();
        assert!((1..=6).contains(&node) && (1..=40).contains(&k));
        rec[6].parse::<f64>().unwrap();
        assert!(keys.insert((rec[1].to_string(), rec[2].to_string(), node, k)));
    }
    assert_eq!(keys.len(), 2 * Algorithm::ALL.len() * 6 * 40);
}

#[test]
fn empty_sweep_writes_only_the_header() {
    let config = small_config(|c| c.algorithms.clear());
    let report = run_experiment(&config).unwrap();
    assert!(report.cells.is_empty());
    let text = csv_text(&report);
    assert_eq!(text.trim_end(), CSV_HEADER.join(","));
}

#[test]
fn json_report_round_trips() {
    let config = small_config(|c| {
        c.gammas = vec![1];
        c.algorithms = vec![Algorithm::Ckf, Algorithm::McmDirect, Algorithm::MciStoch];
    });
    let report = run_experiment(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&report, dir.path()).unwrap();
    assert_eq!(files.len(), 3);
    let back: ExperimentReport = serde_json::from_str(&std::fs::read_to_string(&files[2]).unwrap()).unwrap();
    assert_eq!(back, report);
    assert_eq!(std::fs::read_to_string(&files[0]).unwrap(), csv_text(&report));
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let config = small_config(|c| {
        c.gammas = vec![2];
        c.trials = 60;
    });
    let setup = config.setup().unwrap();
    let one = run_experiment_with(&config, &setup, 1).unwrap();
    let two = run_experiment_with(&config, &setup, 3).unwrap();
    assert_eq!(csv_text(&one), csv_text(&two));
    assert_eq!(one.cells, two.cells);
    // and on the seed
    let other = small_config(|c| {
        c.gammas = vec![2];
        c.trials = 60;
        c.base_seed = 8;
    });
    assert_ne!(csv_text(&run_experiment_with(&other, &setup, 1).unwrap()), csv_text(&one));
}

#[test]
fn centralized_filter_is_best_at_steady_state() {
    let config = small_config(|c| c.trials = 100);
    let report = run_experiment(&config).unwrap();
    for &gamma in &config.gammas {
        let ckf = report.cell(Algorithm::Ckf, gamma, 0.0).unwrap();
        for cell in report.cells.iter().filter(|c| c.gamma == gamma && c.algorithm != Algorithm::Ckf) {
            let se = ckf.mmse_std_error.hypot(cell.mmse_std_error);
            assert!(ckf.mmse <= cell.mmse + 2.0 * se, "{} γ {gamma}: {} vs {}", cell.algorithm, ckf.mmse, cell.mmse);
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let base = r#""network": {"kind": "named", "topology": "line", "nodes": 3}, "model": {"T": 0.1, "horizon_steps": 10}"#;
    for extra in [
        r#""trials": 0"#,
        r#""gammas": [0]"#,
        r#""etas": [1.0]"#,
        r#""steady_window": [5, 11]"#,
        r#""omega": -1"#,
    ] {
        let text = format!("{{{base}, {extra}}}");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(DkfError::Config(_))), "{extra}");
    }
    assert!(matches!(ExperimentConfig::from_json(r#"{"network": 3}"#), Err(DkfError::Json(_))));
    let wrong_types = r#"{"network": {"kind": "named", "topology": "line", "nodes": 3},
        "model": {"T": 0.1, "horizon_steps": 10, "node_types": [1, 2]}}"#;
    let config = ExperimentConfig::from_json(wrong_types).unwrap();
    assert!(matches!(config.setup(), Err(DkfError::Config(_))));
}

#[test]
fn eta_sweep_reports_degradation_against_eta_zero() {
    let config = small_config(|c| {
        c.gammas = vec![2];
        c.etas = vec![0.0, 0.5];
        c.algorithms = vec![Algorithm::Cm, Algorithm::McmDirect];
    });
    let report = run_experiment(&config).unwrap();
    let rows = relative_degradation(&report);
    assert_eq!(rows.len(), 4);
    for row in rows {
        if row.eta == 0.0 {
            assert_eq!(row.relative, 0.0);
        }
        let base = report.cell(row.algorithm, 2, 0.0).unwrap().mmse;
        assert!((row.relative - (row.mmse - base) / base).abs() < 1e-15);
    }
}

#[test]
fn steady_state_report_covers_every_family() {
    let config = small_config(|c| c.gammas = vec![1, 3, 5]);
    let setup = config.setup().unwrap();
    let report = steady_state_report(&config, &setup).unwrap();
    let families: BTreeSet<_> = report.entries.iter().map(|e| e.algorithm).collect();
    assert_eq!(families.len(), 5, "{families:?}");
    for e in &report.entries {
        assert!(e.error.is_none(), "{:?}", e.error);
        assert_eq!(e.nodes.len(), 6);
    }
    let mcm: Vec<_> = report.entries.iter().filter(|e| e.algorithm == Algorithm::McmDirect).map(|e| e.max_gap).collect();
    assert!(mcm.windows(2).all(|w| w[1] < w[0]), "{mcm:?}");
    let dir = tempfile::tempdir().unwrap();
    let files = emit_steady_state_report(&report, dir.path()).unwrap();
    let back: dkf_core::harness::SteadyStateReport =
        serde_json::from_str(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn qws_bench_on_complete_graph_is_exact() {
    let config = ExperimentConfig::from_json(
        r#"{"name": "complete", "network": {"kind": "named", "topology": "complete", "nodes": 5},
            "model": {"T": 0.1, "horizon_steps": 10},
            "qws_bench": {"gamma": 1, "steps": 10, "replicas": 20}}"#,
    )
    .unwrap();
    let setup = config.setup().unwrap();
    let report = qws_benchmark(&config, &setup, 1).unwrap();
    assert!(report.direct_bound_satisfied);
    assert!(report.direct.iter().all(|d| d.error_fro < 1e-12), "{:?}", report.direct.iter().map(|d| d.error_fro).fold(0.0, f64::max));
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(emit_qws_report(&report, dir.path()).unwrap().len(), 3);
}

#[test]
fn qws_bench_direct_bound_holds_on_a_ring() {
    let config = small_config(|c| {
        c.qws_bench.gamma = 2;
        c.qws_bench.steps = 40;
        c.qws_bench.replicas = 200;
    });
    let setup = config.setup().unwrap();
    let report = qws_benchmark(&config, &setup, 2).unwrap();
    assert_eq!(report.direct_violations, 0);
    assert!(report.direct_decay_rate.unwrap() < 1.0);
    let ratio = report.stochastic_ratio.unwrap();
    assert!((ratio - 1.0).abs() < 0.2, "{ratio}");
}
