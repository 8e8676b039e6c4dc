mod common;

use std::collections::BTreeMap;
use std::fs;

use fedsim::harness::{
    export_curves, find_metrics_files, read_metrics, run_experiment, run_sweep, summarize, Status, SweepSpec,
};
use fedsim::{Executor, HParam, Method, RunConfig, Skew};

use common::{config, strip_timing};

#[test]
fn single_round_run_writes_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Method::FedAvg, &[], 10, 4, 1);
    let out = run_experiment(&cfg, "r1", "-", dir.path(), &Executor::sequential()).unwrap();
    assert_eq!(out.metrics.len(), 1);
    let text = fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert_eq!(out.summary.best_round, Some(0));
}

#[test]
fn rerun_matches_except_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Method::FedSpeed, &[], 10, 4, 4);
    let mut texts = Vec::new();
    for name in ["a", "b"] {
        run_experiment(&cfg, "same", "-", &dir.path().join(name), &Executor::sequential()).unwrap();
        texts.push(fs::read_to_string(dir.path().join(name).join("metrics.jsonl")).unwrap());
        let info = fs::read_to_string(dir.path().join(name).join("run.json")).unwrap();
        assert!(info.contains("\"status\": \"completed\""));
    }
    assert_eq!(strip_timing(&texts[0]), strip_timing(&texts[1]));
}

#[test]
fn paper_shaped_default_config_completes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    assert_eq!((cfg.n_clients, cfg.sample_size, cfg.partition), (100, 10, Skew::Dirichlet(0.0)));
    let out = run_experiment(&cfg, "default", "-", dir.path(), &Executor::sequential()).unwrap();
    assert_eq!(out.info.status, Status::Completed);
    assert_eq!(out.metrics.len(), 100);
    assert!(out.summary.best_top1.unwrap() > 0.9);
}

#[test]
fn divergence_is_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Method::FedAvg, &[], 10, 4, 5);
    cfg.client_lr = 1e200;
    let out = run_experiment(&cfg, "boom", "-", dir.path(), &Executor::sequential()).unwrap();
    assert!(out.diverged());
    assert_eq!(out.summary.status, Status::Diverged);
    assert_eq!(out.summary.failed_round, Some(out.metrics.len()));
}

#[test]
fn summary_agrees_with_an_independent_rescan() {
    let dir = tempfile::tempdir().unwrap();
    for (i, method) in [Method::FedAvg, Method::FedCm, Method::FedSam].into_iter().enumerate() {
        let cfg = config(method, &[], 10, 4, 6);
        run_experiment(&cfg, &format!("run{i}"), "-", &dir.path().join(format!("run{i}")), &Executor::sequential())
            .unwrap();
    }
    let files = find_metrics_files(dir.path()).unwrap();
    assert_eq!(files.len(), 3);
    for (file, row) in files.iter().zip(summarize(&files)) {
        let row = row.unwrap();
        let series: Vec<f64> = read_metrics(file).unwrap().iter().filter_map(|m| m.test_top1).collect();
        let max = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first = series.iter().position(|&v| v == max).unwrap();
        assert_eq!(row.best_top1, Some(max));
        assert_eq!(row.best_round, Some(first));
    }
}

#[test]
fn curves_cover_every_round_in_order() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["b", "a"] {
        let mut cfg = config(Method::FedAvg, &[], 10, 4, 100);
        cfg.data = common::small_data(30);
        run_experiment(&cfg, name, "-", &dir.path().join(name), &Executor::sequential()).unwrap();
    }
    let files = find_metrics_files(dir.path()).unwrap();
    let (points, errors) = export_curves(&files, None);
    assert!(errors.is_empty());
    assert_eq!(points.len(), 200);
    assert!(points.windows(2).all(|w| (&w[0].run_id, w[0].round) < (&w[1].run_id, w[1].round)));
    let (zoom, _) = export_curves(&files, Some(20));
    assert_eq!(zoom.len(), 40);
    assert!(zoom.iter().all(|p| p.round >= 80));
}

fn tiny_sweep() -> SweepSpec {
    let mut base = config(Method::FedAvg, &[], 8, 3, 3);
    base.data = common::small_data(40);
    SweepSpec {
        base,
        methods: vec![Method::FedSam, Method::FedAvg],
        grid: BTreeMap::from([(Method::FedSam, BTreeMap::from([(HParam::Rho, vec![0.01, 0.1])]))]),
        partitions: vec![Skew::Iid, Skew::Dirichlet(0.0)],
        seeds: vec![1, 2],
    }
}

fn table_without_times(path: &std::path::Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut cols: Vec<&str> = l.split(',').collect();
            cols.remove(6);
            cols.join(",")
        })
        .collect()
}

#[test]
fn sweep_table_is_complete_sorted_and_worker_independent() {
    let spec = tiny_sweep();
    let one = tempfile::tempdir().unwrap();
    let report = run_sweep(&spec, one.path(), 1).unwrap();
    assert_eq!(report.rows.len(), 6);
    let keys: Vec<(&str, &str, &str)> = report
        .rows
        .iter()
        .map(|r| (r.method.as_str(), r.hparams.as_str(), r.partition.as_str()))
        .collect();
    assert_eq!(keys[0], ("fedavg", "-", "iid"));
    assert_eq!(keys[1], ("fedavg", "-", "dirichlet(0)"));
    assert_eq!(keys[2], ("fedsam", "rho=0.1", "iid"));
    assert_eq!(keys[4], ("fedsam", "rho=0.01", "iid"));
    assert!(report.rows.iter().all(|r| r.seeds == 2));
    let fedavg = report.rows[0].grad_evals_per_round;
    assert_eq!(report.rows[2].grad_evals_per_round, 2.0 * fedavg);

    let three = tempfile::tempdir().unwrap();
    run_sweep(&spec, three.path(), 3).unwrap();
    assert_eq!(table_without_times(&report.table_path), table_without_times(&three.path().join("sweep.csv")));

    // Re-running over existing outputs leaves the data unchanged.
    run_sweep(&spec, one.path(), 1).unwrap();
    assert_eq!(table_without_times(&report.table_path), table_without_times(&three.path().join("sweep.csv")));
}

#[test]
fn diverged_cells_still_get_rows() {
    let mut spec = tiny_sweep();
    spec.base.client_lr = 1e200;
    spec.partitions = vec![Skew::Iid];
    let dir = tempfile::tempdir().unwrap();
    let report = run_sweep(&spec, dir.path(), 1).unwrap();
    assert_eq!(report.rows.len(), 3);
    for row in &report.rows {
        assert_eq!(row.status, Status::Diverged);
        assert!(row.failed_round.is_some());
    }
}

#[test]
fn one_cell_sweep_has_one_row() {
    let mut spec = tiny_sweep();
    spec.methods = vec![Method::FedAvg];
    spec.grid.clear();
    spec.partitions = vec![Skew::Iid];
    spec.seeds = vec![5];
    let dir = tempfile::tempdir().unwrap();
    let report = run_sweep(&spec, dir.path(), 1).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].hparams, "-");
}
