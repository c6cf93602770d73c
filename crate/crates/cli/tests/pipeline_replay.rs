//! Pipeline behavior over the bundled replay fixture: stage reruns,
//! per-cell failure isolation, and the CLI's exit-code contract.

mod common;

use std::process::Command;

use sectorfolio_cli::pipeline::Pipeline;
use sectorfolio_cli::{CellState, RunConfig};

#[test]
fn later_stages_rerun_from_persisted_artifacts() {
    let config = common::fixture_config();
    let out = tempfile::tempdir().unwrap();
    let pipeline = Pipeline::new(config).unwrap();
    let manifest = pipeline.run(out.path()).unwrap();
    assert_eq!(manifest.failed_cells(), 0);
    let digests_before = std::fs::read(out.path().join("digests.txt")).unwrap();

    // rerunning the numeric stages from stage outputs must not change
    // any emitted artifact
    let config = common::fixture_config();
    let pipeline = Pipeline::new(config).unwrap();
    pipeline.optimize(out.path()).unwrap();
    pipeline.backtest(out.path()).unwrap();
    pipeline.diagnose(out.path()).unwrap();
    pipeline.report(out.path()).unwrap();
    let digests_after = std::fs::read(out.path().join("digests.txt")).unwrap();
    assert_eq!(digests_before, digests_after);
}

#[test]
fn missing_cassette_isolates_to_its_cell() {
    let work = tempfile::tempdir().unwrap();
    let fixture = work.path().join("fixture");
    common::copy_fixture_to(&fixture);
    std::fs::remove_file(fixture.join("cassettes/bravo_2__utilities.jsonl")).unwrap();

    let config = RunConfig::load(&fixture.join("config.toml")).unwrap();
    let out = tempfile::tempdir().unwrap();
    let manifest = Pipeline::new(config).unwrap().run(out.path()).unwrap();

    assert_eq!(manifest.failed_cells(), 1);
    assert_eq!(manifest.successful_cells(), 5);
    assert_eq!(manifest.portfolio_count, 25, "5 per surviving cell");
    let failed: Vec<_> = manifest
        .cells
        .iter()
        .filter(|c| c.state == CellState::Failed)
        .collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].model_id, "bravo-2");
    assert_eq!(failed[0].sector_name, "Utilities");
    assert!(failed[0].error.is_some());

    // the classification grid leaves the failed cell empty
    let grid = std::fs::read_to_string(out.path().join("class_cumulative_oos_1.csv")).unwrap();
    let utilities_row = grid
        .lines()
        .find(|l| l.starts_with("Utilities"))
        .expect("utilities row present");
    assert!(utilities_row.ends_with(','), "failed cell must be empty: {utilities_row}");
}

#[test]
fn all_cells_failing_is_fatal_at_report() {
    let work = tempfile::tempdir().unwrap();
    let fixture = work.path().join("fixture");
    common::copy_fixture_to(&fixture);
    for entry in std::fs::read_dir(fixture.join("cassettes")).unwrap() {
        std::fs::remove_file(entry.unwrap().path()).unwrap();
    }
    let config = RunConfig::load(&fixture.join("config.toml")).unwrap();
    let out = tempfile::tempdir().unwrap();
    let err = Pipeline::new(config).unwrap().run(out.path()).unwrap_err();
    assert!(err.to_string().contains("no successful cells"));
}

#[test]
fn results_csv_covers_every_kind_and_window() {
    let config = common::fixture_config();
    let out = tempfile::tempdir().unwrap();
    Pipeline::new(config).unwrap().run(out.path()).unwrap();
    let results = std::fs::read_to_string(out.path().join("results.csv")).unwrap();
    let lines: Vec<&str> = results.lines().collect();
    assert!(lines[0].starts_with("model_id,sector,kind,window"));
    // 3 sectors x 3 windows index rows + 6 cells x 3 windows x 5 kinds
    assert_eq!(lines.len() - 1, 9 + 90);
    for kind in [
        "llm_weighted",
        "equal_weighted",
        "min_variance",
        "max_return",
        "max_sharpe",
        "index",
    ] {
        assert!(
            lines.iter().any(|l| l.contains(&format!(",{kind},"))),
            "{kind} missing from results"
        );
    }
    for class in ["Green", "Yellow", "Red"] {
        let _ = class; // class values are data-dependent; presence of the
                       // columns is guaranteed by the fixed header
    }
    let paths = std::fs::read_to_string(out.path().join("paths.csv")).unwrap();
    assert!(paths.starts_with("date,label,value\n"));
    assert!(paths.contains("-/Energy/index/oos_1"));
    assert!(paths.contains("alpha-5/Energy/llm_weighted/oos_2"));
}

#[test]
fn cli_run_succeeds_with_exit_zero() {
    let out = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_sectorfolio"))
        .args([
            "run",
            "--config",
            common::fixture_dir().join("config.toml").to_str().unwrap(),
            "--out",
            out.path().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.path().join("digests.txt").exists());
    assert!(out.path().join("manifest.json").exists());
}

#[test]
fn cli_partial_failure_exits_two() {
    let work = tempfile::tempdir().unwrap();
    let fixture = work.path().join("fixture");
    common::copy_fixture_to(&fixture);
    std::fs::remove_file(fixture.join("cassettes/alpha_5__energy.jsonl")).unwrap();
    let out = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_sectorfolio"))
        .args([
            "run",
            "--config",
            fixture.join("config.toml").to_str().unwrap(),
            "--out",
            out.path().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn cli_fatal_error_exits_one() {
    let status = Command::new(env!("CARGO_BIN_EXE_sectorfolio"))
        .args(["run", "--config", "/nonexistent/config.toml"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn stage_subcommands_chain_through_the_cli() {
    let out = tempfile::tempdir().unwrap();
    let config_path = common::fixture_dir().join("config.toml");
    for stage in [
        "select", "weight", "build", "optimize", "backtest", "diagnose", "report",
    ] {
        let status = Command::new(env!("CARGO_BIN_EXE_sectorfolio"))
            .args([
                stage,
                "--config",
                config_path.to_str().unwrap(),
                "--out",
                out.path().to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0), "stage {stage} failed");
    }
    assert!(out.path().join("universes.json").exists());
    assert!(out.path().join("portfolios.csv").exists());
    assert!(out.path().join("results.csv").exists());
    assert!(out.path().join("diag_hhi.csv").exists());
    assert!(out.path().join("digests.txt").exists());
}

#[test]
fn frontier_exports_exist_per_cell() {
    let config = common::fixture_config();
    let out = tempfile::tempdir().unwrap();
    Pipeline::new(config).unwrap().run(out.path()).unwrap();
    let frontier = out.path().join("frontiers/frontier_alpha_5__energy.csv");
    let text = std::fs::read_to_string(frontier).unwrap();
    assert!(text.starts_with("epsilon,expected_return,variance,sharpe\n"));
    // 30 configured points plus the header
    assert_eq!(text.lines().count(), 31);
    let weights = out
        .path()
        .join("frontiers/frontier_weights_alpha_5__energy.csv");
    assert!(weights.exists());
}
