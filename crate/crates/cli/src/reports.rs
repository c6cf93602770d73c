//! CSV artifact writers. Every float goes through the 10-significant-
//! digit formatter so emitted bytes are identical across platforms.

use std::io;
use std::path::Path;

use sectorfolio_core::backtest::MetricBasis;
use sectorfolio_core::diagnostics::DiagnosticsReport;
use sectorfolio_core::marketdata::WindowLabel;
use sectorfolio_core::optimizer::EfficientFrontier;
use sectorfolio_core::portfolio::Portfolio;
use sectorfolio_core::sigfig::format_sig10;
use sectorfolio_core::universe::UniverseSelection;
use sectorfolio_core::Real;

use crate::config::{slug, RunConfig};
use crate::pipeline::{BacktestArtifact, CellRecord};

fn field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_file(path: &Path, content: String) -> io::Result<()> {
    std::fs::write(path, content)
}

/// `kind,model_id,sector,ticker,weight` over every built portfolio.
pub fn write_portfolios_csv(
    out_dir: &Path,
    records: &[CellRecord<Vec<Portfolio<Real>>>],
) -> io::Result<()> {
    let mut out = String::from("kind,model_id,sector,ticker,weight\n");
    for record in records {
        let Some(portfolios) = &record.value else {
            continue;
        };
        for p in portfolios {
            for (ticker, &w) in p.tickers().iter().zip(p.weights()) {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    p.kind,
                    field(&p.model_id),
                    field(&p.sector_name),
                    ticker,
                    format_sig10(w)
                ));
            }
        }
    }
    write_file(&out_dir.join("portfolios.csv"), out)
}

/// Frontier trace and per-point weights for one cell.
pub fn write_frontier_csvs(
    frontier_dir: &Path,
    model_id: &str,
    sector: &str,
    frontier: &EfficientFrontier<Real>,
) -> io::Result<()> {
    let stem = format!("{}__{}", slug(model_id), slug(sector));
    let mut trace = String::from("epsilon,expected_return,variance,sharpe\n");
    for p in &frontier.points {
        trace.push_str(&format!(
            "{},{},{},{}\n",
            format_sig10(p.epsilon),
            format_sig10(p.expected_return),
            format_sig10(p.variance),
            format_sig10(p.sharpe)
        ));
    }
    write_file(&frontier_dir.join(format!("frontier_{stem}.csv")), trace)?;

    let mut weights = String::from("point,ticker,weight\n");
    for (i, p) in frontier.points.iter().enumerate() {
        for (ticker, &w) in frontier.tickers.iter().zip(&p.weights) {
            weights.push_str(&format!("{i},{ticker},{}\n", format_sig10(w)));
        }
    }
    write_file(
        &frontier_dir.join(format!("frontier_weights_{stem}.csv")),
        weights,
    )
}

/// `model_id,sector,kind,window,mean_cum_return,sharpe,volatility,
/// relative_volatility,class_cum,class_sharpe`; index rows carry empty
/// class columns.
pub fn write_results_csv(out_dir: &Path, artifact: &BacktestArtifact) -> io::Result<()> {
    let mut out = String::from(
        "model_id,sector,kind,window,mean_cum_return,sharpe,volatility,\
         relative_volatility,class_cum,class_sharpe\n",
    );
    for (sector, results) in &artifact.index {
        for r in results {
            out.push_str(&format!(
                "-,{},index,{},{},{},{},{},,\n",
                field(sector),
                r.window_label,
                format_sig10(r.mean_cumulative_return),
                format_sig10(r.sharpe),
                format_sig10(r.volatility),
                format_sig10(r.relative_volatility),
            ));
        }
    }
    for cell in &artifact.cells {
        let Some(backtests) = &cell.value else {
            continue;
        };
        for r in &backtests.results {
            let window = r.window_label;
            let class_of = |basis: MetricBasis| {
                backtests
                    .classifications
                    .iter()
                    .find(|c| c.window == window && c.basis == basis)
                    .map(|c| c.outcome.to_string())
                    .unwrap_or_default()
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                field(&cell.model_id),
                field(&cell.sector_name),
                r.portfolio_ref.kind,
                window,
                format_sig10(r.mean_cumulative_return),
                format_sig10(r.sharpe),
                format_sig10(r.volatility),
                format_sig10(r.relative_volatility),
                class_of(MetricBasis::CumulativeReturn),
                class_of(MetricBasis::Sharpe),
            ));
        }
    }
    write_file(&out_dir.join("results.csv"), out)
}

/// Long-format cumulative paths: `date,label,value` with
/// `label = model/sector/kind/window`.
pub fn write_paths_csv(out_dir: &Path, artifact: &BacktestArtifact) -> io::Result<()> {
    let mut out = String::from("date,label,value\n");
    for (sector, results) in &artifact.index {
        for r in results {
            for (date, &v) in r.dates.iter().zip(&r.cumulative_path) {
                out.push_str(&format!(
                    "{date},{},{}\n",
                    field(&format!("-/{sector}/index/{}", r.window_label)),
                    format_sig10(v)
                ));
            }
        }
    }
    for cell in &artifact.cells {
        let Some(backtests) = &cell.value else {
            continue;
        };
        for r in &backtests.results {
            let label = format!(
                "{}/{}/{}/{}",
                cell.model_id, cell.sector_name, r.portfolio_ref.kind, r.window_label
            );
            for (date, &v) in r.dates.iter().zip(&r.cumulative_path) {
                out.push_str(&format!("{date},{},{}\n", field(&label), format_sig10(v)));
            }
        }
    }
    write_file(&out_dir.join("paths.csv"), out)
}

/// One Green/Yellow/Red grid per (basis, window): rows are sectors,
/// columns are models.
pub fn write_classification_grids(
    out_dir: &Path,
    config: &RunConfig,
    artifact: &BacktestArtifact,
) -> io::Result<()> {
    for window in &config.windows {
        for basis in [MetricBasis::CumulativeReturn, MetricBasis::Sharpe] {
            let mut out = String::from("sector");
            for m in &config.models {
                out.push(',');
                out.push_str(&field(&m.model_id));
            }
            out.push('\n');
            for sector in &config.sectors {
                out.push_str(&field(sector));
                for m in &config.models {
                    let outcome = artifact
                        .cells
                        .iter()
                        .find(|c| c.model_id == m.model_id && c.sector_name == *sector)
                        .and_then(|c| c.value.as_ref())
                        .and_then(|b| {
                            b.classifications
                                .iter()
                                .find(|cl| cl.window == window.label && cl.basis == basis)
                        })
                        .map(|cl| cl.outcome.to_string())
                        .unwrap_or_default();
                    out.push(',');
                    out.push_str(&outcome);
                }
                out.push('\n');
            }
            let name = format!("class_{basis}_{}.csv", window.label);
            write_file(&out_dir.join(name), out)?;
        }
    }
    Ok(())
}

/// One file per diagnostic metric, each laid out sectors x models.
pub fn write_diagnostics_csvs(
    out_dir: &Path,
    config: &RunConfig,
    diagnostics: &[CellRecord<DiagnosticsReport<Real>>],
    universes: &[CellRecord<UniverseSelection>],
) -> io::Result<()> {
    let diag = |model: &str, sector: &str| {
        diagnostics
            .iter()
            .find(|r| r.model_id == model && r.sector_name == sector)
            .and_then(|r| r.value.as_ref())
    };
    let universe = |model: &str, sector: &str| {
        universes
            .iter()
            .find(|r| r.model_id == model && r.sector_name == sector)
            .and_then(|r| r.value.as_ref())
    };

    let grid = |cell: &dyn Fn(&str, &str) -> String| -> String {
        let mut out = String::from("sector");
        for m in &config.models {
            out.push(',');
            out.push_str(&field(&m.model_id));
        }
        out.push('\n');
        for sector in &config.sectors {
            out.push_str(&field(sector));
            for m in &config.models {
                out.push(',');
                out.push_str(&cell(&m.model_id, sector));
            }
            out.push('\n');
        }
        out
    };

    write_file(
        &out_dir.join("diag_universe.csv"),
        grid(&|m, s| {
            universe(m, s)
                .map(|u| {
                    let (size, false_count) = u.stats();
                    format!("{size}/{false_count}")
                })
                .unwrap_or_default()
        }),
    )?;
    write_file(
        &out_dir.join("diag_pca_components.csv"),
        grid(&|m, s| {
            diag(m, s)
                .map(|d| d.pca_components_95.to_string())
                .unwrap_or_default()
        }),
    )?;
    write_file(
        &out_dir.join("diag_effective_rank.csv"),
        grid(&|m, s| {
            diag(m, s)
                .map(|d| format_sig10(d.effective_rank))
                .unwrap_or_default()
        }),
    )?;
    write_file(
        &out_dir.join("diag_hhi.csv"),
        grid(&|m, s| diag(m, s).map(|d| format_sig10(d.hhi)).unwrap_or_default()),
    )?;
    write_file(
        &out_dir.join("diag_weight_volatility.csv"),
        grid(&|m, s| {
            diag(m, s)
                .map(|d| format_sig10(d.weight_volatility))
                .unwrap_or_default()
        }),
    )?;
    for window in &config.windows {
        if window.label == WindowLabel::InSample {
            continue;
        }
        let label = window.label;
        write_file(
            &out_dir.join(format!("diag_relative_volatility_{label}.csv")),
            grid(&|m, s| {
                diag(m, s)
                    .and_then(|d| d.relative_volatility_by_window.get(&label))
                    .map(|v| format_sig10(*v))
                    .unwrap_or_default()
            }),
        )?;
    }
    Ok(())
}
