use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clusep_core::metrics::{aggregate, median, AggregateRow, MetricsRow};
use serde::Serialize;

use crate::pipeline::ScenarioOutcome;

pub const PER_SCENARIO_CSV: &str = "per_scenario.csv";
pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const CLUSTERING_CSV: &str = "clustering.csv";
pub const MANIFEST_CSV: &str = "manifest.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const PLOTS_DIR: &str = "plots";

#[derive(Debug, Serialize)]
struct ManifestRow<'a> {
    scenario_id: &'a str,
    seed: u64,
    status: &'a str,
    error: &'a str,
}

#[derive(Debug, Serialize)]
struct ClusteringRow<'a> {
    scenario_id: &'a str,
    correct: usize,
    considered: usize,
    assignment_rate: f64,
    references_within: usize,
    sources: usize,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// One line per scenario with its status and error text, if any.
pub fn write_manifest(path: &Path, outcomes: &[(String, u64, Option<String>)]) -> Result<()> {
    let rows: Vec<ManifestRow> = outcomes
        .iter()
        .map(|(id, seed, err)| ManifestRow {
            scenario_id: id,
            seed: *seed,
            status: if err.is_some() { "failed" } else { "ok" },
            error: err.as_deref().unwrap_or(""),
        })
        .collect();
    write_csv(path, &rows)
}

/// Aggregates ordered by median SI-SDR, best first; ties by name.
pub fn ranked(rows: &[MetricsRow]) -> Vec<AggregateRow> {
    let mut agg = aggregate(rows);
    agg.sort_by(|a, b| {
        b.median_si_sdr_db
            .total_cmp(&a.median_si_sdr_db)
            .then_with(|| a.method.cmp(&b.method))
    });
    agg
}

pub fn summary_table(outcomes: &[ScenarioOutcome]) -> String {
    let rows: Vec<MetricsRow> = outcomes.iter().flat_map(|o| o.rows.iter().cloned()).collect();
    let failed = outcomes.iter().filter(|o| o.error.is_some()).count();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} scenarios, {} scored, {} failed",
        outcomes.len(),
        outcomes.len() - failed,
        failed
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<22} {:>6} {:>14} {:>12} {:>15} {:>13}",
        "method", "rows", "median SI-SDR", "mean SI-SDR", "median SI-SDRi", "mean SI-SDRi"
    );
    for a in ranked(&rows) {
        let _ = writeln!(
            out,
            "{:<22} {:>6} {:>14.2} {:>12.2} {:>15.2} {:>13.2}",
            a.method,
            a.count,
            a.median_si_sdr_db,
            a.mean_si_sdr_db,
            a.median_improvement_db,
            a.mean_improvement_db
        );
    }
    let acc: Vec<_> = outcomes.iter().filter_map(|o| o.accuracy).collect();
    if !acc.is_empty() {
        let correct: usize = acc.iter().map(|a| a.correct).sum();
        let considered: usize = acc.iter().map(|a| a.considered).sum();
        let refs: usize = acc.iter().map(|a| a.references_within).sum();
        let sources: usize = acc.iter().map(|a| a.sources).sum();
        let rates: Vec<f64> = acc.iter().map(|a| a.assignment_rate()).collect();
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "clustering: {correct}/{considered} nearby microphones on their source's cluster ({:.1}%), median per scene {:.1}%",
            100.0 * correct as f64 / considered.max(1) as f64,
            100.0 * median(&rates)
        );
        let _ = writeln!(
            out,
            "references within the critical distance: {refs}/{sources} ({:.1}%)",
            100.0 * refs as f64 / sources.max(1) as f64
        );
    }
    for o in outcomes.iter().filter(|o| o.error.is_some()) {
        let _ = writeln!(out, "failed {}: {}", o.id, o.error.as_deref().unwrap_or(""));
    }
    out
}

/// Gnuplot-readable whitespace-separated data: one aggregate file and, per
/// method, the sorted improvements with their empirical CDF.
pub fn write_plots(dir: &Path, rows: &[MetricsRow]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let agg = ranked(rows);
    let mut text = String::from("# index method median_si_sdr_db mean_si_sdr_db median_improvement_db mean_improvement_db\n");
    for (i, a) in agg.iter().enumerate() {
        let _ = writeln!(
            text,
            "{i} \"{}\" {} {} {} {}",
            a.method, a.median_si_sdr_db, a.mean_si_sdr_db, a.median_improvement_db, a.mean_improvement_db
        );
    }
    let path = dir.join("aggregate.dat");
    fs::write(&path, text)?;
    written.push(path);

    for a in &agg {
        let mut imp: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == a.method)
            .map(|r| r.improvement_db)
            .collect();
        imp.sort_by(f64::total_cmp);
        let mut text = String::from("# improvement_db cdf\n");
        for (i, v) in imp.iter().enumerate() {
            let _ = writeln!(text, "{v} {}", (i + 1) as f64 / imp.len() as f64);
        }
        let path = dir.join(format!("{}.dat", a.method.replace('+', "-")));
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes every run artifact into `out`.
pub fn write_run(out: &Path, outcomes: &[ScenarioOutcome], plots: bool) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let rows: Vec<MetricsRow> = outcomes.iter().flat_map(|o| o.rows.iter().cloned()).collect();
    write_csv(&out.join(PER_SCENARIO_CSV), &rows)?;
    write_csv(&out.join(AGGREGATE_CSV), &ranked(&rows))?;
    let clustering: Vec<ClusteringRow> = outcomes
        .iter()
        .filter_map(|o| {
            o.accuracy.map(|a| ClusteringRow {
                scenario_id: &o.id,
                correct: a.correct,
                considered: a.considered,
                assignment_rate: a.assignment_rate(),
                references_within: a.references_within,
                sources: a.sources,
            })
        })
        .collect();
    write_csv(&out.join(CLUSTERING_CSV), &clustering)?;
    let manifest: Vec<(String, u64, Option<String>)> =
        outcomes.iter().map(|o| (o.id.clone(), o.seed, o.error.clone())).collect();
    write_manifest(&out.join(MANIFEST_CSV), &manifest)?;
    fs::write(out.join(SUMMARY_TXT), summary_table(outcomes))?;
    if plots {
        write_plots(&out.join(PLOTS_DIR), &rows)?;
    }
    Ok(())
}
