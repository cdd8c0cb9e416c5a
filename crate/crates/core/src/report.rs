//! Experiment outputs: CSV/JSON files, run manifests, and cross-run
//! comparison tables. Every float is formatted to six significant digits
//! with a representation that parses back to the rounded value exactly.

use std::fmt;
use std::fs;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::config::{config_digest, SimConfig};
use crate::error::Error;
use crate::sim::ExperimentResult;
use crate::Result;

/// Formats a value to six significant digits using the shortest decimal
/// representation of the rounded number, so parsing the text recovers the
/// rounded value bit for bit.
pub fn fmt6(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    let digits = 5 - exp;
    let scale = 10f64.powi(digits);
    format!("{}", (v * scale).round() / scale)
}

/// The headline numbers of one run, written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub config_digest: String,
    pub cluster_sizes: Vec<usize>,
    pub per_cluster_test_acc: Vec<f64>,
    pub mean_over_clusters: f64,
    pub mean_over_nodes: f64,
}

/// Provenance for one output directory, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub started_at: String,
    pub finished_at: String,
    pub code_version: String,
    pub files: Vec<String>,
}

/// Writes `rounds.csv`, `comm_matrix.csv`, `accuracy.csv`, `summary.json`
/// and `manifest.json` into `out_dir`, creating it if needed. Each file is
/// rendered in memory first, so an unwritable directory fails before any
/// partial content lands.
pub fn write_outputs(
    config: &SimConfig,
    result: &ExperimentResult,
    started_at: DateTime<Utc>,
    out_dir: &Path,
) -> Result<ExperimentManifest> {
    let rounds = render_rounds(result);
    let comm = render_comm(result);
    let accuracy = render_accuracy(result);
    let summary = summary_of(config, result)?;
    let summary_json = to_pretty_json(&summary)?;

    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("rounds.csv"), rounds)?;
    fs::write(out_dir.join("comm_matrix.csv"), comm)?;
    fs::write(out_dir.join("accuracy.csv"), accuracy)?;
    fs::write(out_dir.join("summary.json"), summary_json)?;

    let manifest = ExperimentManifest {
        config_digest: summary.config_digest.clone(),
        seeds: vec![config.seed],
        started_at: started_at.to_rfc3339_opts(SecondsFormat::Micros, true),
        finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        files: vec![
            "rounds.csv".into(),
            "comm_matrix.csv".into(),
            "accuracy.csv".into(),
            "summary.json".into(),
            "manifest.json".into(),
        ],
    };
    fs::write(out_dir.join("manifest.json"), to_pretty_json(&manifest)?)?;
    Ok(manifest)
}

/// Builds the summary with all floats pre-rounded to the output precision.
pub fn summary_of(config: &SimConfig, result: &ExperimentResult) -> Result<RunSummary> {
    let layout = config.cluster_layout()?;
    Ok(RunSummary {
        method: config.method.as_str().to_string(),
        seed: config.seed,
        config_digest: config_digest(config),
        cluster_sizes: layout.sizes.clone(),
        per_cluster_test_acc: result.cluster_test_acc.iter().map(|&v| round6(v)).collect(),
        mean_over_clusters: round6(result.mean_over_clusters),
        mean_over_nodes: round6(result.mean_over_nodes),
    })
}

fn round6(v: f64) -> f64 {
    fmt6(v).parse().expect("fmt6 emits valid decimals")
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn render_rounds(result: &ExperimentResult) -> String {
    let mut out = String::from("t,node,arm,group,reward,val_acc,val_loss,comp_set_size\n");
    for record in &result.records {
        for e in &record.entries {
            let arm = e.arm.map(|a| a.to_string()).unwrap_or_default();
            let group = e
                .group
                .iter()
                .map(|j| j.to_string())
                .collect::<Vec<_>>()
                .join(";");
            let reward = e.reward.map(fmt6).unwrap_or_default();
            let comp = e.comp_set_size.map(|c| c.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                record.t,
                e.node,
                arm,
                group,
                reward,
                fmt6(e.val_acc),
                fmt6(e.val_loss),
                comp
            ));
        }
    }
    out
}

fn render_comm(result: &ExperimentResult) -> String {
    let k = result.comm.k();
    let mut out = String::new();
    for i in 0..k {
        let row: Vec<String> = (0..k).map(|j| result.comm.count(i, j).to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn render_accuracy(result: &ExperimentResult) -> String {
    let mut out = String::from("node,cluster,test_acc,best_round\n");
    for a in &result.accuracy {
        out.push_str(&format!(
            "{},{},{},{}\n",
            a.node,
            a.cluster,
            fmt6(a.test_acc),
            a.best_round
        ));
    }
    out
}

/// One run's line in a cross-run comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub dir: String,
    pub method: String,
    pub seed: u64,
    pub per_cluster: Vec<f64>,
    pub mean_over_clusters: f64,
    /// Differences against the first listed run, cluster by cluster.
    pub delta_per_cluster: Vec<f64>,
    pub delta_mean: f64,
}

/// Per-cluster accuracies of several runs side by side, first run as the
/// baseline for deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub cluster_sizes: Vec<usize>,
    pub rows: Vec<ComparisonRow>,
}

/// Reads each directory's `summary.json` and aligns them into one table.
/// All runs must share the same cluster layout.
pub fn compare_runs<P: AsRef<Path>>(dirs: &[P]) -> Result<Comparison> {
    if dirs.is_empty() {
        return Err(Error::Domain("compare_runs needs at least one directory".into()));
    }
    let mut summaries = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let dir = dir.as_ref();
        let path = dir.join("summary.json");
        let text = fs::read_to_string(&path).map_err(|e| {
            Error::State(format!("cannot read summary.json in {}: {e}", dir.display()))
        })?;
        let summary: RunSummary = serde_json::from_str(&text)?;
        summaries.push((dir.display().to_string(), summary));
    }
    let cluster_sizes = summaries[0].1.cluster_sizes.clone();
    for (dir, summary) in &summaries {
        if summary.cluster_sizes != cluster_sizes {
            return Err(Error::Config(format!(
                "cluster layout in {dir} ({:?}) does not match the first run ({cluster_sizes:?})",
                summary.cluster_sizes
            )));
        }
    }
    let base = summaries[0].1.clone();
    let rows = summaries
        .into_iter()
        .map(|(dir, s)| ComparisonRow {
            delta_per_cluster: s
                .per_cluster_test_acc
                .iter()
                .zip(&base.per_cluster_test_acc)
                .map(|(v, b)| v - b)
                .collect(),
            delta_mean: s.mean_over_clusters - base.mean_over_clusters,
            dir,
            method: s.method,
            seed: s.seed,
            per_cluster: s.per_cluster_test_acc,
            mean_over_clusters: s.mean_over_clusters,
        })
        .collect();
    Ok(Comparison { cluster_sizes, rows })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<24} {:>6}", "run", "seed")?;
        for (c, size) in self.cluster_sizes.iter().enumerate() {
            write!(f, " {:>12}", format!("cluster{c}({size})"))?;
        }
        writeln!(f, " {:>12} {:>12}", "mean", "delta")?;
        for row in &self.rows {
            let label = format!("{} [{}]", row.dir, row.method);
            write!(f, "{:<24} {:>6}", label, row.seed)?;
            for v in &row.per_cluster {
                write!(f, " {:>12}", fmt6(*v))?;
            }
            writeln!(
                f,
                " {:>12} {:>+12.4}",
                fmt6(row.mean_over_clusters),
                row.delta_mean
            )?;
        }
        Ok(())
    }
}
