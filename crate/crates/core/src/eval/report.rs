use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Scalar};

use super::{AttackerResult, RankingMetrics};

/// Line written above every table: which embeddings the attackers audit.
pub const ATTACKER_VIEW_NOTE: &str =
    "# attackers audit user embeddings filtered by the row's feature combination (orig: unfiltered)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAuc {
    pub feature: String,
    pub auc: f64,
}

/// One table row: a model, a method and a feature combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub method: String,
    /// Feature labels joined by `+`; `-` for unfiltered rows.
    pub combination: String,
    pub top_n: usize,
    pub ndcg: f64,
    pub hit: f64,
    pub auc: Vec<FeatureAuc>,
    pub lambda: f64,
    pub seed: u64,
    pub fingerprint: String,
}

/// Identity of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub model: String,
    pub method: String,
    pub lambda: f64,
    pub seed: u64,
    pub fingerprint: String,
}

/// Evaluation of one feature combination of a run.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub combination: String,
    pub ranking: RankingMetrics,
    pub attackers: Vec<AttackerResult>,
}

pub fn assemble_report(run: &RunInfo, cells: &[CellResult]) -> Result<Vec<MetricReport>> {
    cells
        .iter()
        .map(|c| {
            let row = MetricReport {
                model: run.model.clone(),
                method: run.method.clone(),
                combination: c.combination.clone(),
                top_n: c.ranking.top_n,
                ndcg: c.ranking.ndcg,
                hit: c.ranking.hit,
                auc: c
                    .attackers
                    .iter()
                    .map(|a| FeatureAuc {
                        feature: a.feature_name.clone(),
                        auc: a.auc,
                    })
                    .collect(),
                lambda: run.lambda,
                seed: run.seed,
                fingerprint: run.fingerprint.clone(),
            };
            row.validate()?;
            Ok(row)
        })
        .collect()
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.ndcg) || !unit(self.hit) || self.auc.iter().any(|a| !unit(a.auc)) {
            return Err(Error::Data(format!(
                "metric outside [0, 1] in row {}/{}/{}",
                self.model, self.method, self.combination
            )));
        }
        Ok(())
    }
}

/// Concatenates report sets; all rows must come from the same dataset.
pub fn merge_reports(sets: impl IntoIterator<Item = Vec<MetricReport>>) -> Result<Vec<MetricReport>> {
    let rows: Vec<MetricReport> = sets.into_iter().flatten().collect();
    let prints: BTreeSet<&str> = rows.iter().map(|r| r.fingerprint.as_str()).collect();
    if prints.len() > 1 {
        return Err(Error::Data(format!("reports come from different datasets: {prints:?}")));
    }
    Ok(rows)
}

fn feature_columns(rows: &[MetricReport]) -> Vec<String> {
    let mut cols: Vec<String> = Vec::new();
    for r in rows {
        for a in &r.auc {
            if !cols.contains(&a.feature) {
                cols.push(a.feature.clone());
            }
        }
    }
    cols
}

/// Tab-delimited table; one `auc_<feature>` column per feature seen.
pub fn write_table(rows: &[MetricReport], mut w: impl Write) -> std::io::Result<()> {
    let features = feature_columns(rows);
    let top_n = rows.first().map_or(5, |r| r.top_n);
    writeln!(w, "{ATTACKER_VIEW_NOTE}")?;
    write!(w, "model\tmethod\tcombination\tlambda\tseed\tndcg@{top_n}\thit@{top_n}")?;
    for f in &features {
        write!(w, "\tauc_{f}")?;
    }
    writeln!(w, "\tfingerprint")?;
    for r in rows {
        write!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{:.4}\t{:.4}",
            r.model, r.method, r.combination, r.lambda, r.seed, r.ndcg, r.hit
        )?;
        for f in &features {
            match r.auc.iter().find(|a| &a.feature == f) {
                Some(a) => write!(w, "\t{:.4}", a.auc)?,
                None => write!(w, "\t-")?,
            }
        }
        writeln!(w, "\t{}", r.fingerprint)?;
    }
    Ok(())
}

/// One JSON record per row.
pub fn write_jsonl(rows: &[MetricReport], mut w: impl Write) -> std::io::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_jsonl(r: impl BufRead) -> Result<Vec<MetricReport>> {
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("report", e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: "report".into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// `user_id \t v_1 ... v_d`, one user per line.
pub fn write_embeddings<T: Scalar>(user_ids: &[String], embeddings: &Matrix<T>, mut w: impl Write) -> std::io::Result<()> {
    for (id, row) in user_ids.iter().zip(embeddings.iter_rows()) {
        write!(w, "{id}")?;
        for v in row {
            write!(w, "\t{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
