//! Deterministic result tables and the run manifest.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One experiment cell's metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub arm: String,
    /// Split ratio for the split arms, absent otherwise.
    pub ratio: Option<f64>,
    pub seed: u64,
    /// Values aligned with [`ResultTable::metric_names`].
    pub values: Vec<f64>,
}

/// Schema-consistent set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub metric_names: Vec<String>,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn new(metric_names: Vec<String>) -> Self {
        ResultTable { metric_names, rows: Vec::new() }
    }

    pub fn push(&mut self, row: ResultRow) -> Result<()> {
        if row.values.len() != self.metric_names.len() {
            return Err(Error::Input(format!(
                "row for {} has {} values, header has {}",
                row.arm,
                row.values.len(),
                self.metric_names.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Canonical ordering: arm, then ratio, then seed — independent of
    /// completion order.
    pub fn sort_canonical(&mut self) {
        self.rows.sort_by(|a, b| {
            a.arm
                .cmp(&b.arm)
                .then(
                    a.ratio
                        .unwrap_or(-1.0)
                        .partial_cmp(&b.ratio.unwrap_or(-1.0))
                        .unwrap_or(std::cmp::Ordering::Equal),
                )
                .then(a.seed.cmp(&b.seed))
        });
    }
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// Write the rows as a comma-separated table with a fixed header order and
/// fixed 6-decimal numeric formatting. Re-exporting identical rows yields
/// identical bytes.
pub fn export_results(table: &ResultTable, path: &Path) -> Result<()> {
    let mut sorted = table.clone();
    sorted.sort_canonical();
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "arm,ratio,seed")?;
    for name in &sorted.metric_names {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for row in &sorted.rows {
        write!(w, "{},{},{}", row.arm, row.ratio.map(fmt6).unwrap_or_default(), row.seed)?;
        for v in &row.values {
            write!(w, ",{}", fmt6(*v))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a table previously written by [`export_results`].
pub fn read_results(path: &Path) -> Result<ResultTable> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Input("results file is empty".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "arm" || cols[1] != "ratio" || cols[2] != "seed" {
        return Err(Error::Input("results header must start with arm,ratio,seed".into()));
    }
    let metric_names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
    let mut table = ResultTable::new(metric_names);
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Input(format!("row {}: field count mismatch", n + 2)));
        }
        let ratio = if fields[1].is_empty() {
            None
        } else {
            Some(fields[1].parse().map_err(|_| Error::Input(format!("row {}: bad ratio", n + 2)))?)
        };
        let seed =
            fields[2].parse().map_err(|_| Error::Input(format!("row {}: bad seed", n + 2)))?;
        let values: Vec<f64> = fields[3..]
            .iter()
            .map(|f| f.parse().map_err(|_| Error::Input(format!("row {}: bad value", n + 2))))
            .collect::<Result<_>>()?;
        table.push(ResultRow { arm: fields[0].to_string(), ratio, seed, values })?;
    }
    Ok(table)
}

/// Seed-aggregated view: mean and (sample) standard deviation per
/// (arm, ratio) group, written as `<metric>_mean` / `<metric>_std` columns.
pub fn export_summary(table: &ResultTable, path: &Path) -> Result<()> {
    let mut sorted = table.clone();
    sorted.sort_canonical();

    let mut groups: Vec<(String, Option<f64>, Vec<&ResultRow>)> = Vec::new();
    for row in &sorted.rows {
        match groups.last_mut() {
            Some((arm, ratio, rows)) if *arm == row.arm && *ratio == row.ratio => rows.push(row),
            _ => groups.push((row.arm.clone(), row.ratio, vec![row])),
        }
    }

    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "arm,ratio,n_seeds")?;
    for name in &sorted.metric_names {
        write!(w, ",{name}_mean,{name}_std")?;
    }
    writeln!(w)?;
    for (arm, ratio, rows) in groups {
        write!(w, "{arm},{},{}", ratio.map(fmt6).unwrap_or_default(), rows.len())?;
        for m in 0..sorted.metric_names.len() {
            let vals: Vec<f64> = rows.iter().map(|r| r.values[m]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (vals.len() - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            write!(w, ",{},{}", fmt6(mean), fmt6(std))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Machine-readable record of a run, written next to its result files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// FNV-1a hash (hex) of the resolved experiment config JSON.
    pub config_hash: String,
    pub library_version: String,
    pub seeds: Vec<u64>,
    pub arms: Vec<String>,
    pub metric_ks: Vec<usize>,
    pub n_rows: usize,
    pub wall_clock_secs: f64,
    /// Full resolved config, so the run is reproducible from this file alone.
    pub config: serde_json::Value,
}

pub fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Internal(format!("manifest serialization failed: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_table() -> ResultTable {
        let mut t = ResultTable::new(vec!["hr@10".into(), "ndcg@10".into()]);
        t.push(ResultRow {
            arm: "time-rope".into(),
            ratio: None,
            seed: 1,
            values: vec![0.3406, 0.2059],
        })
        .unwrap();
        t.push(ResultRow {
            arm: "split-dim".into(),
            ratio: Some(0.5),
            seed: 0,
            values: vec![0.34, 0.2],
        })
        .unwrap();
        t.push(ResultRow {
            arm: "split-dim".into(),
            ratio: Some(0.5),
            seed: 1,
            values: vec![0.36, 0.22],
        })
        .unwrap();
        t
    }

    #[test]
    fn export_is_byte_deterministic_and_formats_six_decimals() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        let table = sample_table();
        export_results(&table, &p1).unwrap();
        export_results(&table, &p2).unwrap();
        let a = std::fs::read(&p1).unwrap();
        assert_eq!(a, std::fs::read(&p2).unwrap());
        let text = String::from_utf8(a).unwrap();
        assert!(text.contains("0.340600"), "fixed formatting: {text}");
        assert!(text.starts_with("arm,ratio,seed,hr@10,ndcg@10\n"));
    }

    #[test]
    fn empty_table_exports_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.csv");
        export_results(&ResultTable::new(vec!["hr@10".into()]), &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "arm,ratio,seed,hr@10\n");
    }

    #[test]
    fn read_round_trips_written_tables() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let mut table = sample_table();
        table.sort_canonical();
        export_results(&table, &p).unwrap();
        let back = read_results(&p).unwrap();
        assert_eq!(back.metric_names, table.metric_names);
        assert_eq!(back.rows.len(), 3);
        // Re-export of the parsed table is byte-identical.
        let p2 = dir.path().join("b.csv");
        export_results(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn summary_populates_mean_and_std() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("summary.csv");
        export_summary(&sample_table(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let split_line = text.lines().find(|l| l.starts_with("split-dim")).unwrap();
        assert!(split_line.contains(",2,"), "two seeds aggregated: {split_line}");
        assert!(split_line.contains("0.350000"), "mean of 0.34/0.36: {split_line}");
    }

    #[test]
    fn schema_mismatch_rejected() {
        let mut t = ResultTable::new(vec!["hr@10".into()]);
        let bad = ResultRow { arm: "x".into(), ratio: None, seed: 0, values: vec![0.1, 0.2] };
        assert!(t.push(bad).is_err());
    }
}
