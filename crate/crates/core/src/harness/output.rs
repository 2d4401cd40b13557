//! Result files.
//!
//! `stats.csv` has one row per algorithm, iteration, node and metric:
//!
//! ```text
//! algorithm,k,t,node,metric,mean,variance,count
//! disync,0,1,1,skew_error,-0.0000123,0.00000004,1000
//! disync,0,1,all,max_sync_error,0.0081,0.0000019,1000
//! ```
//!
//! `node` is the 1-based label, or `all` for the network-wide metric. Floats
//! use the shortest representation that parses back to the same value, so a
//! reload is exact. `stats.json` holds the same tables as
//! `{"schema_version": 1, "tables": [...]}`. Both are written by
//! [`emit_results`] and read by [`load_results`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::stats::{Cell, StatsTable};
use super::trial::{Metric, MAX_SYNC_ERROR};

pub const RESULTS_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: [&str; 8] = ["algorithm", "k", "t", "node", "metric", "mean", "variance", "count"];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed results file: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn file_name(self) -> &'static str {
        match self {
            Format::Csv => "stats.csv",
            Format::Json => "stats.json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format {s:?}; expected csv or json")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ResultsFile {
    schema_version: u32,
    tables: Vec<StatsTable>,
}

/// Write `tables` into `dir` in the given format; returns the file path.
pub fn emit_results(tables: &[StatsTable], dir: &Path, format: Format) -> Result<PathBuf, OutputError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format.file_name());
    match format {
        Format::Csv => write_csv(tables, &path)?,
        Format::Json => {
            let mut w = BufWriter::new(File::create(&path)?);
            serde_json::to_writer(
                &mut w,
                &ResultsFile {
                    schema_version: RESULTS_SCHEMA_VERSION,
                    tables: tables.to_vec(),
                },
            )?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
    }
    Ok(path)
}

/// Read a file written by [`emit_results`]; the format follows the extension.
pub fn load_results(path: &Path) -> Result<Vec<StatsTable>, OutputError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let file: ResultsFile = serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
            if file.schema_version != RESULTS_SCHEMA_VERSION {
                return Err(OutputError::Malformed(format!("schema_version {}", file.schema_version)));
            }
            Ok(file.tables)
        }
        _ => read_csv(path),
    }
}

pub fn write_csv(tables: &[StatsTable], path: &Path) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(CSV_HEADER)?;
    for table in tables {
        for k in 0..table.len() {
            let t = table.times[k].to_string();
            let ks = k.to_string();
            for u in 0..table.nodes {
                let label = (u + 1).to_string();
                for m in Metric::ALL {
                    write_row(&mut w, &table.algorithm, &ks, &t, &label, m.name(), table.cell(k, u, m))?;
                }
            }
            write_row(&mut w, &table.algorithm, &ks, &t, "all", MAX_SYNC_ERROR, table.network[k])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_row<W: Write>(
    w: &mut csv::Writer<W>,
    algorithm: &str,
    k: &str,
    t: &str,
    node: &str,
    metric: &str,
    c: Cell,
) -> Result<(), OutputError> {
    w.write_record([
        algorithm,
        k,
        t,
        node,
        metric,
        &c.mean.to_string(),
        &c.variance.to_string(),
        &c.count.to_string(),
    ])?;
    Ok(())
}

#[derive(Deserialize)]
struct Row {
    algorithm: String,
    k: usize,
    t: f64,
    node: String,
    metric: String,
    mean: f64,
    variance: f64,
    count: u64,
}

pub fn read_csv(path: &Path) -> Result<Vec<StatsTable>, OutputError> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(CSV_HEADER) {
        return Err(OutputError::Malformed("unexpected header".to_string()));
    }
    // group rows by algorithm, keeping first-appearance order
    let mut groups: Vec<(String, Vec<Row>)> = Vec::new();
    for row in r.deserialize() {
        let row: Row = row?;
        match groups.iter_mut().find(|(a, _)| *a == row.algorithm) {
            Some((_, rows)) => rows.push(row),
            None => groups.push((row.algorithm.clone(), vec![row])),
        }
    }
    groups.into_iter().map(|(alg, rows)| assemble(alg, rows)).collect()
}

fn assemble(algorithm: String, rows: Vec<Row>) -> Result<StatsTable, OutputError> {
    let bad = |m: String| OutputError::Malformed(m);
    let len = rows.iter().map(|r| r.k + 1).max().unwrap_or(0);
    let nodes = rows
        .iter()
        .filter(|r| r.node != "all")
        .map(|r| r.node.parse::<usize>().map_err(|_| bad(format!("bad node label {:?}", r.node))))
        .try_fold(0, |acc, u| u.map(|u| acc.max(u)))?;
    let empty = Cell {
        mean: f64::NAN,
        variance: f64::NAN,
        count: 0,
    };
    let mut times = vec![f64::NAN; len];
    let mut node = vec![[empty; 3]; len * nodes];
    let mut network = vec![empty; len];
    let mut filled = vec![false; len * (nodes * 3 + 1)];
    for r in rows {
        let cell = Cell {
            mean: r.mean,
            variance: r.variance,
            count: r.count,
        };
        times[r.k] = r.t;
        let slot = if r.node == "all" {
            if r.metric != MAX_SYNC_ERROR {
                return Err(bad(format!("network row with metric {:?}", r.metric)));
            }
            network[r.k] = cell;
            r.k * (nodes * 3 + 1) + nodes * 3
        } else {
            let u = r.node.parse::<usize>().expect("parsed above") - 1;
            let m = Metric::ALL
                .into_iter()
                .find(|m| m.name() == r.metric)
                .ok_or_else(|| bad(format!("unknown metric {:?}", r.metric)))?;
            node[r.k * nodes + u][m.index()] = cell;
            r.k * (nodes * 3 + 1) + u * 3 + m.index()
        };
        if std::mem::replace(&mut filled[slot], true) {
            return Err(bad(format!("duplicate row for {algorithm} k={}", r.k)));
        }
    }
    if filled.iter().any(|f| !f) {
        return Err(bad(format!("missing rows for {algorithm}")));
    }
    Ok(StatsTable {
        algorithm,
        nodes,
        times,
        node,
        network,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> StatsTable {
        let c = |x: f64| Cell {
            mean: x,
            variance: x * x / 7.0,
            count: 3,
        };
        StatsTable {
            algorithm: "disync".to_string(),
            nodes: 2,
            times: vec![1.0, 2.0],
            node: vec![
                [c(0.1), c(-1e-17), c(1.0 / 3.0)],
                [c(2.5e-300), c(0.0), c(-7.25)],
                [c(0.2), c(1e150), c(std::f64::consts::PI)],
                [c(-0.0), c(5.0), c(6.0)],
            ],
            network: vec![c(0.7), c(1e-9)],
        }
    }

    #[test]
    fn csv_and_json_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut other = table();
        other.algorithm = "ats".to_string();
        let tables = vec![table(), other];
        for f in [Format::Csv, Format::Json] {
            let path = emit_results(&tables, dir.path(), f).unwrap();
            assert_eq!(load_results(&path).unwrap(), tables);
        }
    }

    #[test]
    fn empty_results_are_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = emit_results(&[], dir.path(), Format::Csv).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), CSV_HEADER.join(",") + "\n");
        assert!(load_results(&path).unwrap().is_empty());
    }

    #[test]
    fn incomplete_csv_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = emit_results(&[table()], dir.path(), Format::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut: Vec<&str> = text.lines().filter(|l| !l.contains("offset_error")).collect();
        std::fs::write(&path, cut.join("\n")).unwrap();
        assert!(matches!(load_results(&path), Err(OutputError::Malformed(_))));
    }
}
