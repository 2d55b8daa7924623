//! Plot-ready CSV exports and their readers.
//!
//! * ESR-set table: one row per member, action columns followed by expected
//!   objective columns.
//! * Distribution dump: long format `source,<objectives...>` with `source`
//!   either `learned` or `buffer`.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back recovers every value exactly and identical inputs give identical
//! bytes.

use std::path::Path;

use crate::distribution::ReturnDistribution;
use crate::engine::EsrSolution;
use crate::env::Layout;
use crate::error::{Error, Result};

/// Column layout shared by ESR-set tables and distribution dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportSchema {
    pub action_columns: Vec<String>,
    /// Optional per-agent labels replacing raw action indices.
    pub action_labels: Option<Vec<Vec<String>>>,
    /// Column name and objective index, in output order.
    pub objectives: Vec<(String, usize)>,
}

impl ExportSchema {
    pub fn generic(n_agents: usize, dim: usize) -> Self {
        Self {
            action_columns: (0..n_agents).map(|i| format!("agent_{i}_action")).collect(),
            action_labels: None,
            objectives: (0..dim)
                .map(|k| (format!("expected_objective_{k}"), k))
                .collect(),
        }
    }

    /// `yaw_0..yaw_{n-1}` in degrees, then `power` and `turbulence` (the
    /// negated turbulence intensity, as optimized).
    pub fn farm(layout: &Layout) -> Self {
        let n = layout.turbines.len();
        let labels: Vec<String> = layout.yaw_angles.iter().map(|y| y.to_string()).collect();
        Self {
            action_columns: (0..n).map(|i| format!("yaw_{i}")).collect(),
            action_labels: Some(vec![labels; n]),
            objectives: vec![("power".into(), 1), ("turbulence".into(), 0)],
        }
    }

    fn objective_names(&self) -> Vec<String> {
        self.objectives.iter().map(|(n, _)| n.clone()).collect()
    }

    fn action_label(&self, agent: usize, action: usize) -> String {
        match &self.action_labels {
            Some(l) => l[agent][action].clone(),
            None => action.to_string(),
        }
    }

    fn row_objectives(&self, v: &[f64]) -> Vec<String> {
        self.objectives
            .iter()
            .map(|&(_, k)| v[k].to_string())
            .collect()
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

pub fn write_esr_set(path: &Path, sol: &EsrSolution, schema: &ExportSchema) -> Result<()> {
    let mut w = writer(path)?;
    let header: Vec<String> = schema
        .action_columns
        .iter()
        .cloned()
        .chain(schema.objective_names())
        .collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for m in &sol.members {
        if m.joint_action.len() != schema.action_columns.len() {
            return Err(Error::DimensionMismatch {
                expected: schema.action_columns.len(),
                got: m.joint_action.len(),
            });
        }
        let row: Vec<String> = m
            .joint_action
            .iter()
            .enumerate()
            .map(|(i, &a)| schema.action_label(i, a))
            .chain(schema.row_objectives(&m.expected))
            .collect();
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header plus string cells of a CSV export.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric values of column `name`.
    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .column(name)
            .ok_or_else(|| Error::Config(format!("no column named {name}")))?;
        self.rows
            .iter()
            .map(|r| {
                r[k].parse::<f64>()
                    .map_err(|e| Error::Config(format!("column {name}: {e}")))
            })
            .collect()
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .map(|rec| {
            rec.map(|r| r.iter().map(String::from).collect())
                .map_err(|e| csv_err(path, e))
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok(Table { header, rows })
}

pub const SOURCE_LEARNED: &str = "learned";
pub const SOURCE_BUFFER: &str = "buffer";

/// Learned and buffer samples of one factor under one local action.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionDump {
    pub learned: ReturnDistribution,
    pub buffer: Vec<Vec<f64>>,
}

pub fn write_dump(path: &Path, dump: &DistributionDump, schema: &ExportSchema) -> Result<()> {
    let mut w = writer(path)?;
    let header: Vec<String> = std::iter::once("source".to_string())
        .chain(schema.objective_names())
        .collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let rows = dump
        .learned
        .rows()
        .map(|r| (SOURCE_LEARNED, r))
        .chain(dump.buffer.iter().map(|r| (SOURCE_BUFFER, r.as_slice())));
    for (src, r) in rows {
        let row: Vec<String> = std::iter::once(src.to_string())
            .chain(schema.row_objectives(r))
            .collect();
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a dump back into objective order.
pub fn read_dump(path: &Path, schema: &ExportSchema) -> Result<DistributionDump> {
    let t = read_table(path)?;
    let expected: Vec<String> = std::iter::once("source".to_string())
        .chain(schema.objective_names())
        .collect();
    if t.header != expected {
        return Err(Error::parse(
            path,
            format!("expected header {expected:?}, found {:?}", t.header),
        ));
    }
    let dim = schema.objectives.len();
    let mut learned = Vec::new();
    let mut buffer = Vec::new();
    for row in &t.rows {
        let mut v = vec![0.0; dim];
        for (c, &(_, k)) in schema.objectives.iter().enumerate() {
            v[k] = row[c + 1]
                .parse()
                .map_err(|e| Error::parse(path, format!("{e}")))?;
        }
        match row[0].as_str() {
            SOURCE_LEARNED => learned.push(v),
            SOURCE_BUFFER => buffer.push(v),
            other => return Err(Error::parse(path, format!("unknown source {other}"))),
        }
    }
    Ok(DistributionDump {
        learned: ReturnDistribution::from_rows(&learned).map_err(|e| Error::parse(path, e))?,
        buffer,
    })
}
