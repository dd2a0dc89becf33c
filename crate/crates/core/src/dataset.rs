//! Real-data input and rejection profiles over an α grid.
//!
//! A p-value file is CSV. If the selected column of the first row does not
//! parse as a number, that row is a header. Rows are kept in file order,
//! which is the online testing order.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::{PolicyConfig, Procedure};
use crate::policy::{run_procedure, RunError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("column '{0}' not found in header")]
    MissingColumn(String),
    #[error("dataset is empty")]
    Empty,
    #[error("invalid alpha grid '{0}'")]
    AlphaGrid(String),
}

/// Which column holds p-values (or identifiers).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnSpec {
    /// 0-based position.
    Index(usize),
    /// Header name; requires a header row.
    Name(String),
}

impl ColumnSpec {
    /// A bare integer selects by position, anything else by header name.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<usize>() {
            Ok(i) => ColumnSpec::Index(i),
            Err(_) => ColumnSpec::Name(s.trim().to_string()),
        }
    }

    fn resolve(&self, header: Option<&csv::StringRecord>) -> Result<usize, DatasetError> {
        match self {
            ColumnSpec::Index(i) => Ok(*i),
            ColumnSpec::Name(name) => header
                .and_then(|h| h.iter().position(|c| c.trim() == name))
                .ok_or_else(|| DatasetError::MissingColumn(name.clone())),
        }
    }
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec::Index(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PValueDataset {
    pub p_values: Vec<f64>,
    pub ids: Option<Vec<String>>,
    pub source: PathBuf,
}

impl PValueDataset {
    pub fn len(&self) -> usize {
        self.p_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_values.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub column: ColumnSpec,
    pub id_column: Option<ColumnSpec>,
    /// Keep only the first `limit` rows.
    pub limit: Option<usize>,
}

pub fn load_pvalues(path: &Path, options: &LoadOptions) -> Result<PValueDataset, DatasetError> {
    let file = std::fs::File::open(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut ds = read_pvalues(file, options)?;
    ds.source = path.to_path_buf();
    Ok(ds)
}

pub fn read_pvalues<R: Read>(input: R, options: &LoadOptions) -> Result<PValueDataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = reader.records().peekable();

    let mut header = None;
    if let Some(Ok(first)) = records.peek() {
        let probe = match &options.column {
            ColumnSpec::Index(i) => first.get(*i),
            ColumnSpec::Name(_) => None,
        };
        if probe.map_or(true, |v| v.parse::<f64>().is_err()) {
            header = records.next().transpose().ok().flatten();
        }
    }
    let col = options.column.resolve(header.as_ref())?;
    let id_col = options.id_column.as_ref().map(|c| c.resolve(header.as_ref())).transpose()?;

    let mut p_values = Vec::new();
    let mut ids = id_col.map(|_| Vec::new());
    for record in records {
        if options.limit.is_some_and(|l| p_values.len() >= l) {
            break;
        }
        let record = record.map_err(|e| DatasetError::Row {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row_err = |message: String| DatasetError::Row { line, message };
        let raw = record.get(col).filter(|s| !s.is_empty()).ok_or_else(|| row_err("missing p-value".into()))?;
        let p: f64 = raw.parse().map_err(|_| row_err(format!("'{raw}' is not a number")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(row_err(format!("p-value {p} outside [0, 1]")));
        }
        p_values.push(p);
        if let (Some(ids), Some(c)) = (ids.as_mut(), id_col) {
            ids.push(record.get(c).unwrap_or_default().to_string());
        }
    }
    if p_values.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(PValueDataset { p_values, ids, source: PathBuf::new() })
}

/// Parses `start:stop:step` (inclusive of `stop` when the step divides the
/// range) or a comma-separated list. Grid points are rounded to 1e-12 so
/// `0.05:0.4:0.05` yields exactly `0.05, 0.1, …, 0.4`.
pub fn parse_alpha_grid(s: &str) -> Result<Vec<f64>, DatasetError> {
    let bad = || DatasetError::AlphaGrid(s.to_string());
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
    let grid = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=count).map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if grid.is_empty() || grid.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(bad());
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileCell {
    pub procedure: Procedure,
    pub alpha: f64,
    pub result: Result<usize, RunError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionProfile {
    pub alpha_grid: Vec<f64>,
    /// One row per configuration, one cell per grid point.
    pub rows: Vec<Vec<ProfileCell>>,
}

/// Runs every configuration at every α of the grid. The configuration's own
/// `alpha` is replaced; a failing cell is recorded and the rest continue.
pub fn apply_profile(dataset: &PValueDataset, configs: &[PolicyConfig], alpha_grid: &[f64]) -> RejectionProfile {
    let rows = configs
        .iter()
        .map(|cfg| {
            alpha_grid
                .iter()
                .map(|&alpha| {
                    let cfg = PolicyConfig { alpha, ..cfg.clone() };
                    let result = run_procedure(&cfg, &dataset.p_values).map(|t| t.rejection_count());
                    ProfileCell { procedure: cfg.procedure, alpha, result }
                })
                .collect()
        })
        .collect();
    RejectionProfile { alpha_grid: alpha_grid.to_vec(), rows }
}

#[derive(Debug, Serialize)]
struct ProfileRecord<'a> {
    procedure: &'a str,
    alpha: f64,
    rejections: Option<usize>,
    error: Option<String>,
}

impl RejectionProfile {
    /// Counts over successful cells never decrease as α grows.
    pub fn is_monotone(&self) -> bool {
        self.rows.iter().all(|row| {
            let counts: Vec<usize> = row.iter().filter_map(|c| c.result.as_ref().ok().copied()).collect();
            counts.windows(2).all(|w| w[0] <= w[1])
        })
    }

    pub fn count(&self, procedure: Procedure, alpha: f64) -> Option<usize> {
        self.rows
            .iter()
            .flatten()
            .find(|c| c.procedure == procedure && c.alpha == alpha)
            .and_then(|c| c.result.as_ref().ok().copied())
    }

    pub fn failures(&self) -> impl Iterator<Item = &ProfileCell> {
        self.rows.iter().flatten().filter(|c| c.result.is_err())
    }

    /// Long-format CSV: `procedure,alpha,rejections,error`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for cell in self.rows.iter().flatten() {
            w.serialize(ProfileRecord {
                procedure: cell.procedure.name(),
                alpha: cell.alpha,
                rejections: cell.result.as_ref().ok().copied(),
                error: cell.result.as_ref().err().map(|e| e.to_string()),
            })?;
        }
        if self.rows.iter().all(|r| r.is_empty()) {
            w.write_record(["procedure", "alpha", "rejections", "error"])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for RejectionProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<18}", "alpha")?;
        for a in &self.alpha_grid {
            write!(f, "{a:>7}")?;
        }
        writeln!(f)?;
        for row in &self.rows {
            let Some(first) = row.first() else { continue };
            write!(f, "{:<18}", first.procedure.name())?;
            for c in row {
                match &c.result {
                    Ok(k) => write!(f, "{k:>7}")?,
                    Err(_) => write!(f, "{:>7}", "x")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, options: &LoadOptions) -> Result<PValueDataset, DatasetError> {
        read_pvalues(text.as_bytes(), options)
    }

    #[test]
    fn plain_rows() {
        let ds = read("0.01\n0.5\n0.99\n", &LoadOptions::default()).unwrap();
        assert_eq!(ds.p_values, vec![0.01, 0.5, 0.99]);
        assert!(ds.ids.is_none());
    }

    #[test]
    fn out_of_range_names_line() {
        let err = read("1.2\n", &LoadOptions::default()).unwrap_err();
        assert_eq!(err, DatasetError::Row { line: 1, message: "p-value 1.2 outside [0, 1]".into() });
        let err = read("p\n0.1\nabc\n", &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, DatasetError::Row { line: 3, .. }), "{err}");
        let err = read("0.1\n\n0.2,\n", &LoadOptions { column: ColumnSpec::Index(1), ..Default::default() });
        assert!(err.is_err());
    }

    #[test]
    fn header_detection_and_named_columns() {
        let text = "gene,pval\nA,0.2\nB,0.03\nC,0.4\n";
        let options = LoadOptions {
            column: ColumnSpec::parse("pval"),
            id_column: Some(ColumnSpec::parse("gene")),
            limit: Some(2),
        };
        let ds = read(text, &options).unwrap();
        assert_eq!(ds.p_values, vec![0.2, 0.03]);
        assert_eq!(ds.ids.unwrap(), vec!["A", "B"]);
        let ds = read(text, &LoadOptions { column: ColumnSpec::Index(1), ..Default::default() }).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(read(text, &LoadOptions { column: ColumnSpec::parse("q"), ..Default::default() }).unwrap_err(),
            DatasetError::MissingColumn("q".into()));
        assert_eq!(read("p\n", &LoadOptions::default()).unwrap_err(), DatasetError::Empty);
    }

    #[test]
    fn alpha_grids() {
        let g = parse_alpha_grid("0.05:0.4:0.05").unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], 0.05);
        assert_eq!(g[2], 0.15);
        assert_eq!(g[7], 0.4);
        assert_eq!(parse_alpha_grid("0.05,0.2").unwrap(), vec![0.05, 0.2]);
        assert!(parse_alpha_grid("0.4:0.05:0.05").is_err());
        assert!(parse_alpha_grid("0.1:0.5").is_err());
        assert!(parse_alpha_grid("0.5:1.0:0.5").is_err());
    }

    #[test]
    fn profile_cells_fail_independently() {
        let ds = PValueDataset { p_values: vec![0.001, 0.5, 0.1, 0.002], ids: None, source: PathBuf::new() };
        let configs = [
            PolicyConfig::new(Procedure::AddisGraph, 0.05),
            PolicyConfig::new(Procedure::EiAddisGraph, 0.05),
        ];
        let profile = apply_profile(&ds, &configs, &[0.05, 0.2, 0.4]);
        assert!(profile.is_monotone());
        assert!(profile.count(Procedure::AddisGraph, 0.4).is_some());
        // λ = 0.16 < τα = 0.32 for the exhaustive procedure at α = 0.4.
        let failed: Vec<_> = profile.failures().collect();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].alpha, 0.4);
        let mut buf = Vec::new();
        profile.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("procedure,alpha,rejections,error\n"));
        assert_eq!(text.lines().count(), 7);
    }
}
