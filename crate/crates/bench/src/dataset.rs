use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use faer::Mat;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Bad rows quoted in an ingestion error before the rest are summarized.
const MAX_DIAGNOSTICS: usize = 5;

/// Which column of the file holds the regression target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetColumn {
    /// Zero-based column index.
    Index(usize),
    /// Header name; requires a header row.
    Name(String),
    Last,
}

impl FromStr for TargetColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "last" | "-1" => TargetColumn::Last,
            _ => match s.parse::<usize>() {
                Ok(i) => TargetColumn::Index(i),
                Err(_) => TargetColumn::Name(s.to_string()),
            },
        })
    }
}

impl fmt::Display for TargetColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetColumn::Index(i) => write!(f, "{i}"),
            TargetColumn::Name(n) => f.write_str(n),
            TargetColumn::Last => f.write_str("last"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub target: TargetColumn,
}

impl Schema {
    pub fn new(target: TargetColumn) -> Self {
        Self { target }
    }
}

/// Where a dataset came from and how its columns were mapped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: Option<PathBuf>,
    pub target: String,
    pub feature_columns: Vec<String>,
    /// 1-based line numbers of rows dropped during ingestion.
    pub dropped_lines: Vec<usize>,
    /// FNV-1a hash of the raw file bytes.
    pub fingerprint: Option<u64>,
    pub warnings: Vec<String>,
}

/// Regression data: `x` is `n x d`, `y` has length `n`, all finite.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub x: Mat<f64>,
    pub y: Vec<f64>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Mat<f64>, y: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if x.nrows() != y.len() {
            return Err(BenchError::contract(format!(
                "{name}: {} input rows but {} targets",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(BenchError::contract(format!("{name}: dataset is empty")));
        }
        let finite = y.iter().all(|v| v.is_finite())
            && (0..x.ncols()).all(|j| x.col_as_slice(j).iter().all(|v| v.is_finite()));
        if !finite {
            return Err(BenchError::contract(format!("{name}: non-finite values")));
        }
        let provenance = Provenance {
            target: "target".into(),
            feature_columns: (0..x.ncols()).map(|j| format!("x{j}")).collect(),
            ..Provenance::default()
        };
        Ok(Self { name, x, y, provenance })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// A random subset of at most `cap` rows, kept in file order.
    pub fn subsample(&self, cap: usize, seed: u64) -> Dataset {
        if self.len() <= cap {
            return self.clone();
        }
        let mut rng = itergp::rng::stream_rng(seed, 0);
        let mut rows = sample(&mut rng, self.len(), cap).into_vec();
        rows.sort_unstable();
        let x = Mat::from_fn(cap, self.dim(), |i, j| self.x[(rows[i], j)]);
        let y = rows.iter().map(|&r| self.y[r]).collect();
        let mut provenance = self.provenance.clone();
        provenance.warnings.push(format!("subsampled {} of {} rows", cap, self.len()));
        Dataset { name: self.name.clone(), x, y, provenance }
    }
}

/// Reads a delimited numeric text file. Comma-separated if the first data
/// line contains a comma, whitespace-separated otherwise; a first line that
/// does not parse as numbers is taken as the header. Rows with missing or
/// non-numeric fields are dropped and listed in the provenance.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(BenchError::io(path))?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| BenchError::Ingest {
        path: path.display().to_string(),
        message: format!("not UTF-8 text: {e}"),
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let mut ds = parse_dataset(&name, &text, schema).map_err(|e| match e {
        BenchError::Ingest { message, .. } => BenchError::Ingest { path: path.display().to_string(), message },
        other => other,
    })?;
    ds.provenance.path = Some(path.to_path_buf());
    ds.provenance.fingerprint = Some(fingerprint(&bytes));
    Ok(ds)
}

pub fn fingerprint(bytes: &[u8]) -> u64 {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn split_fields(line: &str, comma: bool) -> Vec<&str> {
    if comma {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_row(fields: &[&str]) -> std::result::Result<Vec<f64>, String> {
    fields
        .iter()
        .enumerate()
        .map(|(j, f)| match f.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("field {} {:?} is not a finite number", j + 1, f)),
        })
        .collect()
}

/// [`load_dataset`] on text already in memory.
pub fn parse_dataset(name: &str, text: &str, schema: &Schema) -> Result<Dataset> {
    let ingest = |message: String| BenchError::Ingest { path: name.to_string(), message };
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let Some(&(_, first)) = lines.first() else {
        return Err(ingest("no data lines".into()));
    };
    let comma = first.contains(',');
    let first_fields = split_fields(first, comma);
    let (header, body) = if parse_row(&first_fields).is_err() {
        (Some(first_fields.iter().map(|s| s.to_string()).collect::<Vec<_>>()), &lines[1..])
    } else {
        (None, &lines[..])
    };
    let width = match (&header, body.first()) {
        (Some(h), _) => h.len(),
        (None, Some(&(_, l))) => split_fields(l, comma).len(),
        (None, None) => 0,
    };
    if width < 2 {
        return Err(ingest(format!("need a target and at least one feature, found {width} column(s)")));
    }
    let target = match &schema.target {
        TargetColumn::Last => width - 1,
        TargetColumn::Index(i) if *i < width => *i,
        TargetColumn::Index(i) => return Err(ingest(format!("target column {i} out of range for {width} columns"))),
        TargetColumn::Name(n) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == n))
            .ok_or_else(|| ingest(format!("no header column named {n:?}")))?,
    };
    let names: Vec<String> = match &header {
        Some(h) => h.clone(),
        None => (0..width).map(|j| format!("c{j}")).collect(),
    };

    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    let mut diagnostics = Vec::new();
    for &(lineno, line) in body {
        let fields = split_fields(line, comma);
        let parsed = if fields.len() != width {
            Err(format!("expected {width} fields, found {}", fields.len()))
        } else {
            parse_row(&fields)
        };
        match parsed {
            Ok(v) => rows.push(v),
            Err(msg) => {
                dropped.push(lineno);
                if diagnostics.len() < MAX_DIAGNOSTICS {
                    diagnostics.push(format!("line {lineno}: {msg}"));
                }
            }
        }
    }
    if rows.is_empty() {
        let mut msg = "no usable rows".to_string();
        for d in &diagnostics {
            msg.push_str("\n  ");
            msg.push_str(d);
        }
        return Err(ingest(msg));
    }

    let n = rows.len();
    let features: Vec<usize> = (0..width).filter(|&j| j != target).collect();
    let x = Mat::from_fn(n, features.len(), |i, j| rows[i][features[j]]);
    let y = rows.iter().map(|r| r[target]).collect();
    let mut warnings = Vec::new();
    if !dropped.is_empty() {
        let mut msg = format!("dropped {} row(s) with missing or non-numeric values", dropped.len());
        for d in &diagnostics {
            msg.push_str("; ");
            msg.push_str(d);
        }
        warnings.push(msg);
    }
    Ok(Dataset {
        name: name.to_string(),
        x,
        y,
        provenance: Provenance {
            path: None,
            target: names[target].clone(),
            feature_columns: features.iter().map(|&j| names[j].clone()).collect(),
            dropped_lines: dropped,
            fingerprint: None,
            warnings,
        },
    })
}

/// Writes a comma-separated file with a header, features first and the
/// target last. Values use the shortest round-trip representation, so
/// reloading gives identical matrices.
pub fn write_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(BenchError::io(path))?;
    let mut w = std::io::BufWriter::new(file);
    let mut header: Vec<String> = ds.provenance.feature_columns.clone();
    if header.len() != ds.dim() {
        header = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    }
    header.push(ds.provenance.target.clone());
    let write = |w: &mut std::io::BufWriter<std::fs::File>| -> std::io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for i in 0..ds.len() {
            for j in 0..ds.dim() {
                write!(w, "{},", ds.x[(i, j)])?;
            }
            writeln!(w, "{}", ds.y[i])?;
        }
        w.flush()
    };
    write(&mut w).map_err(BenchError::io(path))
}
