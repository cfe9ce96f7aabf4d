//! On-disk dataset formats.
//!
//! jsonl: one JSON object per line with fields `id`, `label`, `frames`
//! (array of arrays) and optional `privileged` (array of arrays). Lines
//! starting with `#` are comments (the synthesizer writes its spec there).
//!
//! csv: one row per frame with columns `id`, `t`, `label`,
//! `x_0..x_{m-1}` and optionally `xs_0..xs_{p-1}`, rows grouped by id and
//! ordered by `t` starting at 0.

use super::Dataset;
use crate::error::{Error, Result};
use crate::model::{FeatureDims, SequenceSample};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(DataFormat::Jsonl),
            "csv" => Ok(DataFormat::Csv),
            other => Err(Error::config(format!("unknown dataset format '{other}'"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    id: String,
    label: usize,
    frames: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    privileged: Option<Vec<Vec<f64>>>,
}

/// Assemble samples into a dataset, inferring the dimensions and
/// validating every invariant. Any inconsistency is a schema error.
fn assemble(samples: Vec<SequenceSample>) -> Result<Dataset> {
    if samples.is_empty() {
        return Err(Error::schema("dataset holds no samples"));
    }
    let m_x = samples[0].frames.first().map(|f| f.len()).unwrap_or(0);
    let m_xstar = samples
        .iter()
        .find_map(|s| s.privileged.as_ref())
        .and_then(|p| p.first())
        .map(|f| f.len())
        .unwrap_or(0);
    let n_labels = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    let dims = FeatureDims { m_x, m_xstar, n_labels, n_hidden: 1 };
    Dataset::new(samples, dims, None).map_err(|e| Error::schema(e.to_string()))
}

pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<Dataset> {
    match format {
        DataFormat::Jsonl => load_jsonl(path.as_ref()),
        DataFormat::Csv => load_csv(path.as_ref()),
    }
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>, format: DataFormat) -> Result<()> {
    save_dataset_with_header(dataset, path, format, None)
}

/// Save with an optional `#`-prefixed header comment (jsonl only).
pub fn save_dataset_with_header(
    dataset: &Dataset,
    path: impl AsRef<Path>,
    format: DataFormat,
    header: Option<&str>,
) -> Result<()> {
    dataset.validate()?;
    match format {
        DataFormat::Jsonl => save_jsonl(dataset, path.as_ref(), header),
        DataFormat::Csv => save_csv(dataset, path.as_ref()),
    }
}

fn load_jsonl(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(trimmed).map_err(|e| {
            Error::schema(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        samples.push(SequenceSample {
            id: record.id,
            frames: record.frames,
            privileged: record.privileged,
            label: record.label,
        });
    }
    assemble(samples)
}

fn save_jsonl(dataset: &Dataset, path: &Path, header: Option<&str>) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    if let Some(h) = header {
        for line in h.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    for s in &dataset.samples {
        let record = JsonlRecord {
            id: s.id.clone(),
            label: s.label,
            frames: s.frames.clone(),
            privileged: s.privileged.clone(),
        };
        let json = serde_json::to_string(&record)
            .map_err(|e| Error::schema(format!("serialize {}: {e}", s.id)))?;
        writeln!(out, "{json}")?;
    }
    Ok(())
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::schema(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::schema(format!("{}: {e}", path.display())))?
        .clone();
    let mut x_cols = Vec::new();
    let mut xs_cols = Vec::new();
    let (mut id_col, mut t_col, mut label_col) = (None, None, None);
    for (i, name) in headers.iter().enumerate() {
        match name {
            "id" => id_col = Some(i),
            "t" => t_col = Some(i),
            "label" => label_col = Some(i),
            _ if name.starts_with("x_") => x_cols.push((name[2..].to_string(), i)),
            _ if name.starts_with("xs_") => xs_cols.push((name[3..].to_string(), i)),
            other => {
                return Err(Error::schema(format!("unrecognized csv column '{other}'")));
            }
        }
    }
    let (id_col, t_col, label_col) = match (id_col, t_col, label_col) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::schema("csv needs id, t and label columns")),
    };
    let sort_indexed = |cols: &mut Vec<(String, usize)>, prefix: &str| -> Result<Vec<usize>> {
        let mut parsed: Vec<(usize, usize)> = Vec::with_capacity(cols.len());
        for (suffix, idx) in cols.iter() {
            let d: usize = suffix.parse().map_err(|_| {
                Error::schema(format!("bad feature column '{prefix}{suffix}'"))
            })?;
            parsed.push((d, *idx));
        }
        parsed.sort();
        for (want, (got, _)) in parsed.iter().enumerate() {
            if *got != want {
                return Err(Error::schema(format!(
                    "{prefix} columns are not contiguous from 0"
                )));
            }
        }
        Ok(parsed.into_iter().map(|(_, i)| i).collect())
    };
    let x_idx = sort_indexed(&mut x_cols, "x_")?;
    let xs_idx = sort_indexed(&mut xs_cols, "xs_")?;
    if x_idx.is_empty() {
        return Err(Error::schema("csv has no x_ feature columns"));
    }

    let mut samples: Vec<SequenceSample> = Vec::new();
    let mut current: Option<SequenceSample> = None;
    let mut seen_ids = std::collections::HashSet::new();
    for (rowno, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::schema(format!("row {}: {e}", rowno + 2)))?;
        let get = |i: usize| -> Result<&str> {
            row.get(i).ok_or_else(|| Error::schema(format!("row {}: short record", rowno + 2)))
        };
        let id = get(id_col)?.to_string();
        let t: usize = get(t_col)?
            .parse()
            .map_err(|_| Error::schema(format!("row {}: bad t value", rowno + 2)))?;
        let label: usize = get(label_col)?
            .parse()
            .map_err(|_| Error::schema(format!("row {}: bad label", rowno + 2)))?;
        let parse_f = |i: usize| -> Result<f64> {
            get(i)?
                .parse::<f64>()
                .map_err(|_| Error::schema(format!("row {}: bad numeric value", rowno + 2)))
        };
        let frame: Vec<f64> = x_idx.iter().map(|&i| parse_f(i)).collect::<Result<_>>()?;
        let priv_frame: Option<Vec<f64>> = if xs_idx.is_empty() {
            None
        } else {
            Some(xs_idx.iter().map(|&i| parse_f(i)).collect::<Result<_>>()?)
        };

        let start_new = match &current {
            Some(c) => c.id != id,
            None => true,
        };
        if start_new {
            if let Some(c) = current.take() {
                samples.push(c);
            }
            if !seen_ids.insert(id.clone()) {
                return Err(Error::schema(format!(
                    "row {}: rows of id '{id}' are not contiguous",
                    rowno + 2
                )));
            }
            if t != 0 {
                return Err(Error::schema(format!(
                    "row {}: id '{id}' does not start at t = 0",
                    rowno + 2
                )));
            }
            current = Some(SequenceSample {
                id,
                frames: vec![frame],
                privileged: priv_frame.map(|p| vec![p]),
                label,
            });
        } else {
            let c = current.as_mut().unwrap();
            if t != c.frames.len() {
                return Err(Error::schema(format!(
                    "row {}: id '{}' has out-of-order t = {t}",
                    rowno + 2,
                    c.id
                )));
            }
            if label != c.label {
                return Err(Error::schema(format!(
                    "row {}: id '{}' changes label mid-sequence",
                    rowno + 2,
                    c.id
                )));
            }
            c.frames.push(frame);
            match (&mut c.privileged, priv_frame) {
                (Some(p), Some(f)) => p.push(f),
                (None, None) => {}
                _ => {
                    return Err(Error::schema(format!(
                        "row {}: id '{}' mixes privileged and plain rows",
                        rowno + 2,
                        c.id
                    )))
                }
            }
        }
    }
    if let Some(c) = current.take() {
        samples.push(c);
    }
    assemble(samples)
}

fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let has_priv = dataset.fully_privileged();
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::schema(format!("{}: {e}", path.display())))?;
    let mut header = vec!["id".to_string(), "t".to_string(), "label".to_string()];
    for d in 0..dataset.dims.m_x {
        header.push(format!("x_{d}"));
    }
    if has_priv {
        for d in 0..dataset.dims.m_xstar {
            header.push(format!("xs_{d}"));
        }
    }
    writer.write_record(&header).map_err(|e| Error::schema(e.to_string()))?;
    for s in &dataset.samples {
        for (t, frame) in s.frames.iter().enumerate() {
            let mut row = vec![s.id.clone(), t.to_string(), s.label.to_string()];
            for v in frame {
                row.push(format!("{v}"));
            }
            if has_priv {
                for v in &s.privileged.as_ref().unwrap()[t] {
                    row.push(format!("{v}"));
                }
            }
            writer.write_record(&row).map_err(|e| Error::schema(e.to_string()))?;
        }
    }
    writer.flush()?;
    Ok(())
}
