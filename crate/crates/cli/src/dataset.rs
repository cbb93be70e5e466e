//! Numeric CSV datasets with a binary label column.

use std::path::Path;

use hdlogit::logistic::Labels;
use nalgebra::DMatrix;

use crate::CliError;

/// Which column holds the response.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelColumn {
    Last,
    Index(usize),
    Name(String),
}

impl LabelColumn {
    /// A bare non-negative integer is a zero-based index, anything else a
    /// header name.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.trim().to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: Labels,
    /// Names of the columns of `x`; `x0, x1, …` when the file has no header.
    pub names: Vec<String>,
    pub label_name: String,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn load(path: &Path, label: &LabelColumn, center: bool) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text, label, center).map_err(|e| CliError::usage(format!("{}: {}", path.display(), e.message)))
    }

    pub fn parse(text: &str, label: &LabelColumn, center: bool) -> Result<Self, CliError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| CliError::usage(format!("malformed CSV: {e}")))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.iter().all(str::is_empty) {
                continue;
            }
            rows.push((line, rec));
        }
        let Some((_, first)) = rows.first() else {
            return Err(CliError::usage("no data rows"));
        };
        let has_header = first.iter().any(|f| !f.is_empty() && f.parse::<f64>().is_err());
        let width = first.len();
        let header: Vec<String> = if has_header {
            let h = rows.remove(0).1;
            h.iter().map(str::to_string).collect()
        } else {
            (0..width).map(|j| format!("x{j}")).collect()
        };
        if width < 2 {
            return Err(CliError::usage("need at least one covariate and a label column"));
        }
        let label_col = match label {
            LabelColumn::Last => width - 1,
            LabelColumn::Index(i) if *i < width => *i,
            LabelColumn::Index(i) => {
                return Err(CliError::usage(format!(
                    "label column {i} out of range ({width} columns)"
                )))
            }
            LabelColumn::Name(name) if has_header => header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::usage(format!("no column named {name:?} in the header")))?,
            LabelColumn::Name(name) => {
                return Err(CliError::usage(format!(
                    "label column {name:?} given by name but the file has no header"
                )))
            }
        };
        let n = rows.len();
        let p = width - 1;
        if n <= p {
            return Err(CliError::usage(format!(
                "need more rows than covariates, got n = {n}, p = {p}"
            )));
        }
        let mut x = DMatrix::zeros(n, p);
        let mut raw_labels = Vec::with_capacity(n);
        for (i, (line, rec)) in rows.iter().enumerate() {
            let mut k = 0;
            for (c, field) in rec.iter().enumerate() {
                let v = parse_cell(field, *line, c, &header[c])?;
                if c == label_col {
                    raw_labels.push((v, *line));
                } else {
                    x[(i, k)] = v;
                    k += 1;
                }
            }
        }
        let y = map_labels(&raw_labels, &header[label_col])?;
        if center {
            for mut col in x.column_iter_mut() {
                let mean = col.mean();
                col.add_scalar_mut(-mean);
            }
        }
        let names = header
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != label_col)
            .map(|(_, h)| h.clone())
            .collect();
        Ok(Dataset {
            x,
            y,
            names,
            label_name: header[label_col].clone(),
        })
    }

    /// Resolves a covariate by header name or zero-based index among the
    /// covariates.
    pub fn column(&self, spec: &str) -> Result<usize, CliError> {
        if let Some(j) = self.names.iter().position(|n| n == spec) {
            return Ok(j);
        }
        match spec.parse::<usize>() {
            Ok(j) if j < self.p() => Ok(j),
            _ => Err(CliError::usage(format!("unknown variable {spec:?}"))),
        }
    }
}

fn parse_cell(field: &str, line: u64, col: usize, name: &str) -> Result<f64, CliError> {
    let missing = field.is_empty() || ["na", "nan", "null"].contains(&field.to_ascii_lowercase().as_str());
    if missing {
        return Err(CliError::usage(format!(
            "line {line}, column {col} ({name}): missing value"
        )));
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::usage(format!(
            "line {line}, column {col} ({name}): cannot read {field:?} as a finite number"
        ))),
    }
}

/// Accepts `{0, 1}` or `{−1, +1}` coding and maps to `±1`.
fn map_labels(raw: &[(f64, u64)], name: &str) -> Result<Labels, CliError> {
    let zero_one = raw.iter().all(|(v, _)| *v == 0.0 || *v == 1.0);
    let signed = raw.iter().all(|(v, _)| *v == -1.0 || *v == 1.0);
    if !zero_one && !signed {
        let (bad, line) = raw
            .iter()
            .find(|(v, _)| ![0.0, 1.0, -1.0].contains(v))
            .or_else(|| raw.iter().find(|(v, _)| *v == 0.0))
            .copied()
            .unwrap_or((f64::NAN, 0));
        return Err(CliError::usage(format!(
            "line {line}, label column {name}: {bad} is not a valid label; use 0/1 or -1/1 coding"
        )));
    }
    let y = raw.iter().map(|(v, _)| if *v == 1.0 { 1.0 } else { -1.0 }).collect();
    Labels::new(y).map_err(|e| CliError::usage(e.to_string()))
}
