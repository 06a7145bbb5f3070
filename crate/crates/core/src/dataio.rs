//! Ingestion of raw CSV tables, dataset-specific construction rules, and
//! within-dataset standardization.
//!
//! The two bundled datasets are built as follows. The diabetes table keeps
//! its ten predictors, takes the log of the progression measure as the
//! response, and labels a row as high-precision when blood pressure or the
//! fourth serum measurement carries a fractional part. The geyser table is
//! turned into lagged pairs: the duration at time t predicts the log waiting
//! time at time t+1, and a row is labelled low-quality exactly when the
//! duration was recorded as a whole 2, 3, or 4 (the values coded at night).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance for "is this value a whole number" decisions.
const ROUND_TOL: f64 = 1e-9;

/// A rectangular numeric table as read from disk.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub names: Vec<String>,
    pub cells: DMatrix<f64>,
}

impl RawTable {
    pub fn nrows(&self) -> usize {
        self.cells.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.cells.ncols()
    }

    fn column_by_name(&self, needle: &str) -> Option<usize> {
        self.names
            .iter()
            .position(|n| n.trim().eq_ignore_ascii_case(needle))
    }
}

/// Response, candidate predictors, and a binary dataset label per observation.
#[derive(Debug, Clone)]
pub struct TwoSetData {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub label: Vec<u8>,
}

impl TwoSetData {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, names: Vec<String>, label: Vec<u8>) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || label.len() != n {
            return Err(Error::InvalidInput(format!(
                "inconsistent lengths: y {}, x {} rows, label {}",
                n,
                x.nrows(),
                label.len()
            )));
        }
        if names.len() != x.ncols() {
            return Err(Error::InvalidInput(format!(
                "{} names for {} predictor columns",
                names.len(),
                x.ncols()
            )));
        }
        if label.iter().any(|&l| l > 1) {
            return Err(Error::InvalidInput("labels must be 0 or 1".into()));
        }
        let data = Self { y, x, names, label };
        let (n0, n1) = data.counts();
        if n0 == 0 || n1 == 0 {
            return Err(Error::InvalidInput(format!(
                "both datasets must be non-empty (got {n0} and {n1})"
            )));
        }
        Ok(data)
    }

    /// Number of predictors.
    pub fn n_predictors(&self) -> usize {
        self.x.ncols()
    }

    /// Observation counts per dataset label.
    pub fn counts(&self) -> (usize, usize) {
        let n1 = self.label.iter().filter(|&&l| l == 1).count();
        (self.label.len() - n1, n1)
    }

    /// Row indices belonging to dataset `j`.
    pub fn rows_of(&self, j: u8) -> Vec<usize> {
        self.label
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == j).then_some(i))
            .collect()
    }
}

/// Result of an ingestion rule: the constructed data plus any validation
/// warnings. Count mismatches are warnings, not failures, because several
/// versions of the public datasets circulate.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: TwoSetData,
    pub warnings: Vec<String>,
}

/// `TwoSetData` with predictors standardized within each dataset, together
/// with the per-dataset location/scale used, so fits can be mapped back.
#[derive(Debug, Clone)]
pub struct StandardizedData {
    pub data: TwoSetData,
    /// `loc[j][l]` is the mean subtracted from column `l` within dataset `j`.
    pub loc: [Vec<f64>; 2],
    /// `scale[j][l]` divides column `l` within dataset `j`; 1.0 for columns
    /// left untouched.
    pub scale: [Vec<f64>; 2],
}

impl StandardizedData {
    pub fn n_predictors(&self) -> usize {
        self.data.n_predictors()
    }

    pub fn counts(&self) -> (usize, usize) {
        self.data.counts()
    }

    /// Response vector of dataset `j`.
    pub fn response(&self, j: u8) -> DVector<f64> {
        let rows = self.data.rows_of(j);
        DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.data.y[i]))
    }

    /// Design matrix of dataset `j` restricted to `cols` (in the given order).
    pub fn design(&self, j: u8, cols: &[usize]) -> DMatrix<f64> {
        let rows = self.data.rows_of(j);
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| self.data.x[(rows[r], cols[c])])
    }
}

fn parse_cell(field: &str, row: usize, column: &str) -> Result<f64> {
    let trimmed = field.trim();
    let v: f64 = trimmed.parse().map_err(|_| Error::NonNumericCell {
        row,
        column: column.to_string(),
        value: trimmed.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFiniteCell {
            row,
            column: column.to_string(),
        });
    }
    Ok(v)
}

/// Read a numeric CSV file. Rows are kept in file order; `row` in error
/// messages is the 1-based data row.
pub fn load_csv(path: &str, has_header: bool) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_reader(file);

    let mut names: Vec<String> = Vec::new();
    if has_header {
        let headers = reader.headers().map_err(|e| Error::Csv(e.to_string()))?;
        names = headers.iter().map(|h| h.trim().to_string()).collect();
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let row_no = idx + 1;
        if names.is_empty() {
            names = (1..=record.len()).map(|c| format!("c{c}")).collect();
        }
        if record.len() != names.len() {
            return Err(Error::RaggedRow {
                row: row_no,
                got: record.len(),
                expected: names.len(),
            });
        }
        let mut row = Vec::with_capacity(record.len());
        for (c, field) in record.iter().enumerate() {
            row.push(parse_cell(field, row_no, &names[c])?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{path} contains no data rows")));
    }
    let ncols = names.len();
    let cells = DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]);
    Ok(RawTable { names, cells })
}

fn has_fraction(v: f64) -> bool {
    (v - v.round()).abs() > ROUND_TOL
}

/// Split the diabetes table on measurement precision and take the log of the
/// progression measure as the response.
///
/// A row goes to dataset 1 (high precision) when blood pressure or the fourth
/// serum measurement has a nonzero fractional part. Predictors are renamed
/// x1..x10 in table order. Expected split sizes are validated with a warning.
pub fn partition_diabetes(table: &RawTable) -> Result<Ingested> {
    if table.ncols() < 11 {
        return Err(Error::InvalidInput(format!(
            "diabetes table needs 10 predictors plus the response, got {} columns",
            table.ncols()
        )));
    }
    let bp = table.column_by_name("bp").unwrap_or(3);
    let s4 = table.column_by_name("s4").unwrap_or(7);
    let resp = table
        .column_by_name("y")
        .unwrap_or_else(|| table.ncols() - 1);
    let n = table.nrows();

    let mut warnings = Vec::new();
    if n != 442 {
        warnings.push(format!("expected 442 diabetes rows, found {n}"));
    }

    let mut label = Vec::with_capacity(n);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let precise = has_fraction(table.cells[(i, bp)]) || has_fraction(table.cells[(i, s4)]);
        label.push(u8::from(precise));
        let raw = table.cells[(i, resp)];
        if raw <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "response must be positive to take logs (row {}, value {raw})",
                i + 1
            )));
        }
        y[i] = raw.ln();
    }

    let pred_cols: Vec<usize> = (0..table.ncols()).filter(|&c| c != resp).take(10).collect();
    let x = DMatrix::from_fn(n, 10, |r, c| table.cells[(r, pred_cols[c])]);
    let names = (1..=10).map(|i| format!("x{i}")).collect();

    let data = TwoSetData::new(y, x, names, label)?;
    let (n0, n1) = data.counts();
    if (n0, n1) != (377, 65) {
        warnings.push(format!(
            "diabetes partition sizes ({n0}, {n1}) differ from the canonical (377, 65); the data file may be a different version"
        ));
    }
    Ok(Ingested { data, warnings })
}

/// Build lagged eruption pairs from the geyser table.
///
/// Each observation pairs the duration at time t with the log waiting time at
/// time t+1. Predictor x1 is the duration, x2 indicates duration <= 2.5.
/// Rows whose duration is exactly 2, 3, or 4 (the night-time codes) form
/// dataset 0.
pub fn build_geyser(table: &RawTable) -> Result<Ingested> {
    if table.nrows() < 2 {
        return Err(Error::InvalidInput(
            "geyser table needs at least two rows to form lagged pairs".into(),
        ));
    }
    // Headerless tables are assumed to be (waiting, duration) like the
    // bundled fixture.
    let (w_col, d_col) = match (table.column_by_name("waiting"), table.column_by_name("duration")) {
        (Some(w), Some(d)) => (w, d),
        _ if table.ncols() == 2 => (0, 1),
        _ => {
            return Err(Error::InvalidInput(
                "geyser table must have 'waiting' and 'duration' columns".into(),
            ))
        }
    };

    let n_pairs = table.nrows() - 1;
    let mut y = DVector::zeros(n_pairs);
    let mut x = DMatrix::zeros(n_pairs, 2);
    let mut label = Vec::with_capacity(n_pairs);
    for t in 0..n_pairs {
        let duration = table.cells[(t, d_col)];
        let next_wait = table.cells[(t + 1, w_col)];
        if next_wait <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "waiting time must be positive to take logs (row {})",
                t + 2
            )));
        }
        y[t] = next_wait.ln();
        x[(t, 0)] = duration;
        x[(t, 1)] = f64::from(duration <= 2.5);
        let rounded = !has_fraction(duration) && (2.0..=4.0).contains(&duration.round());
        label.push(u8::from(!rounded));
    }

    let data = TwoSetData::new(y, x, vec!["x1".into(), "x2".into()], label)?;
    let (n0, n1) = data.counts();
    let mut warnings = Vec::new();
    if (n0, n1) != (77, 221) {
        warnings.push(format!(
            "geyser partition sizes ({n0}, {n1}) differ from the canonical (77, 221); the data file may be a different version"
        ));
    }
    Ok(Ingested { data, warnings })
}

/// Interpret a generic table: one 0/1 label column, one response column, all
/// remaining columns as predictors. The response defaults to the last
/// non-label column.
pub fn partition_generic(
    table: &RawTable,
    label_column: &str,
    response_column: Option<&str>,
) -> Result<Ingested> {
    let lab_col = table
        .column_by_name(label_column)
        .ok_or_else(|| Error::InvalidInput(format!("label column {label_column:?} not found")))?;
    let resp = match response_column {
        Some(name) => table
            .column_by_name(name)
            .ok_or_else(|| Error::InvalidInput(format!("response column {name:?} not found")))?,
        None => (0..table.ncols()).rev().find(|&c| c != lab_col).unwrap(),
    };
    if resp == lab_col {
        return Err(Error::InvalidInput(
            "label and response columns must differ".into(),
        ));
    }
    let n = table.nrows();
    let mut label = Vec::with_capacity(n);
    for i in 0..n {
        let v = table.cells[(i, lab_col)];
        if (v - 0.0).abs() < ROUND_TOL {
            label.push(0);
        } else if (v - 1.0).abs() < ROUND_TOL {
            label.push(1);
        } else {
            return Err(Error::InvalidInput(format!(
                "label column must be 0 or 1 (row {}, value {v})",
                i + 1
            )));
        }
    }
    let y = DVector::from_fn(n, |i, _| table.cells[(i, resp)]);
    let pred_cols: Vec<usize> = (0..table.ncols())
        .filter(|&c| c != resp && c != lab_col)
        .collect();
    let x = DMatrix::from_fn(n, pred_cols.len(), |r, c| table.cells[(r, pred_cols[c])]);
    let names = pred_cols.iter().map(|&c| table.names[c].clone()).collect();
    let data = TwoSetData::new(y, x, names, label)?;
    Ok(Ingested {
        data,
        warnings: Vec::new(),
    })
}

/// Center and scale each predictor within each dataset so that the mean is 0
/// and the mean square is 1. Columns constant in both datasets are left
/// untouched; a column constant in only one dataset is an error.
pub fn standardize(data: &TwoSetData) -> Result<StandardizedData> {
    let p = data.n_predictors();
    let mut x = data.x.clone();
    let mut loc = [vec![0.0; p], vec![0.0; p]];
    let mut scale = [vec![1.0; p], vec![1.0; p]];

    let rows = [data.rows_of(0), data.rows_of(1)];
    for l in 0..p {
        let constant_in = |j: usize| {
            let first = data.x[(rows[j][0], l)];
            rows[j].iter().all(|&i| (data.x[(i, l)] - first).abs() == 0.0)
        };
        let const0 = constant_in(0);
        let const1 = constant_in(1);
        if const0 && const1 {
            continue;
        }
        if const0 || const1 {
            return Err(Error::ZeroVariance {
                column: data.names[l].clone(),
                dataset: usize::from(const1),
            });
        }
        for j in 0..2 {
            let nj = rows[j].len() as f64;
            let mean = rows[j].iter().map(|&i| data.x[(i, l)]).sum::<f64>() / nj;
            let msq = rows[j]
                .iter()
                .map(|&i| (data.x[(i, l)] - mean).powi(2))
                .sum::<f64>()
                / nj;
            if msq <= 0.0 {
                return Err(Error::ZeroVariance {
                    column: data.names[l].clone(),
                    dataset: j,
                });
            }
            let s = msq.sqrt();
            loc[j][l] = mean;
            scale[j][l] = s;
            for &i in &rows[j] {
                x[(i, l)] = (data.x[(i, l)] - mean) / s;
            }
        }
    }

    Ok(StandardizedData {
        data: TwoSetData {
            y: data.y.clone(),
            x,
            names: data.names.clone(),
            label: data.label.clone(),
        },
        loc,
        scale,
    })
}
