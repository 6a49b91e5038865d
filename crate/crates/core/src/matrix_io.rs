//! Loading, validating and preprocessing dense data matrices.
//!
//! Internally rows are always samples and columns are features. Files may
//! store either orientation; `Orientation::SamplesAsColumns` transposes on load.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::format::fmt17;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Tsv,
    /// Matrix Market `array real general`.
    MatrixMarketDense,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "tsv" => Ok(Format::Tsv),
            "mm" | "mtx" | "matrix-market" | "matrix-market-dense" => Ok(Format::MatrixMarketDense),
            other => Err(Error::Domain(format!("unknown matrix format {other:?}"))),
        }
    }
}

impl Format {
    /// Guess the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(ext) if ext == "tsv" || ext == "tab" => Format::Tsv,
            Some(ext) if ext == "mtx" || ext == "mm" => Format::MatrixMarketDense,
            _ => Format::Csv,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Orientation {
    #[default]
    SamplesAsRows,
    SamplesAsColumns,
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rows" | "samples-as-rows" => Ok(Orientation::SamplesAsRows),
            "cols" | "columns" | "samples-as-columns" => Ok(Orientation::SamplesAsColumns),
            other => Err(Error::Domain(format!("unknown orientation {other:?}"))),
        }
    }
}

/// A real n×p matrix, rows are samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    centered: bool,
    standardized: bool,
}

impl DataMatrix {
    /// Wraps raw values. Fails on an empty shape or non-finite entries.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyMatrix);
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::Parse {
                row: row + 1,
                col: col + 1,
                text: values[(row, col)].to_string(),
            });
        }
        Ok(DataMatrix { values, centered: false, standardized: false })
    }

    /// Builds from row-major rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Malformed("rows have different lengths".into()));
        }
        DataMatrix::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Marks the matrix as already centered, e.g. for simulated zero-mean data
    /// whose sample means are not exactly zero. Use with care.
    pub fn assume_centered(mut self) -> Self {
        self.centered = true;
        self
    }

    /// Multiplies every entry by `factor`, keeping the flags.
    pub fn scaled(&self, factor: f64) -> DataMatrix {
        DataMatrix { values: &self.values * factor, ..self.clone() }
    }

    pub fn transpose(&self) -> DataMatrix {
        DataMatrix { values: self.values.transpose(), centered: false, standardized: false }
    }
}

/// Reads a dense matrix from disk.
pub fn load_matrix(path: &Path, format: Format, orientation: Orientation) -> Result<DataMatrix> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    parse_matrix(&text, format, orientation)
}

/// Parses matrix text in the given format.
pub fn parse_matrix(text: &str, format: Format, orientation: Orientation) -> Result<DataMatrix> {
    let values = match format {
        Format::Csv => parse_delimited(text, b',')?,
        Format::Tsv => parse_delimited(text, b'\t')?,
        Format::MatrixMarketDense => parse_matrix_market(text)?,
    };
    let values = match orientation {
        Orientation::SamplesAsRows => values,
        Orientation::SamplesAsColumns => values.transpose(),
    };
    DataMatrix::new(values)
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

// Row numbers in errors count physical records from 1, header included.
fn parse_delimited(text: &str, delimiter: u8) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Malformed(e.to_string()))?;
        let row_no = idx + 1;
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if idx == 0 && record.iter().all(|c| parse_cell(c).is_none()) {
            // Header row.
            width = Some(record.len());
            continue;
        }
        if let Some(w) = width {
            if record.len() != w {
                return Err(Error::Malformed(format!(
                    "row {row_no} has {} cells, expected {w}",
                    record.len()
                )));
            }
        }
        width = Some(record.len());
        let mut row = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            match parse_cell(cell) {
                Some(v) => row.push(v),
                None => {
                    return Err(Error::Parse { row: row_no, col: j + 1, text: cell.to_string() })
                }
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if n == 0 || p == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

fn parse_matrix_market(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().enumerate();
    let (_, banner) = lines.next().ok_or(Error::EmptyMatrix)?;
    let banner_lc = banner.to_ascii_lowercase();
    let fields: Vec<&str> = banner_lc.split_whitespace().collect();
    if fields.len() < 5
        || fields[0] != "%%matrixmarket"
        || fields[1] != "matrix"
        || fields[2] != "array"
        || fields[3] != "real"
        || fields[4] != "general"
    {
        return Err(Error::Malformed(
            "expected '%%MatrixMarket matrix array real general' banner".into(),
        ));
    }
    let mut data = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (size_line, size) = data.next().ok_or(Error::EmptyMatrix)?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Malformed(format!("bad size line {}", size_line + 1)))?;
    if dims.len() != 2 {
        return Err(Error::Malformed(format!("bad size line {}", size_line + 1)));
    }
    let (n, p) = (dims[0], dims[1]);
    if n == 0 || p == 0 {
        return Err(Error::EmptyMatrix);
    }
    // Column-major order; report positions in matrix coordinates.
    let mut values = Vec::with_capacity(n * p);
    for (_, line) in data {
        for tok in line.split_whitespace() {
            let k = values.len();
            if k >= n * p {
                return Err(Error::Malformed("more entries than the declared size".into()));
            }
            match parse_cell(tok) {
                Some(v) => values.push(v),
                None => {
                    return Err(Error::Parse { row: k % n + 1, col: k / n + 1, text: tok.into() })
                }
            }
        }
    }
    if values.len() != n * p {
        return Err(Error::Malformed(format!(
            "expected {} entries, found {}",
            n * p,
            values.len()
        )));
    }
    Ok(DMatrix::from_vec(n, p, values))
}

/// Writes the matrix as headerless CSV, rows are samples, 17 significant digits.
pub fn write_csv(m: &DataMatrix, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for i in 0..m.n() {
        let line: Vec<String> = (0..m.p()).map(|j| fmt17(m.values[(i, j)])).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Subtracts each column's mean. Idempotent.
pub fn center_columns(m: &DataMatrix) -> DataMatrix {
    let mut values = m.values.clone();
    for mut col in values.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    DataMatrix { values, centered: true, standardized: m.standardized && m.centered }
}

/// Result of [`standardize_columns`].
#[derive(Clone, Debug)]
pub struct Standardized {
    pub matrix: DataMatrix,
    /// 0-based indices of constant columns, left as zeros.
    pub constant_columns: Vec<usize>,
}

/// Scales every non-constant column to unit sample variance (n − 1 denominator).
/// Centers first if the input is not centered.
pub fn standardize_columns(m: &DataMatrix) -> Standardized {
    let centered = if m.centered { m.clone() } else { center_columns(m) };
    let n = centered.n();
    let mut values = centered.values;
    let mut constant_columns = Vec::new();
    for (j, mut col) in values.column_iter_mut().enumerate() {
        let max_abs = col.amax();
        let ss = col.norm_squared();
        // Zero-variance test relative to the column's magnitude.
        if n < 2 || ss <= (1e-24 * max_abs * max_abs).max(f64::MIN_POSITIVE) * n as f64 {
            col.fill(0.0);
            constant_columns.push(j);
            continue;
        }
        let sd = (ss / (n - 1) as f64).sqrt();
        col.unscale_mut(sd);
    }
    Standardized {
        matrix: DataMatrix { values, centered: true, standardized: true },
        constant_columns,
    }
}
