//! Tabular data ingestion, response standardization, and the empirical split
//! grids and marginal masses the tree model is built on.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariates (stored column-major) plus the response vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    columns: Vec<Vec<f64>>,
    y: Vec<f64>,
    column_names: Vec<String>,
}

impl DataMatrix {
    pub fn from_columns(column_names: Vec<String>, columns: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::data("at least one covariate column is required"));
        }
        if column_names.len() != columns.len() {
            return Err(Error::data(format!(
                "{} column names for {} columns",
                column_names.len(),
                columns.len()
            )));
        }
        let n = y.len();
        if n < 2 {
            return Err(Error::data(format!("at least 2 rows are required, got {n}")));
        }
        for (name, col) in column_names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::data(format!(
                    "column {name} has {} rows, response has {n}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("column {name} has non-finite values")));
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("response has non-finite values"));
        }
        Ok(DataMatrix {
            columns,
            y,
            column_names,
        })
    }

    /// Builds a matrix from row-major covariates.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::data("ragged rows"));
        }
        if rows.len() != y.len() {
            return Err(Error::data("row count does not match response length"));
        }
        let columns = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Self::from_columns(names, columns, y)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.columns[j][i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Row-major copy of the covariates.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.row(i)).collect()
    }

    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        Self::from_columns(self.column_names.clone(), self.columns.clone(), y)
    }

    /// Restricts to the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let columns = self
            .columns
            .iter()
            .map(|c| idx.iter().map(|&i| c[i]).collect())
            .collect();
        let y = idx.iter().map(|&i| self.y[i]).collect();
        Self::from_columns(self.column_names.clone(), columns, y)
    }
}

/// How to read a delimited file.
#[derive(Clone, Debug, Default)]
pub struct CsvOptions {
    pub response: String,
    /// Columns forced to be one-hot encoded even when they parse as numbers.
    pub categorical: Vec<String>,
}

impl CsvOptions {
    pub fn new(response: impl Into<String>) -> Self {
        CsvOptions {
            response: response.into(),
            categorical: Vec::new(),
        }
    }
}

/// Result of reading a file: encoded covariates, optional response, and how
/// many rows were dropped for missing cells.
#[derive(Clone, Debug)]
pub struct ParsedTable {
    pub column_names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub y: Option<Vec<f64>>,
    pub dropped_rows: usize,
    /// Source column name for each encoded column.
    pub sources: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan") || c.eq_ignore_ascii_case("null")
}

/// Reads a header-row CSV, drops rows with missing cells, and one-hot encodes
/// every non-numeric (or explicitly categorical) covariate. Encoded columns
/// are appended after the numeric ones as `name=level`, levels sorted.
pub fn read_table(path: &Path, response: Option<&str>, categorical: &[String]) -> Result<ParsedTable> {
    if !path.exists() {
        return Err(Error::data(format!("file not found: {}", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let response_idx = match response {
        Some(r) => Some(
            header
                .iter()
                .position(|h| h == r)
                .ok_or_else(|| Error::data(format!("response not found: {r}")))?,
        ),
        None => None,
    };

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut dropped_rows = 0;
    for record in reader.records() {
        let record = record?;
        if record.iter().any(is_missing) {
            dropped_rows += 1;
            continue;
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(Error::data(format!("no usable rows in {}", path.display())));
    }

    let y = match response_idx {
        Some(r) => {
            let mut y = Vec::with_capacity(rows.len());
            for row in &rows {
                let v: f64 = row[r]
                    .parse()
                    .map_err(|_| Error::data(format!("non-numeric response value {:?}", row[r])))?;
                y.push(v);
            }
            Some(y)
        }
        None => None,
    };

    let mut numeric_names = Vec::new();
    let mut numeric_cols = Vec::new();
    let mut encoded_names = Vec::new();
    let mut encoded_cols = Vec::new();
    let mut encoded_sources = Vec::new();
    for (j, name) in header.iter().enumerate() {
        if Some(j) == response_idx {
            continue;
        }
        let parsed: Option<Vec<f64>> = if categorical.contains(name) {
            None
        } else {
            rows.iter().map(|r| r[j].parse::<f64>().ok()).collect()
        };
        match parsed {
            Some(col) if col.iter().all(|v| v.is_finite()) => {
                numeric_names.push(name.clone());
                numeric_cols.push(col);
            }
            _ => {
                let levels: BTreeSet<&str> = rows.iter().map(|r| r[j].as_str()).collect();
                for level in levels {
                    encoded_names.push(format!("{name}={level}"));
                    encoded_cols.push(rows.iter().map(|r| f64::from(u8::from(r[j] == level))).collect());
                    encoded_sources.push(name.clone());
                }
            }
        }
    }
    let mut sources = numeric_names.clone();
    sources.extend(encoded_sources);
    let mut column_names = numeric_names;
    column_names.extend(encoded_names);
    let mut columns = numeric_cols;
    columns.extend(encoded_cols);
    Ok(ParsedTable {
        column_names,
        columns,
        y,
        dropped_rows,
        sources,
    })
}

/// Loads a training table with the default categorical detection.
pub fn load_csv(path: impl AsRef<Path>, response_column: &str) -> Result<DataMatrix> {
    load_csv_with(path, &CsvOptions::new(response_column))
}

pub fn load_csv_with(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<DataMatrix> {
    let table = read_table(path.as_ref(), Some(&opts.response), &opts.categorical)?;
    let y = table.y.expect("response requested");
    DataMatrix::from_columns(table.column_names, table.columns, y)
}

/// Query covariates aligned to a training column layout.
#[derive(Clone, Debug)]
pub struct QueryMatrix {
    pub rows: Vec<Vec<f64>>,
    pub y: Option<Vec<f64>>,
}

/// Column names from the header row.
pub fn header_names(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Err(Error::data(format!("file not found: {}", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    Ok(reader.headers()?.iter().map(str::to_string).collect())
}

/// Loads rows for prediction, reordering and padding encoded columns so they
/// line up with `train_names`. A category level unseen in training encodes as
/// all zeros; a numeric training column missing from the file is an error.
/// The response is read when the file has that column and ignored otherwise.
pub fn load_query(
    path: impl AsRef<Path>,
    train_names: &[String],
    response: Option<&str>,
    categorical: &[String],
) -> Result<QueryMatrix> {
    let path = path.as_ref();
    let response = match response {
        Some(r) if header_names(path)?.iter().any(|h| h == r) => Some(r),
        _ => None,
    };
    let table = read_table(path, response, categorical)?;
    let by_name: BTreeMap<&str, usize> = table
        .column_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let sources: BTreeSet<&str> = table.sources.iter().map(String::as_str).collect();
    let n = table.columns.first().map_or_else(|| table.y.as_ref().map_or(0, Vec::len), Vec::len);
    let mut aligned: Vec<Vec<f64>> = Vec::with_capacity(train_names.len());
    for name in train_names {
        if let Some(&i) = by_name.get(name.as_str()) {
            aligned.push(table.columns[i].clone());
            continue;
        }
        match name.split_once('=') {
            Some((base, _)) if sources.contains(base) => aligned.push(vec![0.0; n]),
            _ => {
                return Err(Error::data(format!(
                    "dimension mismatch: column {name} missing from {}",
                    path.display()
                )))
            }
        }
    }
    let train_set: BTreeSet<&str> = train_names.iter().map(String::as_str).collect();
    for (name, source) in table.column_names.iter().zip(&table.sources) {
        let encoded = name != source;
        if !encoded && !train_set.contains(name.as_str()) {
            return Err(Error::data(format!(
                "dimension mismatch: column {name} was not present in training data"
            )));
        }
    }
    let rows = (0..n).map(|i| aligned.iter().map(|c| c[i]).collect()).collect();
    Ok(QueryMatrix { rows, y: table.y })
}

/// Affine map between the original and the standardized response scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub y_mean: f64,
    pub y_scale: f64,
    /// Recorded for reference; covariates are not rescaled.
    pub x_means: Vec<f64>,
    pub x_scales: Vec<f64>,
}

impl StandardizationParams {
    pub fn identity(p: usize) -> Self {
        StandardizationParams {
            y_mean: 0.0,
            y_scale: 1.0,
            x_means: vec![0.0; p],
            x_scales: vec![1.0; p],
        }
    }

    pub fn to_original(&self, v: f64) -> f64 {
        v * self.y_scale + self.y_mean
    }

    pub fn to_standard(&self, v: f64) -> f64 {
        (v - self.y_mean) / self.y_scale
    }
}

fn mean_and_pop_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Centers the response and scales it to unit population standard deviation.
pub fn standardize(d: &DataMatrix) -> Result<(DataMatrix, StandardizationParams)> {
    let (y_mean, y_scale) = mean_and_pop_sd(d.y());
    if !(y_scale > 0.0) || y_scale <= 1e-12 * y_mean.abs().max(1.0) {
        return Err(Error::data("response is constant; cannot standardize"));
    }
    let (x_means, x_scales) = d.columns().iter().map(|c| mean_and_pop_sd(c)).unzip();
    let y = d.y().iter().map(|v| (v - y_mean) / y_scale).collect();
    let params = StandardizationParams {
        y_mean,
        y_scale,
        x_means,
        x_scales,
    };
    Ok((d.with_response(y)?, params))
}

/// Candidate split values per column: midpoints of adjacent distinct values.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitGrid {
    candidates: Vec<Vec<f64>>,
}

impl SplitGrid {
    pub fn candidates(&self, j: usize) -> &[f64] {
        &self.candidates[j]
    }

    pub fn len(&self, j: usize) -> usize {
        self.candidates[j].len()
    }

    pub fn p(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_splittable(&self, j: usize) -> bool {
        !self.candidates[j].is_empty()
    }

    /// Columns with at least one candidate split, ascending.
    pub fn splittable(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| self.is_splittable(j)).collect()
    }

    /// Position of the candidate equal to `s` up to a relative `1e-9`, so
    /// decimal round trips such as `0.15` match the midpoint of `0.1, 0.2`.
    pub fn index_of(&self, j: usize, s: f64) -> Option<usize> {
        let c = self.candidates.get(j)?;
        let at = c.partition_point(|v| *v < s);
        let tol = 1e-9 * s.abs().max(1.0);
        [at.checked_sub(1), Some(at)]
            .into_iter()
            .flatten()
            .filter(|&k| k < c.len() && (c[k] - s).abs() <= tol)
            .min_by(|&a, &b| (c[a] - s).abs().total_cmp(&(c[b] - s).abs()))
    }
}

fn sorted_distinct(col: &[f64]) -> Vec<f64> {
    let mut v = col.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

pub fn build_split_grid(d: &DataMatrix) -> SplitGrid {
    let candidates = d
        .columns()
        .iter()
        .map(|col| {
            sorted_distinct(col)
                .windows(2)
                .map(|w| (w[0] + w[1]) / 2.0)
                .collect()
        })
        .collect();
    SplitGrid { candidates }
}

/// Exact left mass `count / n` of a split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LeftMass {
    pub count: u32,
    pub n: u32,
}

impl LeftMass {
    pub fn value(self) -> f64 {
        f64::from(self.count) / f64::from(self.n)
    }

    pub fn right_count(self) -> u32 {
        self.n - self.count
    }
}

/// Per-column empirical marginal masses at every candidate split.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMarginals {
    n: u32,
    grid: SplitGrid,
    left_counts: Vec<Vec<u32>>,
}

impl EmpiricalMarginals {
    pub fn new(d: &DataMatrix) -> Self {
        let grid = build_split_grid(d);
        let left_counts = d
            .columns()
            .iter()
            .zip(&grid.candidates)
            .map(|(col, cands)| {
                let mut sorted = col.to_vec();
                sorted.sort_by(f64::total_cmp);
                cands
                    .iter()
                    .map(|&s| sorted.partition_point(|&v| v <= s) as u32)
                    .collect()
            })
            .collect();
        EmpiricalMarginals {
            n: d.n() as u32,
            grid,
            left_counts,
        }
    }

    pub fn n(&self) -> usize {
        self.n as usize
    }

    pub fn grid(&self) -> &SplitGrid {
        &self.grid
    }

    pub fn left_mass_at(&self, j: usize, split_idx: usize) -> LeftMass {
        LeftMass {
            count: self.left_counts[j][split_idx],
            n: self.n,
        }
    }

    pub fn left_counts(&self, j: usize) -> &[u32] {
        &self.left_counts[j]
    }
}

/// Serializable form of [`EmpiricalMarginals`], enough to rebuild fitted
/// trees without the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalsRecord {
    pub n: u32,
    pub candidates: Vec<Vec<f64>>,
    pub left_counts: Vec<Vec<u32>>,
}

impl EmpiricalMarginals {
    pub fn to_record(&self) -> MarginalsRecord {
        MarginalsRecord {
            n: self.n,
            candidates: self.grid.candidates.clone(),
            left_counts: self.left_counts.clone(),
        }
    }

    pub fn from_record(rec: MarginalsRecord) -> Result<Self> {
        let MarginalsRecord { n, candidates, left_counts } = rec;
        if candidates.len() != left_counts.len() {
            return Err(Error::data("marginals: candidate and count tables differ in width"));
        }
        for (j, (c, k)) in candidates.iter().zip(&left_counts).enumerate() {
            let sorted = c.windows(2).all(|w| w[0] < w[1]) && k.windows(2).all(|w| w[0] < w[1]);
            let in_range = k.iter().all(|&v| v >= 1 && v < n);
            if c.len() != k.len() || !sorted || !in_range || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("marginals: column {j} is malformed")));
            }
        }
        Ok(EmpiricalMarginals {
            n,
            grid: SplitGrid { candidates },
            left_counts,
        })
    }
}

/// `#{i : x_ij <= s} / n` for a grid value `s`.
pub fn left_mass(m: &EmpiricalMarginals, j: usize, s: f64) -> Result<LeftMass> {
    let k = m
        .grid()
        .index_of(j, s)
        .ok_or_else(|| Error::data(format!("split {s} is not a candidate for column {j}")))?;
    Ok(m.left_mass_at(j, k))
}

/// Standardized training data with everything the sampler precomputes:
/// marginals and, per column, each row's rank among the distinct values so
/// that `x_ij > candidate[k]` reduces to `code[j][i] > k`.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    data: DataMatrix,
    marginals: EmpiricalMarginals,
    codes: Vec<Vec<u32>>,
    splittable: Vec<usize>,
}

impl TrainingSet {
    pub fn new(data: DataMatrix) -> Self {
        let marginals = EmpiricalMarginals::new(&data);
        let codes = data
            .columns()
            .iter()
            .map(|col| {
                let distinct = sorted_distinct(col);
                col.iter()
                    .map(|v| distinct.partition_point(|d| d < v) as u32)
                    .collect()
            })
            .collect();
        let splittable = marginals.grid().splittable();
        TrainingSet {
            data,
            marginals,
            codes,
            splittable,
        }
    }

    pub fn data(&self) -> &DataMatrix {
        &self.data
    }

    pub fn marginals(&self) -> &EmpiricalMarginals {
        &self.marginals
    }

    pub fn grid(&self) -> &SplitGrid {
        self.marginals.grid()
    }

    pub fn codes(&self, j: usize) -> &[u32] {
        &self.codes[j]
    }

    pub fn splittable(&self) -> &[usize] {
        &self.splittable
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }
}

/// One cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Shuffles `0..n` under `seed` and deals it into `k` folds whose sizes differ
/// by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || k > n {
        return Err(Error::data(format!("fold count {k} out of range [2, {n}]")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = (0..k)
        .map(|f| {
            let mut validation: Vec<usize> = perm.iter().copied().skip(f).step_by(k).collect();
            validation.sort_unstable();
            let mut train: Vec<usize> = perm
                .iter()
                .enumerate()
                .filter(|(pos, _)| pos % k != f)
                .map(|(_, &i)| i)
                .collect();
            train.sort_unstable();
            Fold { train, validation }
        })
        .collect();
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn single(col: Vec<f64>) -> DataMatrix {
        let y = (0..col.len()).map(|i| i as f64).collect();
        DataMatrix::from_columns(vec!["a".into()], vec![col], y).unwrap()
    }

    #[test]
    fn load_three_rows() {
        let f = write_tmp("a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
        let d = load_csv(f.path(), "y").unwrap();
        assert_eq!((d.n(), d.p()), (3, 2));
        assert_eq!(d.y(), &[3.0, 6.0, 9.0]);
        assert_eq!(d.column(1), &[2.0, 5.0, 8.0]);
    }

    #[test]
    fn categorical_column_is_one_hot_encoded() {
        let f = write_tmp("color,a,y\nred,1,1\nblue,2,2\nred,3,3\n");
        let d = load_csv(f.path(), "y").unwrap();
        assert_eq!(d.column_names(), &["a", "color=blue", "color=red"]);
        assert_eq!(d.column(1), &[0.0, 1.0, 0.0]);
        assert_eq!(d.column(2), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn forced_categorical_numeric_column() {
        let f = write_tmp("g,y\n1,1\n2,2\n1,3\n");
        let mut opts = CsvOptions::new("y");
        opts.categorical.push("g".into());
        let d = load_csv_with(f.path(), &opts).unwrap();
        assert_eq!(d.column_names(), &["g=1", "g=2"]);
    }

    #[test]
    fn load_errors() {
        let f = write_tmp("a,b\n1,2\n3,4\n");
        let err = load_csv(f.path(), "y").unwrap_err().to_string();
        assert!(err.contains("response not found"), "{err}");

        let f = write_tmp("a,y\n1,foo\n3,4\n");
        assert!(load_csv(f.path(), "y").unwrap_err().to_string().contains("non-numeric"));

        let f = write_tmp("a,y\n1,NA\n,4\n");
        assert!(load_csv(f.path(), "y").unwrap_err().to_string().contains("no usable rows"));

        assert!(load_csv("/nonexistent/x.csv", "y").is_err());
    }

    #[test]
    fn rows_with_missing_cells_are_dropped() {
        let f = write_tmp("a,y\n1,1\nNA,2\n3,\n4,4\n");
        let t = read_table(f.path(), Some("y"), &[]).unwrap();
        assert_eq!(t.dropped_rows, 2);
        assert_eq!(t.y.unwrap(), vec![1.0, 4.0]);
    }

    #[test]
    fn query_alignment() {
        let train = write_tmp("c,a,y\nred,1,1\nblue,2,2\n");
        let d = load_csv(train.path(), "y").unwrap();
        let q = write_tmp("a,c\n5,blue\n6,green\n");
        let qm = load_query(q.path(), d.column_names(), None, &[]).unwrap();
        assert_eq!(qm.rows, vec![vec![5.0, 1.0, 0.0], vec![6.0, 0.0, 0.0]]);

        let bad = write_tmp("a,b,c\n1,2,red\n");
        assert!(load_query(bad.path(), d.column_names(), None, &[]).is_err());
        let missing = write_tmp("c\nred\n");
        assert!(load_query(missing.path(), d.column_names(), None, &[]).is_err());
    }

    #[test]
    fn standardize_two_points() {
        let d = DataMatrix::from_rows(&[vec![0.0], vec![1.0]], vec![1.0, 3.0]).unwrap();
        let (s, p) = standardize(&d).unwrap();
        assert_eq!(s.y(), &[-1.0, 1.0]);
        assert_eq!((p.y_mean, p.y_scale), (2.0, 1.0));
    }

    #[test]
    fn standardize_is_idempotent_and_invertible() {
        let d = DataMatrix::from_rows(
            &[vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![2.5, -1.0, 7.25, 0.125],
        )
        .unwrap();
        let (s, p) = standardize(&d).unwrap();
        let (s2, _) = standardize(&s).unwrap();
        for (a, b) in s.y().iter().zip(s2.y()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (z, y) in s.y().iter().zip(d.y()) {
            assert!((p.to_original(*z) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_constant_response_fails() {
        let d = DataMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]], vec![5.0; 3]).unwrap();
        assert!(standardize(&d).is_err());
    }

    #[test]
    fn grid_midpoints() {
        let g = build_split_grid(&single(vec![0.1, 0.2, 0.4]));
        assert_eq!(g.len(0), 2);
        assert!((g.candidates(0)[0] - 0.15).abs() < 1e-15);
        assert!((g.candidates(0)[1] - 0.3).abs() < 1e-15);

        let g = build_split_grid(&single(vec![0.1, 0.1, 0.2]));
        assert_eq!(g.len(0), 1);
        assert!((g.candidates(0)[0] - 0.15).abs() < 1e-15);

        let g = build_split_grid(&single(vec![3.0, 3.0, 3.0]));
        assert!(!g.is_splittable(0));
        assert!(g.splittable().is_empty());
    }

    #[test]
    fn left_mass_counts() {
        let d = single(vec![0.4, 0.1, 0.3, 0.2]);
        let m = EmpiricalMarginals::new(&d);
        assert_eq!(left_mass(&m, 0, 0.25).unwrap(), LeftMass { count: 2, n: 4 });
        assert_eq!(left_mass(&m, 0, 0.15).unwrap().value(), 0.25);
        assert!(left_mass(&m, 0, 0.2).is_err());
    }

    #[test]
    fn codes_agree_with_comparisons() {
        let d = single(vec![0.4, 0.1, 0.3, 0.1, 0.2]);
        let t = TrainingSet::new(d.clone());
        for (k, &s) in t.grid().candidates(0).iter().enumerate() {
            for i in 0..d.n() {
                assert_eq!(t.codes(0)[i] as usize > k, d.value(i, 0) > s);
            }
        }
    }

    #[test]
    fn kfold_partition() {
        let folds = kfold_split(10, 5, 7).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.validation.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.validation.len(), 2);
            assert_eq!(f.train.len(), 8);
            assert!(f.validation.iter().all(|v| !f.train.contains(v)));
        }
        assert_eq!(folds, kfold_split(10, 5, 7).unwrap());

        let loo = kfold_split(6, 6, 1).unwrap();
        assert!(loo.iter().all(|f| f.validation.len() == 1));

        let uneven = kfold_split(11, 3, 2).unwrap();
        let sizes: Vec<usize> = uneven.iter().map(|f| f.validation.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

        assert!(kfold_split(10, 1, 0).is_err());
        assert!(kfold_split(3, 4, 0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn grid_invariants(col in proptest::collection::vec(0u8..20, 2..60)) {
                let col: Vec<f64> = col.into_iter().map(|v| f64::from(v) / 4.0).collect();
                let d = single(col.clone());
                let m = EmpiricalMarginals::new(&d);
                let distinct = sorted_distinct(&col).len();
                prop_assert_eq!(m.grid().len(0), distinct - 1);
                let mut prev = 0;
                for k in 0..m.grid().len(0) {
                    let lm = m.left_mass_at(0, k);
                    prop_assert!(lm.count >= 1 && (lm.count as usize) < col.len());
                    prop_assert!(lm.count > prev);
                    prev = lm.count;
                    let s = m.grid().candidates(0)[k];
                    prop_assert_eq!(lm.count as usize, col.iter().filter(|&&v| v <= s).count());
                }
            }
        }
    }
}
