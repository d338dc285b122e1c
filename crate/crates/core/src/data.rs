//! Columnar two-level dataset: loading, grouping, listwise deletion and
//! grand-mean centering.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV near line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("CSV input has no header row")]
    NoHeader,
    #[error("cluster column absent: '{0}'")]
    ClusterColumnAbsent(String),
    #[error("cluster column '{column}' has a missing value in row {row}")]
    ClusterCellMissing { column: String, row: usize },
    #[error("column absent: '{0}'")]
    MissingColumn(String),
    #[error("duplicate column name '{0}'")]
    DuplicateColumn(String),
    #[error("ragged row at line {line}: expected {expected} fields, found {found}")]
    Ragged {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("column '{column}' has {found} cells, expected {expected}")]
    LengthMismatch {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("column '{0}' is not numeric")]
    NotNumeric(String),
    #[error("column '{column}' has {count} missing cells (first at row {first_row})")]
    HasMissing {
        column: String,
        count: usize,
        first_row: usize,
    },
    #[error("empty dataset after deletion")]
    EmptyAfterDeletion,
    #[error("cannot write CSV: {0}")]
    Write(String),
}

/// One column of cells. Cells are `None` when missing.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    /// Raw categorical labels, kept verbatim for codebook recoding.
    Text(Vec<Option<String>>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Numeric(v) => v[row].is_none(),
            Column::Text(v) => v[row].is_none(),
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_missing(i)).count()
    }

    fn take(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
            Column::Text(v) => Column::Text(rows.iter().map(|&i| v[i].clone()).collect()),
        }
    }

    fn render(&self, row: usize) -> String {
        match self {
            Column::Numeric(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
            Column::Text(v) => v[row].clone().unwrap_or_default(),
        }
    }
}

/// Options controlling how CSV cells become dataset cells.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Cell texts (after trimming) treated as missing.
    pub sentinels: Vec<String>,
    /// Columns kept as raw text instead of parsed numbers.
    pub text_columns: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            sentinels: vec![String::new(), "NA".to_string()],
            text_columns: Vec::new(),
        }
    }
}

/// A columnar table with a cluster column defining the level-2 units.
///
/// Every column has `n_rows` cells and the cluster column is stored as text
/// with no missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: IndexMap<String, Column>,
    cluster_column: String,
    n_rows: usize,
}

impl Dataset {
    /// Builds a dataset from named columns. A numeric cluster column is
    /// converted to text ids.
    pub fn new(columns: Vec<(String, Column)>, cluster_column: &str) -> Result<Self, DataError> {
        let n_rows = columns.first().map(|(_, c)| c.len()).unwrap_or(0);
        let mut map = IndexMap::with_capacity(columns.len());
        for (name, col) in columns {
            if col.len() != n_rows {
                return Err(DataError::LengthMismatch {
                    column: name,
                    expected: n_rows,
                    found: col.len(),
                });
            }
            if map.contains_key(&name) {
                return Err(DataError::DuplicateColumn(name));
            }
            map.insert(name, col);
        }

        let cluster = map
            .get_mut(cluster_column)
            .ok_or_else(|| DataError::ClusterColumnAbsent(cluster_column.to_string()))?;
        if let Column::Numeric(v) = cluster {
            *cluster = Column::Text(v.iter().map(|x| x.map(|x| x.to_string())).collect());
        }
        if let Some(row) = (0..n_rows).find(|&i| cluster.is_missing(i)) {
            return Err(DataError::ClusterCellMissing {
                column: cluster_column.to_string(),
                row,
            });
        }

        Ok(Self {
            columns: map,
            cluster_column: cluster_column.to_string(),
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn cluster_column(&self) -> &str {
        &self.cluster_column
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Result<&Column, DataError> {
        self.columns
            .get(name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }

    pub fn numeric(&self, name: &str) -> Result<&[Option<f64>], DataError> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Text(_) => Err(DataError::NotNumeric(name.to_string())),
        }
    }

    /// Values of a numeric column that must have no missing cells.
    pub fn complete(&self, name: &str) -> Result<Vec<f64>, DataError> {
        let cells = self.numeric(name)?;
        let missing: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].is_none()).collect();
        if let Some(&first_row) = missing.first() {
            return Err(DataError::HasMissing {
                column: name.to_string(),
                count: missing.len(),
                first_row,
            });
        }
        Ok(cells.iter().map(|c| c.unwrap_or_default()).collect())
    }

    /// Cluster id of each row.
    pub fn cluster_ids(&self) -> impl Iterator<Item = &str> {
        match &self.columns[&self.cluster_column] {
            Column::Text(v) => v.iter().map(|c| c.as_deref().unwrap_or("")),
            Column::Numeric(_) => unreachable!("cluster column is stored as text"),
        }
    }

    /// Returns a copy with `name` appended, or replaced in place if present.
    pub fn with_column(&self, name: &str, column: Column) -> Result<Self, DataError> {
        if column.len() != self.n_rows {
            return Err(DataError::LengthMismatch {
                column: name.to_string(),
                expected: self.n_rows,
                found: column.len(),
            });
        }
        if name == self.cluster_column {
            let mut cols: Vec<(String, Column)> = self
                .columns
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            for (k, v) in cols.iter_mut() {
                if k == name {
                    *v = column.clone();
                }
            }
            return Dataset::new(cols, &self.cluster_column);
        }
        let mut out = self.clone();
        out.columns.insert(name.to_string(), column);
        Ok(out)
    }

    /// Keeps the given rows, in the given order.
    pub fn take_rows(&self, rows: &[usize]) -> Self {
        Self {
            columns: self
                .columns
                .iter()
                .map(|(k, v)| (k.clone(), v.take(rows)))
                .collect(),
            cluster_column: self.cluster_column.clone(),
            n_rows: rows.len(),
        }
    }

    pub fn group_index(&self) -> GroupIndex {
        build_group_index(self)
    }

    /// Writes the dataset as comma-separated text with a header row.
    /// Missing cells are written empty; numbers use the shortest text that
    /// parses back to the same value.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        let werr = |e: csv::Error| DataError::Write(e.to_string());
        w.write_record(self.columns.keys()).map_err(werr)?;
        for row in 0..self.n_rows {
            w.write_record(self.columns.values().map(|c| c.render(row)))
                .map_err(werr)?;
        }
        w.flush().map_err(|e| DataError::Write(e.to_string()))
    }
}

/// Reads a CSV file. See [`read_csv`].
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &[String],
    cluster_column: &str,
    options: &LoadOptions,
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(std::io::BufReader::new(file), schema, cluster_column, options)
}

/// Parses comma-separated input with a header row.
///
/// Every column named in `schema` must be present. Cells matching a
/// sentinel become missing; in numeric columns unparseable or non-finite
/// cells also become missing. The cluster column and any column listed in
/// `options.text_columns` are kept as text.
pub fn read_csv<R: Read>(
    input: R,
    schema: &[String],
    cluster_column: &str,
    options: &LoadOptions,
) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let csv_err = |e: csv::Error| DataError::Csv {
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    };

    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_err)?,
        None => return Err(DataError::NoHeader),
    };
    let names: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();

    if !names.iter().any(|n| n == cluster_column) {
        return Err(DataError::ClusterColumnAbsent(cluster_column.to_string()));
    }
    if let Some(absent) = schema.iter().find(|s| !names.contains(s)) {
        return Err(DataError::MissingColumn(absent.clone()));
    }

    let as_text: Vec<bool> = names
        .iter()
        .map(|n| n == cluster_column || options.text_columns.contains(n))
        .collect();
    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); names.len()];

    for record in records {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != names.len() {
            return Err(DataError::Ragged {
                line,
                expected: names.len(),
                found: record.len(),
            });
        }
        for (col, field) in cells.iter_mut().zip(record.iter()) {
            let trimmed = field.trim();
            if options.sentinels.iter().any(|s| s == trimmed) {
                col.push(None);
            } else {
                col.push(Some(trimmed.to_string()));
            }
        }
    }

    let columns = names
        .into_iter()
        .zip(cells)
        .zip(as_text)
        .map(|((name, raw), text)| {
            let col = if text {
                Column::Text(raw)
            } else {
                Column::Numeric(
                    raw.iter()
                        .map(|c| {
                            c.as_deref()
                                .and_then(|s| s.parse::<f64>().ok())
                                .filter(|v| v.is_finite())
                        })
                        .collect(),
                )
            };
            (name, col)
        })
        .collect();

    Dataset::new(columns, cluster_column)
}

/// One level-2 unit and the dataset rows belonging to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Group {
    pub id: String,
    pub rows: Vec<usize>,
}

/// Partition of dataset rows into level-2 units, in first-appearance order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupIndex {
    groups: Vec<Group>,
    n_rows: usize,
}

impl GroupIndex {
    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    /// Number of groups, J.
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.rows.len()).collect()
    }

    /// Arithmetic mean group size, N / J.
    pub fn mean_size(&self) -> f64 {
        if self.groups.is_empty() {
            return 0.0;
        }
        self.n_rows as f64 / self.groups.len() as f64
    }
}

pub fn build_group_index(ds: &Dataset) -> GroupIndex {
    let mut lookup: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for (row, id) in ds.cluster_ids().enumerate() {
        let slot = *lookup.entry(id).or_insert_with(|| {
            groups.push(Group {
                id: id.to_string(),
                rows: Vec::new(),
            });
            groups.len() - 1
        });
        groups[slot].rows.push(row);
    }
    GroupIndex {
        groups,
        n_rows: ds.n_rows(),
    }
}

/// Row and group counts before and after listwise deletion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeletionReport {
    pub variables: Vec<String>,
    pub rows_before: usize,
    pub rows_after: usize,
    pub groups_before: usize,
    pub groups_after: usize,
}

impl DeletionReport {
    pub fn rows_deleted(&self) -> usize {
        self.rows_before - self.rows_after
    }

    pub fn groups_deleted(&self) -> usize {
        self.groups_before - self.groups_after
    }
}

/// Drops every row with a missing cell among `model_vars`. Surviving rows
/// keep their relative order.
pub fn listwise_delete(
    ds: &Dataset,
    model_vars: &[String],
) -> Result<(Dataset, DeletionReport), DataError> {
    let cols: Vec<&Column> = model_vars
        .iter()
        .map(|v| ds.column(v))
        .collect::<Result<_, _>>()?;
    let keep: Vec<usize> = (0..ds.n_rows())
        .filter(|&row| cols.iter().all(|c| !c.is_missing(row)))
        .collect();
    if keep.is_empty() {
        return Err(DataError::EmptyAfterDeletion);
    }

    let out = if keep.len() == ds.n_rows() {
        ds.clone()
    } else {
        ds.take_rows(&keep)
    };
    let report = DeletionReport {
        variables: model_vars.to_vec(),
        rows_before: ds.n_rows(),
        rows_after: out.n_rows(),
        groups_before: ds.group_index().n_groups(),
        groups_after: out.group_index().n_groups(),
    };
    Ok((out, report))
}

/// A predictor with its overall mean subtracted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenteredVariable {
    pub name: String,
    pub values: Vec<f64>,
    pub grand_mean: f64,
}

impl CenteredVariable {
    pub fn uncentered(&self) -> Vec<f64> {
        self.values.iter().map(|v| v + self.grand_mean).collect()
    }
}

/// Mean with one correction pass, accurate to a few ulps of the data scale.
pub(crate) fn accurate_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let n = values.len() as f64;
    let first = values.iter().sum::<f64>() / n;
    first + values.iter().map(|v| v - first).sum::<f64>() / n
}

/// Subtracts the mean over all rows (not group means) from `var`.
pub fn grand_mean_center(ds: &Dataset, var: &str) -> Result<CenteredVariable, DataError> {
    let x = ds.complete(var)?;
    let grand_mean = accurate_mean(&x);
    Ok(CenteredVariable {
        name: var.to_string(),
        values: x.iter().map(|v| v - grand_mean).collect(),
        grand_mean,
    })
}
