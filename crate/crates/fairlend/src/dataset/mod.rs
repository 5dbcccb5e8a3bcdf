//! Tabular data with causal role tags.
//!
//! A [`Dataset`] is an immutable column-major table described by a [`Schema`]
//! that assigns every column a value type and a causal role. Roles drive the
//! rest of the pipeline: `Protected` columns are the attributes we intervene
//! on, `Traditional` columns measure creditworthiness directly, `Alternative`
//! columns are candidate proxies that must pass screening, and `Excluded`
//! columns are never visible to screening, training, or inference.

mod nsmo;

pub use nsmo::prepare_nsmo;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the catch-all categorical level. Unseen levels map here at load
/// and inference time, and the positivity remediation masks values into it.
pub const OTHER_LEVEL: &str = "other";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("column {0:?} required by the schema is missing from the input")]
    MissingColumn(String),
    #[error("column {0:?} appears more than once")]
    DuplicateColumn(String),
    #[error("target column must be binary 0/1 with no missing values")]
    NonBinaryTarget,
    #[error("schema must declare exactly one target column, found {0}")]
    BadTargetCount(usize),
    #[error("target column must have numeric type")]
    NonNumericTarget,
    #[error("categorical levels for column {0:?} are not unique")]
    DuplicateLevel(String),
    #[error("column {column:?} row {row}: categorical index {index} out of range")]
    LevelIndexOutOfRange {
        column: String,
        row: usize,
        index: u32,
    },
    #[error("column {0:?} has {1} values but dataset has {2} rows")]
    LengthMismatch(String, usize, usize),
    #[error("fold count {k} invalid for {n} rows")]
    BadFoldCount { k: usize, n: usize },
    #[error("test fraction must lie in (0, 1), got {0}")]
    BadTestFraction(f64),
    #[error("split requires at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("row index {0} out of range for {1} rows")]
    RowOutOfRange(usize, usize),
    #[error("input file does not look like the expected layout: {0}")]
    UnrecognizedLayout(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl DatasetError {
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetError::MissingColumn(_) => "MissingColumn",
            DatasetError::DuplicateColumn(_) => "DuplicateColumn",
            DatasetError::NonBinaryTarget => "NonBinaryTarget",
            DatasetError::BadTargetCount(_) => "BadTargetCount",
            DatasetError::NonNumericTarget => "NonNumericTarget",
            DatasetError::DuplicateLevel(_) => "DuplicateLevel",
            DatasetError::LevelIndexOutOfRange { .. } => "LevelIndexOutOfRange",
            DatasetError::LengthMismatch(..) => "LengthMismatch",
            DatasetError::BadFoldCount { .. } => "BadFoldCount",
            DatasetError::BadTestFraction(_) => "BadTestFraction",
            DatasetError::TooFewRows(_) => "TooFewRows",
            DatasetError::RowOutOfRange(..) => "RowOutOfRange",
            DatasetError::UnrecognizedLayout(_) => "UnrecognizedLayout",
            DatasetError::Csv(_) => "CsvError",
            DatasetError::Io(_) => "IoError",
        }
    }
}

/// Causal role of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    /// Protected attribute (e.g. race). Intervened on at inference time.
    Protected,
    /// Measures creditworthiness directly; exempt from proxy screening.
    Traditional,
    /// Candidate proxy data; subject to screening and overlap testing.
    Alternative,
    /// Binary outcome being predicted (1 = default).
    Target,
    /// Never visible to screening, training, or inference.
    Excluded,
}

/// Value type of a column.
///
/// Categorical levels are an ordered list; cell values are indices into it.
/// Every categorical column carries a designated [`OTHER_LEVEL`] that absorbs
/// unseen levels ([`Schema::new`] appends it when absent).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Numeric,
    Categorical(Vec<String>),
}

impl ColumnType {
    pub fn is_numeric(&self) -> bool {
        matches!(self, ColumnType::Numeric)
    }

    pub fn levels(&self) -> Option<&[String]> {
        match self {
            ColumnType::Numeric => None,
            ColumnType::Categorical(levels) => Some(levels),
        }
    }
}

/// One column declaration: name, value type, causal role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    pub role: ColumnRole,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, ty: ColumnType, role: ColumnRole) -> Self {
        ColumnSpec {
            name: name.into(),
            ty,
            role,
        }
    }
}

/// Ordered column declarations. The order is canonical: feature lists and
/// model serialization follow it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct Schema {
    columns: Vec<ColumnSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaRepr {
    columns: Vec<ColumnSpec>,
}

impl TryFrom<SchemaRepr> for Schema {
    type Error = DatasetError;
    fn try_from(repr: SchemaRepr) -> Result<Self, DatasetError> {
        Schema::new(repr.columns)
    }
}

impl From<Schema> for SchemaRepr {
    fn from(schema: Schema) -> Self {
        SchemaRepr {
            columns: schema.columns,
        }
    }
}

impl Schema {
    /// Validates and normalizes the declarations: column names must be
    /// unique, exactly one column has role `Target` (and is numeric),
    /// categorical levels must be unique, and [`OTHER_LEVEL`] is appended
    /// to any categorical column that lacks it.
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self, DatasetError> {
        let mut seen = BTreeMap::new();
        for col in &columns {
            if seen.insert(col.name.clone(), ()).is_some() {
                return Err(DatasetError::DuplicateColumn(col.name.clone()));
            }
        }
        let targets = columns
            .iter()
            .filter(|c| c.role == ColumnRole::Target)
            .count();
        if targets != 1 {
            return Err(DatasetError::BadTargetCount(targets));
        }
        let mut columns = columns;
        for col in &mut columns {
            if col.role == ColumnRole::Target && !col.ty.is_numeric() {
                return Err(DatasetError::NonNumericTarget);
            }
            if let ColumnType::Categorical(levels) = &mut col.ty {
                let mut uniq = BTreeMap::new();
                for level in levels.iter() {
                    if uniq.insert(level.clone(), ()).is_some() {
                        return Err(DatasetError::DuplicateLevel(col.name.clone()));
                    }
                }
                if !levels.iter().any(|l| l == OTHER_LEVEL) {
                    levels.push(OTHER_LEVEL.to_string());
                }
            }
        }
        Ok(Schema { columns })
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serialization cannot fail")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), std::io::Error> {
        std::fs::write(path, self.to_json())
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, idx: usize) -> &ColumnSpec {
        &self.columns[idx]
    }

    pub fn target_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.role == ColumnRole::Target)
            .expect("schema invariant: exactly one target")
    }

    /// Columns with the given role, in schema order.
    pub fn columns_with_role(&self, role: ColumnRole) -> Vec<&ColumnSpec> {
        self.columns.iter().filter(|c| c.role == role).collect()
    }

    /// Index of the designated "other" level of a categorical column.
    pub fn other_index(&self, col: usize) -> Option<u32> {
        self.columns[col]
            .ty
            .levels()
            .and_then(|levels| levels.iter().position(|l| l == OTHER_LEVEL))
            .map(|i| i as u32)
    }
}

/// Cell payload used when constructing datasets programmatically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Missing,
    Num(f64),
    Cat(u32),
}

#[derive(Debug, Clone, PartialEq)]
enum ColumnValues {
    Numeric(Vec<f64>),
    Categorical(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
struct Column {
    values: ColumnValues,
    missing: Vec<bool>,
}

/// Immutable column-major table. All construction paths validate the schema
/// invariants; nothing outside this module can mutate one after that.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    n_rows: usize,
    columns: Vec<Column>,
}

impl Dataset {
    fn validate(schema: &Schema, n_rows: usize, columns: &[Column]) -> Result<(), DatasetError> {
        assert_eq!(schema.len(), columns.len(), "schema/column count mismatch");
        for (spec, col) in schema.columns().iter().zip(columns) {
            let len = match &col.values {
                ColumnValues::Numeric(v) => v.len(),
                ColumnValues::Categorical(v) => v.len(),
            };
            if len != n_rows || col.missing.len() != n_rows {
                return Err(DatasetError::LengthMismatch(spec.name.clone(), len, n_rows));
            }
            if let (ColumnValues::Categorical(vals), ColumnType::Categorical(levels)) =
                (&col.values, &spec.ty)
            {
                for (row, (&v, &miss)) in vals.iter().zip(&col.missing).enumerate() {
                    if !miss && v as usize >= levels.len() {
                        return Err(DatasetError::LevelIndexOutOfRange {
                            column: spec.name.clone(),
                            row,
                            index: v,
                        });
                    }
                }
            }
            if spec.role == ColumnRole::Target {
                let ColumnValues::Numeric(vals) = &col.values else {
                    return Err(DatasetError::NonNumericTarget);
                };
                for (&v, &miss) in vals.iter().zip(&col.missing) {
                    if miss || (v != 0.0 && v != 1.0) {
                        return Err(DatasetError::NonBinaryTarget);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn is_missing(&self, col: usize, row: usize) -> bool {
        self.columns[col].missing[row]
    }

    pub fn missing_mask(&self, col: usize) -> &[bool] {
        &self.columns[col].missing
    }

    /// Numeric values of a column (meaningless where the mask is set).
    pub fn numeric(&self, col: usize) -> Option<&[f64]> {
        match &self.columns[col].values {
            ColumnValues::Numeric(v) => Some(v),
            ColumnValues::Categorical(_) => None,
        }
    }

    /// Categorical level indices of a column.
    pub fn categorical(&self, col: usize) -> Option<&[u32]> {
        match &self.columns[col].values {
            ColumnValues::Numeric(_) => None,
            ColumnValues::Categorical(v) => Some(v),
        }
    }

    pub fn value(&self, col: usize, row: usize) -> Value {
        if self.columns[col].missing[row] {
            return Value::Missing;
        }
        match &self.columns[col].values {
            ColumnValues::Numeric(v) => Value::Num(v[row]),
            ColumnValues::Categorical(v) => Value::Cat(v[row]),
        }
    }

    /// Target labels as 0/1.
    pub fn labels(&self) -> Vec<u8> {
        let idx = self.schema.target_index();
        self.numeric(idx)
            .expect("target is numeric by schema invariant")
            .iter()
            .map(|&v| v as u8)
            .collect()
    }

    /// New dataset containing the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Dataset, DatasetError> {
        for &i in indices {
            if i >= self.n_rows {
                return Err(DatasetError::RowOutOfRange(i, self.n_rows));
            }
        }
        let columns = self
            .columns
            .iter()
            .map(|col| Column {
                values: match &col.values {
                    ColumnValues::Numeric(v) => {
                        ColumnValues::Numeric(indices.iter().map(|&i| v[i]).collect())
                    }
                    ColumnValues::Categorical(v) => {
                        ColumnValues::Categorical(indices.iter().map(|&i| v[i]).collect())
                    }
                },
                missing: indices.iter().map(|&i| col.missing[i]).collect(),
            })
            .collect();
        Ok(Dataset {
            schema: self.schema.clone(),
            n_rows: indices.len(),
            columns,
        })
    }

    /// New dataset with the listed level indices of a categorical column
    /// rewritten to `replacement`. Missing flags are untouched.
    pub fn mask_levels(
        &self,
        col: usize,
        levels: &[u32],
        replacement: u32,
    ) -> Result<Dataset, DatasetError> {
        let spec = self.schema.column(col);
        let n_levels = spec
            .ty
            .levels()
            .ok_or_else(|| {
                DatasetError::UnrecognizedLayout(format!(
                    "column {:?} is not categorical",
                    spec.name
                ))
            })?
            .len() as u32;
        for &l in levels.iter().chain(std::iter::once(&replacement)) {
            if l >= n_levels {
                return Err(DatasetError::LevelIndexOutOfRange {
                    column: spec.name.clone(),
                    row: 0,
                    index: l,
                });
            }
        }
        let mut out = self.clone();
        if let ColumnValues::Categorical(values) = &mut out.columns[col].values {
            for v in values.iter_mut() {
                if levels.contains(v) {
                    *v = replacement;
                }
            }
        }
        Ok(out)
    }

    /// New dataset with every row of a categorical column set to the given
    /// level, missing flags cleared.
    pub fn override_categorical(&self, col: usize, level: u32) -> Result<Dataset, DatasetError> {
        let spec = self.schema.column(col);
        let n_levels = spec
            .ty
            .levels()
            .ok_or_else(|| {
                DatasetError::UnrecognizedLayout(format!(
                    "column {:?} is not categorical",
                    spec.name
                ))
            })?
            .len() as u32;
        if level >= n_levels {
            return Err(DatasetError::LevelIndexOutOfRange {
                column: spec.name.clone(),
                row: 0,
                index: level,
            });
        }
        let mut out = self.clone();
        out.columns[col].values = ColumnValues::Categorical(vec![level; self.n_rows]);
        out.columns[col].missing = vec![false; self.n_rows];
        Ok(out)
    }

    /// Renders a cell the way [`write_csv`] does: empty for missing, the
    /// shortest round-trip decimal for numerics, the level string otherwise.
    pub fn cell_to_string(&self, col: usize, row: usize) -> String {
        match self.value(col, row) {
            Value::Missing => String::new(),
            Value::Num(v) => format!("{v}"),
            Value::Cat(i) => self.schema.column(col).ty.levels().unwrap()[i as usize].clone(),
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Dataset({} rows x {} columns)",
            self.n_rows,
            self.schema.len()
        )
    }
}

/// Assembles a [`Dataset`] column by column; the only construction path
/// besides [`load_csv`].
pub struct DatasetBuilder {
    schema: Schema,
    columns: Vec<Option<Column>>,
}

impl DatasetBuilder {
    pub fn new(schema: Schema) -> Self {
        let n = schema.len();
        DatasetBuilder {
            schema,
            columns: vec![None; n],
        }
    }

    pub fn numeric_column(mut self, name: &str, values: Vec<f64>, missing: Vec<bool>) -> Self {
        let idx = self
            .schema
            .column_index(name)
            .unwrap_or_else(|| panic!("unknown column {name}"));
        self.columns[idx] = Some(Column {
            values: ColumnValues::Numeric(values),
            missing,
        });
        self
    }

    pub fn categorical_column(mut self, name: &str, values: Vec<u32>, missing: Vec<bool>) -> Self {
        let idx = self
            .schema
            .column_index(name)
            .unwrap_or_else(|| panic!("unknown column {name}"));
        self.columns[idx] = Some(Column {
            values: ColumnValues::Categorical(values),
            missing,
        });
        self
    }

    pub fn build(self) -> Result<Dataset, DatasetError> {
        let mut n_rows = None;
        for (spec, col) in self.schema.columns().iter().zip(&self.columns) {
            let col = col
                .as_ref()
                .ok_or_else(|| DatasetError::MissingColumn(spec.name.clone()))?;
            let len = match &col.values {
                ColumnValues::Numeric(v) => v.len(),
                ColumnValues::Categorical(v) => v.len(),
            };
            n_rows.get_or_insert(len);
        }
        let n_rows = n_rows.unwrap_or(0);
        let columns: Vec<Column> = self.columns.into_iter().map(|c| c.unwrap()).collect();
        Dataset::validate(&self.schema, n_rows, &columns)?;
        Ok(Dataset {
            schema: self.schema,
            n_rows,
            columns,
        })
    }
}

/// Loads an RFC-4180 CSV against a schema. Header matching is
/// order-insensitive; columns in the file but not in the schema are ignored.
/// Unparseable or non-finite numeric cells become missing; categorical cells
/// outside the declared level list map to [`OTHER_LEVEL`].
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();

    let mut header_pos: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        if schema.column_index(h).is_some() && header_pos.insert(h, i).is_some() {
            return Err(DatasetError::DuplicateColumn(h.to_string()));
        }
    }
    let mut field_of_col = Vec::with_capacity(schema.len());
    for spec in schema.columns() {
        let pos = header_pos
            .get(spec.name.as_str())
            .copied()
            .ok_or_else(|| DatasetError::MissingColumn(spec.name.clone()))?;
        field_of_col.push(pos);
    }

    let mut columns: Vec<Column> = schema
        .columns()
        .iter()
        .map(|spec| Column {
            values: match &spec.ty {
                ColumnType::Numeric => ColumnValues::Numeric(Vec::new()),
                ColumnType::Categorical(_) => ColumnValues::Categorical(Vec::new()),
            },
            missing: Vec::new(),
        })
        .collect();

    let mut n_rows = 0;
    for record in reader.records() {
        let record = record?;
        for (col_idx, spec) in schema.columns().iter().enumerate() {
            let raw = record.get(field_of_col[col_idx]).unwrap_or("").trim();
            let col = &mut columns[col_idx];
            match (&mut col.values, &spec.ty) {
                (ColumnValues::Numeric(vals), ColumnType::Numeric) => match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => {
                        vals.push(v);
                        col.missing.push(false);
                    }
                    _ => {
                        vals.push(0.0);
                        col.missing.push(true);
                    }
                },
                (ColumnValues::Categorical(vals), ColumnType::Categorical(levels)) => {
                    if raw.is_empty() {
                        vals.push(0);
                        col.missing.push(true);
                    } else {
                        let idx = levels
                            .iter()
                            .position(|l| l == raw)
                            .or_else(|| levels.iter().position(|l| l == OTHER_LEVEL))
                            .expect("schema invariant: other level present")
                            as u32;
                        vals.push(idx);
                        col.missing.push(false);
                    }
                }
                _ => unreachable!("column kind fixed by schema"),
            }
        }
        n_rows += 1;
    }

    Dataset::validate(schema, n_rows, &columns)?;
    Ok(Dataset {
        schema: schema.clone(),
        n_rows,
        columns,
    })
}

/// Writes a dataset as CSV. Reloading with the same schema reproduces every
/// cell and the missing mask exactly.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let names: Vec<&str> = data
        .schema
        .columns()
        .iter()
        .map(|c| c.name.as_str())
        .collect();
    writer.write_record(&names)?;
    for row in 0..data.n_rows {
        let record: Vec<String> = (0..data.schema.len())
            .map(|col| data.cell_to_string(col, row))
            .collect();
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes arbitrary named numeric columns (used for SCM hidden side tables,
/// which deliberately do not pass through [`Dataset`]).
pub fn write_side_csv(
    path: impl AsRef<Path>,
    columns: &[(&str, Vec<String>)],
) -> Result<(), DatasetError> {
    let mut file = std::fs::File::create(path.as_ref())?;
    let header: Vec<&str> = columns.iter().map(|(n, _)| *n).collect();
    writeln!(file, "{}", header.join(","))?;
    let n = columns.first().map(|(_, v)| v.len()).unwrap_or(0);
    for row in 0..n {
        let record: Vec<&str> = columns.iter().map(|(_, v)| v[row].as_str()).collect();
        writeln!(file, "{}", record.join(","))?;
    }
    Ok(())
}

/// Deterministic shuffled split. `|test| = round(n * test_fraction)`; row
/// order within each part follows the original dataset.
pub fn split(
    data: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DatasetError> {
    let n = data.n_rows();
    if n < 2 {
        return Err(DatasetError::TooFewRows(n));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::BadTestFraction(test_fraction));
    }
    let (train_idx, test_idx) = split_indices(n, test_fraction, seed);
    Ok((data.select_rows(&train_idx)?, data.select_rows(&test_idx)?))
}

/// Index-level form of [`split`].
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut train: Vec<usize> = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// One fold: `(train, validation)` row indices, each in ascending order.
pub type Fold = (Vec<usize>, Vec<usize>);

/// Deterministic k-fold partition. Folds are disjoint, cover all rows, and
/// differ in size by at most one.
pub fn kfold(data: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>, DatasetError> {
    let n = data.n_rows();
    if k < 2 || k > n {
        return Err(DatasetError::BadFoldCount { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        let mut validation: Vec<usize> = order[start..start + size].to_vec();
        let mut train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .copied()
            .collect();
        validation.sort_unstable();
        train.sort_unstable();
        folds.push((train, validation));
        start += size;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_schema() -> Schema {
        Schema::new(vec![
            ColumnSpec::new(
                "race",
                ColumnType::Categorical(vec!["white".into(), "black".into()]),
                ColumnRole::Protected,
            ),
            ColumnSpec::new("income", ColumnType::Numeric, ColumnRole::Traditional),
            ColumnSpec::new("default", ColumnType::Numeric, ColumnRole::Target),
        ])
        .unwrap()
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn schema_appends_other_level() {
        let schema = toy_schema();
        let levels = schema.column(0).ty.levels().unwrap();
        assert_eq!(levels, &["white", "black", OTHER_LEVEL]);
        assert_eq!(schema.other_index(0), Some(2));
    }

    #[test]
    fn schema_requires_single_target() {
        let err = Schema::new(vec![ColumnSpec::new(
            "income",
            ColumnType::Numeric,
            ColumnRole::Traditional,
        )])
        .unwrap_err();
        assert!(matches!(err, DatasetError::BadTargetCount(0)));
    }

    #[test]
    fn schema_json_round_trip_matches_wire_format() {
        let schema = toy_schema();
        let json = schema.to_json();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["columns"][1]["type"], "numeric");
        assert_eq!(value["columns"][0]["type"]["categorical"][0], "white");
        assert_eq!(value["columns"][0]["role"], "protected");
        assert_eq!(Schema::from_json(&json).unwrap(), schema);
    }

    #[test]
    fn load_csv_small() {
        let f = write_temp("race,income,default\nwhite,100,0\nblack,50,1\nwhite,75,0\n");
        let data = load_csv(f.path(), &toy_schema()).unwrap();
        assert_eq!(data.n_rows(), 3);
        assert_eq!(data.categorical(0).unwrap(), &[0, 1, 0]);
        assert_eq!(data.numeric(1).unwrap(), &[100.0, 50.0, 75.0]);
        assert_eq!(data.labels(), vec![0, 1, 0]);
    }

    #[test]
    fn load_csv_missing_target_column() {
        let f = write_temp("race,income\nwhite,100\n");
        let err = load_csv(f.path(), &toy_schema()).unwrap_err();
        match err {
            DatasetError::MissingColumn(name) => assert_eq!(name, "default"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn load_csv_unparseable_numeric_is_masked() {
        let f = write_temp("race,income,default\nwhite,100,0\nblack,N/A,1\n");
        let data = load_csv(f.path(), &toy_schema()).unwrap();
        assert!(!data.is_missing(1, 0));
        assert!(data.is_missing(1, 1));
    }

    #[test]
    fn load_csv_unknown_level_maps_to_other() {
        let f = write_temp("race,income,default\nasian,100,0\n");
        let data = load_csv(f.path(), &toy_schema()).unwrap();
        assert_eq!(data.categorical(0).unwrap()[0], 2);
    }

    #[test]
    fn load_csv_nonbinary_target_rejected() {
        let f = write_temp("race,income,default\nwhite,100,2\n");
        assert!(matches!(
            load_csv(f.path(), &toy_schema()),
            Err(DatasetError::NonBinaryTarget)
        ));
    }

    #[test]
    fn load_csv_ignores_extra_columns_and_header_order() {
        let f = write_temp("junk,default,income,race\nx,1,10,black\n");
        let data = load_csv(f.path(), &toy_schema()).unwrap();
        assert_eq!(data.labels(), vec![1]);
        assert_eq!(data.numeric(1).unwrap(), &[10.0]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let data = ten_row_data();
        let (train, test) = split(&data, 0.2, 7).unwrap();
        assert_eq!(train.n_rows(), 8);
        assert_eq!(test.n_rows(), 2);
        let (train2, test2) = split(&data, 0.2, 7).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn split_different_seeds_differ() {
        // n=5, fraction 0.2: both test sets have one row. Enumerating the
        // pinned generator for seeds 0..12 gives rows
        // [1,0,0,2,4,1,1,1,3,2,2,4]; seeds 1 and 3 differ.
        let (_, t1) = split_indices(5, 0.2, 1);
        let (_, t3) = split_indices(5, 0.2, 3);
        assert_eq!(t1, vec![0]);
        assert_eq!(t3, vec![2]);
    }

    #[test]
    fn kfold_sizes() {
        let data = ten_row_data();
        let folds = kfold(&data, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        for (train, val) in &folds {
            assert_eq!(val.len(), 2);
            assert_eq!(train.len(), 8);
        }
        let mut all: Vec<usize> = folds.iter().flat_map(|(_, v)| v.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn kfold_uneven_sizes() {
        let data = n_row_data(11);
        let folds = kfold(&data, 5, 0).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|(_, v)| v.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2, 2, 2]);
    }

    #[test]
    fn kfold_bad_count() {
        let data = ten_row_data();
        assert!(matches!(
            kfold(&data, 1, 0),
            Err(DatasetError::BadFoldCount { .. })
        ));
        assert!(matches!(
            kfold(&data, 11, 0),
            Err(DatasetError::BadFoldCount { .. })
        ));
    }

    fn n_row_data(n: usize) -> Dataset {
        let schema = Schema::new(vec![
            ColumnSpec::new("x", ColumnType::Numeric, ColumnRole::Traditional),
            ColumnSpec::new("default", ColumnType::Numeric, ColumnRole::Target),
        ])
        .unwrap();
        DatasetBuilder::new(schema)
            .numeric_column("x", (0..n).map(|i| i as f64).collect(), vec![false; n])
            .numeric_column(
                "default",
                (0..n).map(|i| (i % 2) as f64).collect(),
                vec![false; n],
            )
            .build()
            .unwrap()
    }

    fn ten_row_data() -> Dataset {
        n_row_data(10)
    }

    proptest! {
        #[test]
        fn split_partitions_rows(n in 2usize..200, frac in 0.01f64..0.99, seed: u64) {
            let (train, test) = split_indices(n, frac, seed);
            prop_assert_eq!(test.len(), ((n as f64) * frac).round() as usize);
            let mut all = train.clone();
            all.extend(&test);
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let again = split_indices(n, frac, seed);
            prop_assert_eq!(&again.0, &train);
            prop_assert_eq!(&again.1, &test);
        }

        #[test]
        fn kfold_partitions_rows(n in 2usize..100, k in 2usize..10, seed: u64) {
            prop_assume!(k <= n);
            let data = n_row_data(n);
            let folds = kfold(&data, k, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flat_map(|(_, v)| v.clone()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(|(_, v)| v.len()).collect();
            let min = sizes.iter().min().unwrap();
            let max = sizes.iter().max().unwrap();
            prop_assert!(max - min <= 1);
        }

        #[test]
        fn csv_round_trip(
            rows in proptest::collection::vec((0u32..3, proptest::option::of(-1e6f64..1e6), 0u8..2), 1..40)
        ) {
            let schema = Schema::new(vec![
                ColumnSpec::new(
                    "grade",
                    ColumnType::Categorical(vec!["a".into(), "b".into(), "c".into()]),
                    ColumnRole::Alternative,
                ),
                ColumnSpec::new("amount", ColumnType::Numeric, ColumnRole::Traditional),
                ColumnSpec::new("default", ColumnType::Numeric, ColumnRole::Target),
            ]).unwrap();
            let n = rows.len();
            let data = DatasetBuilder::new(schema.clone())
                .categorical_column("grade", rows.iter().map(|r| r.0).collect(), vec![false; n])
                .numeric_column(
                    "amount",
                    rows.iter().map(|r| r.1.unwrap_or(0.0)).collect(),
                    rows.iter().map(|r| r.1.is_none()).collect(),
                )
                .numeric_column("default", rows.iter().map(|r| r.2 as f64).collect(), vec![false; n])
                .build()
                .unwrap();
            let file = tempfile::NamedTempFile::new().unwrap();
            write_csv(&data, file.path()).unwrap();
            let reloaded = load_csv(file.path(), &schema).unwrap();
            prop_assert_eq!(reloaded, data);
        }
    }
}
