//! Mortgage survey public-use-file preparation.
//!
//! Turns the raw survey CSV into a [`Dataset`] with causal roles assigned by
//! column naming conventions:
//!
//! - `default` (derived): 1 if any `Perf_Status*` question has code 2..=9.
//! - `race` (derived): Hispanic if `X77R` == 1, otherwise `X78R` 1/2/3 maps
//!   to Non-Hispanic White / Black / Asian, anything else to "other".
//! - Columns whose name has an `age` or `sex` token: role Traditional.
//! - Other `X*`/`Z*` survey variables: role Alternative.
//! - Everything else (the `Perf_Status*` and raw race sources included):
//!   role Excluded, so supplemental variables cannot leak the outcome.
//!
//! The role assignment is a default. To override it, edit the schema JSON
//! that the `nsmo-prepare` command writes next to the prepared CSV and
//! reload with [`load_csv`].
//!
//! Value types are inferred: a column with at most 20 distinct non-missing
//! values is Categorical (levels ordered numerically where possible),
//! otherwise Numeric. Empty cells and "." are missing.

use std::collections::BTreeSet;
use std::path::Path;

use super::{
    Column, ColumnRole, ColumnSpec, ColumnType, ColumnValues, Dataset, DatasetError, Schema,
    OTHER_LEVEL,
};

const MAX_CATEGORICAL_LEVELS: usize = 20;

pub const RACE_COLUMN: &str = "race";
pub const TARGET_COLUMN: &str = "default";
pub const RACE_LEVELS: [&str; 5] = [
    "Non-Hispanic White",
    "Hispanic",
    "Black",
    "Asian",
    OTHER_LEVEL,
];

/// Prepares the public use file at `path`. See the module docs for the
/// derivation and role rules.
pub fn prepare_nsmo(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();

    let lower: Vec<String> = headers.iter().map(|h| h.to_lowercase()).collect();
    let perf_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| lower[i].starts_with("perf_status"))
        .collect();
    if perf_cols.is_empty() {
        return Err(DatasetError::UnrecognizedLayout(
            "no Perf_Status columns found".to_string(),
        ));
    }
    let hispanic_col = lower.iter().position(|h| h == "x77r").ok_or_else(|| {
        DatasetError::UnrecognizedLayout("ethnicity column X77R not found".to_string())
    })?;
    let race_col = lower.iter().position(|h| h == "x78r").ok_or_else(|| {
        DatasetError::UnrecognizedLayout("race column X78R not found".to_string())
    })?;
    for derived in [RACE_COLUMN, TARGET_COLUMN] {
        if lower.iter().any(|h| h == derived) {
            return Err(DatasetError::UnrecognizedLayout(format!(
                "input already has a column named {derived:?}"
            )));
        }
    }

    // Pass 1: distinct non-missing values per column, capped one past the
    // categorical limit so memory stays flat on wide inputs.
    let n_cols = headers.len();
    let mut distinct: Vec<BTreeSet<String>> = vec![BTreeSet::new(); n_cols];
    let mut all_numeric = vec![true; n_cols];
    let mut n_rows = 0usize;
    for record in reader.records() {
        let record = record?;
        for i in 0..n_cols {
            let raw = record.get(i).unwrap_or("").trim();
            if is_missing(raw) {
                continue;
            }
            if raw.parse::<f64>().map(|v| v.is_finite()).unwrap_or(false) {
                // keep flag
            } else {
                all_numeric[i] = false;
            }
            if distinct[i].len() <= MAX_CATEGORICAL_LEVELS {
                distinct[i].insert(raw.to_string());
            }
        }
        n_rows += 1;
    }

    let mut specs = vec![
        ColumnSpec::new(
            RACE_COLUMN,
            ColumnType::Categorical(RACE_LEVELS.iter().map(|s| s.to_string()).collect()),
            ColumnRole::Protected,
        ),
        ColumnSpec::new(TARGET_COLUMN, ColumnType::Numeric, ColumnRole::Target),
    ];
    for i in 0..n_cols {
        let role = if perf_cols.contains(&i) || i == hispanic_col || i == race_col {
            ColumnRole::Excluded
        } else if has_token(&lower[i], "age") || has_token(&lower[i], "sex") {
            ColumnRole::Traditional
        } else if is_survey_variable(&lower[i]) {
            ColumnRole::Alternative
        } else {
            ColumnRole::Excluded
        };
        let ty = if distinct[i].len() <= MAX_CATEGORICAL_LEVELS || !all_numeric[i] {
            let mut levels: Vec<String> = distinct[i].iter().cloned().collect();
            levels.sort_by(|a, b| match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Equal),
                _ => a.cmp(b),
            });
            levels.truncate(MAX_CATEGORICAL_LEVELS);
            ColumnType::Categorical(levels)
        } else {
            ColumnType::Numeric
        };
        specs.push(ColumnSpec::new(headers[i].clone(), ty, role));
    }
    let schema = Schema::new(specs)?;

    // Pass 2: build the columns.
    let mut columns: Vec<Column> = schema
        .columns()
        .iter()
        .map(|spec| Column {
            values: match &spec.ty {
                ColumnType::Numeric => ColumnValues::Numeric(Vec::with_capacity(n_rows)),
                ColumnType::Categorical(_) => ColumnValues::Categorical(Vec::with_capacity(n_rows)),
            },
            missing: Vec::with_capacity(n_rows),
        })
        .collect();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    for record in reader.records() {
        let record = record?;

        let defaulted = perf_cols.iter().any(|&i| {
            parse_code(record.get(i).unwrap_or("")).is_some_and(|c| (2..=9).contains(&c))
        });
        let race = derive_race(
            parse_code(record.get(hispanic_col).unwrap_or("")),
            parse_code(record.get(race_col).unwrap_or("")),
        );
        push_cat(&mut columns[0], race);
        push_num(&mut columns[1], u8::from(defaulted) as f64);

        for i in 0..n_cols {
            let raw = record.get(i).unwrap_or("").trim();
            let col_idx = i + 2;
            let spec = schema.column(col_idx);
            let col = &mut columns[col_idx];
            if is_missing(raw) {
                push_missing(col);
                continue;
            }
            match &spec.ty {
                ColumnType::Numeric => match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => push_num(col, v),
                    _ => push_missing(col),
                },
                ColumnType::Categorical(levels) => {
                    let idx = levels
                        .iter()
                        .position(|l| l == raw)
                        .or_else(|| levels.iter().position(|l| l == OTHER_LEVEL))
                        .expect("schema invariant: other level present");
                    push_cat(col, idx as u32);
                }
            }
        }
    }

    Dataset::validate(&schema, n_rows, &columns)?;
    Ok(Dataset {
        schema,
        n_rows,
        columns,
    })
}

fn is_missing(raw: &str) -> bool {
    raw.is_empty() || raw == "."
}

/// Survey variable names start with x or z followed by a digit (e.g. x12,
/// z4r). The token check elsewhere keeps names like "mortgage_amt" out.
fn is_survey_variable(lower: &str) -> bool {
    let mut chars = lower.chars();
    matches!(
        (chars.next(), chars.next()),
        (Some('x') | Some('z'), Some(d)) if d.is_ascii_digit()
    )
}

/// True when `word` appears as a whole token, with tokens split on
/// non-alphanumeric characters ("age_r" yes, "mortgage" no).
fn has_token(lower: &str, word: &str) -> bool {
    lower
        .split(|c: char| !c.is_ascii_alphanumeric())
        .any(|tok| tok == word)
}

fn parse_code(raw: &str) -> Option<i64> {
    let v: f64 = raw.trim().parse().ok()?;
    (v.is_finite() && v.fract() == 0.0).then_some(v as i64)
}

fn derive_race(hispanic: Option<i64>, race: Option<i64>) -> u32 {
    if hispanic == Some(1) {
        return 1; // Hispanic, regardless of the race code
    }
    match race {
        Some(1) => 0, // Non-Hispanic White
        Some(2) => 2, // Black
        Some(3) => 3, // Asian
        _ => 4,       // other
    }
}

fn push_num(col: &mut Column, v: f64) {
    let ColumnValues::Numeric(vals) = &mut col.values else {
        unreachable!()
    };
    vals.push(v);
    col.missing.push(false);
}

fn push_cat(col: &mut Column, v: u32) {
    let ColumnValues::Categorical(vals) = &mut col.values else {
        unreachable!()
    };
    vals.push(v);
    col.missing.push(false);
}

fn push_missing(col: &mut Column) {
    match &mut col.values {
        ColumnValues::Numeric(vals) => vals.push(0.0),
        ColumnValues::Categorical(vals) => vals.push(0),
    }
    col.missing.push(true);
}
