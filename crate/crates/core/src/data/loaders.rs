use std::path::{Path, PathBuf};

use crate::data::preprocess::label_value;
use crate::data::schema::{BucketRule, ColumnSchema, ColumnSpec, Role, SensitiveFactor};
use crate::data::{Preprocessor, TabularDataset};
use crate::error::{Error, Result};

pub const ADULT_FILES: [&str; 2] = ["adult.data", "adult.test"];
pub const GERMAN_FILE: &str = "german.data";

const ADULT_FETCH: &str = "Download adult.data and adult.test from \
https://archive.ics.uci.edu/ml/machine-learning-databases/adult/ into this directory, \
or point MIFR_DATA_DIR at a directory containing adult/.";
const GERMAN_FETCH: &str = "Download german.data from \
https://archive.ics.uci.edu/ml/machine-learning-databases/statlog/german/ into this directory, \
or point MIFR_DATA_DIR at a directory containing german/.";

/// Raw cells of the rows that passed validation against a schema.
#[derive(Clone, Debug)]
pub struct RawTable {
    /// Schema with one entry per file column, in file order.
    pub schema: ColumnSchema,
    pub rows: Vec<Vec<String>>,
    /// Record index of every kept row in the source file.
    pub row_ids: Vec<u64>,
    pub skipped: usize,
    pub source: String,
}

fn row_is_valid(schema: &ColumnSchema, row: &[String]) -> bool {
    if row.len() != schema.columns.len() {
        return false;
    }
    for (spec, cell) in schema.columns.iter().zip(row) {
        let missing = schema.is_missing(cell);
        let ok = match spec.role {
            Role::Continuous => missing || cell.parse::<f64>().is_ok(),
            Role::Label => !missing && label_value(spec, cell).is_ok(),
            Role::Sensitive => !missing,
            Role::Categorical | Role::Drop => true,
        };
        if !ok {
            return false;
        }
    }
    let valid_bucket = |f: &SensitiveFactor| {
        let c = schema.columns.iter().position(|c| c.name == f.column).unwrap();
        f.rule.bucket(&row[c]).is_ok()
    };
    schema.sensitive.iter().all(valid_bucket)
}

/// Read a delimited file, dropping rows that do not fit the schema.
pub fn read_raw(path: &Path, schema: &ColumnSchema) -> Result<RawTable> {
    if !path.exists() {
        return Err(Error::MissingData {
            path: path.to_path_buf(),
            instructions: "supply the file named in the configuration".into(),
        });
    }
    let mut builder = csv::ReaderBuilder::new();
    builder
        .delimiter(schema.delimiter_byte()?)
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All);
    if let Some(c) = &schema.comment {
        builder.comment(c.as_bytes().first().copied());
    }
    let mut reader = builder.from_path(path)?;
    let resolved = if schema.has_header {
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        schema.resolve(&header)?
    } else {
        schema.clone()
    };
    let mut rows = Vec::new();
    let mut row_ids = Vec::new();
    let mut skipped = 0;
    for (i, rec) in reader.records().enumerate() {
        let Ok(rec) = rec else {
            skipped += 1;
            continue;
        };
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let row: Vec<String> = rec.iter().map(str::to_string).collect();
        if row_is_valid(&resolved, &row) {
            rows.push(row);
            row_ids.push(i as u64);
        } else {
            skipped += 1;
        }
    }
    Ok(RawTable {
        schema: resolved,
        rows,
        row_ids,
        skipped,
        source: path.display().to_string(),
    })
}

/// Schema-driven load of one file; encodings and standardization are fitted
/// on the whole file.
pub fn load_csv(path: &Path, schema: &ColumnSchema) -> Result<TabularDataset> {
    let table = read_raw(path, schema)?;
    if table.rows.is_empty() {
        return Err(Error::Data(format!("{} has no valid rows", path.display())));
    }
    let data = Preprocessor::fit(&table)?.transform(&table)?;
    data.check_groups_nonempty("loaded")?;
    Ok(data)
}

/// Separate train and test files sharing one schema; encodings and
/// standardization come from the training file.
pub fn load_csv_pair(train: &Path, test: &Path, schema: &ColumnSchema) -> Result<(TabularDataset, TabularDataset)> {
    let train_raw = read_raw(train, schema)?;
    let mut test_raw = read_raw(test, schema)?;
    for id in &mut test_raw.row_ids {
        *id += 1 << 40;
    }
    let pre = Preprocessor::fit(&train_raw)?;
    let train = pre.transform(&train_raw)?;
    let test = pre.transform(&test_raw)?;
    train.check_groups_nonempty("training")?;
    test.check_groups_nonempty("test")?;
    Ok((train, test))
}

pub fn adult_schema() -> ColumnSchema {
    use Role::*;
    let columns = vec![
        ColumnSpec::new("age", Continuous),
        ColumnSpec::new("workclass", Categorical),
        ColumnSpec::new("fnlwgt", Drop),
        ColumnSpec::new("education", Categorical),
        ColumnSpec::new("education_num", Continuous),
        ColumnSpec::new("marital_status", Categorical),
        ColumnSpec::new("occupation", Categorical),
        ColumnSpec::new("relationship", Categorical),
        ColumnSpec::new("race", Categorical),
        ColumnSpec::new("sex", Sensitive),
        ColumnSpec::new("capital_gain", Continuous).log1p(),
        ColumnSpec::new("capital_loss", Continuous).log1p(),
        ColumnSpec::new("hours_per_week", Continuous),
        ColumnSpec::new("native_country", Categorical),
        ColumnSpec::new("income", Label).positive(&[">50K", ">50K."]),
    ];
    ColumnSchema {
        delimiter: ",".into(),
        has_header: false,
        missing: vec!["?".into(), "".into()],
        comment: Some("|".into()),
        default_role: None,
        columns,
        sensitive: vec![SensitiveFactor {
            column: "sex".into(),
            rule: BucketRule::Categories {
                values: vec!["Male".into(), "Female".into()],
            },
        }],
    }
}

/// German credit, with `u = 1` when age exceeds `age_threshold` years.
pub fn german_schema(age_threshold: f64) -> ColumnSchema {
    use Role::*;
    let roles = [
        Categorical, Continuous, Categorical, Categorical, Continuous, Categorical, Categorical,
        Continuous, Categorical, Categorical, Continuous, Categorical, Sensitive, Categorical,
        Categorical, Continuous, Categorical, Continuous, Categorical, Categorical,
    ];
    let mut columns: Vec<ColumnSpec> = roles
        .iter()
        .enumerate()
        .map(|(i, &r)| ColumnSpec::new(&format!("A{}", i + 1), r))
        .collect();
    columns[12].name = "age".into();
    columns[4] = columns[4].clone().log1p();
    columns.push(ColumnSpec::new("credit", Label).positive(&["1"]));
    ColumnSchema {
        delimiter: " ".into(),
        has_header: false,
        missing: vec![],
        comment: None,
        default_role: None,
        columns,
        sensitive: vec![SensitiveFactor {
            column: "age".into(),
            rule: BucketRule::Threshold {
                threshold: age_threshold,
            },
        }],
    }
}

fn require(path: PathBuf, instructions: &str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingData {
            path,
            instructions: instructions.into(),
        })
    }
}

/// The standard UCI partition of Adult as `(train, test)`. Vocabularies and
/// standardization come from the training file.
pub fn load_adult(dir: &Path) -> Result<(TabularDataset, TabularDataset)> {
    let schema = adult_schema();
    let train_path = require(dir.join(ADULT_FILES[0]), ADULT_FETCH)?;
    let test_path = require(dir.join(ADULT_FILES[1]), ADULT_FETCH)?;
    load_csv_pair(&train_path, &test_path, &schema)
}

/// All 1000 German credit rows; split them with [`split`](crate::data::split).
pub fn load_german(dir: &Path, age_threshold: f64) -> Result<TabularDataset> {
    let path = require(dir.join(GERMAN_FILE), GERMAN_FETCH)?;
    load_csv(&path, &german_schema(age_threshold))
}
