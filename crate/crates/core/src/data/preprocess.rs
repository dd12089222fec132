use std::collections::BTreeSet;

use crate::data::schema::{ColumnSchema, ColumnSpec, Role, Transform};
use crate::data::{DatasetMeta, RawTable, Standardizer, TabularDataset};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub(crate) const UNKNOWN: &str = "<unknown>";

#[derive(Clone, Debug)]
enum Encoding {
    Continuous {
        impute: f64,
        indicator: bool,
    },
    Categorical {
        vocabulary: Vec<String>,
    },
    Skip,
}

/// Column encodings fitted on one table (the training data) and applied to
/// any table with the same schema.
#[derive(Clone, Debug)]
pub struct Preprocessor {
    schema: ColumnSchema,
    encodings: Vec<Encoding>,
    standardizer: Standardizer,
    feature_names: Vec<String>,
    binary_mask: Vec<bool>,
    one_hot_blocks: Vec<std::ops::Range<usize>>,
}

fn numeric(spec: &ColumnSpec, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| Error::Data(format!("column {:?}: {cell:?} is not numeric", spec.name)))?;
    Ok(match spec.transform {
        Transform::None => v,
        Transform::Log1p => v.ln_1p(),
    })
}

impl Preprocessor {
    pub fn fit(table: &RawTable) -> Result<Self> {
        let schema = table.schema.clone();
        let mut encodings = Vec::with_capacity(schema.columns.len());
        let mut feature_names = Vec::new();
        let mut binary_mask = Vec::new();
        let mut one_hot_blocks = Vec::new();
        for (c, spec) in schema.columns.iter().enumerate() {
            let cells = table.rows.iter().map(|r| r[c].as_str());
            match spec.role {
                Role::Continuous => {
                    let mut sum = 0.0;
                    let mut count = 0usize;
                    let mut missing = false;
                    for cell in cells {
                        if schema.is_missing(cell) {
                            missing = true;
                        } else {
                            sum += numeric(spec, cell)?;
                            count += 1;
                        }
                    }
                    let impute = if count > 0 { sum / count as f64 } else { 0.0 };
                    feature_names.push(spec.name.clone());
                    binary_mask.push(false);
                    if missing {
                        feature_names.push(format!("{}__missing", spec.name));
                        binary_mask.push(true);
                    }
                    encodings.push(Encoding::Continuous {
                        impute,
                        indicator: missing,
                    });
                }
                Role::Categorical => {
                    let vocabulary: Vec<String> = match &spec.vocabulary {
                        Some(v) => v.clone(),
                        None => cells
                            .filter(|c| !schema.is_missing(c))
                            .map(str::to_string)
                            .collect::<BTreeSet<_>>()
                            .into_iter()
                            .collect(),
                    };
                    let start = feature_names.len();
                    for v in vocabulary.iter().map(String::as_str).chain([UNKNOWN]) {
                        feature_names.push(format!("{}={v}", spec.name));
                        binary_mask.push(true);
                    }
                    one_hot_blocks.push(start..feature_names.len());
                    encodings.push(Encoding::Categorical { vocabulary });
                }
                _ => encodings.push(Encoding::Skip),
            }
        }
        let mut pre = Self {
            schema,
            encodings,
            standardizer: Standardizer::default(),
            feature_names,
            binary_mask,
            one_hot_blocks,
        };
        let x = pre.encode_x(table)?;
        let continuous = (0..pre.binary_mask.len()).filter(|&j| !pre.binary_mask[j]).collect();
        pre.standardizer = Standardizer::fit(&x, continuous);
        Ok(pre)
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn encode_x(&self, table: &RawTable) -> Result<Tensor> {
        let width = self.feature_names.len();
        let mut data = Vec::with_capacity(table.rows.len() * width);
        for row in &table.rows {
            for ((spec, enc), cell) in self.schema.columns.iter().zip(&self.encodings).zip(row) {
                match enc {
                    Encoding::Continuous { impute, indicator } => {
                        let missing = self.schema.is_missing(cell);
                        data.push(if missing { *impute } else { numeric(spec, cell)? });
                        if *indicator {
                            data.push(f64::from(u8::from(missing)));
                        }
                    }
                    Encoding::Categorical { vocabulary } => {
                        let k = vocabulary.iter().position(|v| v == cell).unwrap_or(vocabulary.len());
                        for j in 0..=vocabulary.len() {
                            data.push(f64::from(u8::from(j == k)));
                        }
                    }
                    Encoding::Skip => {}
                }
            }
        }
        Tensor::matrix(table.rows.len(), width, data)
    }

    fn encode_u(&self, table: &RawTable) -> Result<Vec<usize>> {
        let cols: Vec<usize> = self
            .schema
            .sensitive
            .iter()
            .map(|f| self.schema.columns.iter().position(|c| c.name == f.column).unwrap())
            .collect();
        table
            .rows
            .iter()
            .map(|row| {
                let mut g = 0;
                for (f, &c) in self.schema.sensitive.iter().zip(&cols) {
                    g = g * f.rule.bucket_count() + f.rule.bucket(&row[c])?;
                }
                Ok(g)
            })
            .collect()
    }

    fn encode_y(&self, table: &RawTable) -> Result<Option<Vec<u8>>> {
        let Some(c) = self.schema.columns.iter().position(|c| c.role == Role::Label) else {
            return Ok(None);
        };
        let spec = &self.schema.columns[c];
        table
            .rows
            .iter()
            .map(|row| label_value(spec, &row[c]))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn transform(&self, table: &RawTable) -> Result<TabularDataset> {
        if table.schema.columns != self.schema.columns {
            return Err(Error::Schema("table schema differs from the fitted schema".into()));
        }
        let mut x = self.encode_x(table)?;
        self.standardizer.apply(&mut x);
        let u = self.encode_u(table)?;
        let y = self.encode_y(table)?;
        let meta = DatasetMeta {
            feature_names: self.feature_names.clone(),
            binary_mask: self.binary_mask.clone(),
            one_hot_blocks: self.one_hot_blocks.clone(),
            group_names: self.schema.group_names(),
            standardizer: self.standardizer.clone(),
            provenance: format!("{}; {} malformed rows skipped", table.source, table.skipped),
        };
        TabularDataset::new(x, u, y, table.row_ids.clone(), meta)
    }
}

pub(crate) fn label_value(spec: &ColumnSpec, cell: &str) -> Result<u8> {
    if let Some(pos) = &spec.positive {
        return Ok(u8::from(pos.iter().any(|p| p == cell)));
    }
    let t = spec.threshold.expect("validated label rule");
    let v: f64 = cell
        .parse()
        .map_err(|_| Error::Data(format!("label {cell:?} is not numeric")))?;
    Ok(u8::from(v > t))
}
