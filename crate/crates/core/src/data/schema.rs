//! Column schemas: how each raw column becomes part of `x`, `u` or `y`.
//!
//! Schemas are TOML documents:
//!
//! ```toml
//! delimiter = ","
//! has_header = true
//! missing = ["?", ""]
//! default_role = "continuous"   # for header columns not listed below
//!
//! [[columns]]
//! name = "capital_gain"
//! role = "continuous"
//! transform = "log1p"
//!
//! [[columns]]
//! name = "age"
//! role = "sensitive"
//!
//! [[columns]]
//! name = "income"
//! role = "label"
//! positive = [">50K"]
//!
//! [[sensitive]]
//! column = "age"
//! rule = { kind = "threshold", threshold = 25.0 }
//! ```
//!
//! Several `[[sensitive]]` factors form a composite attribute whose groups are
//! the cross product of the factor buckets, first factor most significant.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Continuous,
    Categorical,
    Sensitive,
    Label,
    Drop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    None,
    Log1p,
}

impl Default for Transform {
    fn default() -> Self {
        Transform::None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub transform: Transform,
    /// Fixed vocabulary for categorical columns; learned from data when absent.
    #[serde(default)]
    pub vocabulary: Option<Vec<String>>,
    /// Label values mapped to 1.
    #[serde(default)]
    pub positive: Option<Vec<String>>,
    /// Numeric label threshold: values above it map to 1.
    #[serde(default)]
    pub threshold: Option<f64>,
}

impl ColumnSpec {
    pub fn new(name: &str, role: Role) -> Self {
        Self {
            name: name.to_string(),
            role,
            transform: Transform::None,
            vocabulary: None,
            positive: None,
            threshold: None,
        }
    }

    pub fn log1p(mut self) -> Self {
        self.transform = Transform::Log1p;
        self
    }

    pub fn positive(mut self, values: &[&str]) -> Self {
        self.positive = Some(values.iter().map(|s| s.to_string()).collect());
        self
    }
}

/// How one sensitive column is bucketed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BucketRule {
    /// Two buckets: `value <= threshold` is 0, above it is 1.
    Threshold { threshold: f64 },
    /// One bucket per listed value, in order.
    Categories { values: Vec<String> },
    /// `edges.len() + 1` buckets; bucket `k` holds values with exactly `k`
    /// edges strictly below them.
    Bins { edges: Vec<f64> },
}

impl BucketRule {
    pub fn bucket_count(&self) -> usize {
        match self {
            BucketRule::Threshold { .. } => 2,
            BucketRule::Categories { values } => values.len(),
            BucketRule::Bins { edges } => edges.len() + 1,
        }
    }

    pub fn bucket(&self, raw: &str) -> Result<usize> {
        let numeric = || {
            raw.parse::<f64>()
                .map_err(|_| Error::Data(format!("sensitive value {raw:?} is not numeric")))
        };
        match self {
            BucketRule::Threshold { threshold } => Ok(usize::from(numeric()? > *threshold)),
            BucketRule::Categories { values } => values
                .iter()
                .position(|v| v == raw)
                .ok_or_else(|| Error::Data(format!("sensitive value {raw:?} not in {values:?}"))),
            BucketRule::Bins { edges } => {
                let v = numeric()?;
                Ok(edges.iter().filter(|&&e| e < v).count())
            }
        }
    }

    pub fn bucket_name(&self, k: usize) -> String {
        match self {
            BucketRule::Threshold { threshold } => {
                if k == 0 {
                    format!("<={threshold}")
                } else {
                    format!(">{threshold}")
                }
            }
            BucketRule::Categories { values } => values[k].clone(),
            BucketRule::Bins { edges } => match k {
                0 => format!("<={}", edges[0]),
                k if k == edges.len() => format!(">{}", edges[k - 1]),
                k => format!("({},{}]", edges[k - 1], edges[k]),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitiveFactor {
    pub column: String,
    pub rule: BucketRule,
}

fn default_delimiter() -> String {
    ",".into()
}

fn default_missing() -> Vec<String> {
    vec!["?".into(), "".into(), "NA".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    #[serde(default)]
    pub has_header: bool,
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    /// Lines starting with this character are ignored.
    #[serde(default)]
    pub comment: Option<String>,
    /// Role for header columns that are not listed in `columns`.
    #[serde(default)]
    pub default_role: Option<Role>,
    #[serde(default)]
    pub columns: Vec<ColumnSpec>,
    pub sensitive: Vec<SensitiveFactor>,
}

impl ColumnSchema {
    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: ColumnSchema = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn delimiter_byte(&self) -> Result<u8> {
        match self.delimiter.as_bytes() {
            [b] => Ok(*b),
            _ => Err(Error::Schema(format!(
                "delimiter must be one byte, got {:?}",
                self.delimiter
            ))),
        }
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        self.delimiter_byte()?;
        if self.sensitive.is_empty() {
            return Err(Error::Schema("a sensitive attribute specification is required".into()));
        }
        let labels = self.columns.iter().filter(|c| c.role == Role::Label).count();
        if labels > 1 {
            return Err(Error::Schema("at most one label column is allowed".into()));
        }
        for (i, c) in self.columns.iter().enumerate() {
            if self.columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!("duplicate column {:?}", c.name)));
            }
            if c.role == Role::Label && c.positive.is_none() && c.threshold.is_none() {
                return Err(Error::Schema(format!(
                    "label column {:?} needs `positive` values or a `threshold`",
                    c.name
                )));
            }
        }
        for f in &self.sensitive {
            match self.column(&f.column) {
                Some(c) if c.role == Role::Sensitive => {}
                Some(_) => {
                    return Err(Error::Schema(format!(
                        "sensitive factor {:?} must refer to a column with role \"sensitive\"",
                        f.column
                    )))
                }
                None => return Err(Error::Schema(format!("sensitive factor column {:?} is not declared", f.column))),
            }
            if f.rule.bucket_count() < 1 {
                return Err(Error::Schema(format!("sensitive factor {:?} has no buckets", f.column)));
            }
        }
        if self.group_count() < 2 {
            return Err(Error::Schema("the sensitive attribute needs at least two groups".into()));
        }
        if self.default_role.is_some() && !self.has_header {
            return Err(Error::Schema("default_role requires has_header = true".into()));
        }
        Ok(())
    }

    pub fn group_count(&self) -> usize {
        self.sensitive.iter().map(|f| f.rule.bucket_count()).product()
    }

    pub fn group_names(&self) -> Vec<String> {
        let mut names = vec![String::new()];
        for f in &self.sensitive {
            let mut next = Vec::new();
            for prefix in &names {
                for k in 0..f.rule.bucket_count() {
                    let part = format!("{}{}", f.column, f.rule.bucket_name(k));
                    next.push(if prefix.is_empty() { part } else { format!("{prefix}|{part}") });
                }
            }
            names = next;
        }
        names
    }

    /// Schema resolved against a file header: every header column gets a spec.
    pub fn resolve(&self, header: &[String]) -> Result<ColumnSchema> {
        let mut resolved = self.clone();
        resolved.columns = header
            .iter()
            .map(|h| match self.column(h) {
                Some(c) => Ok(c.clone()),
                None => match self.default_role {
                    Some(role) => Ok(ColumnSpec::new(h, role)),
                    None => Err(Error::Schema(format!("header column {h:?} is not in the schema"))),
                },
            })
            .collect::<Result<_>>()?;
        for c in &self.columns {
            if !header.contains(&c.name) {
                return Err(Error::Schema(format!(
                    "schema column {:?} is missing from the file header",
                    c.name
                )));
            }
        }
        resolved.default_role = None;
        resolved.validate()?;
        Ok(resolved)
    }

    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("schema serializes");
        Sha256::digest(json).into()
    }

    pub fn is_missing(&self, cell: &str) -> bool {
        self.missing.iter().any(|m| m == cell)
    }
}
