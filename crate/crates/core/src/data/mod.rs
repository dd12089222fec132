//! Tabular datasets: loading, preprocessing, splitting and synthetic data.
//!
//! Every dataset ends up as a dense matrix `x` (standardized continuous
//! columns followed by one-hot categorical blocks, in schema order), a
//! sensitive group id `u` per row and optionally a binary label `y`.

mod cache;
mod loaders;
mod preprocess;
pub mod schema;
mod synthetic;

pub use cache::{cache_path, load_csv_cached, read_cache, write_cache};
pub use loaders::{
    adult_schema, german_schema, load_adult, load_csv, load_csv_pair, load_german, read_raw, RawTable, ADULT_FILES,
    GERMAN_FILE,
};
pub use preprocess::Preprocessor;
pub use schema::{BucketRule, ColumnSchema, ColumnSpec, Role, SensitiveFactor, Transform};
pub use synthetic::{binary_entropy, synthetic_gen, LabelRule, SyntheticSpec};

use std::ops::Range;

use sha2::{Digest, Sha256};

use crate::dist::{fit_empirical, EmpiricalCategorical};
use crate::error::{invalid, Error, Result};
use crate::numcore::{Purpose, RngStream, Tensor};

/// Affine standardization of selected columns.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Standardizer {
    pub columns: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation of `columns` over the rows of
    /// `x`; constant columns get a unit scale.
    pub fn fit(x: &Tensor, columns: Vec<usize>) -> Self {
        let n = x.rows().max(1) as f64;
        let mut mean = Vec::with_capacity(columns.len());
        let mut std = Vec::with_capacity(columns.len());
        for &c in &columns {
            let m = (0..x.rows()).map(|i| x.row(i)[c]).sum::<f64>() / n;
            let v = (0..x.rows()).map(|i| (x.row(i)[c] - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(if v > 1e-24 { v.sqrt() } else { 1.0 });
        }
        Self { columns, mean, std }
    }

    pub fn apply(&self, x: &mut Tensor) {
        let cols = x.cols();
        for row in x.data_mut().chunks_mut(cols) {
            for (k, &c) in self.columns.iter().enumerate() {
                row[c] = (row[c] - self.mean[k]) / self.std[k];
            }
        }
    }

    pub fn invert(&self, x: &mut Tensor) {
        let cols = x.cols();
        for row in x.data_mut().chunks_mut(cols) {
            for (k, &c) in self.columns.iter().enumerate() {
                row[c] = row[c] * self.std[k] + self.mean[k];
            }
        }
    }
}

/// A minibatch with `u` in both id and one-hot form.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub u: Vec<usize>,
    pub u_onehot: Tensor,
    pub y: Option<Vec<u8>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularDataset {
    x: Tensor,
    u: Vec<usize>,
    group_count: usize,
    y: Option<Vec<u8>>,
    feature_names: Vec<String>,
    binary_mask: Vec<bool>,
    one_hot_blocks: Vec<Range<usize>>,
    group_names: Vec<String>,
    row_ids: Vec<u64>,
    standardizer: Standardizer,
    provenance: String,
}

/// Everything needed to build a [`TabularDataset`] besides the validated data.
#[derive(Clone, Debug, Default)]
pub struct DatasetMeta {
    pub feature_names: Vec<String>,
    pub binary_mask: Vec<bool>,
    pub one_hot_blocks: Vec<Range<usize>>,
    pub group_names: Vec<String>,
    pub standardizer: Standardizer,
    pub provenance: String,
}

impl TabularDataset {
    pub fn new(
        x: Tensor,
        u: Vec<usize>,
        y: Option<Vec<u8>>,
        row_ids: Vec<u64>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let n = u.len();
        if x.rank() != 2 || x.rows() != n {
            return Err(invalid(format!("x has shape {:?} for {n} rows", x.shape())));
        }
        if row_ids.len() != n {
            return Err(invalid("row_ids length differs from row count"));
        }
        if meta.feature_names.len() != x.cols() || meta.binary_mask.len() != x.cols() {
            return Err(invalid("feature names and mask must have one entry per column"));
        }
        let group_count = meta.group_names.len();
        if group_count < 2 {
            return Err(invalid("at least two sensitive groups are required"));
        }
        if let Some(&bad) = u.iter().find(|&&g| g >= group_count) {
            return Err(invalid(format!("group id {bad} out of range for {group_count} groups")));
        }
        if let Some(y) = &y {
            if y.len() != n {
                return Err(invalid("label count differs from row count"));
            }
            if y.iter().any(|&v| v > 1) {
                return Err(invalid("labels must be 0 or 1"));
            }
        }
        for b in &meta.one_hot_blocks {
            if b.end > x.cols() {
                return Err(invalid("one-hot block exceeds x width"));
            }
        }
        Ok(Self {
            x,
            u,
            group_count,
            y,
            feature_names: meta.feature_names,
            binary_mask: meta.binary_mask,
            one_hot_blocks: meta.one_hot_blocks,
            group_names: meta.group_names,
            row_ids,
            standardizer: meta.standardizer,
            provenance: meta.provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn x_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn u(&self) -> &[usize] {
        &self.u
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn y(&self) -> Option<&[u8]> {
        self.y.as_deref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn binary_mask(&self) -> &[bool] {
        &self.binary_mask
    }

    pub fn one_hot_blocks(&self) -> &[Range<usize>] {
        &self.one_hot_blocks
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Identifies the feature layout; checkpoints refuse datasets with a
    /// different fingerprint.
    pub fn schema_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, bin) in self.feature_names.iter().zip(&self.binary_mask) {
            h.update(name.as_bytes());
            h.update([0, u8::from(*bin)]);
        }
        h.update([0xff]);
        for g in &self.group_names {
            h.update(g.as_bytes());
            h.update([0]);
        }
        h.update([u8::from(self.y.is_some())]);
        hex::encode(h.finalize())
    }

    pub fn u_marginal(&self) -> Result<EmpiricalCategorical> {
        fit_empirical(&self.u, self.group_count)
    }

    /// Fraction of rows with `y = 1`.
    pub fn positive_rate(&self) -> Result<f64> {
        let y = self.y.as_ref().ok_or_else(|| invalid("dataset has no labels"))?;
        if y.is_empty() {
            return Err(Error::Empty("labels"));
        }
        Ok(y.iter().map(|&v| v as f64).sum::<f64>() / y.len() as f64)
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.group_count];
        for &g in &self.u {
            c[g] += 1;
        }
        c
    }

    pub fn batch(&self, idx: &[usize]) -> Result<Batch> {
        Ok(Batch {
            x: self.x.select_rows(idx),
            u: idx.iter().map(|&i| self.u[i]).collect(),
            u_onehot: Tensor::one_hot(&idx.iter().map(|&i| self.u[i]).collect::<Vec<_>>(), self.group_count)?,
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
        })
    }

    pub fn full_batch(&self) -> Result<Batch> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Rows at `idx`, keeping the current standardization.
    pub fn subset(&self, idx: &[usize]) -> TabularDataset {
        TabularDataset {
            x: self.x.select_rows(idx),
            u: idx.iter().map(|&i| self.u[i]).collect(),
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
            ..self.clone_meta_only()
        }
    }

    fn clone_meta_only(&self) -> TabularDataset {
        TabularDataset {
            x: Tensor::zeros(&[0, self.x.cols()]),
            u: Vec::new(),
            group_count: self.group_count,
            y: None,
            feature_names: self.feature_names.clone(),
            binary_mask: self.binary_mask.clone(),
            one_hot_blocks: self.one_hot_blocks.clone(),
            group_names: self.group_names.clone(),
            row_ids: Vec::new(),
            standardizer: self.standardizer.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Replace the standardization of the continuous columns by `target`.
    pub(crate) fn restandardize(&mut self, target: &Standardizer) {
        self.standardizer.invert(&mut self.x);
        target.apply(&mut self.x);
        self.standardizer = target.clone();
    }

    /// Fails when any group has no rows.
    pub fn check_groups_nonempty(&self, what: &str) -> Result<()> {
        let counts = self.group_counts();
        if let Some(g) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Data(format!(
                "group {:?} has no rows in the {what} data",
                self.group_names[g]
            )));
        }
        Ok(())
    }

    /// Standardization re-fitted on `self` and applied to `other`.
    pub fn align_standardization(&mut self, other: &mut TabularDataset) {
        let mut raw = self.x.clone();
        self.standardizer.invert(&mut raw);
        let fitted = Standardizer::fit(&raw, self.standardizer.columns.clone());
        self.restandardize(&fitted);
        other.restandardize(&fitted);
    }
}

/// Seeded split into `(train, test)` with `test_fraction` of the rows held
/// out. Continuous columns are re-standardized with training statistics only.
pub fn split(data: &TabularDataset, test_fraction: f64, seed: u64) -> Result<(TabularDataset, TabularDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let n = data.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::Data(format!(
            "splitting {n} rows with test fraction {test_fraction} leaves a side empty"
        )));
    }
    let perm = RngStream::new(seed, Purpose::Split, 0).permutation(n);
    let mut test_idx = perm[..n_test].to_vec();
    let mut train_idx = perm[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    let mut train = data.subset(&train_idx);
    let mut test = data.subset(&test_idx);
    train.check_groups_nonempty("training")?;
    test.check_groups_nonempty("test")?;
    train.align_standardization(&mut test);
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> TabularDataset {
        let mut rng = RngStream::from_seed(3);
        let mut data = Vec::new();
        for i in 0..n {
            data.push(rng.normal() * 3.0 + 1.0);
            data.push((i % 2) as f64);
            data.push(1.0 - (i % 2) as f64);
        }
        let mut x = Tensor::matrix(n, 3, data).unwrap();
        let st = Standardizer::fit(&x, vec![0]);
        st.apply(&mut x);
        let meta = DatasetMeta {
            feature_names: vec!["c".into(), "k=a".into(), "k=b".into()],
            binary_mask: vec![false, true, true],
            one_hot_blocks: vec![1..3],
            group_names: vec!["g0".into(), "g1".into()],
            standardizer: st,
            provenance: "toy".into(),
        };
        let u = (0..n).map(|i| (i / 2) % 2).collect();
        TabularDataset::new(x, u, Some(vec![1; n]), (0..n as u64).collect(), meta).unwrap()
    }

    fn col_stats(x: &Tensor, c: usize) -> (f64, f64) {
        let n = x.rows() as f64;
        let m = (0..x.rows()).map(|i| x.row(i)[c]).sum::<f64>() / n;
        let v = (0..x.rows()).map(|i| (x.row(i)[c] - m).powi(2)).sum::<f64>() / n;
        (m, v)
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_seeded() {
        let d = toy(101);
        let (tr, te) = split(&d, 0.3, 7).unwrap();
        assert_eq!(tr.len() + te.len(), 101);
        let mut ids: Vec<u64> = tr.row_ids().iter().chain(te.row_ids()).copied().collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 101);
        let (tr2, te2) = split(&d, 0.3, 7).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
        let (m, v) = col_stats(tr.x(), 0);
        assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let d = toy(10);
        assert!(split(&d, 0.0, 1).is_err());
        assert!(split(&d, 1.0, 1).is_err());
        assert!(split(&d, 0.01, 1).is_err());
    }

    #[test]
    fn fingerprint_tracks_layout() {
        let d = toy(8);
        let mut e = toy(8);
        assert_eq!(d.schema_fingerprint(), e.schema_fingerprint());
        e.feature_names[0] = "other".into();
        assert_ne!(d.schema_fingerprint(), e.schema_fingerprint());
    }

    #[test]
    fn batch_carries_onehot() {
        let d = toy(8);
        let b = d.batch(&[0, 2, 3]).unwrap();
        assert_eq!(b.u, vec![0, 1, 1]);
        assert_eq!(b.u_onehot.row(1), &[0.0, 1.0]);
        assert_eq!(b.y.unwrap().len(), 3);
    }
}
