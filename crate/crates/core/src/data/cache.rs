//! Processed-dataset cache.
//!
//! Layout (little endian):
//!
//! ```text
//! b"MIFRDATA" | u32 version | [u8; 32] source sha256 | [u8; 32] schema sha256
//! u64 rows | u64 cols | u64 groups | u8 has_labels
//! x: rows*cols f64 | u: rows u64 | y: rows u8 (if labels) | row ids: rows u64
//! feature names, group names: u64 count then length-prefixed strings
//! binary mask: cols u8 | one-hot blocks: u64 count then (start, end) u64 pairs
//! standardizer: column u64s, mean f64s, std f64s | provenance string
//! ```

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::codec::{Reader, Writer};
use crate::data::{load_csv, ColumnSchema, DatasetMeta, Standardizer, TabularDataset};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const MAGIC: &[u8; 8] = b"MIFRDATA";
const VERSION: u32 = 1;

fn write_strings(w: &mut Writer, v: &[String]) {
    w.u64(v.len() as u64);
    for s in v {
        w.str(s);
    }
}

fn read_strings(r: &mut Reader) -> Result<Vec<String>> {
    let n = r.u64()?;
    (0..n).map(|_| r.str()).collect()
}

pub fn write_cache(path: &Path, data: &TabularDataset, source: [u8; 32], schema: [u8; 32]) -> Result<()> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.bytes(&source);
    w.bytes(&schema);
    let (rows, cols) = (data.len(), data.x_dim());
    w.u64(rows as u64);
    w.u64(cols as u64);
    w.u64(data.group_count() as u64);
    w.u8(u8::from(data.y().is_some()));
    for v in data.x().data() {
        w.f64(*v);
    }
    for &g in data.u() {
        w.u64(g as u64);
    }
    if let Some(y) = data.y() {
        w.bytes(y);
    }
    for &id in data.row_ids() {
        w.u64(id);
    }
    write_strings(&mut w, data.feature_names());
    write_strings(&mut w, data.group_names());
    for &b in data.binary_mask() {
        w.u8(u8::from(b));
    }
    w.u64(data.one_hot_blocks().len() as u64);
    for b in data.one_hot_blocks() {
        w.u64(b.start as u64);
        w.u64(b.end as u64);
    }
    let st = data.standardizer();
    w.u64s(st.columns.iter().map(|&c| c as u64));
    w.f64s(&st.mean);
    w.f64s(&st.std);
    w.str(data.provenance());
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, w.buf)?;
    Ok(())
}

/// Read a cache file; with `expect = Some((source, schema))` the stored hashes
/// must match.
pub fn read_cache(path: &Path, expect: Option<([u8; 32], [u8; 32])>) -> Result<TabularDataset> {
    let buf = std::fs::read(path)?;
    let mut r = Reader::new(&buf, "dataset cache");
    if r.bytes(8)? != MAGIC {
        return Err(Error::Data(format!("{} is not a dataset cache", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported dataset cache version {version}")));
    }
    let source: [u8; 32] = r.bytes(32)?.try_into().unwrap();
    let schema: [u8; 32] = r.bytes(32)?.try_into().unwrap();
    if let Some((s, c)) = expect {
        if s != source || c != schema {
            return Err(Error::Data("dataset cache is stale".into()));
        }
    }
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let groups = r.u64()? as usize;
    let has_labels = r.u8()? == 1;
    let x = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let u = (0..rows).map(|_| r.u64().map(|g| g as usize)).collect::<Result<Vec<_>>>()?;
    let y = if has_labels { Some(r.bytes(rows)?.to_vec()) } else { None };
    let row_ids = (0..rows).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let feature_names = read_strings(&mut r)?;
    let group_names = read_strings(&mut r)?;
    let binary_mask = (0..cols).map(|_| r.u8().map(|b| b == 1)).collect::<Result<Vec<_>>>()?;
    let blocks = r.u64()?;
    let one_hot_blocks = (0..blocks)
        .map(|_| Ok(r.u64()? as usize..r.u64()? as usize))
        .collect::<Result<Vec<_>>>()?;
    let standardizer = Standardizer {
        columns: r.u64s()?.into_iter().map(|c| c as usize).collect(),
        mean: r.f64s()?,
        std: r.f64s()?,
    };
    let provenance = r.str()?;
    r.finish()?;
    if group_names.len() != groups {
        return Err(Error::Data("dataset cache group count is inconsistent".into()));
    }
    let meta = DatasetMeta {
        feature_names,
        binary_mask,
        one_hot_blocks,
        group_names,
        standardizer,
        provenance,
    };
    TabularDataset::new(Tensor::matrix(rows, cols, x)?, u, y, row_ids, meta)
}

pub fn cache_path(cache_dir: &Path, source: &[u8; 32], schema: &[u8; 32]) -> PathBuf {
    let key = format!("{}-{}", &hex::encode(source)[..16], &hex::encode(schema)[..16]);
    cache_dir.join(format!("{key}.mifrdata"))
}

/// [`load_csv`] through a cache keyed by the file and schema hashes.
pub fn load_csv_cached(path: &Path, schema: &ColumnSchema, cache_dir: &Path) -> Result<TabularDataset> {
    let bytes = std::fs::read(path).map_err(|_| Error::MissingData {
        path: path.to_path_buf(),
        instructions: "supply the file named in the configuration".into(),
    })?;
    let source: [u8; 32] = Sha256::digest(&bytes).into();
    let schema_hash = schema.hash();
    let cached = cache_path(cache_dir, &source, &schema_hash);
    if cached.is_file() {
        if let Ok(d) = read_cache(&cached, Some((source, schema_hash))) {
            return Ok(d);
        }
    }
    let data = load_csv(path, schema)?;
    write_cache(&cached, &data, source, schema_hash)?;
    Ok(data)
}
