//! Plot-ready data series from sweep tables and run directories.
//!
//! Every emitted file starts with `#` lines naming the figure and both axes
//! with their units, followed by a CSV header and rows.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::sweep::{PCA_FILE, RESULTS_FILE};
use crate::CliError;

struct Series {
    file: &'static str,
    title: &'static str,
    x: (&'static str, &'static str),
    y: (&'static str, &'static str),
    /// Extra grouping column written first, if any.
    group: Option<&'static str>,
}

const XZ_VS_AUC: Series = Series {
    file: "xz_vs_auc.csv",
    title: "expressiveness against downstream AUC",
    x: ("I_xz_given_u_nats", "nats"),
    y: ("auc_prob", "probability"),
    group: None,
};
const ZU_VS_DP: Series = Series {
    file: "zu_vs_dp.csv",
    title: "I(z;u) against demographic parity gap",
    x: ("I_zu_nats", "nats"),
    y: ("delta_dp_prob", "probability"),
    group: None,
};
const DP_VS_EPS2: Series = Series {
    file: "dp_vs_eps2.csv",
    title: "demographic parity gap against eps2",
    x: ("eps2_nats", "nats"),
    y: ("delta_dp_prob", "probability"),
    group: None,
};
const XZ_VS_EPS2: Series = Series {
    file: "xz_vs_eps2.csv",
    title: "expressiveness against eps2",
    x: ("eps2_nats", "nats"),
    y: ("I_xz_given_u_nats", "nats"),
    group: None,
};
const CONSTRAINTS_VS_EPS: Series = Series {
    file: "constraints_vs_eps.csv",
    title: "terminal constraint values grouped by their budget",
    x: ("eps_nats", "nats"),
    y: ("value_nats", "nats"),
    group: Some("constraint"),
};

fn header(s: &Series) -> String {
    let mut h = format!("# figure: {}\n# x: {} ({})\n# y: {} ({})\n", s.title, s.x.0, s.x.1, s.y.0, s.y.1);
    match s.group {
        Some(g) => h.push_str(&format!("source,{g},x,y\n")),
        None => h.push_str("source,index,x,y\n"),
    }
    h
}

struct Table {
    columns: HashMap<String, usize>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
        let mut records = r.records();
        let Some(head) = records.next() else {
            return Ok(Self {
                columns: HashMap::new(),
                rows: Vec::new(),
            });
        };
        let head = head.map_err(|e| CliError::usage(e.to_string()))?;
        let columns = head.iter().enumerate().map(|(i, c)| (c.to_string(), i)).collect();
        let rows = records
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()
            .map_err(|e| CliError::usage(e.to_string()))?;
        Ok(Self { columns, rows })
    }

    fn col(&self, name: &str) -> Result<usize, CliError> {
        self.columns
            .get(name)
            .copied()
            .ok_or_else(|| CliError::usage(format!("input table has no column {name:?}")))
    }

    fn num(row: &[String], c: usize) -> Option<f64> {
        row.get(c).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite())
    }
}

fn scatter(t: &Table, s: &Series) -> Result<String, CliError> {
    let mut out = header(s);
    if t.rows.is_empty() {
        return Ok(out);
    }
    let (ix, xc, yc) = (t.col("index")?, t.col(s.x.0)?, t.col(s.y.0)?);
    for r in &t.rows {
        if let (Some(x), Some(y)) = (Table::num(r, xc), Table::num(r, yc)) {
            out.push_str(&format!("sweep,{},{x},{y}\n", r[ix]));
        }
    }
    Ok(out)
}

fn grouped(t: &Table) -> Result<String, CliError> {
    let mut out = header(&CONSTRAINTS_VS_EPS);
    if t.rows.is_empty() {
        return Ok(out);
    }
    for (name, eps, val) in [("C1", "eps1_nats", "C1_nats"), ("C2", "eps2_nats", "C2_nats")] {
        let (ec, vc) = (t.col(eps)?, t.col(val)?);
        for r in &t.rows {
            if let (Some(e), Some(v)) = (Table::num(r, ec), Table::num(r, vc)) {
                out.push_str(&format!("sweep,{name},{e},{v}\n"));
            }
        }
    }
    Ok(out)
}

/// Figure series for a sweep directory (or its `results.csv`).
fn from_sweep(table_path: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let t = Table::read(table_path)?;
    let mut xz_auc = scatter(&t, &XZ_VS_AUC)?;
    let mut zu_dp = scatter(&t, &ZU_VS_DP)?;
    let pca_path = table_path.with_file_name(PCA_FILE);
    if pca_path.is_file() {
        let p = Table::read(&pca_path)?;
        for r in &p.rows {
            let auc = Table::num(r, p.col("auc_prob")?);
            let dp = Table::num(r, p.col("delta_dp_prob")?);
            // The baseline has no representation MI; it is plotted as a level.
            if let Some(a) = auc {
                xz_auc.push_str(&format!("pca,NA,NA,{a}\n"));
            }
            if let Some(d) = dp {
                zu_dp.push_str(&format!("pca,NA,NA,{d}\n"));
            }
        }
    }
    let files = [
        (XZ_VS_AUC.file, xz_auc),
        (ZU_VS_DP.file, zu_dp),
        (CONSTRAINTS_VS_EPS.file, grouped(&t)?),
        (DP_VS_EPS2.file, scatter(&t, &DP_VS_EPS2)?),
        (XZ_VS_EPS2.file, scatter(&t, &XZ_VS_EPS2)?),
    ];
    write_all(out, &files)
}

fn from_run(metrics: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let text = std::fs::read_to_string(metrics)?;
    let body = format!(
        "# figure: training curves\n# x: iteration (outer steps)\n# y: L_r and constraint values (nats), multipliers (dimensionless), lr\n{text}"
    );
    write_all(out, &[("training_curves.csv", body)])
}

fn write_all(out: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out)?;
    let mut paths = Vec::new();
    for (name, body) in files {
        let p = out.join(name);
        std::fs::write(&p, body)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Emit plot data for `input`: a sweep directory, a results table or a run
/// directory. Returns the written files.
pub fn emit_report(input: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.is_file() {
        return from_sweep(input, out);
    }
    if input.join(RESULTS_FILE).is_file() {
        return from_sweep(&input.join(RESULTS_FILE), out);
    }
    if input.join("metrics.csv").is_file() {
        return from_run(&input.join("metrics.csv"), out);
    }
    Err(CliError::usage(format!(
        "{} is neither a sweep table, a sweep directory nor a run directory",
        input.display()
    )))
}
