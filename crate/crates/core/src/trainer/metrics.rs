use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::objective::{ConstraintId, Multipliers, PerConstraint};

pub const METRICS_HEADER: [&str; 12] = [
    "iteration",
    "epoch",
    "L_r_nats",
    "C1_nats",
    "C2_nats",
    "C_EO_nats",
    "C_EOpp_nats",
    "lambda1",
    "lambda2",
    "lambda_EO",
    "lambda_EOpp",
    "lr",
];

/// One logged minibatch. Constraints that were not computed are `None` and
/// written as `NA`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub epoch: u64,
    pub l_r: f64,
    pub c: PerConstraint<Option<f64>>,
    pub lambda: Multipliers,
    pub lr: f64,
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        let mut rec = vec![r.iteration.to_string(), r.epoch.to_string(), r.l_r.to_string()];
        rec.extend(ConstraintId::ALL.iter().map(|&id| r.c[id].map_or("NA".to_string(), |v| v.to_string())));
        rec.extend(ConstraintId::ALL.iter().map(|&id| r.lambda.lambda[id].to_string()));
        rec.push(r.lr.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(METRICS_HEADER) {
        return Err(Error::Data("unexpected metrics header".into()));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Data(format!("bad number {s:?} in metrics"))) };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f: Vec<&str> = rec.iter().collect();
        let opt = |s: &str| -> Result<Option<f64>> { if s == "NA" { Ok(None) } else { num(s).map(Some) } };
        rows.push(MetricsRow {
            iteration: num(f[0])? as u64,
            epoch: num(f[1])? as u64,
            l_r: num(f[2])?,
            c: PerConstraint {
                c1: opt(f[3])?,
                c2: opt(f[4])?,
                eo: opt(f[5])?,
                eopp: opt(f[6])?,
            },
            lambda: Multipliers {
                lambda: PerConstraint {
                    c1: num(f[7])?,
                    c2: num(f[8])?,
                    eo: num(f[9])?,
                    eopp: num(f[10])?,
                },
            },
            lr: num(f[11])?,
        });
    }
    Ok(rows)
}
