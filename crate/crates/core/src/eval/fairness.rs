//! Group-fairness gaps of classifier outcomes.
//!
//! `ΔEO` here is the mean, over the label values present, of the absolute
//! gap in mean outcome between the two groups within that label slice;
//! `ΔEOpp` is the `y = 1` gap alone.

use std::fmt;

use crate::error::{invalid, Error, Result};

/// A metric value, or a marker that the metric is undefined for the input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FairnessValue {
    Value(f64),
    NotApplicable,
}

impl FairnessValue {
    pub fn value(self) -> Option<f64> {
        match self {
            FairnessValue::Value(v) => Some(v),
            FairnessValue::NotApplicable => None,
        }
    }
}

impl fmt::Display for FairnessValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FairnessValue::Value(v) => write!(f, "{v}"),
            FairnessValue::NotApplicable => write!(f, "NA"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FairnessMetrics {
    pub delta_dp: FairnessValue,
    pub delta_eo: FairnessValue,
    pub delta_eopp: FairnessValue,
}

/// Probabilities thresholded at 1/2.
pub fn hard_predictions(probs: &[f64]) -> Vec<f64> {
    probs.iter().map(|&p| f64::from(u8::from(p >= 0.5))).collect()
}

fn check(pred: &[f64], u: &[usize]) -> Result<()> {
    if pred.len() != u.len() {
        return Err(invalid("one group id per prediction is required"));
    }
    Ok(())
}

/// `|mean(ŷ|u=0) − mean(ŷ|u=1)|` over the rows selected by `keep`.
fn gap(pred: &[f64], u: &[usize], keep: impl Fn(usize) -> bool) -> Result<Option<f64>> {
    let mut sum = [0.0; 2];
    let mut count = [0usize; 2];
    for i in (0..pred.len()).filter(|&i| keep(i)) {
        if u[i] > 1 {
            return Err(invalid(format!("group id {} in a two-group metric", u[i])));
        }
        sum[u[i]] += pred[i];
        count[u[i]] += 1;
    }
    match count {
        [0, 0] => Ok(None),
        [0, _] | [_, 0] => Err(Error::Data("a group is missing from a required slice".into())),
        _ => Ok(Some((sum[0] / count[0] as f64 - sum[1] / count[1] as f64).abs())),
    }
}

pub fn delta_dp(pred: &[f64], u: &[usize], group_count: usize) -> Result<FairnessValue> {
    check(pred, u)?;
    if group_count != 2 {
        return Ok(FairnessValue::NotApplicable);
    }
    gap(pred, u, |_| true)?
        .map(FairnessValue::Value)
        .ok_or(Error::Empty("predictions"))
}

pub fn delta_eo(pred: &[f64], u: &[usize], y: &[u8], group_count: usize) -> Result<FairnessValue> {
    check(pred, u)?;
    if y.len() != pred.len() {
        return Err(invalid("one label per prediction is required"));
    }
    if group_count != 2 {
        return Ok(FairnessValue::NotApplicable);
    }
    let gaps: Vec<f64> = (0..2u8)
        .map(|label| gap(pred, u, |i| y[i] == label))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if gaps.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    Ok(FairnessValue::Value(gaps.iter().sum::<f64>() / gaps.len() as f64))
}

pub fn delta_eopp(pred: &[f64], u: &[usize], y: &[u8], group_count: usize) -> Result<FairnessValue> {
    check(pred, u)?;
    if y.len() != pred.len() {
        return Err(invalid("one label per prediction is required"));
    }
    if group_count != 2 {
        return Ok(FairnessValue::NotApplicable);
    }
    gap(pred, u, |i| y[i] == 1)?
        .map(FairnessValue::Value)
        .ok_or_else(|| Error::Data("no rows with y = 1".into()))
}

pub fn fairness_metrics(pred: &[f64], u: &[usize], y: &[u8], group_count: usize) -> Result<FairnessMetrics> {
    Ok(FairnessMetrics {
        delta_dp: delta_dp(pred, u, group_count)?,
        delta_eo: delta_eo(pred, u, y, group_count)?,
        delta_eopp: delta_eopp(pred, u, y, group_count)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dp_examples() {
        assert_eq!(delta_dp(&[1.0, 1.0, 0.0, 0.0], &[0, 0, 1, 1], 2).unwrap(), FairnessValue::Value(1.0));
        assert_eq!(delta_dp(&[1.0; 4], &[0, 0, 1, 1], 2).unwrap(), FairnessValue::Value(0.0));
        assert_eq!(delta_dp(&[1.0; 4], &[0, 5, 17, 1], 18).unwrap(), FairnessValue::NotApplicable);
        // Relabeling the groups changes nothing.
        let pred = [1.0, 0.0, 1.0, 1.0, 0.0];
        let a = delta_dp(&pred, &[0, 1, 0, 1, 1], 2).unwrap();
        let b = delta_dp(&pred, &[1, 0, 1, 0, 0], 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eo_eight_rows() {
        let pred = [1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let u = [0, 0, 1, 1, 0, 0, 1, 1];
        let y = [1, 1, 1, 1, 0, 0, 0, 0];
        // y=1 gap |1 − 0.5| = 0.5, y=0 gap |1 − 0| = 1.
        assert_eq!(delta_eo(&pred, &u, &y, 2).unwrap(), FairnessValue::Value(0.75));
        assert_eq!(delta_eopp(&pred, &u, &y, 2).unwrap(), FairnessValue::Value(0.5));
    }

    #[test]
    fn degenerate_slices() {
        let pred = [1.0, 0.0, 1.0, 1.0];
        let u = [0, 0, 1, 1];
        let y = [1, 1, 1, 1];
        assert_eq!(delta_eo(&pred, &u, &y, 2).unwrap(), delta_eopp(&pred, &u, &y, 2).unwrap());
        let blind = [1.0; 4];
        assert_eq!(delta_eo(&blind, &u, &[1, 0, 1, 0], 2).unwrap(), FairnessValue::Value(0.0));
        assert!(delta_eopp(&pred, &u, &[0, 0, 0, 0], 2).is_err());
        assert!(delta_eo(&pred, &u, &[1, 1, 0, 0], 2).is_err());
    }
}
