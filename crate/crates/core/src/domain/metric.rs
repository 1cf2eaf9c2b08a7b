use serde::{Deserialize, Serialize};

use super::solution::MetricKind;
use crate::error::{Error, Result};

/// Objective at or below this counts as optimal.
pub const OPTIMUM_TOLERANCE: f64 = 1e-9;

/// A final metric, or the not-solved sentinel reported as N/A.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricValue {
    Value(f64),
    NotSolved,
}

impl MetricValue {
    pub fn value(self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(v),
            MetricValue::NotSolved => None,
        }
    }
}

/// Inputs for [`compute_metric`]: the per-step objectives of a run (step 1
/// first) and, for tours, the oracle length.
#[derive(Debug, Clone, Copy)]
pub struct RunData<'a> {
    pub objectives: &'a [f64],
    pub oracle: Option<f64>,
}

pub fn compute_metric(kind: MetricKind, data: RunData<'_>) -> Result<MetricValue> {
    let best = data
        .objectives
        .iter()
        .copied()
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
    match kind {
        MetricKind::OptimalityGap => {
            let oracle = data
                .oracle
                .ok_or_else(|| Error::Config("optimality gap needs an oracle tour length".into()))?;
            if oracle.is_nan() || oracle <= 0.0 {
                return Err(Error::Config(format!("oracle length must be positive, got {oracle}")));
            }
            let best = best.ok_or(Error::EmptyInput("objectives"))?;
            Ok(MetricValue::Value((best - oracle) / oracle))
        }
        MetricKind::StepsToOptimum => Ok(data
            .objectives
            .iter()
            .position(|o| *o <= OPTIMUM_TOLERANCE)
            .map_or(MetricValue::NotSolved, |i| MetricValue::Value((i + 1) as f64))),
        MetricKind::MeanSquaredError => Ok(MetricValue::Value(best.ok_or(Error::EmptyInput("objectives"))?)),
    }
}
