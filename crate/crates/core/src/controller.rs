//! Exploit/explore decoding-temperature schedule.
//!
//! With relative loss change `dl = (prev - cur) / prev`, an improvement
//! (`dl > 0`) scales the temperature by `1 / (1 + dl)` and a regression
//! (`dl < 0`) by `1 + |dl|`. The result is clipped to [0, 1]. `dl = 0`, and
//! any `prev` at or below [`ZERO_LOSS_EPS`], leave the temperature unchanged.

use serde::{Deserialize, Serialize};

use crate::domain::{Solution, Tag};
use crate::error::{Error, Result};

pub const DEFAULT_INITIAL_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_SPLIT_TEMPERATURE: f64 = 0.5;
pub const DEFAULT_EXPLOIT_DISTANCE: f64 = 0.25;
/// Previous losses at or below this are treated as zero (no relative change).
pub const ZERO_LOSS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureState {
    pub temperature: f64,
    pub prev_objective: Option<f64>,
}

/// Which branch an update took; logged per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateBranch {
    First,
    Improved,
    Regressed,
    Unchanged,
}

impl TemperatureState {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&temperature) {
            return Err(Error::Contract(format!("temperature {temperature} outside [0, 1]")));
        }
        Ok(TemperatureState {
            temperature,
            prev_objective: None,
        })
    }
}

impl Default for TemperatureState {
    fn default() -> Self {
        TemperatureState {
            temperature: DEFAULT_INITIAL_TEMPERATURE,
            prev_objective: None,
        }
    }
}

pub fn loss_change(prev: f64, cur: f64) -> f64 {
    if prev <= ZERO_LOSS_EPS {
        0.0
    } else {
        (prev - cur) / prev
    }
}

pub fn update_temperature(state: TemperatureState, current_objective: f64) -> Result<TemperatureState> {
    update_with_branch(state, current_objective).map(|(s, _)| s)
}

pub fn update_with_branch(state: TemperatureState, current_objective: f64) -> Result<(TemperatureState, UpdateBranch)> {
    if !current_objective.is_finite() || current_objective < 0.0 {
        return Err(Error::Contract(format!(
            "objective must be finite and non-negative, got {current_objective}"
        )));
    }
    let (temperature, branch) = match state.prev_objective {
        None => (state.temperature, UpdateBranch::First),
        Some(prev) => {
            let dl = loss_change(prev, current_objective);
            if dl > 0.0 {
                (state.temperature * (1.0 / (1.0 + dl)), UpdateBranch::Improved)
            } else if dl < 0.0 {
                (state.temperature * (1.0 + dl.abs()), UpdateBranch::Regressed)
            } else {
                (state.temperature, UpdateBranch::Unchanged)
            }
        }
    };
    Ok((
        TemperatureState {
            temperature: temperature.clamp(0.0, 1.0),
            prev_objective: Some(current_objective),
        },
        branch,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagThresholds {
    /// At or below this temperature every candidate counts as exploitation.
    pub split_temperature: f64,
    /// Normalised distance to the best solution at or below which a candidate
    /// counts as exploitation.
    pub exploit_distance: f64,
}

impl Default for TagThresholds {
    fn default() -> Self {
        TagThresholds {
            split_temperature: DEFAULT_SPLIT_TEMPERATURE,
            exploit_distance: DEFAULT_EXPLOIT_DISTANCE,
        }
    }
}

pub fn tag_candidate(
    state: &TemperatureState,
    candidate: &Solution,
    best: &Solution,
    thresholds: &TagThresholds,
) -> Result<Tag> {
    let d = solution_distance(candidate, best)?;
    if state.temperature <= thresholds.split_temperature || d <= thresholds.exploit_distance {
        Ok(Tag::Exploit)
    } else {
        Ok(Tag::Explore)
    }
}

/// Normalised distance in [0, 1] between two solutions of the same kind.
///
/// Tours: Kendall-tau distance between the tours rotated to start at node 0,
/// minimised over the two orientations. Coefficients and predictions:
/// relative Euclidean distance, capped at 1. Laws: 1 when the expressions
/// differ structurally, else the relative parameter distance.
pub fn solution_distance(a: &Solution, b: &Solution) -> Result<f64> {
    match (a, b) {
        (Solution::Tour(x), Solution::Tour(y)) => {
            if x.len() != y.len() {
                return Ok(1.0);
            }
            let fwd = canonical_rotation(x);
            let mut rev: Vec<usize> = x.iter().rev().copied().collect();
            rev = canonical_rotation(&rev);
            let target = canonical_rotation(y);
            Ok(kendall_tau_distance(&fwd, &target).min(kendall_tau_distance(&rev, &target)))
        }
        (Solution::LinearParams { w: w1, b: b1 }, Solution::LinearParams { w: w2, b: b2 }) => {
            Ok(relative_distance(&[*w1, *b1], &[*w2, *b2]))
        }
        (Solution::LawExpr(l1), Solution::LawExpr(l2)) => {
            if l1.ast != l2.ast || l1.params.keys().ne(l2.params.keys()) {
                return Ok(1.0);
            }
            let p1: Vec<f64> = l1.params.values().copied().collect();
            let p2: Vec<f64> = l2.params.values().copied().collect();
            Ok(relative_distance(&p1, &p2))
        }
        (Solution::PropertyValues(m1), Solution::PropertyValues(m2)) => {
            if m1.keys().ne(m2.keys()) {
                return Ok(1.0);
            }
            let v1: Vec<f64> = m1.values().copied().collect();
            let v2: Vec<f64> = m2.values().copied().collect();
            Ok(relative_distance(&v1, &v2))
        }
        _ => Err(Error::KindMismatch {
            task: b.kind().to_string(),
            solution: a.kind().to_string(),
        }),
    }
}

fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1.0);
    (diff / norm).min(1.0)
}

fn canonical_rotation(t: &[usize]) -> Vec<usize> {
    let start = t.iter().position(|v| *v == 0).unwrap_or(0);
    t[start..].iter().chain(&t[..start]).copied().collect()
}

/// Fraction of discordant pairs between two permutations of the same items.
pub fn kendall_tau_distance(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let max = a.iter().chain(b).copied().max().unwrap_or(0);
    let mut pos_b = vec![usize::MAX; max + 1];
    for (i, v) in b.iter().enumerate() {
        pos_b[*v] = i;
    }
    let mapped: Vec<usize> = a.iter().map(|v| pos_b[*v]).collect();
    let mut discordant = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if mapped[i] > mapped[j] {
                discordant += 1;
            }
        }
    }
    discordant as f64 / (n * (n - 1) / 2) as f64
}
