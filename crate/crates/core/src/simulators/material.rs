use serde::{Deserialize, Serialize};

use crate::domain::{format_value, Feedback, LawCandidate};
use crate::error::{Error, Result};
use crate::expr::{self, Binding, EvalError, Expr, STRAIN_VAR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linearity {
    Linear,
    NonLinear,
}

/// On-disk form of a material instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub law: String,
    #[serde(default)]
    pub params: Binding,
    #[serde(default = "default_strain_min")]
    pub strain_min: f64,
    #[serde(default = "default_strain_max")]
    pub strain_max: f64,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linearity: Option<Linearity>,
}

fn default_strain_min() -> f64 {
    0.0
}
fn default_strain_max() -> f64 {
    0.2
}
fn default_samples() -> usize {
    64
}

/// A ground-truth stress response sampled on a fixed strain grid. Candidate
/// laws are scored by the mean squared stress error over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialInstance {
    pub law_text: String,
    pub ground_truth: Expr,
    pub params: Binding,
    pub strain_samples: Vec<f64>,
    pub linearity: Linearity,
    true_stress: Vec<f64>,
}

impl MaterialInstance {
    pub fn from_spec(spec: &MaterialSpec) -> Result<Self> {
        let ast = expr::parse(&spec.law)?;
        if spec.n_samples < 2 {
            return Err(Error::Contract(format!(
                "n_samples must be at least 2, got {}",
                spec.n_samples
            )));
        }
        if !(spec.strain_min.is_finite() && spec.strain_max.is_finite() && spec.strain_max > spec.strain_min) {
            return Err(Error::Contract(format!(
                "bad strain range [{}, {}]",
                spec.strain_min, spec.strain_max
            )));
        }
        let n = spec.n_samples;
        let strain_samples: Vec<f64> = (0..n)
            .map(|i| spec.strain_min + (spec.strain_max - spec.strain_min) * i as f64 / (n - 1) as f64)
            .collect();
        let true_stress = stress_on_grid(&ast, &spec.params, &strain_samples).map_err(|(k, e)| {
            Error::Contract(format!(
                "ground-truth law fails at sample {k} (eps = {}): {e}",
                strain_samples[k]
            ))
        })?;
        let linearity = spec
            .linearity
            .unwrap_or_else(|| detect_linearity(&strain_samples, &true_stress));
        Ok(MaterialInstance {
            law_text: spec.law.clone(),
            ground_truth: ast,
            params: spec.params.clone(),
            strain_samples,
            linearity,
            true_stress,
        })
    }

    pub fn true_stress(&self) -> &[f64] {
        &self.true_stress
    }

    pub fn stress_of(&self, law: &LawCandidate) -> Result<Vec<f64>> {
        stress_on_grid(&law.ast, &law.params, &self.strain_samples).map_err(|(k, e)| Error::InfeasibleLaw {
            sample: k,
            strain: self.strain_samples[k],
            source: e,
        })
    }

    /// One entry per failing strain sample.
    pub fn law_violations(&self, law: &LawCandidate) -> Vec<String> {
        let mut env = law.params.clone();
        let mut out = Vec::new();
        for (k, eps) in self.strain_samples.iter().enumerate() {
            env.insert(STRAIN_VAR.to_string(), *eps);
            if let Err(e) = expr::evaluate(&law.ast, &env) {
                out.push(format!("sample {k} (eps={}): {e}", format_value(*eps)));
            }
        }
        out
    }

    pub(crate) fn feedback(&self, law: &LawCandidate) -> Result<Feedback> {
        let stress = self.stress_of(law)?;
        let mut worst = (0usize, 0.0f64);
        let mut sum = 0.0;
        for (k, (s, t)) in stress.iter().zip(&self.true_stress).enumerate() {
            let r = s - t;
            sum += r * r;
            if r.abs() > worst.1.abs() {
                worst = (k, r);
            }
        }
        let mut fb = Feedback::new(sum / stress.len() as f64);
        fb.statements.push(format!(
            "stress residual at eps={} = {}",
            format_value(self.strain_samples[worst.0]),
            format_value(worst.1)
        ));
        Ok(fb)
    }
}

fn stress_on_grid(ast: &Expr, params: &Binding, grid: &[f64]) -> std::result::Result<Vec<f64>, (usize, EvalError)> {
    let mut env = params.clone();
    grid.iter()
        .enumerate()
        .map(|(k, eps)| {
            env.insert(STRAIN_VAR.to_string(), *eps);
            expr::evaluate(ast, &env).map_err(|e| (k, e))
        })
        .collect()
}

fn detect_linearity(grid: &[f64], stress: &[f64]) -> Linearity {
    let scale = stress.iter().fold(0.0f64, |m, s| m.max(s.abs())).max(1e-12);
    let curved = grid.windows(3).zip(stress.windows(3)).any(|(_, s)| {
        // Uniform grid: the second difference vanishes for affine responses.
        (s[2] - 2.0 * s[1] + s[0]).abs() > 1e-9 * scale
    });
    if curved {
        Linearity::NonLinear
    } else {
        Linearity::Linear
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(law: &str, params: &[(&str, f64)]) -> MaterialSpec {
        MaterialSpec {
            law: law.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            strain_min: 0.0,
            strain_max: 0.2,
            n_samples: 64,
            linearity: None,
        }
    }

    #[test]
    fn grid_and_linearity() {
        let m = MaterialInstance::from_spec(&spec("E*eps", &[("E", 2.5)])).unwrap();
        assert_eq!(m.strain_samples.len(), 64);
        assert_eq!(m.strain_samples[0], 0.0);
        assert_eq!(m.strain_samples[63], 0.2);
        assert_eq!(m.linearity, Linearity::Linear);
        let nl = MaterialInstance::from_spec(&spec("E*eps/(1+k*eps)", &[("E", 3.0), ("k", 8.0)])).unwrap();
        assert_eq!(nl.linearity, Linearity::NonLinear);
    }

    #[test]
    fn ground_truth_against_itself_is_exactly_zero() {
        let m = MaterialInstance::from_spec(&spec("E*eps/(1+k*eps)", &[("E", 3.0), ("k", 8.0)])).unwrap();
        let law = LawCandidate::parse(&m.law_text, m.params.clone()).unwrap();
        assert_eq!(m.feedback(&law).unwrap().objective, 0.0);
    }

    #[test]
    fn singular_law_is_infeasible_at_first_sample() {
        let m = MaterialInstance::from_spec(&spec("E*eps", &[("E", 2.5)])).unwrap();
        let law = LawCandidate::parse("1/eps", Binding::new()).unwrap();
        match m.feedback(&law) {
            Err(Error::InfeasibleLaw { sample: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let v = m.law_violations(&law);
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("sample 0"), "{v:?}");
    }

    #[test]
    fn bad_ground_truth_rejected() {
        assert!(MaterialInstance::from_spec(&spec("log(eps)", &[])).is_err());
    }
}
