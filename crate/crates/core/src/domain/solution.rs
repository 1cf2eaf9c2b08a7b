use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::expr::{self, Binding, Expr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    LinearSystem,
    Tsp,
    ConstitutiveLaw,
    MoleculeProperty,
}

impl TaskKind {
    pub fn metric_kind(self) -> MetricKind {
        match self {
            TaskKind::LinearSystem => MetricKind::StepsToOptimum,
            TaskKind::Tsp => MetricKind::OptimalityGap,
            TaskKind::ConstitutiveLaw | TaskKind::MoleculeProperty => MetricKind::MeanSquaredError,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::LinearSystem => "linear_system",
            TaskKind::Tsp => "tsp",
            TaskKind::ConstitutiveLaw => "constitutive_law",
            TaskKind::MoleculeProperty => "molecule_property",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    StepsToOptimum,
    OptimalityGap,
    MeanSquaredError,
}

/// A candidate constitutive law: the expression plus values for its
/// parameters. The strain variable `eps` is bound by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LawRepr", into = "LawRepr")]
pub struct LawCandidate {
    pub text: String,
    pub ast: Expr,
    pub params: Binding,
}

#[derive(Serialize, Deserialize)]
struct LawRepr {
    law: String,
    params: Binding,
}

impl TryFrom<LawRepr> for LawCandidate {
    type Error = expr::ParseError;

    fn try_from(r: LawRepr) -> Result<Self, Self::Error> {
        LawCandidate::parse(&r.law, r.params)
    }
}

impl From<LawCandidate> for LawRepr {
    fn from(l: LawCandidate) -> Self {
        LawRepr {
            law: l.text,
            params: l.params,
        }
    }
}

impl LawCandidate {
    pub fn parse(text: &str, params: Binding) -> Result<Self, expr::ParseError> {
        let ast = expr::parse(text)?;
        Ok(LawCandidate {
            text: expr::pretty_print(&ast),
            ast,
            params,
        })
    }

    pub fn from_ast(ast: Expr, params: Binding) -> Self {
        LawCandidate {
            text: expr::pretty_print(&ast),
            ast,
            params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solution {
    LinearParams { w: f64, b: f64 },
    Tour(Vec<usize>),
    LawExpr(LawCandidate),
    PropertyValues(BTreeMap<String, f64>),
}

impl Solution {
    pub fn kind(&self) -> TaskKind {
        match self {
            Solution::LinearParams { .. } => TaskKind::LinearSystem,
            Solution::Tour(_) => TaskKind::Tsp,
            Solution::LawExpr(_) => TaskKind::ConstitutiveLaw,
            Solution::PropertyValues(_) => TaskKind::MoleculeProperty,
        }
    }

    /// Compact human-readable form used as the subject of knowledge triples
    /// and in prompts. Tour nodes are labelled `v1..vn` (node index + 1) and
    /// the tour is closed back to its start.
    pub fn descriptor(&self) -> String {
        match self {
            Solution::LinearParams { w, b } => {
                format!("(w={}, b={})", format_value(*w), format_value(*b))
            }
            Solution::Tour(t) => {
                let mut parts: Vec<String> = t.iter().map(|i| node_label(*i)).collect();
                if let Some(first) = t.first() {
                    parts.push(node_label(*first));
                }
                parts.join("→")
            }
            Solution::LawExpr(l) => {
                if l.params.is_empty() {
                    l.text.clone()
                } else {
                    let ps: Vec<String> = l
                        .params
                        .iter()
                        .map(|(k, v)| format!("{k}={}", format_value(*v)))
                        .collect();
                    format!("{} where {}", l.text, ps.join(", "))
                }
            }
            Solution::PropertyValues(m) => {
                let ps: Vec<String> = m.iter().map(|(k, v)| format!("{k}={}", format_value(*v))).collect();
                format!("predictions({})", ps.join(", "))
            }
        }
    }
}

pub fn node_label(index: usize) -> String {
    format!("v{}", index + 1)
}

/// Fixed-point with four decimals, trailing zeros (and a bare point) trimmed.
pub fn format_value(v: f64) -> String {
    let mut s = format!("{v:.4}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_formatting_trims() {
        assert_eq!(format_value(108.0), "108");
        assert_eq!(format_value(0.0), "0");
        assert_eq!(format_value(-0.0), "0");
        assert_eq!(format_value(4.828_427_124), "4.8284");
        assert_eq!(format_value(0.1), "0.1");
        assert_eq!(format_value(-2.5), "-2.5");
        assert_eq!(format_value(1e-7), "0");
    }

    #[test]
    fn descriptors() {
        assert_eq!(Solution::Tour(vec![0, 1, 2, 3]).descriptor(), "v1→v2→v3→v4→v1");
        assert_eq!(Solution::LinearParams { w: 2.0, b: 3.0 }.descriptor(), "(w=2, b=3)");
        let law = LawCandidate::parse("a*eps", [("a".to_string(), 1.0)].into()).unwrap();
        assert_eq!(Solution::LawExpr(law).descriptor(), "(a * eps) where a=1");
    }

    #[test]
    fn metric_assignment_follows_kind() {
        assert_eq!(TaskKind::LinearSystem.metric_kind(), MetricKind::StepsToOptimum);
        assert_eq!(TaskKind::Tsp.metric_kind(), MetricKind::OptimalityGap);
        assert_eq!(TaskKind::ConstitutiveLaw.metric_kind(), MetricKind::MeanSquaredError);
        assert_eq!(TaskKind::MoleculeProperty.metric_kind(), MetricKind::MeanSquaredError);
    }

    #[test]
    fn law_serializes_as_text_and_params() {
        let law = LawCandidate::parse("a*eps+1", [("a".to_string(), 2.0)].into()).unwrap();
        let s = serde_json::to_string(&Solution::LawExpr(law.clone())).unwrap();
        assert_eq!(s, r#"{"law_expr":{"law":"((a * eps) + 1)","params":{"a":2.0}}}"#);
        let back: Solution = serde_json::from_str(&s).unwrap();
        assert_eq!(back, Solution::LawExpr(law));
    }
}
