//! Inner-level simulators: score a candidate against a task, check its
//! constraints, and answer auxiliary queries from the proposer.

mod linear;
mod material;
mod molecule;
mod tsp;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use linear::LinearSystemInstance;
pub use material::{Linearity, MaterialInstance, MaterialSpec};
pub use molecule::{MoleculeInstance, MoleculeRow, PropertyTarget, GAP_TOLERANCE};
pub use tsp::{brute_force_tsp, TspInstance, BRUTE_FORCE_LIMIT};

use crate::domain::{format_value, Feedback, LawCandidate, MetricKind, Solution, TaskKind};
use crate::error::{Error, Result};
use crate::expr::{self, STRAIN_VAR};

#[derive(Debug, Clone, PartialEq)]
pub enum TaskInstance {
    LinearSystem(LinearSystemInstance),
    Tsp(TspInstance),
    ConstitutiveLaw(MaterialInstance),
    MoleculeProperty(MoleculeInstance),
}

impl TaskInstance {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskInstance::LinearSystem(_) => TaskKind::LinearSystem,
            TaskInstance::Tsp(_) => TaskKind::Tsp,
            TaskInstance::ConstitutiveLaw(_) => TaskKind::ConstitutiveLaw,
            TaskInstance::MoleculeProperty(_) => TaskKind::MoleculeProperty,
        }
    }

    pub fn metric_kind(&self) -> MetricKind {
        self.kind().metric_kind()
    }

    /// Deterministic starting point: identity tour, (0, 0), the law `a*eps`
    /// with a = 1, or the column mean for every molecule.
    pub fn initial_solution(&self) -> Solution {
        match self {
            TaskInstance::LinearSystem(_) => Solution::LinearParams { w: 0.0, b: 0.0 },
            TaskInstance::Tsp(t) => Solution::Tour((0..t.len()).collect()),
            TaskInstance::ConstitutiveLaw(_) => Solution::LawExpr(
                LawCandidate::parse("a*eps", [("a".to_string(), 1.0)].into()).expect("seed law parses"),
            ),
            TaskInstance::MoleculeProperty(m) => {
                let mean = m.column_mean();
                Solution::PropertyValues(m.rows.iter().map(|r| (r.id.clone(), mean)).collect())
            }
        }
    }

    /// Task context exposed to the proposer.
    pub fn expression(&self) -> ScientificExpression {
        let mut map = BTreeMap::new();
        match self {
            TaskInstance::LinearSystem(l) => {
                map.insert("samples".into(), l.samples.len().to_string());
            }
            TaskInstance::Tsp(t) => {
                let nodes: Vec<String> = t
                    .nodes
                    .iter()
                    .enumerate()
                    .map(|(i, p)| format!("{i}: ({}, {})", format_value(p[0]), format_value(p[1])))
                    .collect();
                map.insert("nodes".into(), nodes.join("; "));
            }
            TaskInstance::ConstitutiveLaw(m) => {
                let ps: Vec<String> = m.params.keys().cloned().collect();
                map.insert(
                    "properties".into(),
                    format!(
                        "material parameters [{}]; strain grid of {} samples on [{}, {}]; {} response",
                        ps.join(", "),
                        m.strain_samples.len(),
                        format_value(m.strain_samples[0]),
                        format_value(*m.strain_samples.last().unwrap()),
                        match m.linearity {
                            Linearity::Linear => "linear",
                            Linearity::NonLinear => "non-linear",
                        }
                    ),
                );
            }
            TaskInstance::MoleculeProperty(mo) => {
                let rows: Vec<String> = mo
                    .rows
                    .iter()
                    .map(|r| {
                        let d: Vec<String> = mo
                            .descriptor_names
                            .iter()
                            .zip(&r.descriptors)
                            .map(|(n, v)| format!("{n}={}", format_value(*v)))
                            .collect();
                        format!("{} ({})", r.id, d.join(", "))
                    })
                    .collect();
                map.insert("properties".into(), rows.join("; "));
                map.insert("target".into(), mo.target.label().into());
            }
        }
        ScientificExpression(map)
    }
}

/// Immutable key-value task context handed to the proposer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScientificExpression(pub BTreeMap<String, String>);

impl ScientificExpression {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxQuery {
    PairDistance(usize, usize),
    ComparePairs((usize, usize), (usize, usize)),
    StressAtSample(usize),
    /// Absolute error of `predicted` for molecule `id`.
    PerMoleculeError {
        id: String,
        predicted: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOrder {
    Less,
    Equal,
    Greater,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxAnswer {
    Value(f64),
    Order(PairOrder),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstraintReport {
    pub violations: Vec<String>,
}

impl ConstraintReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

fn mismatch(task: &TaskInstance, solution: &Solution) -> Error {
    Error::KindMismatch {
        task: task.kind().to_string(),
        solution: solution.kind().to_string(),
    }
}

/// Scores `solution` on `task`.
pub fn simulate(task: &TaskInstance, solution: &Solution) -> Result<Feedback> {
    let fb = match (task, solution) {
        (TaskInstance::LinearSystem(l), Solution::LinearParams { w, b }) => {
            if !(w.is_finite() && b.is_finite()) {
                return Err(Error::Infeasible("non-finite coefficients".into()));
            }
            l.feedback(*w, *b)
        }
        (TaskInstance::Tsp(t), Solution::Tour(tour)) => {
            let v = t.tour_violations(tour);
            if !v.is_empty() {
                return Err(Error::Infeasible(v.join(", ")));
            }
            t.feedback(tour)
        }
        (TaskInstance::ConstitutiveLaw(m), Solution::LawExpr(law)) => m.feedback(law)?,
        (TaskInstance::MoleculeProperty(m), Solution::PropertyValues(v)) => m.feedback(v)?,
        _ => return Err(mismatch(task, solution)),
    };
    if !fb.objective.is_finite() || fb.objective < 0.0 {
        return Err(Error::Infeasible(format!(
            "objective {} is not a finite loss",
            fb.objective
        )));
    }
    Ok(fb)
}

/// Lists constraint violations; an empty report means feasible.
pub fn validate(task: &TaskInstance, solution: &Solution) -> ConstraintReport {
    let violations = match (task, solution) {
        (TaskInstance::LinearSystem(_), Solution::LinearParams { w, b }) => {
            if w.is_finite() && b.is_finite() {
                vec![]
            } else {
                vec!["non-finite coefficients".to_string()]
            }
        }
        (TaskInstance::Tsp(t), Solution::Tour(tour)) => {
            let v = t.tour_violations(tour);
            if v.is_empty() {
                vec![]
            } else {
                vec![v.join(", ")]
            }
        }
        (TaskInstance::ConstitutiveLaw(m), Solution::LawExpr(law)) => m.law_violations(law),
        (TaskInstance::MoleculeProperty(m), Solution::PropertyValues(v)) => m.missing(v),
        _ => vec![mismatch(task, solution).to_string()],
    };
    ConstraintReport { violations }
}

pub fn answer_aux(task: &TaskInstance, query: &AuxQuery) -> Result<AuxAnswer> {
    match (task, query) {
        (TaskInstance::Tsp(t), AuxQuery::PairDistance(i, j)) => {
            check_nodes(t, &[*i, *j])?;
            Ok(AuxAnswer::Value(t.distance(*i, *j)))
        }
        (TaskInstance::Tsp(t), AuxQuery::ComparePairs((i, j), (k, l))) => {
            check_nodes(t, &[*i, *j, *k, *l])?;
            let (a, b) = (t.distance(*i, *j), t.distance(*k, *l));
            let ord = if a > b {
                PairOrder::Greater
            } else if a < b {
                PairOrder::Less
            } else {
                PairOrder::Equal
            };
            Ok(AuxAnswer::Order(ord))
        }
        (TaskInstance::ConstitutiveLaw(m), AuxQuery::StressAtSample(k)) => m
            .true_stress()
            .get(*k)
            .map(|s| AuxAnswer::Value(*s))
            .ok_or_else(|| Error::OutOfRange(format!("strain sample {k} of {}", m.strain_samples.len()))),
        (TaskInstance::MoleculeProperty(m), AuxQuery::PerMoleculeError { id, predicted }) => {
            let row = m
                .row(id)
                .ok_or_else(|| Error::OutOfRange(format!("unknown molecule {id}")))?;
            Ok(AuxAnswer::Value((predicted - row.value(m.target)).abs()))
        }
        _ => Err(Error::Contract(format!(
            "query {query:?} is not available for {} tasks",
            task.kind()
        ))),
    }
}

fn check_nodes(t: &TspInstance, idx: &[usize]) -> Result<()> {
    match idx.iter().find(|i| **i >= t.len()) {
        Some(i) => Err(Error::OutOfRange(format!("node {i} of {}", t.len()))),
        None => Ok(()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::InstanceParse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Loads a task file. Tours and linear systems are JSON, materials are JSON
/// ([`MaterialSpec`]), molecules are CSV (target HOMO; see
/// [`MoleculeInstance::load`] for other targets).
pub fn load_instance(path: &Path, kind: TaskKind) -> Result<TaskInstance> {
    let invalid = |e: Error| Error::InstanceInvalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    match kind {
        TaskKind::Tsp => {
            let t: TspInstance = read_json(path)?;
            t.check().map_err(invalid)?;
            Ok(TaskInstance::Tsp(t))
        }
        TaskKind::LinearSystem => {
            let l: LinearSystemInstance = read_json(path)?;
            l.check().map_err(invalid)?;
            Ok(TaskInstance::LinearSystem(l))
        }
        TaskKind::ConstitutiveLaw => {
            let spec: MaterialSpec = read_json(path)?;
            Ok(TaskInstance::ConstitutiveLaw(
                MaterialInstance::from_spec(&spec).map_err(invalid)?,
            ))
        }
        TaskKind::MoleculeProperty => Ok(TaskInstance::MoleculeProperty(MoleculeInstance::load(
            path,
            PropertyTarget::Homo,
        )?)),
    }
}

/// Stress of `law` at a single strain value.
pub fn law_stress(law: &LawCandidate, strain: f64) -> Result<f64> {
    let mut env = law.params.clone();
    env.insert(STRAIN_VAR.to_string(), strain);
    Ok(expr::evaluate(&law.ast, &env)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn square() -> TaskInstance {
        TaskInstance::Tsp(TspInstance::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).unwrap())
    }

    fn material() -> TaskInstance {
        TaskInstance::ConstitutiveLaw(
            MaterialInstance::from_spec(&MaterialSpec {
                law: "E*eps".into(),
                params: [("E".to_string(), 2.5)].into(),
                strain_min: 0.0,
                strain_max: 0.2,
                n_samples: 5,
                linearity: None,
            })
            .unwrap(),
        )
    }

    #[test]
    fn simulate_examples() {
        assert_eq!(
            simulate(&square(), &Solution::Tour(vec![0, 1, 2, 3]))
                .unwrap()
                .objective,
            4.0
        );
        let lin = TaskInstance::LinearSystem(LinearSystemInstance {
            samples: vec![[0.0, 3.0], [1.0, 5.0]],
            w_true: Some(2.0),
            b_true: Some(3.0),
            noisy: false,
        });
        assert_eq!(
            simulate(&lin, &Solution::LinearParams { w: 2.0, b: 3.0 })
                .unwrap()
                .objective,
            0.0
        );
        assert_eq!(
            simulate(&lin, &Solution::LinearParams { w: 0.0, b: 0.0 })
                .unwrap()
                .objective,
            17.0
        );
        assert!(matches!(
            simulate(&lin, &Solution::Tour(vec![0, 1])),
            Err(Error::KindMismatch { .. })
        ));
    }

    #[test]
    fn validate_examples() {
        assert!(validate(&square(), &Solution::Tour(vec![0, 1, 2, 3])).is_feasible());
        let r = validate(&square(), &Solution::Tour(vec![0, 1, 1, 3]));
        assert_eq!(r.violations, vec!["node 1 repeated, node 2 missing"]);
        let law = LawCandidate::parse("1/eps", Default::default()).unwrap();
        let r = validate(&material(), &Solution::LawExpr(law));
        assert_eq!(r.violations.len(), 1);
        assert!(r.violations[0].starts_with("sample 0"));
    }

    #[test]
    fn aux_examples() {
        assert_eq!(
            answer_aux(&square(), &AuxQuery::PairDistance(0, 1)).unwrap(),
            AuxAnswer::Value(1.0)
        );
        assert_eq!(
            answer_aux(&square(), &AuxQuery::ComparePairs((0, 2), (0, 1))).unwrap(),
            AuxAnswer::Order(PairOrder::Greater)
        );
        let m = material();
        assert_eq!(
            answer_aux(&m, &AuxQuery::StressAtSample(4)).unwrap(),
            AuxAnswer::Value(2.5 * 0.2)
        );
        assert!(matches!(
            answer_aux(&square(), &AuxQuery::PairDistance(0, 4)),
            Err(Error::OutOfRange(_))
        ));
        assert!(matches!(
            answer_aux(&m, &AuxQuery::StressAtSample(5)),
            Err(Error::OutOfRange(_))
        ));
        assert!(matches!(
            answer_aux(&m, &AuxQuery::PairDistance(0, 1)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn initial_solutions_are_feasible() {
        for task in [square(), material()] {
            let s0 = task.initial_solution();
            assert!(validate(&task, &s0).is_feasible());
            simulate(&task, &s0).unwrap();
        }
    }

    #[test]
    fn loads_tsp_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"nodes": [[0,0],[0,1],[1,1],[1,0]]}}"#).unwrap();
        let t = load_instance(f.path(), TaskKind::Tsp).unwrap();
        match t {
            TaskInstance::Tsp(t) => assert_eq!(t.len(), 4),
            _ => unreachable!(),
        }
    }

    #[test]
    fn load_reports_schema_errors_with_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "{{\n  \"coords\": [[0,0],[0,1],[1,1]]\n}}\n").unwrap();
        match load_instance(f.path(), TaskKind::Tsp) {
            Err(Error::InstanceParse { line, message, .. }) => {
                assert!(message.contains("nodes"), "{message}");
                assert!(line >= 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut g = tempfile::NamedTempFile::new().unwrap();
        write!(g, "{{\"nodes\": [[0,0],\n[0,1],\n[1,1]\n").unwrap();
        assert!(matches!(
            load_instance(g.path(), TaskKind::Tsp),
            Err(Error::InstanceParse { line: 4, .. })
        ));
        let mut h = tempfile::NamedTempFile::new().unwrap();
        write!(h, r#"{{"nodes": [[0,0],[0,1]]}}"#).unwrap();
        assert!(matches!(
            load_instance(h.path(), TaskKind::Tsp),
            Err(Error::InstanceInvalid { .. })
        ));
    }
}
