use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::feedback::{AuxRecord, Feedback};
use super::solution::{format_value, node_label, Solution};
use crate::error::{Error, Result};
use crate::simulators::{AuxAnswer, AuxQuery, PairOrder};

/// A (subject, relation, object) fact distilled from simulator feedback.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KnowledgeTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl KnowledgeTriple {
    pub fn new(subject: impl Into<String>, relation: impl Into<String>, object: impl Into<String>) -> Result<Self> {
        let t = KnowledgeTriple {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
        };
        if t.subject.is_empty() || t.relation.is_empty() || t.object.is_empty() {
            return Err(Error::Contract(format!("triple has an empty field: {t:?}")));
        }
        Ok(t)
    }

    /// `subject | relation | object`, with `\`, `|` and line breaks escaped
    /// inside fields.
    pub fn serialize(&self) -> String {
        format!(
            "{} | {} | {}",
            escape(&self.subject),
            escape(&self.relation),
            escape(&self.object)
        )
    }

    pub fn deserialize(line: &str) -> Result<Self> {
        let bad = |why: &str| Error::Contract(format!("malformed triple `{line}`: {why}"));
        let mut fields = vec![String::new()];
        let mut chars = line.chars();
        while let Some(c) = chars.next() {
            match c {
                '\\' => match chars.next() {
                    Some('n') => fields.last_mut().unwrap().push('\n'),
                    Some('r') => fields.last_mut().unwrap().push('\r'),
                    Some(other) => fields.last_mut().unwrap().push(other),
                    None => return Err(bad("dangling escape")),
                },
                '|' => fields.push(String::new()),
                other => fields.last_mut().unwrap().push(other),
            }
        }
        if fields.len() != 3 {
            return Err(bad("expected three fields"));
        }
        // The separator is exactly " | ": strip one space on each side.
        let no_space = || bad("missing separator space");
        let subject = fields[0].strip_suffix(' ').ok_or_else(no_space)?;
        let relation = fields[1]
            .strip_prefix(' ')
            .and_then(|s| s.strip_suffix(' '))
            .ok_or_else(no_space)?;
        let object = fields[2].strip_prefix(' ').ok_or_else(no_space)?;
        KnowledgeTriple::new(subject, relation, object)
    }
}

impl fmt::Display for KnowledgeTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            other => out.push(other),
        }
    }
    out
}

pub const REL_HAS_DISTANCE: &str = "has distance of";
pub const REL_HAS_LOSS: &str = "has loss of";
pub const REL_GREATER: &str = "greater than";
pub const REL_LESS: &str = "less than";
pub const REL_EQUAL: &str = "equal to";
pub const REL_RESIDUAL: &str = "has stress residual of";
pub const REL_STRESS: &str = "has stress of";
pub const REL_ABS_ERROR: &str = "has absolute error of";

/// One entry of the closed statement-template registry.
pub struct StatementTemplate {
    pub name: &'static str,
    /// Example of the statement text the simulators emit.
    pub example: &'static str,
    pattern: &'static LazyLock<Regex>,
    to_triple: fn(&regex::Captures<'_>) -> (String, String, String),
}

static DISTANCE_COMPARISON: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^distance\((v\d+),\s*(v\d+)\)\s*(>|<|=)\s*distance\((v\d+),\s*(v\d+)\)$").unwrap());
static PAIR_DISTANCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^distance\((v\d+),\s*(v\d+)\)\s*=\s*(\S+)$").unwrap());
static STRESS_RESIDUAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^stress residual at eps=(\S+)\s*=\s*(\S+)$").unwrap());
static MOLECULE_ERROR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^abs_error\(([^()]+)\)\s*=\s*(\S+)$").unwrap());

pub static STATEMENT_TEMPLATES: [StatementTemplate; 4] = [
    StatementTemplate {
        name: "distance_comparison",
        example: "distance(v1,v4) > distance(v2,v4)",
        pattern: &DISTANCE_COMPARISON,
        to_triple: |c| {
            let rel = match &c[3] {
                ">" => REL_GREATER,
                "<" => REL_LESS,
                _ => REL_EQUAL,
            };
            (
                format!("({},{})", &c[1], &c[2]),
                rel.to_string(),
                format!("({},{})", &c[4], &c[5]),
            )
        },
    },
    StatementTemplate {
        name: "pair_distance",
        example: "distance(v1,v2) = 1.4142",
        pattern: &PAIR_DISTANCE,
        to_triple: |c| {
            (
                format!("({},{})", &c[1], &c[2]),
                REL_HAS_DISTANCE.to_string(),
                c[3].to_string(),
            )
        },
    },
    StatementTemplate {
        name: "stress_residual",
        example: "stress residual at eps=0.1 = 0.25",
        pattern: &STRESS_RESIDUAL,
        to_triple: |c| {
            (
                format!("stress at eps={}", &c[1]),
                REL_RESIDUAL.to_string(),
                c[2].to_string(),
            )
        },
    },
    StatementTemplate {
        name: "molecule_abs_error",
        example: "abs_error(mol3) = 0.12",
        pattern: &MOLECULE_ERROR,
        to_triple: |c| (c[1].to_string(), REL_ABS_ERROR.to_string(), c[2].to_string()),
    },
];

/// Converts a registered statement into a triple; `None` if no template matches.
pub fn statement_to_triple(statement: &str) -> Option<KnowledgeTriple> {
    let s = statement.trim();
    STATEMENT_TEMPLATES.iter().find_map(|t| {
        t.pattern.captures(s).and_then(|c| {
            let (a, b, o) = (t.to_triple)(&c);
            KnowledgeTriple::new(a, b, o).ok()
        })
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripleExtraction {
    pub triples: Vec<KnowledgeTriple>,
    /// Statements that matched no registered template.
    pub skipped: usize,
}

pub fn objective_relation(solution: &Solution) -> &'static str {
    match solution {
        Solution::Tour(_) => REL_HAS_DISTANCE,
        _ => REL_HAS_LOSS,
    }
}

pub fn aux_to_triple(record: &AuxRecord) -> Option<KnowledgeTriple> {
    let pair = |i: usize, j: usize| format!("({},{})", node_label(i), node_label(j));
    let (s, r, o) = match (&record.query, &record.answer) {
        (AuxQuery::PairDistance(i, j), AuxAnswer::Value(d)) => {
            (pair(*i, *j), REL_HAS_DISTANCE.to_string(), format_value(*d))
        }
        (AuxQuery::ComparePairs((i, j), (k, l)), AuxAnswer::Order(ord)) => {
            let rel = match ord {
                PairOrder::Greater => REL_GREATER,
                PairOrder::Less => REL_LESS,
                PairOrder::Equal => REL_EQUAL,
            };
            (pair(*i, *j), rel.to_string(), pair(*k, *l))
        }
        (AuxQuery::StressAtSample(k), AuxAnswer::Value(v)) => {
            (format!("strain sample {k}"), REL_STRESS.to_string(), format_value(*v))
        }
        (AuxQuery::PerMoleculeError { id, .. }, AuxAnswer::Value(v)) => {
            (id.clone(), REL_ABS_ERROR.to_string(), format_value(*v))
        }
        _ => return None,
    };
    KnowledgeTriple::new(s, r, o).ok()
}

/// Objective triple first, then one triple per auxiliary answer, then one per
/// statement matching a registered template.
pub fn extract_triples(feedback: &Feedback, solution: &Solution) -> TripleExtraction {
    let mut out = TripleExtraction::default();
    if let Ok(t) = KnowledgeTriple::new(
        solution.descriptor(),
        objective_relation(solution),
        format_value(feedback.objective),
    ) {
        out.triples.push(t);
    }
    for rec in &feedback.aux_answers {
        match aux_to_triple(rec) {
            Some(t) => out.triples.push(t),
            None => out.skipped += 1,
        }
    }
    for st in &feedback.statements {
        match statement_to_triple(st) {
            Some(t) => out.triples.push(t),
            None => out.skipped += 1,
        }
    }
    out
}
