use std::sync::LazyLock;

use regex::Regex;

use crate::domain::AuxRecord;
use crate::error::{Error, Result};
use crate::simulators::{answer_aux, AuxQuery, TaskInstance};

static REQUEST: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^REQUEST\s+([a-z_]+)\s*\(([^()]*)\)\s*\.?$").expect("valid regex"));

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuxRequests {
    pub queries: Vec<AuxQuery>,
    /// Lines starting with `REQUEST` that did not match the grammar.
    pub malformed: usize,
}

/// Scans `text` for lines of the form
///
/// ```text
/// REQUEST distance(i, j)
/// REQUEST compare(i, j, k, l)
/// REQUEST stress(k)
/// REQUEST error(id, predicted)
/// ```
pub fn parse_aux_requests(text: &str) -> AuxRequests {
    let mut out = AuxRequests::default();
    for line in text.lines().map(str::trim).filter(|l| l.starts_with("REQUEST")) {
        match parse_line(line) {
            Some(q) => out.queries.push(q),
            None => out.malformed += 1,
        }
    }
    out
}

fn parse_line(line: &str) -> Option<AuxQuery> {
    let caps = REQUEST.captures(line)?;
    let args: Vec<&str> = caps[2].split(',').map(str::trim).collect();
    let idx = |i: usize| args[i].parse::<usize>().ok();
    match (&caps[1], args.len()) {
        ("distance", 2) => Some(AuxQuery::PairDistance(idx(0)?, idx(1)?)),
        ("compare", 4) => Some(AuxQuery::ComparePairs((idx(0)?, idx(1)?), (idx(2)?, idx(3)?))),
        ("stress", 1) => Some(AuxQuery::StressAtSample(idx(0)?)),
        ("error", 2) if !args[0].is_empty() => {
            let predicted: f64 = args[1].parse().ok().filter(|v: &f64| v.is_finite())?;
            Some(AuxQuery::PerMoleculeError {
                id: args[0].to_string(),
                predicted,
            })
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuxResponse {
    pub records: Vec<AuxRecord>,
    /// Queries of the wrong kind or with out-of-range arguments.
    pub rejected: Vec<(AuxQuery, String)>,
}

/// Answers queries from the simulator. Queries the task cannot serve are set
/// aside; any other failure is returned.
pub fn request_aux(task: &TaskInstance, queries: &[AuxQuery]) -> Result<AuxResponse> {
    let mut out = AuxResponse::default();
    for q in queries {
        match answer_aux(task, q) {
            Ok(answer) => out.records.push(AuxRecord {
                query: q.clone(),
                answer,
            }),
            Err(e @ (Error::OutOfRange(_) | Error::Contract(_))) => out.rejected.push((q.clone(), e.to_string())),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
