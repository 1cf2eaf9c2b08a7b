use std::collections::BTreeMap;

use crate::domain::{LawCandidate, Solution, TaskKind};
use crate::expr::{self, Binding};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TagError {
    #[error("no <{0}>...</{0}> span found")]
    MissingTags(&'static str),
    #[error("malformed <{tag}> body: {reason}")]
    Malformed { tag: &'static str, reason: String },
}

pub(crate) fn tag_name(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::LinearSystem => "pair",
        TaskKind::Tsp => "trace",
        TaskKind::ConstitutiveLaw => "law",
        TaskKind::MoleculeProperty => "value",
    }
}

/// First `<tag>body</tag>` span in `text`.
fn tagged_body<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = text[start..].find(&close)? + start;
    Some(&text[start..end])
}

/// Extracts a candidate of `kind` from free text. Feasibility is not
/// checked here; that is `validate`'s job.
pub fn parse_tagged(text: &str, kind: TaskKind) -> Result<Solution, TagError> {
    let tag = tag_name(kind);
    let body = tagged_body(text, tag).ok_or(TagError::MissingTags(tag))?.trim();
    let bad = |reason: String| TagError::Malformed { tag, reason };
    match kind {
        TaskKind::Tsp => parse_tour(body).map(Solution::Tour).map_err(bad),
        TaskKind::LinearSystem => parse_pair(body)
            .map(|(w, b)| Solution::LinearParams { w, b })
            .map_err(bad),
        TaskKind::ConstitutiveLaw => parse_law(body).map(Solution::LawExpr).map_err(bad),
        TaskKind::MoleculeProperty => parse_values(body).map(Solution::PropertyValues).map_err(bad),
    }
}

fn parse_tour(body: &str) -> Result<Vec<usize>, String> {
    let normalized = body.replace("->", ",").replace('→', ",");
    let mut tour = Vec::new();
    for tok in normalized.split(|c: char| c == ',' || c.is_whitespace()) {
        if tok.is_empty() {
            continue;
        }
        tour.push(
            tok.parse::<usize>()
                .map_err(|_| format!("`{tok}` is not a node index"))?,
        );
    }
    if tour.is_empty() {
        return Err("empty tour".into());
    }
    // A closed listing repeats the start node at the end.
    if tour.len() > 2 && tour.first() == tour.last() {
        tour.pop();
    }
    Ok(tour)
}

fn number(tok: &str) -> Result<f64, String> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| format!("`{}` is not a number", tok.trim()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{}` is not finite", tok.trim()))
    }
}

/// `w, b` or `w=.., b=..` (either order when named).
fn parse_pair(body: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = body
        .split([',', ';'])
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    if parts.len() != 2 {
        return Err(format!("expected two numbers, got {} fields", parts.len()));
    }
    let (mut w, mut b) = (None, None);
    for (i, p) in parts.iter().enumerate() {
        match p.split_once('=') {
            Some((name, v)) => match name.trim() {
                "w" => w = Some(number(v)?),
                "b" => b = Some(number(v)?),
                other => return Err(format!("unknown coefficient `{other}`")),
            },
            None if i == 0 => w = Some(number(p)?),
            None => b = Some(number(p)?),
        }
    }
    match (w, b) {
        (Some(w), Some(b)) => Ok((w, b)),
        _ => Err("both w and b are required".into()),
    }
}

/// `expression` optionally followed by `; name=value, ...`.
fn parse_law(body: &str) -> Result<LawCandidate, String> {
    let (text, params) = match body.split_once(';') {
        Some((t, p)) => (t, p),
        None => (body, ""),
    };
    let mut binding = Binding::new();
    for item in params.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, v) = item
            .split_once('=')
            .ok_or_else(|| format!("parameter `{item}` is not name=value"))?;
        let name = name.trim();
        if name.is_empty() || name == expr::STRAIN_VAR {
            return Err(format!("bad parameter name `{name}`"));
        }
        binding.insert(name.to_string(), number(v)?);
    }
    LawCandidate::parse(text.trim(), binding).map_err(|e| e.to_string())
}

/// `id: v` (or `id = v`) entries separated by commas, semicolons or lines.
fn parse_values(body: &str) -> Result<BTreeMap<String, f64>, String> {
    let mut out = BTreeMap::new();
    for item in body.split([',', ';', '\n']).map(str::trim).filter(|s| !s.is_empty()) {
        let (id, v) = item
            .split_once(':')
            .or_else(|| item.split_once('='))
            .ok_or_else(|| format!("entry `{item}` is not id: value"))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(format!("entry `{item}` has no id"));
        }
        if out.insert(id.to_string(), number(v)?).is_some() {
            return Err(format!("molecule {id} listed twice"));
        }
    }
    if out.is_empty() {
        return Err("no predictions".into());
    }
    Ok(out)
}
