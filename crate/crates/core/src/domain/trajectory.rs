use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::feedback::Feedback;
use super::solution::Solution;
use super::triple::KnowledgeTriple;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Exploit,
    Explore,
}

/// A feasible candidate evaluated alongside the batch best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub solution: Solution,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub iteration: usize,
    /// Best candidate of the iteration's batch.
    pub solution: Solution,
    pub feedback: Feedback,
    pub temperature_used: f64,
    pub tag: Tag,
    /// The rest of the batch, best first.
    #[serde(default)]
    pub alternatives: Vec<Scored>,
}

impl TrajectoryEntry {
    pub fn new(iteration: usize, solution: Solution, feedback: Feedback, temperature_used: f64, tag: Tag) -> Self {
        TrajectoryEntry {
            iteration,
            solution,
            feedback,
            temperature_used,
            tag,
            alternatives: Vec::new(),
        }
    }

    pub fn objective(&self) -> f64 {
        self.feedback.objective
    }
}

/// Append-only optimisation history; iterations are contiguous from 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    entries: Vec<TrajectoryEntry>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TrajectoryEntry] {
        &self.entries
    }

    pub fn last(&self) -> Option<&TrajectoryEntry> {
        self.entries.last()
    }

    pub fn append(&mut self, entry: TrajectoryEntry) -> Result<()> {
        if entry.iteration != self.entries.len() {
            return Err(Error::Contract(format!(
                "trajectory has {} entries, cannot append iteration {}",
                self.entries.len(),
                entry.iteration
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Entry with the minimal objective; ties go to the earliest iteration.
    pub fn best_so_far(&self) -> Result<&TrajectoryEntry> {
        let mut best: Option<&TrajectoryEntry> = None;
        for e in &self.entries {
            if best.is_none_or(|b| e.objective() < b.objective()) {
                best = Some(e);
            }
        }
        best.ok_or(Error::EmptyInput("trajectory"))
    }

    /// Every evaluated candidate with its objective, in evaluation order.
    pub fn evaluated(&self) -> impl Iterator<Item = (&Solution, f64)> {
        self.entries.iter().flat_map(|e| {
            std::iter::once((&e.solution, e.objective()))
                .chain(e.alternatives.iter().map(|s| (&s.solution, s.objective)))
        })
    }
}

/// One line of a persisted trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iter: usize,
    pub solution: Solution,
    pub objective: f64,
    pub temperature: f64,
    pub tag: Tag,
    pub triples: Vec<String>,
}

/// Writes one JSON record per line. `triples[i]` are the triples extracted
/// at iteration `i`.
pub fn write_records<W: Write>(mut out: W, trajectory: &Trajectory, triples: &[Vec<KnowledgeTriple>]) -> Result<()> {
    for (i, e) in trajectory.entries().iter().enumerate() {
        let rec = TrajectoryRecord {
            iter: e.iteration,
            solution: e.solution.clone(),
            objective: e.objective(),
            temperature: e.temperature_used,
            tag: e.tag,
            triples: triples
                .get(i)
                .map(|ts| ts.iter().map(KnowledgeTriple::serialize).collect())
                .unwrap_or_default(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<TrajectoryRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(iteration: usize, objective: f64) -> TrajectoryEntry {
        TrajectoryEntry::new(
            iteration,
            Solution::LinearParams {
                w: iteration as f64,
                b: 0.0,
            },
            Feedback::new(objective),
            0.5,
            Tag::Exploit,
        )
    }

    fn traj(objs: &[f64]) -> Trajectory {
        let mut t = Trajectory::new();
        for (i, o) in objs.iter().enumerate() {
            t.append(entry(i, *o)).unwrap();
        }
        t
    }

    #[test]
    fn append_enforces_contiguity() {
        let mut t = Trajectory::new();
        t.append(entry(0, 1.0)).unwrap();
        assert_eq!(t.len(), 1);
        let mut t = traj(&[1.0, 2.0, 3.0]);
        t.append(entry(3, 1.0)).unwrap();
        assert_eq!(t.len(), 4);
        let mut t = traj(&[1.0, 2.0, 3.0]);
        assert!(matches!(t.append(entry(5, 1.0)), Err(Error::Contract(_))));
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn best_so_far_argmin_with_tie_break() {
        assert_eq!(traj(&[5.0, 3.0, 4.0]).best_so_far().unwrap().iteration, 1);
        assert_eq!(traj(&[3.0, 3.0]).best_so_far().unwrap().iteration, 0);
        assert_eq!(traj(&[7.0]).best_so_far().unwrap().iteration, 0);
        assert!(matches!(Trajectory::new().best_so_far(), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn records_round_trip_with_stable_field_order() {
        let t = traj(&[2.0, 1.0]);
        let triples = vec![vec![KnowledgeTriple::new("a", "b", "c").unwrap()], vec![]];
        let mut buf = Vec::new();
        write_records(&mut buf, &t, &triples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with(r#"{"iter":0,"solution":"#), "{first}");
        let keys = [
            "\"iter\"",
            "\"solution\"",
            "\"objective\"",
            "\"temperature\"",
            "\"tag\"",
            "\"triples\"",
        ];
        let pos: Vec<usize> = keys.iter().map(|k| first.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        let back = read_records(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].triples, vec!["a | b | c".to_string()]);
        assert_eq!(back[1].objective, 1.0);
    }

    proptest! {
        #[test]
        fn best_is_monotone_under_append(objs in prop::collection::vec(0.0f64..100.0, 1..30)) {
            let mut t = Trajectory::new();
            let mut prev = f64::INFINITY;
            for (i, o) in objs.iter().enumerate() {
                t.append(entry(i, *o)).unwrap();
                let b = t.best_so_far().unwrap().objective();
                prop_assert!(b <= prev);
                prev = b;
            }
        }
    }
}
