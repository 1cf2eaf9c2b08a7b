use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::parse::tag_name;
use super::ContextPolicy;
use crate::domain::{extract_triples, format_value, Solution, TaskKind, Trajectory};
use crate::error::{Error, Result};
use crate::expr::pretty_print;
use crate::simulators::TaskInstance;

pub const TEMPLATE_VARIANTS: usize = 5;

const TEMPLATES: [[&str; TEMPLATE_VARIANTS]; 4] = [
    [
        include_str!("../../data/prompts/linear_1.txt"),
        include_str!("../../data/prompts/linear_2.txt"),
        include_str!("../../data/prompts/linear_3.txt"),
        include_str!("../../data/prompts/linear_4.txt"),
        include_str!("../../data/prompts/linear_5.txt"),
    ],
    [
        include_str!("../../data/prompts/tsp_1.txt"),
        include_str!("../../data/prompts/tsp_2.txt"),
        include_str!("../../data/prompts/tsp_3.txt"),
        include_str!("../../data/prompts/tsp_4.txt"),
        include_str!("../../data/prompts/tsp_5.txt"),
    ],
    [
        include_str!("../../data/prompts/law_1.txt"),
        include_str!("../../data/prompts/law_2.txt"),
        include_str!("../../data/prompts/law_3.txt"),
        include_str!("../../data/prompts/law_4.txt"),
        include_str!("../../data/prompts/law_5.txt"),
    ],
    [
        include_str!("../../data/prompts/molecule_1.txt"),
        include_str!("../../data/prompts/molecule_2.txt"),
        include_str!("../../data/prompts/molecule_3.txt"),
        include_str!("../../data/prompts/molecule_4.txt"),
        include_str!("../../data/prompts/molecule_5.txt"),
    ],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptOptions {
    /// 1-based template variant.
    #[serde(default = "default_variant")]
    pub variant: usize,
    /// Triple lines kept by the summary policy.
    #[serde(default = "default_summary_lines")]
    pub summary_lines: usize,
}

fn default_variant() -> usize {
    1
}
fn default_summary_lines() -> usize {
    8
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            variant: default_variant(),
            summary_lines: default_summary_lines(),
        }
    }
}

impl PromptOptions {
    pub fn validate(&self) -> Result<()> {
        if !(1..=TEMPLATE_VARIANTS).contains(&self.variant) {
            return Err(Error::Config(format!(
                "prompt variant must be in 1..={TEMPLATE_VARIANTS}, got {}",
                self.variant
            )));
        }
        if self.summary_lines == 0 {
            return Err(Error::Config("summary_lines must be at least 1".into()));
        }
        Ok(())
    }
}

/// Raw template text for a task kind and 1-based variant.
pub fn template(kind: TaskKind, variant: usize) -> Option<&'static str> {
    let row = match kind {
        TaskKind::LinearSystem => 0,
        TaskKind::Tsp => 1,
        TaskKind::ConstitutiveLaw => 2,
        TaskKind::MoleculeProperty => 3,
    };
    variant.checked_sub(1).and_then(|v| TEMPLATES[row].get(v)).copied()
}

/// Candidate written in the same tagged form the parser accepts.
pub(crate) fn tagged(solution: &Solution) -> String {
    let tag = tag_name(solution.kind());
    let body = match solution {
        Solution::LinearParams { w, b } => format!("{}, {}", format_value(*w), format_value(*b)),
        Solution::Tour(t) => t.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","),
        Solution::LawExpr(l) => {
            let text = pretty_print(&l.ast);
            if l.params.is_empty() {
                text
            } else {
                let ps: Vec<String> = l.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                format!("{text}; {}", ps.join(", "))
            }
        }
        Solution::PropertyValues(m) => m
            .iter()
            .map(|(k, v)| format!("{k}: {}", format_value(*v)))
            .collect::<Vec<_>>()
            .join(", "),
    };
    format!("<{tag}>{body}</{tag}>")
}

fn objective_word(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::LinearSystem => "value",
        TaskKind::Tsp => "length",
        TaskKind::ConstitutiveLaw => "loss",
        TaskKind::MoleculeProperty => "error",
    }
}

fn example_lines(kind: TaskKind, mut items: Vec<(&Solution, f64)>) -> String {
    // Worst first, best last; stable for ties.
    items.sort_by(|a, b| b.1.total_cmp(&a.1));
    let word = objective_word(kind);
    items
        .iter()
        .map(|(s, o)| format!("{} {word} = {}", tagged(s), format_value(*o)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The best triple ever seen plus the most recent ones, capped at `lines`.
fn triple_summary(trajectory: &Trajectory, lines: usize) -> String {
    let best = trajectory.best_so_far().ok().map(|e| e.iteration);
    let mut kept: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    if let Some(b) = best {
        let e = &trajectory.entries()[b];
        if let Some(t) = extract_triples(&e.feedback, &e.solution).triples.first() {
            seen.insert(t.serialize());
            kept.push(t.serialize());
        }
    }
    let mut recent: Vec<String> = Vec::new();
    'outer: for e in trajectory.entries().iter().rev() {
        let ts = extract_triples(&e.feedback, &e.solution).triples;
        for t in ts.iter().rev() {
            if recent.len() + kept.len() >= lines {
                break 'outer;
            }
            let s = t.serialize();
            if seen.insert(s.clone()) {
                recent.push(s);
            }
        }
    }
    recent.reverse();
    kept.extend(recent);
    format!("Known facts (subject | relation | object):\n{}", kept.join("\n"))
}

pub fn build_prompt(task: &TaskInstance, trajectory: &Trajectory, policy: ContextPolicy) -> String {
    build_prompt_with(task, trajectory, policy, &PromptOptions::default())
}

/// Fills the task template. Example lists run from worst to best objective.
pub fn build_prompt_with(
    task: &TaskInstance,
    trajectory: &Trajectory,
    policy: ContextPolicy,
    options: &PromptOptions,
) -> String {
    let kind = task.kind();
    let examples = match policy {
        ContextPolicy::FullTrajectory => {
            let mut seen = HashSet::new();
            let items: Vec<(&Solution, f64)> = trajectory
                .evaluated()
                .filter(|(s, _)| seen.insert(s.descriptor()))
                .collect();
            example_lines(kind, items)
        }
        ContextPolicy::LastK(k) => {
            let n = trajectory.len();
            let items = trajectory.entries()[n.saturating_sub(k)..]
                .iter()
                .map(|e| (&e.solution, e.objective()))
                .collect();
            example_lines(kind, items)
        }
        ContextPolicy::TripleSummary => triple_summary(trajectory, options.summary_lines),
    };
    let expr = task.expression();
    let text = template(kind, options.variant).unwrap_or_else(|| template(kind, 1).expect("variant 1 exists"));
    text.replace("{NODES}", expr.get("nodes").unwrap_or(""))
        .replace("{PROPERTIES}", expr.get("properties").unwrap_or(""))
        .replace("{TARGET}", expr.get("target").unwrap_or(""))
        .replace("{SAMPLES}", expr.get("samples").unwrap_or(""))
        .replace("{EXAMPLES}", &examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Tag, TrajectoryEntry};
    use crate::proposer::parse_tagged;
    use crate::simulators::{simulate, TspInstance};

    fn tsp_traj(task: &TaskInstance, tours: &[Vec<usize>]) -> Trajectory {
        let mut t = Trajectory::new();
        for (i, tour) in tours.iter().enumerate() {
            let s = Solution::Tour(tour.clone());
            let fb = simulate(task, &s).unwrap();
            t.append(TrajectoryEntry::new(i, s, fb, 0.7, Tag::Explore)).unwrap();
        }
        t
    }

    #[test]
    fn every_template_has_its_placeholders() {
        for kind in [
            TaskKind::LinearSystem,
            TaskKind::Tsp,
            TaskKind::ConstitutiveLaw,
            TaskKind::MoleculeProperty,
        ] {
            for v in 1..=TEMPLATE_VARIANTS {
                let t = template(kind, v).unwrap();
                assert!(t.contains("{EXAMPLES}"), "{kind:?} {v}");
                assert!(t.contains(&format!("<{}>", tag_name(kind))), "{kind:?} {v}");
            }
            assert!(template(kind, 0).is_none());
            assert!(template(kind, 6).is_none());
        }
        assert!(template(TaskKind::Tsp, 2).unwrap().contains("{NODES}"));
    }

    #[test]
    fn examples_descend_by_objective() {
        let task = TaskInstance::Tsp(TspInstance::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap());
        let traj = tsp_traj(&task, &[vec![0, 2, 1, 3], vec![0, 1, 2, 3], vec![0, 1, 3, 2]]);
        let p = build_prompt(&task, &traj, ContextPolicy::FullTrajectory);
        let lines: Vec<&str> = p.lines().filter(|l| l.starts_with("<trace>")).collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("<trace>0,1,2,3</trace>"));
        let lens: Vec<f64> = lines
            .iter()
            .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
            .collect();
        assert!(lens.windows(2).all(|w| w[0] >= w[1]));
        assert!(p.contains("0: (0, 0)"));

        let p = build_prompt(&task, &traj, ContextPolicy::LastK(1));
        assert_eq!(p.lines().filter(|l| l.starts_with("<trace>")).count(), 1);
    }

    #[test]
    fn tagged_examples_parse_back() {
        let law =
            crate::domain::LawCandidate::parse("a*eps + b", [("a".into(), 1.25), ("b".into(), -0.5)].into()).unwrap();
        for s in [
            Solution::Tour(vec![0, 3, 1, 2]),
            Solution::LinearParams { w: -2.0, b: 0.5 },
            Solution::LawExpr(law),
            Solution::PropertyValues([("m1".into(), -7.25), ("m2".into(), 1.0)].into()),
        ] {
            assert_eq!(parse_tagged(&tagged(&s), s.kind()).unwrap(), s);
        }
    }

    #[test]
    fn summary_is_capped() {
        let task = TaskInstance::Tsp(TspInstance::random(6, 3).unwrap());
        let tours: Vec<Vec<usize>> = (0..30)
            .map(|i| {
                let mut t: Vec<usize> = (0..6).collect();
                t.rotate_left(i % 6);
                t.swap(1, 2 + i % 4);
                t
            })
            .collect();
        let opts = PromptOptions {
            variant: 1,
            summary_lines: 4,
        };
        let p = build_prompt_with(&task, &tsp_traj(&task, &tours), ContextPolicy::TripleSummary, &opts);
        assert_eq!(
            p.lines()
                .filter(|l| l.contains(" | ") && !l.starts_with("Known"))
                .count(),
            4
        );
    }
}
