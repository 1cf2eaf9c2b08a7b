use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::knowledge::KnowledgeModel;
use crate::controller::{tag_candidate, update_temperature, TemperatureState};
use crate::domain::{
    compute_metric, extract_triples, objective_relation, KnowledgeTriple, MetricValue, RunData, Scored, Solution, Tag,
    TaskKind, Trajectory, TrajectoryEntry, OPTIMUM_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::proposer::{build_prompt_with, make_proposer, request_aux, Proposer};
use crate::simulators::{simulate, AuxQuery, TaskInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Optimum,
    IterationCap,
    Patience,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    /// 1-based; row 1 evaluates the initial solution.
    pub iter: usize,
    pub best_objective: f64,
    pub batch_objectives: Vec<f64>,
    /// Temperature the batch was proposed at.
    pub temperature: f64,
    pub exploit: usize,
    pub explore: usize,
    pub triples_edited: usize,
    pub edit_recall: Option<f64>,
    /// Characters in the prompt the context policy would send.
    pub prompt_chars: usize,
    pub rejected: usize,
    pub aux_answered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub task: TaskKind,
    pub edit_enabled: bool,
    pub dynamic_temperature: bool,
    pub rows: Vec<IterationRow>,
    pub best_solution: Solution,
    pub final_objective: f64,
    pub metric: MetricValue,
    pub solved: bool,
    /// First iteration whose best objective is optimal.
    pub steps: Option<usize>,
    pub stop: StopReason,
    pub edit_layer: Option<usize>,
    pub oracle: Option<f64>,
}

impl RunRecord {
    pub fn best_curve(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.best_objective).collect()
    }
}

fn oracle(task: &TaskInstance) -> Option<f64> {
    match task {
        TaskInstance::Tsp(t) => t.oracle_length,
        _ => None,
    }
}

fn is_optimal(objective: f64, oracle: Option<f64>) -> bool {
    match oracle {
        Some(o) => (objective - o) / o <= OPTIMUM_TOLERANCE,
        None => objective <= OPTIMUM_TOLERANCE,
    }
}

/// Loads the task for `seed` and runs the loop with the configured proposer.
pub fn run_seed(config: &RunConfig, seed: u64, base_dir: &Path) -> Result<RunRecord> {
    config.validate()?;
    let task = config.task.instance(seed, base_dir)?;
    run_on(config, &task, seed)
}

/// [`run_seed`] for the first configured seed.
pub fn run(config: &RunConfig, base_dir: &Path) -> Result<RunRecord> {
    let seed = *config.seeds.first().ok_or(Error::EmptyInput("seeds"))?;
    run_seed(config, seed, base_dir)
}

pub fn run_on(config: &RunConfig, task: &TaskInstance, seed: u64) -> Result<RunRecord> {
    let policy = config.proposer.policy(config.edit_enabled);
    let mut proposer = make_proposer(&config.proposer, seed, policy)?;
    run_with_proposer(config, task, seed, proposer.as_mut())
}

fn evaluate(task: &TaskInstance, s: &Solution) -> Result<Option<crate::domain::Feedback>> {
    match simulate(task, s) {
        Ok(fb) => Ok(Some(fb)),
        Err(Error::Infeasible(_) | Error::InfeasibleLaw { .. } | Error::Eval(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn edit_batch(entry: &TrajectoryEntry, cap: usize) -> Vec<KnowledgeTriple> {
    let mut out = extract_triples(&entry.feedback, &entry.solution).triples;
    out.truncate(cap);
    for alt in &entry.alternatives {
        if out.len() >= cap {
            break;
        }
        let v = crate::domain::format_value(alt.objective);
        if let Ok(t) = KnowledgeTriple::new(alt.solution.descriptor(), objective_relation(&alt.solution), v) {
            out.push(t);
        }
    }
    out
}

/// The full loop: evaluate, distil triples, edit, update the temperature,
/// propose. Stops at the optimum, the iteration cap, or after `patience`
/// iterations without a strictly better objective.
pub fn run_with_proposer(
    config: &RunConfig,
    task: &TaskInstance,
    seed: u64,
    proposer: &mut dyn Proposer,
) -> Result<RunRecord> {
    config.validate()?;
    let at = |iteration: usize| {
        move |e: Error| Error::AtIteration {
            iteration,
            source: Box::new(e),
        }
    };
    let policy = config.proposer.policy(config.edit_enabled);
    let oracle = oracle(task);
    let mut knowledge = if config.edit_enabled {
        Some(KnowledgeModel::prepare(&config.editor, seed).map_err(at(0))?)
    } else {
        None
    };
    let mut state = TemperatureState::new(config.initial_temperature)?;
    let mut traj = Trajectory::new();
    let mut rows: Vec<IterationRow> = Vec::new();
    let mut pending_aux: Vec<AuxQuery> = Vec::new();
    let mut best: Option<(Solution, f64)> = None;
    let mut stale = 0;
    let mut stop = StopReason::IterationCap;

    for iter in 1..=config.max_iterations {
        let temperature = state.temperature;
        let prompt_chars = if traj.is_empty() {
            0
        } else {
            build_prompt_with(task, &traj, policy, &config.proposer.prompt)
                .chars()
                .count()
        };
        let (candidates, mut rejected) = if traj.is_empty() {
            (vec![task.initial_solution()], 0)
        } else {
            let batch = proposer.propose(task, &traj, temperature).map_err(at(iter))?;
            pending_aux.extend(batch.aux_requests);
            (batch.candidates, batch.rejected.len())
        };

        let mut scored: Vec<Scored> = Vec::new();
        let mut feedback = Vec::new();
        for c in candidates {
            match evaluate(task, &c).map_err(at(iter))? {
                Some(fb) => {
                    scored.push(Scored {
                        solution: c,
                        objective: fb.objective,
                    });
                    feedback.push(fb);
                }
                None => rejected += 1,
            }
        }

        let mut row = IterationRow {
            iter,
            best_objective: best.as_ref().map_or(f64::INFINITY, |b| b.1),
            batch_objectives: scored.iter().map(|s| s.objective).collect(),
            temperature,
            exploit: 0,
            explore: 0,
            triples_edited: 0,
            edit_recall: None,
            prompt_chars,
            rejected,
            aux_answered: 0,
        };

        let improved = if scored.is_empty() {
            false
        } else {
            let bi = (0..scored.len())
                .min_by(|&a, &b| scored[a].objective.total_cmp(&scored[b].objective))
                .expect("non-empty");
            let reference = best.as_ref().map_or(&scored[bi].solution, |b| &b.0).clone();
            for s in &scored {
                match tag_candidate(&state, &s.solution, &reference, &config.tags).map_err(at(iter))? {
                    Tag::Exploit => row.exploit += 1,
                    Tag::Explore => row.explore += 1,
                }
            }
            let top = scored.swap_remove(bi);
            let mut fb = feedback.swap_remove(bi);
            let aux = request_aux(task, &std::mem::take(&mut pending_aux)).map_err(at(iter))?;
            row.aux_answered = aux.records.len();
            fb.aux_answers.extend(aux.records);
            let tag = tag_candidate(&state, &top.solution, &reference, &config.tags).map_err(at(iter))?;
            scored.sort_by(|a, b| a.objective.total_cmp(&b.objective));
            let mut entry = TrajectoryEntry::new(traj.len(), top.solution.clone(), fb, temperature, tag);
            entry.alternatives = scored;

            if let Some(k) = knowledge.as_mut() {
                let triples = edit_batch(&entry, config.triple_cap);
                let summary = k.edit_triples(&triples).map_err(at(iter))?;
                row.triples_edited = summary.edited;
                row.edit_recall = (summary.edited > 0).then_some(summary.recall);
            }
            if config.dynamic_temperature {
                state = update_temperature(state, top.objective).map_err(at(iter))?;
            }
            traj.append(entry).map_err(at(iter))?;

            let better = best.as_ref().is_none_or(|b| top.objective < b.1);
            if better {
                best = Some((top.solution, top.objective));
            }
            better
        };
        row.best_objective = best.as_ref().map_or(f64::INFINITY, |b| b.1);
        rows.push(row);

        if iter > 1 {
            stale = if improved { 0 } else { stale + 1 };
        }
        if config.stop_on_optimum && best.as_ref().is_some_and(|b| is_optimal(b.1, oracle)) {
            stop = StopReason::Optimum;
            break;
        }
        if stale >= config.patience {
            stop = StopReason::Patience;
            break;
        }
    }

    let (best_solution, final_objective) =
        best.ok_or_else(|| Error::Infeasible("the initial solution could not be evaluated".into()))?;
    let curve: Vec<f64> = rows.iter().map(|r| r.best_objective).collect();
    let metric = compute_metric(
        task.metric_kind(),
        RunData {
            objectives: &curve,
            oracle,
        },
    )?;
    let steps = curve.iter().position(|o| is_optimal(*o, oracle)).map(|i| i + 1);
    Ok(RunRecord {
        seed,
        task: task.kind(),
        edit_enabled: config.edit_enabled,
        dynamic_temperature: config.dynamic_temperature,
        rows,
        best_solution,
        final_objective,
        metric,
        solved: steps.is_some(),
        steps,
        stop,
        edit_layer: knowledge.map(|k| k.layer),
        oracle,
    })
}
