//! Candidate generation: seeded heuristic proposers for every task kind and
//! a chat-completion client for remote language models.

mod aux;
mod heuristic;
mod parse;
mod prompt;
mod remote;

use serde::{Deserialize, Serialize};

use crate::domain::{Solution, Trajectory};
use crate::error::{Error, Result};
use crate::simulators::{validate, AuxQuery, TaskInstance};

pub use aux::{parse_aux_requests, request_aux, AuxRequests, AuxResponse};
pub use heuristic::{canonical_tour, two_opt_neighbours, HeuristicProposer};
pub use parse::{parse_tagged, TagError};
pub use prompt::{build_prompt, build_prompt_with, template, PromptOptions, TEMPLATE_VARIANTS};
pub use remote::{llm_request, redact, RemoteConfig, RemoteProposer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposerKind {
    HeuristicTsp,
    HeuristicNumeric,
    HeuristicLaw,
    HeuristicMolecule,
    RemoteLlm,
}

/// How much history goes into a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPolicy {
    FullTrajectory,
    LastK(usize),
    TripleSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposerConfig {
    pub kind: ProposerKind,
    #[serde(default = "default_max_candidates")]
    pub max_candidates: usize,
    /// `None` picks the triple summary when editing is on, the full
    /// trajectory otherwise.
    #[serde(default)]
    pub context_policy: Option<ContextPolicy>,
    /// Lattice pitch of the numeric heuristic.
    #[serde(default = "default_step")]
    pub numeric_step: f64,
    #[serde(default)]
    pub prompt: PromptOptions,
    #[serde(default)]
    pub remote: Option<RemoteConfig>,
}

fn default_max_candidates() -> usize {
    8
}
fn default_step() -> f64 {
    1.0
}

impl ProposerConfig {
    pub fn new(kind: ProposerKind) -> Self {
        ProposerConfig {
            kind,
            max_candidates: default_max_candidates(),
            context_policy: None,
            numeric_step: default_step(),
            prompt: PromptOptions::default(),
            remote: None,
        }
    }

    /// Heuristic matching the task kind.
    pub fn heuristic_for(task: &TaskInstance) -> Self {
        Self::new(match task {
            TaskInstance::LinearSystem(_) => ProposerKind::HeuristicNumeric,
            TaskInstance::Tsp(_) => ProposerKind::HeuristicTsp,
            TaskInstance::ConstitutiveLaw(_) => ProposerKind::HeuristicLaw,
            TaskInstance::MoleculeProperty(_) => ProposerKind::HeuristicMolecule,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_candidates == 0 {
            return Err(Error::Config("max_candidates must be at least 1".into()));
        }
        if let Some(ContextPolicy::LastK(0)) = self.context_policy {
            return Err(Error::Config("last_k needs k >= 1".into()));
        }
        if !(self.numeric_step.is_finite() && self.numeric_step > 0.0) {
            return Err(Error::Config(format!(
                "numeric_step must be positive, got {}",
                self.numeric_step
            )));
        }
        self.prompt.validate()?;
        if self.kind == ProposerKind::RemoteLlm {
            match &self.remote {
                Some(r) => r.validate()?,
                None => return Err(Error::Config("remote_llm needs a [proposer.remote] section".into())),
            }
        }
        Ok(())
    }

    pub fn policy(&self, edit_enabled: bool) -> ContextPolicy {
        self.context_policy.unwrap_or(if edit_enabled {
            ContextPolicy::TripleSummary
        } else {
            ContextPolicy::FullTrajectory
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateBatch {
    /// Feasible candidates only.
    pub candidates: Vec<Solution>,
    pub raw_texts: Vec<String>,
    /// (text, reason) for every response or candidate that was dropped.
    pub rejected: Vec<(String, String)>,
    pub aux_requests: Vec<AuxQuery>,
    /// `REQUEST` lines that did not parse.
    pub malformed_requests: usize,
}

impl CandidateBatch {
    /// Keeps `solution` if it passes `validate`, otherwise records why not.
    pub fn offer(&mut self, task: &TaskInstance, solution: Solution, source: String) {
        let report = validate(task, &solution);
        if report.is_feasible() {
            self.candidates.push(solution);
        } else {
            self.rejected.push((source, report.violations.join("; ")));
        }
    }
}

pub trait Proposer {
    fn propose(&mut self, task: &TaskInstance, trajectory: &Trajectory, temperature: f64) -> Result<CandidateBatch>;
}

/// Builds the proposer named by `config`. `seed` drives the heuristics;
/// `policy` selects the prompt context for the remote kind.
pub fn make_proposer(config: &ProposerConfig, seed: u64, policy: ContextPolicy) -> Result<Box<dyn Proposer + Send>> {
    config.validate()?;
    Ok(match config.kind {
        ProposerKind::RemoteLlm => Box::new(RemoteProposer::new(
            config.remote.clone().expect("validated"),
            config.max_candidates,
            policy,
            config.prompt.clone(),
        )),
        kind => Box::new(HeuristicProposer {
            kind,
            seed,
            max_candidates: config.max_candidates,
            step: config.numeric_step,
        }),
    })
}

/// One-shot form of [`Proposer::propose`].
pub fn propose(
    config: &ProposerConfig,
    seed: u64,
    task: &TaskInstance,
    trajectory: &Trajectory,
    temperature: f64,
) -> Result<CandidateBatch> {
    let policy = config.policy(false);
    make_proposer(config, seed, policy)?.propose(task, trajectory, temperature)
}

pub(crate) fn check_inputs(trajectory: &Trajectory, temperature: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&temperature) {
        return Err(Error::Contract(format!("temperature {temperature} outside [0, 1]")));
    }
    if trajectory.is_empty() {
        return Err(Error::EmptyInput("trajectory"));
    }
    Ok(())
}
