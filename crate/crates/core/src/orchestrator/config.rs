use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::{TagThresholds, DEFAULT_INITIAL_TEMPERATURE};
use crate::domain::TaskKind;
use crate::editor::{EditConfig, ModelConfig, TrainBudget};
use crate::error::{Error, Result};
use crate::proposer::ProposerConfig;
use crate::simulators::{brute_force_tsp, load_instance, LinearSystemInstance, TaskInstance, TspInstance};

/// Where the task comes from: a file, or a generator seeded per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Node count for generated tours; generated linear systems ignore it.
    #[serde(default)]
    pub nodes: Option<usize>,
    /// Added to the run seed when generating an instance.
    #[serde(default)]
    pub instance_seed: u64,
}

impl TaskSpec {
    pub fn file(kind: TaskKind, path: impl Into<PathBuf>) -> Self {
        TaskSpec {
            kind,
            path: Some(path.into()),
            nodes: None,
            instance_seed: 0,
        }
    }

    pub fn generated(kind: TaskKind, nodes: Option<usize>) -> Self {
        TaskSpec {
            kind,
            path: None,
            nodes,
            instance_seed: 0,
        }
    }

    /// Instance for `seed`. Tours get their oracle length from exhaustive
    /// search when the file does not supply one.
    pub fn instance(&self, seed: u64, base_dir: &Path) -> Result<TaskInstance> {
        let task = match (&self.path, self.kind) {
            (Some(p), kind) => {
                let p = if p.is_relative() { base_dir.join(p) } else { p.clone() };
                load_instance(&p, kind)?
            }
            (None, TaskKind::Tsp) => {
                let n = self
                    .nodes
                    .ok_or_else(|| Error::Config("generated tours need `nodes`".into()))?;
                TaskInstance::Tsp(TspInstance::random(n, seed.wrapping_add(self.instance_seed))?)
            }
            (None, TaskKind::LinearSystem) => {
                TaskInstance::LinearSystem(LinearSystemInstance::generate(seed.wrapping_add(self.instance_seed)))
            }
            (None, kind) => return Err(Error::Config(format!("{kind} tasks need a `path`"))),
        };
        Ok(match task {
            TaskInstance::Tsp(mut t) if t.oracle_length.is_none() => {
                let (tour, len) = brute_force_tsp(&t)?;
                t.oracle_length = Some(len);
                t.oracle_tour = Some(tour);
                TaskInstance::Tsp(t)
            }
            other => other,
        })
    }
}

/// The knowledge model used for editing inside the loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditorSettings {
    pub model: ModelConfig,
    /// Synthetic background facts the model is trained on before the loop.
    pub corpus_facts: usize,
    pub corpus_relations: usize,
    pub corpus_objects: usize,
    pub train: TrainBudget,
    pub edit: EditConfig,
    /// Fixed edit layer; `None` picks the causal-tracing peak.
    pub layer: Option<usize>,
    /// Tracing noise in units of the embedding std.
    pub trace_noise: f64,
    pub trace_window: usize,
    /// Facts traced for layer selection.
    pub trace_facts: usize,
}

impl Default for EditorSettings {
    fn default() -> Self {
        EditorSettings {
            model: ModelConfig::compact(),
            corpus_facts: 48,
            corpus_relations: 4,
            corpus_objects: 12,
            train: TrainBudget::default(),
            edit: EditConfig::default(),
            layer: None,
            trace_noise: 3.0,
            trace_window: 1,
            trace_facts: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub proposer: ProposerConfig,
    #[serde(default = "yes")]
    pub edit_enabled: bool,
    #[serde(default = "yes")]
    pub dynamic_temperature: bool,
    #[serde(default = "default_temperature")]
    pub initial_temperature: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Most triples edited into the model per iteration.
    #[serde(default = "default_triple_cap")]
    pub triple_cap: usize,
    #[serde(default = "yes")]
    pub stop_on_optimum: bool,
    #[serde(default)]
    pub tags: TagThresholds,
    #[serde(default)]
    pub editor: EditorSettings,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn yes() -> bool {
    true
}
fn default_temperature() -> f64 {
    DEFAULT_INITIAL_TEMPERATURE
}
fn default_iterations() -> usize {
    100
}
fn default_patience() -> usize {
    10
}
fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}
fn default_triple_cap() -> usize {
    4
}

impl RunConfig {
    pub fn new(task: TaskSpec, proposer: ProposerConfig) -> Self {
        RunConfig {
            task,
            proposer,
            edit_enabled: true,
            dynamic_temperature: true,
            initial_temperature: default_temperature(),
            max_iterations: default_iterations(),
            patience: default_patience(),
            seeds: default_seeds(),
            triple_cap: default_triple_cap(),
            stop_on_optimum: true,
            tags: TagThresholds::default(),
            editor: EditorSettings::default(),
            output_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.initial_temperature) {
            return Err(Error::Config(format!(
                "initial_temperature must lie in [0, 1], got {}",
                self.initial_temperature
            )));
        }
        if self.edit_enabled && self.triple_cap == 0 {
            return Err(Error::Config("triple_cap must be at least 1 when editing".into()));
        }
        if self.task.path.is_none() && self.task.kind == TaskKind::Tsp && self.task.nodes.is_none() {
            return Err(Error::Config("set task.path or task.nodes".into()));
        }
        self.editor.model.validate()?;
        self.proposer.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_gets_defaults() {
        let c = RunConfig::from_toml(
            r#"
            [task]
            kind = "tsp"
            nodes = 6
            [proposer]
            kind = "heuristic_tsp"
            "#,
        )
        .unwrap();
        assert_eq!(c.max_iterations, 100);
        assert_eq!(c.patience, 10);
        assert_eq!(c.seeds, vec![0, 1, 2, 3, 4]);
        assert!(c.edit_enabled && c.dynamic_temperature);
        assert_eq!(c.initial_temperature, 0.7);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let base = "[task]\nkind = \"linear_system\"\n[proposer]\nkind = \"heuristic_numeric\"\n";
        for extra in [
            "patience = 0",
            "max_iterations = 0",
            "seeds = []",
            "initial_temperature = 1.5",
            "bogus = 1",
        ] {
            let text = format!("{extra}\n{base}");
            assert!(RunConfig::from_toml(&text).is_err(), "{extra}");
        }
        assert!(RunConfig::from_toml("[task]\nkind = \"tsp\"\n[proposer]\nkind = \"heuristic_tsp\"\n").is_err());
    }

    #[test]
    fn generated_tours_carry_an_oracle() {
        let spec = TaskSpec::generated(TaskKind::Tsp, Some(6));
        let TaskInstance::Tsp(t) = spec.instance(3, Path::new(".")).unwrap() else {
            panic!()
        };
        assert!(t.oracle_length.is_some());
        assert_eq!(spec.instance(3, Path::new(".")).unwrap(), TaskInstance::Tsp(t));
    }
}
