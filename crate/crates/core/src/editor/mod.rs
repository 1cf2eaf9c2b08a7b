//! Editable knowledge model: a toy transformer, causal tracing and
//! least-squares MLP editing.

pub mod checkpoint;
pub mod corpus;
pub mod edit;
pub mod linalg;
pub mod model;
pub mod trace;
pub mod train;
pub mod vocab;

pub use corpus::{synthetic_corpus, SyntheticCorpus};
pub use edit::{
    apply_edit, compute_key, compute_value, compute_value_joint, default_lambda, edit_objective, solve_edit,
    value_objective, EditConfig, EditOutcome, KeyValuePair, ValueConfig, ValueResult,
};
pub use linalg::Matrix;
pub use model::{Cache, EditRecord, Hooks, MlpOverride, ModelConfig, ToyTransformer};
pub use trace::{aie, causal_trace, last_subject_profile, select_edit_layer, LayerSelection, TraceGrid};
pub use train::{recall, recall_fact, train_facts, TrainBudget, TrainReport};
pub use vocab::{EditRequest, Fact, Vocab};

/// Seeded model with the documented init scheme.
pub fn init_model(config: ModelConfig, seed: u64) -> crate::Result<ToyTransformer> {
    ToyTransformer::new(config, seed)
}
