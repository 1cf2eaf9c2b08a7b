//! Domain types shared by every stage of the loop.

mod feedback;
mod metric;
mod solution;
mod trajectory;
mod triple;

pub use feedback::{AuxRecord, Feedback};
pub use metric::{compute_metric, MetricValue, RunData, OPTIMUM_TOLERANCE};
pub use solution::{format_value, node_label, LawCandidate, MetricKind, Solution, TaskKind};
pub use trajectory::{read_records, write_records, Scored, Tag, Trajectory, TrajectoryEntry, TrajectoryRecord};
pub use triple::{
    aux_to_triple, extract_triples, objective_relation, statement_to_triple, KnowledgeTriple, StatementTemplate,
    TripleExtraction, REL_ABS_ERROR, REL_EQUAL, REL_GREATER, REL_HAS_DISTANCE, REL_HAS_LOSS, REL_LESS, REL_RESIDUAL,
    REL_STRESS, STATEMENT_TEMPLATES,
};
