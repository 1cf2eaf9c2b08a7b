//! The optimisation loop, multi-seed sweeps, ablations and reports.

mod config;
mod knowledge;
mod report;
mod run;

pub use config::{EditorSettings, RunConfig, TaskSpec};
pub use knowledge::{EditSummary, KnowledgeModel};
pub use report::{
    arm_name, curves, emit_curves, read_records, reference_loss, run_ablation, score_map, summarize, summary_table,
    sweep, task_reference, write_outputs, write_records, write_summary, CurveRow, Summary, SummaryRow,
};
pub use run::{run, run_on, run_seed, run_with_proposer, IterationRow, RunRecord, StopReason};
