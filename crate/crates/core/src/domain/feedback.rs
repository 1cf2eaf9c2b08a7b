use serde::{Deserialize, Serialize};

use crate::simulators::{AuxAnswer, AuxQuery};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxRecord {
    pub query: AuxQuery,
    pub answer: AuxAnswer,
}

/// Observational feedback for one evaluated candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    /// Task loss; finite and non-negative.
    pub objective: f64,
    pub statements: Vec<String>,
    pub aux_answers: Vec<AuxRecord>,
}

impl Feedback {
    pub fn new(objective: f64) -> Self {
        Feedback {
            objective,
            statements: Vec::new(),
            aux_answers: Vec::new(),
        }
    }
}
