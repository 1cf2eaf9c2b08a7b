use std::collections::BTreeMap;

use super::config::EditorSettings;
use crate::domain::KnowledgeTriple;
use crate::editor::{
    apply_edit, init_model, recall_fact, select_edit_layer, synthetic_corpus, train_facts, EditRequest, Fact,
    ToyTransformer, TrainReport, Vocab,
};
use crate::error::Result;

/// The toy model the loop edits triples into, with its vocabulary and the
/// background corpus whose behaviour edits should preserve.
#[derive(Debug, Clone)]
pub struct KnowledgeModel {
    pub model: ToyTransformer,
    pub vocab: Vocab,
    pub corpus: Vec<Fact>,
    pub layer: usize,
    pub train_report: TrainReport,
    settings: EditorSettings,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditSummary {
    pub edited: usize,
    /// Fraction of this batch recalled right after the edit.
    pub recall: f64,
}

impl KnowledgeModel {
    /// Trains a fresh model on a synthetic corpus and picks the edit layer.
    pub fn prepare(settings: &EditorSettings, seed: u64) -> Result<Self> {
        let corpus = synthetic_corpus(
            settings.corpus_facts,
            settings.corpus_relations,
            settings.corpus_objects,
            seed,
        );
        let mut config = settings.model;
        config.vocab_size = corpus.vocab.len();
        let mut model = init_model(config, seed)?;
        let train_report = train_facts(&mut model, &corpus.facts, &settings.train)?;
        let layer = match settings.layer {
            Some(l) => l,
            None => {
                let n = settings.trace_facts.clamp(1, corpus.facts.len().max(1));
                let sigma = settings.trace_noise * model.embedding_std();
                select_edit_layer(&model, &corpus.facts[..n], sigma, settings.trace_window, seed)?.layer
            }
        };
        log::info!(
            "knowledge model: recall {:.3} after {} epochs, edit layer {layer}",
            train_report.recall,
            train_report.epochs
        );
        Ok(KnowledgeModel {
            model,
            vocab: corpus.vocab,
            corpus: corpus.facts,
            layer,
            train_report,
            settings: *settings,
        })
    }

    /// Edits `triples` in one batch; the last triple wins for a repeated
    /// (subject, relation).
    pub fn edit_triples(&mut self, triples: &[KnowledgeTriple]) -> Result<EditSummary> {
        let mut latest: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut order = Vec::new();
        for t in triples {
            let f = self.vocab.fact_from_triple(t);
            let key = (f.subject[0], f.relation[0]);
            if latest.insert(key, f.object).is_none() {
                order.push(key);
            }
        }
        if order.is_empty() {
            return Ok(EditSummary { edited: 0, recall: 1.0 });
        }
        self.model.grow_vocab(self.vocab.len());
        let edits: Vec<EditRequest> = order
            .iter()
            .map(|&(s, r)| {
                let o = latest[&(s, r)];
                Fact::new(vec![s], vec![r], o).map(|f| EditRequest::new(f, o))
            })
            .collect::<Result<_>>()?;
        let out = apply_edit(&mut self.model, &edits, self.layer, &self.corpus, &self.settings.edit)?;
        Ok(EditSummary {
            edited: edits.len(),
            recall: out.recalled as f64 / edits.len() as f64,
        })
    }

    /// Whether the model currently completes `subject relation` with `object`.
    pub fn knows(&self, t: &KnowledgeTriple) -> Result<bool> {
        let (Some(s), Some(r), Some(o)) = (
            self.vocab.get(&t.subject),
            self.vocab.get(&t.relation),
            self.vocab.get(&t.object),
        ) else {
            return Ok(false);
        };
        Ok(recall_fact(&self.model, &Fact::new(vec![s], vec![r], o)?)?.0 == o)
    }
}
