use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Hooks, ToyTransformer};
use super::vocab::Fact;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainBudget {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Training stops once recall and mean loss both reach these.
    pub target_recall: f64,
    pub target_loss: f64,
    pub check_every: usize,
}

impl Default for TrainBudget {
    fn default() -> Self {
        TrainBudget {
            max_epochs: 400,
            learning_rate: 5e-3,
            batch_size: 16,
            target_recall: 1.0,
            target_loss: 0.05,
            check_every: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub recall: f64,
    pub mean_loss: f64,
    pub epochs: usize,
    pub unique_facts: usize,
    /// False when the epoch budget ran out before the targets were met.
    pub reached_target: bool,
}

/// Argmax token and its probability at the final position.
pub fn recall_fact(model: &ToyTransformer, fact: &Fact) -> Result<(usize, f64)> {
    let cache = model.forward(&fact.prompt(), &Hooks::default())?;
    let probs = cache.last_probs();
    let (tok, p) = probs.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |best, (i, &p)| if p > best.1 { (i, p) } else { best },
    );
    Ok((tok, p))
}

/// Fraction of facts whose object is the argmax; duplicates count once.
pub fn recall(model: &ToyTransformer, facts: &[Fact]) -> Result<f64> {
    let facts = dedup(facts);
    if facts.is_empty() {
        return Err(Error::EmptyInput("facts"));
    }
    let mut hit = 0;
    for f in &facts {
        if recall_fact(model, f)?.0 == f.object {
            hit += 1;
        }
    }
    Ok(hit as f64 / facts.len() as f64)
}

pub(crate) fn dedup(facts: &[Fact]) -> Vec<Fact> {
    let mut seen = std::collections::HashSet::new();
    facts.iter().filter(|f| seen.insert(*f)).cloned().collect()
}

fn stats(model: &ToyTransformer, facts: &[Fact]) -> Result<(f64, f64)> {
    let mut hit = 0;
    let mut loss = 0.0;
    for f in facts {
        let cache = model.forward(&f.prompt(), &Hooks::default())?;
        let probs = cache.last_probs();
        loss -= probs[f.object].max(1e-300).ln();
        let best = probs
            .iter()
            .enumerate()
            .fold(0, |b, (i, &p)| if p > probs[b] { i } else { b });
        if best == f.object {
            hit += 1;
        }
    }
    let n = facts.len() as f64;
    Ok((hit as f64 / n, loss / n))
}

/// Adam on next-token cross-entropy of each fact's object. Mini-batch order
/// is shuffled from the model seed.
pub fn train_facts(model: &mut ToyTransformer, corpus: &[Fact], budget: &TrainBudget) -> Result<TrainReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("training corpus"));
    }
    if budget.batch_size == 0 || budget.check_every == 0 {
        return Err(Error::Config("batch_size and check_every must be >= 1".into()));
    }
    let facts = dedup(corpus);
    for f in &facts {
        model.check_tokens(&f.prompt())?;
        model.check_tokens(&[f.object])?;
    }
    let n = model.params().len();
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let mut grads = vec![0.0; n];
    let mut step = 0i32;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed());
    rng.set_stream(0x7261_696e);
    let mut order: Vec<usize> = (0..facts.len()).collect();

    let (mut rec, mut loss) = stats(model, &facts)?;
    let mut epochs = 0;
    let done = |rec: f64, loss: f64| rec >= budget.target_recall && loss <= budget.target_loss;
    while epochs < budget.max_epochs && !done(rec, loss) {
        order.shuffle(&mut rng);
        for chunk in order.chunks(budget.batch_size) {
            grads.fill(0.0);
            for &i in chunk {
                let f = &facts[i];
                let toks = f.prompt();
                let cache = model.forward(&toks, &Hooks::default())?;
                let mut dlog = cache.last_probs().to_vec();
                dlog[f.object] -= 1.0;
                model.backward(&toks, &cache, &Hooks::default(), &dlog, Some(&mut grads))?;
            }
            step += 1;
            let inv = 1.0 / chunk.len() as f64;
            let c1 = 1.0 - f64::powi(b1, step);
            let c2 = 1.0 - f64::powi(b2, step);
            let lr = budget.learning_rate;
            for ((p, g), (a, b)) in model
                .params_mut()
                .iter_mut()
                .zip(&grads)
                .zip(m1.iter_mut().zip(m2.iter_mut()))
            {
                let g = g * inv;
                *a = b1 * *a + (1.0 - b1) * g;
                *b = b2 * *b + (1.0 - b2) * g * g;
                *p -= lr * (*a / c1) / ((*b / c2).sqrt() + eps);
            }
        }
        epochs += 1;
        if epochs % budget.check_every == 0 || epochs == budget.max_epochs {
            (rec, loss) = stats(model, &facts)?;
        }
    }
    if !model.params().iter().all(|p| p.is_finite()) {
        return Err(Error::NonFinite("model parameters after training"));
    }
    let reached_target = done(rec, loss);
    if !reached_target {
        log::warn!("training budget exhausted at recall {rec:.3}, loss {loss:.4}");
    }
    Ok(TrainReport {
        recall: rec,
        mean_loss: loss,
        epochs,
        unique_facts: facts.len(),
        reached_target,
    })
}
