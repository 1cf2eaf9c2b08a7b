use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{axpy, cholesky, cholesky_solve, outer_acc, Matrix};
use super::model::{EditRecord, Hooks, MlpOverride, ToyTransformer};
use super::train::{dedup, recall_fact};
use super::vocab::{EditRequest, Fact};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyValuePair {
    pub key: Vec<f64>,
    pub value: Vec<f64>,
}

impl KeyValuePair {
    pub fn new(key: Vec<f64>, value: Vec<f64>) -> Result<Self> {
        if !key.iter().chain(&value).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("key/value pair"));
        }
        Ok(KeyValuePair { key, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueConfig {
    pub max_steps: usize,
    pub step_size: f64,
    pub target_prob: f64,
}

impl Default for ValueConfig {
    fn default() -> Self {
        ValueConfig {
            max_steps: 100,
            step_size: 0.5,
            target_prob: 0.99,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    pub value: ValueConfig,
    /// Corpus keys sampled into the preservation set.
    pub preserve_sample: usize,
    /// Ridge strength relative to `trace(S S^T) / d_mlp`.
    pub ridge_scale: f64,
    pub seed: u64,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            value: ValueConfig::default(),
            preserve_sample: 256,
            ridge_scale: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueResult {
    pub value: Vec<f64>,
    /// Smallest target probability reached with `value` substituted.
    pub probability: f64,
    pub steps: usize,
    pub converged: bool,
}

/// MLP hidden activation at the last subject token of `layer`.
pub fn compute_key(model: &ToyTransformer, layer: usize, fact: &Fact) -> Result<Vec<f64>> {
    if layer >= model.config().n_layers {
        return Err(Error::OutOfRange(format!("layer {layer}")));
    }
    if fact.subject.is_empty() {
        return Err(Error::EmptyInput("fact subject"));
    }
    let hooks = Hooks {
        stop_after_hidden: Some(layer),
        ..Hooks::default()
    };
    let cache = model.forward(&fact.subject, &hooks)?;
    Ok(cache.mlp_hidden(layer, fact.last_subject_pos()).to_vec())
}

fn check_group(model: &ToyTransformer, layer: usize, targets: &[(Fact, usize)]) -> Result<()> {
    let (first, _) = targets.first().ok_or(Error::EmptyInput("value targets"))?;
    if layer >= model.config().n_layers {
        return Err(Error::OutOfRange(format!("layer {layer}")));
    }
    for (f, o) in targets {
        if f.subject != first.subject {
            return Err(Error::Contract("joint value targets must share a subject".into()));
        }
        model.check_tokens(&f.prompt())?;
        model.check_tokens(&[*o])?;
    }
    Ok(())
}

/// Sum of target log-probabilities with `v` substituted as the MLP output,
/// its gradient in `v`, and the smallest target probability.
pub fn value_objective(
    model: &ToyTransformer,
    layer: usize,
    targets: &[(Fact, usize)],
    v: &[f64],
) -> Result<(f64, Vec<f64>, f64)> {
    let mut total = 0.0;
    let mut grad = vec![0.0; v.len()];
    let mut min_p = f64::INFINITY;
    for (f, o) in targets {
        let toks = f.prompt();
        let hooks = Hooks {
            mlp_override: Some(MlpOverride {
                layer,
                pos: f.last_subject_pos(),
                value: v,
            }),
            ..Hooks::default()
        };
        let cache = model.forward(&toks, &hooks)?;
        let probs = cache.last_probs();
        let p = probs[*o];
        total += p.max(1e-300).ln();
        min_p = min_p.min(p);
        let mut dlog: Vec<f64> = probs.iter().map(|p| -p).collect();
        dlog[*o] += 1.0;
        let g = model
            .backward(&toks, &cache, &hooks, &dlog, None)?
            .ok_or_else(|| Error::Model("override gradient missing".into()))?;
        axpy(1.0, &g, &mut grad);
    }
    Ok((total, grad, min_p))
}

/// Adam ascent on the target log-probabilities over the substituted MLP
/// output, starting from the model's own output. All targets share a subject.
pub fn compute_value_joint(
    model: &ToyTransformer,
    layer: usize,
    targets: &[(Fact, usize)],
    cfg: &ValueConfig,
) -> Result<ValueResult> {
    check_group(model, layer, targets)?;
    let key = compute_key(model, layer, &targets[0].0)?;
    let mut v = model.mlp_output(layer, &key)?;
    let mut best = ValueResult {
        value: v.clone(),
        probability: f64::NEG_INFINITY,
        steps: 0,
        converged: false,
    };
    let mut m1 = vec![0.0; v.len()];
    let mut m2 = vec![0.0; v.len()];
    for step in 0..=cfg.max_steps {
        let (_, grad, p) = value_objective(model, layer, targets, &v)?;
        if p > best.probability {
            best.value = v.clone();
            best.probability = p;
        }
        best.steps = step;
        if p >= cfg.target_prob {
            best.converged = true;
            break;
        }
        if step == cfg.max_steps {
            break;
        }
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - f64::powi(0.9, t), 1.0 - f64::powi(0.999, t));
        for ((x, g), (a, b)) in v.iter_mut().zip(&grad).zip(m1.iter_mut().zip(m2.iter_mut())) {
            *a = 0.9 * *a + 0.1 * g;
            *b = 0.999 * *b + 0.001 * g * g;
            *x += cfg.step_size * (*a / c1) / ((*b / c2).sqrt() + 1e-8);
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("value vector"));
        }
    }
    Ok(best)
}

pub fn compute_value(
    model: &ToyTransformer,
    layer: usize,
    fact: &Fact,
    target: usize,
    cfg: &ValueConfig,
) -> Result<ValueResult> {
    compute_value_joint(model, layer, &[(fact.clone(), target)], cfg)
}

fn check_pairs(pairs: &[KeyValuePair], keys: usize, values: usize) -> Result<()> {
    for p in pairs {
        if p.key.len() != keys || p.value.len() != values {
            return Err(Error::Contract(format!(
                "key/value of length {}/{} for a {values}x{keys} matrix",
                p.key.len(),
                p.value.len()
            )));
        }
        if !p.key.iter().chain(&p.value).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("key/value pair"));
        }
    }
    Ok(())
}

/// Default ridge: `scale * trace(S S^T) / d_mlp`.
pub fn default_lambda(pairs: &[&KeyValuePair], d_mlp: usize, scale: f64) -> f64 {
    let tr: f64 = pairs.iter().map(|p| p.key.iter().map(|x| x * x).sum::<f64>()).sum();
    scale * tr / d_mlp as f64
}

/// Ridge least squares pulled toward the current matrix:
/// `W1 = (O S^T + lambda W)(S S^T + lambda I)^-1`, which minimizes
/// `sum ||W1 s_i - o_i||^2 + lambda ||W1 - W||_F^2`.
pub fn solve_edit(w: &Matrix, preserved: &[KeyValuePair], new: &[KeyValuePair], lambda: Option<f64>) -> Result<Matrix> {
    let (d, m) = (w.rows, w.cols);
    if !w.is_finite() {
        return Err(Error::NonFinite("weight matrix"));
    }
    check_pairs(preserved, m, d)?;
    check_pairs(new, m, d)?;
    let all: Vec<&KeyValuePair> = preserved.iter().chain(new).collect();
    let lambda = lambda.unwrap_or_else(|| default_lambda(&all, m, 1e-4));
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Contract(format!("ridge must be >= 0, got {lambda}")));
    }
    if all.is_empty() || (lambda == 0.0 && all.iter().all(|p| p.key.iter().all(|x| *x == 0.0))) {
        return Ok(w.clone());
    }
    let mut a = Matrix::zeros(m, m);
    let mut b = Matrix::zeros(d, m);
    for p in &all {
        outer_acc(&mut a.data, &p.key, &p.key);
        outer_acc(&mut b.data, &p.value, &p.key);
    }
    for i in 0..m {
        a.data[i * m + i] += lambda;
    }
    axpy(lambda, &w.data, &mut b.data);
    let l = cholesky(&a)?;
    let mut out = b;
    for r in 0..d {
        cholesky_solve(&l, &mut out.data[r * m..(r + 1) * m]);
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("edited weight matrix"));
    }
    Ok(out)
}

/// The quantity `solve_edit` minimizes.
pub fn edit_objective(w1: &Matrix, w: &Matrix, pairs: &[KeyValuePair], lambda: f64) -> f64 {
    let mut total = 0.0;
    for p in pairs {
        let y = w1.mul_vec(&p.key);
        total += y.iter().zip(&p.value).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    let reg: f64 = w1.data.iter().zip(&w.data).map(|(a, b)| (a - b) * (a - b)).sum();
    total + lambda * reg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditOutcome {
    pub layer: usize,
    pub n_new: usize,
    pub n_preserved: usize,
    pub lambda: f64,
    /// Per subject group: smallest target probability the value reached.
    pub value_probs: Vec<f64>,
    /// Edits whose new object is the argmax after the update.
    pub recalled: usize,
}

/// Writes a batch of edits into `W_out` of `layer`.
///
/// Edits sharing a subject, together with earlier edits of that subject,
/// get one jointly optimized value. Preserved pairs are `(k, W k)` for the
/// keys of previously edited facts plus a seeded sample of corpus keys taken
/// at every prompt position.
pub fn apply_edit(
    model: &mut ToyTransformer,
    edits: &[EditRequest],
    layer: usize,
    corpus: &[Fact],
    cfg: &EditConfig,
) -> Result<EditOutcome> {
    if edits.is_empty() {
        return Err(Error::EmptyInput("edit batch"));
    }
    if layer >= model.config().n_layers {
        return Err(Error::OutOfRange(format!("layer {layer}")));
    }
    for e in edits {
        model.check_tokens(&e.fact.prompt())?;
        model.check_tokens(&[e.new_object])?;
    }

    // Latest target per (subject, relation) across all batches so far.
    let mut targets: BTreeMap<(Vec<usize>, Vec<usize>), usize> = BTreeMap::new();
    for rec in model.provenance() {
        for (s, r, o) in &rec.edits {
            targets.insert((s.clone(), r.clone()), *o);
        }
    }
    let mut batch_subjects: Vec<Vec<usize>> = Vec::new();
    for e in edits {
        targets.insert((e.fact.subject.clone(), e.fact.relation.clone()), e.new_object);
        if !batch_subjects.contains(&e.fact.subject) {
            batch_subjects.push(e.fact.subject.clone());
        }
    }
    let edited_subjects: BTreeSet<Vec<usize>> = targets.keys().map(|(s, _)| s.clone()).collect();

    let w = model.mlp_out_weight(layer)?;
    let mut new_pairs = Vec::new();
    let mut value_probs = Vec::new();
    for subj in &batch_subjects {
        let group: Vec<(Fact, usize)> = targets
            .iter()
            .filter(|((s, _), _)| s == subj)
            .map(|((s, r), o)| Fact::new(s.clone(), r.clone(), *o).map(|f| (f, *o)))
            .collect::<Result<_>>()?;
        let key = compute_key(model, layer, &group[0].0)?;
        let res = compute_value_joint(model, layer, &group, &cfg.value)?;
        value_probs.push(res.probability);
        new_pairs.push(KeyValuePair::new(key, res.value)?);
    }

    // Keys at every prompt position, deduplicated by value. Subject positions
    // of edited subjects are left to the new and previously edited pairs.
    let bits = |k: &[f64]| k.iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
    let mut seen: HashSet<Vec<u64>> = new_pairs.iter().map(|p| bits(&p.key)).collect();
    let hooks = Hooks {
        stop_after_hidden: Some(layer),
        ..Hooks::default()
    };
    let mut position_keys = |f: &Fact, skip_subject: bool, out: &mut Vec<Vec<f64>>| -> Result<()> {
        let cache = model.forward(&f.prompt(), &hooks)?;
        let start = if skip_subject { f.subject.len() } else { 0 };
        for pos in start..f.subject.len() + f.relation.len() {
            let k = cache.mlp_hidden(layer, pos);
            if seen.insert(bits(k)) {
                out.push(k.to_vec());
            }
        }
        Ok(())
    };
    let mut mandatory = Vec::new();
    for subj in edited_subjects.iter().filter(|s| !batch_subjects.contains(s)) {
        let f = Fact::new(subj.clone(), vec![0], 0)?;
        position_keys(&Fact { relation: vec![], ..f }, false, &mut mandatory)?;
    }
    for (s, r) in targets.keys() {
        position_keys(&Fact::new(s.clone(), r.clone(), 0)?, true, &mut mandatory)?;
    }
    let mut pool = Vec::new();
    for f in dedup(corpus) {
        let skip = edited_subjects.contains(&f.subject);
        position_keys(&f, skip, &mut pool)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(model.provenance().len() as u64);
    let take = cfg.preserve_sample.min(pool.len());
    let mut picked: Vec<usize> = sample(&mut rng, pool.len(), take).into_vec();
    picked.sort_unstable();
    let mut preserved = Vec::new();
    for key in mandatory
        .into_iter()
        .chain(picked.into_iter().map(|i| std::mem::take(&mut pool[i])))
    {
        let value = w.mul_vec(&key);
        preserved.push(KeyValuePair::new(key, value)?);
    }

    let all: Vec<&KeyValuePair> = preserved.iter().chain(&new_pairs).collect();
    let lambda = default_lambda(&all, model.config().d_mlp, cfg.ridge_scale);
    let w1 = solve_edit(&w, &preserved, &new_pairs, Some(lambda))?;
    model.set_mlp_out_weight(layer, &w1)?;
    model.push_provenance(EditRecord {
        layer,
        edits: edits
            .iter()
            .map(|e| (e.fact.subject.clone(), e.fact.relation.clone(), e.new_object))
            .collect(),
        n_preserved: preserved.len(),
        lambda,
    });

    let mut recalled = 0;
    for e in edits {
        if recall_fact(model, &e.fact)?.0 == e.new_object {
            recalled += 1;
        }
    }
    Ok(EditOutcome {
        layer,
        n_new: new_pairs.len(),
        n_preserved: preserved.len(),
        lambda,
        value_probs,
        recalled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    fn sample_matrix(rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn one_point_interpolation() {
        let w = sample_matrix(3, 4);
        let o = vec![1.0, -2.0, 0.5];
        let w1 = solve_edit(
            &w,
            &[],
            &[KeyValuePair::new(unit(4, 0), o.clone()).unwrap()],
            Some(1e-14),
        )
        .unwrap();
        let got = w1.mul_vec(&unit(4, 0));
        for (a, b) in got.iter().zip(&o) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_decomposition() {
        let w = sample_matrix(3, 5);
        let preserved: Vec<_> = (0..3)
            .map(|i| KeyValuePair::new(unit(5, i), w.mul_vec(&unit(5, i))).unwrap())
            .collect();
        let o = vec![4.0, 4.0, -4.0];
        let new = [KeyValuePair::new(unit(5, 4), o.clone()).unwrap()];
        let w1 = solve_edit(&w, &preserved, &new, Some(1e-12)).unwrap();
        for p in preserved.iter().chain(&new) {
            let y = w1.mul_vec(&p.key);
            for (a, b) in y.iter().zip(&p.value) {
                assert!((a - b).abs() < 1e-8);
            }
        }
        // The untouched direction keeps its old image.
        let y = w1.mul_vec(&unit(5, 3));
        let y0 = w.mul_vec(&unit(5, 3));
        for (a, b) in y.iter().zip(&y0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let w = sample_matrix(2, 3);
        let bad = KeyValuePair {
            key: vec![f64::NAN, 0.0, 0.0],
            value: vec![0.0, 0.0],
        };
        assert!(solve_edit(&w, &[], &[bad], None).is_err());
        let short = KeyValuePair::new(vec![1.0], vec![0.0, 0.0]).unwrap();
        assert!(solve_edit(&w, &[short], &[], None).is_err());
        assert!(KeyValuePair::new(vec![f64::INFINITY], vec![]).is_err());
        assert_eq!(solve_edit(&w, &[], &[], None).unwrap(), w);
    }
}
