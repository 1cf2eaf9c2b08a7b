use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{Cache, Hooks, ToyTransformer};
use super::vocab::Fact;
use crate::error::{Error, Result};

/// Indirect effects of restoring each (position, layer) hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceGrid {
    /// Clean minus corrupted probability of the object.
    pub te: f64,
    /// `ie[pos][layer]`.
    pub ie: Vec<Vec<f64>>,
    pub sigma: f64,
    pub window: usize,
    pub clean_prob: f64,
    pub corrupted_prob: f64,
    pub last_subject: usize,
}

impl TraceGrid {
    pub fn dims(&self) -> (usize, usize) {
        (self.ie.len(), self.ie.first().map_or(0, Vec::len))
    }
}

/// Gaussian noise of scale `sigma` on the subject positions.
pub fn subject_noise(model: &ToyTransformer, fact: &Fact, sigma: f64, seed: u64) -> Vec<f64> {
    let d = model.config().d_model;
    let len = fact.subject.len() + fact.relation.len();
    let mut noise = vec![0.0; len * d];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in &mut noise[..fact.subject.len() * d] {
        let z: f64 = StandardNormal.sample(&mut rng);
        *x = sigma * z;
    }
    noise
}

/// Object probability of a corrupted run with the clean outputs restored
/// wherever `restore(layer, pos)` holds.
pub fn restored_probability(
    model: &ToyTransformer,
    fact: &Fact,
    clean: &Cache,
    noise: &[f64],
    restore: &dyn Fn(usize, usize) -> bool,
) -> Result<f64> {
    let hooks = Hooks {
        embed_noise: Some(noise),
        restore: Some((clean, restore)),
        ..Hooks::default()
    };
    Ok(model.forward(&fact.prompt(), &hooks)?.last_probs()[fact.object])
}

fn window_bounds(layer: usize, window: usize, n_layers: usize) -> (usize, usize) {
    let lo = layer.saturating_sub(window / 2);
    let hi = (lo + window - 1).min(n_layers - 1);
    (lo, hi)
}

pub fn causal_trace(model: &ToyTransformer, fact: &Fact, sigma: f64, window: usize, seed: u64) -> Result<TraceGrid> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::Contract(format!("noise scale must be >= 0, got {sigma}")));
    }
    if window == 0 {
        return Err(Error::Contract("window must be >= 1".into()));
    }
    model.check_tokens(&[fact.object])?;
    let toks = fact.prompt();
    let clean = model.forward(&toks, &Hooks::default())?;
    let clean_prob = clean.last_probs()[fact.object];
    let noise = subject_noise(model, fact, sigma, seed);
    let corrupted_prob = restored_probability(model, fact, &clean, &noise, &|_, _| false)?;
    let n_layers = model.config().n_layers;
    let mut ie = vec![vec![0.0; n_layers]; toks.len()];
    for (pos, row) in ie.iter_mut().enumerate() {
        for (layer, cell) in row.iter_mut().enumerate() {
            let (lo, hi) = window_bounds(layer, window, n_layers);
            let p = restored_probability(model, fact, &clean, &noise, &|l, t| t == pos && l >= lo && l <= hi)?;
            *cell = p - corrupted_prob;
        }
    }
    Ok(TraceGrid {
        te: clean_prob - corrupted_prob,
        ie,
        sigma,
        window,
        clean_prob,
        corrupted_prob,
        last_subject: fact.last_subject_pos(),
    })
}

/// Element-wise mean of the IE matrices.
pub fn aie(grids: &[TraceGrid]) -> Result<Vec<Vec<f64>>> {
    let first = grids.first().ok_or(Error::EmptyInput("trace grids"))?;
    let (rows, cols) = first.dims();
    let mut out = vec![vec![0.0; cols]; rows];
    for g in grids {
        if g.dims() != (rows, cols) {
            return Err(Error::Contract(format!(
                "grid of {:?} does not match {:?}",
                g.dims(),
                (rows, cols)
            )));
        }
        for (o, r) in out.iter_mut().zip(&g.ie) {
            for (a, b) in o.iter_mut().zip(r) {
                *a += b;
            }
        }
    }
    let n = grids.len() as f64;
    for r in &mut out {
        for a in r {
            *a /= n;
        }
    }
    Ok(out)
}

/// Mean IE per layer at each fact's last subject token.
pub fn last_subject_profile(grids: &[TraceGrid]) -> Result<Vec<f64>> {
    let first = grids.first().ok_or(Error::EmptyInput("trace grids"))?;
    let cols = first.dims().1;
    let mut out = vec![0.0; cols];
    for g in grids {
        let row = &g.ie[g.last_subject];
        if row.len() != cols {
            return Err(Error::Contract("grids disagree on layer count".into()));
        }
        for (a, b) in out.iter_mut().zip(row) {
            *a += b / grids.len() as f64;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSelection {
    pub layer: usize,
    pub profile: Vec<f64>,
    pub mean_te: f64,
}

/// Traces every fact and picks the layer with the largest mean IE at the last
/// subject token (lowest index on ties).
pub fn select_edit_layer(
    model: &ToyTransformer,
    facts: &[Fact],
    sigma: f64,
    window: usize,
    seed: u64,
) -> Result<LayerSelection> {
    let grids = facts
        .iter()
        .enumerate()
        .map(|(i, f)| causal_trace(model, f, sigma, window, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let profile = last_subject_profile(&grids)?;
    let layer = profile
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > profile[b] { i } else { b });
    let mean_te = grids.iter().map(|g| g.te).sum::<f64>() / grids.len() as f64;
    Ok(LayerSelection {
        layer,
        profile,
        mean_te,
    })
}
