//! A small pre-norm decoder-only transformer in f64 with hand-written
//! backprop.
//!
//! Parameters live in one flat buffer. Block order: token embeddings
//! (vocab x d), positional embeddings (max_len x d), then per layer
//! `ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w_in (d_mlp x d), w_out (d x d_mlp)`,
//! then `lnf_g, lnf_b` and the output head (vocab x d). Matrices are row-major.
//! Linear maps carry no bias. The MLP nonlinearity is tanh-approximated GELU.
//!
//! Each block runs its MLP sublayer before attention:
//! `m = x + mlp(ln2(x))`, `y = m + attn(ln1(m))`. A token's first MLP therefore
//! sees only that token, and everything later positions learn about it passes
//! through its MLP outputs.
//!
//! Init: matrices draw from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), embeddings from
//! U(-1, 1), norm gains are 1 and norm biases 0. Rows belonging to a token
//! (its embedding and head row) draw from a ChaCha stream keyed by the token
//! id, so growing the vocabulary never disturbs existing rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{axpy, dot, matvec, matvec_t_acc, outer_acc, Matrix};
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 2,
            d_model: 64,
            n_layers: 4,
            n_heads: 2,
            d_mlp: 256,
            max_len: 64,
        }
    }
}

impl ModelConfig {
    /// Smaller model used inside the optimization loop.
    pub fn compact() -> Self {
        ModelConfig {
            d_model: 32,
            n_layers: 2,
            d_mlp: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("invalid model dims: {m}")));
        if self.d_model == 0 {
            return bad("d_model must be >= 1");
        }
        if self.n_layers == 0 {
            return bad("n_layers must be >= 1");
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be >= 2");
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("n_heads must divide d_model");
        }
        if self.d_mlp == 0 {
            return bad("d_mlp must be >= 1");
        }
        if self.max_len == 0 {
            return bad("max_len must be >= 1");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_in: usize,
    pub w_out: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub tok: usize,
    pub pos: usize,
    pub layers: Vec<LayerOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub head: usize,
    pub total: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let (d, m) = (c.d_model, c.d_mlp);
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let tok = take(c.vocab_size * d);
        let pos = take(c.max_len * d);
        let layers = (0..c.n_layers)
            .map(|_| LayerOffsets {
                ln1_g: take(d),
                ln1_b: take(d),
                wq: take(d * d),
                wk: take(d * d),
                wv: take(d * d),
                wo: take(d * d),
                ln2_g: take(d),
                ln2_b: take(d),
                w_in: take(m * d),
                w_out: take(d * m),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        let head = take(c.vocab_size * d);
        Layout {
            tok,
            pos,
            layers,
            lnf_g,
            lnf_b,
            head,
            total: at,
        }
    }
}

/// Replaces the MLP output at one (layer, position) with a fixed vector.
#[derive(Debug, Clone, Copy)]
pub struct MlpOverride<'a> {
    pub layer: usize,
    pub pos: usize,
    pub value: &'a [f64],
}

/// Decides which (layer, position) outputs get restored from a clean run.
pub type RestoreFn<'a> = &'a dyn Fn(usize, usize) -> bool;

#[derive(Clone, Copy, Default)]
pub struct Hooks<'a> {
    /// Added to the input embeddings, `len * d_model` values.
    pub embed_noise: Option<&'a [f64]>,
    /// Layer outputs copied from a clean cache where the predicate holds.
    pub restore: Option<(&'a Cache, RestoreFn<'a>)>,
    pub mlp_override: Option<MlpOverride<'a>>,
    /// Stop once the MLP hidden activations of this layer are computed.
    pub stop_after_hidden: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct LayerCache {
    x: Vec<f64>,
    ln1_out: Vec<f64>,
    ln1_xhat: Vec<f64>,
    ln1_rstd: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    att: Vec<f64>,
    z: Vec<f64>,
    ln2_out: Vec<f64>,
    ln2_xhat: Vec<f64>,
    ln2_rstd: Vec<f64>,
    pre: Vec<f64>,
    hid: Vec<f64>,
    y: Vec<f64>,
}

/// Activations of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    len: usize,
    d_model: usize,
    d_mlp: usize,
    vocab: usize,
    layers: Vec<LayerCache>,
    lnf_out: Vec<f64>,
    lnf_xhat: Vec<f64>,
    lnf_rstd: Vec<f64>,
    probs: Vec<f64>,
}

impl Cache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Output distribution at `pos`. Empty when the pass stopped early.
    pub fn probs_at(&self, pos: usize) -> &[f64] {
        if self.probs.is_empty() {
            return &[];
        }
        &self.probs[pos * self.vocab..(pos + 1) * self.vocab]
    }

    pub fn last_probs(&self) -> &[f64] {
        self.probs_at(self.len - 1)
    }

    pub fn layer_output(&self, layer: usize, pos: usize) -> &[f64] {
        &self.layers[layer].y[pos * self.d_model..(pos + 1) * self.d_model]
    }

    pub fn mlp_hidden(&self, layer: usize, pos: usize) -> &[f64] {
        &self.layers[layer].hid[pos * self.d_mlp..(pos + 1) * self.d_mlp]
    }
}

/// Record of one applied edit batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub layer: usize,
    /// `(subject tokens, relation tokens, new object)` per edit.
    pub edits: Vec<(Vec<usize>, Vec<usize>, usize)>,
    pub n_preserved: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformer {
    config: ModelConfig,
    seed: u64,
    params: Vec<f64>,
    layout: Layout,
    provenance: Vec<EditRecord>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], out: &mut [f64], xhat: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mu) * rstd;
        out[i] = g[i] * xhat[i] + b[i];
    }
    rstd
}

/// Adds the input gradient of a layer norm to `dx`, and gain/bias gradients
/// to `dg`/`db` when given.
fn layer_norm_back(
    dout: &[f64],
    xhat: &[f64],
    rstd: f64,
    g: &[f64],
    dx: &mut [f64],
    dgb: Option<(&mut [f64], &mut [f64])>,
) {
    let n = dout.len() as f64;
    if let Some((dg, db)) = dgb {
        for i in 0..dout.len() {
            dg[i] += dout[i] * xhat[i];
            db[i] += dout[i];
        }
    }
    let mut mean_d = 0.0;
    let mut mean_dx = 0.0;
    for i in 0..dout.len() {
        let dh = dout[i] * g[i];
        mean_d += dh;
        mean_dx += dh * xhat[i];
    }
    mean_d /= n;
    mean_dx /= n;
    for i in 0..dout.len() {
        let dh = dout[i] * g[i];
        dx[i] += rstd * (dh - mean_d - xhat[i] * mean_dx);
    }
}

/// Splits a gradient buffer into a mutable sub-slice.
fn seg<'a>(g: &'a mut Option<&mut [f64]>, off: usize, len: usize) -> Option<&'a mut [f64]> {
    g.as_deref_mut().map(|g| &mut g[off..off + len])
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

impl ToyTransformer {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut m = ToyTransformer {
            config,
            seed,
            params: vec![0.0; layout.total],
            layout,
            provenance: Vec::new(),
        };
        m.init_shared();
        for t in 0..config.vocab_size {
            m.init_token_rows(t);
        }
        Ok(m)
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        seed: u64,
        params: Vec<f64>,
        provenance: Vec<EditRecord>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Model(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(ToyTransformer {
            config,
            seed,
            params,
            layout,
            provenance,
        })
    }

    fn init_shared(&mut self) {
        let c = self.config;
        let (d, m) = (c.d_model, c.d_mlp);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let lay = self.layout.clone();
        let p = &mut self.params;
        let mut fill = |off: usize, n: usize, a: f64, rng: &mut ChaCha8Rng| {
            for x in &mut p[off..off + n] {
                *x = rng.random_range(-a..a);
            }
        };
        fill(lay.pos, c.max_len * d, 1.0, &mut rng);
        let sd = 1.0 / (d as f64).sqrt();
        let sm = 1.0 / (m as f64).sqrt();
        for l in &lay.layers {
            fill(l.wq, d * d, sd, &mut rng);
            fill(l.wk, d * d, sd, &mut rng);
            fill(l.wv, d * d, sd, &mut rng);
            fill(l.wo, d * d, sd, &mut rng);
            fill(l.w_in, m * d, sd, &mut rng);
            fill(l.w_out, d * m, sm, &mut rng);
        }
        for l in &lay.layers {
            p[l.ln1_g..l.ln1_g + d].fill(1.0);
            p[l.ln2_g..l.ln2_g + d].fill(1.0);
        }
        p[lay.lnf_g..lay.lnf_g + d].fill(1.0);
    }

    fn init_token_rows(&mut self, token: usize) {
        let d = self.config.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(token as u64 + 1);
        let sd = 1.0 / (d as f64).sqrt();
        let tok = self.layout.tok + token * d;
        for x in &mut self.params[tok..tok + d] {
            *x = rng.random_range(-1.0..1.0);
        }
        let head = self.layout.head + token * d;
        for x in &mut self.params[head..head + d] {
            *x = rng.random_range(-sd..sd);
        }
    }

    /// Enlarges the vocabulary; existing parameters are untouched.
    pub fn grow_vocab(&mut self, vocab_size: usize) {
        let old = self.config.vocab_size;
        if vocab_size <= old {
            return;
        }
        let d = self.config.d_model;
        let mut config = self.config;
        config.vocab_size = vocab_size;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let old_lay = &self.layout;
        params[layout.tok..layout.tok + old * d].copy_from_slice(&self.params[old_lay.tok..old_lay.tok + old * d]);
        let mid = old_lay.pos..old_lay.head;
        params[layout.pos..layout.head].copy_from_slice(&self.params[mid]);
        params[layout.head..layout.head + old * d].copy_from_slice(&self.params[old_lay.head..old_lay.head + old * d]);
        self.config = config;
        self.layout = layout;
        self.params = params;
        for t in old..vocab_size {
            self.init_token_rows(t);
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn provenance(&self) -> &[EditRecord] {
        &self.provenance
    }

    pub(crate) fn push_provenance(&mut self, rec: EditRecord) {
        self.provenance.push(rec);
    }

    /// Standard deviation of the token embedding entries.
    pub fn embedding_std(&self) -> f64 {
        let n = self.config.vocab_size * self.config.d_model;
        let e = &self.params[self.layout.tok..self.layout.tok + n];
        let mu = e.iter().sum::<f64>() / n as f64;
        (e.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64).sqrt()
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.config.n_layers {
            return Err(Error::OutOfRange(format!(
                "layer {layer} (model has {} layers)",
                self.config.n_layers
            )));
        }
        Ok(())
    }

    /// MLP output matrix (d_model x d_mlp) of `layer`.
    pub fn mlp_out_weight(&self, layer: usize) -> Result<Matrix> {
        self.check_layer(layer)?;
        let (d, m) = (self.config.d_model, self.config.d_mlp);
        let off = self.layout.layers[layer].w_out;
        Matrix::from_vec(d, m, self.params[off..off + d * m].to_vec())
    }

    pub fn set_mlp_out_weight(&mut self, layer: usize, w: &Matrix) -> Result<()> {
        self.check_layer(layer)?;
        let (d, m) = (self.config.d_model, self.config.d_mlp);
        if w.rows != d || w.cols != m {
            return Err(Error::Contract(format!(
                "W_out must be {d}x{m}, got {}x{}",
                w.rows, w.cols
            )));
        }
        if !w.is_finite() {
            return Err(Error::NonFinite("edited weight matrix"));
        }
        let off = self.layout.layers[layer].w_out;
        self.params[off..off + d * m].copy_from_slice(&w.data);
        Ok(())
    }

    pub fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("token sequence"));
        }
        if tokens.len() > self.config.max_len {
            return Err(Error::OutOfRange(format!(
                "sequence of {} tokens exceeds max_len {}",
                tokens.len(),
                self.config.max_len
            )));
        }
        if let Some(t) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::OutOfRange(format!(
                "token {t} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    pub fn forward(&self, tokens: &[usize], hooks: &Hooks) -> Result<Cache> {
        self.check_tokens(tokens)?;
        let c = &self.config;
        let (d, m, nh) = (c.d_model, c.d_mlp, c.n_heads);
        let hd = c.head_dim();
        let t_len = tokens.len();
        if let Some(noise) = hooks.embed_noise {
            if noise.len() != t_len * d {
                return Err(Error::Contract("noise length must be len * d_model".into()));
            }
        }
        if let Some(o) = hooks.mlp_override {
            self.check_layer(o.layer)?;
            if o.pos >= t_len || o.value.len() != d {
                return Err(Error::Contract("MLP override out of shape".into()));
            }
        }
        let p = &self.params;
        let lay = &self.layout;
        let scale = 1.0 / (hd as f64).sqrt();

        let mut x = vec![0.0; t_len * d];
        for (t, &tok) in tokens.iter().enumerate() {
            let row = &mut x[t * d..(t + 1) * d];
            row.copy_from_slice(&p[lay.tok + tok * d..lay.tok + (tok + 1) * d]);
            axpy(1.0, &p[lay.pos + t * d..lay.pos + (t + 1) * d], row);
        }
        if let Some(noise) = hooks.embed_noise {
            axpy(1.0, noise, &mut x);
        }

        let mut cache = Cache {
            len: t_len,
            d_model: d,
            d_mlp: m,
            vocab: c.vocab_size,
            ..Cache::default()
        };

        for (li, o) in lay.layers.iter().enumerate() {
            let mut lc = LayerCache {
                ln1_out: vec![0.0; t_len * d],
                ln1_xhat: vec![0.0; t_len * d],
                ln1_rstd: vec![0.0; t_len],
                q: vec![0.0; t_len * d],
                k: vec![0.0; t_len * d],
                v: vec![0.0; t_len * d],
                att: vec![0.0; nh * t_len * t_len],
                z: vec![0.0; t_len * d],
                ln2_out: vec![0.0; t_len * d],
                ln2_xhat: vec![0.0; t_len * d],
                ln2_rstd: vec![0.0; t_len],
                pre: vec![0.0; t_len * m],
                hid: vec![0.0; t_len * m],
                ..LayerCache::default()
            };
            // MLP sublayer first: each position's MLP sees only that position.
            let g2 = &p[o.ln2_g..o.ln2_g + d];
            let b2 = &p[o.ln2_b..o.ln2_b + d];
            let mut mres = x.clone();
            for t in 0..t_len {
                let r = t * d..(t + 1) * d;
                let rm = t * m..(t + 1) * m;
                lc.ln2_rstd[t] = layer_norm(
                    &x[r.clone()],
                    g2,
                    b2,
                    &mut lc.ln2_out[r.clone()],
                    &mut lc.ln2_xhat[r.clone()],
                );
                matvec(
                    &p[o.w_in..o.w_in + m * d],
                    m,
                    d,
                    &lc.ln2_out[r.clone()],
                    &mut lc.pre[rm.clone()],
                );
                for j in rm.clone() {
                    lc.hid[j] = gelu(lc.pre[j]);
                }
                if hooks.stop_after_hidden == Some(li) {
                    continue;
                }
                match hooks.mlp_override {
                    Some(ov) if ov.layer == li && ov.pos == t => axpy(1.0, ov.value, &mut mres[r]),
                    _ => {
                        let mut mo = vec![0.0; d];
                        matvec(&p[o.w_out..o.w_out + d * m], d, m, &lc.hid[rm], &mut mo);
                        axpy(1.0, &mo, &mut mres[r]);
                    }
                }
            }
            lc.x = std::mem::take(&mut x);
            if hooks.stop_after_hidden == Some(li) {
                cache.layers.push(lc);
                return Ok(cache);
            }
            let g1 = &p[o.ln1_g..o.ln1_g + d];
            let b1 = &p[o.ln1_b..o.ln1_b + d];
            for t in 0..t_len {
                let r = t * d..(t + 1) * d;
                lc.ln1_rstd[t] = layer_norm(
                    &mres[r.clone()],
                    g1,
                    b1,
                    &mut lc.ln1_out[r.clone()],
                    &mut lc.ln1_xhat[r.clone()],
                );
                matvec(
                    &p[o.wq..o.wq + d * d],
                    d,
                    d,
                    &lc.ln1_out[r.clone()],
                    &mut lc.q[r.clone()],
                );
                matvec(
                    &p[o.wk..o.wk + d * d],
                    d,
                    d,
                    &lc.ln1_out[r.clone()],
                    &mut lc.k[r.clone()],
                );
                matvec(&p[o.wv..o.wv + d * d], d, d, &lc.ln1_out[r.clone()], &mut lc.v[r]);
            }
            for h in 0..nh {
                let hs = h * hd..(h + 1) * hd;
                for i in 0..t_len {
                    let qi = &lc.q[i * d + hs.start..i * d + hs.end];
                    let arow = &mut lc.att[(h * t_len + i) * t_len..(h * t_len + i + 1) * t_len];
                    for (j, a) in arow.iter_mut().enumerate().take(i + 1) {
                        *a = scale * dot(qi, &lc.k[j * d + hs.start..j * d + hs.end]);
                    }
                    softmax_in_place(&mut arow[..=i]);
                    for (j, &a) in arow.iter().enumerate().take(i + 1) {
                        let (vs, zs) = (j * d + hs.start, i * d + hs.start);
                        for e in 0..hd {
                            lc.z[zs + e] += a * lc.v[vs + e];
                        }
                    }
                }
            }
            let mut y = mres;
            for t in 0..t_len {
                let r = t * d..(t + 1) * d;
                let mut ao = vec![0.0; d];
                matvec(&p[o.wo..o.wo + d * d], d, d, &lc.z[r.clone()], &mut ao);
                axpy(1.0, &ao, &mut y[r]);
            }
            if let Some((clean, pred)) = hooks.restore {
                for t in 0..t_len {
                    if pred(li, t) {
                        y[t * d..(t + 1) * d].copy_from_slice(clean.layer_output(li, t));
                    }
                }
            }
            lc.y = y.clone();
            x = y;
            cache.layers.push(lc);
        }

        let v_size = c.vocab_size;
        cache.lnf_out = vec![0.0; t_len * d];
        cache.lnf_xhat = vec![0.0; t_len * d];
        cache.lnf_rstd = vec![0.0; t_len];
        cache.probs = vec![0.0; t_len * v_size];
        let gf = &p[lay.lnf_g..lay.lnf_g + d];
        let bf = &p[lay.lnf_b..lay.lnf_b + d];
        for t in 0..t_len {
            let r = t * d..(t + 1) * d;
            cache.lnf_rstd[t] = layer_norm(
                &x[r.clone()],
                gf,
                bf,
                &mut cache.lnf_out[r.clone()],
                &mut cache.lnf_xhat[r.clone()],
            );
            let pr = &mut cache.probs[t * v_size..(t + 1) * v_size];
            matvec(&p[lay.head..lay.head + v_size * d], v_size, d, &cache.lnf_out[r], pr);
            softmax_in_place(pr);
        }
        Ok(cache)
    }

    /// Backpropagates `dlogits` at the last position. Parameter gradients are
    /// added into `grads` when given. Returns the gradient with respect to
    /// the overridden MLP output when `hooks` carries an override; without
    /// `grads` the pass stops at the override layer.
    pub fn backward(
        &self,
        tokens: &[usize],
        cache: &Cache,
        hooks: &Hooks,
        dlogits: &[f64],
        mut grads: Option<&mut [f64]>,
    ) -> Result<Option<Vec<f64>>> {
        let c = &self.config;
        let (d, m, nh) = (c.d_model, c.d_mlp, c.n_heads);
        let hd = c.head_dim();
        let t_len = tokens.len();
        if cache.len != t_len || cache.probs.is_empty() {
            return Err(Error::Contract("backward needs a complete forward cache".into()));
        }
        if dlogits.len() != c.vocab_size {
            return Err(Error::Contract("dlogits must have vocab_size entries".into()));
        }
        if let Some(g) = grads.as_deref() {
            if g.len() != self.params.len() {
                return Err(Error::Contract("gradient buffer has the wrong length".into()));
            }
        }
        let p = &self.params;
        let lay = &self.layout;
        let scale = 1.0 / (hd as f64).sqrt();
        let last = t_len - 1;
        let v_size = c.vocab_size;

        let mut dx = vec![0.0; t_len * d];
        {
            let lr = last * d..(last + 1) * d;
            let mut dln = vec![0.0; d];
            matvec_t_acc(&p[lay.head..lay.head + v_size * d], v_size, d, dlogits, &mut dln);
            if let Some(g) = seg(&mut grads, lay.head, v_size * d) {
                outer_acc(g, dlogits, &cache.lnf_out[lr.clone()]);
            }
            let gf = &p[lay.lnf_g..lay.lnf_g + d];
            let dgb = grads.as_deref_mut().map(|g| {
                let (a, b) = g[lay.lnf_g..lay.lnf_b + d].split_at_mut(d);
                (a, b)
            });
            layer_norm_back(
                &dln,
                &cache.lnf_xhat[lr.clone()],
                cache.lnf_rstd[last],
                gf,
                &mut dx[lr],
                dgb,
            );
        }

        let want_params = grads.is_some();
        let mut d_override = None;
        for li in (0..c.n_layers).rev() {
            let o = &lay.layers[li];
            let lc = &cache.layers[li];
            // Attention sublayer; `dx` is the gradient at the layer output.
            let mut dz = vec![0.0; t_len * d];
            for t in 0..t_len {
                let r = t * d..(t + 1) * d;
                if let Some(g) = seg(&mut grads, o.wo, d * d) {
                    outer_acc(g, &dx[r.clone()], &lc.z[r.clone()]);
                }
                matvec_t_acc(&p[o.wo..o.wo + d * d], d, d, &dx[r.clone()], &mut dz[r]);
            }
            let mut dq = vec![0.0; t_len * d];
            let mut dk = vec![0.0; t_len * d];
            let mut dv = vec![0.0; t_len * d];
            let mut da = vec![0.0; t_len];
            for h in 0..nh {
                let hs = h * hd..(h + 1) * hd;
                for i in 0..t_len {
                    let arow = &lc.att[(h * t_len + i) * t_len..(h * t_len + i + 1) * t_len];
                    let dzi = &dz[i * d + hs.start..i * d + hs.end];
                    let mut s = 0.0;
                    for j in 0..=i {
                        da[j] = dot(dzi, &lc.v[j * d + hs.start..j * d + hs.end]);
                        s += arow[j] * da[j];
                        axpy(arow[j], dzi, &mut dv[j * d + hs.start..j * d + hs.end]);
                    }
                    for j in 0..=i {
                        let ds = arow[j] * (da[j] - s) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let (is, js) = (i * d + hs.start, j * d + hs.start);
                        for e in 0..hd {
                            dq[is + e] += ds * lc.k[js + e];
                            dk[js + e] += ds * lc.q[is + e];
                        }
                    }
                }
            }
            let mut dm = dx.clone();
            for t in 0..t_len {
                let r = t * d..(t + 1) * d;
                let mut dln1 = vec![0.0; d];
                matvec_t_acc(&p[o.wq..o.wq + d * d], d, d, &dq[r.clone()], &mut dln1);
                matvec_t_acc(&p[o.wk..o.wk + d * d], d, d, &dk[r.clone()], &mut dln1);
                matvec_t_acc(&p[o.wv..o.wv + d * d], d, d, &dv[r.clone()], &mut dln1);
                if let Some(g) = grads.as_deref_mut() {
                    outer_acc(&mut g[o.wq..o.wq + d * d], &dq[r.clone()], &lc.ln1_out[r.clone()]);
                    outer_acc(&mut g[o.wk..o.wk + d * d], &dk[r.clone()], &lc.ln1_out[r.clone()]);
                    outer_acc(&mut g[o.wv..o.wv + d * d], &dv[r.clone()], &lc.ln1_out[r.clone()]);
                }
                let dgb = grads.as_deref_mut().map(|g| {
                    let (a, b) = g[o.ln1_g..o.ln1_b + d].split_at_mut(d);
                    (a, b)
                });
                layer_norm_back(
                    &dln1,
                    &lc.ln1_xhat[r.clone()],
                    lc.ln1_rstd[t],
                    &p[o.ln1_g..o.ln1_g + d],
                    &mut dm[r],
                    dgb,
                );
            }
            // MLP sublayer; `dm` is the gradient after the MLP residual.
            let mut dprev = dm.clone();
            for t in 0..t_len {
                let r = t * d..(t + 1) * d;
                let rm = t * m..(t + 1) * m;
                if let Some(ov) = hooks.mlp_override {
                    if ov.layer == li && ov.pos == t {
                        d_override = Some(dm[r].to_vec());
                        continue;
                    }
                }
                if dm[r.clone()].iter().all(|v| *v == 0.0) {
                    continue;
                }
                if let Some(g) = seg(&mut grads, o.w_out, d * m) {
                    outer_acc(g, &dm[r.clone()], &lc.hid[rm.clone()]);
                }
                let mut dpre = vec![0.0; m];
                matvec_t_acc(&p[o.w_out..o.w_out + d * m], d, m, &dm[r.clone()], &mut dpre);
                for (j, dp) in dpre.iter_mut().enumerate() {
                    *dp *= gelu_grad(lc.pre[t * m + j]);
                }
                if let Some(g) = seg(&mut grads, o.w_in, m * d) {
                    outer_acc(g, &dpre, &lc.ln2_out[r.clone()]);
                }
                let mut dln2 = vec![0.0; d];
                matvec_t_acc(&p[o.w_in..o.w_in + m * d], m, d, &dpre, &mut dln2);
                let dgb = grads.as_deref_mut().map(|g| {
                    let (a, b) = g[o.ln2_g..o.ln2_b + d].split_at_mut(d);
                    (a, b)
                });
                layer_norm_back(
                    &dln2,
                    &lc.ln2_xhat[r.clone()],
                    lc.ln2_rstd[t],
                    &p[o.ln2_g..o.ln2_g + d],
                    &mut dprev[r],
                    dgb,
                );
            }
            dx = dprev;
            if !want_params && hooks.mlp_override.is_some_and(|ov| ov.layer == li) {
                break;
            }
        }

        if let Some(g) = grads {
            for (t, &tok) in tokens.iter().enumerate() {
                let r = t * d..(t + 1) * d;
                axpy(1.0, &dx[r.clone()], &mut g[lay.tok + tok * d..lay.tok + (tok + 1) * d]);
                axpy(1.0, &dx[r], &mut g[lay.pos + t * d..lay.pos + (t + 1) * d]);
            }
        }
        Ok(d_override)
    }

    /// MLP output the model itself produces at (layer, pos).
    pub fn mlp_output(&self, layer: usize, hidden: &[f64]) -> Result<Vec<f64>> {
        self.check_layer(layer)?;
        let (d, m) = (self.config.d_model, self.config.d_mlp);
        let off = self.layout.layers[layer].w_out;
        let mut out = vec![0.0; d];
        matvec(&self.params[off..off + d * m], d, m, hidden, &mut out);
        Ok(out)
    }
}
