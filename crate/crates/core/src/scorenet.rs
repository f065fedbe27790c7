//! Desk-scale sigma-conditioned score network.
//!
//! Two parts share one flat parameter vector:
//!
//! * [`SigmaEmbedding`]: `log(sigma)` modulates a frozen set of random Fourier
//!   frequencies, `[sin(f_i log sigma), cos(f_i log sigma)]`, followed by three
//!   `Linear -> PReLU` layers producing an `embed_dim` vector.
//! * [`FilmMlp`]: a PReLU MLP over `concat(c_in(sigma) * x, c)` whose hidden
//!   pre-activations are modulated by FiLM, `scale * a + shift`, with `scale`
//!   and `shift` linear projections of the sigma embedding.
//!
//! The score is read out as `S = F / sigma`, where `F` is the MLP output, and
//! the input is scaled by `c_in(sigma) = 1 / sqrt(sigma^2 + data_std^2)`. With
//! this output convention the denoising loss reduces to `|F + z|^2 / 2`, and a
//! zero-initialized output layer gives `S == 0` at initialization.
//!
//! Gradients are computed by hand in reverse mode; see [`ScoreNet::backward`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::ScoreFunction;
use crate::error::{Error, Result};

pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub x_dim: usize,
    /// Length of the conditioning vector; 0 for unconditional models.
    pub cond_dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub n_pairs: usize,
    /// Data scale used for the input normalization `c_in(sigma)`.
    pub data_std: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            x_dim: 1,
            cond_dim: 0,
            hidden: vec![64, 64, 64],
            embed_dim: 32,
            n_pairs: 32,
            data_std: 1.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.x_dim == 0 || self.embed_dim == 0 || self.n_pairs == 0 {
            return Err(Error::config("x_dim, embed_dim and n_pairs must be >= 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config(
                "hidden layer sizes must be non-empty and >= 1",
            ));
        }
        if !(self.data_std > 0.0 && self.data_std.is_finite()) {
            return Err(Error::config("data_std must be positive"));
        }
        Ok(())
    }

    /// Parameter count; a pure function of the layer sizes.
    pub fn param_count(&self) -> usize {
        build_layout(self).2.iter().map(|b| b.len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    PreluSlope,
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

impl Affine {
    fn apply(&self, p: &[f64], input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &p[self.w..self.w + self.n_in * self.n_out];
        let b = &p[self.b..self.b + self.n_out];
        for o in 0..self.n_out {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = b[o];
            for (wi, xi) in row.iter().zip(input) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }

    /// Accumulates parameter gradients and, if requested, the input gradient.
    fn backward(
        &self,
        p: &[f64],
        input: &[f64],
        d_out: &[f64],
        grad: &mut [f64],
        d_in: Option<&mut Vec<f64>>,
    ) {
        {
            let gw = &mut grad[self.w..self.w + self.n_in * self.n_out];
            for (o, &g) in d_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &mut gw[o * self.n_in..(o + 1) * self.n_in];
                for (gi, xi) in row.iter_mut().zip(input) {
                    *gi += g * xi;
                }
            }
        }
        for (gb, g) in grad[self.b..self.b + self.n_out].iter_mut().zip(d_out) {
            *gb += g;
        }
        if let Some(d_in) = d_in {
            d_in.clear();
            d_in.resize(self.n_in, 0.0);
            let w = &p[self.w..self.w + self.n_in * self.n_out];
            for (o, &g) in d_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &w[o * self.n_in..(o + 1) * self.n_in];
                for (di, wi) in d_in.iter_mut().zip(row) {
                    *di += g * wi;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Prelu {
    a: usize,
    n: usize,
}

impl Prelu {
    fn apply(&self, p: &[f64], input: &[f64]) -> Vec<f64> {
        input
            .iter()
            .zip(&p[self.a..self.a + self.n])
            .map(|(&x, &a)| if x > 0.0 { x } else { a * x })
            .collect()
    }

    /// Returns the gradient w.r.t. the PReLU input; accumulates slope grads.
    fn backward(&self, p: &[f64], input: &[f64], d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let slopes = &p[self.a..self.a + self.n];
        let mut d_in = Vec::with_capacity(self.n);
        for j in 0..self.n {
            if input[j] > 0.0 {
                d_in.push(d_out[j]);
            } else {
                grad[self.a + j] += d_out[j] * input[j];
                d_in.push(d_out[j] * slopes[j]);
            }
        }
        d_in
    }
}

struct LayoutBuilder {
    blocks: Vec<ParamBlock>,
    next: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, len: usize, kind: ParamKind) -> usize {
        let offset = self.next;
        self.blocks.push(ParamBlock {
            name,
            offset,
            len,
            kind,
        });
        self.next += len;
        offset
    }

    fn affine(&mut self, name: &str, n_in: usize, n_out: usize) -> Affine {
        let w = self.push(format!("{name}.weight"), n_in * n_out, ParamKind::Weight);
        let b = self.push(format!("{name}.bias"), n_out, ParamKind::Bias);
        Affine { w, b, n_in, n_out }
    }

    fn prelu(&mut self, name: &str, n: usize) -> Prelu {
        let a = self.push(format!("{name}.slope"), n, ParamKind::PreluSlope);
        Prelu { a, n }
    }
}

/// Random-Fourier-feature embedding of the noise level.
#[derive(Debug, Clone)]
pub struct SigmaEmbedding {
    /// Frozen frequencies, never touched by the optimizer.
    frequencies: Vec<f64>,
    layers: [(Affine, Prelu); 3],
}

/// Activations kept for the embedding backward pass.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    /// Inputs of each affine layer (layer 0 input = Fourier features).
    inputs: [Vec<f64>; 3],
    /// Affine outputs (PReLU inputs).
    pre: [Vec<f64>; 3],
}

impl SigmaEmbedding {
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn embed_dim(&self) -> usize {
        self.layers[2].0.n_out
    }

    pub fn fourier_features(&self, sigma: f64) -> Result<Vec<f64>> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("sigma must be > 0, got {sigma}")));
        }
        let ls = sigma.ln();
        let mut feats = Vec::with_capacity(2 * self.frequencies.len());
        feats.extend(self.frequencies.iter().map(|f| (f * ls).sin()));
        feats.extend(self.frequencies.iter().map(|f| (f * ls).cos()));
        Ok(feats)
    }

    pub fn forward(&self, params: &[f64], sigma: f64) -> Result<(Vec<f64>, EmbeddingCache)> {
        let mut h = self.fourier_features(sigma)?;
        let mut inputs: [Vec<f64>; 3] = Default::default();
        let mut pre: [Vec<f64>; 3] = Default::default();
        for (i, (aff, act)) in self.layers.iter().enumerate() {
            let mut a = Vec::new();
            aff.apply(params, &h, &mut a);
            let next = act.apply(params, &a);
            inputs[i] = std::mem::replace(&mut h, next);
            pre[i] = a;
        }
        Ok((h, EmbeddingCache { inputs, pre }))
    }

    /// Accumulates parameter gradients given `d_out = dL/d(embedding)`.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &EmbeddingCache,
        d_out: &[f64],
        grad: &mut [f64],
    ) {
        let mut d = d_out.to_vec();
        let mut d_in = Vec::new();
        for i in (0..3).rev() {
            let (aff, act) = &self.layers[i];
            let d_pre = act.backward(params, &cache.pre[i], &d, grad);
            let want_input = i > 0;
            aff.backward(
                params,
                &cache.inputs[i],
                &d_pre,
                grad,
                if want_input { Some(&mut d_in) } else { None },
            );
            if want_input {
                std::mem::swap(&mut d, &mut d_in);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct FilmLayer {
    affine: Affine,
    scale: Affine,
    shift: Affine,
    act: Prelu,
}

/// FiLM-modulated PReLU MLP.
#[derive(Debug, Clone)]
pub struct FilmMlp {
    layers: Vec<FilmLayer>,
    out: Affine,
}

#[derive(Debug, Clone)]
struct FilmLayerCache {
    input: Vec<f64>,
    affine: Vec<f64>,
    scale: Vec<f64>,
    /// FiLM output, i.e. the PReLU input.
    modulated: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    layers: Vec<FilmLayerCache>,
    last_hidden: Vec<f64>,
}

impl FilmMlp {
    /// `input` is the already-assembled `concat(x, c)`; `emb` the sigma
    /// embedding.
    pub fn forward(&self, params: &[f64], input: &[f64], emb: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut h = input.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        let (mut a, mut scale, mut shift) = (Vec::new(), Vec::new(), Vec::new());
        for layer in &self.layers {
            layer.affine.apply(params, &h, &mut a);
            layer.scale.apply(params, emb, &mut scale);
            layer.shift.apply(params, emb, &mut shift);
            let modulated: Vec<f64> = a
                .iter()
                .zip(&scale)
                .zip(&shift)
                .map(|((ai, gi), bi)| gi * ai + bi)
                .collect();
            let next = layer.act.apply(params, &modulated);
            caches.push(FilmLayerCache {
                input: std::mem::replace(&mut h, next),
                affine: a.clone(),
                scale: scale.clone(),
                modulated,
            });
        }
        let mut out = Vec::new();
        self.out.apply(params, &h, &mut out);
        (
            out,
            MlpCache {
                layers: caches,
                last_hidden: h,
            },
        )
    }

    /// Accumulates parameter gradients given `d_out = dL/dF`; returns
    /// `dL/d(emb)`. `emb` must be the embedding used in the forward pass.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        emb: &[f64],
        d_out: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let mut d_emb = vec![0.0; emb.len()];
        let mut d_h = Vec::new();
        let mut d_in = Vec::new();
        let mut d_proj = Vec::new();
        self.out
            .backward(params, &cache.last_hidden, d_out, grad, Some(&mut d_h));
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let d_mod = layer.act.backward(params, &lc.modulated, &d_h, grad);
            let d_scale: Vec<f64> = d_mod.iter().zip(&lc.affine).map(|(d, a)| d * a).collect();
            let d_aff: Vec<f64> = d_mod.iter().zip(&lc.scale).map(|(d, g)| d * g).collect();
            layer
                .scale
                .backward(params, emb, &d_scale, grad, Some(&mut d_proj));
            add_into(&mut d_emb, &d_proj);
            layer
                .shift
                .backward(params, emb, &d_mod, grad, Some(&mut d_proj));
            add_into(&mut d_emb, &d_proj);
            layer
                .affine
                .backward(params, &lc.input, &d_aff, grad, Some(&mut d_in));
            std::mem::swap(&mut d_h, &mut d_in);
        }
        d_emb
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn build_layout(config: &NetConfig) -> ([(Affine, Prelu); 3], FilmMlp, Vec<ParamBlock>) {
    let mut b = LayoutBuilder {
        blocks: Vec::new(),
        next: 0,
    };
    let e = config.embed_dim;
    let emb_layers = [
        (
            b.affine("embed.0", 2 * config.n_pairs, e),
            b.prelu("embed.0", e),
        ),
        (b.affine("embed.1", e, e), b.prelu("embed.1", e)),
        (b.affine("embed.2", e, e), b.prelu("embed.2", e)),
    ];
    let mut n_in = config.x_dim + config.cond_dim;
    let mut layers = Vec::with_capacity(config.hidden.len());
    for (i, &h) in config.hidden.iter().enumerate() {
        layers.push(FilmLayer {
            affine: b.affine(&format!("mlp.{i}"), n_in, h),
            scale: b.affine(&format!("mlp.{i}.film_scale"), e, h),
            shift: b.affine(&format!("mlp.{i}.film_shift"), e, h),
            act: b.prelu(&format!("mlp.{i}"), h),
        });
        n_in = h;
    }
    let out = b.affine("mlp.out", n_in, config.x_dim);
    (emb_layers, FilmMlp { layers, out }, b.blocks)
}

/// Activations retained by a training-mode forward pass.
#[derive(Debug, Clone)]
struct NetCache {
    sigma: f64,
    emb: Vec<f64>,
    emb_cache: EmbeddingCache,
    mlp_cache: MlpCache,
}

/// Result of [`ScoreNet::forward`]. Only training-mode passes keep the
/// activations needed by [`ScoreNet::backward`].
#[derive(Debug, Clone)]
pub struct Forward {
    pub score: Vec<f64>,
    cache: Option<NetCache>,
}

#[derive(Debug, Clone)]
pub struct ScoreNet {
    config: NetConfig,
    embedding: SigmaEmbedding,
    mlp: FilmMlp,
    layout: Vec<ParamBlock>,
    params: Vec<f64>,
}

impl ScoreNet {
    /// Fresh network: Fourier frequencies from N(0, 1), fan-in uniform weights
    /// and biases, FiLM scale biases at 1, PReLU slopes at 0.25, and a
    /// zero output layer.
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let frequencies: Vec<f64> = (0..config.n_pairs)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let mut net = Self::from_parts(config, frequencies, Vec::new())?;
        let mut p = vec![0.0; net.params.len()];
        for (aff, act) in &net.embedding.layers {
            init_uniform(&mut p, aff, true, rng);
            p[act.a..act.a + act.n].fill(PRELU_INIT);
        }
        for layer in &net.mlp.layers {
            init_uniform(&mut p, &layer.affine, true, rng);
            init_uniform(&mut p, &layer.scale, false, rng);
            init_uniform(&mut p, &layer.shift, false, rng);
            p[layer.scale.b..layer.scale.b + layer.scale.n_out].fill(1.0);
            p[layer.act.a..layer.act.a + layer.act.n].fill(PRELU_INIT);
        }
        net.params = p;
        Ok(net)
    }

    /// Rebuilds a network from stored frequencies and parameters. An empty
    /// `params` yields all zeros.
    pub fn from_parts(config: NetConfig, frequencies: Vec<f64>, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if frequencies.len() != config.n_pairs {
            return Err(Error::config(format!(
                "expected {} Fourier frequencies, got {}",
                config.n_pairs,
                frequencies.len()
            )));
        }
        let (layers, mlp, layout) = build_layout(&config);
        let n: usize = layout.iter().map(|b| b.len).sum();
        let params = if params.is_empty() {
            vec![0.0; n]
        } else {
            params
        };
        if params.len() != n {
            return Err(Error::config(format!(
                "expected {n} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            config,
            embedding: SigmaEmbedding {
                frequencies,
                layers,
            },
            mlp,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn embedding(&self) -> &SigmaEmbedding {
        &self.embedding
    }

    pub fn mlp(&self) -> &FilmMlp {
        &self.mlp
    }

    pub fn layout(&self) -> &[ParamBlock] {
        &self.layout
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.layout.iter().find(|b| b.name == name)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// True for parameters subject to weight decay (weights only; biases
    /// and PReLU slopes are exempt).
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.params.len()];
        for b in &self.layout {
            if b.kind == ParamKind::Weight {
                mask[b.offset..b.offset + b.len].fill(true);
            }
        }
        mask
    }

    /// `c_in(sigma) = 1 / sqrt(sigma^2 + data_std^2)`.
    pub fn input_scale(&self, sigma: f64) -> f64 {
        1.0 / (sigma * sigma + self.config.data_std * self.config.data_std).sqrt()
    }

    pub fn sigma_embed(&self, sigma: f64) -> Result<Vec<f64>> {
        Ok(self.embedding.forward(&self.params, sigma)?.0)
    }

    fn check_inputs(&self, x: &[f64], cond: &[f64], sigma: f64) -> Result<()> {
        if x.len() != self.config.x_dim || cond.len() != self.config.cond_dim {
            return Err(Error::config(format!(
                "network expects x of length {} and c of length {}, got {} and {}",
                self.config.x_dim,
                self.config.cond_dim,
                x.len(),
                cond.len()
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(())
    }

    /// Computes `S(x, c, sigma)`; with `keep_cache` the activations are kept
    /// for [`backward`](Self::backward).
    pub fn forward(
        &self,
        x: &[f64],
        cond: &[f64],
        sigma: f64,
        keep_cache: bool,
    ) -> Result<Forward> {
        self.check_inputs(x, cond, sigma)?;
        let (emb, emb_cache) = self.embedding.forward(&self.params, sigma)?;
        let c_in = self.input_scale(sigma);
        let mut input: Vec<f64> = x.iter().map(|v| v * c_in).collect();
        input.extend_from_slice(cond);
        let (out, mlp_cache) = self.mlp.forward(&self.params, &input, &emb);
        let score = out.iter().map(|f| f / sigma).collect();
        let cache = keep_cache.then_some(NetCache {
            sigma,
            emb,
            emb_cache,
            mlp_cache,
        });
        Ok(Forward { score, cache })
    }

    /// Reverse pass: accumulates `dL/dtheta` into `grad` given
    /// `d_score = dL/dS`.
    pub fn backward(&self, fwd: &Forward, d_score: &[f64], grad: &mut [f64]) -> Result<()> {
        let cache = fwd.cache.as_ref().ok_or_else(|| {
            Error::Usage("backward called on a forward pass without cache".into())
        })?;
        if grad.len() != self.params.len() || d_score.len() != self.config.x_dim {
            return Err(Error::config(
                "gradient buffer or upstream gradient has the wrong length",
            ));
        }
        let d_out: Vec<f64> = d_score.iter().map(|g| g / cache.sigma).collect();
        let d_emb = self
            .mlp
            .backward(&self.params, &cache.mlp_cache, &cache.emb, &d_out, grad);
        self.embedding
            .backward(&self.params, &cache.emb_cache, &d_emb, grad);
        Ok(())
    }

    /// Denoising loss `|sigma S(x0 + sigma z) + z|^2 / 2` for one example,
    /// accumulating its parameter gradient into `grad`.
    pub fn loss_and_grad(
        &self,
        x0: &[f64],
        cond: &[f64],
        sigma: f64,
        z: &[f64],
        grad: &mut [f64],
    ) -> Result<f64> {
        let xt: Vec<f64> = x0.iter().zip(z).map(|(a, b)| a + sigma * b).collect();
        let fwd = self.forward(&xt, cond, sigma, true)?;
        let resid: Vec<f64> = fwd
            .score
            .iter()
            .zip(z)
            .map(|(s, zi)| sigma * s + zi)
            .collect();
        let loss = 0.5 * resid.iter().map(|r| r * r).sum::<f64>();
        let d_score: Vec<f64> = resid.iter().map(|r| r * sigma).collect();
        self.backward(&fwd, &d_score, grad)?;
        Ok(loss)
    }
}

fn init_uniform<R: Rng + ?Sized>(p: &mut [f64], aff: &Affine, with_bias: bool, rng: &mut R) {
    let bound = 1.0 / (aff.n_in as f64).sqrt();
    for v in &mut p[aff.w..aff.w + aff.n_in * aff.n_out] {
        *v = rng.random_range(-bound..bound);
    }
    if with_bias {
        for v in &mut p[aff.b..aff.b + aff.n_out] {
            *v = rng.random_range(-bound..bound);
        }
    }
}

impl ScoreFunction for ScoreNet {
    fn score(&self, x: &[f64], cond: &[f64], sigma: f64) -> Result<Vec<f64>> {
        Ok(self.forward(x, cond, sigma, false)?.score)
    }
}
