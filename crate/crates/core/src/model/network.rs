use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, Normalization, LN_EPS};
use crate::autodiff::{
    bicubic_resize_2d, multi_head_attention, AttentionParams, Gradients, Graph, Parameter, Scalar,
    Tensor, Var,
};
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

/// Splits one `[3, H, W]` image into raster-ordered, channel-major patch rows
/// `[L, 3 * patch^2]`.
pub fn patchify<T: Scalar>(image: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::dim(
            "patchify",
            format!("expected [3, H, W], got {shape:?}"),
        ));
    }
    let (h, w) = (shape[1], shape[2]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::contract(format!(
            "image {h}x{w} is not divisible into {patch}px patches"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let pd = 3 * patch * patch;
    let src = image.data();
    let mut out = Vec::with_capacity(gh * gw * pd);
    for py in 0..gh {
        for px in 0..gw {
            for c in 0..3 {
                for dy in 0..patch {
                    let row = (c * h + py * patch + dy) * w + px * patch;
                    out.extend_from_slice(&src[row..row + patch]);
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, pd], out)
}

/// Resizes the grid rows of a `[1 + L, D]` position table to `grid x grid`,
/// keeping the class-token row unchanged.
pub fn interpolate_pos_embed<T: Scalar>(pos_embed: &Tensor<T>, grid: usize) -> Result<Tensor<T>> {
    let shape = pos_embed.shape();
    if shape.len() != 2 || shape[0] < 2 {
        return Err(Error::dim(
            "interpolate_pos_embed",
            format!("expected [1 + L, D], got {shape:?}"),
        ));
    }
    let (rows, d) = (shape[0], shape[1]);
    let l_old = rows - 1;
    let side = (l_old as f64).sqrt().round() as usize;
    if side * side != l_old {
        return Err(Error::contract(format!(
            "position grid length {l_old} is not a perfect square"
        )));
    }
    let data = pos_embed.data();
    let mut out = data[..d].to_vec();
    if side == grid {
        out.extend_from_slice(&data[d..]);
    } else {
        let g = Tensor::new(vec![side, side, d], data[d..].to_vec())?;
        out.extend_from_slice(bicubic_resize_2d(&g, grid, grid)?.data());
    }
    Tensor::new(vec![1 + grid * grid, d], out)
}

/// Canonical parameter names and shapes for a configuration, in storage order.
pub fn parameter_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.dim;
    let mut v = vec![
        ("patch_embed.w".to_string(), vec![config.patch_dim(), d]),
        ("patch_embed.b".to_string(), vec![d]),
        ("class_token".to_string(), vec![1, d]),
        ("pos_embed".to_string(), vec![1 + config.num_patches(), d]),
    ];
    for i in 0..config.depth {
        let p = |s: &str| format!("block{i}.{s}");
        v.extend([
            (p("ln1.scale"), vec![d]),
            (p("ln1.shift"), vec![d]),
            (p("attn.qkv.w"), vec![d, 3 * d]),
            (p("attn.qkv.b"), vec![3 * d]),
            (p("attn.proj.w"), vec![d, d]),
            (p("attn.proj.b"), vec![d]),
            (p("ln2.scale"), vec![d]),
            (p("ln2.shift"), vec![d]),
            (p("mlp.w1"), vec![d, config.mlp_dim]),
            (p("mlp.b1"), vec![config.mlp_dim]),
            (p("mlp.w2"), vec![config.mlp_dim, d]),
            (p("mlp.b2"), vec![d]),
        ]);
    }
    v.extend([
        ("final_ln.scale".to_string(), vec![d]),
        ("final_ln.shift".to_string(), vec![d]),
        ("head.w".to_string(), vec![d, config.num_classes]),
        ("head.b".to_string(), vec![config.num_classes]),
    ]);
    v
}

/// The JRD classifier: patch embedding, class token, position table, a
/// pre-norm encoder stack and a head over the mean of normalized patch tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct DtJrdModel<T> {
    config: ModelConfig,
    normalization: Normalization,
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

/// Graph handles for every parameter, aligned with [`DtJrdModel::parameters`].
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Encoder output plus per-layer attention weights.
pub struct Encoded {
    /// `[B, 1 + L, D]`, class token first.
    pub tokens: Var,
    pub attention: Vec<Var>,
}

impl<T: Scalar> DtJrdModel<T> {
    /// Randomly initialized model (normal(0, 0.02) weights, zero biases, unit
    /// layer-norm scales).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let params = parameter_layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".scale") {
                    Tensor::full(&shape, T::one())
                } else if name.ends_with(".shift")
                    || name.ends_with(".b")
                    || name.ends_with(".b1")
                    || name.ends_with(".b2")
                {
                    Tensor::zeros(&shape)
                } else {
                    Tensor::from_fn(&shape, |_| T::from_f64(normal.sample(&mut rng)))
                };
                Parameter::new(name, t)
            })
            .collect();
        Self::from_parameters(config, Normalization::default(), params)
    }

    /// Assembles a model from named parameters, checking names and shapes
    /// against the canonical layout.
    pub fn from_parameters(
        config: ModelConfig,
        normalization: Normalization,
        params: Vec<Parameter<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        let mut by_name: HashMap<String, Parameter<T>> = HashMap::new();
        for p in params {
            let name = p.name.clone();
            if by_name.insert(name.clone(), p).is_some() {
                return Err(Error::format(Some(&name), "duplicate parameter name"));
            }
        }
        let mut ordered = Vec::with_capacity(layout.len());
        for (name, shape) in &layout {
            let p = by_name
                .remove(name)
                .ok_or_else(|| Error::format(Some(name), "missing parameter"))?;
            if p.tensor.shape() != shape.as_slice() {
                return Err(Error::format(
                    Some(name),
                    format!("shape {:?}, expected {shape:?}", p.tensor.shape()),
                ));
            }
            ordered.push(p);
        }
        if let Some(name) = by_name.keys().min() {
            return Err(Error::format(Some(name), "unknown parameter"));
        }
        let index = ordered
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Ok(Self {
            config,
            normalization,
            params: ordered,
            index,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn set_normalization(&mut self, normalization: Normalization) {
        self.normalization = normalization;
    }

    pub fn parameters(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Element-type conversion of every parameter.
    pub fn cast<U: Scalar>(&self) -> DtJrdModel<U> {
        DtJrdModel {
            config: self.config.clone(),
            normalization: self.normalization,
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Registers every parameter as a graph leaf; trainable ones receive
    /// gradients.
    pub fn bind(&self, g: &mut Graph<T>) -> Result<BoundParams> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let t = p.tensor.clone().with_requires_grad(p.trainable);
                g.leaf(&t)
            })
            .collect::<Result<_>>()?;
        Ok(BoundParams { vars })
    }

    fn var(&self, bound: &BoundParams, name: &str) -> Var {
        bound.vars[self.index[name]]
    }

    /// Adds the gradients of one backward pass into each trainable
    /// parameter's gradient buffer.
    pub fn accumulate_grads(&mut self, bound: &BoundParams, grads: &Gradients<T>) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if p.trainable {
                grads.accumulate_into(v, &mut p.tensor)?;
            }
        }
        Ok(())
    }

    fn check_images(&self, images: &Tensor<T>) -> Result<usize> {
        let s = self.config.image_size;
        match images.shape() {
            [b, 3, h, w] if *h == s && *w == s => Ok(*b),
            other => Err(Error::contract(format!(
                "expected images [B, 3, {s}, {s}], got {other:?}"
            ))),
        }
    }

    /// Patch rows for a batch, `[B, L, 3 * patch^2]`.
    pub fn patchify_batch(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.check_images(images)?;
        let s = self.config.image_size;
        let per = 3 * s * s;
        let mut out = Vec::with_capacity(images.numel());
        for i in 0..b {
            let img = Tensor::new(
                vec![3, s, s],
                images.data()[i * per..(i + 1) * per].to_vec(),
            )?;
            out.extend_from_slice(patchify(&img, self.config.patch_size)?.data());
        }
        Tensor::new(
            vec![b, self.config.num_patches(), self.config.patch_dim()],
            out,
        )
    }

    /// Embedding plus encoder stack.
    pub fn encode(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        images: &Tensor<T>,
    ) -> Result<Encoded> {
        let b = self.check_images(images)?;
        let d = self.config.dim;
        let patches = self.patchify_batch(images)?;
        let patches = g.leaf(&patches.with_requires_grad(false))?;
        let emb = g.matmul(patches, self.var(bound, "patch_embed.w"))?;
        let emb = g.add(emb, self.var(bound, "patch_embed.b"))?;
        let cls = g.reshape(self.var(bound, "class_token"), &[1, 1, d])?;
        let cls = g.broadcast_batch(cls, b)?;
        let tokens = g.concat(&[cls, emb], 1)?;
        let mut x = g.add(tokens, self.var(bound, "pos_embed"))?;

        let mut attention = Vec::with_capacity(self.config.depth);
        for i in 0..self.config.depth {
            let n = |s: &str| self.var(bound, &format!("block{i}.{s}"));
            let h = g.layer_norm(x, n("ln1.scale"), n("ln1.shift"), LN_EPS)?;
            let attn = multi_head_attention(
                g,
                h,
                &AttentionParams {
                    qkv_w: n("attn.qkv.w"),
                    qkv_b: n("attn.qkv.b"),
                    proj_w: n("attn.proj.w"),
                    proj_b: n("attn.proj.b"),
                },
                self.config.heads,
            )?;
            attention.push(attn.weights);
            x = g.add(x, attn.output)?;

            let h = g.layer_norm(x, n("ln2.scale"), n("ln2.shift"), LN_EPS)?;
            let h = g.matmul(h, n("mlp.w1"))?;
            let h = g.add(h, n("mlp.b1"))?;
            let h = g.gelu(h)?;
            let h = g.matmul(h, n("mlp.w2"))?;
            let h = g.add(h, n("mlp.b2"))?;
            x = g.add(x, h)?;
        }
        Ok(Encoded {
            tokens: x,
            attention,
        })
    }

    /// Final layer norm on the patch tokens only (class token excluded),
    /// arithmetic mean over tokens, then the linear head. `tokens: [B, 1 + L, D]`.
    pub fn classify(&self, g: &mut Graph<T>, bound: &BoundParams, tokens: Var) -> Result<Var> {
        let l = self.config.num_patches();
        let shape = g.shape(tokens);
        if shape.len() != 3 || shape[1] != 1 + l || shape[2] != self.config.dim {
            return Err(Error::dim("classify", format!("token shape {shape:?}")));
        }
        let patches = g.narrow(tokens, 1, 1, l)?;
        let normed = g.layer_norm(
            patches,
            self.var(bound, "final_ln.scale"),
            self.var(bound, "final_ln.shift"),
            LN_EPS,
        )?;
        let pooled = g.mean(normed, 1)?;
        let logits = g.matmul(pooled, self.var(bound, "head.w"))?;
        g.add(logits, self.var(bound, "head.b"))
    }

    /// Logits `[B, N]` recorded on `g`.
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        images: &Tensor<T>,
    ) -> Result<Var> {
        let enc = self.encode(g, bound, images)?;
        self.classify(g, bound, enc.tokens)
    }

    /// Inference-only forward pass, `[B, 3, S, S] -> [B, N]`.
    pub fn forward(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(&p.tensor.clone().with_requires_grad(false)))
            .collect::<Result<_>>()?;
        let bound = BoundParams { vars };
        let logits = self.forward_graph(&mut g, &bound, images)?;
        Ok(g.tensor(logits))
    }

    /// Replaces `pos_embed` with a bicubic resize of `pos_embed` onto a new
    /// grid; used when adopting a table trained at another resolution.
    pub fn adopt_pos_embed(&mut self, table: &Tensor<T>) -> Result<()> {
        let resized = interpolate_pos_embed(table, self.config.grid())?;
        let expected = [1 + self.config.num_patches(), self.config.dim];
        if resized.shape() != expected {
            return Err(Error::format(
                Some("pos_embed"),
                format!(
                    "shape {:?} after interpolation, expected {expected:?}",
                    resized.shape()
                ),
            ));
        }
        let p = self.param_mut("pos_embed").expect("pos_embed exists");
        let rg = p.tensor.requires_grad();
        p.tensor = resized.with_requires_grad(rg);
        Ok(())
    }
}

/// Decodes a logit row by argmax; ties resolve to the smaller class index.
pub fn predict_jrd<T: Scalar>(logits: &[T]) -> Result<usize> {
    if logits.is_empty() {
        return Err(Error::contract("cannot decode empty logits"));
    }
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Expected class index under the softmax distribution.
pub fn predict_jrd_expected<T: Scalar>(logits: &[T]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::contract("cannot decode empty logits"));
    }
    let m = logits
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|v| (v.as_f64() - m).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.iter().enumerate().map(|(i, p)| i as f64 * p).sum::<f64>() / z)
}

/// Argmax decoding of every row of `[B, N]` logits.
pub fn predict_batch<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<usize>> {
    let n = *logits
        .shape()
        .last()
        .ok_or_else(|| Error::contract("scalar logits"))?;
    logits.data().chunks(n).map(predict_jrd).collect()
}
