use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::tensor::Scalar;
use crate::error::{Error, Result};

/// Graph handles for one attention layer's weights.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    /// `[D, 3D]`, columns ordered q | k | v, heads contiguous within each.
    pub qkv_w: Var,
    pub qkv_b: Var,
    /// `[D, D]`
    pub proj_w: Var,
    pub proj_b: Var,
}

pub struct AttentionOutput {
    /// `[B, L, D]`
    pub output: Var,
    /// Softmax weights, `[B * heads, L, L]`.
    pub weights: Var,
}

/// Scaled dot-product self-attention over `x: [B, L, D]` with `heads` heads.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    params: &AttentionParams,
    heads: usize,
) -> Result<AttentionOutput> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::dim(
            "multi_head_attention",
            format!("expected [B, L, D], got {shape:?}"),
        ));
    }
    let (b, l, d) = (shape[0], shape[1], shape[2]);
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "width {d} is not divisible by {heads} heads"
        )));
    }
    let dh = d / heads;

    let qkv = g.matmul(x, params.qkv_w)?;
    let qkv = g.add(qkv, params.qkv_b)?;
    let qkv = g.reshape(qkv, &[b, l, 3, heads, dh])?;
    let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?;
    let qkv = g.reshape(qkv, &[3, b * heads, l, dh])?;
    let mut split = [x; 3];
    for (i, slot) in split.iter_mut().enumerate() {
        let part = g.narrow(qkv, 0, i, 1)?;
        *slot = g.reshape(part, &[b * heads, l, dh])?;
    }
    let [q, k, v] = split;

    let kt = g.transpose(k)?;
    let scores = g.batch_matmul(q, kt)?;
    let scores = g.scale(scores, T::from_f64(1.0 / (dh as f64).sqrt()))?;
    let weights = g.softmax(scores)?;
    let ctx = g.batch_matmul(weights, v)?;
    let ctx = g.reshape(ctx, &[b, heads, l, dh])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b, l, d])?;
    let out = g.matmul(ctx, params.proj_w)?;
    let output = g.add(out, params.proj_b)?;
    Ok(AttentionOutput { output, weights })
}
