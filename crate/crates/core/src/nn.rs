//! Shared transformer building blocks used by the vision encoder and the
//! language model. Projections are injected through a closure so callers
//! decide how q/k/v/o are computed (plain dense, dense+bias, dense+LoRA).

use crate::numerics::{Graph, NumericsError, Var};

/// Which attention projection the closure is asked to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Proj {
    Q,
    K,
    V,
    O,
}

pub struct AttnOut {
    pub out: Var,
    /// Per-head attention probabilities, copied out when recording is on.
    pub probs: Vec<Vec<f64>>,
}

/// Multi-head scaled dot-product attention over a pre-normalized input
/// `x: [T, d]`. `d` must be divisible by `heads`.
pub fn multi_head_attention<P>(
    g: &mut Graph,
    x: Var,
    heads: usize,
    causal: bool,
    record: bool,
    mut project: P,
) -> Result<AttnOut, NumericsError>
where
    P: FnMut(&mut Graph, Var, Proj) -> Result<Var, NumericsError>,
{
    let shape = g.shape_of(x);
    let (_t, d) = (shape[0], shape[1]);
    if d % heads != 0 {
        return Err(NumericsError::ShapeMismatch(format!(
            "model width {d} not divisible by {heads} heads"
        )));
    }
    let dh = d / heads;
    let q = project(g, x, Proj::Q)?;
    let k = project(g, x, Proj::K)?;
    let v = project(g, x, Proj::V)?;
    let mut ctx_heads = Vec::with_capacity(heads);
    let mut probs_rec = Vec::new();
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let masked = if causal { g.causal_mask(scaled)? } else { scaled };
        let probs = g.softmax_rows(masked)?;
        if record {
            probs_rec.push(g.data(probs));
        }
        ctx_heads.push(g.matmul(probs, vh)?);
    }
    let ctx = g.concat_cols(&ctx_heads)?;
    let out = project(g, ctx, Proj::O)?;
    Ok(AttnOut {
        out,
        probs: probs_rec,
    })
}
