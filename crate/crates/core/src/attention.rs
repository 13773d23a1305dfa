//! Single-head self-attention and its cross-frame replacement.
//!
//! Cross-frame attention keeps the query projection of the frame being
//! generated but draws keys and values from the row-concatenation
//! `[anchor; previous]` of the anchor frame's and the previously generated
//! frame's features at the same site and step.

use ndarray::{concatenate, Array2, Axis};

use crate::error::{Error, Result};

/// Projection matrices `W^Q`, `W^K`, `W^V`, each `(d_model, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    w_q: Array2<f64>,
    w_k: Array2<f64>,
    w_v: Array2<f64>,
}

impl AttentionWeights {
    pub fn new(w_q: Array2<f64>, w_k: Array2<f64>, w_v: Array2<f64>) -> Result<Self> {
        let dim = w_q.dim();
        for (name, m) in [("W^K", &w_k), ("W^V", &w_v)] {
            if m.dim() != dim {
                return Err(Error::InvalidArgument(format!(
                    "{name} is {:?} but W^Q is {:?}",
                    m.dim(),
                    dim
                )));
            }
        }
        if dim.1 == 0 {
            return Err(Error::InvalidArgument(
                "head dimension must be positive".into(),
            ));
        }
        Ok(AttentionWeights { w_q, w_k, w_v })
    }

    pub fn d_model(&self) -> usize {
        self.w_q.nrows()
    }

    /// Head dimension `d`.
    pub fn head_dim(&self) -> usize {
        self.w_q.ncols()
    }

    pub fn w_q(&self) -> &Array2<f64> {
        &self.w_q
    }

    pub fn w_k(&self) -> &Array2<f64> {
        &self.w_k
    }

    pub fn w_v(&self) -> &Array2<f64> {
        &self.w_v
    }
}

/// Token features entering an attention layer, `(sequence_length, d_model)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    tokens: Array2<f64>,
    frame_id: usize,
}

impl FrameFeatures {
    pub fn new(tokens: Array2<f64>, frame_id: usize) -> Result<Self> {
        if tokens.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "frame features need at least one token".into(),
            ));
        }
        Ok(FrameFeatures { tokens, frame_id })
    }

    pub fn tokens(&self) -> &Array2<f64> {
        &self.tokens
    }

    pub fn frame_id(&self) -> usize {
        self.frame_id
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn d_model(&self) -> usize {
        self.tokens.ncols()
    }
}

fn check_dims(features: &FrameFeatures, w: &AttentionWeights, what: &'static str) -> Result<()> {
    if features.d_model() == w.d_model() {
        Ok(())
    } else {
        Err(Error::shape(what, &[w.d_model()], &[features.d_model()]))
    }
}

/// Row-wise softmax of `QK^T / sqrt(d)`.
pub fn attention_weights(queries: &Array2<f64>, keys: &Array2<f64>) -> Array2<f64> {
    let scale = 1.0 / (queries.ncols() as f64).sqrt();
    let mut logits = queries.dot(&keys.t()) * scale;
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    logits
}

/// Attention of `query_source`'s tokens over an arbitrary context of tokens.
pub fn attend_over_context(
    query_source: &FrameFeatures,
    context: &Array2<f64>,
    w: &AttentionWeights,
) -> Result<Array2<f64>> {
    check_dims(query_source, w, "attention query")?;
    if context.ncols() != w.d_model() || context.nrows() == 0 {
        return Err(Error::shape(
            "attention context",
            &[context.nrows().max(1), w.d_model()],
            &[context.nrows(), context.ncols()],
        ));
    }
    let q = query_source.tokens.dot(&w.w_q);
    let k = context.dot(&w.w_k);
    let v = context.dot(&w.w_v);
    Ok(attention_weights(&q, &k).dot(&v))
}

/// `Softmax(QK^T / sqrt(d)) V` with `Q, K, V` all projected from `v`.
pub fn self_attention(v: &FrameFeatures, w: &AttentionWeights) -> Result<Array2<f64>> {
    attend_over_context(v, &v.tokens, w)
}

/// Queries from `v`; keys and values from `[anchor; previous]`.
pub fn cross_frame_attention(
    v: &FrameFeatures,
    anchor: &FrameFeatures,
    previous: &FrameFeatures,
    w: &AttentionWeights,
) -> Result<Array2<f64>> {
    check_dims(v, w, "cross-frame query")?;
    check_dims(anchor, w, "cross-frame anchor")?;
    check_dims(previous, w, "cross-frame previous")?;
    let context = concatenate(Axis(0), &[anchor.tokens.view(), previous.tokens.view()])
        .expect("column counts checked above");
    attend_over_context(v, &context, w)
}
