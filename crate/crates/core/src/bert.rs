//! Temporal encoder: learned position embeddings, a classification token,
//! transformer layers (multi-head self-attention averaged across heads
//! followed by a position-wise feed-forward network), and the temporal class
//! head.
//!
//! Attention weights are softmax(Q(s_i)^T K(s_j) / sqrt(d_h)); every position
//! attends to every position. Heads are combined by averaging, not
//! concatenation. The default layer is the plain composition
//! y = PFFN(multi_head(x)); the `standard_bert_residuals` flag switches to
//! the conventional residual + layer-norm arrangement.

use crate::config::{ModelConfig, PositionalMode};
use crate::error::Error;
use crate::gcn::xavier;
use crate::rng::Rng;
use crate::tensor::{Real, Tape, Tensor, Var};

const LAYER_NORM_EPS: Real = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHeadParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BertLayerParams {
    pub heads: Vec<AttentionHeadParams>,
    /// Feed-forward weights: w1 is d_h x d_ff, w2 is d_ff x d.
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// All learnable parameters of the temporal encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct BertEncoderParams {
    /// Learned classification token, 1 x (frame vector width).
    pub cls_token: Tensor,
    /// (T+1) x p position embeddings (or (T+1) x d in additive mode);
    /// row 0 belongs to the classification position.
    pub positional: Tensor,
    pub layers: Vec<BertLayerParams>,
    /// d x G head over the final classification-position output.
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl BertEncoderParams {
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> BertEncoderParams {
        let d = cfg.model_width();
        let dh = cfg.resolved_head_width();
        let dff = cfg.resolved_ffn_width();
        let m = cfg.spatial_width();
        let pos_cols = match cfg.positional_mode {
            PositionalMode::Concat => cfg.positional_width,
            PositionalMode::Additive => d,
        };
        let layers = (0..cfg.bert_layers)
            .map(|_| BertLayerParams {
                heads: (0..cfg.bert_heads)
                    .map(|_| AttentionHeadParams {
                        wq: xavier(rng, d, dh),
                        wk: xavier(rng, d, dh),
                        wv: xavier(rng, d, dh),
                    })
                    .collect(),
                w1: xavier(rng, dh, dff),
                b1: Tensor::zeros(&[dff]),
                w2: xavier(rng, dff, d),
                b2: Tensor::zeros(&[d]),
            })
            .collect();
        BertEncoderParams {
            cls_token: xavier(rng, 1, m),
            positional: xavier(rng, cfg.window + 1, pos_cols),
            layers,
            head_weight: xavier(rng, d, cfg.class_count),
            head_bias: Tensor::zeros(&[cfg.class_count]),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("bert.cls_token".to_string(), &self.cls_token),
            ("bert.positional".to_string(), &self.positional),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                out.push((format!("bert.layer{l}.head{h}.wq"), &head.wq));
                out.push((format!("bert.layer{l}.head{h}.wk"), &head.wk));
                out.push((format!("bert.layer{l}.head{h}.wv"), &head.wv));
            }
            out.push((format!("bert.layer{l}.ffn.w1"), &layer.w1));
            out.push((format!("bert.layer{l}.ffn.b1"), &layer.b1));
            out.push((format!("bert.layer{l}.ffn.w2"), &layer.w2));
            out.push((format!("bert.layer{l}.ffn.b2"), &layer.b2));
        }
        out.push(("bert.head_weight".to_string(), &self.head_weight));
        out.push(("bert.head_bias".to_string(), &self.head_bias));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("bert.cls_token".to_string(), &mut self.cls_token),
            ("bert.positional".to_string(), &mut self.positional),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (h, head) in layer.heads.iter_mut().enumerate() {
                out.push((format!("bert.layer{l}.head{h}.wq"), &mut head.wq));
                out.push((format!("bert.layer{l}.head{h}.wk"), &mut head.wk));
                out.push((format!("bert.layer{l}.head{h}.wv"), &mut head.wv));
            }
            out.push((format!("bert.layer{l}.ffn.w1"), &mut layer.w1));
            out.push((format!("bert.layer{l}.ffn.b1"), &mut layer.b1));
            out.push((format!("bert.layer{l}.ffn.w2"), &mut layer.w2));
            out.push((format!("bert.layer{l}.ffn.b2"), &mut layer.b2));
        }
        out.push(("bert.head_weight".to_string(), &mut self.head_weight));
        out.push(("bert.head_bias".to_string(), &mut self.head_bias));
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BertEncoderVars, Error> {
        let layers = self
            .layers
            .iter()
            .map(|layer| {
                Ok(BertLayerVars {
                    heads: layer
                        .heads
                        .iter()
                        .map(|h| {
                            Ok(AttentionHeadVars {
                                wq: tape.var(h.wq.clone())?,
                                wk: tape.var(h.wk.clone())?,
                                wv: tape.var(h.wv.clone())?,
                            })
                        })
                        .collect::<Result<_, Error>>()?,
                    w1: tape.var(layer.w1.clone())?,
                    b1: tape.var(layer.b1.clone())?,
                    w2: tape.var(layer.w2.clone())?,
                    b2: tape.var(layer.b2.clone())?,
                })
            })
            .collect::<Result<_, Error>>()?;
        Ok(BertEncoderVars {
            cls_token: tape.var(self.cls_token.clone())?,
            positional: tape.var(self.positional.clone())?,
            layers,
            head_weight: tape.var(self.head_weight.clone())?,
            head_bias: tape.var(self.head_bias.clone())?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionHeadVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

#[derive(Debug, Clone)]
pub struct BertLayerVars {
    pub heads: Vec<AttentionHeadVars>,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Debug, Clone)]
pub struct BertEncoderVars {
    pub cls_token: Var,
    pub positional: Var,
    pub layers: Vec<BertLayerVars>,
    pub head_weight: Var,
    pub head_bias: Var,
}

impl BertEncoderVars {
    pub fn named(&self) -> Vec<(String, Var)> {
        let mut out = vec![
            ("bert.cls_token".to_string(), self.cls_token),
            ("bert.positional".to_string(), self.positional),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                out.push((format!("bert.layer{l}.head{h}.wq"), head.wq));
                out.push((format!("bert.layer{l}.head{h}.wk"), head.wk));
                out.push((format!("bert.layer{l}.head{h}.wv"), head.wv));
            }
            out.push((format!("bert.layer{l}.ffn.w1"), layer.w1));
            out.push((format!("bert.layer{l}.ffn.b1"), layer.b1));
            out.push((format!("bert.layer{l}.ffn.w2"), layer.w2));
            out.push((format!("bert.layer{l}.ffn.b2"), layer.b2));
        }
        out.push(("bert.head_weight".to_string(), self.head_weight));
        out.push(("bert.head_bias".to_string(), self.head_bias));
        out
    }
}

/// Assemble the (T+1) x d transformer input: the classification row first,
/// then one row per frame. Each frame's K x F encoding is flattened and
/// combined with its position embedding (concatenated or added per config).
pub fn build_input(
    tape: &mut Tape,
    spatial_frames: &[Var],
    vars: &BertEncoderVars,
    cfg: &ModelConfig,
) -> Result<Var, Error> {
    let pos_rows = tape.value(vars.positional).rows();
    if spatial_frames.len() + 1 != pos_rows {
        return Err(Error::Shape(format!(
            "{} frames need {} positional rows, table has {pos_rows}",
            spatial_frames.len(),
            spatial_frames.len() + 1
        )));
    }
    let m = cfg.spatial_width();
    let mut rows = Vec::with_capacity(spatial_frames.len() + 1);
    let cls_pos = tape.row(vars.positional, 0)?;
    rows.push(match cfg.positional_mode {
        PositionalMode::Concat => tape.concat(vars.cls_token, cls_pos, 1)?,
        PositionalMode::Additive => tape.add(vars.cls_token, cls_pos)?,
    });
    for (i, &frame) in spatial_frames.iter().enumerate() {
        let flat = tape.reshape(frame, &[1, m])?;
        let pos = tape.row(vars.positional, i + 1)?;
        rows.push(match cfg.positional_mode {
            PositionalMode::Concat => tape.concat(flat, pos, 1)?,
            PositionalMode::Additive => tape.add(flat, pos)?,
        });
    }
    tape.concat_many(&rows, 0)
}

/// One attention head: softmax-weighted value mixing over all positions.
pub fn attention_head(
    tape: &mut Tape,
    seq: Var,
    head: &AttentionHeadVars,
    scale_logits: bool,
) -> Result<Var, Error> {
    let q = tape.matmul(seq, head.wq)?;
    let k = tape.matmul(seq, head.wk)?;
    let v = tape.matmul(seq, head.wv)?;
    let kt = tape.transpose(k)?;
    let mut logits = tape.matmul(q, kt)?;
    if scale_logits {
        let dh = tape.value(q).cols();
        logits = tape.scale(logits, 1.0 / (dh as Real).sqrt())?;
    }
    let attn = tape.softmax(logits, 1)?;
    tape.matmul(attn, v)
}

/// Arithmetic mean of the per-head outputs.
pub fn multi_head(
    tape: &mut Tape,
    seq: Var,
    heads: &[AttentionHeadVars],
    scale_logits: bool,
) -> Result<Var, Error> {
    if heads.is_empty() {
        return Err(Error::Invalid("multi_head needs at least one head".into()));
    }
    let mut outputs = Vec::with_capacity(heads.len());
    for head in heads {
        outputs.push(attention_head(tape, seq, head, scale_logits)?);
    }
    let first_shape = tape.value(outputs[0]).shape().to_vec();
    let mut sum = outputs[0];
    for &o in &outputs[1..] {
        if tape.value(o).shape() != first_shape {
            return Err(Error::Shape("attention heads have unequal widths".into()));
        }
        sum = tape.add(sum, o)?;
    }
    tape.scale(sum, 1.0 / heads.len() as Real)
}

/// Position-wise feed-forward: w2 . GELU(w1 . x + b1) + b2 at each position.
pub fn pffn(tape: &mut Tape, x: Var, layer: &BertLayerVars) -> Result<Var, Error> {
    let hidden = tape.matmul(x, layer.w1)?;
    let hidden = tape.add_row_bias(hidden, layer.b1)?;
    let act = tape.gelu(hidden)?;
    let out = tape.matmul(act, layer.w2)?;
    tape.add_row_bias(out, layer.b2)
}

/// One transformer layer. Default: y = PFFN(multi_head(x)). With
/// `standard_bert_residuals`: y = LN(a + PFFN(a)) where a = LN(x + MH(x)).
pub fn transformer_layer(
    tape: &mut Tape,
    seq: Var,
    layer: &BertLayerVars,
    cfg: &ModelConfig,
) -> Result<Var, Error> {
    let attended = multi_head(tape, seq, &layer.heads, cfg.attention_scale)?;
    if cfg.standard_bert_residuals {
        let res = tape.add(seq, attended)?;
        let a = tape.layer_norm(res, LAYER_NORM_EPS)?;
        let ff = pffn(tape, a, layer)?;
        let res2 = tape.add(a, ff)?;
        tape.layer_norm(res2, LAYER_NORM_EPS)
    } else {
        pffn(tape, attended, layer)
    }
}

/// Final classification-position output and the temporal head.
#[derive(Debug, Clone)]
pub struct TemporalEncoding {
    /// 1 x d output at the classification position after the last layer.
    pub y_cls: Var,
    /// 1 x G head output, tanh-bounded.
    pub v_hat: Var,
}

pub fn encode_temporal(
    tape: &mut Tape,
    spatial_frames: &[Var],
    vars: &BertEncoderVars,
    cfg: &ModelConfig,
) -> Result<TemporalEncoding, Error> {
    let mut seq = build_input(tape, spatial_frames, vars, cfg)?;
    for layer in &vars.layers {
        seq = transformer_layer(tape, seq, layer, cfg)?;
    }
    let y_cls = tape.row(seq, 0)?;
    let proj = tape.matmul(y_cls, vars.head_weight)?;
    let biased = tape.add_row_bias(proj, vars.head_bias)?;
    let v_hat = tape.tanh(biased)?;
    Ok(TemporalEncoding { y_cls, v_hat })
}
