//! Per-frame spatial encoder: stacked graph-convolution layers over a fully
//! connected skeleton graph with a learned weighted adjacency, residual
//! blocks, temporal mean pooling, and the spatial class head.
//!
//! One layer computes tanh(A . H . W). A block applies L layers and adds its
//! input back, so a block with zero weights is an exact no-op. Every frame is
//! encoded independently with shared parameters; the temporal mean of the
//! per-frame encodings feeds a tanh-activated fully connected head.

use crate::config::ModelConfig;
use crate::error::Error;
use crate::pose::PoseSequence;
use crate::rng::Rng;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Uniform init in +-sqrt(6 / (fan_in + fan_out)).
pub(crate) fn xavier(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as Real).sqrt();
    let data: Vec<Real> = (0..rows * cols).map(|_| rng.range(-limit, limit)).collect();
    Tensor::from_vec(&[rows, cols], data).expect("shape matches data")
}

/// All learnable parameters of the spatial encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnEncoderParams {
    /// K x K learned adjacency, shared by every layer and block.
    pub adjacency: Tensor,
    /// Lifting layer weight, 2 -> F.
    pub lift: Tensor,
    /// B blocks of L weight matrices, each F x F.
    pub blocks: Vec<Vec<Tensor>>,
    /// (K * F) x G head over the flattened pooled encoding.
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl GcnEncoderParams {
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> GcnEncoderParams {
        let k = cfg.keypoints;
        let f = cfg.feature_width;
        let blocks = (0..cfg.gcn_blocks)
            .map(|_| (0..cfg.gcn_layers).map(|_| xavier(rng, f, f)).collect())
            .collect();
        GcnEncoderParams {
            adjacency: Tensor::filled(&[k, k], 1.0 / k as Real),
            lift: xavier(rng, 2, f),
            blocks,
            head_weight: xavier(rng, k * f, cfg.class_count),
            head_bias: Tensor::zeros(&[cfg.class_count]),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("gcn.adjacency".to_string(), &self.adjacency),
            ("gcn.lift".to_string(), &self.lift),
        ];
        for (b, block) in self.blocks.iter().enumerate() {
            for (l, w) in block.iter().enumerate() {
                out.push((format!("gcn.block{b}.layer{l}"), w));
            }
        }
        out.push(("gcn.head_weight".to_string(), &self.head_weight));
        out.push(("gcn.head_bias".to_string(), &self.head_bias));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("gcn.adjacency".to_string(), &mut self.adjacency),
            ("gcn.lift".to_string(), &mut self.lift),
        ];
        for (b, block) in self.blocks.iter_mut().enumerate() {
            for (l, w) in block.iter_mut().enumerate() {
                out.push((format!("gcn.block{b}.layer{l}"), w));
            }
        }
        out.push(("gcn.head_weight".to_string(), &mut self.head_weight));
        out.push(("gcn.head_bias".to_string(), &mut self.head_bias));
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<GcnEncoderVars, Error> {
        Ok(GcnEncoderVars {
            adjacency: tape.var(self.adjacency.clone())?,
            lift: tape.var(self.lift.clone())?,
            blocks: self
                .blocks
                .iter()
                .map(|block| block.iter().map(|w| tape.var(w.clone())).collect())
                .collect::<Result<_, _>>()?,
            head_weight: tape.var(self.head_weight.clone())?,
            head_bias: tape.var(self.head_bias.clone())?,
        })
    }
}

/// Tape handles for one forward pass.
#[derive(Debug, Clone)]
pub struct GcnEncoderVars {
    pub adjacency: Var,
    pub lift: Var,
    pub blocks: Vec<Vec<Var>>,
    pub head_weight: Var,
    pub head_bias: Var,
}

impl GcnEncoderVars {
    pub fn named(&self) -> Vec<(String, Var)> {
        let mut out = vec![
            ("gcn.adjacency".to_string(), self.adjacency),
            ("gcn.lift".to_string(), self.lift),
        ];
        for (b, block) in self.blocks.iter().enumerate() {
            for (l, w) in block.iter().enumerate() {
                out.push((format!("gcn.block{b}.layer{l}"), *w));
            }
        }
        out.push(("gcn.head_weight".to_string(), self.head_weight));
        out.push(("gcn.head_bias".to_string(), self.head_bias));
        out
    }
}

/// One graph convolution: tanh(adjacency . h . w).
pub fn gcn_layer(tape: &mut Tape, h: Var, adjacency: Var, w: Var) -> Result<Var, Error> {
    let ah = tape.matmul(adjacency, h)?;
    let ahw = tape.matmul(ah, w)?;
    tape.tanh(ahw)
}

/// L stacked layers plus the residual bypass: output = layers(input) + input.
pub fn gcn_block(
    tape: &mut Tape,
    input: Var,
    adjacency: Var,
    weights: &[Var],
) -> Result<Var, Error> {
    let mut h = input;
    for &w in weights {
        h = gcn_layer(tape, h, adjacency, w)?;
    }
    if tape.value(h).shape() != tape.value(input).shape() {
        return Err(Error::Shape(format!(
            "residual block output {:?} does not match input {:?}",
            tape.value(h).shape(),
            tape.value(input).shape()
        )));
    }
    tape.add(h, input)
}

/// Spatial encoding of one clip: per-frame node features, their temporal
/// mean, and the spatial head output.
#[derive(Debug, Clone)]
pub struct SpatialEncoding {
    /// T tensors of K x F node features.
    pub per_frame: Vec<Var>,
    /// K x F mean over the window.
    pub pooled: Var,
    /// 1 x G head output, tanh-bounded.
    pub u_hat: Var,
}

/// Encode pre-bound frame inputs (each a K x 2 var).
pub fn encode_frames(
    tape: &mut Tape,
    frames: &[Var],
    vars: &GcnEncoderVars,
    cfg: &ModelConfig,
) -> Result<SpatialEncoding, Error> {
    if frames.is_empty() {
        return Err(Error::Invalid(
            "cannot encode an empty frame sequence".into(),
        ));
    }
    for &f in frames {
        let shape = tape.value(f).shape();
        if shape != [cfg.keypoints, 2] {
            return Err(Error::Shape(format!(
                "frame shape {:?} does not match configured {}x2",
                shape, cfg.keypoints
            )));
        }
    }
    let mut per_frame = Vec::with_capacity(frames.len());
    for &frame in frames {
        let mut h = gcn_layer(tape, frame, vars.adjacency, vars.lift)?;
        for block in &vars.blocks {
            h = gcn_block(tape, h, vars.adjacency, block)?;
        }
        per_frame.push(h);
    }
    let mut sum = per_frame[0];
    for &h in &per_frame[1..] {
        sum = tape.add(sum, h)?;
    }
    let pooled = tape.scale(sum, 1.0 / per_frame.len() as Real)?;

    let flat = tape.reshape(pooled, &[1, cfg.keypoints * cfg.feature_width])?;
    let proj = tape.matmul(flat, vars.head_weight)?;
    let biased = tape.add_row_bias(proj, vars.head_bias)?;
    let u_hat = tape.tanh(biased)?;
    Ok(SpatialEncoding {
        per_frame,
        pooled,
        u_hat,
    })
}

/// Encode a pose sequence, creating its frame inputs on the tape.
pub fn encode_sequence(
    tape: &mut Tape,
    poses: &PoseSequence,
    vars: &GcnEncoderVars,
    cfg: &ModelConfig,
) -> Result<SpatialEncoding, Error> {
    if poses.window() != cfg.window || poses.keypoints() != cfg.keypoints {
        return Err(Error::Shape(format!(
            "sequence is {}x{}, config expects {}x{}",
            poses.window(),
            poses.keypoints(),
            cfg.window,
            cfg.keypoints
        )));
    }
    let mut frames = Vec::with_capacity(poses.window());
    for t in 0..poses.window() {
        frames.push(tape.var(poses.frame_tensor(t))?);
    }
    encode_frames(tape, &frames, vars, cfg)
}
