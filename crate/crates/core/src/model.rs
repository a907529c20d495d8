//! The combined classifier: spatial encoder, temporal encoder, and the fused
//! class head, with a flat named-parameter view for the optimizer and
//! checkpoints.

use crate::bert::{self, BertEncoderParams, BertEncoderVars};
use crate::config::ModelConfig;
use crate::error::Error;
use crate::fusion;
use crate::gcn::{self, GcnEncoderParams, GcnEncoderVars};
use crate::pose::PoseSequence;
use crate::rng::Rng;
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub gcn: GcnEncoderParams,
    pub bert: BertEncoderParams,
}

/// Parameter vars bound to one tape for one forward/backward pass.
pub struct BoundModel<'m> {
    pub config: &'m ModelConfig,
    pub gcn: GcnEncoderVars,
    pub bert: BertEncoderVars,
}

/// Head outputs and fused logits for one clip.
pub struct ModelOutput {
    pub u_hat: Var,
    pub v_hat: Var,
    pub logits: Var,
}

impl Model {
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Model, Error> {
        config.validate()?;
        Ok(Model {
            gcn: GcnEncoderParams::init(&config, rng),
            bert: BertEncoderParams::init(&config, rng),
            config,
        })
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.gcn.named();
        out.extend(self.bert.named());
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.gcn.named_mut();
        out.extend(self.bert.named_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn bind<'m>(&'m self, tape: &mut Tape) -> Result<BoundModel<'m>, Error> {
        Ok(BoundModel {
            config: &self.config,
            gcn: self.gcn.bind(tape)?,
            bert: self.bert.bind(tape)?,
        })
    }

    /// Forward pass without recording, returning the plain logit vector.
    pub fn logits(&self, poses: &PoseSequence) -> Result<Vec<Real>, Error> {
        let mut tape = Tape::new();
        tape.set_recording(false);
        let bound = self.bind(&mut tape)?;
        let out = bound.forward(&mut tape, poses)?;
        Ok(tape.value(out.logits).data().to_vec())
    }
}

impl BoundModel<'_> {
    pub fn named(&self) -> Vec<(String, Var)> {
        let mut out = self.gcn.named();
        out.extend(self.bert.named());
        out
    }

    pub fn forward(&self, tape: &mut Tape, poses: &PoseSequence) -> Result<ModelOutput, Error> {
        let spatial = gcn::encode_sequence(tape, poses, &self.gcn, self.config)?;
        let temporal = bert::encode_temporal(tape, &spatial.per_frame, &self.bert, self.config)?;
        let u = tape.reshape(spatial.u_hat, &[self.config.class_count])?;
        let v = tape.reshape(temporal.v_hat, &[self.config.class_count])?;
        let logits = fusion::fuse(tape, u, v)?;
        Ok(ModelOutput {
            u_hat: u,
            v_hat: v,
            logits,
        })
    }

    /// Forward plus cross-entropy against the sequence's label.
    pub fn loss(&self, tape: &mut Tape, poses: &PoseSequence) -> Result<(ModelOutput, Var), Error> {
        let out = self.forward(tape, poses)?;
        let loss = fusion::cross_entropy(tape, out.logits, poses.gloss_id)?;
        Ok((out, loss))
    }
}
