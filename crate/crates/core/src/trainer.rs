//! Adam optimization with decoupled weight decay, the epoch loop, validation
//! checkpointing, and the per-epoch training log.
//!
//! Every sample's forward/backward runs on its own tape; batch gradients are
//! reduced in sample order, so results are bit-identical regardless of the
//! worker thread count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::error::Error;
use crate::evaluator;
use crate::fusion;
use crate::model::Model;
use crate::pose::{load_split, DatasetManifest, LoadedClip, PoseSequence, SampleMode, Split};
use crate::rng::Rng;
use crate::tensor::{Real, Tape, Tensor};

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-8,
        }
    }
}

/// Per-parameter first/second moments plus the step counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new() -> AdamState {
        AdamState::default()
    }
}

/// One optimizer step. `params` and `grads` are aligned; decoupled weight
/// decay (p -= lr * wd * p) is applied before the bias-corrected update.
pub fn adam_step(
    params: &mut [(String, &mut Tensor)],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), Error> {
    if params.len() != grads.len() {
        return Err(Error::Invalid(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "{name}: gradient shape {:?} does not match parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {name} is not finite; aborting optimizer step"
            )));
        }
    }
    state.step += 1;
    let t = state.step;
    let lr = cfg.learning_rate as Real;
    let wd = cfg.weight_decay as Real;
    let b1 = cfg.beta1 as Real;
    let b2 = cfg.beta2 as Real;
    let eps = cfg.epsilon as Real;
    let bias1 = 1.0 - b1.powi(t as i32);
    let bias2 = 1.0 - b2.powi(t as i32);

    for ((name, p), g) in params.iter_mut().zip(grads) {
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let pd = p.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..pd.len() {
            if wd != 0.0 {
                pd[i] -= lr * wd * pd[i];
            }
            let gi = g.data()[i];
            md[i] = b1 * md[i] + (1.0 - b1) * gi;
            vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
            let m_hat = md[i] / bias1;
            let v_hat = vd[i] / bias2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_top1: f64,
    pub val_top1: f64,
    pub val_top5: f64,
    pub wall_ms: u64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub records: Vec<EpochRecord>,
    pub best_val_top1: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

pub struct TrainOptions {
    pub config: RunConfig,
    /// Where best.ckpt, last.ckpt and train_log.jsonl go; None skips writing.
    pub out_dir: Option<PathBuf>,
}

fn sample_result(model: &Model, seq: &PoseSequence) -> Result<(Real, bool, Vec<Tensor>), Error> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape)?;
    let (out, loss) = bound.loss(&mut tape, seq)?;
    let grads = tape.backward(loss)?;
    let g: Vec<Tensor> = bound
        .named()
        .iter()
        .map(|(_, v)| tape.grad(&grads, *v))
        .collect();
    let correct = fusion::ranking(tape.value(out.logits).data())[0] == seq.gloss_id;
    Ok((tape.value(loss).item(), correct, g))
}

/// Compute per-sample results, optionally in parallel. Output order always
/// matches input order.
fn batch_results(
    model: &Model,
    sequences: &[PoseSequence],
    threads: usize,
) -> Result<Vec<(Real, bool, Vec<Tensor>)>, Error> {
    if threads <= 1 || sequences.len() <= 1 {
        return sequences.iter().map(|s| sample_result(model, s)).collect();
    }
    let chunk = sequences.len().div_ceil(threads);
    let results: Vec<Vec<Result<(Real, bool, Vec<Tensor>), Error>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sequences
            .chunks(chunk)
            .map(|slice| {
                scope.spawn(move || slice.iter().map(|s| sample_result(model, s)).collect())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(sequences.len());
    for chunk in results {
        for r in chunk {
            out.push(r?);
        }
    }
    Ok(out)
}

fn validation_metrics(model: &Model, clips: &[LoadedClip]) -> Result<(f64, f64), Error> {
    if clips.is_empty() {
        return Ok((0.0, 0.0));
    }
    let g = model.config.class_count;
    let (mut hit1, mut hit5) = (0usize, 0usize);
    for clip in clips {
        let ranking = evaluator::rank_clip(model, &clip.frames, &clip.video_id)?;
        if ranking[0] == clip.gloss_id {
            hit1 += 1;
        }
        if ranking[..5.min(g)].contains(&clip.gloss_id) {
            hit5 += 1;
        }
    }
    let n = clips.len() as f64;
    Ok((100.0 * hit1 as f64 / n, 100.0 * hit5 as f64 / n))
}

fn make_checkpoint(
    model: &Model,
    adam: &AdamState,
    config: &RunConfig,
    vocabulary: &[String],
    epoch: usize,
    best_val_top1: f64,
    rng: &Rng,
) -> Checkpoint {
    let mut echo = config.to_flat_json();
    echo.insert("model.class_count".into(), model.config.class_count.into());
    let mut tensors: Vec<(String, Tensor)> = model
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    for (name, t) in &adam.m {
        tensors.push((format!("optim.m.{name}"), t.clone()));
    }
    for (name, t) in &adam.v {
        tensors.push((format!("optim.v.{name}"), t.clone()));
    }
    Checkpoint {
        config: echo,
        vocabulary: vocabulary.to_vec(),
        epoch: epoch as u64,
        best_val_top1,
        optim_step: adam.step,
        rng_state: rng.state(),
        tensors,
    }
}

/// Run the full training loop over the manifest's train split.
pub fn train(manifest: &DatasetManifest, options: &TrainOptions) -> Result<TrainOutcome, Error> {
    let cfg = &options.config;
    let model_cfg = cfg.model_config(manifest.class_count())?;
    let train_clips = load_split(manifest, Split::Train)?;
    if train_clips.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    let val_clips = load_split(manifest, Split::Validation)?;

    let mut init_rng = Rng::derive(cfg.train.seed, 0);
    let mut model = Model::init(model_cfg, &mut init_rng)?;
    let mut run_rng = Rng::derive(cfg.train.seed, 1);
    let mut adam_state = AdamState::new();
    let adam_cfg = AdamConfig {
        learning_rate: cfg.train.learning_rate,
        weight_decay: cfg.train.weight_decay,
        ..AdamConfig::default()
    };

    let log_path = options.out_dir.as_ref().map(|d| d.join("train_log.jsonl"));
    if let Some(p) = &log_path {
        std::fs::write(p, "").map_err(|e| Error::io(p, e))?;
    }

    let mut records = Vec::new();
    let mut best_val_top1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut epochs_run = 0;

    let batch_size = cfg.train.batch_size.max(1);
    let threads = cfg.train.threads.max(1);

    for epoch in 0..cfg.train.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_clips.len()).collect();
        run_rng.shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        let mut hits = 0usize;
        for batch in order.chunks(batch_size) {
            // windows are drawn sequentially so the RNG stream is
            // independent of the worker count
            let mut sequences = Vec::with_capacity(batch.len());
            for &idx in batch {
                let clip = &train_clips[idx];
                sequences.push(PoseSequence::from_frames(
                    &clip.frames,
                    SampleMode::Train,
                    cfg.data_window,
                    &mut run_rng,
                    clip.gloss_id,
                    &clip.video_id,
                )?);
            }
            let results = batch_results(&model, &sequences, threads)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}: {e}")))?;

            let mut grad_sum: Vec<Tensor> = Vec::new();
            for (loss, correct, grads) in results {
                loss_sum += loss as f64;
                hits += correct as usize;
                if grad_sum.is_empty() {
                    grad_sum = grads;
                } else {
                    for (acc, g) in grad_sum.iter_mut().zip(&grads) {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as Real;
            for g in &mut grad_sum {
                for x in g.data_mut() {
                    *x *= scale;
                }
            }

            if cfg.train.grad_clip > 0.0 {
                let norm: f64 = grad_sum
                    .iter()
                    .flat_map(|g| g.data())
                    .map(|&x| (x as f64) * (x as f64))
                    .sum::<f64>()
                    .sqrt();
                if norm > cfg.train.grad_clip {
                    let s = (cfg.train.grad_clip / norm) as Real;
                    for g in &mut grad_sum {
                        for x in g.data_mut() {
                            *x *= s;
                        }
                    }
                }
            }

            let mut params = model.named_mut();
            adam_step(&mut params, &grad_sum, &mut adam_state, &adam_cfg)?;
        }

        let n = train_clips.len() as f64;
        let train_loss = loss_sum / n;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "epoch {epoch}: training loss is {train_loss}"
            )));
        }
        let train_top1 = 100.0 * hits as f64 / n;
        let (val_top1, val_top5) = validation_metrics(&model, &val_clips)?;

        let record = EpochRecord {
            epoch,
            train_loss,
            train_top1,
            val_top1,
            val_top5,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        if let Some(p) = &log_path {
            use std::io::Write;
            let line = serde_json::to_string(&record)
                .map_err(|e| Error::Format(format!("log record: {e}")))?;
            let mut file = std::fs::OpenOptions::new()
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?;
            writeln!(file, "{line}").map_err(|e| Error::io(p, e))?;
        }
        records.push(record);
        epochs_run = epoch + 1;

        let improved = !val_clips.is_empty() && val_top1 > best_val_top1;
        if improved {
            best_val_top1 = val_top1;
            best_epoch = epoch;
        }
        if let Some(dir) = &options.out_dir {
            let ck = make_checkpoint(
                &model,
                &adam_state,
                cfg,
                &manifest.vocabulary,
                epoch,
                best_val_top1.max(0.0),
                &run_rng,
            );
            checkpoint::save(&ck, &dir.join("last.ckpt"))?;
            if improved {
                checkpoint::save(&ck, &dir.join("best.ckpt"))?;
            }
        }

        if cfg.train.target_top1 > 0.0 && train_top1 >= cfg.train.target_top1 {
            break;
        }
    }

    if let Some(dir) = &options.out_dir {
        // make sure best.ckpt exists even without a validation split
        let best = dir.join("best.ckpt");
        if !best.exists() {
            std::fs::copy(dir.join("last.ckpt"), &best).map_err(|e| Error::io(&best, e))?;
        }
    }

    Ok(TrainOutcome {
        model,
        records,
        best_val_top1: best_val_top1.max(0.0),
        best_epoch,
        epochs_run,
    })
}

/// Reads a train_log.jsonl file back into records.
pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(format!("log line: {e}"))))
        .collect()
}
