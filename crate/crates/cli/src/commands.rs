//! Command implementations.

use std::path::{Path, PathBuf};

use glossnet_core::checkpoint;
use glossnet_core::config::RunConfig;
use glossnet_core::evaluator;
use glossnet_core::fusion;
use glossnet_core::gradcheck;
use glossnet_core::pose::{self, PoseSequence, SampleMode, Split};
use glossnet_core::rng::Rng;
use glossnet_core::synth::{self, SynthSpec};
use glossnet_core::tensor::Real;
use glossnet_core::trainer::{self, TrainOptions};

use crate::args::Flags;
use crate::Failure;

/// `--data` may point at a manifest file or a directory containing
/// manifest.json.
fn manifest_path(data: &Path) -> Result<PathBuf, Failure> {
    if data.is_dir() {
        let p = data.join("manifest.json");
        if !p.exists() {
            return Err(Failure::Data(format!(
                "{}: no manifest.json in data directory",
                data.display()
            )));
        }
        Ok(p)
    } else if data.exists() {
        Ok(data.to_path_buf())
    } else {
        Err(Failure::Data(format!(
            "{}: data path does not exist",
            data.display()
        )))
    }
}

pub fn cmd_synth(argv: &[String]) -> Result<(), Failure> {
    let flags = Flags::parse(
        argv,
        &["out", "classes", "per-class", "frames", "sigma", "seed"],
    )?;
    let out = flags.require_path("out")?;
    let spec = SynthSpec {
        class_count: flags.usize_or("classes", 10)?,
        samples_per_class: flags.usize_or("per-class", 20)?,
        frame_count: flags.usize_or("frames", 60)?,
        noise_sigma: flags.f64_or("sigma", 0.02)?,
        seed: flags.u64_opt("seed")?.unwrap_or(42),
    };
    let manifest = synth::generate(&spec, &out)?;
    println!(
        "wrote {} classes x {} samples ({} clips) to {}",
        spec.class_count,
        spec.samples_per_class,
        spec.class_count * spec.samples_per_class,
        out.display()
    );
    for split in [Split::Train, Split::Validation, Split::Test] {
        println!("  {}: {} clips", split.name(), manifest.split(split).len());
    }
    Ok(())
}

pub fn cmd_train(argv: &[String]) -> Result<(), Failure> {
    let flags = Flags::parse(argv, &["data", "out", "config", "seed", "threads"])?;
    let data = flags.require_path("data")?;
    let out = flags.require_path("out")?;

    let mut config = match flags.path("config") {
        Some(p) => RunConfig::from_file(&p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = flags.u64_opt("seed")? {
        config.train.seed = seed;
    }
    if let Some(threads) = flags.get("threads") {
        config.train.threads = threads
            .parse()
            .map_err(|_| Failure::Usage(format!("--threads: {threads:?} is not a number")))?;
    }

    let manifest = pose::load_manifest(&manifest_path(&data)?)?;
    std::fs::create_dir_all(&out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;

    let outcome = trainer::train(
        &manifest,
        &TrainOptions {
            config,
            out_dir: Some(out.clone()),
        },
    )?;
    for r in &outcome.records {
        println!(
            "epoch {:>4}  loss {:>8.4}  train_top1 {:>6.2}  val_top1 {:>6.2}  val_top5 {:>6.2}",
            r.epoch, r.train_loss, r.train_top1, r.val_top1, r.val_top5
        );
    }
    println!(
        "done: {} epochs, best val top-1 {:.2} (epoch {}), checkpoints in {}",
        outcome.epochs_run,
        outcome.best_val_top1,
        outcome.best_epoch,
        out.display()
    );
    Ok(())
}

pub fn cmd_eval(argv: &[String]) -> Result<(), Failure> {
    let flags = Flags::parse(argv, &["checkpoint", "data", "split", "out"])?;
    let ck_path = flags.require_path("checkpoint")?;
    let data = flags.require_path("data")?;
    let split = Split::parse(flags.get("split").unwrap_or("test"))?;

    let ck = checkpoint::load(&ck_path)?;
    let (model, _) = checkpoint::restore_model(&ck)?;
    let manifest = pose::load_manifest(&manifest_path(&data)?)?;
    let mut report = evaluator::evaluate(&model, &manifest, split)?;
    report.config = Some(ck.config.clone());

    print!("{}", report.render_table(split.name()));
    if let Some(out) = flags.path("out") {
        std::fs::create_dir_all(&out)
            .map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
        let path = out.join(format!("eval_{}.json", split.name()));
        std::fs::write(&path, report.to_json())
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

pub fn cmd_predict(argv: &[String]) -> Result<(), Failure> {
    let flags = Flags::parse(argv, &["checkpoint", "clip", "k", "width", "height"])?;
    let ck_path = flags.require_path("checkpoint")?;
    let clip_path = flags.require_path("clip")?;

    let ck = checkpoint::load(&ck_path)?;
    let (model, run_cfg) = checkpoint::restore_model(&ck)?;
    let class_count = model.config.class_count;
    let k = flags.usize_or("k", 5.min(class_count))?;
    if k == 0 || k > class_count {
        return Err(Failure::Usage(format!("--k {k} outside 1..={class_count}")));
    }

    let fallback = (
        flags.f64_or("width", 0.0)? as Real,
        flags.f64_or("height", 0.0)? as Real,
    );
    let frames = pose::load_clip_path(&clip_path, fallback)?;
    let mut rng = Rng::new(0);
    let seq = PoseSequence::from_frames(
        &frames,
        SampleMode::Eval,
        run_cfg.data_window,
        &mut rng,
        0,
        &clip_path.display().to_string(),
    )?;
    let logits = model.logits(&seq)?;
    let probs = fusion::probabilities(&logits);
    for id in fusion::predict(&logits, k)? {
        let name = ck
            .vocabulary
            .get(id)
            .cloned()
            .unwrap_or_else(|| format!("class{id}"));
        println!("{name} {:.6}", probs[id]);
    }
    Ok(())
}

pub fn cmd_gradcheck(argv: &[String]) -> Result<(), Failure> {
    let flags = Flags::parse(argv, &["threshold", "corrupt"])?;
    let threshold = flags.f64_or("threshold", gradcheck::DEFAULT_THRESHOLD as f64)? as Real;
    let corrupt = flags.get("corrupt") == Some("true");

    let reports = gradcheck::run_components(corrupt)?;
    let mut failing = Vec::new();
    for r in &reports {
        let status = if r.max_error < threshold {
            "ok"
        } else {
            "FAIL"
        };
        println!(
            "{:<22} max_rel_err {:>12.3e}  {status}",
            r.name, r.max_error
        );
        for (group, err) in &r.groups {
            println!("    {group:<28} {err:>12.3e}");
        }
        if r.max_error >= threshold {
            failing.push(r.name.clone());
        }
    }
    if failing.is_empty() {
        println!("all {} components below {threshold:e}", reports.len());
        Ok(())
    } else {
        Err(Failure::Numeric(format!(
            "gradient check failed for: {}",
            failing.join(", ")
        )))
    }
}
