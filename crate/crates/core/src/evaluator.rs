//! Top-K accuracy over a dataset split, per-class breakdown, and
//! most-confused gloss pairs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::fusion;
use crate::model::Model;
use crate::pose::{
    load_clip_frames, DatasetManifest, FrameCoords, PoseSequence, SampleMode, Split,
};
use crate::rng::Rng;

pub const REPORT_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub true_gloss: String,
    pub predicted_gloss: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sample_count: usize,
    /// Percentage per k, keys "1", "5", "10". Two-decimal precision.
    pub top_k: BTreeMap<String, f64>,
    /// Top-1 percentage per class id.
    pub per_class_top1: Vec<f64>,
    /// Top-1 mispredictions sorted by count descending.
    pub confusion_pairs: Vec<ConfusionPair>,
    /// Flat config echo of the run that produced the evaluated model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<BTreeMap<String, serde_json::Value>>,
}

fn two_decimals(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Aggregate a report from (target class, full ranking) pairs. A top-k hit
/// means the target appears among the first min(k, G) ranked classes.
pub fn report_from_rankings(
    rankings: &[(usize, Vec<usize>)],
    vocabulary: &[String],
) -> Result<EvalReport, Error> {
    if rankings.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty split".into()));
    }
    let classes = vocabulary.len();
    let n = rankings.len();

    let mut top_k = BTreeMap::new();
    for k in REPORT_KS {
        let kk = k.min(classes);
        let hits = rankings
            .iter()
            .filter(|(target, ranking)| ranking[..kk].contains(target))
            .count();
        top_k.insert(k.to_string(), two_decimals(100.0 * hits as f64 / n as f64));
    }

    let mut class_hits = vec![0usize; classes];
    let mut class_totals = vec![0usize; classes];
    let mut confusion: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (target, ranking) in rankings {
        if *target >= classes {
            return Err(Error::Invalid(format!(
                "target class {target} outside vocabulary of {classes}"
            )));
        }
        class_totals[*target] += 1;
        let predicted = ranking[0];
        if predicted == *target {
            class_hits[*target] += 1;
        } else {
            *confusion.entry((*target, predicted)).or_insert(0) += 1;
        }
    }
    let per_class_top1 = class_hits
        .iter()
        .zip(&class_totals)
        .map(|(&h, &t)| {
            if t == 0 {
                0.0
            } else {
                two_decimals(100.0 * h as f64 / t as f64)
            }
        })
        .collect();

    let mut confusion_pairs: Vec<ConfusionPair> = confusion
        .into_iter()
        .map(|((t, p), count)| ConfusionPair {
            true_gloss: vocabulary[t].clone(),
            predicted_gloss: vocabulary[p].clone(),
            count,
        })
        .collect();
    confusion_pairs.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then_with(|| a.true_gloss.cmp(&b.true_gloss))
            .then_with(|| a.predicted_gloss.cmp(&b.predicted_gloss))
    });

    Ok(EvalReport {
        sample_count: n,
        top_k,
        per_class_top1,
        confusion_pairs,
        config: None,
    })
}

/// Deterministic class ranking for one clip: center window, no recording.
pub fn rank_clip(
    model: &Model,
    frames: &[FrameCoords],
    source_id: &str,
) -> Result<Vec<usize>, Error> {
    // eval-mode sampling ignores the RNG
    let mut rng = Rng::new(0);
    let seq = PoseSequence::from_frames(
        frames,
        SampleMode::Eval,
        model.config.window,
        &mut rng,
        0,
        source_id,
    )?;
    let logits = model.logits(&seq)?;
    Ok(fusion::ranking(&logits))
}

/// Evaluate a model over one manifest split.
pub fn evaluate(
    model: &Model,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<EvalReport, Error> {
    if manifest.class_count() != model.config.class_count {
        return Err(Error::Invalid(format!(
            "manifest has {} classes, model expects {}",
            manifest.class_count(),
            model.config.class_count
        )));
    }
    let entries = manifest.split(split);
    if entries.is_empty() {
        return Err(Error::Invalid(format!("split {} is empty", split.name())));
    }
    let mut rankings = Vec::with_capacity(entries.len());
    for entry in entries {
        let frames = load_clip_frames(manifest, entry)?;
        rankings.push((entry.gloss_id, rank_clip(model, &frames, &entry.video_id)?));
    }
    report_from_rankings(&rankings, &manifest.vocabulary)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<EvalReport, Error> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("report parse: {e}")))
    }

    pub fn top_k(&self, k: usize) -> f64 {
        self.top_k.get(&k.to_string()).copied().unwrap_or(0.0)
    }

    /// Human-readable summary table.
    pub fn render_table(&self, split: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>8} {:>8} {:>8} {:>8}\n",
            "split", "samples", "top-1", "top-5", "top-10"
        ));
        out.push_str(&format!(
            "{:<12} {:>8} {:>8.2} {:>8.2} {:>8.2}\n",
            split,
            self.sample_count,
            self.top_k(1),
            self.top_k(5),
            self.top_k(10)
        ));
        if !self.confusion_pairs.is_empty() {
            out.push_str("\nmost confused (true -> predicted, count):\n");
            for pair in self.confusion_pairs.iter().take(10) {
                out.push_str(&format!(
                    "  {} -> {}  {}\n",
                    pair.true_gloss, pair.predicted_gloss, pair.count
                ));
            }
        }
        out
    }
}
