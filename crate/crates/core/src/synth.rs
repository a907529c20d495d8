//! Deterministic synthetic pose-clip generator.
//!
//! Each class is a distinct parametric skeleton trajectory: a fixed upper
//! body with class-specific sinusoidal wrist and hand motion (frequency,
//! phase, amplitude and finger spread derived from the class index). Samples
//! add i.i.d. Gaussian coordinate noise. Files use the same keypoint-file
//! and manifest formats the real pipeline reads, so desk-scale end-to-end
//! training and CI need no corpus.

use std::path::Path;

use crate::error::Error;
use crate::pose::{
    load_split, sample_indices, DatasetManifest, LoadedClip, SampleMode, Split, BODY_POINTS,
    HAND_POINTS,
};
use crate::rng::Rng;
use crate::tensor::Real;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub class_count: usize,
    pub samples_per_class: usize,
    /// Frames per generated clip; should be at least the sampling window.
    pub frame_count: usize,
    /// Coordinate noise in normalized units.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            class_count: 10,
            samples_per_class: 20,
            frame_count: 60,
            noise_sigma: 0.02,
            seed: 42,
        }
    }
}

const CANVAS: Real = 256.0;

/// Static base skeleton in normalized [-1, 1] coordinates, 25 body points.
/// Indices 0..13 (the selected upper-body prefix) carry the signal.
fn base_body() -> [[Real; 2]; BODY_POINTS] {
    [
        [0.00, -0.55], // 0 nose
        [0.00, -0.35], // 1 neck
        [-0.28, -0.33],
        [-0.38, -0.05],
        [-0.30, 0.22], // 4 right wrist
        [0.28, -0.33],
        [0.38, -0.05],
        [0.30, 0.22], // 7 left wrist
        [0.00, 0.28],
        [-0.12, 0.28],
        [-0.13, 0.62],
        [-0.13, 0.92],
        [0.12, 0.28], // 12
        [0.13, 0.62],
        [0.13, 0.92],
        [-0.05, -0.60],
        [0.05, -0.60],
        [-0.11, -0.57],
        [0.11, -0.57],
        [0.10, 0.96],
        [0.16, 0.96],
        [0.13, 0.94],
        [-0.10, 0.96],
        [-0.16, 0.96],
        [-0.13, 0.94],
    ]
}

/// Class-specific trajectory parameters. Window sampling crops clips at
/// random starts, so class identity must survive cropping: the cues are
/// frequency, amplitude, the phase offset between the two wrists, rotation
/// direction and finger spread. The residue tuple (c mod 5, c mod 4,
/// c mod 7, c mod 3, c mod 2) is injective for well over 400 classes, so
/// distinct classes always differ in at least one crop-invariant cue.
struct ClassMotion {
    frequency: Real,
    phase: Real,
    amplitude: Real,
    hand_twist: Real,
    spread: Real,
    direction: Real,
}

impl ClassMotion {
    fn for_class(c: usize, class_count: usize) -> ClassMotion {
        ClassMotion {
            frequency: 1.5 + 0.75 * (c % 5) as Real,
            phase: 2.0 * std::f64::consts::PI as Real * c as Real / class_count as Real,
            amplitude: 0.14 + 0.04 * (c % 4) as Real,
            hand_twist: 0.9 * (c % 7) as Real,
            spread: 0.16 + 0.06 * (c % 3) as Real,
            direction: if c % 2 == 0 { 1.0 } else { -1.0 },
        }
    }
}

/// Noise-free skeleton of class `c` at frame `t`: (25 body, 21 left,
/// 21 right) normalized coordinates.
fn class_frame(
    motion: &ClassMotion,
    t: usize,
    frame_count: usize,
) -> ([[Real; 2]; BODY_POINTS], Vec<[Real; 2]>, Vec<[Real; 2]>) {
    let mut body = base_body();
    let tau = t as Real / frame_count as Real;
    let theta = 2.0 * std::f64::consts::PI as Real * motion.frequency * tau + motion.phase;

    // wrists trace class-specific ellipses; elbows follow halfway
    let right_shoulder = body[2];
    let left_shoulder = body[5];
    body[4] = [
        -0.30 + motion.amplitude * theta.cos(),
        0.22 + motion.direction * 0.8 * motion.amplitude * theta.sin(),
    ];
    body[7] = [
        0.30 + motion.amplitude * (theta + motion.hand_twist).cos(),
        0.22 + motion.direction * 0.8 * motion.amplitude * (theta + motion.hand_twist).sin(),
    ];
    body[3] = [
        0.5 * (right_shoulder[0] + body[4][0]) - 0.06,
        0.5 * (right_shoulder[1] + body[4][1]),
    ];
    body[6] = [
        0.5 * (left_shoulder[0] + body[7][0]) + 0.06,
        0.5 * (left_shoulder[1] + body[7][1]),
    ];

    let hand = |wrist: [Real; 2], orient: Real| -> Vec<[Real; 2]> {
        let mut points = Vec::with_capacity(HAND_POINTS);
        points.push(wrist);
        for finger in 0..5 {
            for joint in 0..4 {
                let angle = orient + (finger as Real - 2.0) * motion.spread;
                let radius = 0.030 * (joint + 1) as Real;
                points.push([
                    wrist[0] + radius * angle.cos(),
                    wrist[1] + radius * angle.sin(),
                ]);
            }
        }
        points
    };
    let left = hand(body[7], motion.direction * theta + motion.hand_twist + 0.5);
    let right = hand(
        body[4],
        -motion.direction * theta + 0.5 * motion.hand_twist - 0.5,
    );
    (body, left, right)
}

fn to_pixels(norm: [Real; 2], noise: Option<(&mut Rng, Real)>) -> (Real, Real) {
    let (mut x, mut y) = (norm[0], norm[1]);
    if let Some((rng, sigma)) = noise {
        x += sigma * rng.normal();
        y += sigma * rng.normal();
    }
    // keep normalized coordinates inside [-1, 1]
    x = x.clamp(-1.0, 1.0);
    y = y.clamp(-1.0, 1.0);
    ((x + 1.0) / 2.0 * CANVAS, (y + 1.0) / 2.0 * CANVAS)
}

fn keypoint_json(points: &[[Real; 2]], confidence: Real, rng: &mut Rng, sigma: Real) -> Vec<f64> {
    let mut flat = Vec::with_capacity(points.len() * 3);
    for &p in points {
        let (x, y) = to_pixels(p, Some((rng, sigma)));
        flat.push(x as f64);
        flat.push(y as f64);
        flat.push(confidence as f64);
    }
    flat
}

pub fn validate(spec: &SynthSpec) -> Result<(), Error> {
    if spec.class_count < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 classes, got {}",
            spec.class_count
        )));
    }
    if spec.samples_per_class == 0 {
        return Err(Error::Invalid("samples_per_class must be positive".into()));
    }
    if spec.frame_count == 0 {
        return Err(Error::Invalid("frame_count must be positive".into()));
    }
    if spec.noise_sigma < 0.0 {
        return Err(Error::Invalid("noise_sigma must be non-negative".into()));
    }
    Ok(())
}

fn gloss_name(c: usize) -> String {
    format!("gloss{c:03}")
}

/// Generate the dataset under `out_dir`: clips/*.json plus manifest.json.
/// Splits are 70/15/15 per class. Returns the loaded manifest.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest, Error> {
    validate(spec)?;
    let clip_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;

    let n = spec.samples_per_class;
    let n_train = n * 70 / 100;
    let n_val = n * 15 / 100;

    let mut entries = Vec::new();
    for c in 0..spec.class_count {
        let motion = ClassMotion::for_class(c, spec.class_count);
        for s in 0..n {
            let stream = (c * spec.samples_per_class + s) as u64 + 1;
            let mut rng = Rng::derive(spec.seed, stream);
            let mut frames = Vec::with_capacity(spec.frame_count);
            for t in 0..spec.frame_count {
                let (body, left, right) = class_frame(&motion, t, spec.frame_count);
                let sigma = spec.noise_sigma as Real;
                frames.push(serde_json::json!({
                    "people": [{
                        "pose_keypoints_2d": keypoint_json(&body, 0.9, &mut rng, sigma),
                        "hand_left_keypoints_2d": keypoint_json(&left, 0.85, &mut rng, sigma),
                        "hand_right_keypoints_2d": keypoint_json(&right, 0.85, &mut rng, sigma),
                    }]
                }));
            }
            let clip = serde_json::json!({
                "canvas_width": CANVAS as f64,
                "canvas_height": CANVAS as f64,
                "frames": frames,
            });
            let video_id = format!("{}_s{s:03}", gloss_name(c));
            let file_name = format!("{video_id}.json");
            let path = clip_dir.join(&file_name);
            let text = serde_json::to_string(&clip)
                .map_err(|e| Error::Format(format!("clip serialization: {e}")))?;
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

            let split = if s < n_train {
                "train"
            } else if s < n_train + n_val {
                "validation"
            } else {
                "test"
            };
            entries.push(serde_json::json!({
                "gloss": gloss_name(c),
                "video_id": video_id,
                "split": split,
                "keypoint_path": format!("clips/{file_name}"),
                "frame_width": CANVAS as f64,
                "frame_height": CANVAS as f64,
            }));
        }
    }

    let manifest_doc = serde_json::json!({
        "vocabulary": (0..spec.class_count).map(gloss_name).collect::<Vec<_>>(),
        "entries": entries,
    });
    let manifest_path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest_doc)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;

    crate::pose::load_manifest(&manifest_path)
}

fn flatten_window(clip: &LoadedClip, window: usize) -> Result<Vec<Real>, Error> {
    let mut rng = Rng::new(0);
    let indices = sample_indices(clip.frames.len(), window, SampleMode::Eval, &mut rng)?;
    let mut flat = Vec::with_capacity(window * clip.frames[0].len() * 2);
    for &i in &indices {
        for &[x, y] in &clip.frames[i] {
            flat.push(x);
            flat.push(y);
        }
    }
    Ok(flat)
}

/// Nearest-centroid classifier on flattened eval-window coordinates:
/// centroids from the train split, accuracy on the test split. Establishes
/// class separability independent of the model.
pub fn nearest_centroid_accuracy(manifest: &DatasetManifest, window: usize) -> Result<f64, Error> {
    let train = load_split(manifest, Split::Train)?;
    let test = load_split(manifest, Split::Test)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Invalid(
            "need non-empty train and test splits".into(),
        ));
    }
    let g = manifest.class_count();
    let dim = flatten_window(&train[0], window)?.len();
    let mut centroids = vec![vec![0.0f64; dim]; g];
    let mut counts = vec![0usize; g];
    for clip in &train {
        let flat = flatten_window(clip, window)?;
        for (acc, x) in centroids[clip.gloss_id].iter_mut().zip(&flat) {
            *acc += *x as f64;
        }
        counts[clip.gloss_id] += 1;
    }
    for (c, count) in centroids.iter_mut().zip(&counts) {
        if *count > 0 {
            for x in c.iter_mut() {
                *x /= *count as f64;
            }
        }
    }
    let mut hits = 0usize;
    for clip in &test {
        let flat = flatten_window(clip, window)?;
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for (cid, centroid) in centroids.iter().enumerate() {
            if counts[cid] == 0 {
                continue;
            }
            let dist: f64 = centroid
                .iter()
                .zip(&flat)
                .map(|(c, x)| (c - *x as f64) * (c - *x as f64))
                .sum();
            if dist < best_dist {
                best_dist = dist;
                best = cid;
            }
        }
        hits += (best == clip.gloss_id) as usize;
    }
    Ok(100.0 * hits as f64 / test.len() as f64)
}

/// Minimum pairwise distance between class centroids in flattened
/// coordinate space (train split).
pub fn min_centroid_distance(manifest: &DatasetManifest, window: usize) -> Result<f64, Error> {
    let train = load_split(manifest, Split::Train)?;
    let g = manifest.class_count();
    let dim = flatten_window(&train[0], window)?.len();
    let mut centroids = vec![vec![0.0f64; dim]; g];
    let mut counts = vec![0usize; g];
    for clip in &train {
        let flat = flatten_window(clip, window)?;
        for (acc, x) in centroids[clip.gloss_id].iter_mut().zip(&flat) {
            *acc += *x as f64;
        }
        counts[clip.gloss_id] += 1;
    }
    for (c, count) in centroids.iter_mut().zip(&counts) {
        for x in c.iter_mut() {
            *x /= (*count).max(1) as f64;
        }
    }
    let mut min_dist = f64::INFINITY;
    for a in 0..g {
        for b in a + 1..g {
            let dist: f64 = centroids[a]
                .iter()
                .zip(&centroids[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(dist);
        }
    }
    Ok(min_dist)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                    files.push((rel, std::fs::read(&p).unwrap()));
                }
            }
        }
        files.sort();
        files
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut spec = SynthSpec::default();
        spec.class_count = 1;
        assert!(validate(&spec).is_err());
        spec.class_count = 2;
        spec.noise_sigma = -0.1;
        assert!(validate(&spec).is_err());
    }

    #[test]
    fn zero_noise_makes_identical_samples() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            class_count: 2,
            samples_per_class: 3,
            frame_count: 8,
            noise_sigma: 0.0,
            seed: 7,
        };
        let manifest = generate(&spec, dir.path()).unwrap();
        let clips = load_split(&manifest, Split::Train).unwrap();
        let class0: Vec<_> = clips.iter().filter(|c| c.gloss_id == 0).collect();
        assert!(class0.len() >= 2);
        assert_eq!(class0[0].frames, class0[1].frames);
    }

    #[test]
    fn same_seed_identical_directory() {
        let spec = SynthSpec {
            class_count: 3,
            samples_per_class: 4,
            frame_count: 10,
            noise_sigma: 0.02,
            seed: 5,
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate(&spec, d1.path()).unwrap();
        generate(&spec, d2.path()).unwrap();
        assert_eq!(dir_bytes(d1.path()), dir_bytes(d2.path()));
    }

    #[test]
    fn split_sizes_are_70_15_15() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            class_count: 2,
            samples_per_class: 20,
            frame_count: 6,
            noise_sigma: 0.01,
            seed: 1,
        };
        let manifest = generate(&spec, dir.path()).unwrap();
        assert_eq!(manifest.split(Split::Train).len(), 28);
        assert_eq!(manifest.split(Split::Validation).len(), 6);
        assert_eq!(manifest.split(Split::Test).len(), 6);
        assert_eq!(manifest.class_count(), 2);
    }

    #[test]
    fn generated_files_parse_through_pose_pipeline() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            class_count: 3,
            samples_per_class: 3,
            frame_count: 12,
            noise_sigma: 0.05,
            seed: 3,
        };
        let manifest = generate(&spec, dir.path()).unwrap();
        for split in [Split::Train, Split::Validation, Split::Test] {
            let clips = load_split(&manifest, split).unwrap();
            for clip in clips {
                assert_eq!(clip.frames.len(), 12);
                for f in &clip.frames {
                    assert_eq!(f.len(), crate::pose::MODEL_KEYPOINTS);
                    for &[x, y] in f {
                        assert!((-1.0..=1.0).contains(&(x as f64)));
                        assert!((-1.0..=1.0).contains(&(y as f64)));
                    }
                }
            }
        }
    }

    #[test]
    fn default_spec_centroids_are_separated() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            samples_per_class: 4,
            frame_count: 20,
            ..SynthSpec::default()
        };
        let manifest = generate(&spec, dir.path()).unwrap();
        let min_dist = min_centroid_distance(&manifest, 20).unwrap();
        assert!(
            min_dist > 10.0 * spec.noise_sigma,
            "min centroid distance {min_dist} too small"
        );
    }

    #[test]
    fn centroid_classifier_separates_small_set() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            class_count: 5,
            samples_per_class: 10,
            frame_count: 20,
            noise_sigma: 0.02,
            seed: 11,
        };
        let manifest = generate(&spec, dir.path()).unwrap();
        let acc = nearest_centroid_accuracy(&manifest, 20).unwrap();
        assert!(acc > 95.0, "nearest-centroid accuracy {acc}");
    }
}
