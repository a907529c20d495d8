//! Keypoint-file ingestion, keypoint selection, normalization, window
//! sampling and dataset manifests.
//!
//! Input files follow the OpenPose output schema: per frame, one person entry
//! with 25 body keypoints (75 numbers) and 21 keypoints per hand (63 numbers
//! each), all as (x px, y px, confidence) triples. The model consumes the
//! first 13 body keypoints plus both hands: 55 keypoints per frame.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

pub const BODY_POINTS: usize = 25;
pub const HAND_POINTS: usize = 21;
pub const SELECTED_BODY_POINTS: usize = 13;
/// K = 13 upper-body + 21 left-hand + 21 right-hand keypoints.
pub const MODEL_KEYPOINTS: usize = SELECTED_BODY_POINTS + 2 * HAND_POINTS;
/// Default fixed window length T.
pub const DEFAULT_WINDOW: usize = 50;

/// One keypoint as parsed: x px, y px, confidence.
pub type Keypoint = [Real; 3];

/// Raw per-frame pose of person 0, before selection and normalization.
#[derive(Debug, Clone)]
pub struct RawFramePose {
    pub body: Vec<Keypoint>,
    pub left_hand: Vec<Keypoint>,
    pub right_hand: Vec<Keypoint>,
    pub frame_width: Real,
    pub frame_height: Real,
}

fn read_keypoint_array(
    value: Option<&serde_json::Value>,
    expected_points: usize,
    what: &str,
) -> Result<Option<Vec<Keypoint>>, Error> {
    let Some(value) = value else {
        return Ok(None);
    };
    let arr = value
        .as_array()
        .ok_or_else(|| Error::Format(format!("{what} is not an array")))?;
    if arr.len() != expected_points * 3 {
        return Err(Error::Format(format!(
            "{what} has {} numbers, expected {}",
            arr.len(),
            expected_points * 3
        )));
    }
    let mut nums = Vec::with_capacity(arr.len());
    for v in arr {
        let x = v
            .as_f64()
            .ok_or_else(|| Error::Format(format!("{what} contains a non-number")))?;
        nums.push(x as Real);
    }
    let points = nums.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(Some(points))
}

/// Parse one OpenPose frame document. Person index 0 is used; absent hand
/// arrays yield 21 zero-confidence keypoints. Frame dimensions come from
/// optional `canvas_width`/`canvas_height` fields and default to 0 (the
/// caller fills them in from the manifest).
pub fn parse_openpose_frame(doc: &serde_json::Value) -> Result<RawFramePose, Error> {
    let people = doc
        .get("people")
        .and_then(|p| p.as_array())
        .ok_or_else(|| Error::Format("frame document has no people array".into()))?;
    let person = people
        .first()
        .ok_or_else(|| Error::Format("no person in frame (people array is empty)".into()))?;

    let body = read_keypoint_array(
        person.get("pose_keypoints_2d"),
        BODY_POINTS,
        "body keypoints",
    )?
    .ok_or_else(|| Error::Format("person has no pose_keypoints_2d".into()))?;
    let zero_hand = || vec![[0.0, 0.0, 0.0]; HAND_POINTS];
    let left_hand = read_keypoint_array(
        person.get("hand_left_keypoints_2d"),
        HAND_POINTS,
        "left hand keypoints",
    )?
    .unwrap_or_else(zero_hand);
    let right_hand = read_keypoint_array(
        person.get("hand_right_keypoints_2d"),
        HAND_POINTS,
        "right hand keypoints",
    )?
    .unwrap_or_else(zero_hand);

    let dim = |key: &str| doc.get(key).and_then(|v| v.as_f64()).unwrap_or(0.0) as Real;
    Ok(RawFramePose {
        body,
        left_hand,
        right_hand,
        frame_width: dim("canvas_width"),
        frame_height: dim("canvas_height"),
    })
}

/// Fixed keypoint order: body indices 0..13, then left hand, then right hand.
pub fn select_keypoints(raw: &RawFramePose) -> Vec<Keypoint> {
    let mut out = Vec::with_capacity(MODEL_KEYPOINTS);
    out.extend_from_slice(&raw.body[..SELECTED_BODY_POINTS]);
    out.extend_from_slice(&raw.left_hand);
    out.extend_from_slice(&raw.right_hand);
    out
}

/// Map pixel coordinates to [-1, 1]: x' = 2x/W - 1, y' = 2y/H - 1. Keypoints
/// with confidence 0 map to the frame center (0, 0); the confidence column is
/// dropped. Coordinates are clamped to [-1, 1].
pub fn normalize_frame(
    selected: &[Keypoint],
    frame_width: Real,
    frame_height: Real,
) -> Result<Vec<[Real; 2]>, Error> {
    if frame_width <= 0.0 || frame_height <= 0.0 {
        return Err(Error::Invalid(format!(
            "frame dimensions must be positive, got {frame_width}x{frame_height}"
        )));
    }
    Ok(selected
        .iter()
        .map(|&[x, y, c]| {
            if c == 0.0 {
                [0.0, 0.0]
            } else {
                [
                    (2.0 * x / frame_width - 1.0).clamp(-1.0, 1.0),
                    (2.0 * y / frame_height - 1.0).clamp(-1.0, 1.0),
                ]
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Train,
    Eval,
}

/// Frame indices for a fixed-length window over a clip of `len` frames.
///
/// len >= window: train mode draws a uniformly random start, eval mode takes
/// the centered start floor((len-window)/2). len < window: the clip repeats
/// cyclically from frame 0 until the window is full.
pub fn sample_indices(
    len: usize,
    window: usize,
    mode: SampleMode,
    rng: &mut Rng,
) -> Result<Vec<usize>, Error> {
    if len == 0 {
        return Err(Error::Invalid(
            "cannot sample a window from an empty clip".into(),
        ));
    }
    if window == 0 {
        return Err(Error::Invalid("window must be positive".into()));
    }
    if len >= window {
        let start = match mode {
            SampleMode::Train => rng.below(len - window + 1),
            SampleMode::Eval => (len - window) / 2,
        };
        Ok((start..start + window).collect())
    } else {
        Ok((0..window).map(|i| i % len).collect())
    }
}

/// Normalized coordinates of one clip frame: 55 keypoints x (x, y).
pub type FrameCoords = Vec<[Real; 2]>;

/// A fixed-length clip window ready for the model: T x K x 2 coordinates in
/// [-1, 1] plus its label. The keypoint pipeline always produces K = 55;
/// the count is carried so toy-scale tests can shrink it.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    coords: Vec<Real>, // row-major T x K x 2
    window: usize,
    keypoints: usize,
    pub gloss_id: usize,
    pub source_id: String,
}

impl PoseSequence {
    pub fn from_frames(
        frames: &[FrameCoords],
        mode: SampleMode,
        window: usize,
        rng: &mut Rng,
        gloss_id: usize,
        source_id: &str,
    ) -> Result<PoseSequence, Error> {
        let keypoints = frames.first().map_or(0, |f| f.len());
        if keypoints == 0 {
            return Err(Error::Shape("clip frames have no keypoints".into()));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.len() != keypoints {
                return Err(Error::Shape(format!(
                    "frame {i} has {} keypoints, expected {keypoints}",
                    f.len()
                )));
            }
        }
        let indices = sample_indices(frames.len(), window, mode, rng)?;
        let mut coords = Vec::with_capacity(window * keypoints * 2);
        for &i in &indices {
            for &[x, y] in &frames[i] {
                coords.push(x);
                coords.push(y);
            }
        }
        Ok(PoseSequence {
            coords,
            window,
            keypoints,
            gloss_id,
            source_id: source_id.to_string(),
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn keypoints(&self) -> usize {
        self.keypoints
    }

    /// Frame `t` as a K x 2 tensor.
    pub fn frame_tensor(&self, t: usize) -> Tensor {
        let step = self.keypoints * 2;
        Tensor::from_vec(
            &[self.keypoints, 2],
            self.coords[t * step..(t + 1) * step].to_vec(),
        )
        .expect("frame slice has K*2 elements")
    }

    pub fn coords(&self) -> &[Real] {
        &self.coords
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Split, Error> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split name: {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub gloss: String,
    pub gloss_id: usize,
    pub video_id: String,
    pub keypoint_path: String,
    pub frame_width: Real,
    pub frame_height: Real,
}

/// Split manifests plus the gloss vocabulary. gloss_id values are dense in
/// [0, G) and follow vocabulary order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub vocabulary: Vec<String>,
    train: Vec<ManifestEntry>,
    validation: Vec<ManifestEntry>,
    test: Vec<ManifestEntry>,
    /// Directory relative keypoint paths resolve against.
    pub base_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct ManifestFileEntry {
    gloss: String,
    video_id: String,
    split: String,
    keypoint_path: String,
    frame_width: f64,
    frame_height: f64,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    vocabulary: Option<Vec<String>>,
    entries: Vec<ManifestFileEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> &[ManifestEntry] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn class_count(&self) -> usize {
        self.vocabulary.len()
    }

    /// Resolve an entry's keypoint path against the manifest directory.
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.keypoint_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Load a manifest file. If the file carries an explicit vocabulary its order
/// defines gloss ids (entries must reference it); otherwise the vocabulary is
/// the sorted set of entry glosses.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ManifestFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;

    let vocabulary: Vec<String> = match &file.vocabulary {
        Some(v) => {
            let mut seen = HashSet::new();
            for g in v {
                if !seen.insert(g.as_str()) {
                    return Err(Error::Format(format!("duplicate vocabulary gloss {g:?}")));
                }
            }
            v.clone()
        }
        None => {
            let mut glosses: Vec<String> = file.entries.iter().map(|e| e.gloss.clone()).collect();
            glosses.sort();
            glosses.dedup();
            glosses
        }
    };
    let index_of = |g: &str| vocabulary.iter().position(|v| v == g);

    let mut manifest = DatasetManifest {
        vocabulary: vocabulary.clone(),
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        base_dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    let mut seen: HashSet<(String, Split)> = HashSet::new();
    for e in &file.entries {
        let split = Split::parse(&e.split)?;
        if !seen.insert((e.video_id.clone(), split)) {
            return Err(Error::Format(format!(
                "duplicate entry for video {:?} in split {}",
                e.video_id,
                split.name()
            )));
        }
        let gloss_id = index_of(&e.gloss)
            .ok_or_else(|| Error::Format(format!("gloss {:?} absent from vocabulary", e.gloss)))?;
        let entry = ManifestEntry {
            gloss: e.gloss.clone(),
            gloss_id,
            video_id: e.video_id.clone(),
            keypoint_path: e.keypoint_path.clone(),
            frame_width: e.frame_width as Real,
            frame_height: e.frame_height as Real,
        };
        match split {
            Split::Train => manifest.train.push(entry),
            Split::Validation => manifest.validation.push(entry),
            Split::Test => manifest.test.push(entry),
        }
    }
    Ok(manifest)
}

/// Write a manifest file; loading it back reproduces vocabulary and entries.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), Error> {
    let mut entries = Vec::new();
    for split in [Split::Train, Split::Validation, Split::Test] {
        for e in manifest.split(split) {
            entries.push(ManifestFileEntry {
                gloss: e.gloss.clone(),
                video_id: e.video_id.clone(),
                split: split.name().to_string(),
                keypoint_path: e.keypoint_path.clone(),
                frame_width: e.frame_width as f64,
                frame_height: e.frame_height as f64,
            });
        }
    }
    let file = ManifestFile {
        vocabulary: Some(manifest.vocabulary.clone()),
        entries,
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load every frame of a clip as normalized 55 x 2 coordinates.
pub fn load_clip_frames(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
) -> Result<Vec<FrameCoords>, Error> {
    load_clip_path(
        &manifest.resolve(entry),
        (entry.frame_width, entry.frame_height),
    )
}

/// Load a clip from a bare path.
///
/// `path` may be a single JSON file (an object with a `frames` array, or a
/// bare array of frame documents) or a directory of one-frame JSON files
/// read in sorted name order. Frame dimensions come from the document's
/// canvas fields when present, otherwise from `fallback_dims`.
pub fn load_clip_path(path: &Path, fallback_dims: (Real, Real)) -> Result<Vec<FrameCoords>, Error> {
    let mut docs: Vec<serde_json::Value> = Vec::new();
    let mut default_dims = fallback_dims;

    if path.is_dir() {
        let mut names: Vec<PathBuf> = std::fs::read_dir(&path)
            .map_err(|e| Error::io(&path, e))?
            .filter_map(|r| r.ok().map(|d| d.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        names.sort();
        for p in names {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            docs.push(
                serde_json::from_str(&text)
                    .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?,
            );
        }
    } else {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let doc: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        match &doc {
            serde_json::Value::Array(frames) => docs.extend(frames.iter().cloned()),
            serde_json::Value::Object(obj) => {
                let dim = |key: &str| obj.get(key).and_then(|v| v.as_f64()).map(|v| v as Real);
                if let (Some(w), Some(h)) = (dim("canvas_width"), dim("canvas_height")) {
                    default_dims = (w, h);
                }
                if let Some(frames) = obj.get("frames").and_then(|f| f.as_array()) {
                    docs.extend(frames.iter().cloned());
                } else {
                    // single-frame document
                    docs.push(doc.clone());
                }
            }
            _ => {
                return Err(Error::Format(format!(
                    "{}: expected a frame array or clip object",
                    path.display()
                )))
            }
        }
    }

    if docs.is_empty() {
        return Err(Error::Format(format!(
            "{}: clip has no frames",
            path.display()
        )));
    }
    let mut frames = Vec::with_capacity(docs.len());
    for doc in &docs {
        let raw = parse_openpose_frame(doc)?;
        let (w, h) = if raw.frame_width > 0.0 && raw.frame_height > 0.0 {
            (raw.frame_width, raw.frame_height)
        } else {
            default_dims
        };
        let selected = select_keypoints(&raw);
        frames.push(normalize_frame(&selected, w, h)?);
    }
    Ok(frames)
}

/// One clip held in memory, ready for window sampling.
#[derive(Debug, Clone)]
pub struct LoadedClip {
    pub frames: Vec<FrameCoords>,
    pub gloss_id: usize,
    pub video_id: String,
}

/// Load every clip of a split into memory.
pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<LoadedClip>, Error> {
    manifest
        .split(split)
        .iter()
        .map(|entry| {
            Ok(LoadedClip {
                frames: load_clip_frames(manifest, entry)?,
                gloss_id: entry.gloss_id,
                video_id: entry.video_id.clone(),
            })
        })
        .collect()
}
